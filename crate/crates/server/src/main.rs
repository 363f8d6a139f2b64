use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use hoicraft_core::interaction::DesignAssignment;
use hoicraft_core::llm::{Gateway, LlmMode, LlmSettings};
use hoicraft_core::model::{PartId, SceneObject};
use hoicraft_core::recommend::{analyze_object, prioritize_parts, DesignIntent, PriorityCandidate, Recommender};
use hoicraft_core::simulate::TrajectoryFile;
use hoicraft_core::stats::analyze_scores;
use hoicraft_core::HoiDesign;
use hoicraft_server::project::SelectionRequest;
use hoicraft_server::service::simulate_scene;
use hoicraft_server::{api, Service, ServiceError, SimulateRequest, StoredCustomization};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "hoicraft", version, about = "Hand-object interaction authoring engine and service")]
struct Cli {
    /// LLM backend; `live` reads HOICRAFT_LLM_* from the environment.
    #[arg(long, global = true, value_enum, default_value_t = LlmArg::Mock)]
    llm: LlmArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmArg {
    Mock,
    Live,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "data/projects")]
        data_dir: PathBuf,
    },
    /// Recommend designs for one part of a scene.
    Recommend {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        part: String,
        /// Intended use (free text).
        #[arg(long)]
        intent: String,
        /// Target experience (free text).
        #[arg(long, default_value = "")]
        experience: String,
    },
    /// Replay a trajectory against a scene and print metrics.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// `part=DESIGN`, repeatable. Defaults to CM for every interactive part.
        #[arg(long = "assign")]
        assign: Vec<String>,
        /// `part=value` (degrees for revolute parts, metres for prismatic), repeatable.
        #[arg(long = "target")]
        target: Vec<String>,
        /// JSON file with a customization per part id.
        #[arg(long)]
        customizations: Option<PathBuf>,
    },
    /// Friedman, pairwise Wilcoxon and tiers for a score table.
    Stats {
        /// CSV with design codes as header and one participant per row.
        #[arg(long)]
        csv: PathBuf,
        /// Treat lower scores as better (e.g. error counts).
        #[arg(long)]
        lower_is_better: bool,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Analyze object parts and optionally prioritise them for an intent.
    Analyze {
        #[arg(long)]
        object: String,
        /// Comma-separated part names.
        #[arg(long, value_delimiter = ',')]
        parts: Vec<String>,
        /// Comma-separated descriptors aligned with `--parts`.
        #[arg(long, value_delimiter = ',')]
        descriptors: Option<Vec<String>>,
        #[arg(long)]
        intent: Option<String>,
    },
    /// Operate on a project store without the HTTP layer.
    Project {
        #[arg(long, default_value = "data/projects")]
        data_dir: PathBuf,
        #[command(subcommand)]
        op: ProjectOp,
    },
}

#[derive(Subcommand)]
enum ProjectOp {
    /// Create a project from a scene file
    Create {
        #[arg(long)]
        scene: PathBuf,
    },
    /// List project ids
    List,
    /// Print a project document
    Show {
        id: String,
    },
    /// Set the design intent and compute the priority list
    Intent {
        id: String,
        #[arg(long = "use")]
        intended_use: String,
        #[arg(long, default_value = "")]
        experience: String,
    },
    /// Select parts by count or by id
    Select {
        id: String,
        /// Pick the top `n` parts of the priority list.
        #[arg(long, conflicts_with = "ids")]
        count: Option<usize>,
        /// Comma-separated part ids.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
    },
    /// Store a customization (JSON file) for a selected part
    Customize {
        id: String,
        part: String,
        /// JSON customization file.
        #[arg(long)]
        file: PathBuf,
    },
    /// Run design mapping for a selected part
    Map {
        id: String,
        part: String,
    },
    /// Simulate a trajectory with the project's assignments
    Simulate {
        id: String,
        /// JSON simulate request: `{"trajectory": ..., "targets": {...}}`.
        #[arg(long)]
        request: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_owned(), e))
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn gateway(llm: LlmArg) -> CliResult<Gateway> {
    let settings = match llm {
        LlmArg::Mock => LlmSettings::default(),
        LlmArg::Live => {
            let mut s = LlmSettings::from_env().map_err(input)?;
            s.mode = LlmMode::Live;
            s
        }
    };
    Gateway::new(settings).map_err(input)
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
fn emit(text: &str) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout().lock(), "{text}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("writing to stdout: {e}");
    }
}

fn print(value: &impl serde::Serialize) {
    emit(&serde_json::to_string_pretty(value).expect("serializable"));
}

fn key_value(s: &str) -> CliResult<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| CliError::Input(format!("expected key=value, got `{s}`")))
}

fn load_scene(path: &Path) -> CliResult<SceneObject> {
    SceneObject::from_json(&read(path)?).map_err(input)
}

fn cmd_recommend(llm: LlmArg, scene: &Path, part: &str, intent: String, experience: String) -> CliResult {
    let scene = load_scene(scene)?;
    let spec = scene
        .part(&PartId::new(part))
        .ok_or_else(|| CliError::Input(format!("unknown part `{part}`")))?;
    let intent = DesignIntent::new(intent, experience).map_err(input)?;
    let rec = Recommender::new(Arc::new(gateway(llm)?))
        .recommend(spec, &intent)
        .map_err(|e| CliError::Service(e.into()))?;
    print(&rec);
    Ok(())
}

fn cmd_simulate(
    scene_path: &Path,
    trajectory: &Path,
    assign: &[String],
    target: &[String],
    customizations: Option<&Path>,
) -> CliResult {
    let scene = load_scene(scene_path)?;
    let custom: BTreeMap<String, StoredCustomization> = match customizations {
        Some(p) => serde_json::from_str(&read(p)?).map_err(input)?,
        None => BTreeMap::new(),
    };
    let mut designs: BTreeMap<String, HoiDesign> = BTreeMap::new();
    for a in assign {
        let (k, v) = key_value(a)?;
        designs.insert(k, v.parse().map_err(input)?);
    }
    let ids: Vec<String> = if designs.is_empty() {
        scene.interactive_parts().map(|p| p.id.0.clone()).collect()
    } else {
        designs.keys().cloned().collect()
    };
    let mut assignments = BTreeMap::new();
    for id in ids {
        let c = custom.get(&id).cloned().unwrap_or_default();
        let design = designs.get(&id).copied().or(c.design).unwrap_or(HoiDesign::CM);
        let params = c.params()?;
        assignments.insert(PartId::new(id), DesignAssignment { design, params });
    }
    let mut targets = BTreeMap::new();
    for t in target {
        let (k, v) = key_value(t)?;
        targets.insert(k, v.parse::<f64>().map_err(input)?);
    }
    let traj: TrajectoryFile = serde_json::from_str(&read(trajectory)?).map_err(input)?;
    print(&simulate_scene(&scene, &assignments, traj, &targets)?);
    Ok(())
}

fn cmd_stats(csv_path: &Path, lower_is_better: bool, alpha: f64) -> CliResult {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(input)?;
    let designs: Vec<HoiDesign> = reader
        .headers()
        .map_err(input)?
        .iter()
        .map(|h| h.parse::<HoiDesign>().map_err(input))
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(input)?;
        let row = record
            .iter()
            .map(|c| c.parse::<f64>().map_err(input))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let analysis = analyze_scores(&designs, &rows, !lower_is_better, alpha).map_err(input)?;
    print(&analysis);
    Ok(())
}

fn cmd_analyze(
    object: &str,
    parts: &[String],
    descriptors: Option<&[String]>,
    intent: Option<String>,
) -> CliResult {
    let analysis = analyze_object(object, parts, descriptors).map_err(input)?;
    let mut out = serde_json::json!({ "analysis": analysis });
    if let Some(text) = intent {
        let candidates: Vec<PriorityCandidate> = parts
            .iter()
            .zip(&analysis)
            .map(|(p, a)| PriorityCandidate::from_analysis(p.as_str(), a))
            .collect();
        let prio = prioritize_parts(&text, &candidates).map_err(input)?;
        out["prioritization"] = serde_json::to_value(prio).expect("serializable");
    }
    print(&out);
    Ok(())
}

fn cmd_project(llm: LlmArg, data_dir: PathBuf, op: ProjectOp) -> CliResult {
    let svc = Service::new(data_dir, gateway(llm)?)?;
    match op {
        ProjectOp::Create { scene } => {
            let p = svc.create_project(read(&scene)?.as_bytes())?;
            emit(&p.id);
        }
        ProjectOp::List => {
            for id in svc.list_projects()? {
                emit(&id);
            }
        }
        ProjectOp::Show { id } => print(&svc.get_project(&id)?),
        ProjectOp::Intent { id, intended_use, experience } => {
            let intent = DesignIntent::new(intended_use, experience).map_err(input)?;
            print(&svc.set_intent(&id, intent)?)
        }
        ProjectOp::Select { id, count, ids } => {
            let req = match (count, ids) {
                (Some(n), None) => SelectionRequest::ByCount { n },
                (None, Some(ids)) => SelectionRequest::Manual { ids },
                _ => return Err(CliError::Input("pass exactly one of --count or --ids".into())),
            };
            print(&svc.set_selection(&id, &req)?)
        }
        ProjectOp::Customize { id, part, file } => {
            let c: StoredCustomization = serde_json::from_str(&read(&file)?).map_err(input)?;
            print(&svc.set_customization(&id, &part, c)?)
        }
        ProjectOp::Map { id, part } => print(&svc.run_mapping(&id, &part)?),
        ProjectOp::Simulate { id, request } => {
            let req: SimulateRequest = serde_json::from_str(&read(&request)?).map_err(input)?;
            print(&svc.simulate(&id, req)?)
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Serve { host, port, data_dir } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(input)?;
            let svc = Arc::new(Service::new(data_dir, gateway(cli.llm)?)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Input(e.to_string()))?;
            rt.block_on(api::serve(svc, addr)).map_err(input)
        }
        Command::Recommend {
            scene,
            part,
            intent,
            experience,
        } => cmd_recommend(cli.llm, &scene, &part, intent, experience),
        Command::Simulate {
            scene,
            trajectory,
            assign,
            target,
            customizations,
        } => cmd_simulate(&scene, &trajectory, &assign, &target, customizations.as_deref()),
        Command::Stats {
            csv,
            lower_is_better,
            alpha,
        } => cmd_stats(&csv, lower_is_better, alpha),
        Command::Analyze {
            object,
            parts,
            descriptors,
            intent,
        } => cmd_analyze(&object, &parts, descriptors.as_deref(), intent),
        Command::Project { data_dir, op } => cmd_project(cli.llm, data_dir, op),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Service(s) = &e {
                eprintln!("error [{}]: {s}", s.code());
                if let Ok(v) = serde_json::to_value(s.body()) {
                    if v["detail"] != Value::Null {
                        eprintln!("{}", v["detail"]);
                    }
                }
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
