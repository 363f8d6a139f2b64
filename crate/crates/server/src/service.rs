//! Transport-independent operations behind the HTTP API and the CLI.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use hoicraft_core::interaction::{EngineConfig, EventKind, InteractionEvent};
use hoicraft_core::llm::Gateway;
use hoicraft_core::model::{JointKind, PartId, SceneFile, SceneObject};
use hoicraft_core::recommend::{DesignIntent, Recommendation, Recommender};
use hoicraft_core::simulate::{
    metrics_report, run_session, MetricsReport, TrajectoryFile, TrajectoryScript, DEFAULT_REVERSAL_EPSILON,
};
use hoicraft_core::HoiDesign;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Result, ServiceError};
use crate::project::{IntentOutcome, Project, SelectionOutcome, SelectionRequest, StoredCustomization};
use crate::store::ProjectStore;

/// Body of a simulate request. Revolute targets are degrees, prismatic metres.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimulateRequest {
    pub trajectory: TrajectoryFile,
    #[serde(default)]
    pub targets: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationSummary {
    pub steps: usize,
    pub event_counts: BTreeMap<String, usize>,
    /// Everything except `Moved`, which would dominate the log. Same units as `final_states`.
    pub events: Vec<InteractionEvent>,
    /// Final coordinate per part, degrees for revolute joints.
    pub final_states: BTreeMap<String, f64>,
    pub assignments: BTreeMap<String, HoiDesign>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationResult {
    pub metrics: MetricsReport,
    pub summary: SimulationSummary,
}

/// Converts a user-facing coordinate (degrees for revolute) to engine units.
pub fn to_engine_units(scene: &SceneObject, pid: &str, value: f64) -> Result<f64> {
    let part = scene
        .part(&PartId::new(pid))
        .ok_or_else(|| ServiceError::UnknownPart(pid.to_owned()))?;
    Ok(match part.constraint.kind() {
        JointKind::Revolute => value.to_radians(),
        JointKind::Prismatic => value,
    })
}

fn to_user_units(scene: &SceneObject, pid: &PartId, q: f64) -> f64 {
    match scene.part(pid).map(|p| p.constraint.kind()) {
        Some(JointKind::Revolute) => q.to_degrees(),
        _ => q,
    }
}

/// Runs a session and packages metrics and a summary.
pub fn simulate_scene(
    scene: &SceneObject,
    assignments: &BTreeMap<PartId, hoicraft_core::interaction::DesignAssignment>,
    trajectory: TrajectoryFile,
    targets: &BTreeMap<String, f64>,
) -> Result<SimulationResult> {
    let script = TrajectoryScript::try_from(trajectory).map_err(|e| ServiceError::InvalidParam(e.to_string()))?;
    let mut engine_targets = BTreeMap::new();
    for (pid, v) in targets {
        if !v.is_finite() {
            return Err(ServiceError::InvalidParam(format!("target for `{pid}` is not finite")));
        }
        engine_targets.insert(PartId::new(pid), to_engine_units(scene, pid, *v)?);
    }
    let log = run_session(scene, assignments, &script, &engine_targets, &EngineConfig::default())
        .map_err(|e| ServiceError::Simulation(e.to_string()))?;
    let metrics = metrics_report(scene, &log, &engine_targets, DEFAULT_REVERSAL_EPSILON)
        .map_err(|e| ServiceError::Simulation(e.to_string()))?;
    let mut event_counts = BTreeMap::new();
    for kind in [
        EventKind::Acquired,
        EventKind::Released,
        EventKind::AnimationTriggered,
        EventKind::Moved,
    ] {
        event_counts.insert(format!("{kind:?}"), log.count(kind));
    }
    let summary = SimulationSummary {
        steps: log.steps,
        event_counts,
        events: log
            .events
            .iter()
            .filter(|e| e.kind != EventKind::Moved)
            .map(|e| InteractionEvent {
                q: to_user_units(scene, &e.part_id, e.q),
                ..e.clone()
            })
            .collect(),
        final_states: log
            .final_states
            .iter()
            .map(|(id, q)| (id.0.clone(), to_user_units(scene, id, *q)))
            .collect(),
        assignments: assignments.iter().map(|(id, a)| (id.0.clone(), a.design)).collect(),
    };
    Ok(SimulationResult { metrics, summary })
}

pub struct Service {
    store: ProjectStore,
    recommender: Recommender,
    clock: Box<dyn Fn() -> String + Send + Sync>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("store", &self.store).finish_non_exhaustive()
    }
}

fn utc_now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Service {
    pub fn new(data_dir: impl Into<PathBuf>, gateway: Gateway) -> Result<Self> {
        Ok(Self {
            store: ProjectStore::open(data_dir)?,
            recommender: Recommender::new(Arc::new(gateway)),
            clock: Box::new(utc_now),
        })
    }

    /// Replaces the timestamp source, for reproducible documents.
    pub fn with_clock(mut self, clock: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn store(&self) -> &ProjectStore {
        &self.store
    }

    pub fn gateway(&self) -> &Gateway {
        self.recommender.gateway()
    }

    pub fn create_project(&self, scene_json: &[u8]) -> Result<Project> {
        let scene: SceneFile =
            serde_json::from_slice(scene_json).map_err(|e| ServiceError::InvalidScene(e.to_string()))?;
        let project = Project::new(Uuid::new_v4().to_string(), scene, (self.clock)())?;
        self.store.insert(&project)?;
        log::info!("created project {}", project.id);
        Ok(project)
    }

    pub fn get_project(&self, id: &str) -> Result<Project> {
        self.store.load(id)
    }

    pub fn list_projects(&self) -> Result<Vec<String>> {
        self.store.list()
    }

    pub fn set_intent(&self, id: &str, intent: DesignIntent) -> Result<IntentOutcome> {
        let rec = &self.recommender;
        self.store.update(id, &self.clock, |p| p.set_intent(intent, rec))
    }

    pub fn set_selection(&self, id: &str, req: &SelectionRequest) -> Result<SelectionOutcome> {
        self.store.update(id, &self.clock, |p| p.set_selection(req))
    }

    pub fn set_customization(&self, id: &str, pid: &str, c: StoredCustomization) -> Result<StoredCustomization> {
        self.store.update(id, &self.clock, |p| p.set_customization(pid, c))
    }

    /// Runs the recommendation pipeline for one selected part and stores it.
    pub fn run_mapping(&self, id: &str, pid: &str) -> Result<Recommendation> {
        let rec = &self.recommender;
        self.store.update(id, &self.clock, |p| {
            let (part, intent) = p.mapping_inputs(pid)?;
            let out = rec.recommend(&part, &intent)?;
            p.set_mapping(pid, out.clone());
            Ok(out)
        })
    }

    pub fn simulate(&self, id: &str, req: SimulateRequest) -> Result<SimulationResult> {
        let project = self.store.load(id)?;
        let scene = project.scene_object()?;
        let assignments = project.assignments()?;
        simulate_scene(&scene, &assignments, req.trajectory, &req.targets)
    }
}
