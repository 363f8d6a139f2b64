//! Python bindings for `hoicraft-core`.
//!
//! Structured results cross the boundary as plain dicts and lists built from
//! the core types' JSON form. Coordinates are engine units: radians for
//! revolute parts, metres for prismatic ones.

use std::collections::BTreeMap;
use std::sync::Arc;

use hoicraft_core::empirical::{TierMetric, TierTable};
use hoicraft_core::interaction::{
    step, CustomizationFile, DesignAssignment, EngineConfig, InteractionState, PartContext,
};
use hoicraft_core::llm::Gateway;
use hoicraft_core::model::{PartId, SceneFile};
use hoicraft_core::recommend::{self, DesignIntent, Recommender};
use hoicraft_core::simulate::{self as sim, TrajectoryScript, DEFAULT_REVERSAL_EPSILON};
use hoicraft_core::stats::{self, RankMatrix};
use hoicraft_core::{Gesture, HandSample, HoiDesign, SceneObject};
use nalgebra::Point3;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Parses a bare enum name such as `"GM"` or `"Pinch"` through serde.
fn parse_name<T: DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{s}`")))
}

fn tier_metric(s: &str) -> PyResult<TierMetric> {
    match s.to_ascii_lowercase().replace(['_', ' ', '-'], "").as_str() {
        "preference" => Ok(TierMetric::Preference),
        "easeofuse" => Ok(TierMetric::EaseOfUse),
        "learnability" => Ok(TierMetric::Learnability),
        "realism" => Ok(TierMetric::Realism),
        _ => Err(PyValueError::new_err(format!("unknown tier metric `{s}`"))),
    }
}

/// `{"door": "GM"}` plus optional per-part customization dicts in file form.
fn assignments(
    scene: &SceneObject,
    designs: BTreeMap<String, String>,
    customizations: Option<BTreeMap<String, String>>,
) -> PyResult<BTreeMap<PartId, DesignAssignment>> {
    let mut custom = customizations.unwrap_or_default();
    let mut out = BTreeMap::new();
    for (pid, d) in designs {
        let id = PartId::new(&pid);
        if scene.part(&id).is_none() {
            return Err(PyKeyError::new_err(pid));
        }
        let design: HoiDesign = d.parse().map_err(value_err)?;
        let assignment = match custom.remove(&pid) {
            Some(json) => {
                // Keys the caller leaves out keep their defaults.
                let given: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&json).map_err(value_err)?;
                let mut value = serde_json::to_value(CustomizationFile::defaults_for(design)).map_err(value_err)?;
                value.as_object_mut().expect("struct serialises to an object").extend(given);
                value["design"] = serde_json::Value::String(design.to_string());
                let file: CustomizationFile = serde_json::from_value(value).map_err(value_err)?;
                DesignAssignment::try_from(file).map_err(value_err)?
            }
            None => DesignAssignment {
                design,
                params: Default::default(),
            },
        };
        out.insert(id, assignment);
    }
    if let Some(pid) = custom.into_keys().next() {
        return Err(PyKeyError::new_err(format!("customization for unassigned part `{pid}`")));
    }
    Ok(out)
}

/// An articulated object loaded from scene JSON.
#[pyclass(name = "Scene", frozen)]
struct PyScene {
    inner: SceneObject,
}

#[pymethods]
impl PyScene {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(value_err)?;
        Ok(Self {
            inner: SceneObject::try_from(file).map_err(value_err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    fn part_ids(&self) -> Vec<String> {
        self.inner.parts.iter().map(|p| p.id.0.clone()).collect()
    }

    fn interactive_part_ids(&self) -> Vec<String> {
        self.inner.interactive_parts().map(|p| p.id.0.clone()).collect()
    }

    /// `(lo, hi)` for bounded parts, `None` for unbounded ones.
    fn range(&self, part_id: &str) -> PyResult<Option<(f64, f64)>> {
        let part = self
            .inner
            .part(&PartId::new(part_id))
            .ok_or_else(|| PyKeyError::new_err(part_id.to_owned()))?;
        Ok(part.constraint.range())
    }

    fn __repr__(&self) -> String {
        format!("Scene({:?}, parts={:?})", self.inner.name, self.part_ids())
    }
}

/// Step-by-step driver over several parts, each with its own design.
#[pyclass(name = "Session")]
struct PySession {
    scene: SceneObject,
    parts: Vec<(PartId, DesignAssignment, InteractionState)>,
    config: EngineConfig,
    dt: f64,
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (scene, designs, customizations = None, dt = sim::DEFAULT_DT))]
    fn new(
        scene: &PyScene,
        designs: BTreeMap<String, String>,
        customizations: Option<BTreeMap<String, String>>,
        dt: f64,
    ) -> PyResult<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PyValueError::new_err("dt must be positive"));
        }
        let scene = scene.inner.clone();
        let parts = assignments(&scene, designs, customizations)?
            .into_iter()
            .map(|(id, a)| {
                let state = InteractionState::at_rest(scene.part(&id).expect("checked"));
                (id, a, state)
            })
            .collect();
        Ok(Self {
            scene,
            parts,
            config: EngineConfig::default(),
            dt,
        })
    }

    /// Advances every part by one sample; `fingertip=None` means tracking was lost.
    /// Returns the events of this step as dicts.
    #[pyo3(signature = (t, fingertip, gesture = "None"))]
    fn step(&mut self, py: Python<'_>, t: f64, fingertip: Option<(f64, f64, f64)>, gesture: &str) -> PyResult<Py<PyAny>> {
        let hand = match fingertip {
            Some((x, y, z)) => HandSample::new(t, Point3::new(x, y, z), parse_name::<Gesture>("gesture", gesture)?),
            None => HandSample::untracked(t),
        };
        let mut events = Vec::new();
        for (id, assignment, state) in &mut self.parts {
            let part = self.scene.part(id).expect("checked at construction");
            let ctx = PartContext::new(part, &assignment.params, &self.config);
            let out = step(assignment.design, state, &ctx, &hand, self.dt);
            *state = out.state;
            events.extend(out.events);
        }
        to_py(py, &events)
    }

    fn q(&self, part_id: &str) -> PyResult<f64> {
        self.parts
            .iter()
            .find(|(id, _, _)| id.as_str() == part_id)
            .map(|(_, _, s)| s.q)
            .ok_or_else(|| PyKeyError::new_err(part_id.to_owned()))
    }

    fn states(&self) -> BTreeMap<String, f64> {
        self.parts.iter().map(|(id, _, s)| (id.0.clone(), s.q)).collect()
    }
}

/// Replays a trajectory (JSON) and returns `{"metrics": ..., "finalStates": ..., "eventCounts": ...}`.
#[pyfunction]
#[pyo3(signature = (scene, trajectory_json, designs, targets = BTreeMap::new(), customizations = None))]
fn simulate(
    py: Python<'_>,
    scene: &PyScene,
    trajectory_json: &str,
    designs: BTreeMap<String, String>,
    targets: BTreeMap<String, f64>,
    customizations: Option<BTreeMap<String, String>>,
) -> PyResult<Py<PyAny>> {
    let scene = &scene.inner;
    let script = TrajectoryScript::from_json(trajectory_json).map_err(value_err)?;
    let assignments = assignments(scene, designs, customizations)?;
    let targets: BTreeMap<PartId, f64> = targets.into_iter().map(|(k, v)| (PartId::new(k), v)).collect();
    let log = sim::run_session(scene, &assignments, &script, &targets, &EngineConfig::default())
        .map_err(value_err)?;
    let metrics = sim::metrics_report(scene, &log, &targets, DEFAULT_REVERSAL_EPSILON).map_err(value_err)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &log.events {
        *counts.entry(format!("{:?}", e.kind)).or_default() += 1;
    }
    to_py(
        py,
        &serde_json::json!({
            "metrics": metrics,
            "finalStates": log.final_states,
            "eventCounts": counts,
            "steps": log.steps,
        }),
    )
}

/// Design recommender backed by the offline mock gateway.
#[pyclass(name = "Recommender", frozen)]
struct PyRecommender {
    inner: Recommender,
}

#[pymethods]
impl PyRecommender {
    #[new]
    fn new() -> Self {
        Self {
            inner: Recommender::new(Arc::new(Gateway::mock())),
        }
    }

    #[pyo3(signature = (scene, part_id, intended_use, target_experience = ""))]
    fn recommend(
        &self,
        py: Python<'_>,
        scene: &PyScene,
        part_id: &str,
        intended_use: &str,
        target_experience: &str,
    ) -> PyResult<Py<PyAny>> {
        let part = scene
            .inner
            .part(&PartId::new(part_id))
            .ok_or_else(|| PyKeyError::new_err(part_id.to_owned()))?;
        let intent = DesignIntent::new(intended_use, target_experience).map_err(value_err)?;
        let rec = self.inner.recommend(part, &intent).map_err(value_err)?;
        to_py(py, &rec)
    }

    fn network_calls(&self) -> u64 {
        self.inner.gateway().network_calls()
    }
}

/// Published tiers for a dataset part (1..=13), e.g. `[["CM"], ["GM", "CA"], ...]`.
#[pyfunction]
fn lookup_tiers(part: u8, metric: &str) -> PyResult<Vec<Vec<String>>> {
    let tiers = TierTable::builtin()
        .lookup_tiers(part, tier_metric(metric)?)
        .map_err(value_err)?;
    Ok(tiers
        .tiers()
        .iter()
        .map(|t| t.iter().map(|d| d.to_string()).collect())
        .collect())
}

#[pyfunction]
fn tier_string(part: u8, metric: &str) -> PyResult<String> {
    TierTable::builtin()
        .tier_string(part, tier_metric(metric)?)
        .map(str::to_owned)
        .map_err(value_err)
}

/// Rule-based metric choice: `(metric, reason)`.
#[pyfunction]
fn select_metric(intent: &str) -> (String, String) {
    let (m, reason) = recommend::select_metric(intent);
    // The JSON name, matching the `metric` field of recommendation dicts.
    let name = serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_else(|| m.to_string());
    (name, reason)
}

/// Friedman test over an n×k score table (rows are participants).
#[pyfunction]
fn friedman(py: Python<'_>, scores: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let m = RankMatrix::from_scores(&scores).map_err(value_err)?;
    to_py(py, &stats::friedman(&m).map_err(value_err)?)
}

#[pyfunction]
fn wilcoxon(py: Python<'_>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &stats::wilcoxon_signed_rank(&x, &y).map_err(value_err)?)
}

#[pyfunction]
#[pyo3(signature = (pvalues, alpha = 0.05))]
fn benjamini_hochberg(pvalues: Vec<f64>, alpha: f64) -> PyResult<Vec<bool>> {
    stats::benjamini_hochberg(&pvalues, alpha).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (series, epsilon = DEFAULT_REVERSAL_EPSILON))]
fn reversal_count(series: Vec<f64>, epsilon: f64) -> usize {
    sim::reversal_count(&series, epsilon)
}

#[pymodule]
pub fn hoicraft(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PySession>()?;
    m.add_class::<PyRecommender>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lookup_tiers, m)?)?;
    m.add_function(wrap_pyfunction!(tier_string, m)?)?;
    m.add_function(wrap_pyfunction!(select_metric, m)?)?;
    m.add_function(wrap_pyfunction!(friedman, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon, m)?)?;
    m.add_function(wrap_pyfunction!(benjamini_hochberg, m)?)?;
    m.add_function(wrap_pyfunction!(reversal_count, m)?)?;
    m.add("DESIGNS", HoiDesign::ALL.map(|d| d.to_string()).to_vec())?;
    Ok(())
}
