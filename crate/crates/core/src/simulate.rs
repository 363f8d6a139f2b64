//! Scripted sessions and the efficiency metrics derived from them.

use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interaction::{
    step, DesignAssignment, EngineConfig, EventKind, InteractionEvent, InteractionState, PartContext,
};
use crate::model::{Gesture, HandSample, MotionConstraint, PartId, SceneObject};

/// 90 Hz, a common head-mounted display frame rate.
pub const DEFAULT_DT: f64 = 1.0 / 90.0;
/// Reversal dead-band on the normalized error series.
pub const DEFAULT_REVERSAL_EPSILON: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown part `{0}`")]
    UnknownPart(PartId),
    #[error("trajectory has no samples")]
    EmptyScript,
    #[error("invalid trajectory: {0}")]
    InvalidScript(String),
    #[error("no manipulation occurred")]
    NoManipulation,
    #[error("trajectory json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScript {
    pub dt: f64,
    pub samples: Vec<HandSample>,
}

impl TrajectoryScript {
    pub fn new(dt: f64, samples: Vec<HandSample>) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::InvalidScript(format!("dt must be > 0, got {dt}")));
        }
        if samples.is_empty() {
            return Err(SimError::EmptyScript);
        }
        if samples[0].t < 0.0 {
            return Err(SimError::InvalidScript("sample times must be >= 0".into()));
        }
        if let Some(w) = samples.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(SimError::InvalidScript(format!(
                "sample times must strictly increase ({} then {})",
                w[0].t, w[1].t
            )));
        }
        Ok(Self { dt, samples })
    }

    /// Samples at `t = i * dt` from a position/gesture generator.
    pub fn sampled(dt: f64, steps: usize, mut f: impl FnMut(usize) -> (Point3<f64>, Gesture)) -> Result<Self, SimError> {
        let samples = (0..steps)
            .map(|i| {
                let (p, g) = f(i);
                HandSample::new(i as f64 * dt, p, g)
            })
            .collect();
        Self::new(dt, samples)
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let file: TrajectoryFile = serde_json::from_str(s).map_err(|e| SimError::Json(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TrajectoryFile::from(self)).expect("trajectory serialises")
    }
}

/// Trajectory file: `{dt_s, samples: [{t_s, fingertip, gesture, tracked}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub dt_s: f64,
    pub samples: Vec<SampleFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFile {
    pub t_s: f64,
    pub fingertip: [f64; 3],
    pub gesture: Gesture,
    #[serde(default = "yes")]
    pub tracked: bool,
}

fn yes() -> bool {
    true
}

impl TryFrom<TrajectoryFile> for TrajectoryScript {
    type Error = SimError;

    fn try_from(f: TrajectoryFile) -> Result<Self, SimError> {
        let samples = f
            .samples
            .into_iter()
            .map(|s| HandSample {
                t: s.t_s,
                fingertip: Point3::from(s.fingertip),
                gesture: s.gesture,
                tracked: s.tracked,
            })
            .collect();
        TrajectoryScript::new(f.dt_s, samples)
    }
}

impl From<&TrajectoryScript> for TrajectoryFile {
    fn from(s: &TrajectoryScript) -> Self {
        TrajectoryFile {
            dt_s: s.dt,
            samples: s
                .samples
                .iter()
                .map(|h| SampleFile {
                    t_s: h.t,
                    fingertip: h.fingertip.coords.into(),
                    gesture: h.gesture,
                    tracked: h.tracked,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionLog {
    pub events: Vec<InteractionEvent>,
    /// Per part with a target: `(t, |q - target|)` for every step.
    #[serde(rename = "errorSeries")]
    pub error_series: BTreeMap<PartId, Vec<(f64, f64)>>,
    #[serde(rename = "finalStates")]
    pub final_states: BTreeMap<PartId, f64>,
    pub steps: usize,
}

impl SessionLog {
    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// Steps every assigned part over the script. Parts are advanced in id order each step.
pub fn run_session(
    scene: &SceneObject,
    assignments: &BTreeMap<PartId, DesignAssignment>,
    script: &TrajectoryScript,
    targets: &BTreeMap<PartId, f64>,
    config: &EngineConfig,
) -> Result<SessionLog, SimError> {
    if script.samples.is_empty() {
        return Err(SimError::EmptyScript);
    }
    let mut runtimes = Vec::with_capacity(assignments.len());
    for (id, assignment) in assignments {
        let part = scene.part(id).ok_or_else(|| SimError::UnknownPart(id.clone()))?;
        runtimes.push((part, assignment, InteractionState::at_rest(part)));
    }
    for id in targets.keys() {
        if scene.part(id).is_none() {
            return Err(SimError::UnknownPart(id.clone()));
        }
    }

    let mut events = Vec::new();
    let mut error_series: BTreeMap<PartId, Vec<(f64, f64)>> = targets
        .keys()
        .map(|id| (id.clone(), Vec::with_capacity(script.samples.len())))
        .collect();

    for hand in &script.samples {
        for (part, assignment, state) in runtimes.iter_mut() {
            let ctx = PartContext::new(part, &assignment.params, config);
            let out = step(assignment.design, state, &ctx, hand, script.dt);
            *state = out.state;
            events.extend(out.events);
        }
        for (id, series) in error_series.iter_mut() {
            let part = scene.part(id).expect("checked above");
            let q = runtimes
                .iter()
                .find(|(p, _, _)| &p.id == id)
                .map_or_else(|| part.constraint.rest_coordinate(), |(_, _, s)| s.q);
            series.push((hand.t, part.constraint.deviation(q, targets[id])));
        }
    }

    let mut final_states: BTreeMap<PartId, f64> = runtimes
        .iter()
        .map(|(p, _, s)| (p.id.clone(), s.q))
        .collect();
    for id in targets.keys() {
        final_states
            .entry(id.clone())
            .or_insert_with(|| scene.part(id).expect("checked above").constraint.rest_coordinate());
    }
    Ok(SessionLog {
        events,
        error_series,
        final_states,
        steps: script.samples.len(),
    })
}

/// Interval between the first and last manipulation (`Moved` or `AnimationTriggered`).
pub fn completion_time(log: &SessionLog) -> Result<f64, SimError> {
    let mut times = log
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Moved | EventKind::AnimationTriggered))
        .map(|e| e.t);
    let first = times.next().ok_or(SimError::NoManipulation)?;
    let last = times.next_back().unwrap_or(first);
    Ok(last - first)
}

/// Number of direction changes in the error series, ignoring steps with `|Δ| <= epsilon`.
pub fn reversal_count(series: &[f64], epsilon: f64) -> usize {
    let mut last_sign = 0.0;
    let mut flips = 0;
    for w in series.windows(2) {
        let d = w[1] - w[0];
        if d.abs() <= epsilon {
            continue;
        }
        let sign = d.signum();
        if last_sign != 0.0 && sign != last_sign {
            flips += 1;
        }
        last_sign = sign;
    }
    flips
}

/// Normalizer for deviations: range length, or π for unbounded revolute joints.
fn deviation_scale(c: &MotionConstraint) -> f64 {
    c.range_length().unwrap_or(std::f64::consts::PI)
}

/// Final deviation normalized to `[0, 1]`.
pub fn error_ratio(q: f64, target: f64, c: &MotionConstraint) -> f64 {
    c.deviation(q, target) / deviation_scale(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "completionTime_s")]
    pub completion_time: f64,
    #[serde(rename = "reversalCount")]
    pub reversal_count: usize,
    #[serde(rename = "errorRatio")]
    pub error_ratio: f64,
}

/// Efficiency metrics for a finished session.
///
/// Reversals are counted on each target part's normalized error series and
/// summed; error ratios are averaged with equal weights across target parts.
/// A session without manipulation reports a completion time of zero.
pub fn metrics_report(
    scene: &SceneObject,
    log: &SessionLog,
    targets: &BTreeMap<PartId, f64>,
    epsilon: f64,
) -> Result<MetricsReport, SimError> {
    let completion = match completion_time(log) {
        Ok(t) => t,
        Err(SimError::NoManipulation) => 0.0,
        Err(e) => return Err(e),
    };
    let mut reversals = 0;
    let mut ratio_sum = 0.0;
    for (id, target) in targets {
        let part = scene.part(id).ok_or_else(|| SimError::UnknownPart(id.clone()))?;
        let scale = deviation_scale(&part.constraint);
        let normalized: Vec<f64> = log
            .error_series
            .get(id)
            .map(|s| s.iter().map(|(_, e)| e / scale).collect())
            .unwrap_or_default();
        reversals += reversal_count(&normalized, epsilon);
        let q = log
            .final_states
            .get(id)
            .copied()
            .unwrap_or_else(|| part.constraint.rest_coordinate());
        ratio_sum += error_ratio(q, *target, &part.constraint);
    }
    let error_ratio = if targets.is_empty() {
        0.0
    } else {
        ratio_sum / targets.len() as f64
    };
    Ok(MetricsReport {
        completion_time: completion,
        reversal_count: reversals,
        error_ratio,
    })
}
