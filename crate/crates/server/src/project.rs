//! The project document and its four-step workflow.

use std::collections::{BTreeMap, BTreeSet};

use hoicraft_core::interaction::{
    AnimationMode, CustomizationFile, CustomizationParams, DesignAssignment,
};
use hoicraft_core::model::{Gesture, PartId, PartSpec, SceneFile, SceneObject};
use hoicraft_core::recommend::{
    DesignIntent, PartAnalysisEntry, Prioritization, PriorityCandidate, Recommendation, Recommender,
};
use hoicraft_core::HoiDesign;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkflowStep {
    Intent,
    Selection,
    Customization,
    Mapping,
}

/// Customization as stored and exchanged: degrees and seconds, design optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StoredCustomization {
    #[serde(default)]
    pub design: Option<HoiDesign>,
    #[serde(default = "defaults::resistance")]
    pub resistance: f64,
    #[serde(default = "defaults::gestures")]
    pub allowed_gestures: Vec<Gesture>,
    #[serde(default = "defaults::release_distance")]
    pub release_distance: f64,
    #[serde(default = "defaults::animation_mode")]
    pub animation_mode: AnimationMode,
    #[serde(rename = "stepAngle_deg", default = "defaults::step_angle_deg")]
    pub step_angle_deg: f64,
    #[serde(rename = "animationDuration_s", default = "defaults::animation_duration_s")]
    pub animation_duration_s: f64,
}

mod defaults {
    use super::*;

    fn d() -> CustomizationFile {
        CustomizationFile::defaults_for(HoiDesign::CM)
    }
    pub fn resistance() -> f64 {
        d().resistance
    }
    pub fn gestures() -> Vec<Gesture> {
        d().allowed_gestures
    }
    pub fn release_distance() -> f64 {
        d().release_distance
    }
    pub fn animation_mode() -> AnimationMode {
        d().animation_mode
    }
    pub fn step_angle_deg() -> f64 {
        d().step_angle_deg
    }
    pub fn animation_duration_s() -> f64 {
        d().animation_duration_s
    }
}

impl Default for StoredCustomization {
    fn default() -> Self {
        Self::from_assignment(None, &CustomizationParams::default())
    }
}

impl StoredCustomization {
    fn from_assignment(design: Option<HoiDesign>, params: &CustomizationParams) -> Self {
        let f: CustomizationFile = DesignAssignment {
            design: design.unwrap_or(HoiDesign::CM),
            params: params.clone(),
        }
        .into();
        Self {
            design,
            resistance: f.resistance,
            allowed_gestures: f.allowed_gestures,
            release_distance: f.release_distance,
            animation_mode: f.animation_mode,
            step_angle_deg: f.step_angle_deg,
            animation_duration_s: f.animation_duration_s,
        }
    }

    /// Validated engine parameters (radians internally).
    pub fn params(&self) -> Result<CustomizationParams> {
        let unique: BTreeSet<Gesture> = self.allowed_gestures.iter().copied().collect();
        if unique.len() != self.allowed_gestures.len() {
            return Err(ServiceError::InvalidParam("allowedGestures has duplicates".into()));
        }
        let file = CustomizationFile {
            design: self.design.unwrap_or(HoiDesign::CM),
            resistance: self.resistance,
            allowed_gestures: self.allowed_gestures.clone(),
            release_distance: self.release_distance,
            animation_mode: self.animation_mode,
            step_angle_deg: self.step_angle_deg,
            animation_duration_s: self.animation_duration_s,
        };
        DesignAssignment::try_from(file)
            .map(|a| a.params)
            .map_err(|e| ServiceError::InvalidParam(e.to_string()))
    }
}

/// How parts are chosen in the selection step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "camelCase")]
pub enum SelectionRequest {
    ByCount { n: usize },
    Manual { ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IntentOutcome {
    pub priority_list: Vec<String>,
    pub initial_level: usize,
    pub rationale: String,
    pub analysis: Vec<PartAnalysisEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionOutcome {
    pub selected_part_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Project {
    pub schema_version: u32,
    pub id: String,
    pub created_at: String,
    pub updated_at: String,
    pub step: WorkflowStep,
    pub scene: SceneFile,
    pub intent: Option<DesignIntent>,
    pub analysis: Vec<PartAnalysisEntry>,
    pub priority_list: Vec<String>,
    pub initial_level: Option<usize>,
    pub priority_rationale: Option<String>,
    pub selected_part_ids: Vec<String>,
    pub customizations: BTreeMap<String, StoredCustomization>,
    pub mappings: BTreeMap<String, Recommendation>,
}

impl Project {
    pub fn new(id: String, scene: SceneFile, now: String) -> Result<Self> {
        SceneObject::try_from(scene.clone()).map_err(|e| ServiceError::InvalidScene(e.to_string()))?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            id,
            created_at: now.clone(),
            updated_at: now,
            step: WorkflowStep::Intent,
            scene,
            intent: None,
            analysis: Vec::new(),
            priority_list: Vec::new(),
            initial_level: None,
            priority_rationale: None,
            selected_part_ids: Vec::new(),
            customizations: BTreeMap::new(),
            mappings: BTreeMap::new(),
        })
    }

    pub fn scene_object(&self) -> Result<SceneObject> {
        SceneObject::try_from(self.scene.clone()).map_err(|e| ServiceError::InvalidScene(e.to_string()))
    }

    fn interactive_ids(&self) -> Vec<String> {
        let body: BTreeSet<&String> = self.scene.body_part_ids.iter().collect();
        self.scene
            .parts
            .iter()
            .filter(|p| !body.contains(&p.id))
            .map(|p| p.id.clone())
            .collect()
    }

    fn part(&self, pid: &str) -> Result<PartSpec> {
        self.scene_object()?
            .part(&PartId::new(pid))
            .cloned()
            .ok_or_else(|| ServiceError::UnknownPart(pid.to_owned()))
    }

    fn require_selected(&self, pid: &str) -> Result<()> {
        self.part(pid)?;
        if self.selected_part_ids.iter().any(|s| s == pid) {
            Ok(())
        } else {
            Err(ServiceError::NotSelected(pid.to_owned()))
        }
    }

    /// Stores the intent, re-runs analysis and prioritisation, and clears
    /// everything downstream.
    pub fn set_intent(&mut self, intent: DesignIntent, recommender: &Recommender) -> Result<IntentOutcome> {
        if intent.validate().is_err() {
            return Err(ServiceError::EmptyIntent);
        }
        let scene = self.scene_object()?;
        let parts: Vec<&PartSpec> = scene.interactive_parts().collect();
        if parts.is_empty() {
            return Err(ServiceError::InvalidScene("scene has no interactive parts".into()));
        }
        let names: Vec<String> = parts.iter().map(|p| p.name.clone()).collect();
        let descriptors: Vec<String> = parts.iter().map(|p| p.affordances.clone()).collect();
        let analysis = recommender.analyze_object(&scene.name, &names, Some(&descriptors))?;
        let candidates: Vec<PriorityCandidate> = parts
            .iter()
            .zip(&analysis)
            .map(|(p, a)| PriorityCandidate::from_analysis(p.id.as_str(), a))
            .collect();
        let Prioritization {
            priority_parts,
            initial_level,
            rationale,
        } = recommender.prioritize_parts(&intent, &candidates)?;

        self.intent = Some(intent);
        self.analysis = analysis.clone();
        self.priority_list = priority_parts.clone();
        self.initial_level = Some(initial_level);
        self.priority_rationale = Some(rationale.clone());
        self.selected_part_ids.clear();
        self.customizations.clear();
        self.mappings.clear();
        self.step = WorkflowStep::Selection;
        Ok(IntentOutcome {
            priority_list: priority_parts,
            initial_level,
            rationale,
            analysis,
        })
    }

    pub fn set_selection(&mut self, req: &SelectionRequest) -> Result<SelectionOutcome> {
        if self.step < WorkflowStep::Selection || self.intent.is_none() {
            return Err(ServiceError::WorkflowGuard("set the intent before selecting parts".into()));
        }
        let selected: Vec<String> = match req {
            SelectionRequest::ByCount { n } => {
                let max = self.priority_list.len();
                if *n == 0 || *n > max {
                    return Err(ServiceError::CountOutOfRange { n: *n, max });
                }
                self.priority_list[..*n].to_vec()
            }
            SelectionRequest::Manual { ids } => {
                let allowed = self.interactive_ids();
                let mut out: Vec<String> = Vec::new();
                for id in ids {
                    if !allowed.contains(id) {
                        return Err(ServiceError::UnknownPart(id.clone()));
                    }
                    if !out.contains(id) {
                        out.push(id.clone());
                    }
                }
                if out.is_empty() {
                    return Err(ServiceError::CountOutOfRange { n: 0, max: allowed.len() });
                }
                out
            }
        };
        self.customizations.retain(|k, _| selected.contains(k));
        self.mappings.retain(|k, _| selected.contains(k));
        self.selected_part_ids = selected.clone();
        self.step = if self.mappings.is_empty() {
            WorkflowStep::Customization
        } else {
            WorkflowStep::Mapping
        };
        Ok(SelectionOutcome {
            selected_part_ids: selected,
        })
    }

    pub fn set_customization(&mut self, pid: &str, c: StoredCustomization) -> Result<StoredCustomization> {
        if self.step < WorkflowStep::Customization {
            return Err(ServiceError::WorkflowGuard("select parts before customizing".into()));
        }
        self.require_selected(pid)?;
        c.params()?;
        let mut stored = c;
        stored.allowed_gestures.sort();
        self.customizations.insert(pid.to_owned(), stored.clone());
        Ok(stored)
    }

    /// Part and intent for a mapping request, after the workflow checks.
    pub fn mapping_inputs(&self, pid: &str) -> Result<(PartSpec, DesignIntent)> {
        let intent = self
            .intent
            .clone()
            .ok_or_else(|| ServiceError::WorkflowGuard("set the intent before mapping".into()))?;
        if self.step < WorkflowStep::Customization {
            return Err(ServiceError::WorkflowGuard("select parts before mapping".into()));
        }
        self.require_selected(pid)?;
        Ok((self.part(pid)?, intent))
    }

    pub fn set_mapping(&mut self, pid: &str, rec: Recommendation) {
        self.mappings.insert(pid.to_owned(), rec);
        self.step = WorkflowStep::Mapping;
    }

    /// Design and parameters per selected part. The design comes from the
    /// customization if it names one, else the mapping's top choice, else CM.
    pub fn assignments(&self) -> Result<BTreeMap<PartId, DesignAssignment>> {
        if self.step < WorkflowStep::Customization {
            return Err(ServiceError::WorkflowGuard("select parts before simulating".into()));
        }
        self.selected_part_ids
            .iter()
            .map(|pid| {
                let custom = self.customizations.get(pid).cloned().unwrap_or_default();
                let design = custom
                    .design
                    .or_else(|| self.mappings.get(pid).map(|m| m.top().choice))
                    .unwrap_or(HoiDesign::CM);
                Ok((PartId::new(pid), DesignAssignment { design, params: custom.params()? }))
            })
            .collect()
    }

    /// Cross-field rules a JSON schema cannot express.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(ServiceError::Schema(m));
        self.scene_object()?;
        let interactive = self.interactive_ids();
        if let Some(p) = self.selected_part_ids.iter().find(|p| !interactive.contains(p)) {
            return bad(format!("selected part `{p}` is not an interactive part"));
        }
        if let Some(p) = self.priority_list.iter().find(|p| !interactive.contains(p)) {
            return bad(format!("priority part `{p}` is not an interactive part"));
        }
        for key in self.mappings.keys().chain(self.customizations.keys()) {
            if !self.selected_part_ids.contains(key) {
                return bad(format!("part `{key}` has settings but is not selected"));
            }
        }
        if let Some(level) = self.initial_level {
            if level > self.priority_list.len() {
                return bad(format!("initialLevel {level} exceeds priority list"));
            }
        }
        let expect_min = match (&self.intent, self.selected_part_ids.is_empty()) {
            (None, _) => WorkflowStep::Intent,
            (Some(_), true) => WorkflowStep::Selection,
            (Some(_), false) => WorkflowStep::Customization,
        };
        let consistent = match self.step {
            WorkflowStep::Intent => self.intent.is_none(),
            WorkflowStep::Selection => self.intent.is_some() && self.selected_part_ids.is_empty(),
            WorkflowStep::Customization => expect_min == WorkflowStep::Customization && self.mappings.is_empty(),
            WorkflowStep::Mapping => expect_min == WorkflowStep::Customization && !self.mappings.is_empty(),
        };
        if !consistent {
            return bad(format!("step {:?} inconsistent with stored state", self.step));
        }
        Ok(())
    }
}
