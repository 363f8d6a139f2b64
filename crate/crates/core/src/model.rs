//! Objects, parts and their single-degree-of-freedom motion constraints.
//!
//! All lengths are meters and all angles radians. A part's `bounds` describe
//! its collider in the rest pose (constraint coordinate `q = 0`); the pose at
//! any other coordinate is obtained by translating along (prismatic) or
//! rotating about (revolute) the constraint axis.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default enlargement applied to part bounds to obtain the trigger region.
pub const DEFAULT_TRIGGER_SCALE: f64 = 1.2;

const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("constraint axis must be non-zero")]
    ZeroAxis,
    #[error("invalid range [{0}, {1}]: lower bound must be below upper bound")]
    InvalidRange(f64, f64),
    #[error("prismatic constraints require a range")]
    UnboundedPrismatic,
    #[error("part bounds must have positive extent, got {0:?}")]
    DegenerateBounds([f64; 3]),
    #[error("trigger scale factor must be >= 1, got {0}")]
    InvalidScale(f64),
    #[error("duplicate part id `{0}`")]
    DuplicatePart(String),
    #[error("body part id `{0}` does not name a part")]
    UnknownBodyPart(String),
    #[error("scene json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointKind {
    Prismatic,
    Revolute,
}

/// Identifier of a part within a scene.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartId(pub String);

impl PartId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// `extents` are full edge lengths, not half-sizes.
    pub fn from_center_extents(center: Point3<f64>, extents: Vector3<f64>) -> Self {
        let half = extents / 2.0;
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn max_extent(&self) -> f64 {
        self.extents().max()
    }

    pub fn contains_point(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    /// Scales the box about its center.
    pub fn scaled(&self, factor: f64) -> Aabb {
        Aabb::from_center_extents(self.center(), self.extents() * factor)
    }

    pub fn closest_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }
}

/// A single scalar degree of freedom: translation along or rotation about `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionConstraint {
    kind: JointKind,
    axis: Unit<Vector3<f64>>,
    pivot: Point3<f64>,
    range: Option<(f64, f64)>,
}

impl MotionConstraint {
    /// Builds a constraint, normalising `axis`.
    pub fn new(
        kind: JointKind,
        axis: Vector3<f64>,
        pivot: Point3<f64>,
        range: Option<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        let axis = Unit::try_new(axis, AXIS_TOLERANCE).ok_or(ModelError::ZeroAxis)?;
        if let Some((lo, hi)) = range {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(ModelError::InvalidRange(lo, hi));
            }
        } else if kind == JointKind::Prismatic {
            return Err(ModelError::UnboundedPrismatic);
        }
        Ok(Self {
            kind,
            axis,
            pivot,
            range,
        })
    }

    pub fn prismatic(axis: Vector3<f64>, min: f64, max: f64) -> Result<Self, ModelError> {
        Self::new(JointKind::Prismatic, axis, Point3::origin(), Some((min, max)))
    }

    pub fn revolute(
        axis: Vector3<f64>,
        pivot: Point3<f64>,
        range: Option<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        Self::new(JointKind::Revolute, axis, pivot, range)
    }

    pub fn kind(&self) -> JointKind {
        self.kind
    }

    pub fn axis(&self) -> &Unit<Vector3<f64>> {
        &self.axis
    }

    pub fn pivot(&self) -> &Point3<f64> {
        &self.pivot
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    pub fn is_unbounded(&self) -> bool {
        self.range.is_none()
    }

    pub fn range_length(&self) -> Option<f64> {
        self.range.map(|(lo, hi)| hi - lo)
    }

    /// Clamps to the range, or wraps to `[0, 2π)` for an unbounded revolute joint.
    pub fn clamp(&self, q: f64) -> f64 {
        match self.range {
            Some((lo, hi)) => q.clamp(lo, hi),
            None => wrap_angle(q),
        }
    }

    /// Coordinate the part starts at: zero if admissible, else the nearest limit.
    pub fn rest_coordinate(&self) -> f64 {
        self.clamp(0.0)
    }

    /// Absolute deviation between two coordinates, taking the short way round
    /// for unbounded revolute joints.
    pub fn deviation(&self, q: f64, target: f64) -> f64 {
        match self.range {
            Some(_) => (q - target).abs(),
            None => {
                let d = wrap_angle(q - target);
                d.min(TAU - d)
            }
        }
    }

    /// Maps a point from the world into the part's rest frame, given the part sits at `q`.
    pub fn to_rest_frame(&self, p: &Point3<f64>, q: f64) -> Point3<f64> {
        match self.kind {
            JointKind::Prismatic => p - self.axis.into_inner() * q,
            JointKind::Revolute => {
                let rot = Rotation3::from_axis_angle(&self.axis, -q);
                self.pivot + rot * (p - self.pivot)
            }
        }
    }

    /// Inverse of [`Self::to_rest_frame`].
    pub fn to_world(&self, p: &Point3<f64>, q: f64) -> Point3<f64> {
        match self.kind {
            JointKind::Prismatic => p + self.axis.into_inner() * q,
            JointKind::Revolute => {
                let rot = Rotation3::from_axis_angle(&self.axis, q);
                self.pivot + rot * (p - self.pivot)
            }
        }
    }

    pub fn vector_to_world(&self, v: &Vector3<f64>, q: f64) -> Vector3<f64> {
        match self.kind {
            JointKind::Prismatic => *v,
            JointKind::Revolute => Rotation3::from_axis_angle(&self.axis, q) * v,
        }
    }
}

/// Wraps an angle to `[0, 2π)`.
pub fn wrap_angle(q: f64) -> f64 {
    let w = q.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Free-function form of [`MotionConstraint::clamp`].
pub fn clamp_to_constraint(q: f64, c: &MotionConstraint) -> f64 {
    c.clamp(q)
}

/// An articulated part with one scalar degree of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub id: PartId,
    pub name: String,
    pub object_name: String,
    pub bounds: Aabb,
    pub constraint: MotionConstraint,
    /// Typical action verb, e.g. "Rotate" or "Slide".
    pub interaction_type: String,
    pub affordances: String,
}

impl PartSpec {
    pub fn new(
        id: impl Into<PartId>,
        name: impl Into<String>,
        object_name: impl Into<String>,
        bounds: Aabb,
        constraint: MotionConstraint,
    ) -> Result<Self, ModelError> {
        let e = bounds.extents();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
            return Err(ModelError::DegenerateBounds([e.x, e.y, e.z]));
        }
        Ok(Self {
            id: id.into(),
            name: name.into(),
            object_name: object_name.into(),
            bounds,
            constraint,
            interaction_type: String::new(),
            affordances: String::new(),
        })
    }

    pub fn with_interaction(mut self, interaction_type: &str, affordances: &str) -> Self {
        self.interaction_type = interaction_type.to_owned();
        self.affordances = affordances.to_owned();
        self
    }

    /// Characteristic size: the largest edge of the bounds.
    pub fn part_scale(&self) -> f64 {
        self.bounds.max_extent()
    }
}

impl From<String> for PartId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Enlarged box around a part; entering it drives contact-based acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerRegion {
    pub aabb: Aabb,
}

impl TriggerRegion {
    pub fn center(&self) -> Point3<f64> {
        self.aabb.center()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.aabb.contains_point(p)
    }
}

/// Trigger region in the part's rest frame: bounds scaled about their center.
pub fn trigger_region(part: &PartSpec, scale_factor: f64) -> Result<TriggerRegion, ModelError> {
    if !(scale_factor >= 1.0) {
        return Err(ModelError::InvalidScale(scale_factor));
    }
    Ok(TriggerRegion {
        aabb: part.bounds.scaled(scale_factor),
    })
}

pub fn normalized_anchor_distance(
    fingertip: &Point3<f64>,
    anchor: &Point3<f64>,
    part_scale: f64,
) -> f64 {
    debug_assert!(part_scale > 0.0);
    nalgebra::distance(fingertip, anchor) / part_scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gesture {
    Grab,
    Pinch,
    Curl,
    Point,
    Open,
    None,
}

impl Gesture {
    pub const ACTIVE: [Gesture; 5] = [
        Gesture::Grab,
        Gesture::Pinch,
        Gesture::Curl,
        Gesture::Point,
        Gesture::Open,
    ];
}

/// One tracked frame of the index fingertip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandSample {
    pub t: f64,
    pub fingertip: Point3<f64>,
    pub gesture: Gesture,
    pub tracked: bool,
}

impl HandSample {
    pub fn new(t: f64, fingertip: Point3<f64>, gesture: Gesture) -> Self {
        Self {
            t,
            fingertip,
            gesture,
            tracked: true,
        }
    }

    pub fn untracked(t: f64) -> Self {
        Self {
            t,
            fingertip: Point3::origin(),
            gesture: Gesture::None,
            tracked: false,
        }
    }
}

/// A pre-processed object: its parts and which of them form the static body.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub parts: Vec<PartSpec>,
    pub body_part_ids: BTreeSet<PartId>,
}

impl SceneObject {
    pub fn new(
        name: impl Into<String>,
        parts: Vec<PartSpec>,
        body_part_ids: BTreeSet<PartId>,
    ) -> Result<Self, ModelError> {
        let mut seen = BTreeSet::new();
        for p in &parts {
            if !seen.insert(p.id.clone()) {
                return Err(ModelError::DuplicatePart(p.id.0.clone()));
            }
        }
        if let Some(b) = body_part_ids.iter().find(|b| !seen.contains(*b)) {
            return Err(ModelError::UnknownBodyPart(b.0.clone()));
        }
        Ok(Self {
            name: name.into(),
            parts,
            body_part_ids,
        })
    }

    pub fn part(&self, id: &PartId) -> Option<&PartSpec> {
        self.parts.iter().find(|p| &p.id == id)
    }

    /// Parts that can be made interactive (everything except the body).
    pub fn interactive_parts(&self) -> impl Iterator<Item = &PartSpec> {
        self.parts
            .iter()
            .filter(|p| !self.body_part_ids.contains(&p.id))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: SceneFile = serde_json::from_str(s).map_err(|e| ModelError::Json(e.to_string()))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneFile::from(self)).expect("scene serialises")
    }
}

// ---------------------------------------------------------------------------
// Scene description file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneFile {
    pub name: String,
    pub parts: Vec<PartFile>,
    #[serde(default)]
    pub body_part_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartFile {
    pub id: String,
    pub name: String,
    pub bounds: BoundsFile,
    pub constraint: ConstraintFile,
    #[serde(default)]
    pub interaction_type: String,
    #[serde(default)]
    pub affordances: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsFile {
    pub center: [f64; 3],
    pub extents: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFile {
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
    pub range: Option<[f64; 2]>,
}

impl TryFrom<SceneFile> for SceneObject {
    type Error = ModelError;

    fn try_from(file: SceneFile) -> Result<Self, ModelError> {
        let parts = file
            .parts
            .into_iter()
            .map(|p| {
                let constraint = MotionConstraint::new(
                    p.constraint.kind,
                    Vector3::from(p.constraint.axis),
                    Point3::from(p.constraint.pivot),
                    p.constraint.range.map(|[a, b]| (a, b)),
                )?;
                let bounds = Aabb::from_center_extents(
                    Point3::from(p.bounds.center),
                    Vector3::from(p.bounds.extents),
                );
                Ok(PartSpec::new(p.id, p.name, file.name.clone(), bounds, constraint)?
                    .with_interaction(&p.interaction_type, &p.affordances))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let body = file.body_part_ids.into_iter().map(PartId).collect();
        SceneObject::new(file.name, parts, body)
    }
}

impl From<&SceneObject> for SceneFile {
    fn from(scene: &SceneObject) -> Self {
        SceneFile {
            name: scene.name.clone(),
            parts: scene
                .parts
                .iter()
                .map(|p| PartFile {
                    id: p.id.0.clone(),
                    name: p.name.clone(),
                    bounds: BoundsFile {
                        center: p.bounds.center().coords.into(),
                        extents: p.bounds.extents().into(),
                    },
                    constraint: ConstraintFile {
                        kind: p.constraint.kind(),
                        axis: p.constraint.axis().into_inner().into(),
                        pivot: p.constraint.pivot().coords.into(),
                        range: p.constraint.range().map(|(a, b)| [a, b]),
                    },
                    interaction_type: p.interaction_type.clone(),
                    affordances: p.affordances.clone(),
                })
                .collect(),
            body_part_ids: scene.body_part_ids.iter().map(|b| b.0.clone()).collect(),
        }
    }
}
