//! The five interaction designs as fixed-step state machines.
//!
//! | design | selection                      | response                           |
//! |--------|--------------------------------|------------------------------------|
//! | PM     | fingertip collision            | damped 1-DoF dynamics              |
//! | GM     | allowed gesture inside trigger | part follows the hand              |
//! | GA     | allowed gesture inside trigger | predefined animation, once/cycle   |
//! | CM     | fingertip enters trigger       | part follows the hand              |
//! | CA     | fingertip enters trigger       | predefined animation, once/entry   |
//!
//! Every step function is pure: `(state, hand sample) -> (state, events)`.
//! Manipulation designs test the trigger region in the part's current pose;
//! animation designs test it in the rest pose so that a moving part cannot
//! re-trigger itself.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    normalized_anchor_distance, Gesture, HandSample, JointKind, MotionConstraint, PartId, PartSpec,
    DEFAULT_TRIGGER_SCALE,
};

/// Motion below this threshold does not produce a `Moved` event.
pub const MOVE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("invalid customization parameter: {0}")]
    InvalidParam(String),
    #[error("unknown design `{0}`")]
    UnknownDesign(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HoiDesign {
    PM,
    GM,
    GA,
    CM,
    CA,
}

impl HoiDesign {
    pub const ALL: [HoiDesign; 5] = [
        HoiDesign::PM,
        HoiDesign::GM,
        HoiDesign::GA,
        HoiDesign::CM,
        HoiDesign::CA,
    ];

    pub fn code(self) -> &'static str {
        match self {
            HoiDesign::PM => "PM",
            HoiDesign::GM => "GM",
            HoiDesign::GA => "GA",
            HoiDesign::CM => "CM",
            HoiDesign::CA => "CA",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            HoiDesign::PM => "Physics-based Manipulation",
            HoiDesign::GM => "Gesture-based Manipulation",
            HoiDesign::GA => "Gesture-based Animation",
            HoiDesign::CM => "Contact-based Manipulation",
            HoiDesign::CA => "Contact-based Animation",
        }
    }

    pub fn is_animation(self) -> bool {
        matches!(self, HoiDesign::GA | HoiDesign::CA)
    }
}

impl fmt::Display for HoiDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for HoiDesign {
    type Err = InteractionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HoiDesign::ALL
            .into_iter()
            .find(|d| d.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| InteractionError::UnknownDesign(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnimationMode {
    /// Drive toward the upper limit; a no-op once there.
    Single,
    /// Alternate between the two limits on each trigger.
    Loop,
}

/// Designer-tunable parameters. Angles are radians.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomizationParams {
    /// Damping coefficient used by PM.
    pub resistance: f64,
    pub allowed_gestures: BTreeSet<Gesture>,
    /// Release threshold in multiples of the part scale.
    pub release_distance: f64,
    pub animation_mode: AnimationMode,
    pub step_angle: f64,
    pub animation_duration: f64,
}

impl Default for CustomizationParams {
    fn default() -> Self {
        Self {
            resistance: 1.0,
            allowed_gestures: BTreeSet::from([Gesture::Grab, Gesture::Pinch]),
            release_distance: 1.5,
            animation_mode: AnimationMode::Single,
            step_angle: 30f64.to_radians(),
            animation_duration: 0.6,
        }
    }
}

impl CustomizationParams {
    pub fn validate(&self) -> Result<(), InteractionError> {
        let bad = |m: &str| Err(InteractionError::InvalidParam(m.to_owned()));
        if !(self.resistance >= 0.0) || !self.resistance.is_finite() {
            return bad("resistance must be >= 0");
        }
        if self.allowed_gestures.is_empty() {
            return bad("allowedGestures must not be empty");
        }
        if self.allowed_gestures.contains(&Gesture::None) {
            return bad("allowedGestures cannot contain None");
        }
        if !(self.release_distance > 0.0) || !self.release_distance.is_finite() {
            return bad("releaseDistance must be > 0");
        }
        if !(self.step_angle > 0.0 && self.step_angle <= TAU) {
            return bad("stepAngle must be in (0, 360] degrees");
        }
        if !(self.animation_duration > 0.0) || !self.animation_duration.is_finite() {
            return bad("animationDuration must be > 0");
        }
        Ok(())
    }
}

/// A design together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignAssignment {
    pub design: HoiDesign,
    pub params: CustomizationParams,
}

/// Customization JSON fragment. Degrees on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomizationFile {
    pub design: HoiDesign,
    pub resistance: f64,
    #[serde(rename = "allowedGestures")]
    pub allowed_gestures: Vec<Gesture>,
    #[serde(rename = "releaseDistance")]
    pub release_distance: f64,
    #[serde(rename = "animationMode")]
    pub animation_mode: AnimationMode,
    #[serde(rename = "stepAngle_deg")]
    pub step_angle_deg: f64,
    #[serde(rename = "animationDuration_s")]
    pub animation_duration_s: f64,
}

impl CustomizationFile {
    pub fn defaults_for(design: HoiDesign) -> Self {
        DesignAssignment {
            design,
            params: CustomizationParams::default(),
        }
        .into()
    }
}

impl TryFrom<CustomizationFile> for DesignAssignment {
    type Error = InteractionError;

    fn try_from(f: CustomizationFile) -> Result<Self, Self::Error> {
        let params = CustomizationParams {
            resistance: f.resistance,
            allowed_gestures: f.allowed_gestures.into_iter().collect(),
            release_distance: f.release_distance,
            animation_mode: f.animation_mode,
            step_angle: f.step_angle_deg.to_radians(),
            animation_duration: f.animation_duration_s,
        };
        params.validate()?;
        Ok(DesignAssignment {
            design: f.design,
            params,
        })
    }
}

impl From<DesignAssignment> for CustomizationFile {
    fn from(a: DesignAssignment) -> Self {
        CustomizationFile {
            design: a.design,
            resistance: a.params.resistance,
            allowed_gestures: a.params.allowed_gestures.into_iter().collect(),
            release_distance: a.params.release_distance,
            animation_mode: a.params.animation_mode,
            // Snap to 1e-9 degrees so 30° does not come back as 29.999999999999996.
            step_angle_deg: (a.params.step_angle.to_degrees() * 1e9).round() / 1e9,
            animation_duration_s: a.params.animation_duration,
        }
    }
}

/// Engine constants shared by all parts of a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineConfig {
    pub trigger_scale: f64,
    /// Fingertip collision sphere radius (m).
    pub finger_radius: f64,
    /// Penalty stiffness (N/m).
    pub stiffness: f64,
    /// Effective mass or inertia of the part's coordinate.
    pub mass: f64,
    /// Hand-following about a revolute axis freezes closer than this (m).
    pub min_pivot_radius: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            trigger_scale: DEFAULT_TRIGGER_SCALE,
            finger_radius: 0.01,
            stiffness: 500.0,
            mass: 0.2,
            min_pivot_radius: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Animation {
    pub start_q: f64,
    /// Unwrapped target; may exceed 2π for unbounded dials.
    pub target_q: f64,
    pub start_t: f64,
}

/// Runtime state of one part.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionState {
    pub q: f64,
    pub q_dot: f64,
    pub acquired: bool,
    pub anchor: Option<Point3<f64>>,
    /// Latch for out-in cycles.
    pub hand_inside: bool,
    /// Latch for gesture cycles.
    pub gesture_held: bool,
    pub animating: Option<Animation>,
    last_fingertip: Option<Point3<f64>>,
}

impl InteractionState {
    pub fn at_rest(part: &PartSpec) -> Self {
        Self::at(part.constraint.rest_coordinate())
    }

    pub fn at(q: f64) -> Self {
        Self {
            q,
            q_dot: 0.0,
            acquired: false,
            anchor: None,
            hand_inside: false,
            gesture_held: false,
            animating: None,
            last_fingertip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Acquired,
    Released,
    AnimationTriggered,
    Moved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub t: f64,
    pub kind: EventKind,
    #[serde(rename = "partId")]
    pub part_id: PartId,
    pub q: f64,
}

/// Everything a step needs besides state and input.
#[derive(Debug, Clone, Copy)]
pub struct PartContext<'a> {
    pub part: &'a PartSpec,
    pub params: &'a CustomizationParams,
    pub config: &'a EngineConfig,
}

impl<'a> PartContext<'a> {
    pub fn new(part: &'a PartSpec, params: &'a CustomizationParams, config: &'a EngineConfig) -> Self {
        Self {
            part,
            params,
            config,
        }
    }

    fn constraint(&self) -> &MotionConstraint {
        &self.part.constraint
    }

    fn trigger_rest(&self) -> crate::model::Aabb {
        self.part.bounds.scaled(self.config.trigger_scale)
    }

    fn inside_at(&self, p: &Point3<f64>, q: f64) -> bool {
        self.trigger_rest()
            .contains_point(&self.constraint().to_rest_frame(p, q))
    }

    fn event(&self, t: f64, kind: EventKind, q: f64) -> InteractionEvent {
        InteractionEvent {
            t,
            kind,
            part_id: self.part.id.clone(),
            q,
        }
    }
}

/// Result of advancing one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: InteractionState,
    pub events: Vec<InteractionEvent>,
}

pub fn gesture_matches(g: Gesture, params: &CustomizationParams) -> bool {
    g != Gesture::None && params.allowed_gestures.contains(&g)
}

/// Dispatches to the step function of `design`.
pub fn step(
    design: HoiDesign,
    state: &InteractionState,
    ctx: &PartContext<'_>,
    hand: &HandSample,
    dt: f64,
) -> Step {
    match design {
        HoiDesign::PM => step_pm(state, ctx, hand, dt),
        HoiDesign::GM => step_gm(state, ctx, hand, dt),
        HoiDesign::GA => step_ga(state, ctx, hand, dt),
        HoiDesign::CM => step_cm(state, ctx, hand, dt),
        HoiDesign::CA => step_ca(state, ctx, hand, dt),
    }
}

// ---------------------------------------------------------------------------
// PM
// ---------------------------------------------------------------------------

/// Generalized penalty force on the part coordinate from the fingertip sphere.
fn contact_force(ctx: &PartContext<'_>, fingertip: &Point3<f64>, q: f64) -> f64 {
    let c = ctx.constraint();
    let radius = ctx.config.finger_radius;
    let bounds = &ctx.part.bounds;
    let local = c.to_rest_frame(fingertip, q);
    let closest = bounds.closest_point(&local);
    let offset = local - closest;
    let dist = offset.norm();

    let (depth, normal_local) = if dist > 0.0 {
        if dist >= radius {
            return 0.0;
        }
        (radius - dist, -offset / dist)
    } else {
        // Center inside the box: push out through the nearest face.
        let mut best = (f64::INFINITY, Vector3::zeros());
        for i in 0..3 {
            let to_min = local[i] - bounds.min[i];
            let to_max = bounds.max[i] - local[i];
            if to_min < best.0 {
                best = (to_min, Vector3::ith(i, 1.0));
            }
            if to_max < best.0 {
                best = (to_max, Vector3::ith(i, -1.0));
            }
        }
        (radius + best.0, best.1)
    };

    let normal = c.vector_to_world(&normal_local, q);
    let direction = match c.kind() {
        JointKind::Prismatic => normal.dot(c.axis()),
        JointKind::Revolute => {
            let contact = c.to_world(&closest, q);
            (contact - c.pivot()).cross(&normal).dot(c.axis())
        }
    };
    if direction.abs() < 1e-9 {
        return 0.0;
    }
    ctx.config.stiffness * depth * direction.signum()
}

/// Physics-based manipulation: penalty contact, viscous resistance, semi-implicit Euler.
pub fn step_pm(state: &InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) -> Step {
    debug_assert!(dt > 0.0);
    let mut s = state.clone();
    let force = if hand.tracked {
        contact_force(ctx, &hand.fingertip, s.q)
    } else {
        0.0
    };
    let mass = ctx.config.mass;
    // Damping is applied implicitly so large resistance values stay stable.
    s.q_dot = (s.q_dot + force / mass * dt) / (1.0 + ctx.params.resistance / mass * dt);
    let raw = s.q + s.q_dot * dt;
    let c = ctx.constraint();
    match c.range() {
        Some((lo, hi)) => {
            if raw <= lo {
                s.q = lo;
                s.q_dot = s.q_dot.max(0.0);
            } else if raw >= hi {
                s.q = hi;
                s.q_dot = s.q_dot.min(0.0);
            } else {
                s.q = raw;
            }
        }
        None => s.q = c.clamp(raw),
    }
    let mut events = Vec::new();
    if c.deviation(s.q, state.q) > MOVE_EPSILON {
        events.push(ctx.event(hand.t, EventKind::Moved, s.q));
    }
    Step { state: s, events }
}

// ---------------------------------------------------------------------------
// GM / CM
// ---------------------------------------------------------------------------

/// Change of the constraint coordinate implied by the fingertip moving from `prev` to `cur`.
fn follow_delta(ctx: &PartContext<'_>, prev: &Point3<f64>, cur: &Point3<f64>) -> f64 {
    let c = ctx.constraint();
    let axis = c.axis().into_inner();
    match c.kind() {
        JointKind::Prismatic => (cur - prev).dot(&axis),
        JointKind::Revolute => {
            let planar = |p: &Point3<f64>| {
                let r = p - c.pivot();
                r - axis * r.dot(&axis)
            };
            let (r0, r1) = (planar(prev), planar(cur));
            let min_r = ctx.config.min_pivot_radius;
            if r0.norm() < min_r || r1.norm() < min_r {
                return 0.0;
            }
            axis.dot(&r0.cross(&r1)).atan2(r0.dot(&r1))
        }
    }
}

fn follow(s: &mut InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) {
    if let Some(prev) = s.last_fingertip {
        let before = s.q;
        s.q = ctx.constraint().clamp(s.q + follow_delta(ctx, &prev, &hand.fingertip));
        s.q_dot = (s.q - before) / dt;
    }
    s.last_fingertip = Some(hand.fingertip);
}

fn acquire(s: &mut InteractionState, ctx: &PartContext<'_>, hand: &HandSample, events: &mut Vec<InteractionEvent>) {
    s.acquired = true;
    let center = ctx.trigger_rest().center();
    s.anchor = Some(ctx.constraint().to_world(&center, s.q));
    s.last_fingertip = Some(hand.fingertip);
    s.q_dot = 0.0;
    events.push(ctx.event(hand.t, EventKind::Acquired, s.q));
}

fn release(s: &mut InteractionState, ctx: &PartContext<'_>, t: f64, events: &mut Vec<InteractionEvent>) {
    s.acquired = false;
    s.anchor = None;
    s.last_fingertip = None;
    s.q_dot = 0.0;
    events.push(ctx.event(t, EventKind::Released, s.q));
}

fn moved_event(before: f64, s: &InteractionState, ctx: &PartContext<'_>, t: f64, events: &mut Vec<InteractionEvent>) {
    if ctx.constraint().deviation(s.q, before) > MOVE_EPSILON {
        events.push(ctx.event(t, EventKind::Moved, s.q));
    }
}

/// Gesture-based manipulation.
///
/// Releases when the gesture stops matching, tracking is lost, or the
/// fingertip is farther than `release_distance` part scales from the anchor.
pub fn step_gm(state: &InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) -> Step {
    debug_assert!(dt > 0.0);
    let mut s = state.clone();
    let mut events = Vec::new();
    let matches = hand.tracked && gesture_matches(hand.gesture, ctx.params);
    if hand.tracked {
        s.hand_inside = ctx.inside_at(&hand.fingertip, s.q);
    }
    s.gesture_held = matches;

    if s.acquired {
        let anchor = s.anchor.expect("acquired part has an anchor");
        let too_far = hand.tracked
            && normalized_anchor_distance(&hand.fingertip, &anchor, ctx.part.part_scale())
                > ctx.params.release_distance;
        if !matches || too_far {
            release(&mut s, ctx, hand.t, &mut events);
        } else {
            let before = s.q;
            follow(&mut s, ctx, hand, dt);
            moved_event(before, &s, ctx, hand.t, &mut events);
        }
    } else if matches && s.hand_inside {
        acquire(&mut s, ctx, hand, &mut events);
    }
    Step { state: s, events }
}

/// Contact-based manipulation: acquired on trigger entry, released on exit.
pub fn step_cm(state: &InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) -> Step {
    debug_assert!(dt > 0.0);
    let mut s = state.clone();
    let mut events = Vec::new();
    let inside = hand.tracked && ctx.inside_at(&hand.fingertip, s.q);
    if hand.tracked {
        s.hand_inside = inside;
    }

    if s.acquired {
        if !inside {
            release(&mut s, ctx, hand.t, &mut events);
        } else {
            let before = s.q;
            follow(&mut s, ctx, hand, dt);
            moved_event(before, &s, ctx, hand.t, &mut events);
        }
    } else if inside {
        acquire(&mut s, ctx, hand, &mut events);
    }
    Step { state: s, events }
}

// ---------------------------------------------------------------------------
// GA / CA
// ---------------------------------------------------------------------------

/// Where a new animation should end, or `None` when the trigger is a no-op.
fn animation_target(c: &MotionConstraint, q: f64, params: &CustomizationParams) -> Option<f64> {
    match c.range() {
        None => Some(q + params.step_angle),
        Some((lo, hi)) => match params.animation_mode {
            AnimationMode::Single => ((hi - q).abs() > 1e-9).then_some(hi),
            AnimationMode::Loop => Some(if q - lo <= hi - q { hi } else { lo }),
        },
    }
}

fn advance_animation(s: &mut InteractionState, ctx: &PartContext<'_>, t: f64, dt: f64) {
    if let Some(anim) = s.animating {
        let before = s.q;
        let frac = ((t - anim.start_t) / ctx.params.animation_duration).clamp(0.0, 1.0);
        s.q = ctx
            .constraint()
            .clamp(anim.start_q + (anim.target_q - anim.start_q) * frac);
        s.q_dot = (s.q - before) / dt;
        if frac >= 1.0 {
            s.animating = None;
            s.q_dot = 0.0;
        }
    }
}

fn try_trigger(s: &mut InteractionState, ctx: &PartContext<'_>, t: f64, events: &mut Vec<InteractionEvent>) {
    if s.animating.is_some() {
        return;
    }
    if let Some(target_q) = animation_target(ctx.constraint(), s.q, ctx.params) {
        s.animating = Some(Animation {
            start_q: s.q,
            target_q,
            start_t: t,
        });
        events.push(ctx.event(t, EventKind::AnimationTriggered, s.q));
    }
}

/// Gesture-based animation: one animation per rising edge of an allowed
/// gesture performed inside the trigger region.
pub fn step_ga(state: &InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) -> Step {
    debug_assert!(dt > 0.0);
    let mut s = state.clone();
    let mut events = Vec::new();
    let before = s.q;
    advance_animation(&mut s, ctx, hand.t, dt);
    moved_event(before, &s, ctx, hand.t, &mut events);

    if hand.tracked {
        let inside = ctx.inside_at(&hand.fingertip, 0.0);
        let matches = gesture_matches(hand.gesture, ctx.params);
        let rising = matches && !s.gesture_held;
        s.gesture_held = matches;
        s.hand_inside = inside;
        if rising && inside {
            try_trigger(&mut s, ctx, hand.t, &mut events);
        }
    }
    Step { state: s, events }
}

/// Contact-based animation: one animation per outside-to-inside transition.
pub fn step_ca(state: &InteractionState, ctx: &PartContext<'_>, hand: &HandSample, dt: f64) -> Step {
    debug_assert!(dt > 0.0);
    let mut s = state.clone();
    let mut events = Vec::new();
    let before = s.q;
    advance_animation(&mut s, ctx, hand.t, dt);
    moved_event(before, &s, ctx, hand.t, &mut events);

    if hand.tracked {
        let inside = ctx.inside_at(&hand.fingertip, 0.0);
        let entered = inside && !s.hand_inside;
        s.hand_inside = inside;
        if entered {
            try_trigger(&mut s, ctx, hand.t, &mut events);
        }
    }
    Step { state: s, events }
}
