//! Headless engine for authoring hand-object interactions (HOI) on articulated parts.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parts, 1-DoF motion constraints, hand samples and box geometry.
//! - [`interaction`]: the five interaction designs (PM, GM, GA, CM, CA) as pure step functions.
//! - [`simulate`]: scripted sessions and the efficiency metrics computed from them.
//! - [`empirical`]: the 13-part dataset, published tier tables and round-robin ranking.
//! - [`stats`]: Friedman / Kendall's W, Wilcoxon signed-rank, Benjamini-Hochberg, tier derivation.
//! - [`llm`]: prompt assets, output validation, live and mock completion backends.
//! - [`recommend`]: metric selection, part matching and design mapping.

pub mod empirical;
pub mod interaction;
pub mod llm;
pub mod model;
pub mod recommend;
pub mod simulate;
pub mod stats;
mod text;

pub use interaction::{CustomizationParams, HoiDesign, InteractionEvent, InteractionState};
pub use model::{Gesture, HandSample, MotionConstraint, PartSpec, SceneObject};
