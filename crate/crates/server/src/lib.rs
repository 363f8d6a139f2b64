//! Project service for the HOI authoring workflow: a JSON file store, the
//! intent → selection → customization → mapping steps, and an HTTP API.

pub mod api;
pub mod error;
pub mod project;
pub mod service;
pub mod store;

pub use error::{ErrorBody, ServiceError};
pub use project::{Project, SelectionRequest, StoredCustomization, WorkflowStep};
pub use service::{Service, SimulateRequest, SimulationResult};
