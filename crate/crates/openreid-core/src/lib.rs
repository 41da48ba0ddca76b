//! Open-set face identity resolution over streaming descriptor observations.
//!
//! The pipeline: grayscale face crops (or precomputed descriptors) arrive
//! frame by frame, grouped by detector track. Tracks younger than an
//! admission age are suppressed as probable ghosts. Admitted probes are
//! matched against a bounded run-time gallery that starts empty; a probe
//! either joins the identity with enough close stored descriptors, or is
//! treated as novel and (depending on admission policy) opens a new
//! identity. Runs are scored by consistency: each true face is paired with
//! the identity label it received most often.

pub mod baselines;
pub mod config;
pub mod descriptor;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod gallery;
pub mod image;
pub mod matcher;
pub mod simgen;
pub mod stream;
pub mod track;
pub mod types;

pub use config::EngineConfig;
pub use descriptor::Descriptor;
pub use engine::Engine;
pub use eval::{CcmBuilder, ConsistencyConfusionMatrix};
pub use gallery::Gallery;
pub use matcher::{Assignment, AssignmentOutcome, MatchConfig};
pub use simgen::SimConfig;
pub use types::{FrameBatch, IdentityId, Observation};
