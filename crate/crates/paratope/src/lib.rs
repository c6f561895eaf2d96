//! Contact-first antibody CDR design.
//!
//! The pipeline ingests antibody-antigen complexes, builds a heterogeneous
//! residue graph, encodes it with an E(3)-equivariant message-passing network,
//! predicts CDR-antigen contacts, and designs the CDR sequence with
//! contact-gated antigen feature injection. Training combines seven loss
//! terms; evaluation covers sequence, structure, and interface quality.
//!
//! The numeric core is generic over the scalar type: f32 for training speed,
//! f64 for verification. Concrete aliases live at the crate root.

pub mod diff;
pub mod geom;
pub mod graph;
pub mod config;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod selfcheck;
pub mod structure;
pub mod trainer;

pub use geom::Vec3d;
pub use model::{Model, ModelConfig};

/// Concrete model aliases: f32 for training speed, f64 for verification.
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub use scalar::Scalar;
