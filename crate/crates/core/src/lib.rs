//! State estimation for parametric elliptic problems from finitely many
//! linear measurements: one-space recovery, optimal affine recovery maps,
//! weak-greedy reduced bases, piecewise-affine estimators, residual-based
//! parameter estimation and brute-force benchmark oracles.

pub mod affine_map;
pub mod boxqp;
pub mod error;
pub mod greedy;
pub mod inverse;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod minimax;
pub mod model;
pub mod oracle;
pub mod piecewise;
pub mod onespace;
pub mod sensing;
pub mod space;

pub use error::{PbdwError, Result};
pub use model::{CoeffProfile, ModelConfig, ParametricModel, Residual};
pub use sensing::{MeasurementSystem, NoiseSpace, NoiseSpec, Observation, SensorKind, SensorSpec};
pub use space::DiscreteSpace;
