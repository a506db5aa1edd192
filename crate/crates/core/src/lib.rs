//! Truncated KAM machinery for the derivative nonlinear Schrödinger equation
//! with a convolution potential.

pub mod config;
pub mod fourier;
pub mod hamiltonian;
pub mod homological;
pub mod kam;
pub mod dnls;
pub mod measure;
pub mod structure;

pub use config::{ConfigError, RunConfig, Tolerances};
pub use fourier::{AnalyticityWindow, FourierError, ModeIndex, TangentSet, TorusFourier, C64};
pub use hamiltonian::{Channel, HamiltonianError, HamiltonianPoly, Monomial, NormalForm, RBlocks, VfNorm};
pub use measure::{MeasureError, ParameterPoint};
