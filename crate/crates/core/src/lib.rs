//! Numerical laboratory for Gaussian random band matrices on the discrete torus:
//! circulant variance profiles, resolvent flows, the diffusion profile and
//! the diagrammatic expansion identities behind quantum diffusion.

pub mod bounds;
pub mod diagrams;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod linalg;
pub mod resolvent;
pub mod semicircle;
pub mod torus;

pub use ensemble::{sample_band_matrix, BandSample, BrownianFlow};
pub use error::{Error, Result};
pub use linalg::{CMat, RMat, C64};
pub use resolvent::ResolventBundle;
pub use semicircle::SpectralPoint;
pub use torus::{CirculantOperator, ComplexCirculant, ProfileSpec, Shape};
