//! Diagram calculus for the second-order expansion of the drift.
//!
//! Terms are products of typed edges over labelled vertices; evaluation
//! contracts them numerically against a dense context. The expansion
//! identities hold pathwise, for any Hermitian H.

pub mod checks;
pub mod eval;
pub mod library;
pub mod term;

pub use checks::{
    derivative_fd_check, diagram_magnitudes, expand1_check, level2_check, loop_expansion_check, random_context,
    renormalize_expectation_check, vertex_expansion_check, zero_context, FSpec, IdentityResidual, MagnitudeRow,
    MeanEstimate,
};
pub use eval::{brute_force, evaluate_diagram, evaluate_matrix, evaluate_sum, EvalContext};
pub use term::{derivative, renormalize, Coeff, Factor, Label, Term};
