//! Inverse problems over probability measures.
//!
//! Given a forward map `G: Θ ⊆ ℝᵐ → ℝⁿ` and a data measure `ρy`, the solvers in
//! this crate compute a parameter measure `ρx*` whose pushforward `G#ρx*` best
//! explains `ρy` under one of six formulations:
//!
//! | regime          | criterion                          | solver                                   |
//! |-----------------|------------------------------------|------------------------------------------|
//! | overdetermined  | φ-divergence matching              | [`solvers::conditional_reconstruction`]  |
//! | overdetermined  | Wasserstein matching               | [`solvers::marginal_reconstruction`]     |
//! | underdetermined | entropy minimization               | [`solvers::entropy_solution`]            |
//! | underdetermined | second-moment minimization         | [`solvers::moment_solution`]             |
//! | regularized     | KL data fit + KL to a prior        | [`solvers::reg_entropy_solution`]        |
//! | regularized     | `Wpᵖ` data fit + `p`-th moment     | [`solvers::reg_wp_solution`]             |
//!
//! Measures come in two flavours: weighted point clouds ([`ParticleMeasure`]) and
//! densities on regular grids ([`GridMeasure`]). Independent brute-force checks
//! live in [`oracles`]; the worked examples are packaged in [`fixtures`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod divergences;
pub mod error;
pub mod fixtures;
pub mod maps;
pub mod measures;
pub mod oracles;
pub mod solvers;
pub mod transport;

pub use divergences::PhiKind;
pub use error::{Error, Result};
pub use maps::{ForwardMap, MapKind};
pub use measures::{Ball, Bounds, Domain, Grid, GridMeasure, Measure, ParticleMeasure};
pub use solvers::{Formulation, RegularizationConfig, SearchConfig, SolveReport};
pub use transport::{OtMethod, TransportPlan};
