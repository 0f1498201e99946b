//! Multi-marginal discrete optimal transport on dense tensors.
//!
//! The crate solves `min ⟨C,U⟩` over the transport polytope `U(P)` of
//! `d`-mode tensors with prescribed one-mode marginals, by greedy Sinkhorn
//! scaling of `exp(−λC)` followed by rounding into `U(P)`, and checks the
//! result against an exact dense simplex oracle. It also provides
//! set-of-measures distances built from (bi)symmetric cost tensors and the
//! partial-minimization machinery that explains the scaling rate.
//!
//! Modes are numbered from 0.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod lp;
pub mod pm;
pub mod rounding;
pub mod scaling;
pub mod set_distance;
pub mod subspace;
pub mod tensor;
pub mod tot;

pub use error::{Result, TotError};
pub use lp::{scalability_check, solve_exact_tot, ExactTot, LpOptions, PivotRule};
pub use rounding::{rank_one_correction, round_to_polytope, shrink_to_submarginals};
pub use scaling::{
    kl_divergence, sinkhorn_scale, sinkhorn_scale_log, SinkhornConfig, SinkhornResult,
    SinkhornTrace, Variant,
};
pub use set_distance::{
    glue, lift_ground_metric, pair_distance, set_distance, validate_cost, LiftMode, Solver,
};
pub use subspace::{support_subspaces, SubspaceBases};
pub use tensor::{MarginalFamily, ScalingVectors, Tensor};
pub use tot::{
    approx_tot, approx_tot_detailed, approx_tot_with, entropic_bracket, entropic_tot,
    ApproxOptions, ApproxOutcome, TotCertificate,
};
