//! Entropic solves and the δ-approximation pipeline for TOT:
//! scale `exp(−λC)`, stop at ε, round into `U(P)`, certify.

use serde::Serialize;

use crate::error::{Result, TotError};
use crate::rounding::round_to_polytope;
use crate::scaling::{sinkhorn_scale_log, SinkhornConfig, SinkhornResult, SinkhornTrace};
use crate::tensor::{MarginalFamily, Tensor};

#[derive(Debug, Clone)]
pub struct EntropicSolution {
    /// The stopped scaling iterate, a probability tensor close to `U(P)`.
    pub plan: Tensor,
    /// `⟨C,U⟩ − H(U)/λ`.
    pub f_lambda: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub scaling: SinkhornResult,
}

/// Run greedy Sinkhorn on `exp(−λC)` and evaluate the entropic objective.
///
/// The kernel is handled through its logarithm `−λ(C − min C)`, so large
/// `λ·(max C − min C)` does not underflow it to zero.
pub fn entropic_tot(
    c: &Tensor,
    p: &MarginalFamily,
    lambda: f64,
    epsilon: f64,
    max_iter: Option<usize>,
) -> Result<EntropicSolution> {
    p.require_shape(c)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(TotError::Argument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let shift = c.min();
    let log_kernel = c.map(|x| -lambda * (x - shift));
    let mut cfg = SinkhornConfig::new(epsilon)?;
    cfg.max_iter = max_iter;
    let scaling = sinkhorn_scale_log(&log_kernel, p, &cfg)?;
    let plan = scaling.tensor.clone();
    let f_lambda = c.inner(&plan)? - plan.entropy()? / lambda;
    Ok(EntropicSolution {
        plan,
        f_lambda,
        lambda,
        epsilon,
        scaling,
    })
}

/// `(f_λ, f_λ + d·log n/λ)`.
pub fn entropic_bracket(f_lambda: f64, lambda: f64, side: usize, order: usize) -> (f64, f64) {
    (
        f_lambda,
        f_lambda + order as f64 * (side as f64).ln() / lambda,
    )
}

/// Overrides for the default parameter policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxOptions {
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TotCertificate {
    /// `⟨C,B⟩` for the returned feasible plan.
    pub value: f64,
    pub bracket: [f64; 2],
    pub delta: f64,
    pub lambda: Option<f64>,
    pub epsilon: Option<f64>,
    pub k_stop: usize,
    /// `‖B − F‖_1`.
    pub movement_l1: f64,
    /// `⟨C,F⟩ − H(F)/λ` at the stopped iterate `F`.
    pub entropic_value: f64,
    /// `d·log n/λ + 8d‖C − μ‖_∞ ε`, the guaranteed gap above the optimum.
    pub error_budget: f64,
    /// `min C`.
    pub shift: f64,
    /// `max C − min C`.
    pub spread: f64,
}

/// λ and ε chosen so that the error budget is at most `δ`.
pub fn default_parameters(order: usize, side: usize, delta: f64, spread: f64) -> (f64, f64) {
    let d = order as f64;
    let lambda = 2.0 * d * (side as f64).ln() / delta;
    let epsilon = (0.25f64).min(delta / (16.0 * d * spread));
    (lambda, epsilon)
}

/// δ-approximate TOT with the default parameter policy.
pub fn approx_tot(c: &Tensor, p: &MarginalFamily, delta: f64) -> Result<(Tensor, TotCertificate)> {
    approx_tot_with(c, p, delta, &ApproxOptions::default())
}

pub fn approx_tot_with(
    c: &Tensor,
    p: &MarginalFamily,
    delta: f64,
    opts: &ApproxOptions,
) -> Result<(Tensor, TotCertificate)> {
    let out = approx_tot_detailed(c, p, delta, opts)?;
    Ok((out.plan, out.certificate))
}

/// Plan, certificate and the scaling trace (absent on the constant-cost path).
#[derive(Debug, Clone)]
pub struct ApproxOutcome {
    pub plan: Tensor,
    pub certificate: TotCertificate,
    pub trace: Option<SinkhornTrace>,
}

pub fn approx_tot_detailed(
    c: &Tensor,
    p: &MarginalFamily,
    delta: f64,
    opts: &ApproxOptions,
) -> Result<ApproxOutcome> {
    p.require_shape(c)?;
    p.require_probability("approx_tot")?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(TotError::Argument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let (d, n) = (c.order(), c.side());
    let shift = c.min();
    let spread = c.max() - shift;

    if spread == 0.0 {
        return Ok(ApproxOutcome {
            plan: p.product_plan(),
            certificate: TotCertificate {
                value: shift,
                entropic_value: shift,
                bracket: [shift, shift],
                delta,
                lambda: None,
                epsilon: None,
                k_stop: 0,
                movement_l1: 0.0,
                error_budget: 0.0,
                shift,
                spread,
            },
            trace: None,
        });
    }

    let (def_lambda, def_eps) = default_parameters(d, n, delta, spread);
    let lambda = opts.lambda.unwrap_or(def_lambda);
    let epsilon = opts.epsilon.unwrap_or(def_eps);
    let shifted = c.map(|x| x - shift);
    let sol = entropic_tot(&shifted, p, lambda, epsilon, opts.max_iter)?;
    let plan = round_to_polytope(&sol.plan, p)?;
    let movement_l1 = plan.l1_distance(&sol.plan)?;
    let f = sol.f_lambda + shift;
    let bracket = entropic_bracket(f, lambda, n, d);
    let error_budget = d as f64 * (n as f64).ln() / lambda + 8.0 * d as f64 * spread * epsilon;
    Ok(ApproxOutcome {
        certificate: TotCertificate {
            value: c.inner(&plan)?,
            entropic_value: f,
            bracket: [bracket.0, bracket.1],
            delta,
            lambda: Some(lambda),
            epsilon: Some(epsilon),
            k_stop: sol.scaling.trace.k_stop.unwrap_or(0),
            movement_l1,
            error_budget,
            shift,
            spread,
        },
        plan,
        trace: Some(sol.scaling.trace),
    })
}
