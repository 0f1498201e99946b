//! Greedy Sinkhorn tensor scaling.
//!
//! Each step rescales the single mode whose marginal is furthest (in ℓ1,
//! after removing the component along `p_j`) from its target. The positive
//! variant requires a strictly positive input; the support variant accepts
//! zeros and measures residuals inside the subspaces `V_j` of
//! [`crate::subspace`].

use std::io::Write;

use serde::Serialize;

use crate::error::{Result, TotError};
use crate::subspace::{support_subspaces, SubspaceBases};
use crate::tensor::{dot, ksum, l1_distance, MarginalFamily, ScalingVectors, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Positive,
    NonnegativeSupport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Safety cap on scaling steps. `None` means four times the iteration bound.
    pub max_iter: Option<usize>,
    pub variant: Variant,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            max_iter: None,
            variant: Variant::Positive,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon < 0.5 {
            Ok(())
        } else {
            Err(TotError::Argument(format!(
                "epsilon must lie in (0, 1/2), got {}",
                self.epsilon
            )))
        }
    }
}

/// State before step `k` and the step taken from it.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Mode rescaled at this step (0-based).
    pub mode: usize,
    /// Largest variant residual over modes, ℓ1.
    pub residual_l1: f64,
    /// ℓ2 norm of the plain projected residual of the chosen mode.
    pub residual_l2: f64,
    /// `max_j ‖s_j(A_k) − p_j‖_1`.
    pub marginal_l1: f64,
    /// `KL(p_ℓ ‖ s_ℓ(A_k))`.
    pub kl: f64,
    /// `g_{A_0}(X^(k))`.
    pub g_value: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
struct FinalRecord {
    k_stop: Option<usize>,
    bound: f64,
    eta: f64,
    mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornTrace {
    pub records: Vec<IterationRecord>,
    /// Number of steps taken before the stopping rule held; `None` if the cap was hit.
    pub k_stop: Option<usize>,
    /// `2(√n+1)²/ε² · log(‖A‖_1/η)`.
    pub bound: f64,
    /// Smallest positive entry of the input.
    pub eta: f64,
    /// `‖A‖_1` of the input.
    pub mass: f64,
    pub final_residual_l1: f64,
    pub final_marginal_l1: f64,
    pub final_g_value: f64,
}

impl SinkhornTrace {
    /// The `g` sequence including the terminal value.
    pub fn g_values(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.records.iter().map(|r| r.g_value).collect();
        g.push(self.final_g_value);
        g
    }

    /// Largest marginal ℓ1 error at each visited state, terminal state included.
    pub fn marginal_errors(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.records.iter().map(|r| r.marginal_l1).collect();
        m.push(self.final_marginal_l1);
        m
    }

    /// Write one JSON object per step followed by a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        let fin = FinalRecord {
            k_stop: self.k_stop,
            bound: self.bound,
            eta: self.eta,
            mass: self.mass,
        };
        serde_json::to_writer(&mut w, &fin)?;
        w.write_all(b"\n")
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// The stopped iterate `A_{k_stop}`.
    pub tensor: Tensor,
    /// Exponents with `apply_scaling(A/‖A‖_1, X) = A_{k_stop}`.
    pub scaling: ScalingVectors,
    pub trace: SinkhornTrace,
}

/// `x_j(A) = log p − log s_j(A)`.
pub fn log_marginal_fit(a: &Tensor, p: &[f64], mode: usize) -> Result<Vec<f64>> {
    let s = a.marginal(mode)?;
    fit_from_marginal(&s, p, mode)
}

fn fit_from_marginal(s: &[f64], p: &[f64], mode: usize) -> Result<Vec<f64>> {
    if s.len() != p.len() {
        return Err(TotError::Shape(format!(
            "target has length {}, marginal has length {}",
            p.len(),
            s.len()
        )));
    }
    if p.iter().any(|&x| !(x > 0.0)) {
        return Err(TotError::Argument(
            "target must be strictly positive".into(),
        ));
    }
    s.iter()
        .zip(p)
        .enumerate()
        .map(|(i, (&si, &pi))| {
            if si > 0.0 {
                Ok(pi.ln() - si.ln())
            } else {
                Err(TotError::DegenerateSlice { mode, index: i })
            }
        })
        .collect()
}

/// `s − (⟨s,p⟩/‖p‖²) p`.
pub fn project_out(s: &[f64], p: &[f64]) -> Vec<f64> {
    let c = dot(s, p) / dot(p, p);
    s.iter().zip(p).map(|(x, y)| x - c * y).collect()
}

/// Residual of `marginal(A, mode)` against the line through `p`, and its ℓ1 norm.
pub fn residual(a: &Tensor, p: &[f64], mode: usize) -> Result<(Vec<f64>, f64)> {
    let s = a.marginal(mode)?;
    if s.len() != p.len() {
        return Err(TotError::Shape("target length differs from side".into()));
    }
    if p.iter().all(|&x| x == 0.0) {
        return Err(TotError::Argument(
            "residual against the zero vector".into(),
        ));
    }
    let r = project_out(&s, p);
    let n = ksum(r.iter().map(|x| x.abs()));
    Ok((r, n))
}

fn l2(v: &[f64]) -> f64 {
    ksum(v.iter().map(|x| x * x)).sqrt()
}

/// First index of the maximum.
fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn mode_residuals(
    marginals: &[Vec<f64>],
    p: &MarginalFamily,
    bases: Option<&SubspaceBases>,
) -> (Vec<f64>, Vec<f64>) {
    let mut l1s = Vec::with_capacity(marginals.len());
    let mut l2s = Vec::with_capacity(marginals.len());
    for (j, s) in marginals.iter().enumerate() {
        let r = project_out(s, p.get(j));
        l2s.push(l2(&r));
        l1s.push(match bases {
            None => ksum(r.iter().map(|x| x.abs())),
            Some(b) => b.mode_residual_l1(j, s),
        });
    }
    (l1s, l2s)
}

/// Mode with the largest residual; ties go to the smallest index.
pub fn select_mode(a: &Tensor, p: &MarginalFamily, bases: Option<&SubspaceBases>) -> Result<usize> {
    p.require_shape(a)?;
    let (l1s, _) = mode_residuals(&a.marginals(), p, bases);
    Ok(argmax_first(&l1s))
}

/// `KL(p ‖ q) = Σ p log(p/q)`, `+∞` when `q` vanishes where `p` does not.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = crate::tensor::KahanSum::new();
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if !(qi > 0.0) {
                return f64::INFINITY;
            }
            acc.add(pi * (pi.ln() - qi.ln()));
        }
    }
    acc.value()
}

/// The iteration bound `2(√n+1)²/ε² · log(mass/η)`.
pub fn iteration_bound(side: usize, epsilon: f64, mass: f64, eta: f64) -> f64 {
    let r = (side as f64).sqrt() + 1.0;
    2.0 * r * r / (epsilon * epsilon) * (mass / eta).ln()
}

/// Default step cap: four times the bound, and never below a hundred steps.
pub fn default_max_iter(bound: f64) -> usize {
    let b = (4.0 * bound.ceil()).min(1e12) as usize;
    b.max(100)
}

/// Run greedy Sinkhorn on `a` toward the probability marginals `p`.
pub fn sinkhorn_scale(
    a: &Tensor,
    p: &MarginalFamily,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    p.require_shape(a)?;
    p.require_probability("sinkhorn_scale")?;
    let bases = match cfg.variant {
        Variant::Positive => {
            if !a.is_strictly_positive() {
                return Err(TotError::contract(
                    "sinkhorn_scale",
                    "the positive variant needs a strictly positive tensor",
                ));
            }
            None
        }
        Variant::NonnegativeSupport => {
            if !a.is_nonnegative() {
                return Err(TotError::contract(
                    "sinkhorn_scale",
                    "the support variant needs a nonnegative tensor",
                ));
            }
            Some(support_subspaces(a, p)?)
        }
    };
    let mass = a.l1_norm();
    let eta = a
        .min_positive()
        .ok_or_else(|| TotError::contract("sinkhorn_scale", "tensor has no positive entry"))?;
    let bound = iteration_bound(a.side(), cfg.epsilon, mass, eta);
    let start = Start {
        base: Base::Linear(a.scaled(1.0 / mass)),
        bound,
        eta,
        mass,
    };
    run(start, p, cfg, bases.as_ref())
}

/// Positive-variant scaling of `exp(log_a)`, given entrywise logarithms.
///
/// The iterates are built from `log_a + Σ_j x_j` and every update uses
/// log-sum-exp marginals, so inputs whose exponentials underflow (entropic
/// kernels with a large `λ·spread`) are handled. Entries of the returned
/// tensor may still round to zero; the scaling vectors stay exact.
pub fn sinkhorn_scale_log(
    log_a: &Tensor,
    p: &MarginalFamily,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    p.require_shape(log_a)?;
    p.require_probability("sinkhorn_scale")?;
    if cfg.variant != Variant::Positive {
        return Err(TotError::contract(
            "sinkhorn_scale",
            "log-domain input supports only the positive variant",
        ));
    }
    if log_a.data().iter().any(|v| !v.is_finite()) {
        return Err(TotError::contract(
            "sinkhorn_scale",
            "the positive variant needs finite log-entries",
        ));
    }
    let log_mass = log_a.log_sum_exp();
    let log_eta = log_a.min();
    let r = (log_a.side() as f64).sqrt() + 1.0;
    let bound = 2.0 * r * r / (cfg.epsilon * cfg.epsilon) * (log_mass - log_eta);
    let start = Start {
        base: Base::Log(log_a.map(|v| v - log_mass)),
        bound,
        eta: log_eta.exp(),
        mass: log_mass.exp(),
    };
    run(start, p, cfg, None)
}

/// Normalized starting point, linear or as log-entries.
enum Base {
    Linear(Tensor),
    Log(Tensor),
}

struct Start {
    base: Base,
    bound: f64,
    eta: f64,
    mass: f64,
}

fn run(
    start: Start,
    p: &MarginalFamily,
    cfg: &SinkhornConfig,
    bases: Option<&SubspaceBases>,
) -> Result<SinkhornResult> {
    let Start {
        base,
        bound,
        eta,
        mass,
    } = start;
    let max_iter = cfg.max_iter.unwrap_or_else(|| default_max_iter(bound));
    let (order, side) = match &base {
        Base::Linear(t) | Base::Log(t) => (t.order(), t.side()),
    };
    let mut x = ScalingVectors::zeros(order, side);
    let mut lk = match &base {
        Base::Log(l0) => Some(l0.clone()),
        Base::Linear(_) => None,
    };
    let mut ak = match &base {
        Base::Linear(a0) => a0.clone(),
        Base::Log(l0) => l0.map(f64::exp),
    };
    let mut records = Vec::new();

    loop {
        let k = records.len();
        let marginals = ak.marginals();
        let (l1s, l2s) = mode_residuals(&marginals, p, bases);
        let mode = argmax_first(&l1s);
        let rmax = l1s[mode];
        let marginal_l1 = marginals
            .iter()
            .enumerate()
            .map(|(j, s)| l1_distance(s, p.get(j)))
            .fold(0.0, f64::max);
        let linear = ksum((0..order).map(|j| dot(p.get(j), x.get(j))));
        let g_value = ak.l1_norm() - linear;

        let stop = rmax < cfg.epsilon;
        if stop || k >= max_iter {
            let trace = SinkhornTrace {
                records,
                k_stop: stop.then_some(k),
                bound,
                eta,
                mass,
                final_residual_l1: rmax,
                final_marginal_l1: marginal_l1,
                final_g_value: g_value,
            };
            if stop {
                return Ok(SinkhornResult {
                    tensor: ak,
                    scaling: x,
                    trace,
                });
            }
            return Err(TotError::NonConvergence {
                max_iter,
                last_residual: rmax,
                trace: Box::new(trace),
            });
        }

        let target = p.get(mode);
        let (delta, kl) = match &lk {
            None => {
                let s = &marginals[mode];
                (
                    fit_from_marginal(s, target, mode)?,
                    kl_divergence(target, s),
                )
            }
            Some(l) => {
                let log_s = &l.log_marginals_of_exp()[mode];
                let delta: Vec<f64> = target
                    .iter()
                    .zip(log_s)
                    .map(|(q, ls)| q.ln() - ls)
                    .collect();
                let kl = ksum(target.iter().zip(&delta).map(|(q, e)| q * e));
                (delta, kl)
            }
        };
        x.add_to_mode(mode, &delta);
        match &base {
            Base::Linear(a0) => ak = a0.apply_scaling(&x)?,
            Base::Log(l0) => {
                let l = l0.shift_log(&x)?;
                ak = l.map(f64::exp);
                lk = Some(l);
            }
        }
        records.push(IterationRecord {
            k,
            mode,
            residual_l1: rmax,
            residual_l2: l2s[mode],
            marginal_l1,
            kl,
            g_value,
        });
    }
}
