//! Partial minimization (PM): exact minimization over one block subspace per
//! step, the block chosen by the largest projected gradient in the `s`-norm.
//!
//! Also hosts the scaling potential
//! `g_A(Y) = Σ a_i exp(Σ_j y_{i_j,j}) − Σ_j ⟨p_j, y_j⟩`, its gradient and
//! curvature estimates, the linear-rate bound check, and the projection/KL
//! estimates relating the Sinkhorn residual to the KL decrease.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Result, TotError};
use crate::scaling::{kl_divergence, project_out};
use crate::subspace::{column_space, pattern_matrix, singular_values, SubspaceBases};
use crate::tensor::{dot, ksum, l1_distance, MarginalFamily, ScalingVectors, Tensor};

/// Relative increase of `f` tolerated before a step counts as non-decreasing.
pub const DESCENT_SLACK: f64 = 1e-12;

fn scaling_from(a: &Tensor, y: &DVector<f64>) -> Result<ScalingVectors> {
    ScalingVectors::from_flat(a.order(), a.side(), y.as_slice())
}

/// `g_A(Y) = ‖A(Y)‖_1 − Σ_j ⟨p_j, y_j⟩`.
pub fn g_value(a: &Tensor, p: &MarginalFamily, y: &ScalingVectors) -> Result<f64> {
    p.require_shape(a)?;
    let ay = a.apply_scaling(y)?;
    Ok(ay.l1_norm() - ksum((0..a.order()).map(|j| dot(p.get(j), y.get(j)))))
}

/// Block `j` of `∇g_A(Y)` is `s_j(A(Y)) − p_j`.
pub fn g_gradient(a: &Tensor, p: &MarginalFamily, y: &ScalingVectors) -> Result<ScalingVectors> {
    p.require_shape(a)?;
    let ay = a.apply_scaling(y)?;
    ScalingVectors::new(
        ay.marginals()
            .into_iter()
            .enumerate()
            .map(|(j, s)| s.iter().zip(p.get(j)).map(|(x, q)| x - q).collect())
            .collect(),
    )
}

/// `(min, max)` of `a_i · exp(Σ_j y_{i_j,j})` over the support of `A`.
pub fn hessian_bounds(a: &Tensor, y: &ScalingVectors) -> Result<(f64, f64)> {
    if a.min_positive().is_none() {
        return Err(TotError::Argument("tensor has empty support".into()));
    }
    let ay = a.apply_scaling(y)?;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (&v, &orig) in ay.data().iter().zip(a.data()) {
        if orig > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}

/// Hessian of `g_A` at `Y` in ambient block coordinates:
/// entry `((j,a),(k,b))` is the mass of `A(Y)` on cells with `i_j = a`, `i_k = b`.
pub fn ambient_hessian(a: &Tensor, y: &ScalingVectors) -> Result<DMatrix<f64>> {
    let ay = a.apply_scaling(y)?;
    let (d, n) = (a.order(), a.side());
    let mut h = DMatrix::zeros(d * n, d * n);
    for (lin, &v) in ay.data().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let idx = ay.multi_index(lin);
        for j in 0..d {
            for k in 0..d {
                h[(j * n + idx[j], k * n + idx[k])] += v;
            }
        }
    }
    Ok(h)
}

/// Hessian of `g_A` restricted to the complement subspace `C`, in its orthonormal basis.
pub fn restricted_hessian(
    a: &Tensor,
    y: &ScalingVectors,
    bases: &SubspaceBases,
) -> Result<DMatrix<f64>> {
    let h = ambient_hessian(a, y)?;
    Ok(bases.complement.transpose() * h * &bases.complement)
}

/// Extreme squared singular values of the support pattern matrix times the `C` basis.
///
/// The restricted Hessian is `(MC)ᵀ diag(A(Y)|_supp) (MC)`, so its spectrum lies
/// in `[α(Y)·σ_min², β(Y)·σ_max²]`.
pub fn pattern_gain(a: &Tensor, bases: &SubspaceBases) -> (f64, f64) {
    let mc = pattern_matrix(a) * &bases.complement;
    let s = singular_values(&mc);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) => (lo * lo, hi * hi),
        _ => (0.0, 0.0),
    }
}

/// Interval containing every eigenvalue of [`restricted_hessian`] at `Y`.
pub fn hessian_eigen_interval(
    a: &Tensor,
    y: &ScalingVectors,
    bases: &SubspaceBases,
) -> Result<(f64, f64)> {
    let (alpha, beta) = hessian_bounds(a, y)?;
    let (glo, ghi) = pattern_gain(a, bases);
    Ok((alpha * glo, beta * ghi))
}

type Objective<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + 'a>;
type Gradient<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>;
type HessianFn<'a> = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + 'a>;
/// Given `x` and a block index, return the step `v ∈ V_j` minimizing `f(x + v)`.
pub type BlockMinimizer<'a> = Box<dyn Fn(&DVector<f64>, usize) -> Result<DVector<f64>> + 'a>;

pub struct PmProblem<'a> {
    pub f: Objective<'a>,
    pub grad: Gradient<'a>,
    /// Orthonormal basis of each block subspace, as ambient columns.
    pub blocks: Vec<DMatrix<f64>>,
    /// Norm used for block selection, in `[1, 2]`.
    pub s: f64,
    pub x0: DVector<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Exact block minimizer; the safeguarded Newton fallback is used when absent.
    pub inner: Option<BlockMinimizer<'a>>,
    /// Ambient Hessian for the fallback; finite differences of the gradient otherwise.
    pub hessian: Option<HessianFn<'a>>,
}

impl<'a> PmProblem<'a> {
    pub fn new(
        f: impl Fn(&DVector<f64>) -> f64 + 'a,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + 'a,
        blocks: Vec<DMatrix<f64>>,
        x0: DVector<f64>,
    ) -> Self {
        Self {
            f: Box::new(f),
            grad: Box::new(grad),
            blocks,
            s: 1.0,
            x0,
            tol: 1e-10,
            max_iter: 10_000,
            inner: None,
            hessian: None,
        }
    }

    fn block_gradient(&self, g: &DVector<f64>, j: usize) -> DVector<f64> {
        let q = &self.blocks[j];
        q * (q.transpose() * g)
    }

    /// `(‖∇f‖², Σ_j ‖∇_j f‖²)` with `∇f` projected onto the span of the blocks.
    pub fn gradient_compatibility(&self, x: &DVector<f64>) -> (f64, f64) {
        let g = (self.grad)(x);
        let all = DMatrix::from_columns(
            &self
                .blocks
                .iter()
                .flat_map(|b| b.column_iter().map(|c| c.into_owned()))
                .collect::<Vec<_>>(),
        );
        let span = column_space(&all);
        let proj = &span * (span.transpose() * &g);
        let rhs = (0..self.blocks.len())
            .map(|j| self.block_gradient(&g, j).norm_squared())
            .sum();
        (proj.norm_squared(), rhs)
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PmStep {
    pub k: usize,
    pub block: usize,
    pub f_value: f64,
}

#[derive(Debug, Clone)]
pub struct PmResult {
    pub x: DVector<f64>,
    /// One entry per step taken: the block chosen at `x_k` and `f(x_k)`.
    pub trace: Vec<PmStep>,
    /// `f(x_0), …, f(x_final)`.
    pub f_values: Vec<f64>,
    pub iterates: Vec<DVector<f64>>,
    pub converged: bool,
}

fn s_norm(v: &DVector<f64>, s: f64) -> f64 {
    if s == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if s == 2.0 {
        v.norm()
    } else {
        v.iter().map(|x| x.abs().powf(s)).sum::<f64>().powf(1.0 / s)
    }
}

/// Safeguarded Newton on `z ↦ f(x + Q z)` with Armijo backtracking.
fn newton_block(prob: &PmProblem<'_>, x: &DVector<f64>, j: usize) -> Result<DVector<f64>> {
    let q = &prob.blocks[j];
    let dim = q.ncols();
    let mut z = DVector::zeros(dim);
    let phi = |z: &DVector<f64>| (prob.f)(&(x + q * z));
    let dphi = |z: &DVector<f64>| q.transpose() * (prob.grad)(&(x + q * z));
    let scale = dphi(&z).norm().max(1.0);
    for _ in 0..200 {
        let g = dphi(&z);
        if g.norm() <= 1e-13 * scale {
            return Ok(q * z);
        }
        let h = match &prob.hessian {
            Some(hf) => q.transpose() * hf(&(x + q * &z)) * q,
            None => {
                let eps = 1e-6;
                let mut h = DMatrix::zeros(dim, dim);
                for i in 0..dim {
                    let mut e = DVector::zeros(dim);
                    e[i] = eps;
                    let col = (dphi(&(&z + &e)) - dphi(&(&z - &e))) / (2.0 * eps);
                    h.set_column(i, &col);
                }
                (&h + h.transpose()) * 0.5
            }
        };
        let dir = match h.clone().cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let slope = g.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -g.clone() };
        let slope = g.dot(&dir);
        let f0 = phi(&z);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &z + &dir * t;
            let fc = phi(&cand);
            if fc.is_finite() && fc <= f0 + 1e-4 * t * slope {
                z = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No further decrease available at working precision.
            return Ok(q * z);
        }
    }
    let g = dphi(&z);
    if g.norm() <= 1e-8 * scale {
        Ok(q * z)
    } else {
        Err(TotError::InnerMinimizer {
            step: 0,
            detail: format!("Newton did not converge, block gradient {:e}", g.norm()),
        })
    }
}

/// Run the PM algorithm until the projected gradient norm falls to `tol`.
pub fn pm_minimize(prob: &PmProblem<'_>) -> Result<PmResult> {
    if prob.blocks.is_empty() {
        return Err(TotError::Argument("PM needs at least one block".into()));
    }
    if !(1.0..=2.0).contains(&prob.s) {
        return Err(TotError::Argument(format!(
            "s must lie in [1, 2], got {}",
            prob.s
        )));
    }
    let mut x = prob.x0.clone();
    let mut fx = (prob.f)(&x);
    let mut trace = Vec::new();
    let mut f_values = vec![fx];
    let mut iterates = vec![x.clone()];
    for k in 0..=prob.max_iter {
        let g = (prob.grad)(&x);
        let parts: Vec<DVector<f64>> = (0..prob.blocks.len())
            .map(|j| prob.block_gradient(&g, j))
            .collect();
        let total = parts.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        if total <= prob.tol {
            return Ok(PmResult {
                x,
                trace,
                f_values,
                iterates,
                converged: true,
            });
        }
        if k == prob.max_iter {
            break;
        }
        let norms: Vec<f64> = parts.iter().map(|v| s_norm(v, prob.s)).collect();
        let mut j = 0;
        for (i, &v) in norms.iter().enumerate() {
            if v > norms[j] {
                j = i;
            }
        }
        let step = match &prob.inner {
            Some(inner) => inner(&x, j),
            None => newton_block(prob, &x, j),
        }
        .map_err(|e| match e {
            TotError::InnerMinimizer { detail, .. } => TotError::InnerMinimizer { step: k, detail },
            other => TotError::InnerMinimizer {
                step: k,
                detail: other.to_string(),
            },
        })?;
        let next = &x + step;
        let fnext = (prob.f)(&next);
        if !(fnext <= fx + DESCENT_SLACK * fx.abs().max(1.0)) {
            return Err(TotError::contract(
                "pm_minimize",
                format!("step {k} increased f from {fx} to {fnext}"),
            ));
        }
        trace.push(PmStep {
            k,
            block: j,
            f_value: fx,
        });
        x = next;
        fx = fnext;
        f_values.push(fx);
        iterates.push(x.clone());
    }
    Ok(PmResult {
        x,
        trace,
        f_values,
        iterates,
        converged: false,
    })
}

/// PM problem for `g_A` on `B(P,0)` with blocks `ι_j(L(p_j))`, the closed-form
/// block minimizer and `s = 1`.
pub fn g_problem<'a>(a: &'a Tensor, p: &'a MarginalFamily, bases: &SubspaceBases) -> PmProblem<'a> {
    let (d, n) = (a.order(), a.side());
    let blocks: Vec<DMatrix<f64>> = (0..d)
        .map(|j| {
            let mut e = DMatrix::zeros(d * n, n - 1);
            e.view_mut((j * n, 0), (n, n - 1))
                .copy_from(&bases.block[j]);
            e
        })
        .collect();
    let f = move |y: &DVector<f64>| {
        g_value(a, p, &scaling_from(a, y).expect("finite")).unwrap_or(f64::INFINITY)
    };
    let grad = move |y: &DVector<f64>| {
        let g = g_gradient(a, p, &scaling_from(a, y).expect("finite")).expect("shape checked");
        DVector::from_vec(g.flatten())
    };
    let inner = move |y: &DVector<f64>, j: usize| -> Result<DVector<f64>> {
        let step = g_block_step(a, p, &scaling_from(a, y)?, j)?;
        let mut v = DVector::zeros(d * n);
        for (i, s) in step.into_iter().enumerate() {
            v[j * n + i] = s;
        }
        Ok(v)
    };
    let mut prob = PmProblem::new(f, grad, blocks, DVector::zeros(d * n));
    prob.inner = Some(Box::new(inner));
    prob.hessian = Some(Box::new(move |y: &DVector<f64>| {
        ambient_hessian(a, &scaling_from(a, y).expect("finite")).expect("shape checked")
    }));
    prob
}

/// Exact minimizer of `g_A` over `Y + ι_j(L(p_j))`:
/// `log p − log s_j(Ã) + (−KL(p ‖ s_j(Ã)/‖Ã‖_1) + log ‖Ã‖_1)·1` with `Ã = A(Y)`.
pub fn g_block_step(
    a: &Tensor,
    p: &MarginalFamily,
    y: &ScalingVectors,
    mode: usize,
) -> Result<Vec<f64>> {
    let at = a.apply_scaling(y)?;
    let mass = at.l1_norm();
    let s = at.marginal(mode)?;
    let normalized: Vec<f64> = s.iter().map(|x| x / mass).collect();
    let shift = -kl_divergence(p.get(mode), &normalized) + mass.ln();
    let fit = crate::scaling::log_marginal_fit(&at, p.get(mode), mode)?;
    Ok(fit.into_iter().map(|x| x + shift).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    /// Condition number over the initial sublevel set.
    pub kappa0: f64,
    /// Largest block dimension.
    pub ell: usize,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Bound using `κ(t_0)` for every factor; entry `k−1` bounds `f(x_k) − f*`.
    pub bounds: Vec<f64>,
    /// Bound using the per-iterate pointwise condition numbers.
    pub pointwise_bounds: Vec<f64>,
    /// First `k` with `f(x_k) − f* > bounds[k−1]`: a violation of the theorem.
    pub first_error: Option<usize>,
    /// First `k` violating the stricter pointwise bound: reported as a warning.
    pub first_warning: Option<usize>,
}

/// Absolute slack for floating-point evaluation of `f`, relative to `max(1, |f*|)`.
pub const RATE_SLACK: f64 = 1e-12;

fn rate_factor(blocks: f64, ell_pow: f64, kappa: f64) -> f64 {
    if blocks <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / (blocks * ell_pow * kappa)).max(0.0)
    }
}

/// Check `f(x_k) − f* ≤ (f(x_0) − f*)(1 − 1/(dLκ_0)) Π_{i=1}^{k−1}(1 − 1/((d−1)Lκ_i))`
/// with `L = ℓ^{(2−s)/s}`, for every `k ≥ 1`.
pub fn rate_bound(
    f_values: &[f64],
    pointwise_kappas: &[f64],
    params: &RateParams,
    d: usize,
    f_star: f64,
) -> RateReport {
    let l = (params.ell as f64).powf((2.0 - params.s) / params.s);
    let slack = RATE_SLACK * f_star.abs().max(1.0);
    let e0 = f_values[0] - f_star;
    let dd = d as f64;
    let mut bounds = Vec::new();
    let mut pointwise = Vec::new();
    let mut first_error = None;
    let mut first_warning = None;
    let mut b = e0 * rate_factor(dd, l, params.kappa0);
    let kp0 = pointwise_kappas.first().copied().unwrap_or(params.kappa0);
    let mut bp = e0 * rate_factor(dd, l, kp0);
    for k in 1..f_values.len() {
        if k >= 2 {
            b *= rate_factor(dd - 1.0, l, params.kappa0);
            let ki = pointwise_kappas
                .get(k - 1)
                .copied()
                .unwrap_or(params.kappa0);
            bp *= rate_factor(dd - 1.0, l, ki);
        }
        let err = f_values[k] - f_star;
        if first_error.is_none() && err > b + slack {
            first_error = Some(k);
        }
        if first_warning.is_none() && err > bp + slack {
            first_warning = Some(k);
        }
        bounds.push(b);
        pointwise.push(bp);
    }
    RateReport {
        bounds,
        pointwise_bounds: pointwise,
        first_error,
        first_warning,
    }
}

/// Estimate `κ(t_0)` for `g_A` on `C` over the sublevel set `{g ≤ t_0}`.
///
/// On `B(P,0)` the linear term of `g_A` vanishes, so every entry of `A(Y)` is
/// at most `g_A(Y) ≤ t_0`; the upper curvature end uses that exact bound.
/// The lower end is the smallest `α(Y)` found on random rays from `x*` to the
/// level-set boundary plus the supplied extra points. Both ends are scaled by
/// the pattern gains of [`pattern_gain`].
#[allow(clippy::too_many_arguments)]
pub fn sublevel_kappa(
    a: &Tensor,
    p: &MarginalFamily,
    bases: &SubspaceBases,
    x_star: &DVector<f64>,
    t0: f64,
    extra: &[DVector<f64>],
    rays: usize,
    seed: u64,
) -> Result<f64> {
    let g = |y: &DVector<f64>| -> Result<f64> { g_value(a, p, &scaling_from(a, y)?) };
    let alpha_at =
        |y: &DVector<f64>| -> Result<f64> { Ok(hessian_bounds(a, &scaling_from(a, y)?)?.0) };
    let mut alpha_min = alpha_at(x_star)?;
    for y in extra {
        alpha_min = alpha_min.min(alpha_at(y)?);
    }
    let g_star = g(x_star)?;
    if t0 > g_star {
        let dim = bases.complement.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..rays {
            let coeffs = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let dir = &bases.complement * coeffs;
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let dir = dir / norm;
            let mut hi = 1.0;
            while g(&(x_star + &dir * hi))? < t0 {
                hi *= 2.0;
                if hi > 1e6 {
                    break;
                }
            }
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if g(&(x_star + &dir * mid))? < t0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            for frac in [0.25, 0.5, 0.75, 1.0] {
                alpha_min = alpha_min.min(alpha_at(&(x_star + &dir * (lo * frac)))?);
            }
        }
    }
    let (glo, ghi) = pattern_gain(a, bases);
    Ok(t0.max(g_star) * ghi / (alpha_min * glo))
}

/// Quantities relating `q`, `p` and the residual of `q` against the line through `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionBounds {
    /// `⟨q,p⟩/⟨p,p⟩`.
    pub s: f64,
    /// `(n−1)p_max / ((n−1)p_max² + (1−p_max)²)`.
    pub s_cap: f64,
    /// `(√n+1)/2`.
    pub s_max: f64,
    /// `‖q − s·p‖_1`.
    pub residual: f64,
    /// `‖q − p‖_1`.
    pub l1_distance: f64,
    /// `KL(p ‖ q)`, possibly infinite.
    pub kl: f64,
    /// `0 ≤ s ≤ s_cap ≤ s_max`.
    pub part_a: bool,
    /// `|1 − s| ≤ residual` and `2·residual ≥ ‖q − p‖_1`.
    pub part_b: bool,
    /// `residual ≤ (√n+1)·√(2·KL)`.
    pub part_c: bool,
}

/// Slack on the projection inequalities.
pub const PROJECTION_SLACK: f64 = 1e-12;

pub fn projection_kl_bounds(p: &[f64], q: &[f64]) -> Result<ProjectionBounds> {
    if p.len() != q.len() || p.is_empty() {
        return Err(TotError::Shape(
            "p and q must have equal positive length".into(),
        ));
    }
    if p.iter().any(|&x| !(x > 0.0)) || q.iter().any(|&x| x < 0.0) {
        return Err(TotError::Argument(
            "p must be positive and q nonnegative".into(),
        ));
    }
    let n = p.len() as f64;
    let s = dot(q, p) / dot(p, p);
    let residual = ksum(project_out(q, p).iter().map(|x| x.abs()));
    let l1 = l1_distance(q, p);
    let kl = kl_divergence(p, q);
    let pmax = p.iter().copied().fold(0.0, f64::max);
    let s_cap = if p.len() == 1 {
        1.0
    } else {
        (n - 1.0) * pmax / ((n - 1.0) * pmax * pmax + (1.0 - pmax).powi(2))
    };
    let s_max = (n.sqrt() + 1.0) / 2.0;
    let e = PROJECTION_SLACK;
    let part_a = s >= -e && s <= s_cap + e && s_cap <= s_max + e;
    let part_b = (1.0 - s).abs() <= residual + e && 2.0 * residual + e >= l1;
    let part_c = residual <= (n.sqrt() + 1.0) * (2.0 * kl).sqrt() + e;
    Ok(ProjectionBounds {
        s,
        s_cap,
        s_max,
        residual,
        l1_distance: l1,
        kl,
        part_a,
        part_b,
        part_c,
    })
}
