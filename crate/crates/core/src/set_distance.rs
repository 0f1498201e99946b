//! Distances between ordered and unordered lists of `d/2` probability vectors
//! induced by cost tensors whose matricization is a distance matrix.
//!
//! An order-`d` cost `C` is read as a matrix `D(C)` whose rows are indexed by
//! the first `d/2` indices and whose columns are indexed by the last `d/2`.
//! The TOT value `τ(C, (P1, P2))` is then a transport distance between the
//! two halves of the marginal family.

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Result, TotError};
use crate::lp::{solve_exact_tot, LpOptions};
use crate::tensor::{MarginalFamily, Tensor};
use crate::tot::approx_tot;

/// Absolute tolerance of the metric-axiom checks.
pub const METRIC_TOLERANCE: f64 = 1e-12;
/// Absolute tolerance of the symmetry checks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Largest admissible disagreement of the shared block marginal in [`glue`].
pub const GLUE_TOLERANCE: f64 = 1e-8;
/// Largest list length for exhaustive permutation search.
pub const MAX_SET_SIZE: usize = 6;

fn half_order(c: &Tensor) -> Result<usize> {
    if c.order().is_multiple_of(2) {
        Ok(c.order() / 2)
    } else {
        Err(TotError::Argument(format!(
            "cost tensor must have even order, got {}",
            c.order()
        )))
    }
}

/// `D(C)`: an `n^{d/2} × n^{d/2}` matrix with row-major tuple indexing.
pub fn matricize(c: &Tensor) -> Result<DMatrix<f64>> {
    let h = half_order(c)?;
    let side = c.side().pow(h as u32);
    Ok(DMatrix::from_row_slice(side, side, c.data()))
}

/// Inverse of [`matricize`].
pub fn unmatricize(m: &DMatrix<f64>, order: usize, side: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect();
    Tensor::new(order, side, data)
}

/// First failed axiom found by a check.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonzeroDiagonal {
        i: usize,
        value: f64,
    },
    Asymmetric {
        i: usize,
        j: usize,
    },
    NonPositive {
        i: usize,
        j: usize,
        value: f64,
    },
    /// `d(i,j) > d(i,k) + d(k,j)`.
    Triangle {
        i: usize,
        j: usize,
        k: usize,
        excess: f64,
    },
    /// Zero pattern does not match multiset equality of the index halves.
    ZeroPattern {
        i: usize,
        j: usize,
        value: f64,
    },
    NotSquare {
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricCheck {
    pub ok: bool,
    pub violation: Option<Violation>,
}

impl MetricCheck {
    fn pass() -> Self {
        Self {
            ok: true,
            violation: None,
        }
    }

    fn fail(v: Violation) -> Self {
        Self {
            ok: false,
            violation: Some(v),
        }
    }
}

fn triangle_violation(d: &DMatrix<f64>) -> Option<Violation> {
    let m = d.nrows();
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let excess = d[(i, j)] - d[(i, k)] - d[(k, j)];
                if excess > METRIC_TOLERANCE {
                    return Some(Violation::Triangle { i, j, k, excess });
                }
            }
        }
    }
    None
}

/// Zero diagonal, symmetry, positive off-diagonal entries and every triangle inequality.
pub fn check_distance_matrix(d: &DMatrix<f64>) -> MetricCheck {
    if d.nrows() != d.ncols() {
        return MetricCheck::fail(Violation::NotSquare {
            rows: d.nrows(),
            cols: d.ncols(),
        });
    }
    let m = d.nrows();
    for i in 0..m {
        if d[(i, i)].abs() > METRIC_TOLERANCE {
            return MetricCheck::fail(Violation::NonzeroDiagonal {
                i,
                value: d[(i, i)],
            });
        }
    }
    for i in 0..m {
        for j in 0..m {
            if (d[(i, j)] - d[(j, i)]).abs() > METRIC_TOLERANCE {
                return MetricCheck::fail(Violation::Asymmetric { i, j });
            }
            if i != j && d[(i, j)] <= METRIC_TOLERANCE {
                return MetricCheck::fail(Violation::NonPositive {
                    i,
                    j,
                    value: d[(i, j)],
                });
            }
        }
    }
    triangle_violation(d).map_or_else(MetricCheck::pass, MetricCheck::fail)
}

/// Invariance of `C` under a permutation of its index positions.
fn invariant_under(c: &Tensor, perm: &[usize]) -> bool {
    let mut idx2 = vec![0; c.order()];
    (0..c.len()).all(|lin| {
        let idx = c.multi_index(lin);
        for (k, &src) in perm.iter().enumerate() {
            idx2[k] = idx[src];
        }
        (c.data()[lin] - c.get(&idx2)).abs() <= SYMMETRY_TOLERANCE
    })
}

fn swap_positions(order: usize, a: usize, b: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..order).collect();
    p.swap(a, b);
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bisymmetry {
    pub bisymmetric: bool,
    pub weak: bool,
}

/// Invariance under independent permutations within each half plus the
/// half swap (`bisymmetric`), and under equal permutations of both halves
/// plus the swap (`weak`). Checked on group generators.
pub fn check_bisymmetric(c: &Tensor) -> Result<Bisymmetry> {
    let h = half_order(c)?;
    let d = c.order();
    let block_swap: Vec<usize> = (h..d).chain(0..h).collect();
    let swap_ok = invariant_under(c, &block_swap);
    let within = (0..h.saturating_sub(1)).all(|k| {
        invariant_under(c, &swap_positions(d, k, k + 1))
            && invariant_under(c, &swap_positions(d, h + k, h + k + 1))
    });
    let simultaneous = (0..h.saturating_sub(1)).all(|k| {
        let mut p = swap_positions(d, k, k + 1);
        p.swap(h + k, h + k + 1);
        invariant_under(c, &p)
    });
    Ok(Bisymmetry {
        bisymmetric: swap_ok && within,
        weak: swap_ok && simultaneous,
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// Conditions under which `D(C)` of a bisymmetric `C` is a bisymmetric
/// distance matrix: `c = 0` exactly when the index halves agree as
/// multisets, `c > 0` otherwise, and the triangle inequality on `D(C)`.
pub fn check_bisymmetric_distance(c: &Tensor) -> Result<MetricCheck> {
    let h = half_order(c)?;
    let d = matricize(c)?;
    for lin in 0..c.len() {
        let idx = c.multi_index(lin);
        let same = sorted(&idx[..h]) == sorted(&idx[h..]);
        let v = c.data()[lin];
        let ok = if same {
            v.abs() <= METRIC_TOLERANCE
        } else {
            v > METRIC_TOLERANCE
        };
        if !ok {
            let side = d.nrows();
            return Ok(MetricCheck::fail(Violation::ZeroPattern {
                i: lin / side,
                j: lin % side,
                value: v,
            }));
        }
    }
    Ok(triangle_violation(&d).map_or_else(MetricCheck::pass, MetricCheck::fail))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMode {
    /// `Σ_k δ(i_k, i_{h+k})`.
    Sum,
    /// `min_σ Σ_k δ(i_k, i_{h+σ(k)})`.
    Matching,
}

/// Build an order-`d` cost tensor from an `n × n` ground metric.
pub fn lift_ground_metric(ground: &DMatrix<f64>, order: usize, mode: LiftMode) -> Result<Tensor> {
    let check = check_distance_matrix(ground);
    if !check.ok {
        return Err(TotError::Argument(format!(
            "ground metric is not a distance matrix: {:?}",
            check.violation
        )));
    }
    if order == 0 || !order.is_multiple_of(2) {
        return Err(TotError::Argument(format!(
            "order must be even, got {order}"
        )));
    }
    let h = order / 2;
    let perms: Vec<Vec<usize>> = match mode {
        LiftMode::Sum => vec![(0..h).collect()],
        LiftMode::Matching => (0..h).permutations(h).collect(),
    };
    Tensor::from_fn(order, ground.nrows(), |idx| {
        perms
            .iter()
            .map(|s| (0..h).map(|k| ground[(idx[k], idx[h + s[k]])]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostProfile {
    pub bisymmetric: bool,
    pub weak_bisymmetric: bool,
    /// Bisymmetric-distance conditions for bisymmetric costs, plain distance-matrix
    /// conditions otherwise.
    pub distance_matrix: bool,
    /// Plain distance-matrix conditions on `D(C)` regardless of symmetry class.
    pub strict_distance_matrix: bool,
    pub violation: Option<Violation>,
}

pub fn validate_cost(c: &Tensor) -> Result<CostProfile> {
    let sym = check_bisymmetric(c)?;
    let strict = check_distance_matrix(&matricize(c)?);
    let class = if sym.bisymmetric {
        check_bisymmetric_distance(c)?
    } else {
        strict.clone()
    };
    Ok(CostProfile {
        bisymmetric: sym.bisymmetric,
        weak_bisymmetric: sym.weak,
        distance_matrix: class.ok,
        strict_distance_matrix: strict.ok,
        violation: class.violation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solver {
    Exact(LpOptions),
    /// δ-approximation via scaling and rounding.
    Entropic {
        delta: f64,
    },
}

fn pair_family(c: &Tensor, p1: &[Vec<f64>], p2: &[Vec<f64>]) -> Result<MarginalFamily> {
    let h = half_order(c)?;
    if p1.len() != h || p2.len() != h {
        return Err(TotError::Shape(format!(
            "each side needs {h} vectors, got {} and {}",
            p1.len(),
            p2.len()
        )));
    }
    MarginalFamily::new(p1.iter().chain(p2).cloned().collect())
}

/// `τ(C, (P1, P2))`.
pub fn pair_distance(c: &Tensor, p1: &[Vec<f64>], p2: &[Vec<f64>], solver: Solver) -> Result<f64> {
    let fam = pair_family(c, p1, p2)?;
    match solver {
        Solver::Exact(opts) => Ok(solve_exact_tot(c, &fam, &opts)?.value),
        Solver::Entropic { delta } => Ok(approx_tot(c, &fam, delta)?.1.value),
    }
}

/// Whether the two lists agree as multisets, to `METRIC_TOLERANCE` per entry.
pub fn same_multiset(p1: &[Vec<f64>], p2: &[Vec<f64>]) -> bool {
    if p1.len() != p2.len() {
        return false;
    }
    let close = |a: &Vec<f64>, b: &Vec<f64>| {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x - y).abs() <= METRIC_TOLERANCE)
    };
    (0..p2.len())
        .permutations(p2.len())
        .any(|perm| p1.iter().zip(&perm).all(|(a, &k)| close(a, &p2[k])))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetDistanceFlags {
    pub bisymmetric: bool,
    pub weak_bisymmetric: bool,
    /// Zero exactly when the two lists agree as multisets.
    pub indicator: u8,
    /// `indicator · distance`; reported only, never substituted.
    pub indicator_distance: f64,
    /// Set when `C` is bisymmetric, in which case positivity may fail.
    pub semimetric_caveat: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetDistance {
    pub distance: f64,
    pub best_permutation: Vec<usize>,
    pub flags: SetDistanceFlags,
}

/// `min_α τ(C, (α(P1), α(P2)))` over all simultaneous reorderings.
pub fn set_distance(
    c: &Tensor,
    p1: &[Vec<f64>],
    p2: &[Vec<f64>],
    solver: Solver,
) -> Result<SetDistance> {
    let h = half_order(c)?;
    let sym = check_bisymmetric(c)?;
    if !sym.weak {
        return Err(TotError::contract(
            "set_distance",
            "cost tensor is not weakly bisymmetric",
        ));
    }
    if h > MAX_SET_SIZE {
        return Err(TotError::Argument(format!(
            "exhaustive search supports at most {MAX_SET_SIZE} vectors per side, got {h}"
        )));
    }
    pair_family(c, p1, p2)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for alpha in (0..h).permutations(h) {
        let a1: Vec<Vec<f64>> = alpha.iter().map(|&k| p1[k].clone()).collect();
        let a2: Vec<Vec<f64>> = alpha.iter().map(|&k| p2[k].clone()).collect();
        let v = pair_distance(c, &a1, &a2, solver)?;
        if best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, alpha));
        }
    }
    let (distance, best_permutation) = best.expect("at least one permutation");
    let indicator = u8::from(!same_multiset(p1, p2));
    Ok(SetDistance {
        distance,
        best_permutation,
        flags: SetDistanceFlags {
            bisymmetric: sym.bisymmetric,
            weak_bisymmetric: sym.weak,
            indicator,
            indicator_distance: f64::from(indicator) * distance,
            semimetric_caveat: sym.bisymmetric,
        },
    })
}

/// Glue `U ∈ U((P1,P2))` and `V ∈ U((P2,P3))` along their shared block:
/// `W[I,J,K] = U[I,J] · V[J,K] / M[J]` with `M` the common joint law of the
/// middle block and `0/0 = 0`. The result has order `3d/2`.
pub fn glue(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if !u.same_shape(v) {
        return Err(TotError::Shape(
            "glued plans must have the same shape".into(),
        ));
    }
    let h = half_order(u)?;
    let d = u.order();
    let back: Vec<usize> = (h..d).collect();
    let front: Vec<usize> = (0..h).collect();
    let mu = u.sum_out(&back)?;
    let mv = v.sum_out(&front)?;
    let gap = mu.l1_distance(&mv)?;
    let worst = mu
        .data()
        .iter()
        .zip(mv.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > GLUE_TOLERANCE {
        return Err(TotError::Argument(format!(
            "middle block marginals disagree (max {worst:e}, ℓ1 {gap:e})"
        )));
    }
    let block = mu.len();
    let (ud, vd, md) = (u.data(), v.data(), mu.data());
    Tensor::from_fn(3 * h, u.side(), |idx| {
        let n = u.side();
        let lin = |s: &[usize]| s.iter().fold(0, |a, &i| a * n + i);
        let (i, j, k) = (lin(&idx[..h]), lin(&idx[h..2 * h]), lin(&idx[2 * h..]));
        let num = ud[i * block + j] * vd[j * block + k];
        if num == 0.0 {
            0.0
        } else {
            num / md[j]
        }
    })
}

/// Contract the middle block of a glued tensor, giving a plan for `(P1, P3)`.
pub fn contract_middle(w: &Tensor) -> Result<Tensor> {
    if !w.order().is_multiple_of(3) {
        return Err(TotError::Argument(
            "glued tensor order must be a multiple of 3".into(),
        ));
    }
    let h = w.order() / 3;
    let keep: Vec<usize> = (0..h).chain(2 * h..3 * h).collect();
    w.sum_out(&keep)
}
