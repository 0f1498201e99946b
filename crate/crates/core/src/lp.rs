//! Dense two-phase tableau simplex and the exact TOT / scalability oracles built on it.
//!
//! Intended for desk-scale ground truth: the tableau is dense, pricing is
//! Dantzig's rule with a fallback to Bland's rule once a phase has run
//! `2·(rows + cols)` pivots, and every solve reports simplex multipliers and
//! the resulting duality gap.

use crate::error::{Result, TotError};
use crate::tensor::{ksum, MarginalFamily, Tensor};

/// Default cap on the number of LP variables (`n^d` for TOT).
pub const DEFAULT_MAX_VARIABLES: usize = 100_000;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Most negative reduced cost, switching to Bland's rule after `2·(rows + cols)` pivots.
    #[default]
    DantzigThenBland,
    /// Smallest-index entering variable throughout.
    Bland,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpOptions {
    pub max_variables: usize,
    pub pivot_rule: PivotRule,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_variables: DEFAULT_MAX_VARIABLES,
            pivot_rule: PivotRule::default(),
        }
    }
}

/// `min cᵀx` subject to `Ax = b`, `x ≥ 0`, with `A` stored densely by rows.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Simplex multipliers, one per constraint row (zero for rows found redundant).
    pub duals: Vec<f64>,
    /// `cᵀx − bᵀy`.
    pub duality_gap: f64,
    /// Largest violation of `Aᵀy ≤ c`.
    pub dual_infeasibility: f64,
    pub pivots: usize,
    pub redundant_rows: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    z: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let piv = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= piv;
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[col] = 0.0;
            }
        }
        let f = self.z[col];
        if f != 0.0 {
            for (v, p) in self.z.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.z[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Leaving row by the minimum ratio test, ties to the smallest basic index.
    fn ratio_row(&self, col: usize) -> Option<usize> {
        let rhs = self.rhs();
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            if row[col] > PIVOT_TOL {
                let ratio = row[rhs].max(0.0) / row[col];
                match best {
                    None => best = Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * br.abs().max(1.0);
                        if (ratio < br && !tie) || (tie && self.basis[i] < self.basis[bi]) {
                            best = Some((i, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    /// Iterate until optimal over columns `< allowed`. Returns pivots used.
    fn run(&mut self, allowed: usize, rule: PivotRule) -> Result<usize> {
        let switch = 2 * (self.rows.len() + self.width);
        let limit = 50 * (self.rows.len() + self.width) + 1000;
        let mut pivots = 0;
        loop {
            let bland = rule == PivotRule::Bland || pivots >= switch;
            let entering = if bland {
                (0..allowed).find(|&j| self.z[j] < -COST_TOL)
            } else {
                let mut best: Option<usize> = None;
                for j in 0..allowed {
                    if self.z[j] < -COST_TOL && best.is_none_or(|b| self.z[j] < self.z[b]) {
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else {
                return Ok(pivots);
            };
            let Some(r) = self.ratio_row(col) else {
                return Err(TotError::Argument("linear program is unbounded".into()));
            };
            self.pivot(r, col);
            pivots += 1;
            if pivots > limit {
                return Err(TotError::Contract {
                    contract: "simplex",
                    detail: format!("no convergence within {limit} pivots"),
                });
            }
        }
    }
}

impl LinearProgram {
    pub fn new(a: Vec<Vec<f64>>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(TotError::Shape(format!(
                "{} rows but {} right-hand sides",
                a.len(),
                b.len()
            )));
        }
        if a.iter().any(|r| r.len() != c.len()) {
            return Err(TotError::Shape(
                "constraint rows must match the cost length".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    pub fn num_variables(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn solve(&self, rule: PivotRule) -> Result<LpSolution> {
        let m = self.num_constraints();
        let n = self.num_variables();
        let width = n + m + 1;
        let rhs = width - 1;
        let mut flipped = vec![false; m];
        let mut rows = Vec::with_capacity(m);
        for i in 0..m {
            let sign = if self.b[i] < 0.0 { -1.0 } else { 1.0 };
            flipped[i] = sign < 0.0;
            let mut row = vec![0.0; width];
            for (v, &a) in row.iter_mut().zip(&self.a[i]) {
                *v = sign * a;
            }
            row[n + i] = 1.0;
            row[rhs] = sign * self.b[i];
            rows.push(row);
        }
        let mut z = vec![0.0; width];
        for row in &rows {
            for j in 0..n {
                z[j] -= row[j];
            }
            z[rhs] -= row[rhs];
        }
        let mut t = Tableau {
            rows,
            z,
            basis: (n..n + m).collect(),
            width,
        };

        let mut pivots = t.run(n, rule)?;
        let infeas = -t.z[rhs];
        let scale = self.b.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        if infeas > FEAS_TOL * scale {
            return Err(TotError::Infeasible(format!(
                "phase one ended with artificial mass {infeas:e}"
            )));
        }

        // Drive remaining artificials out of the basis; rows where that is
        // impossible are linear combinations of the others.
        let mut r = 0;
        let mut redundant = 0;
        while r < t.rows.len() {
            if t.basis[r] >= n {
                match (0..n).find(|&j| t.rows[r][j].abs() > 1e-9) {
                    Some(j) => {
                        t.pivot(r, j);
                        pivots += 1;
                    }
                    None => {
                        t.rows.remove(r);
                        t.basis.remove(r);
                        redundant += 1;
                        continue;
                    }
                }
            }
            r += 1;
        }

        // Phase two pricing.
        let mut z = vec![0.0; width];
        z[..n].copy_from_slice(&self.c);
        for (row, &bj) in t.rows.iter().zip(&t.basis) {
            let cb = self.c[bj];
            if cb != 0.0 {
                for (v, a) in z.iter_mut().zip(row) {
                    *v -= cb * a;
                }
            }
        }
        for &bj in &t.basis {
            z[bj] = 0.0;
        }
        t.z = z;
        pivots += t.run(n, rule)?;

        let mut x = vec![0.0; n];
        for (row, &bj) in t.rows.iter().zip(&t.basis) {
            x[bj] = row[rhs];
        }
        let objective = ksum(self.c.iter().zip(&x).map(|(c, x)| c * x));
        let duals: Vec<f64> = (0..m)
            .map(|k| {
                let y = -t.z[n + k];
                if flipped[k] {
                    -y
                } else {
                    y
                }
            })
            .collect();
        let dual_obj = ksum(self.b.iter().zip(&duals).map(|(b, y)| b * y));
        let dual_infeasibility = (0..n)
            .map(|j| {
                let aty = ksum((0..m).map(|i| self.a[i][j] * duals[i]));
                (aty - self.c[j]).max(0.0)
            })
            .fold(0.0, f64::max);
        Ok(LpSolution {
            x,
            objective,
            duals,
            duality_gap: objective - dual_obj,
            dual_infeasibility,
            pivots,
            redundant_rows: redundant,
        })
    }
}

fn check_cap(variables: usize, opts: &LpOptions) -> Result<()> {
    if variables > opts.max_variables {
        Err(TotError::SizeCap {
            variables,
            cap: opts.max_variables,
        })
    } else {
        Ok(())
    }
}

/// Marginal constraints of `U(P)` restricted to the listed cells: the first
/// `n−1` rows of every mode and one total-mass row, `d(n−1)+1` in all.
fn marginal_rows(order: usize, side: usize, cells: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(order * (side - 1) + 1);
    for j in 0..order {
        for a in 0..side - 1 {
            rows.push(
                cells
                    .iter()
                    .map(|c| if c[j] == a { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }
    rows.push(vec![1.0; cells.len()]);
    rows
}

fn marginal_rhs(p: &MarginalFamily) -> Vec<f64> {
    let mut b = Vec::new();
    for j in 0..p.order() {
        b.extend_from_slice(&p.get(j)[..p.side() - 1]);
    }
    b.push(p.mass());
    b
}

#[derive(Debug, Clone)]
pub struct ExactTot {
    pub plan: Tensor,
    pub value: f64,
    pub lp: LpSolution,
}

/// Solve `min ⟨C,U⟩` over `U(P)` exactly.
pub fn solve_exact_tot(c: &Tensor, p: &MarginalFamily, opts: &LpOptions) -> Result<ExactTot> {
    p.require_shape(c)?;
    p.require_probability("solve_exact_tot")?;
    check_cap(c.len(), opts)?;
    let cells: Vec<Vec<usize>> = (0..c.len()).map(|lin| c.multi_index(lin)).collect();
    let lp = LinearProgram::new(
        marginal_rows(c.order(), c.side(), &cells),
        marginal_rhs(p),
        c.data().to_vec(),
    )?;
    let sol = lp.solve(opts.pivot_rule).map_err(|e| match e {
        TotError::Infeasible(msg) => TotError::Infeasible(format!(
            "internal error, the product plan is always feasible: {msg}"
        )),
        other => other,
    })?;
    let plan = Tensor::new(c.order(), c.side(), sol.x.clone())?;
    let value = c.inner(&plan)?;
    Ok(ExactTot {
        plan,
        value,
        lp: sol,
    })
}

/// Largest `t` such that some `U ∈ U(P)` supported on `supp(A)` has every
/// support entry at least `t`; `None` when no plan fits in the support.
pub fn max_min_support_entry(
    a: &Tensor,
    p: &MarginalFamily,
    opts: &LpOptions,
) -> Result<Option<f64>> {
    p.require_shape(a)?;
    p.require_probability("scalability_check")?;
    if !a.is_nonnegative() {
        return Err(TotError::Domain(
            "scalability needs a nonnegative tensor".into(),
        ));
    }
    let support: Vec<usize> = (0..a.len()).filter(|&i| a.data()[i] > 0.0).collect();
    check_cap(support.len() + 1, opts)?;
    if support.is_empty() {
        return Ok(None);
    }
    let cells: Vec<Vec<usize>> = support.iter().map(|&lin| a.multi_index(lin)).collect();
    // u_i = t + v_i with t, v ≥ 0; column 0 is t.
    let mut rows = marginal_rows(a.order(), a.side(), &cells);
    for row in rows.iter_mut() {
        let count: f64 = row.iter().sum();
        row.insert(0, count);
    }
    let mut cost = vec![0.0; support.len() + 1];
    cost[0] = -1.0;
    let lp = LinearProgram::new(rows, marginal_rhs(p), cost)?;
    match lp.solve(opts.pivot_rule) {
        Ok(sol) => Ok(Some(sol.x[0])),
        Err(TotError::Infeasible(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Threshold on the optimal minimum support entry.
pub const SCALABILITY_THRESHOLD: f64 = 1e-10;

/// Whether some `U ∈ U(P)` has exactly the zero pattern of `a`.
pub fn scalability_check(a: &Tensor, p: &MarginalFamily, opts: &LpOptions) -> Result<bool> {
    Ok(max_min_support_entry(a, p, opts)?.is_some_and(|t| t > SCALABILITY_THRESHOLD))
}
