//! Orthonormal bases for the subspaces of `(R^n)^d` that govern the potential
//! `g_A`: the marginal-orthogonal space `B(P,0)`, the flat directions `B` of
//! `g_A` induced by the zero pattern of `A`, their complement `C`, and the
//! per-mode images `V_j = π_C(ι_j(L(p_j)))`.
//!
//! Vectors of `(R^n)^d` are flattened block-wise: block `j` occupies
//! coordinates `j·n .. (j+1)·n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TotError};
use crate::tensor::{MarginalFamily, Tensor};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = RANK_TOLERANCE * smax;
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax == 0.0 || svd.singular_values[i] <= tol)
        .collect();
    let mut out = DMatrix::zeros(cols, null_rows.len());
    for (c, &r) in null_rows.iter().enumerate() {
        out.set_column(c, &v_t.row(r).transpose());
    }
    out
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOLERANCE * smax)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Bases of the subspaces associated with a tensor's support and a marginal family.
#[derive(Debug, Clone)]
pub struct SubspaceBases {
    order: usize,
    side: usize,
    /// Per-mode `n × (n-1)` basis of `L(p_j) = p_j^⊥`.
    pub block: Vec<DMatrix<f64>>,
    /// `B(P,0)`, dimension `d(n-1)`.
    pub marginal_orthogonal: DMatrix<f64>,
    /// `B`: directions in `B(P,0)` along which `g_A` is constant.
    pub flat: DMatrix<f64>,
    /// `C = B^⊥ ∩ B(P,0)`.
    pub complement: DMatrix<f64>,
    /// `V_j = π_C(ι_j(L(p_j)))`.
    pub mode: Vec<DMatrix<f64>>,
}

impl SubspaceBases {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn ambient_dim(&self) -> usize {
        self.order * self.side
    }

    pub fn dim_flat(&self) -> usize {
        self.flat.ncols()
    }

    pub fn dim_complement(&self) -> usize {
        self.complement.ncols()
    }

    /// `ι_j(v)`.
    pub fn embed(&self, mode: usize, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient_dim());
        for (i, &x) in v.iter().enumerate() {
            out[mode * self.side + i] = x;
        }
        out
    }

    /// Orthogonal projection onto `C` in ambient coordinates.
    pub fn project_complement(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.complement * (self.complement.transpose() * y)
    }

    /// Orthogonal projection onto `V_j` in ambient coordinates.
    pub fn project_mode(&self, mode: usize, y: &DVector<f64>) -> DVector<f64> {
        let v = &self.mode[mode];
        v * (v.transpose() * y)
    }

    /// `‖π_{V_j}(ι_j(s))‖_1`, the residual used by the nonnegative variant.
    pub fn mode_residual_l1(&self, mode: usize, s: &[f64]) -> f64 {
        self.project_mode(mode, &self.embed(mode, s))
            .iter()
            .map(|x| x.abs())
            .sum()
    }
}

/// Orthonormal basis of `p^⊥ ⊂ R^n` as an `n × (n-1)` matrix.
pub fn orthogonal_complement_of(p: &[f64]) -> DMatrix<f64> {
    null_space(&DMatrix::from_row_slice(1, p.len(), p))
}

/// Block-diagonal embedding of the per-mode bases.
fn block_embedding(order: usize, side: usize, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let width: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut q = DMatrix::zeros(order * side, width);
    let mut col = 0;
    for (j, b) in blocks.iter().enumerate() {
        q.view_mut((j * side, col), (side, b.ncols())).copy_from(b);
        col += b.ncols();
    }
    q
}

/// Support-pattern matrix: one row per positive entry of `a`, with ones at
/// the ambient coordinates `(j, i_j)`.
pub fn pattern_matrix(a: &Tensor) -> DMatrix<f64> {
    let (d, n) = (a.order(), a.side());
    let support: Vec<usize> = (0..a.len()).filter(|&lin| a.data()[lin] > 0.0).collect();
    let mut m = DMatrix::zeros(support.len(), d * n);
    for (r, &lin) in support.iter().enumerate() {
        for (j, i) in a.multi_index(lin).into_iter().enumerate() {
            m[(r, j * n + i)] = 1.0;
        }
    }
    m
}

/// Compute [`SubspaceBases`] for the support of `a` and the family `p`.
pub fn support_subspaces(a: &Tensor, p: &MarginalFamily) -> Result<SubspaceBases> {
    p.require_shape(a)?;
    if !a.is_nonnegative() {
        return Err(TotError::Domain(
            "support subspaces need a nonnegative tensor".into(),
        ));
    }
    for (j, s) in a.marginals().iter().enumerate() {
        if let Some(i) = s.iter().position(|&x| !(x > 0.0)) {
            return Err(TotError::DegenerateSlice { mode: j, index: i });
        }
    }
    let (d, n) = (a.order(), a.side());
    let block: Vec<DMatrix<f64>> = p
        .vectors()
        .iter()
        .map(|v| orthogonal_complement_of(v))
        .collect();
    let q = block_embedding(d, n, &block);
    let inner_dim = q.ncols();

    let (flat, complement) = if a.is_strictly_positive() {
        // Every pattern equation is present; the flat space is trivial.
        (DMatrix::zeros(d * n, 0), q.clone())
    } else {
        let mq = pattern_matrix(a) * &q;
        let null = null_space(&mq);
        let flat = &q * &null;
        let comp_coords = if null.ncols() == 0 {
            DMatrix::identity(inner_dim, inner_dim)
        } else {
            null_space(&null.transpose())
        };
        (flat, &q * comp_coords)
    };

    let proj_c = &complement * complement.transpose();
    let mode = (0..d)
        .map(|j| {
            let mut e = DMatrix::zeros(d * n, block[j].ncols());
            e.view_mut((j * n, 0), (n, block[j].ncols()))
                .copy_from(&block[j]);
            column_space(&(&proj_c * e))
        })
        .collect();

    Ok(SubspaceBases {
        order: d,
        side: n,
        block,
        marginal_orthogonal: q,
        flat,
        complement,
        mode,
    })
}
