//! Dense d-mode tensors with equal side lengths and the elementary kernels
//! the scaling, rounding and LP code is built from.
//!
//! Storage is row-major over the index tuple `(i_0, …, i_{d-1})` with `i_0`
//! slowest, so the linear index is `Σ_j i_j · n^{d-1-j}`. Modes are 0-based
//! throughout the crate.
//!
//! All reductions go through [`KahanSum`] and visit entries in linear order,
//! so results are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TotError};

/// Relative tolerance on the common mass of a marginal family.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator of floats.
pub fn ksum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut acc = KahanSum::new();
    for x in it {
        acc.add(x);
    }
    acc.value()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    ksum(v.iter().map(|x| x.abs()))
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    ksum(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    ksum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Dense tensor of order `d` with every mode of side `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    order: usize,
    side: usize,
    data: Vec<f64>,
}

/// Result of [`Tensor::exp_neg_scaled`]: `exp(-λC) = exp(log_factor) · tensor`.
#[derive(Debug, Clone)]
pub struct ExpKernel {
    pub tensor: Tensor,
    pub log_factor: f64,
}

/// `n^d`, or `None` on overflow.
pub fn checked_volume(order: usize, side: usize) -> Option<usize> {
    let mut v: usize = 1;
    for _ in 0..order {
        v = v.checked_mul(side)?;
    }
    Some(v)
}

impl Tensor {
    pub fn new(order: usize, side: usize, data: Vec<f64>) -> Result<Self> {
        if order == 0 || side == 0 {
            return Err(TotError::Shape(format!(
                "order and side must be at least 1 (got d={order}, n={side})"
            )));
        }
        let expected = checked_volume(order, side)
            .ok_or_else(|| TotError::Shape(format!("n^d overflows for d={order}, n={side}")))?;
        if data.len() != expected {
            return Err(TotError::Shape(format!(
                "data has {} entries, expected n^d = {expected}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(TotError::Domain(format!("entry {pos} is not finite")));
        }
        Ok(Self { order, side, data })
    }

    pub fn filled(order: usize, side: usize, value: f64) -> Result<Self> {
        let len = checked_volume(order, side)
            .ok_or_else(|| TotError::Shape(format!("n^d overflows for d={order}, n={side}")))?;
        Self::new(order, side, vec![value; len])
    }

    pub fn zeros(order: usize, side: usize) -> Result<Self> {
        Self::filled(order, side, 0.0)
    }

    /// The all-ones tensor `J_d`.
    pub fn ones(order: usize, side: usize) -> Result<Self> {
        Self::filled(order, side, 1.0)
    }

    pub fn from_fn(order: usize, side: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_volume(order, side)
            .ok_or_else(|| TotError::Shape(format!("n^d overflows for d={order}, n={side}")))?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; order];
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, side);
        }
        Self::new(order, side, data)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Stride of `mode` in the flat layout.
    pub fn stride(&self, mode: usize) -> usize {
        self.side.pow((self.order - 1 - mode) as u32)
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        idx.iter().fold(0, |acc, &i| acc * self.side + i)
    }

    pub fn multi_index(&self, mut lin: usize) -> Vec<usize> {
        let mut idx = vec![0; self.order];
        for slot in idx.iter_mut().rev() {
            *slot = lin % self.side;
            lin /= self.side;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.order == other.order && self.side == other.side
    }

    fn check_shape(&self, other: &Tensor) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(TotError::Shape(format!(
                "(d={}, n={}) vs (d={}, n={})",
                self.order, self.side, other.order, other.side
            )))
        }
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode < self.order {
            Ok(())
        } else {
            Err(TotError::ModeOutOfRange {
                mode,
                order: self.order,
            })
        }
    }

    pub fn sum(&self) -> f64 {
        ksum(self.data.iter().copied())
    }

    pub fn l1_norm(&self) -> f64 {
        l1_norm(&self.data)
    }

    pub fn l1_distance(&self, other: &Tensor) -> Result<f64> {
        self.check_shape(other)?;
        Ok(l1_distance(&self.data, &other.data))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest strictly positive entry, if any.
    pub fn min_positive(&self) -> Option<f64> {
        self.data
            .iter()
            .copied()
            .filter(|&x| x > 0.0)
            .fold(None, |m, x| Some(m.map_or(x, |m: f64| m.min(x))))
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&x| x >= 0.0)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|&x| x > 0.0)
    }

    /// Nonnegative with total mass within `1e-12` of one.
    pub fn is_probability(&self) -> bool {
        self.is_nonnegative() && (self.sum() - 1.0).abs() <= 1e-12
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            order: self.order,
            side: self.side,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_shape(other)?;
        Ok(Tensor {
            order: self.order,
            side: self.side,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// `s_j(A)`: sum over every mode except `mode`.
    pub fn marginal(&self, mode: usize) -> Result<Vec<f64>> {
        self.check_mode(mode)?;
        let stride = self.stride(mode);
        let n = self.side;
        let mut acc = vec![KahanSum::new(); n];
        for (lin, &v) in self.data.iter().enumerate() {
            acc[(lin / stride) % n].add(v);
        }
        Ok(acc.iter().map(KahanSum::value).collect())
    }

    /// All `d` marginals in a single pass.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let (d, n) = (self.order, self.side);
        let mut acc = vec![vec![KahanSum::new(); n]; d];
        let mut idx = vec![0usize; d];
        for &v in &self.data {
            for (j, &i) in idx.iter().enumerate() {
                acc[j][i].add(v);
            }
            advance(&mut idx, n);
        }
        acc.into_iter()
            .map(|row| row.iter().map(KahanSum::value).collect())
            .collect()
    }

    /// Multiply every slice `i` of `mode` by `factors[i]`.
    pub fn scale_mode(&self, mode: usize, factors: &[f64]) -> Result<Tensor> {
        self.check_mode(mode)?;
        if factors.len() != self.side {
            return Err(TotError::Shape(format!(
                "factor vector has length {}, expected {}",
                factors.len(),
                self.side
            )));
        }
        let stride = self.stride(mode);
        let n = self.side;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(lin, &v)| v * factors[(lin / stride) % n])
            .collect();
        Ok(Tensor {
            order: self.order,
            side: self.side,
            data,
        })
    }

    /// `D(A, r, j)`: rescale `mode` so that its marginal becomes `target`.
    pub fn rescale_mode(&self, target: &[f64], mode: usize) -> Result<Tensor> {
        self.check_mode(mode)?;
        if target.len() != self.side {
            return Err(TotError::Shape(format!(
                "target has length {}, expected {}",
                target.len(),
                self.side
            )));
        }
        if target.iter().any(|&r| !(r > 0.0)) {
            return Err(TotError::Argument(
                "target marginal must be strictly positive".into(),
            ));
        }
        let s = self.marginal(mode)?;
        let mut factors = Vec::with_capacity(self.side);
        for (i, (&r, &si)) in target.iter().zip(&s).enumerate() {
            if !(si > 0.0) {
                return Err(TotError::DegenerateSlice { mode, index: i });
            }
            factors.push(r / si);
        }
        self.scale_mode(mode, &factors)
    }

    /// `A(X)`: entries multiplied by `exp(Σ_j x_{i_j, j})`. Zeros stay zero.
    pub fn apply_scaling(&self, x: &ScalingVectors) -> Result<Tensor> {
        if x.order() != self.order || x.side() != self.side {
            return Err(TotError::Shape(format!(
                "scaling vectors are {}×{}, tensor is d={}, n={}",
                x.order(),
                x.side(),
                self.order,
                self.side
            )));
        }
        let (d, n) = (self.order, self.side);
        let mut idx = vec![0usize; d];
        let mut data = Vec::with_capacity(self.data.len());
        for &a in &self.data {
            if a == 0.0 {
                data.push(a);
            } else {
                let mut e = 0.0;
                for (j, &i) in idx.iter().enumerate() {
                    e += x.vectors[j][i];
                }
                data.push(a * e.exp());
            }
            advance(&mut idx, n);
        }
        Ok(Tensor {
            order: d,
            side: n,
            data,
        })
    }

    /// For a tensor of log-entries: `log a + Σ_j x_j(i_j)`, the log-domain
    /// counterpart of [`Tensor::apply_scaling`].
    pub fn shift_log(&self, x: &ScalingVectors) -> Result<Tensor> {
        if x.order() != self.order || x.side() != self.side {
            return Err(TotError::Shape(format!(
                "scaling vectors are {}×{}, tensor is d={}, n={}",
                x.order(),
                x.side(),
                self.order,
                self.side
            )));
        }
        let n = self.side;
        let mut idx = vec![0usize; self.order];
        let mut data = Vec::with_capacity(self.data.len());
        for &l in &self.data {
            let mut e = l;
            for (j, &i) in idx.iter().enumerate() {
                e += x.vectors[j][i];
            }
            data.push(e);
            advance(&mut idx, n);
        }
        Tensor::new(self.order, n, data)
    }

    /// For a tensor of log-entries, the log of every marginal of `exp(self)`,
    /// by slice-wise log-sum-exp. Never underflows.
    pub fn log_marginals_of_exp(&self) -> Vec<Vec<f64>> {
        let (d, n) = (self.order, self.side);
        let mut top = vec![vec![f64::NEG_INFINITY; n]; d];
        let mut idx = vec![0usize; d];
        for &v in &self.data {
            for (j, &i) in idx.iter().enumerate() {
                top[j][i] = top[j][i].max(v);
            }
            advance(&mut idx, n);
        }
        let mut acc = vec![vec![KahanSum::new(); n]; d];
        idx.fill(0);
        for &v in &self.data {
            for (j, &i) in idx.iter().enumerate() {
                acc[j][i].add((v - top[j][i]).exp());
            }
            advance(&mut idx, n);
        }
        top.iter()
            .zip(&acc)
            .map(|(t, a)| t.iter().zip(a).map(|(m, s)| m + s.value().ln()).collect())
            .collect()
    }

    /// `log Σ exp(self)`.
    pub fn log_sum_exp(&self) -> f64 {
        let top = self.max();
        top + ksum(self.data.iter().map(|v| (v - top).exp())).ln()
    }

    /// Hilbert–Schmidt inner product with compensated accumulation.
    pub fn inner(&self, other: &Tensor) -> Result<f64> {
        self.check_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    /// `H(U) = -Σ u log u` with `0 log 0 = 0`.
    pub fn entropy(&self) -> Result<f64> {
        if let Some(pos) = self.data.iter().position(|&u| u < 0.0) {
            return Err(TotError::Domain(format!(
                "entropy of a tensor with negative entry {} at {pos}",
                self.data[pos]
            )));
        }
        Ok(-ksum(
            self.data.iter().filter(|&&u| u > 0.0).map(|&u| u * u.ln()),
        ))
    }

    /// `exp(-λC)` computed after shifting `C` to minimum zero.
    pub fn exp_neg_scaled(&self, lambda: f64) -> Result<ExpKernel> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(TotError::Argument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let shift = self.min();
        let tensor = self.map(|c| (-lambda * (c - shift)).exp());
        Ok(ExpKernel {
            tensor,
            log_factor: -lambda * shift,
        })
    }

    /// `⊗_j p_j`.
    pub fn outer(vectors: &[Vec<f64>]) -> Result<Tensor> {
        let d = vectors.len();
        if d == 0 {
            return Err(TotError::Shape("outer product of zero vectors".into()));
        }
        let n = vectors[0].len();
        if vectors.iter().any(|v| v.len() != n) {
            return Err(TotError::Shape(
                "outer product factors differ in length".into(),
            ));
        }
        Tensor::from_fn(d, n, |idx| {
            idx.iter()
                .enumerate()
                .map(|(j, &i)| vectors[j][i])
                .product()
        })
    }

    /// Sum out every mode not listed in `keep`; the result has order `keep.len()`
    /// with modes in the order given.
    pub fn sum_out(&self, keep: &[usize]) -> Result<Tensor> {
        if keep.is_empty() {
            return Err(TotError::Argument(
                "sum_out needs at least one kept mode".into(),
            ));
        }
        for &m in keep {
            self.check_mode(m)?;
        }
        let mut seen = vec![false; self.order];
        for &m in keep {
            if seen[m] {
                return Err(TotError::Argument(format!("mode {m} listed twice")));
            }
            seen[m] = true;
        }
        let len = checked_volume(keep.len(), self.side).expect("smaller than source");
        let mut acc = vec![KahanSum::new(); len];
        let mut idx = vec![0usize; self.order];
        for &v in &self.data {
            let target = keep.iter().fold(0, |a, &m| a * self.side + idx[m]);
            acc[target].add(v);
            advance(&mut idx, self.side);
        }
        Tensor::new(
            keep.len(),
            self.side,
            acc.iter().map(KahanSum::value).collect(),
        )
    }
}

/// Odometer increment with the last mode fastest.
#[inline]
pub(crate) fn advance(idx: &mut [usize], side: usize) {
    for slot in idx.iter_mut().rev() {
        *slot += 1;
        if *slot < side {
            return;
        }
        *slot = 0;
    }
}

/// `d` strictly positive vectors of length `n` sharing an ℓ1 mass `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalFamily {
    vectors: Vec<Vec<f64>>,
    mass: f64,
}

impl MarginalFamily {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(TotError::Argument("marginal family is empty".into()));
        }
        let n = vectors[0].len();
        if n == 0 {
            return Err(TotError::Argument("marginal vectors are empty".into()));
        }
        for (j, v) in vectors.iter().enumerate() {
            if v.len() != n {
                return Err(TotError::Shape(format!(
                    "marginal {j} has length {}, expected {n}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(TotError::Argument(format!(
                    "marginal {j} entry {i} = {} is not strictly positive",
                    v[i]
                )));
            }
        }
        let mass = l1_norm(&vectors[0]);
        for (j, v) in vectors.iter().enumerate().skip(1) {
            let m = l1_norm(v);
            if (m - mass).abs() > MASS_TOLERANCE * mass {
                return Err(TotError::Argument(format!(
                    "marginal {j} has mass {m}, marginal 0 has mass {mass}"
                )));
            }
        }
        Ok(Self { vectors, mass })
    }

    pub fn uniform(order: usize, side: usize) -> Result<Self> {
        Self::new(vec![vec![1.0 / side as f64; side]; order])
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    pub fn side(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn get(&self, mode: usize) -> &[f64] {
        &self.vectors[mode]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec<f64>> {
        self.vectors
    }

    pub fn is_probability(&self) -> bool {
        (self.mass - 1.0).abs() <= MASS_TOLERANCE
    }

    pub(crate) fn require_probability(&self, contract: &'static str) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            Err(TotError::contract(
                contract,
                format!(
                    "marginals must be probability vectors, mass is {}",
                    self.mass
                ),
            ))
        }
    }

    pub(crate) fn require_shape(&self, t: &Tensor) -> Result<()> {
        if self.order() == t.order() && self.side() == t.side() {
            Ok(())
        } else {
            Err(TotError::Shape(format!(
                "{} marginals of length {} vs tensor d={}, n={}",
                self.order(),
                self.side(),
                t.order(),
                t.side()
            )))
        }
    }

    /// The product plan `⊗ p_j`, which lies in `U(P)` when the mass is one.
    pub fn product_plan(&self) -> Tensor {
        Tensor::outer(&self.vectors).expect("validated family")
    }

    /// Concatenate two families (e.g. the halves `P1`, `P2` of a pair).
    pub fn concat(&self, other: &MarginalFamily) -> Result<MarginalFamily> {
        let mut v = self.vectors.clone();
        v.extend(other.vectors.iter().cloned());
        MarginalFamily::new(v)
    }
}

/// Log-domain exponents `x_1, …, x_d` of a diagonal scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVectors {
    vectors: Vec<Vec<f64>>,
}

impl ScalingVectors {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(TotError::Argument("no scaling vectors".into()));
        }
        let n = vectors[0].len();
        if vectors.iter().any(|v| v.len() != n) {
            return Err(TotError::Shape("scaling vectors differ in length".into()));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(TotError::Domain("scaling exponents must be finite".into()));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(order: usize, side: usize) -> Self {
        Self {
            vectors: vec![vec![0.0; side]; order],
        }
    }

    pub fn order(&self) -> usize {
        self.vectors.len()
    }

    pub fn side(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn get(&self, mode: usize) -> &[f64] {
        &self.vectors[mode]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub(crate) fn add_to_mode(&mut self, mode: usize, delta: &[f64]) {
        for (x, dx) in self.vectors[mode].iter_mut().zip(delta) {
            *x += dx;
        }
    }

    pub fn add(&self, other: &ScalingVectors) -> Result<ScalingVectors> {
        if self.order() != other.order() || self.side() != other.side() {
            return Err(TotError::Shape("scaling vectors differ in shape".into()));
        }
        ScalingVectors::new(
            self.vectors
                .iter()
                .zip(&other.vectors)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        )
    }

    /// Flatten block-wise into a vector of length `d·n`.
    pub fn flatten(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }

    pub fn from_flat(order: usize, side: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != order * side {
            return Err(TotError::Shape(format!(
                "flat vector has length {}, expected {}",
                flat.len(),
                order * side
            )));
        }
        Self::new(flat.chunks(side).map(<[f64]>::to_vec).collect())
    }
}

/// Serialized tensor: `{"d": int, "n": int, "data": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorFile {
    pub d: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

/// Serialized marginal family: `{"p": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MarginalFile {
    pub p: Vec<Vec<f64>>,
}

impl From<&Tensor> for TensorFile {
    fn from(t: &Tensor) -> Self {
        TensorFile {
            d: t.order,
            n: t.side,
            data: t.data.clone(),
        }
    }
}

impl TryFrom<TensorFile> for Tensor {
    type Error = TotError;
    fn try_from(f: TensorFile) -> Result<Self> {
        Tensor::new(f.d, f.n, f.data)
    }
}

impl From<&MarginalFamily> for MarginalFile {
    fn from(p: &MarginalFamily) -> Self {
        MarginalFile {
            p: p.vectors.clone(),
        }
    }
}

impl TryFrom<MarginalFile> for MarginalFamily {
    type Error = TotError;
    fn try_from(f: MarginalFile) -> Result<Self> {
        MarginalFamily::new(f.p)
    }
}

impl Tensor {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TensorFile::from(self)).expect("finite floats serialize")
    }

    pub fn from_json(text: &str) -> Result<Tensor> {
        let f: TensorFile = serde_json::from_str(text)
            .map_err(|e| TotError::Argument(format!("tensor file: {e}")))?;
        f.try_into()
    }
}

impl MarginalFamily {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MarginalFile::from(self)).expect("finite floats serialize")
    }

    pub fn from_json(text: &str) -> Result<MarginalFamily> {
        let f: MarginalFile = serde_json::from_str(text)
            .map_err(|e| TotError::Argument(format!("marginal file: {e}")))?;
        f.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn t2(rows: [[f64; 2]; 2]) -> Tensor {
        Tensor::new(2, 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn rejects_bad_length() {
        assert!(Tensor::new(3, 2, vec![0.0; 7]).is_err());
        assert!(Tensor::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn marginal_of_product_measure() {
        let p = vec![vec![0.2, 0.8], vec![0.5, 0.5], vec![0.1, 0.9]];
        let a = Tensor::outer(&p).unwrap();
        for j in 0..3 {
            let m = a.marginal(j).unwrap();
            for (x, y) in m.iter().zip(&p[j]) {
                assert_relative_eq!(x, y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn marginal_of_ones() {
        let a = Tensor::ones(3, 2).unwrap();
        for j in 0..3 {
            assert_eq!(a.marginal(j).unwrap(), vec![4.0, 4.0]);
        }
        assert!(matches!(
            a.marginal(3),
            Err(TotError::ModeOutOfRange { .. })
        ));
    }

    #[test]
    fn marginals_single_pass_agrees() {
        let a = Tensor::from_fn(3, 3, |i| (1 + i[0] + 2 * i[1] + 5 * i[2]) as f64).unwrap();
        let all = a.marginals();
        for j in 0..3 {
            assert_eq!(all[j], a.marginal(j).unwrap());
        }
    }

    #[test]
    fn rescale_identity_and_hand_example() {
        let a = t2([[1.0, 1.0], [1.0, 1.0]]);
        let r = a.marginal(0).unwrap();
        assert_eq!(a.rescale_mode(&r, 0).unwrap(), a);

        let d = a.rescale_mode(&[0.6, 0.4], 0).unwrap();
        let expect = [0.3, 0.3, 0.2, 0.2];
        for (x, y) in d.data().iter().zip(expect) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
        assert_relative_eq!(d.l1_distance(&a).unwrap(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(
            l1_distance(&[0.6, 0.4], &a.marginal(0).unwrap()),
            3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn rescale_degenerate_slice() {
        let a = t2([[1.0, 1.0], [0.0, 0.0]]);
        assert!(matches!(
            a.rescale_mode(&[0.5, 0.5], 0),
            Err(TotError::DegenerateSlice { mode: 0, index: 1 })
        ));
    }

    #[test]
    fn apply_scaling_examples() {
        let a = Tensor::ones(2, 2).unwrap();
        assert_eq!(a.apply_scaling(&ScalingVectors::zeros(2, 2)).unwrap(), a);
        let x = ScalingVectors::new(vec![vec![2f64.ln(), 0.0], vec![0.0, 3f64.ln()]]).unwrap();
        let s = a.apply_scaling(&x).unwrap();
        for (v, e) in s.data().iter().zip([2.0, 6.0, 1.0, 3.0]) {
            assert_relative_eq!(*v, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn inner_examples() {
        let c = t2([[0.0, 1.0], [1.0, 0.0]]);
        let u = t2([[0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(c.inner(&u).unwrap(), 0.0);
        assert_eq!(c.inner(&Tensor::zeros(2, 2).unwrap()).unwrap(), 0.0);
        assert!(c.inner(&Tensor::zeros(3, 2).unwrap()).is_err());
    }

    #[test]
    fn entropy_examples() {
        let mut point = vec![0.0; 8];
        point[5] = 1.0;
        assert_eq!(Tensor::new(3, 2, point).unwrap().entropy().unwrap(), 0.0);

        let uniform = Tensor::filled(3, 3, 1.0 / 27.0).unwrap();
        assert_relative_eq!(uniform.entropy().unwrap(), 3.0 * 3f64.ln(), epsilon = 1e-12);

        let p: Vec<Vec<f64>> = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1]];
        let h: f64 = p
            .iter()
            .map(|v| -v.iter().map(|x| x * x.ln()).sum::<f64>())
            .sum();
        assert_relative_eq!(
            Tensor::outer(&p).unwrap().entropy().unwrap(),
            h,
            epsilon = 1e-12
        );

        assert!(matches!(
            t2([[0.5, 0.6], [0.0, -0.1]]).entropy(),
            Err(TotError::Domain(_))
        ));
    }

    #[test]
    fn exp_neg_scaled_examples() {
        let z = Tensor::zeros(2, 3).unwrap().exp_neg_scaled(4.0).unwrap();
        assert!(z.tensor.data().iter().all(|&x| x == 1.0));
        assert_eq!(z.log_factor, 0.0);

        let c = t2([[0.0, 1.0], [1.0, 0.0]]);
        let k = c.exp_neg_scaled(1.0).unwrap();
        let e = (-1f64).exp();
        assert_eq!(k.tensor.data(), &[1.0, e, e, 1.0]);

        // shifting the cost only moves the tracked factor
        let shifted = c.map(|x| x + 2.5).exp_neg_scaled(1.0).unwrap();
        assert_eq!(shifted.tensor, k.tensor);
        assert_relative_eq!(shifted.log_factor, k.log_factor - 2.5, epsilon = 1e-15);

        assert!(c.exp_neg_scaled(0.0).is_err());
    }

    #[test]
    fn outer_examples() {
        let v = Tensor::outer(&[vec![0.1, 0.2, 0.7]]).unwrap();
        assert_eq!(v.data(), &[0.1, 0.2, 0.7]);
        let m = Tensor::outer(&[vec![0.5, 0.5], vec![0.6, 0.4]]).unwrap();
        for (x, y) in m.data().iter().zip([0.3, 0.2, 0.3, 0.2]) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn sum_out_blocks() {
        let a =
            Tensor::from_fn(4, 2, |i| (1 + i[0] + 2 * i[1] + 4 * i[2] + 8 * i[3]) as f64).unwrap();
        let front = a.sum_out(&[0, 1]).unwrap();
        assert_eq!(front.order(), 2);
        let brute: f64 = (0..2)
            .flat_map(|c| (0..2).map(move |d| (c, d)))
            .map(|(c, d)| a.get(&[1, 0, c, d]))
            .sum();
        assert_eq!(front.get(&[1, 0]), brute);
        assert_eq!(
            a.sum_out(&[2]).unwrap().data(),
            a.marginal(2).unwrap().as_slice()
        );
    }

    #[test]
    fn marginal_family_validation() {
        assert!(MarginalFamily::new(vec![vec![0.5, 0.5], vec![0.3, 0.7]]).is_ok());
        assert!(MarginalFamily::new(vec![vec![0.5, 0.5], vec![0.3, 0.6]]).is_err());
        assert!(MarginalFamily::new(vec![vec![1.0, 0.0]]).is_err());
        assert!(MarginalFamily::new(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_stable() {
        let t = Tensor::new(2, 2, vec![0.1, 1.0 / 3.0, 2e-300, 7.0]).unwrap();
        let back = Tensor::from_json(&t.to_json()).unwrap();
        assert_eq!(
            t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let p = MarginalFamily::new(vec![vec![0.1, 0.9], vec![0.7, 0.3]]).unwrap();
        assert_eq!(MarginalFamily::from_json(&p.to_json()).unwrap(), p);
        assert!(Tensor::from_json(r#"{"d": 2, "n": 2, "data": [1, 2, 3]}"#).is_err());
    }

    fn random_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..=4, 1usize..=3).prop_flat_map(|(d, n)| {
            proptest::collection::vec(0.0f64..10.0, n.pow(d as u32))
                .prop_map(move |data| Tensor::new(d, n, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn marginal_conservation(a in random_tensor()) {
            let total = a.l1_norm();
            for j in 0..a.order() {
                let s: f64 = ksum(a.marginal(j).unwrap());
                prop_assert!((s - total).abs() <= 1e-10 * total.max(1e-300));
            }
        }

        #[test]
        fn rescale_l1_identity(a in random_tensor(), seed in 0u64..1000) {
            let a = a.map(|x| x + 0.01);
            let n = a.side();
            let r: Vec<f64> = (0..n).map(|i| 0.1 + ((seed as usize * 31 + i * 17) % 97) as f64 / 10.0).collect();
            for j in 0..a.order() {
                let s = a.marginal(j).unwrap();
                let d = a.rescale_mode(&r, j).unwrap();
                let lhs = d.l1_distance(&a).unwrap();
                let rhs = l1_distance(&r, &s);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1.0));
                let back = d.marginal(j).unwrap();
                for (x, y) in back.iter().zip(&r) {
                    prop_assert!((x - y).abs() <= 1e-12 * y.max(1.0));
                }
            }
        }

        #[test]
        fn apply_scaling_preserves_zeros_and_composes(a in random_tensor(), seed in 0u64..1000) {
            let (d, n) = (a.order(), a.side());
            let a = a.map(|x| if x < 3.0 { 0.0 } else { x });
            let mk = |s: u64| ScalingVectors::new(
                (0..d).map(|j| (0..n).map(|i| (((s as usize + 7 * j + 3 * i) % 11) as f64 - 5.0) / 4.0).collect()).collect()
            ).unwrap();
            let (x, y) = (mk(seed), mk(seed + 5));
            let ax = a.apply_scaling(&x).unwrap();
            for (u, v) in a.data().iter().zip(ax.data()) {
                prop_assert_eq!(*u == 0.0, *v == 0.0);
            }
            let two_step = ax.apply_scaling(&y).unwrap();
            let one_step = a.apply_scaling(&x.add(&y).unwrap()).unwrap();
            for (u, v) in two_step.data().iter().zip(one_step.data()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }

        #[test]
        fn entropy_bounds_and_total_mass(a in random_tensor()) {
            let a = a.map(|x| x + 1e-3);
            let u = a.scaled(1.0 / a.sum());
            let h = u.entropy().unwrap();
            let (d, n) = (u.order() as f64, u.side() as f64);
            prop_assert!(h >= -1e-15 && h <= d * n.ln() + 1e-9);
            let j = Tensor::ones(u.order(), u.side()).unwrap();
            prop_assert!((j.inner(&u).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}
