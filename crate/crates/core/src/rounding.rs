//! Rounding a nearly feasible plan into the transport polytope `U(P)`.
//!
//! `d` shrink passes cap each mode marginal at `p_j`, then a rank-one term
//! restores the missing mass. The result moves at most
//! `2 Σ_j ‖p_j − s_j(F)‖_1` in ℓ1 and costs `O(d n^d)`.

use crate::error::{Result, TotError};
use crate::tensor::{l1_norm, MarginalFamily, Tensor};

/// Negative entries of `p_j − q_j` no larger than this (relative to the mass)
/// are treated as rounding noise and clamped to zero.
pub const DEFICIT_TOLERANCE: f64 = 1e-12;

/// Shrink `f` mode by mode so that every marginal is dominated by `p`.
///
/// Returns `G ≤ F` and its marginals `q_j ≤ p_j`.
pub fn shrink_to_submarginals(f: &Tensor, p: &MarginalFamily) -> Result<(Tensor, Vec<Vec<f64>>)> {
    p.require_shape(f)?;
    if !f.is_nonnegative() {
        return Err(TotError::Domain("rounding needs a nonnegative plan".into()));
    }
    if f.sum() == 0.0 {
        return Err(TotError::Argument("cannot round the zero tensor".into()));
    }
    let mut g = f.clone();
    for j in 0..f.order() {
        let s = g.marginal(j)?;
        let factors: Vec<f64> = s
            .iter()
            .zip(p.get(j))
            .map(|(&si, &pi)| if si > 0.0 { (pi / si).min(1.0) } else { 1.0 })
            .collect();
        if factors.iter().any(|&c| c < 1.0) {
            g = g.scale_mode(j, &factors)?;
        }
    }
    let q = g.marginals();
    Ok((g, q))
}

/// `B = G + (h − h′)^{−(d−1)} ⊗_j (p_j − q_j)`.
pub fn rank_one_correction(g: &Tensor, q: &[Vec<f64>], p: &MarginalFamily) -> Result<Tensor> {
    p.require_shape(g)?;
    if q.len() != p.order() || q.iter().any(|v| v.len() != p.side()) {
        return Err(TotError::Shape(
            "submarginals do not match the family".into(),
        ));
    }
    let tol = DEFICIT_TOLERANCE * p.mass().max(1.0);
    let mut deficits = Vec::with_capacity(q.len());
    for (j, qj) in q.iter().enumerate() {
        let mut diff = Vec::with_capacity(qj.len());
        for (i, (&pi, &qi)) in p.get(j).iter().zip(qj).enumerate() {
            let d = pi - qi;
            if d < -tol {
                return Err(TotError::contract(
                    "rank_one_correction",
                    format!(
                        "submarginal exceeds target at mode {j}, index {i} by {}",
                        -d
                    ),
                ));
            }
            diff.push(d.max(0.0));
        }
        deficits.push(diff);
    }
    let gap = deficits.iter().map(|v| l1_norm(v)).sum::<f64>() / deficits.len() as f64;
    if gap == 0.0 {
        return Ok(g.clone());
    }
    let d = g.order() as i32;
    let scale = gap.powi(-(d - 1));
    let correction = Tensor::outer(&deficits)?.scaled(scale);
    g.add(&correction)
}

/// Round `f` into `U(P)`.
pub fn round_to_polytope(f: &Tensor, p: &MarginalFamily) -> Result<Tensor> {
    let (g, q) = shrink_to_submarginals(f, p)?;
    rank_one_correction(&g, &q, p)
}

/// The movement bound `2 Σ_j ‖p_j − s_j(F)‖_1`.
pub fn movement_bound(f: &Tensor, p: &MarginalFamily) -> Result<f64> {
    p.require_shape(f)?;
    Ok(2.0
        * f.marginals()
            .iter()
            .enumerate()
            .map(|(j, s)| crate::tensor::l1_distance(p.get(j), s))
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn running_example() -> (Tensor, MarginalFamily) {
        (
            Tensor::new(2, 2, vec![0.5, 0.0, 0.0, 0.5]).unwrap(),
            MarginalFamily::new(vec![vec![0.6, 0.4], vec![0.6, 0.4]]).unwrap(),
        )
    }

    #[test]
    fn shrink_hand_example() {
        let (f, p) = running_example();
        let (g, q) = shrink_to_submarginals(&f, &p).unwrap();
        for (x, y) in g.data().iter().zip([0.5, 0.0, 0.0, 0.4]) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
        for qj in &q {
            assert_relative_eq!(qj[0], 0.5, epsilon = 1e-15);
            assert_relative_eq!(qj[1], 0.4, epsilon = 1e-15);
        }
    }

    #[test]
    fn correction_hand_example() {
        let (f, p) = running_example();
        let (g, q) = shrink_to_submarginals(&f, &p).unwrap();
        let b = rank_one_correction(&g, &q, &p).unwrap();
        for (x, y) in b.data().iter().zip([0.6, 0.0, 0.0, 0.4]) {
            assert_relative_eq!(*x, y, epsilon = 1e-14);
        }
        assert_relative_eq!(b.l1_distance(&f).unwrap(), 0.2, epsilon = 1e-14);
        assert_relative_eq!(movement_bound(&f, &p).unwrap(), 0.8, epsilon = 1e-14);
    }

    #[test]
    fn feasible_plan_is_fixed() {
        let p = MarginalFamily::new(vec![vec![0.2, 0.8], vec![0.5, 0.5], vec![0.7, 0.3]]).unwrap();
        let f = p.product_plan();
        let (g, q) = shrink_to_submarginals(&f, &p).unwrap();
        assert_eq!(g, f);
        let b = rank_one_correction(&g, &q, &p).unwrap();
        assert!(b.l1_distance(&f).unwrap() < 1e-15);
    }

    #[test]
    fn excess_submarginal_is_a_contract_error() {
        let p = MarginalFamily::uniform(2, 2).unwrap();
        let g = Tensor::new(2, 2, vec![0.6, 0.0, 0.0, 0.4]).unwrap();
        let q = g.marginals();
        assert!(matches!(
            rank_one_correction(&g, &q, &p),
            Err(TotError::Contract { .. })
        ));
    }

    #[test]
    fn zero_tensor_rejected() {
        let p = MarginalFamily::uniform(2, 2).unwrap();
        assert!(round_to_polytope(&Tensor::zeros(2, 2).unwrap(), &p).is_err());
    }

    fn instance() -> impl Strategy<Value = (Tensor, MarginalFamily)> {
        (1usize..=4, 2usize..=3).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec(0.01f64..1.0, n.pow(d as u32)),
                proptest::collection::vec(proptest::collection::vec(0.05f64..1.0, n), d),
            )
                .prop_map(move |(data, ps)| {
                    let f = Tensor::new(d, n, data).unwrap();
                    let f = f.scaled(1.0 / f.sum());
                    let ps = ps
                        .into_iter()
                        .map(|v| {
                            let s: f64 = v.iter().sum();
                            v.into_iter().map(|x| x / s).collect()
                        })
                        .collect();
                    (f, MarginalFamily::new(ps).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn certified_rounding((f, p) in instance()) {
            let (g, q) = shrink_to_submarginals(&f, &p).unwrap();
            for (a, b) in g.data().iter().zip(f.data()) {
                prop_assert!(a <= b);
            }
            let hp = g.sum();
            for (j, qj) in q.iter().enumerate() {
                for (x, y) in qj.iter().zip(p.get(j)) {
                    prop_assert!(*x <= y + 1e-15);
                }
                prop_assert!((crate::tensor::ksum(qj.iter().copied()) - hp).abs() < 1e-12);
            }
            let b = rank_one_correction(&g, &q, &p).unwrap();
            prop_assert!(b.is_nonnegative());
            prop_assert!(((b.sum() - g.sum()) - (p.mass() - hp)).abs() < 1e-12);
            for (j, s) in b.marginals().iter().enumerate() {
                for (x, y) in s.iter().zip(p.get(j)) {
                    prop_assert!((x - y).abs() <= 1e-10);
                }
            }
            let moved = b.l1_distance(&f).unwrap();
            prop_assert!(moved <= movement_bound(&f, &p).unwrap() + 1e-10);
            let again = round_to_polytope(&b, &p).unwrap();
            prop_assert!(again.l1_distance(&b).unwrap() <= 1e-12);
        }
    }
}
