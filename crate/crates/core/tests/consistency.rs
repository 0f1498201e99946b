mod common;

use common::*;
use tot_core::pm::{g_problem, g_value, pm_minimize};
use tot_core::subspace::support_subspaces;
use tot_core::{sinkhorn_scale, ScalingVectors, SinkhornConfig};

/// Greedy Sinkhorn and PM with exact block steps on `g_A` visit the same
/// tensors up to normalization.
#[test]
fn sinkhorn_matches_pm_iterates() {
    let mut r = rng(21);
    for case in 0..12 {
        let d = 2 + case % 3;
        let n = 2 + (case / 3) % 3;
        let a = uniform_tensor(&mut r, d, n, 0.05, 1.0);
        let a = a.scaled(1.0 / a.sum());
        let p = family(&mut r, d, n);
        let res = sinkhorn_scale(&a, &p, &SinkhornConfig::new(0.01).unwrap()).unwrap();
        let m = res.trace.records.len();

        let bases = support_subspaces(&a, &p).unwrap();
        let mut prob = g_problem(&a, &p, &bases);
        prob.max_iter = m;
        prob.tol = 0.0;
        let run = pm_minimize(&prob).unwrap();

        for (k, rec) in res.trace.records.iter().enumerate() {
            assert_eq!(run.trace[k].block, rec.mode, "case {case}, step {k}");
        }
        let y = ScalingVectors::from_flat(d, n, run.x.as_slice()).unwrap();
        let pm_tensor = a.apply_scaling(&y).unwrap();
        let pm_tensor = pm_tensor.scaled(1.0 / pm_tensor.l1_norm());
        let err = pm_tensor.l1_distance(&res.tensor).unwrap();
        assert!(err <= 1e-9, "case {case}: iterates differ by {err:e}");
    }
}

#[test]
fn pm_decreases_g_monotonically() {
    let mut r = rng(22);
    let a = uniform_tensor(&mut r, 3, 3, 0.1, 1.0);
    let a = a.scaled(1.0 / a.sum());
    let p = family(&mut r, 3, 3);
    let bases = support_subspaces(&a, &p).unwrap();
    let run = pm_minimize(&g_problem(&a, &p, &bases)).unwrap();
    assert!(run.converged);
    for w in run.f_values.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
    // the blocks fix each marginal only up to the common mass
    let y = ScalingVectors::from_flat(3, 3, run.x.as_slice()).unwrap();
    let scaled = a.apply_scaling(&y).unwrap();
    let scaled = scaled.scaled(1.0 / scaled.l1_norm());
    assert!(max_marginal_error(&scaled, &p) < 1e-9);
    let f0 = g_value(&a, &p, &ScalingVectors::zeros(3, 3)).unwrap();
    assert!((run.f_values[0] - f0).abs() < 1e-15);
}

#[test]
fn newton_fallback_agrees_with_closed_form() {
    let mut r = rng(23);
    let a = uniform_tensor(&mut r, 2, 3, 0.1, 1.0);
    let p = family(&mut r, 2, 3);
    let bases = support_subspaces(&a, &p).unwrap();
    let exact = pm_minimize(&g_problem(&a, &p, &bases)).unwrap();
    let mut fallback = g_problem(&a, &p, &bases);
    fallback.inner = None;
    fallback.tol = 1e-9;
    let run = pm_minimize(&fallback).unwrap();
    assert!(run.converged);
    let f_exact = *exact.f_values.last().unwrap();
    let f_newton = *run.f_values.last().unwrap();
    assert!((f_exact - f_newton).abs() < 1e-10);
}

#[test]
fn rescaling_is_invariant_under_mass() {
    let mut r = rng(24);
    let a = uniform_tensor(&mut r, 3, 2, 0.1, 1.0);
    let p = family(&mut r, 3, 2);
    let cfg = SinkhornConfig::new(0.05).unwrap();
    let x = sinkhorn_scale(&a, &p, &cfg).unwrap();
    let y = sinkhorn_scale(&a.scaled(7.5), &p, &cfg).unwrap();
    assert!(x.tensor.l1_distance(&y.tensor).unwrap() < 1e-12);
}
