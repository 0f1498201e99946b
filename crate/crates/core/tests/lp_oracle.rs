mod common;

use common::*;
use rand::Rng;
use tot_core::lp::{scalability_check, solve_exact_tot, LpOptions, PivotRule};
use tot_core::{round_to_polytope, Tensor, TotError};

#[test]
fn pivot_rules_agree() {
    let mut r = rng(31);
    for case in 0..30 {
        let d = 2 + case % 3;
        let n = 2 + (case / 3) % 3;
        let c = uniform_tensor(&mut r, d, n, 0.0, 1.0);
        let p = family(&mut r, d, n);
        let a = solve_exact_tot(&c, &p, &LpOptions::default()).unwrap();
        let bland = LpOptions {
            pivot_rule: PivotRule::Bland,
            ..LpOptions::default()
        };
        let b = solve_exact_tot(&c, &p, &bland).unwrap();
        assert!(
            (a.value - b.value).abs() <= 1e-9,
            "case {case}: {} vs {}",
            a.value,
            b.value
        );
        assert!(a.lp.duality_gap.abs() <= 1e-9);
        assert!(a.lp.dual_infeasibility <= 1e-9);
        assert!(max_marginal_error(&a.plan, &p) <= 1e-10);
        assert!(a.plan.data().iter().all(|&x| x >= -1e-12));
    }
}

#[test]
fn sampled_feasible_plans_never_beat_the_optimum() {
    let mut r = rng(32);
    for case in 0..20 {
        let d = 2 + case % 2;
        let n = 2 + case % 3;
        let c = uniform_tensor(&mut r, d, n, 0.0, 1.0);
        let p = family(&mut r, d, n);
        let tau = solve_exact_tot(&c, &p, &LpOptions::default())
            .unwrap()
            .value;
        for _ in 0..10 {
            let f = Tensor::from_fn(d, n, |_| r.gen_range(0.0..1.0)).unwrap();
            let f = f.scaled(1.0 / f.sum());
            let b = round_to_polytope(&f, &p).unwrap();
            assert!(c.inner(&b).unwrap() >= tau - 1e-10);
        }
        assert!(c.inner(&p.product_plan()).unwrap() >= tau - 1e-10);
    }
}

#[test]
fn size_cap_is_enforced() {
    let c = Tensor::zeros(3, 4).unwrap();
    let p = tot_core::MarginalFamily::uniform(3, 4).unwrap();
    let opts = LpOptions {
        max_variables: 10,
        ..LpOptions::default()
    };
    match solve_exact_tot(&c, &p, &opts) {
        Err(TotError::SizeCap { variables, cap }) => {
            assert_eq!((variables, cap), (64, 10));
        }
        other => panic!("expected a size cap error, got {other:?}"),
    }
}

#[test]
fn scalability_follows_support() {
    let p = tot_core::MarginalFamily::uniform(2, 2).unwrap();
    let diag = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(scalability_check(&diag, &p, &LpOptions::default()).unwrap());
    let skewed = tot_core::MarginalFamily::new(vec![vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
    assert!(!scalability_check(&diag, &skewed, &LpOptions::default()).unwrap());
    let row = Tensor::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    assert!(!scalability_check(&row, &p, &LpOptions::default()).unwrap());
}
