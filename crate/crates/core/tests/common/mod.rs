#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tot_core::{MarginalFamily, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A Dirichlet(1) draw: strictly positive, sums to one.
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3)
        .collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn family(rng: &mut ChaCha8Rng, d: usize, n: usize) -> MarginalFamily {
    MarginalFamily::new((0..d).map(|_| simplex(rng, n)).collect()).unwrap()
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, d: usize, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(d, n, |_| rng.gen_range(lo..hi)).unwrap()
}

pub fn max_marginal_error(t: &Tensor, p: &MarginalFamily) -> f64 {
    t.marginals()
        .iter()
        .enumerate()
        .flat_map(|(j, s)| {
            s.iter()
                .zip(p.get(j))
                .map(|(a, b)| (a - b).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

pub fn marginal_l1_errors(t: &Tensor, p: &MarginalFamily) -> Vec<f64> {
    t.marginals()
        .iter()
        .enumerate()
        .map(|(j, s)| s.iter().zip(p.get(j)).map(|(a, b)| (a - b).abs()).sum())
        .collect()
}
