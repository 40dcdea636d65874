#![allow(dead_code)]

use kcheck::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Kolmogorov–Smirnov statistic of `sample` against U(0, 1).
pub fn ks_statistic(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - u).max(u - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS test, with the usual
/// small-sample correction of the argument.
pub fn ks_uniform_p(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let d = ks_statistic(sample);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn equispaced(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// `y = f(x) + sigma * z` on an even grid of [0, 1].
pub fn univariate_data(n: usize, f: impl Fn(f64) -> f64, sigma: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = equispaced(n);
    let y = x
        .iter()
        .map(|&v| f(v) + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new()
        .with_column("x", x)
        .unwrap()
        .with_column("y", y)
        .unwrap()
}

#[test]
fn ks_helper_sanity() {
    let uniform: Vec<f64> = (0..500).map(|i| (i as f64 + 0.5) / 500.0).collect();
    assert!(ks_uniform_p(&uniform) > 0.99);
    let skewed: Vec<f64> = uniform.iter().map(|u| u * u).collect();
    assert!(ks_uniform_p(&skewed) < 1e-6);
    // Tabulated: D = 0.1358 at n = 100 is the 5% critical value.
    let mut v: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
    v.iter_mut().for_each(|u| *u = (*u + 0.1308).min(1.0));
    let p = ks_uniform_p(&v);
    assert!((0.03..0.08).contains(&p), "{p}");
}
