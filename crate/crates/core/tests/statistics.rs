//! Sampling statistics of the reward model against closed forms.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use qrrn::env::{reward_sample, trunc_normal, EnvConfig};
use qrrn::rng::rng_from_seed;
use qrrn::roadnet::{generate_scenario, ScenarioKind, ScenarioParams};

/// Mean and standard deviation of N(0, 1) truncated to `[a, b]`.
fn truncated_moments(a: f64, b: f64) -> (f64, f64) {
    let phi = Normal::new(0.0, 1.0).unwrap();
    let z = phi.cdf(b) - phi.cdf(a);
    let mean = (phi.pdf(a) - phi.pdf(b)) / z;
    let var = 1.0 + (a * phi.pdf(a) - b * phi.pdf(b)) / z - mean * mean;
    (mean, var.sqrt())
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn standard_truncation_matches_closed_form() {
    let mut rng = rng_from_seed(31);
    let xs: Vec<f64> = (0..100_000).map(|_| trunc_normal(0.0, 1.0, -3.0, 3.0, &mut rng).unwrap()).collect();
    assert!(xs.iter().all(|x| (-3.0..=3.0).contains(x)));
    let (m, s) = moments(&xs);
    let (em, es) = truncated_moments(-3.0, 3.0);
    assert!((es - 0.98658).abs() < 1e-4);
    assert!((m - em).abs() < 0.02, "mean {}", m);
    assert!((s - es).abs() < 0.02, "std {} vs {}", s, es);
}

#[test]
fn asymmetric_truncation_matches_closed_form() {
    let mut rng = rng_from_seed(32);
    let xs: Vec<f64> = (0..200_000).map(|_| trunc_normal(1.0, 2.0, 0.0, 6.0, &mut rng).unwrap()).collect();
    let (m, s) = moments(&xs);
    let (em, es) = truncated_moments(-0.5, 2.5);
    assert!((m - (1.0 + 2.0 * em)).abs() < 0.01, "mean {}", m);
    assert!((s - 2.0 * es).abs() < 0.01, "std {}", s);
}

#[test]
fn crosswalk_reward_is_unbiased() {
    let params = ScenarioParams { noisy_len: 8, robust_len: 10, robust2_len: None };
    let map = generate_scenario(ScenarioKind::TwoRoute, params).unwrap();
    let cw = *map.crosswalks().iter().next().unwrap();
    let prev = map.edges().iter().find(|e| e.to == cw).unwrap().from;
    let cfg = EnvConfig::new(3.0, 18.0);
    let mut rng = rng_from_seed(33);
    let xs: Vec<f64> = (0..100_000).map(|_| reward_sample(&map, cw, prev, &cfg, &mut rng).unwrap()).collect();
    let (m, s) = moments(&xs);
    let se = s / (xs.len() as f64).sqrt();
    assert!((m + 3.0).abs() <= 3.0 * se, "mean {} se {}", m, se);
}
