use monofact_core::seed::rng_from_seed;
use monofact_core::stats::{kolmogorov_sf, ks_two_sample};
use rand::Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    xs: Vec<f64>,
    ys: Vec<f64>,
    d: f64,
    p: f64,
}

fn cases() -> Vec<Case> {
    serde_json::from_str(include_str!("fixtures/ks_reference.json")).unwrap()
}

fn ecdf(sample: &[f64], t: f64) -> f64 {
    sample.iter().filter(|&&x| x <= t).count() as f64 / sample.len() as f64
}

fn brute_force_d(xs: &[f64], ys: &[f64]) -> f64 {
    xs.iter()
        .chain(ys)
        .map(|&t| (ecdf(xs, t) - ecdf(ys, t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matches_reference_implementation() {
    let cases = cases();
    assert_eq!(cases.len(), 100);
    for (i, c) in cases.iter().enumerate() {
        let r = ks_two_sample(&c.xs, &c.ys).unwrap();
        assert!(
            (r.d_statistic - c.d).abs() < 1e-12,
            "case {i}: d {} vs {}",
            r.d_statistic,
            c.d
        );
        assert!((r.p_value - c.p).abs() < 1e-3, "case {i}: p {} vs {}", r.p_value, c.p);
        assert_eq!((r.n1, r.n2), (c.xs.len(), c.ys.len()));
    }
}

#[test]
fn statistic_matches_brute_force_with_ties() {
    let mut rng = rng_from_seed(17);
    for _ in 0..100 {
        let n1 = rng.random_range(1..60);
        let n2 = rng.random_range(1..60);
        let shift = rng.random_range(0..4) as f64;
        let xs: Vec<f64> = (0..n1).map(|_| rng.random_range(0..12) as f64).collect();
        let ys: Vec<f64> = (0..n2).map(|_| rng.random_range(0..12) as f64 + shift).collect();
        let r = ks_two_sample(&xs, &ys).unwrap();
        assert!((r.d_statistic - brute_force_d(&xs, &ys)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.p_value));
    }
}

#[test]
fn kolmogorov_tail_known_values() {
    // Values of the Kolmogorov survival function.
    for (lambda, q) in [
        (0.5, 0.9639452436648751),
        (1.0, 0.26999967167735456),
        (1.36, 0.049485876755377876),
        (2.0, 0.0006709252557796953),
    ] {
        assert!((kolmogorov_sf(lambda) - q).abs() < 1e-7, "lambda {lambda}");
    }
    assert_eq!(kolmogorov_sf(0.0), 1.0);
}
