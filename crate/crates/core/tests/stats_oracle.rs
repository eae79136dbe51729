use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use wbanzkp::stats::*;

/// Student-t density, written out from the closed form.
fn t_density(x: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// P(0 < T < t) by composite Simpson quadrature.
fn simpson_mass(t: f64, df: f64) -> f64 {
    let n = 20_000;
    let h = t / n as f64;
    let mut acc = t_density(0.0, df) + t_density(t, df);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * t_density(i as f64 * h, df);
    }
    acc * h / 3.0
}

/// Two-tailed quantile from quadrature plus bisection.
fn quadrature_quantile(alpha: f64, df: f64) -> f64 {
    let target = (1.0 - alpha) / 2.0;
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..60 {
        let mid = (lo + hi) / 2.0;
        if simpson_mass(mid, df) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

#[test]
fn quantiles_agree_with_statrs_and_quadrature() {
    for df in [1.0, 19.0, 199.0] {
        let ours = student_t_quantile(0.05, df).unwrap();
        let statrs = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
        let quad = quadrature_quantile(0.05, df);
        assert!((ours - statrs).abs() < 1e-3, "df {df}: {ours} vs statrs {statrs}");
        assert!((ours - quad).abs() < 1e-3, "df {df}: {ours} vs quadrature {quad}");
    }
}

#[test]
fn large_df_approaches_the_normal_quantile() {
    let t: f64 = student_t_quantile(0.05, 1e7).unwrap();
    assert!((t - 1.960).abs() < 1e-3);
    let z: f64 = student_t_quantile(0.05, f64::INFINITY).unwrap();
    assert!((z - 1.960).abs() < 1e-3);
}

proptest! {
    #[test]
    fn tail_matches_statrs(t in 0.0f64..20.0, df in 1.0f64..300.0) {
        let ours = student_t_two_tail(t, df).unwrap();
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        let theirs = 2.0 * (1.0 - dist.cdf(t));
        prop_assert!((ours - theirs).abs() < 1e-8);
    }

    #[test]
    fn quantile_inverts_the_tail(alpha in 0.001f64..0.999, df in 1.0f64..500.0) {
        let t = student_t_quantile(alpha, df).unwrap();
        prop_assert!((student_t_two_tail(t, df).unwrap() - alpha).abs() < 1e-9);
    }

    #[test]
    fn interval_contains_mean_and_is_shift_invariant(
        xs in prop::collection::vec(-1e3f64..1e3, 2..40),
        shift in -1e3f64..1e3,
    ) {
        let s = Summary::from_samples(&xs).unwrap();
        prop_assert!(s.half_width >= 0.0);
        prop_assert!(s.min <= s.mean + 1e-9 && s.mean <= s.max + 1e-9);
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let t = Summary::from_samples(&shifted).unwrap();
        prop_assert!((t.half_width - s.half_width).abs() < 1e-6 * (1.0 + s.half_width));
    }
}
