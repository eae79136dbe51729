//! Replication statistics: sample mean, sample deviation, Student-t
//! quantiles and the confidence half-width reported next to every mean.
//!
//! Everything is generic over [`num_traits::Float`]; the crate root exposes
//! `f64` instantiations.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

/// Two-tailed significance used for every reported interval.
pub const DEFAULT_ALPHA: f64 = 0.05;

fn c<T: Float>(x: f64) -> T {
    T::from(x).expect("constant fits the float type")
}

/// Log-gamma by the Lanczos approximation (g = 7, nine coefficients).
pub fn ln_gamma<T: Float>(x: T) -> T {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = c::<T>(0.5);
    if x < half {
        // Reflection keeps the series in its accurate range.
        let pi = c::<T>(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = c::<T>(COEF[0]);
    for (i, &k) in COEF.iter().enumerate().skip(1) {
        acc = acc + c::<T>(k) / (x + c::<T>(i as f64));
    }
    let t = x + c::<T>(G) + half;
    c::<T>(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf<T: Float>(a: T, b: T, x: T) -> T {
    let tiny = c::<T>(1e-300).max(T::min_positive_value());
    let eps = T::epsilon() * c::<T>(4.0);
    let one = T::one();
    let two = c::<T>(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut cc = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = c::<T>(m as f64);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        cc = one + aa / cc;
        if cc.abs() < tiny {
            cc = tiny;
        }
        d = one / d;
        h = h * d * cc;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        cc = one + aa / cc;
        if cc.abs() < tiny {
            cc = tiny;
        }
        d = one / d;
        let del = d * cc;
        h = h * del;
        if (del - one).abs() < eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_beta<T: Float>(x: T, a: T, b: T) -> Result<T, StatsError> {
    if !(a > T::zero() && b > T::zero()) {
        return Err(StatsError::Domain("beta shape parameters must be positive"));
    }
    if !(x >= T::zero() && x <= T::one()) {
        return Err(StatsError::Domain("beta argument must lie in [0, 1]"));
    }
    if x == T::zero() || x == T::one() {
        return Ok(x);
    }
    let one = T::one();
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln();
    let front = ln_front.exp();
    if x < (a + one) / (a + b + c::<T>(2.0)) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(one - front * beta_cf(b, a, one - x) / b)
    }
}

/// Complementary error function, rational Chebyshev fit with relative error
/// below 1.2e-7 everywhere.
pub fn erfc<T: Float>(x: T) -> T {
    let z = x.abs();
    let t = T::one() / (T::one() + c::<T>(0.5) * z);
    let poly = [
        -1.265_512_23,
        1.000_023_68,
        0.374_091_96,
        0.096_784_18,
        -0.186_288_06,
        0.278_868_07,
        -1.135_203_98,
        1.488_515_87,
        -0.822_152_23,
        0.170_872_77,
    ];
    let mut acc = c::<T>(poly[9]);
    for &k in poly[..9].iter().rev() {
        acc = c::<T>(k) + t * acc;
    }
    let ans = t * (-z * z + acc).exp();
    if x >= T::zero() {
        ans
    } else {
        c::<T>(2.0) - ans
    }
}

/// P(|T| > t) for Student's t with `df` degrees of freedom; `df = inf` is
/// the standard normal.
pub fn student_t_two_tail<T: Float>(t: T, df: T) -> Result<T, StatsError> {
    if !(df > T::zero()) {
        return Err(StatsError::Domain("degrees of freedom must be positive"));
    }
    let t = t.abs();
    if df.is_infinite() {
        return Ok(erfc(t / c::<T>(std::f64::consts::SQRT_2)));
    }
    regularized_beta(df / (df + t * t), df / c::<T>(2.0), c::<T>(0.5))
}

/// Two-tailed critical value: the `t` with P(|T| > t) = `alpha`.
///
/// Found by bisection on the tail probability, which is strictly decreasing
/// in `t`.
pub fn student_t_quantile<T: Float>(alpha: T, df: T) -> Result<T, StatsError> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(StatsError::Domain("alpha must lie in (0, 1)"));
    }
    if !(df > T::zero()) {
        return Err(StatsError::Domain("degrees of freedom must be positive"));
    }
    let mut lo = T::zero();
    let mut hi = T::one();
    while student_t_two_tail(hi, df)? > alpha {
        lo = hi;
        hi = hi * c::<T>(2.0);
        if hi > c::<T>(1e12) {
            return Err(StatsError::Domain("quantile out of range"));
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) / c::<T>(2.0);
        if mid == lo || mid == hi {
            break;
        }
        if student_t_two_tail(mid, df)? > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo + hi) / c::<T>(2.0))
}

pub fn mean<T: Float>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let n = c::<T>(xs.len() as f64);
    Some(xs.iter().fold(T::zero(), |a, &x| a + x) / n)
}

/// Sample standard deviation with the R - 1 denominator.
pub fn sample_std_dev<T: Float>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    Some((ss / c::<T>((xs.len() - 1) as f64)).sqrt())
}

/// Confidence half-width beta = t(alpha, R - 1) * S / sqrt(R).
pub fn confidence_half_width<T: Float>(xs: &[T], alpha: T) -> Result<T, StatsError> {
    let s = sample_std_dev(xs).ok_or(StatsError::TooFewSamples { needed: 2, got: xs.len() })?;
    let r = c::<T>(xs.len() as f64);
    let t = student_t_quantile(alpha, r - T::one())?;
    Ok(t * s / r.sqrt())
}

/// Mean, half-width and range of one metric over R replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<T> {
    pub n: usize,
    pub mean: T,
    pub half_width: T,
    pub min: T,
    pub max: T,
}

impl<T: Float> Summary<T> {
    /// Summarizes at the default 95% two-tailed level.
    pub fn from_samples(xs: &[T]) -> Result<Self, StatsError> {
        Self::with_alpha(xs, c::<T>(DEFAULT_ALPHA))
    }

    pub fn with_alpha(xs: &[T], alpha: T) -> Result<Self, StatsError> {
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::Domain("samples must be finite"));
        }
        let half_width = confidence_half_width(xs, alpha)?;
        let mean = mean(xs).expect("non-empty after the half-width check");
        let min = xs.iter().copied().fold(T::infinity(), T::min);
        let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
        Ok(Summary { n: xs.len(), mean, half_width, min, max })
    }

    pub fn lower(&self) -> T {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> T {
        self.mean + self.half_width
    }

    /// True when this interval lies entirely below `other`.
    pub fn strictly_below(&self, other: &Self) -> bool {
        self.upper() < other.lower()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut f = 1.0f64;
        for n in 1..15 {
            assert!((ln_gamma(n as f64) - f.ln()).abs() < 1e-10);
            f *= n as f64;
        }
        assert!((ln_gamma(0.5f64) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn known_quantiles() {
        assert!((student_t_quantile(0.05, 1.0f64).unwrap() - 12.706).abs() < 1e-3);
        assert!((student_t_quantile(0.05, 4.0f64).unwrap() - 2.776).abs() < 1e-3);
        assert!((student_t_quantile(0.05, f64::INFINITY).unwrap() - 1.960).abs() < 1e-3);
    }

    #[test]
    fn works_in_single_precision() {
        let t = student_t_quantile(0.05f32, 19.0).unwrap();
        assert!((t - 2.093).abs() < 1e-2);
    }

    #[test]
    fn domain_errors() {
        assert!(student_t_quantile(0.0, 5.0f64).is_err());
        assert!(student_t_quantile(1.0, 5.0f64).is_err());
        assert!(student_t_quantile(0.05, 0.0f64).is_err());
        assert!(student_t_quantile(0.05, -3.0f64).is_err());
        assert!(Summary::from_samples(&[1.0f64]).is_err());
        assert!(Summary::from_samples(&[1.0f64, f64::NAN]).is_err());
    }

    #[test]
    fn zero_variance_gives_zero_half_width() {
        let s = Summary::from_samples(&[0.75f64; 10]).unwrap();
        assert_eq!(s.half_width, 0.0);
        assert_eq!(s.mean, 0.75);
    }

    #[test]
    fn five_sample_fixture() {
        // Worked by hand: mean 4, S^2 = 6/4, t(0.025, 4) = 2.776445.
        let s = Summary::from_samples(&[2.0f64, 4.0, 4.0, 5.0, 5.0]).unwrap();
        assert_eq!(s.mean, 4.0);
        assert!((s.half_width - 1.520_722).abs() < 1e-5);
        assert_eq!((s.min, s.max), (2.0, 5.0));
    }
}
