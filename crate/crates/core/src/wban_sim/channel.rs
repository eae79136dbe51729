//! Radio link budget and log-normal shadowing.

use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::handshake::{NodeId, SimTime};
use crate::stats::erfc;

use super::trace::{LinkStats, LinkTrace};
use super::SimError;

/// Transmitter and receiver characteristics shared by every node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadioParams<T = f64> {
    pub tx_power_dbm: T,
    pub sensitivity_dbm: T,
    pub bitrate_bps: T,
    /// PHY and MAC overhead added to every frame except acknowledgements.
    pub header_bytes: usize,
}

impl<T: Float> Default for RadioParams<T> {
    fn default() -> Self {
        let f = |x: f64| T::from(x).expect("radio constant");
        RadioParams { tx_power_dbm: f(-60.0), sensitivity_dbm: f(-100.0), bitrate_bps: f(250_000.0), header_bytes: 17 }
    }
}

impl<T: Float> RadioParams<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tx_power_dbm > self.sensitivity_dbm) {
            return Err(SimError::Config("transmit power must exceed sensitivity".into()));
        }
        if !(self.bitrate_bps > T::zero()) {
            return Err(SimError::Config("bitrate must be positive".into()));
        }
        Ok(())
    }

    /// Attenuation the link can absorb before the signal drops below
    /// sensitivity.
    pub fn budget_db(&self) -> T {
        self.tx_power_dbm - self.sensitivity_dbm
    }

    /// Time on air for `bytes` bytes, in nanoseconds.
    pub fn airtime(&self, bytes: usize) -> SimTime {
        let bits = T::from(bytes * 8).expect("frame size");
        let ns = bits * T::from(1e9).expect("scale") / self.bitrate_bps;
        ns.ceil().to_u64().unwrap_or(SimTime::MAX)
    }
}

/// Received power for attenuation `mean + std * z` where `z` is a
/// standard normal draw.
pub fn received_power<T: Float>(tx_power_dbm: T, mean_db: T, std_db: T, z: T) -> T {
    tx_power_dbm - (mean_db + std_db * z)
}

/// Standard normal CDF.
pub fn normal_cdf<T: Float>(x: T) -> T {
    let half = T::from(0.5).expect("half");
    half * erfc(-x / T::from(std::f64::consts::SQRT_2).expect("sqrt2"))
}

/// Probability that one transmission on a link clears sensitivity,
/// ignoring collisions.
pub fn delivery_probability<T: Float>(radio: &RadioParams<T>, mean_db: T, std_db: T) -> T {
    let margin = radio.budget_db() - mean_db;
    if std_db <= T::zero() {
        return if margin >= T::zero() { T::one() } else { T::zero() };
    }
    normal_cdf(margin / std_db)
}

/// Expected transmissions per success on a link, capped so unusable links
/// keep a finite but prohibitive cost.
pub fn link_etx(radio: &RadioParams<f64>, stats: LinkStats) -> f64 {
    let p = delivery_probability(radio, stats.mean_db, stats.std_db);
    if p < 0.05 {
        f64::INFINITY
    } else {
        1.0 / p
    }
}

/// Samples one transmission's received power on `src -> dst` at `now`.
pub fn sample_power<R: Rng + ?Sized>(
    trace: &LinkTrace,
    radio: &RadioParams<f64>,
    src: NodeId,
    dst: NodeId,
    now: SimTime,
    rng: &mut R,
) -> Result<f64, SimError> {
    let s = trace.link_at(now, src, dst)?;
    let z: f64 = if s.std_db > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
    Ok(received_power(radio.tx_power_dbm, s.mean_db, s.std_db, z))
}

/// Whether one transmission on `src -> dst` at `now` clears sensitivity.
/// Collisions are resolved separately by the MAC.
pub fn step_channel<R: Rng + ?Sized>(
    trace: &LinkTrace,
    radio: &RadioParams<f64>,
    src: NodeId,
    dst: NodeId,
    now: SimTime,
    rng: &mut R,
) -> Result<bool, SimError> {
    Ok(sample_power(trace, radio, src, dst, now, rng)? >= radio.sensitivity_dbm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wban_sim::trace::Posture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_margins() {
        let radio = RadioParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let near = LinkTrace::uniform(Posture::Sit, 20.0, 0.0);
        let far = LinkTrace::uniform(Posture::Sit, 50.0, 0.0);
        assert_eq!(sample_power(&near, &radio, 0, 1, 0, &mut rng).unwrap(), -80.0);
        assert!(step_channel(&near, &radio, 0, 1, 0, &mut rng).unwrap());
        assert_eq!(sample_power(&far, &radio, 0, 1, 0, &mut rng).unwrap(), -110.0);
        assert!(!step_channel(&far, &radio, 0, 1, 0, &mut rng).unwrap());
    }

    #[test]
    fn airtime_at_250_kbps() {
        let radio = RadioParams::<f64>::default();
        assert_eq!(radio.airtime(1), 32_000);
        assert_eq!(radio.airtime(125), 4_000_000);
    }

    #[test]
    fn radio_validation() {
        let bad = RadioParams { tx_power_dbm: -100.0, ..RadioParams::<f64>::default() };
        assert!(bad.validate().is_err());
        assert!(RadioParams::<f32>::default().validate().is_ok());
    }

    #[test]
    fn probability_is_half_at_the_budget() {
        let radio = RadioParams::<f64>::default();
        assert!((delivery_probability(&radio, 40.0, 5.0) - 0.5).abs() < 1e-7);
        assert_eq!(delivery_probability(&radio, 41.0, 0.0), 0.0);
        assert!(link_etx(&radio, LinkStats { mean_db: 60.0, std_db: 3.0 }).is_infinite());
    }
}
