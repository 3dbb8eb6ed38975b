//! Photon counting: singles, true and accidental coincidences, Poisson noise.
//!
//! Rates are modelled at the Poisson-mean level. Randomness is drawn from ChaCha8 streams
//! keyed by `(seed, stream)`, so a point's counts depend only on the seed and its index.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interference::HomCurve;

/// Stream index reserved for the drift random walk.
pub const DRIFT_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("invalid detector parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("count I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Slow multiplicative modulation of the pair rate: a sinusoid plus a Gaussian random walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    /// Relative amplitude of the sinusoid.
    pub amplitude: f64,
    pub period_s: f64,
    /// Random-walk diffusion of the relative rate, per √s.
    pub walk_per_sqrt_s: f64,
}

/// Running drift state.
#[derive(Debug, Clone)]
pub struct DriftState {
    model: DriftModel,
    rng: ChaCha8Rng,
    walk: f64,
    elapsed_s: f64,
}

impl DriftState {
    pub fn new(model: DriftModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DRIFT_STREAM);
        DriftState {
            model,
            rng,
            walk: 0.0,
            elapsed_s: 0.0,
        }
    }

    /// Multiplier for an exposure of `dt_s` starting now; advances the clock.
    pub fn advance(&mut self, dt_s: f64) -> f64 {
        let m = &self.model;
        let t_mid = self.elapsed_s + 0.5 * dt_s;
        let sine = if m.period_s > 0.0 {
            m.amplitude * (2.0 * PI * t_mid / m.period_s).sin()
        } else {
            0.0
        };
        if m.walk_per_sqrt_s > 0.0 {
            let step = Normal::new(0.0, m.walk_per_sqrt_s * dt_s.sqrt()).expect("finite sigma");
            self.walk += step.sample(&mut self.rng);
        }
        self.elapsed_s += dt_s;
        (1.0 + sine + self.walk).max(0.0)
    }
}

/// Detection chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub pair_rate_hz: f64,
    pub efficiency_1: f64,
    pub efficiency_2: f64,
    pub dark_rate_1_hz: f64,
    pub dark_rate_2_hz: f64,
    pub coincidence_window_s: f64,
    pub integration_time_s: f64,
    pub drift: Option<DriftModel>,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            pair_rate_hz: 1.0e6,
            efficiency_1: 0.25,
            efficiency_2: 0.25,
            dark_rate_1_hz: 100.0,
            dark_rate_2_hz: 100.0,
            coincidence_window_s: 1.62e-9,
            integration_time_s: 0.05,
            drift: None,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let bad = |name: &'static str, message: String| Err(DetectionError::InvalidParameter { name, message });
        for (name, v) in [
            ("pair_rate_hz", self.pair_rate_hz),
            ("dark_rate_1_hz", self.dark_rate_1_hz),
            ("dark_rate_2_hz", self.dark_rate_2_hz),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be a finite rate ≥ 0, got {v}"));
            }
        }
        for (name, v) in [("efficiency_1", self.efficiency_1), ("efficiency_2", self.efficiency_2)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(name, format!("must lie in (0, 1], got {v}"));
            }
        }
        if !(self.coincidence_window_s > 0.0) {
            return bad("coincidence_window_s", format!("must be positive, got {}", self.coincidence_window_s));
        }
        if !(self.integration_time_s > 0.0) {
            return bad("integration_time_s", format!("must be positive, got {}", self.integration_time_s));
        }
        Ok(())
    }

    pub fn with_integration_time(&self, integration_time_s: f64) -> Self {
        DetectorModel {
            integration_time_s,
            ..*self
        }
    }
}

/// Mean rates for one coincidence probability, Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub singles_1_hz: f64,
    pub singles_2_hz: f64,
    pub true_coincidence_hz: f64,
    pub accidental_hz: f64,
    pub coincidence_hz: f64,
}

/// Mean singles and coincidence rates for coincidence probability `probability`.
///
/// True coincidences are `R·η1·η2·2p`, so the far-delay value `p = ½` gives the uncorrelated
/// pair coincidence rate; accidentals are `s1·s2·τ`.
pub fn expected_rates(probability: f64, detector: &DetectorModel) -> Result<Rates, DetectionError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(DetectionError::Probability(probability));
    }
    Ok(rates_scaled(probability, detector, 1.0))
}

fn rates_scaled(probability: f64, d: &DetectorModel, rate_scale: f64) -> Rates {
    let r = d.pair_rate_hz * rate_scale;
    let s1 = r * d.efficiency_1 + d.dark_rate_1_hz;
    let s2 = r * d.efficiency_2 + d.dark_rate_2_hz;
    let t = r * d.efficiency_1 * d.efficiency_2 * 2.0 * probability;
    let a = s1 * s2 * d.coincidence_window_s;
    Rates {
        singles_1_hz: s1,
        singles_2_hz: s2,
        true_coincidence_hz: t,
        accidental_hz: a,
        coincidence_hz: t + a,
    }
}

/// Counts recorded at one delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub delay_um: f64,
    pub singles_1: u64,
    pub singles_2: u64,
    pub coincidences: u64,
    pub seed: u64,
}

/// Poisson draw that tolerates a zero mean.
pub fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

/// Random source for point `stream` of a run seeded with `seed`.
pub fn point_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw one record for a probability, with an optional pair-rate multiplier.
pub fn draw_record(
    probability: f64,
    delay_um: f64,
    detector: &DetectorModel,
    rate_scale: f64,
    seed: u64,
    stream: u64,
) -> CountRecord {
    let rates = rates_scaled(probability.clamp(0.0, 1.0), detector, rate_scale);
    let t = detector.integration_time_s;
    let mut rng = point_rng(seed, stream);
    CountRecord {
        delay_um,
        singles_1: poisson(rates.singles_1_hz * t, &mut rng),
        singles_2: poisson(rates.singles_2_hz * t, &mut rng),
        coincidences: poisson(rates.coincidence_hz * t, &mut rng),
        seed,
    }
}

/// One Poisson-noised record per curve point; point `i` uses stream `i`.
pub fn simulate_counts(curve: &HomCurve, detector: &DetectorModel, seed: u64) -> Result<Vec<CountRecord>, DetectionError> {
    detector.validate()?;
    let scales: Vec<f64> = match detector.drift {
        Some(m) => {
            let mut st = DriftState::new(m, seed);
            (0..curve.len()).map(|_| st.advance(detector.integration_time_s)).collect()
        }
        None => vec![1.0; curve.len()],
    };
    Ok((0..curve.len())
        .into_par_iter()
        .map(|i| draw_record(curve.probability[i], curve.delay_um[i], detector, scales[i], seed, i as u64))
        .collect())
}

/// CSV with columns `delay_um,singles_1,singles_2,coincidences,seed`.
pub fn write_counts_csv<W: Write>(records: &[CountRecord], mut w: W) -> Result<(), DetectionError> {
    writeln!(w, "delay_um,singles_1,singles_2,coincidences,seed")?;
    for r in records {
        writeln!(
            w,
            "{:.11e},{},{},{},{}",
            r.delay_um,
            r.singles_1,
            r.singles_2,
            r.coincidences,
            r.seed
        )?;
    }
    Ok(())
}
