//! Measurement campaigns on a simulated instrument.
//!
//! The [`Instrument`] holds the stage position, the sample temperature and the counting
//! chain. Campaigns locate the dip, calibrate counts against delay on one flank and then
//! step the sample temperature:
//!
//! - [`run_calibration_sweep`]: delay versus temperature over a few degrees at a fixed stage.
//! - [`run_stability_trace`]: repeated reads on temperature plateaus at a fixed stage.
//! - [`run_linear_measurement`]: group-index change from delay readings in the linear region.
//! - [`run_compensated_sweep`]: after each temperature step the stage is moved until the
//!   counts return to the setpoint, so the delay readout always works at the same point.
//!
//! Positions on the chosen flank are expressed as a separation `s = side·(stage − x_ref)`
//! from the located dip reference `x_ref`, with `side = +1` above and `−1` below the dip.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biphoton::SpectralDensity;
use crate::detection::{draw_record, CountRecord, DetectionError, DetectorModel, DriftState};
use crate::error::ErrorKind;
use crate::estimation::{
    calibrate_linear_region, delay_from_counts, delta_ng_with_base, fit_gaussian_dip, DipFit, EstimationError,
    SlopeCalibration,
};
use crate::interference::{Arm, ArmSample, HomEngine, InterferenceError};
use crate::materials::{MaterialError, Sample};

/// Temperature resolution of the oven, °C.
pub const TEMPERATURE_RESOLUTION_C: f64 = 0.1;

/// Maximum stage moves per compensation step.
pub const MAX_COMPENSATION_MOVES: usize = 50;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("temperature range is empty; nothing to measure")]
    EmptyRun,
    #[error("temperature {0} °C outside the oven range [{1}, {2}] °C")]
    OvenRange(f64, f64, f64),
    #[error("stage position {position_um} µm outside travel [{min_um}, {max_um}] µm")]
    StageTravel { position_um: f64, min_um: f64, max_um: f64 },
    #[error("counts left the calibrated range at {temperature_c} °C ({source}); recalibrate or restart from a new initial point")]
    OutOfCalibratedRange {
        temperature_c: f64,
        #[source]
        source: EstimationError,
    },
    #[error("compensation failed at {temperature_c} °C after {moves} moves; state: {state}")]
    CompensationFault {
        temperature_c: f64,
        moves: usize,
        state: String,
    },
    #[error("dip not found: {0}")]
    DipNotFound(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Interference(#[from] InterferenceError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
}

impl ProtocolError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ProtocolError::InvalidParameter { .. } | ProtocolError::EmptyRun => ErrorKind::Config,
            ProtocolError::OvenRange(..) | ProtocolError::StageTravel { .. } => ErrorKind::Range,
            ProtocolError::OutOfCalibratedRange { .. } | ProtocolError::CompensationFault { .. } => ErrorKind::Protocol,
            ProtocolError::DipNotFound(_) => ErrorKind::Fit,
            ProtocolError::Estimation(e) => e.kind(),
            ProtocolError::Interference(e) => e.kind(),
            ProtocolError::Material(e) => e.kind(),
            ProtocolError::Detection(_) => ErrorKind::Config,
        }
    }
}

fn invalid(name: &'static str, message: impl Into<String>) -> ProtocolError {
    ProtocolError::InvalidParameter {
        name,
        message: message.into(),
    }
}

/// Round a temperature to the oven resolution.
pub fn quantize_temperature(t: f64) -> f64 {
    let steps_per_degree = TEMPERATURE_RESOLUTION_C.recip().round();
    (t * steps_per_degree).round() / steps_per_degree
}

/// Static description of the simulated instrument.
#[derive(Debug, Clone)]
pub struct InstrumentConfig {
    pub spectrum: Arc<SpectralDensity>,
    /// Sample with its reference length; its temperature is ignored in favour of the oven.
    pub sample: Sample,
    pub arm: Arm,
    pub displaces_air: bool,
    pub detector: DetectorModel,
    pub visibility0: f64,
    pub seed: u64,
    pub stage_travel_um: [f64; 2],
    pub oven_range_c: [f64; 2],
}

/// Snapshot of the mutable instrument state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstrumentState {
    pub stage_position_um: f64,
    pub crystal_temperature_c: f64,
    pub rng_cursor: u64,
    pub elapsed_s: f64,
}

/// Stateful simulated interferometer.
#[derive(Debug, Clone)]
pub struct Instrument {
    cfg: InstrumentConfig,
    engine: HomEngine,
    stage_um: f64,
    temperature_c: f64,
    cursor: u64,
    drift: Option<DriftState>,
    elapsed_s: f64,
}

impl Instrument {
    pub fn new(cfg: InstrumentConfig, temperature_c: f64, stage_um: f64) -> Result<Self, ProtocolError> {
        cfg.detector.validate()?;
        let [o0, o1] = cfg.oven_range_c;
        if !(o0 < o1) {
            return Err(invalid("oven_range_c", format!("bad interval [{o0}, {o1}]")));
        }
        let [s0, s1] = cfg.stage_travel_um;
        if !(s0 < s1) {
            return Err(invalid("stage_travel_um", format!("bad interval [{s0}, {s1}]")));
        }
        let t = quantize_temperature(temperature_c);
        let engine = Self::build_engine(&cfg, t)?;
        let drift = cfg.detector.drift.map(|m| DriftState::new(m, cfg.seed));
        let mut inst = Instrument {
            cfg,
            engine,
            stage_um: 0.0,
            temperature_c: t,
            cursor: 0,
            drift,
            elapsed_s: 0.0,
        };
        inst.check_oven(t)?;
        inst.move_stage(stage_um)?;
        Ok(inst)
    }

    fn build_engine(cfg: &InstrumentConfig, t: f64) -> Result<HomEngine, ProtocolError> {
        let sample = cfg.sample.at_temperature(t)?;
        let arm = ArmSample {
            sample,
            arm: cfg.arm,
            displaces_air: cfg.displaces_air,
        };
        Ok(HomEngine::new(&cfg.spectrum, Some(&arm), cfg.visibility0)?)
    }

    fn check_oven(&self, t: f64) -> Result<(), ProtocolError> {
        let [lo, hi] = self.cfg.oven_range_c;
        if t < lo - 1e-9 || t > hi + 1e-9 {
            return Err(ProtocolError::OvenRange(t, lo, hi));
        }
        Ok(())
    }

    pub fn config(&self) -> &InstrumentConfig {
        &self.cfg
    }

    pub fn state(&self) -> InstrumentState {
        InstrumentState {
            stage_position_um: self.stage_um,
            crystal_temperature_c: self.temperature_c,
            rng_cursor: self.cursor,
            elapsed_s: self.elapsed_s,
        }
    }

    pub fn stage_um(&self) -> f64 {
        self.stage_um
    }

    pub fn temperature_c(&self) -> f64 {
        self.temperature_c
    }

    /// Settle the oven at `t` (quantized to 0.1 °C); settling is instantaneous.
    pub fn set_temperature(&mut self, t: f64) -> Result<(), ProtocolError> {
        let t = quantize_temperature(t);
        self.check_oven(t)?;
        if t != self.temperature_c {
            self.engine = Self::build_engine(&self.cfg, t)?;
            self.temperature_c = t;
        }
        Ok(())
    }

    pub fn move_stage(&mut self, position_um: f64) -> Result<(), ProtocolError> {
        let [lo, hi] = self.cfg.stage_travel_um;
        if !(position_um >= lo && position_um <= hi) {
            return Err(ProtocolError::StageTravel {
                position_um,
                min_um: lo,
                max_um: hi,
            });
        }
        self.stage_um = position_um;
        Ok(())
    }

    /// Noiseless coincidence probability at the current stage position.
    pub fn probability(&self) -> f64 {
        self.engine.probability(self.stage_um)
    }

    /// One exposure of `integration_time_s` at the current state.
    pub fn read(&mut self, integration_time_s: f64) -> CountRecord {
        let det = self.cfg.detector.with_integration_time(integration_time_s);
        let scale = match &mut self.drift {
            Some(d) => d.advance(integration_time_s),
            None => 1.0,
        };
        let rec = draw_record(self.probability(), self.stage_um, &det, scale, self.cfg.seed, self.cursor);
        self.cursor += 1;
        self.elapsed_s += integration_time_s;
        rec
    }

    /// Scan the stage over `positions`, one read each, and return to the original position.
    pub fn scan(&mut self, positions: &[f64], integration_time_s: f64) -> Result<Vec<CountRecord>, ProtocolError> {
        let home = self.stage_um;
        let mut out = Vec::with_capacity(positions.len());
        for &x in positions {
            self.move_stage(x)?;
            out.push(self.read(integration_time_s));
        }
        self.move_stage(home)?;
        Ok(out)
    }

    /// Dip position predicted by the dispersion model at the current temperature, µm.
    pub fn predicted_dip_um(&self, wavelength_um: f64) -> Result<f64, ProtocolError> {
        let s = self.cfg.sample.at_temperature(self.temperature_c)?;
        let ng = s.group_index(wavelength_um)?;
        let air = if self.cfg.displaces_air { s.length_mm * 1e3 } else { 0.0 };
        let x = ng * s.current_length_mm() * 1e3 - air;
        Ok(match self.cfg.arm {
            Arm::First => x,
            Arm::Second => -x,
        })
    }
}

/// Which flank of the dip to operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Flank {
    /// Stage below the dip.
    Below,
    /// Stage above the dip.
    Above,
    /// The flank with the smaller shot-noise delay error at its start point.
    #[default]
    Auto,
}

/// Dip location and flank calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationSettings {
    pub locate_half_range_um: f64,
    pub locate_points: usize,
    pub scan_points: usize,
    /// Separation interval `[a, b]` from the dip reference used as the linear region, µm.
    pub region_um: [f64; 2],
    pub integration_time_s: f64,
    pub flank: Flank,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            locate_half_range_um: 15.0,
            locate_points: 121,
            scan_points: 200,
            region_um: [1.0, 4.4],
            integration_time_s: 0.05,
            flank: Flank::Auto,
        }
    }
}

impl CalibrationSettings {
    /// Settings whose linear region starts at the default inner edge and spans `travel_um`,
    /// so a run exercises the whole calibrated region and no more.
    pub fn for_travel(travel_um: f64) -> Self {
        let d = CalibrationSettings::default();
        let a = d.region_um[0];
        CalibrationSettings {
            region_um: [a, a + travel_um.abs()],
            ..d
        }
    }
}

/// Result of dip location and flank calibration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub reference_um: f64,
    pub side: f64,
    /// Expected sign of `ds/dT` at a fixed stage.
    pub direction: f64,
    /// Calibration in separation coordinates, anchored at the start point.
    pub calibration: SlopeCalibration,
    pub start_separation_um: f64,
    pub dip_fit: DipFit,
    pub calibration_records: Vec<CountRecord>,
}

impl OperatingPoint {
    pub fn stage_for(&self, separation_um: f64) -> f64 {
        self.reference_um + self.side * separation_um
    }

    pub fn separation_of(&self, stage_um: f64) -> f64 {
        self.side * (stage_um - self.reference_um)
    }

    /// Shot-noise delay error at the start point for the calibration exposure, µm.
    pub fn start_sigma_um(&self) -> f64 {
        self.calibration.anchor_counts.max(1.0).sqrt() / self.calibration.slope_counts_per_um.abs()
    }
}

fn reanchor(cal: &SlopeCalibration, at_um: f64) -> SlopeCalibration {
    let [a, b] = cal.linear_region;
    let line = |x: f64| cal.anchor_counts + cal.slope_counts_per_um * (x - cal.anchor_delay_um);
    let other = if at_um == a { b } else { a };
    SlopeCalibration {
        anchor_delay_um: at_um,
        anchor_counts: line(at_um),
        end_counts: line(other),
        ..cal.clone()
    }
}

/// Locate the dip near its predicted position and calibrate counts against separation.
///
/// The dip reference is the centre of a Gaussian fit restricted to the dip core. Each flank
/// is then scanned over the linear region; the start point lies at the end of the region
/// from which heating moves the reading into the region.
pub fn calibrate(
    inst: &mut Instrument,
    settings: &CalibrationSettings,
    wavelength_um: f64,
) -> Result<OperatingPoint, ProtocolError> {
    let [a, b] = settings.region_um;
    if !(a >= 0.0 && a < b) {
        return Err(invalid("region_um", format!("bad interval [{a}, {b}]")));
    }
    if settings.locate_points < 7 || settings.scan_points < 10 {
        return Err(invalid("scan_points", "too few calibration points"));
    }
    let t_int = settings.integration_time_s;
    let predicted = inst.predicted_dip_um(wavelength_um)?;
    let h = settings.locate_half_range_um;
    let n = settings.locate_points;
    let xs: Vec<f64> = (0..n).map(|i| predicted - h + 2.0 * h * i as f64 / (n - 1) as f64).collect();
    let coarse = inst.scan(&xs, t_int)?;
    let fit = fit_gaussian_dip(&coarse).map_err(|e| ProtocolError::DipNotFound(e.to_string()))?;
    let core: Vec<CountRecord> = coarse
        .iter()
        .filter(|r| (r.delay_um - fit.center_um).abs() <= 0.6 * fit.fwhm_um)
        .cloned()
        .collect();
    let fit = match fit_gaussian_dip(&core) {
        Ok(f) if (f.center_um - fit.center_um).abs() < fit.fwhm_um => f,
        _ => fit,
    };
    let reference = fit.center_um;

    // Sign of the dip motion for heating, from the dispersion model.
    let t0 = inst.temperature_c();
    let [_, t_hi] = inst.cfg.oven_range_c;
    let probe_t = if t0 + 1.0 <= t_hi { t0 + 1.0 } else { t0 - 1.0 };
    let s_probe = inst.cfg.sample.at_temperature(probe_t)?;
    let ng_probe = s_probe.group_index(wavelength_um)?;
    let air = if inst.cfg.displaces_air { s_probe.length_mm * 1e3 } else { 0.0 };
    let mut x_probe = ng_probe * s_probe.current_length_mm() * 1e3 - air;
    if inst.cfg.arm == Arm::Second {
        x_probe = -x_probe;
    }
    let dip_motion = (x_probe - predicted).signum() * (probe_t - t0).signum();

    let m = settings.scan_points / 2;
    let seps: Vec<f64> = (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect();
    let mut best: Option<OperatingPoint> = None;
    let sides: &[f64] = match settings.flank {
        Flank::Above => &[1.0],
        Flank::Below => &[-1.0],
        Flank::Auto => &[-1.0, 1.0],
    };
    let mut last_err = None;
    for &side in sides {
        let positions: Vec<f64> = seps.iter().map(|s| reference + side * s).collect();
        let mut recs = inst.scan(&positions, t_int)?;
        for (r, s) in recs.iter_mut().zip(&seps) {
            r.delay_um = *s;
        }
        let cal = match calibrate_linear_region(&recs, [a, b], t_int) {
            Ok(c) if c.slope_counts_per_um > 0.0 => c,
            Ok(c) => {
                last_err = Some(EstimationError::Shape(format!(
                    "flank {side:+} has a falling calibration slope {}",
                    c.slope_counts_per_um
                )));
                continue;
            }
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        // s = side·(stage − x_dip): heating changes s by −side·dip_motion.
        let direction = -side * dip_motion;
        let start = if direction > 0.0 { a } else { b };
        let op = OperatingPoint {
            reference_um: reference,
            side,
            direction,
            calibration: reanchor(&cal, start),
            start_separation_um: start,
            dip_fit: fit.clone(),
            calibration_records: recs,
        };
        if best.as_ref().is_none_or(|bst| op.start_sigma_um() < bst.start_sigma_um()) {
            best = Some(op);
        }
    }
    best.ok_or_else(|| match last_err {
        Some(e) => ProtocolError::Estimation(e),
        None => ProtocolError::DipNotFound("no usable flank".into()),
    })
}

/// Measurement mode of a sweep record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Calibration,
    Linear,
    Compensated,
}

/// Outcome of one temperature step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub temperature_c: f64,
    pub stage_position_um: f64,
    pub coincidence_counts: u64,
    /// Dip displacement since the calibrated start point, µm.
    pub inferred_delay_um: f64,
    /// Group-index change since the start temperature.
    pub inferred_delta_ng: f64,
    /// Dispersion-model group-index change at the readout wavelength.
    pub theory_delta_ng: f64,
    /// Standard uncertainty of `inferred_delta_ng`.
    pub sigma_delta_ng: f64,
    pub mode: Mode,
    pub stage_moves: usize,
}

/// Settings shared by the temperature campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepSettings {
    pub start_c: f64,
    pub end_c: f64,
    pub step_c: f64,
    /// Exposure of each measurement read, s.
    pub integration_time_s: f64,
    /// Reads averaged per step.
    pub reads_per_step: usize,
    /// Readout wavelength for the dispersion model, µm.
    pub wavelength_um: f64,
    pub calibration: CalibrationSettings,
}

impl SweepSettings {
    /// Temperatures `start, start + step, ...`, ending exactly at `end`.
    pub fn temperatures(&self) -> Result<Vec<f64>, ProtocolError> {
        if !(self.step_c > 0.0) {
            return Err(invalid("step_c", format!("must be positive, got {}", self.step_c)));
        }
        if !(self.end_c > self.start_c) {
            return Err(ProtocolError::EmptyRun);
        }
        let mut out = vec![quantize_temperature(self.start_c)];
        let mut k = 1;
        loop {
            let t = quantize_temperature(self.start_c + k as f64 * self.step_c);
            if t >= self.end_c - 1e-9 {
                break;
            }
            out.push(t);
            k += 1;
        }
        let end = quantize_temperature(self.end_c);
        if end > *out.last().unwrap() {
            out.push(end);
        }
        Ok(out)
    }

    fn check(&self) -> Result<(), ProtocolError> {
        if self.reads_per_step == 0 {
            return Err(invalid("reads_per_step", "must be at least 1"));
        }
        if !(self.integration_time_s > 0.0) {
            return Err(invalid("integration_time_s", "must be positive"));
        }
        Ok(())
    }
}

fn mean_read(inst: &mut Instrument, t_int: f64, reads: usize) -> (f64, u64) {
    let total: u64 = (0..reads).map(|_| inst.read(t_int).coincidences).sum();
    (total as f64 / reads as f64, total)
}

fn theory_ng(sample: &Sample, t: f64, wavelength_um: f64) -> Result<f64, ProtocolError> {
    Ok(sample.at_temperature(t)?.group_index(wavelength_um)?)
}

/// Outcome of a fixed-stage temperature run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearRun {
    pub records: Vec<SweepRecord>,
    pub operating_point: OperatingPoint,
    /// Least-squares slope of dip displacement versus temperature, µm/°C.
    pub slope_um_per_c: f64,
    pub slope_stderr: f64,
    /// Largest neglected cross term over the run.
    pub max_cross_term: f64,
}

fn fixed_stage_run(inst: &mut Instrument, settings: &SweepSettings, mode: Mode) -> Result<LinearRun, ProtocolError> {
    settings.check()?;
    let temps = settings.temperatures()?;
    inst.set_temperature(temps[0])?;
    let op = calibrate(inst, &settings.calibration, settings.wavelength_um)?;
    let cal = op.calibration.rescaled(settings.integration_time_s * settings.reads_per_step as f64);
    inst.move_stage(op.stage_for(op.start_separation_um))?;
    let base = inst.cfg.sample.at_temperature(temps[0])?;
    let ng0 = base.group_index(settings.wavelength_um)?;
    let length_um = base.current_length_mm() * 1e3;
    let sigma_of = |counts: f64| {
        let stat = counts.max(1.0).sqrt() / cal.slope_counts_per_um.abs();
        (stat * stat + cal.nonlinearity_um().powi(2)).sqrt()
    };

    let mut records = Vec::with_capacity(temps.len());
    let mut max_cross: f64 = 0.0;
    let mut progress = f64::NEG_INFINITY;
    for &t in &temps {
        inst.set_temperature(t)?;
        let (_, total) = mean_read(inst, settings.integration_time_s, settings.reads_per_step);
        let c = total as f64;
        let s = delay_from_counts(c, &cal).map_err(|source| ProtocolError::OutOfCalibratedRange {
            temperature_c: t,
            source,
        })?;
        // Heating moves the reading one way through the region; a reversal beyond the noise
        // means the dip has passed the operating point and counts no longer map to delay.
        let p = op.direction * (s - op.start_separation_um);
        let retreat = 4.0 * sigma_of(c) + cal.nonlinearity_um();
        if p < progress - retreat {
            return Err(ProtocolError::OutOfCalibratedRange {
                temperature_c: t,
                source: EstimationError::Shape(format!(
                    "reading reversed by {:.3} µm against the heating direction",
                    progress - p
                )),
            });
        }
        progress = progress.max(p);
        let dx = -op.side * (s - op.start_separation_um);
        let d = delta_ng_with_base(dx, &base, t - temps[0], ng0)?;
        max_cross = max_cross.max(d.cross_term.abs());
        let sigma_x = sigma_of(c);
        records.push(SweepRecord {
            temperature_c: t,
            stage_position_um: inst.stage_um(),
            coincidence_counts: total,
            inferred_delay_um: dx,
            inferred_delta_ng: d.delta_ng,
            theory_delta_ng: theory_ng(&inst.cfg.sample, t, settings.wavelength_um)? - ng0,
            sigma_delta_ng: sigma_x / length_um,
            mode,
            stage_moves: 0,
        });
    }
    let (slope, stderr) = line_slope(
        &records.iter().map(|r| r.temperature_c).collect::<Vec<_>>(),
        &records.iter().map(|r| r.inferred_delay_um).collect::<Vec<_>>(),
    );
    Ok(LinearRun {
        records,
        operating_point: op,
        slope_um_per_c: slope,
        slope_stderr: stderr,
        max_cross_term: max_cross,
    })
}

/// Ordinary least-squares slope and its standard error.
pub fn line_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let stderr = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, stderr)
}

/// Delay versus temperature at a fixed stage with a linear fit of the slope.
pub fn run_calibration_sweep(inst: &mut Instrument, settings: &SweepSettings) -> Result<LinearRun, ProtocolError> {
    fixed_stage_run(inst, settings, Mode::Calibration)
}

/// Group-index change versus temperature read out in the linear region.
pub fn run_linear_measurement(inst: &mut Instrument, settings: &SweepSettings) -> Result<LinearRun, ProtocolError> {
    fixed_stage_run(inst, settings, Mode::Linear)
}

/// Counts on one temperature plateau.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plateau {
    pub temperature_c: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityTrace {
    pub plateaus: Vec<Plateau>,
    /// `mean[k+1] − mean[k]` for adjacent plateaus.
    pub jumps: Vec<f64>,
    pub stage_position_um: f64,
    pub operating_point: OperatingPoint,
}

/// Stability trace settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilitySettings {
    pub start_c: f64,
    pub step_c: f64,
    pub plateaus: usize,
    pub reads_per_plateau: usize,
    pub integration_time_s: f64,
    pub wavelength_um: f64,
    pub calibration: CalibrationSettings,
}

/// Fixed-stage counts on successive temperature plateaus.
///
/// The stage sits at the middle of the calibrated flank region.
pub fn run_stability_trace(inst: &mut Instrument, settings: &StabilitySettings) -> Result<StabilityTrace, ProtocolError> {
    if settings.plateaus == 0 || settings.reads_per_plateau < 2 {
        return Err(invalid("plateaus", "need at least one plateau of two reads"));
    }
    inst.set_temperature(settings.start_c)?;
    let op = calibrate(inst, &settings.calibration, settings.wavelength_um)?;
    let [a, b] = settings.calibration.region_um;
    inst.move_stage(op.stage_for(0.5 * (a + b)))?;
    let mut plateaus = Vec::with_capacity(settings.plateaus);
    for k in 0..settings.plateaus {
        let t = settings.start_c + k as f64 * settings.step_c;
        inst.set_temperature(t)?;
        let counts: Vec<u64> = (0..settings.reads_per_plateau)
            .map(|_| inst.read(settings.integration_time_s).coincidences)
            .collect();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<u64>() as f64 / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        plateaus.push(Plateau {
            temperature_c: inst.temperature_c(),
            counts,
            mean,
            std: var.sqrt(),
        });
    }
    let jumps = plateaus.windows(2).map(|w| w[1].mean - w[0].mean).collect();
    Ok(StabilityTrace {
        plateaus,
        jumps,
        stage_position_um: inst.stage_um(),
        operating_point: op,
    })
}

/// Outcome of a delay-compensated sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompensatedRun {
    pub records: Vec<SweepRecord>,
    /// `None` for a run without temperature steps.
    pub operating_point: Option<OperatingPoint>,
    pub setpoint_counts: f64,
    pub total_delta_ng: f64,
    pub total_stage_um: f64,
    /// Shot-noise uncertainty of one reading, as a group-index change.
    pub step_sigma_delta_ng: f64,
    pub max_cross_term: f64,
}

/// Stepwise heating with stage compensation back to the setpoint counts.
///
/// A run whose end temperature does not exceed its start has no steps and returns no records.
///
/// After each temperature step the stage is moved until a read falls within one standard
/// deviation of the setpoint: calibrated readings give a direct correction, readings outside
/// the calibrated range a half-region step, and once the setpoint is bracketed the stage
/// position is bisected. The dip displacement is the stage displacement plus the residual
/// calibrated reading; each step's group-index increment follows from the displacement
/// increment with the group index and length at the start of the step.
pub fn run_compensated_sweep(inst: &mut Instrument, settings: &SweepSettings) -> Result<CompensatedRun, ProtocolError> {
    settings.check()?;
    let temps = match settings.temperatures() {
        Ok(t) => t,
        Err(ProtocolError::EmptyRun) => {
            return Ok(CompensatedRun {
                records: Vec::new(),
                operating_point: None,
                setpoint_counts: f64::NAN,
                total_delta_ng: 0.0,
                total_stage_um: 0.0,
                step_sigma_delta_ng: f64::NAN,
                max_cross_term: 0.0,
            })
        }
        Err(e) => return Err(e),
    };
    inst.set_temperature(temps[0])?;
    let op = calibrate(inst, &settings.calibration, settings.wavelength_um)?;
    let exposure = settings.integration_time_s * settings.reads_per_step as f64;
    let cal = op.calibration.rescaled(exposure);
    let setpoint = cal.anchor_counts;
    let tol = setpoint.max(1.0).sqrt();
    let [a, b] = cal.linear_region;
    let max_step = 0.5 * (b - a);
    let side = op.side;
    let stage0 = op.stage_for(op.start_separation_um);
    inst.move_stage(stage0)?;

    let sample = inst.cfg.sample.clone();
    let ng0 = theory_ng(&sample, temps[0], settings.wavelength_um)?;
    let length0_um = sample.at_temperature(temps[0])?.current_length_mm() * 1e3;
    let sigma_read = tol / cal.slope_counts_per_um.abs();
    let step_sigma = sigma_read / length0_um;

    let mut records = Vec::with_capacity(temps.len());
    let mut x_prev = 0.0;
    let mut t_prev = temps[0];
    let mut accum = 0.0;
    let mut max_cross: f64 = 0.0;
    for (k, &t) in temps.iter().enumerate() {
        inst.set_temperature(t)?;
        let mut moves = 0;
        let mut large: Option<f64> = None;
        let mut small: Option<f64> = None;
        let counts = loop {
            let (_, total) = mean_read(inst, settings.integration_time_s, settings.reads_per_step);
            let c = total as f64;
            if (c - setpoint).abs() <= tol {
                break total;
            }
            if moves >= MAX_COMPENSATION_MOVES {
                return Err(ProtocolError::CompensationFault {
                    temperature_c: t,
                    moves,
                    state: format!("{:?}, counts {c}, setpoint {setpoint:.1} ± {tol:.1}", inst.state()),
                });
            }
            let here = inst.stage_um();
            let too_large = c > setpoint;
            if too_large {
                large = Some(here);
            } else {
                small = Some(here);
            }
            let next = match (large, small) {
                (Some(l), Some(s)) => 0.5 * (l + s),
                _ => {
                    let ds = match delay_from_counts(c, &cal) {
                        Ok(s_now) => (op.start_separation_um - s_now).clamp(-2.0 * max_step, 2.0 * max_step),
                        Err(_) if too_large => -max_step,
                        Err(_) => max_step,
                    };
                    here + side * ds
                }
            };
            inst.move_stage(next).map_err(|e| match e {
                ProtocolError::StageTravel { .. } => ProtocolError::CompensationFault {
                    temperature_c: t,
                    moves,
                    state: format!("{:?}, stage travel exhausted: {e}", inst.state()),
                },
                other => other,
            })?;
            moves += 1;
        };
        let s = delay_from_counts(counts as f64, &cal).map_err(|source| ProtocolError::OutOfCalibratedRange {
            temperature_c: t,
            source,
        })?;
        let x = (inst.stage_um() - stage0) - side * (s - op.start_separation_um);
        if k > 0 {
            let base = sample.at_temperature(t_prev)?;
            let d = delta_ng_with_base(x - x_prev, &base, t - t_prev, ng0 + accum)?;
            max_cross = max_cross.max(d.cross_term.abs());
            accum += d.delta_ng;
        }
        records.push(SweepRecord {
            temperature_c: t,
            stage_position_um: inst.stage_um(),
            coincidence_counts: counts,
            inferred_delay_um: x,
            inferred_delta_ng: accum,
            theory_delta_ng: theory_ng(&sample, t, settings.wavelength_um)? - ng0,
            sigma_delta_ng: step_sigma,
            mode: Mode::Compensated,
            stage_moves: moves,
        });
        x_prev = x;
        t_prev = t;
    }
    let total_stage_um = inst.stage_um() - stage0;
    Ok(CompensatedRun {
        records,
        operating_point: Some(op),
        setpoint_counts: setpoint,
        total_delta_ng: accum,
        total_stage_um,
        step_sigma_delta_ng: step_sigma,
        max_cross_term: max_cross,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization() {
        assert!((quantize_temperature(26.04) - 26.0).abs() < 1e-12);
        assert!((quantize_temperature(26.06) - 26.1).abs() < 1e-12);
    }

    #[test]
    fn temperature_schedule() {
        let s = SweepSettings {
            start_c: 25.0,
            end_c: 200.0,
            step_c: 3.0,
            integration_time_s: 0.1,
            reads_per_step: 1,
            wavelength_um: 0.8108,
            calibration: CalibrationSettings::default(),
        };
        let t = s.temperatures().unwrap();
        assert_eq!(t[0], 25.0);
        assert!((t[1] - 28.0).abs() < 1e-9);
        assert!((t[t.len() - 2] - 199.0).abs() < 1e-9);
        assert_eq!(*t.last().unwrap(), 200.0);
        let empty = SweepSettings { end_c: 25.0, ..s };
        assert!(matches!(empty.temperatures(), Err(ProtocolError::EmptyRun)));
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (m, e) = line_slope(&x, &y);
        assert!((m - 2.0).abs() < 1e-12 && e.abs() < 1e-12);
    }
}
