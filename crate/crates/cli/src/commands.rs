//! Campaign commands: spectra, dip profiles, group-index measurements and temperature sweeps.
//!
//! Each command returns a typed report. When an output directory is given it also writes
//! plot-ready CSV files, one observable per column with a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hom_core::biphoton::{
    apply_filter, bandwidth_fwhm, flux_optimal_temperature, qpm_temperature, spdc_spectral_density, BandpassFilter,
    CrystalSpec, SpectralDensity,
};
use hom_core::detection::{expected_rates, simulate_counts, write_counts_csv, DetectorModel};
use hom_core::estimation::{fit_gaussian_dip, group_index_from_shift, locate_min, precision_report, PrecisionReport};
use hom_core::interference::{curve_fwhm, curve_visibility, delay_grid, hom_profile, Arm, ArmSample, HomCurve};
use hom_core::materials::{builtin, load_materials, MaterialRegistry, Sample};
use hom_core::protocol::{
    run_calibration_sweep, run_compensated_sweep, run_linear_measurement, run_stability_trace, CalibrationSettings,
    Instrument, InstrumentConfig, StabilitySettings, SweepRecord, SweepSettings,
};
use serde::Serialize;

use crate::config::{NamedTemperature, RunConfig, SampleConfig, SweepMode, TemperatureSpec};
use crate::error::CliError;

/// Material registry named by the config, or the built-in one.
pub fn registry(cfg: &RunConfig) -> Result<MaterialRegistry, CliError> {
    match &cfg.materials {
        Some(p) => Ok(load_materials(p)?),
        None => Ok(builtin().clone()),
    }
}

fn material(reg: &MaterialRegistry, name: &str) -> Result<Arc<hom_core::materials::Material>, CliError> {
    Ok(reg.get(name)?)
}

/// Source crystal at its configured operating temperature.
pub fn source_crystal(cfg: &RunConfig, reg: &MaterialRegistry, length_mm: f64) -> Result<CrystalSpec, CliError> {
    let s = &cfg.source;
    let m = material(reg, &s.material)?;
    let probe_t = match s.temperature {
        TemperatureSpec::Celsius(t) => t,
        TemperatureSpec::Named(_) => hom_core::REFERENCE_TEMPERATURE_C,
    };
    let crystal = CrystalSpec::new(m, length_mm, s.grating_period_um, probe_t, s.pump_wavelength_um)?;
    let t = match s.temperature {
        TemperatureSpec::Celsius(t) => t,
        TemperatureSpec::Named(NamedTemperature::Qpm) => qpm_temperature(&crystal)?,
        TemperatureSpec::Named(NamedTemperature::FluxOptimal) => flux_optimal_temperature(&crystal)?,
    };
    Ok(crystal.with_temperature(t))
}

pub fn source_spectrum(cfg: &RunConfig, reg: &MaterialRegistry, length_mm: f64) -> Result<SpectralDensity, CliError> {
    let c = source_crystal(cfg, reg, length_mm)?;
    Ok(spdc_spectral_density(&c, cfg.source.grid_points, cfg.source.span_factor)?)
}

fn build_sample(reg: &MaterialRegistry, s: &SampleConfig) -> Result<ArmSample, CliError> {
    let sample = Sample::new(material(reg, &s.material)?, s.length_mm, s.temperature_c)?;
    Ok(ArmSample {
        sample,
        arm: Arm::First,
        displaces_air: s.displaces_air,
    })
}

/// Dip position predicted from the group index at `wavelength_um`, µm.
fn predicted_shift(arm: &ArmSample, wavelength_um: f64) -> Result<f64, CliError> {
    let s = &arm.sample;
    let air = if arm.displaces_air { s.length_mm * 1e3 } else { 0.0 };
    Ok(s.group_index(wavelength_um)? * s.current_length_mm() * 1e3 - air)
}

/// Independent seed for sub-run `index` of a run.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn create(out: &Path, name: &str) -> Result<(BufWriter<File>, PathBuf), CliError> {
    let path = out.join(name);
    let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((BufWriter::new(f), path))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRow {
    pub length_mm: f64,
    pub temperature_c: f64,
    pub fwhm_nm: f64,
    /// `fwhm_nm · √length_mm`, constant for an ideal 1/√L law.
    pub fwhm_sqrt_length: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub rows: Vec<SpectrumRow>,
}

pub fn cmd_spectrum(cfg: &RunConfig, out: Option<&Path>) -> Result<SpectrumReport, CliError> {
    let reg = registry(cfg)?;
    let sp = cfg.spectrum.as_ref().ok_or_else(|| CliError::Config {
        path: "spectrum".into(),
        message: "section required".into(),
    })?;
    let mut rows = Vec::new();
    for &l in &sp.lengths_mm {
        let crystal = source_crystal(cfg, &reg, l)?;
        let s = spdc_spectral_density(&crystal, cfg.source.grid_points, cfg.source.span_factor)?;
        let fwhm = bandwidth_fwhm(&s)?;
        if let Some(dir) = out {
            let (mut w, path) = create(dir, &format!("spectrum_{}mm.csv", file_label(&l.to_string())))?;
            s.write_csv(&mut w)?;
            finish(w, &path)?;
        }
        rows.push(SpectrumRow {
            length_mm: l,
            temperature_c: crystal.temperature_c,
            fwhm_nm: fwhm,
            fwhm_sqrt_length: fwhm * l.sqrt(),
            clipped: s.clipped,
        });
    }
    Ok(SpectrumReport { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct DipRow {
    pub label: String,
    pub spectrum_fwhm_nm: f64,
    pub fwhm_um: f64,
    pub visibility: f64,
    /// Delay of the profile minimum; the dip shift caused by the sample, µm.
    pub min_delay_um: f64,
    /// Largest local maximum above the 0.5 asymptote, in standard deviations of the
    /// asymptotic counts at the configured integration time.
    pub overshoot_sigma: f64,
    pub side_oscillations: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DipReport {
    pub rows: Vec<DipRow>,
}

/// Largest local maximum of the profile above 0.5, in Poisson σ of the asymptotic counts.
pub fn overshoot_sigma(curve: &HomCurve, detector: &DetectorModel) -> Result<f64, CliError> {
    let t = detector.integration_time_s;
    let counts = |p: f64| -> Result<f64, CliError> { Ok(expected_rates(p, detector)?.coincidence_hz * t) };
    let asym = counts(0.5)?;
    let p = &curve.probability;
    let mut best = f64::NEG_INFINITY;
    for k in 1..p.len().saturating_sub(1) {
        if p[k] > p[k - 1] && p[k] >= p[k + 1] {
            best = best.max(counts(p[k])? - asym);
        }
    }
    Ok(if best.is_finite() { best / asym.sqrt() } else { 0.0 })
}

pub fn cmd_dip(cfg: &RunConfig, out: Option<&Path>) -> Result<DipReport, CliError> {
    let reg = registry(cfg)?;
    let d = cfg.dip.as_ref().ok_or_else(|| CliError::Config {
        path: "dip".into(),
        message: "section required".into(),
    })?;
    if d.cases.is_empty() {
        return Err(CliError::Config {
            path: "dip.cases".into(),
            message: "empty list".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, case) in d.cases.iter().enumerate() {
        let mut s = source_spectrum(cfg, &reg, case.source_length_mm.unwrap_or(cfg.source.length_mm))?;
        if let Some(f) = &case.filter {
            let filter = BandpassFilter::new(s.center_wavelength_um, f.fwhm_nm, f.placement)?;
            s = apply_filter(&s, &filter)?;
        }
        let arm = case.sample.as_ref().map(|sc| build_sample(&reg, sc)).transpose()?;
        let center = match (case.center_um, &arm) {
            (Some(c), _) => c,
            (None, Some(a)) => predicted_shift(a, d.wavelength_um)?,
            (None, None) => 0.0,
        };
        let curve = hom_profile(&s, &delay_grid(center, d.half_range_um, d.points), arm.as_ref(), cfg.visibility0)?;
        let min = locate_min(&curve.delay_um, &curve.probability)?;
        let over = overshoot_sigma(&curve, &cfg.detector)?;
        if let Some(dir) = out {
            let label = file_label(&case.label);
            let (mut w, path) = create(dir, &format!("dip_{label}.csv"))?;
            curve.write_csv(&mut w)?;
            finish(w, &path)?;
            let recs = simulate_counts(&curve, &cfg.detector, sub_seed(cfg.seed, i as u64))?;
            let (mut w, path) = create(dir, &format!("dip_{label}_counts.csv"))?;
            write_counts_csv(&recs, &mut w)?;
            finish(w, &path)?;
        }
        rows.push(DipRow {
            label: case.label.clone(),
            spectrum_fwhm_nm: bandwidth_fwhm(&s)?,
            fwhm_um: curve_fwhm(&curve)?,
            visibility: curve_visibility(&curve)?,
            min_delay_um: min.delay_um,
            overshoot_sigma: over,
            side_oscillations: over > 3.0,
        });
    }
    Ok(DipReport { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureRow {
    pub label: String,
    pub material: String,
    pub length_mm: f64,
    pub n_g: f64,
    pub uncertainty: f64,
    pub shift_um: f64,
    /// Group index of the dispersion model at the readout wavelength.
    pub n_g_theory: f64,
    /// `|n_g − n_g_theory|`.
    pub accuracy: f64,
    pub reference_ng: Option<f64>,
    pub deviation_from_reference: Option<f64>,
    pub fit_mismatch: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureReport {
    pub rows: Vec<MeasureRow>,
}

/// Reference dip, sample dip, Gaussian fits and group index from the shift, per sample.
pub fn cmd_measure(cfg: &RunConfig, out: Option<&Path>) -> Result<MeasureReport, CliError> {
    let reg = registry(cfg)?;
    let m = cfg.measure.as_ref().ok_or_else(|| CliError::Config {
        path: "measure".into(),
        message: "section required".into(),
    })?;
    let s = source_spectrum(cfg, &reg, cfg.source.length_mm)?;
    let det = cfg.detector.with_integration_time(m.integration_time_s);
    let mut rows = Vec::new();
    for (i, ms) in m.samples.iter().enumerate() {
        let arm = build_sample(&reg, &ms.sample)?;
        let reference = hom_profile(&s, &delay_grid(0.0, m.half_range_um, m.points), None, cfg.visibility0)?;
        let expected = predicted_shift(&arm, m.wavelength_um)?;
        let with = hom_profile(
            &s,
            &delay_grid(expected, m.half_range_um, m.points),
            Some(&arm),
            cfg.visibility0,
        )?;
        let rec0 = simulate_counts(&reference, &det, sub_seed(cfg.seed, 2 * i as u64))?;
        let rec1 = simulate_counts(&with, &det, sub_seed(cfg.seed, 2 * i as u64 + 1))?;
        let f0 = fit_gaussian_dip(&rec0)?;
        let f1 = fit_gaussian_dip(&rec1)?;
        let shift = f1.center_um - f0.center_um;
        let sigma = (f0.center_sigma_um().powi(2) + f1.center_sigma_um().powi(2)).sqrt();
        let g = group_index_from_shift(shift, sigma, &arm.sample, ms.length_sigma_mm, arm.displaces_air)?;
        let theory = arm.sample.group_index(m.wavelength_um)?;
        if let Some(dir) = out {
            let label = file_label(&ms.label);
            for (suffix, recs) in [("reference", &rec0), ("sample", &rec1)] {
                let (mut w, path) = create(dir, &format!("measure_{label}_{suffix}.csv"))?;
                write_counts_csv(recs, &mut w)?;
                finish(w, &path)?;
            }
        }
        rows.push(MeasureRow {
            label: ms.label.clone(),
            material: ms.sample.material.clone(),
            length_mm: ms.sample.length_mm,
            n_g: g.n_g,
            uncertainty: g.uncertainty,
            shift_um: shift,
            n_g_theory: theory,
            accuracy: (g.n_g - theory).abs(),
            reference_ng: ms.reference_ng,
            deviation_from_reference: ms.reference_ng.map(|r| g.n_g - r),
            fit_mismatch: f0.model_mismatch || f1.model_mismatch,
        });
    }
    if let Some(dir) = out {
        let (mut w, path) = create(dir, "measure.csv")?;
        let io = |e| CliError::io(&path, e);
        writeln!(w, "label,material,length_mm,n_g,uncertainty,shift_um,n_g_theory,accuracy").map_err(io)?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.label, r.material, r.length_mm, r.n_g, r.uncertainty, r.shift_um, r.n_g_theory, r.accuracy
            )
            .map_err(io)?;
        }
        finish(w, &path)?;
    }
    Ok(MeasureReport { rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatingSummary {
    pub reference_um: f64,
    pub side: f64,
    pub start_separation_um: f64,
    pub slope_counts_per_um: f64,
    pub anchor_counts: f64,
    pub calibration_integration_s: f64,
    pub dip_fwhm_um: f64,
    pub precision: PrecisionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub mode: SweepMode,
    pub operating_point: Option<OperatingSummary>,
    pub records: Vec<SweepRecord>,
    pub slope_um_per_c: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub total_delta_ng: Option<f64>,
    pub total_stage_um: Option<f64>,
    pub step_sigma_delta_ng: Option<f64>,
    pub max_cross_term: Option<f64>,
    pub plateau_means: Vec<f64>,
    pub plateau_stds: Vec<f64>,
    pub jumps: Vec<f64>,
}

fn summarize(op: &hom_core::protocol::OperatingPoint) -> OperatingSummary {
    let cal = &op.calibration;
    OperatingSummary {
        reference_um: op.reference_um,
        side: op.side,
        start_separation_um: op.start_separation_um,
        slope_counts_per_um: cal.slope_counts_per_um,
        anchor_counts: cal.anchor_counts,
        calibration_integration_s: cal.integration_time_s,
        dip_fwhm_um: op.dip_fit.fwhm_um,
        precision: precision_report(cal, cal.anchor_counts),
    }
}

/// Instrument for a sweep config.
pub fn sweep_instrument(cfg: &RunConfig, reg: &MaterialRegistry) -> Result<Instrument, CliError> {
    let w = cfg.sweep.as_ref().ok_or_else(|| CliError::Config {
        path: "sweep".into(),
        message: "section required".into(),
    })?;
    let spectrum = Arc::new(source_spectrum(cfg, reg, cfg.source.length_mm)?);
    let arm = build_sample(reg, &w.sample)?;
    let ic = InstrumentConfig {
        spectrum,
        sample: arm.sample,
        arm: arm.arm,
        displaces_air: arm.displaces_air,
        detector: cfg.detector,
        visibility0: cfg.visibility0,
        seed: cfg.seed,
        stage_travel_um: w.stage_travel_um,
        oven_range_c: w.oven_range_c,
    };
    Ok(Instrument::new(ic, w.start_c, 0.0)?)
}

pub fn cmd_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<SweepReport, CliError> {
    let reg = registry(cfg)?;
    let w = cfg.sweep.as_ref().ok_or_else(|| CliError::Config {
        path: "sweep".into(),
        message: "section required".into(),
    })?;
    let mut inst = sweep_instrument(cfg, &reg)?;
    let calibration = CalibrationSettings {
        region_um: w.region_um,
        integration_time_s: w.calibration_integration_s,
        flank: w.flank,
        ..CalibrationSettings::default()
    };
    let settings = SweepSettings {
        start_c: w.start_c,
        end_c: w.end_c,
        step_c: w.step_c,
        integration_time_s: w.integration_time_s,
        reads_per_step: w.reads_per_step,
        wavelength_um: w.wavelength_um,
        calibration,
    };
    let mut report = SweepReport {
        mode: w.mode,
        operating_point: None,
        records: Vec::new(),
        slope_um_per_c: None,
        slope_stderr: None,
        total_delta_ng: None,
        total_stage_um: None,
        step_sigma_delta_ng: None,
        max_cross_term: None,
        plateau_means: Vec::new(),
        plateau_stds: Vec::new(),
        jumps: Vec::new(),
    };
    match w.mode {
        SweepMode::Calibration | SweepMode::Linear => {
            let run = if w.mode == SweepMode::Calibration {
                run_calibration_sweep(&mut inst, &settings)?
            } else {
                run_linear_measurement(&mut inst, &settings)?
            };
            report.operating_point = Some(summarize(&run.operating_point));
            report.slope_um_per_c = Some(run.slope_um_per_c);
            report.slope_stderr = Some(run.slope_stderr);
            report.total_delta_ng = run.records.last().map(|r| r.inferred_delta_ng);
            report.max_cross_term = Some(run.max_cross_term);
            report.records = run.records;
        }
        SweepMode::Compensated => {
            let run = run_compensated_sweep(&mut inst, &settings)?;
            report.operating_point = run.operating_point.as_ref().map(summarize);
            report.total_delta_ng = Some(run.total_delta_ng);
            report.total_stage_um = Some(run.total_stage_um);
            report.step_sigma_delta_ng = Some(run.step_sigma_delta_ng);
            report.max_cross_term = Some(run.max_cross_term);
            report.records = run.records;
        }
        SweepMode::Stability => {
            let st = StabilitySettings {
                start_c: w.start_c,
                step_c: w.step_c,
                plateaus: w.plateaus,
                reads_per_plateau: w.reads_per_plateau,
                integration_time_s: w.integration_time_s,
                wavelength_um: w.wavelength_um,
                calibration,
            };
            let tr = run_stability_trace(&mut inst, &st)?;
            report.operating_point = Some(summarize(&tr.operating_point));
            report.plateau_means = tr.plateaus.iter().map(|p| p.mean).collect();
            report.plateau_stds = tr.plateaus.iter().map(|p| p.std).collect();
            report.jumps = tr.jumps.clone();
            if let Some(dir) = out {
                let (mut w, path) = create(dir, "stability.csv")?;
                let io = |e| CliError::io(&path, e);
                writeln!(w, "plateau,temperature_c,read,coincidences").map_err(io)?;
                for (k, p) in tr.plateaus.iter().enumerate() {
                    for (j, c) in p.counts.iter().enumerate() {
                        writeln!(w, "{k},{},{j},{c}", p.temperature_c).map_err(io)?;
                    }
                }
                finish(w, &path)?;
            }
        }
    }
    if let Some(dir) = out {
        if w.mode != SweepMode::Stability {
            let (mut f, path) = create(dir, "sweep.csv")?;
            let io = |e| CliError::io(&path, e);
            writeln!(
                f,
                "temperature_c,stage_position_um,coincidence_counts,inferred_delay_um,inferred_delta_ng,theory_delta_ng,sigma_delta_ng,mode,stage_moves"
            )
            .map_err(io)?;
            for r in &report.records {
                let mode = serde_json::to_value(r.mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{}",
                    r.temperature_c,
                    r.stage_position_um,
                    r.coincidence_counts,
                    r.inferred_delay_um,
                    r.inferred_delta_ng,
                    r.theory_delta_ng,
                    r.sigma_delta_ng,
                    mode,
                    r.stage_moves
                )
                .map_err(io)?;
            }
            finish(f, &path)?;
        }
    }
    Ok(report)
}
