//! Measurement campaigns on the simulated instrument.

use std::sync::Arc;

use hom_core::biphoton::{flux_optimal_temperature, spdc_spectral_density, CrystalSpec, SpectralDensity};
use hom_core::detection::{DetectorModel, DriftModel};
use hom_core::interference::Arm;
use hom_core::materials::{builtin, Sample};
use hom_core::protocol::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn source() -> Arc<SpectralDensity> {
    use std::sync::OnceLock;
    static S: OnceLock<Arc<SpectralDensity>> = OnceLock::new();
    S.get_or_init(|| {
        let ktp = builtin().get("KTP").unwrap();
        let c = CrystalSpec::new(ktp, 1.0, 3.425, 25.0, 0.4054).unwrap();
        let t = flux_optimal_temperature(&c).unwrap();
        Arc::new(spdc_spectral_density(&c.with_temperature(t), 8192, 4.0).unwrap())
    })
    .clone()
}

fn instrument(length_mm: f64, seed: u64, t: f64) -> Instrument {
    let cfg = InstrumentConfig {
        spectrum: source(),
        sample: Sample::new(builtin().get("KTP").unwrap(), length_mm, 25.0).unwrap(),
        arm: Arm::First,
        displaces_air: true,
        detector: DetectorModel::default(),
        visibility0: 0.93,
        seed,
        stage_travel_um: [-1000.0, 50_000.0],
        oven_range_c: [20.0, 200.0],
    };
    Instrument::new(cfg, t, 0.0).unwrap()
}

fn sweep(start: f64, end: f64, step: f64, t_int: f64) -> SweepSettings {
    SweepSettings {
        start_c: start,
        end_c: end,
        step_c: step,
        integration_time_s: t_int,
        reads_per_step: 1,
        wavelength_um: 0.8108,
        calibration: CalibrationSettings::default(),
    }
}

#[test]
fn campaigns_are_deterministic_per_seed() {
    let s = sweep(26.0, 27.0, 0.1, 0.05);
    let a = run_linear_measurement(&mut instrument(30.12, 7, 26.0), &s).unwrap();
    let b = run_linear_measurement(&mut instrument(30.12, 7, 26.0), &s).unwrap();
    let c = run_linear_measurement(&mut instrument(30.12, 8, 26.0), &s).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.records, c.records);
}

#[test]
fn empty_temperature_range() {
    let s = sweep(26.0, 26.0, 0.1, 0.05);
    assert!(matches!(
        run_calibration_sweep(&mut instrument(30.12, 1, 26.0), &s),
        Err(ProtocolError::EmptyRun)
    ));
    let run = run_compensated_sweep(&mut instrument(30.12, 1, 26.0), &s).unwrap();
    assert!(run.records.is_empty());
    assert!(run.operating_point.is_none());
}

#[test]
fn halving_the_sample_halves_the_slope() {
    // Each run calibrates a linear region matched to the delay it will traverse.
    let run = |length: f64| {
        let mut s = sweep(26.0, 29.0, 0.1, 0.05);
        s.calibration = CalibrationSettings::for_travel(3.4 * length / 30.12);
        run_calibration_sweep(&mut instrument(length, 3, 26.0), &s).unwrap()
    };
    let ratio = run(15.06).slope_um_per_c / run(30.12).slope_um_per_c;
    assert!((ratio - 0.5).abs() < 0.05, "slope ratio {ratio}");
}

#[test]
fn linear_measurement_tracks_theory() {
    let run = run_linear_measurement(&mut instrument(30.12, 21, 26.0), &sweep(26.0, 29.0, 0.1, 0.05)).unwrap();
    assert_eq!(run.records.len(), 31);
    // Readings are independent, so about 5% of steps fall outside 2σ by chance.
    let z: Vec<f64> = run
        .records
        .iter()
        .map(|r| (r.inferred_delta_ng - r.theory_delta_ng).abs() / r.sigma_delta_ng)
        .collect();
    let within = z.iter().filter(|&&v| v < 2.0).count() as f64 / z.len() as f64;
    assert!(within >= 0.9, "{within} of steps within 2σ: {z:?}");
    assert!(z.iter().all(|&v| v < 3.5), "{z:?}");
    let temps: Vec<f64> = run.records.iter().map(|r| r.temperature_c).collect();
    assert!(temps.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn leaving_the_calibrated_range_reports_recalibration() {
    let s = sweep(26.0, 32.0, 0.1, 0.05);
    let err = run_linear_measurement(&mut instrument(30.12, 4, 26.0), &s).unwrap_err();
    assert!(matches!(err, ProtocolError::OutOfCalibratedRange { .. }), "{err}");
    assert!(err.to_string().contains("recalibrate"));
}

#[test]
fn compensated_sweep_is_cumulatively_consistent() {
    let s = sweep(25.0, 100.0, 3.0, 0.1);
    let mut inst = instrument(30.12, 9, 25.0);
    let run = run_compensated_sweep(&mut inst, &s).unwrap();
    let op = run.operating_point.as_ref().unwrap();
    let last = run.records.last().unwrap();
    assert_eq!(last.temperature_c, 100.0);

    // End-to-end delay from the dispersion model.
    let ktp = builtin().get("KTP").unwrap();
    let path = |t: f64| {
        let sm = Sample::new(ktp.clone(), 30.12, t).unwrap();
        sm.group_index(0.8108).unwrap() * sm.current_length_mm() * 1e3
    };
    let model_dx = path(100.0) - path(25.0);
    let rel = (last.inferred_delay_um - model_dx).abs() / model_dx;
    assert!(rel < 0.005, "{} vs {model_dx}", last.inferred_delay_um);
    let rel = (run.total_delta_ng - last.theory_delta_ng).abs() / last.theory_delta_ng;
    assert!(rel < 0.005, "{} vs {}", run.total_delta_ng, last.theory_delta_ng);

    // Every step ends with the reading back at the start point.
    let cal = op.calibration.rescaled(0.1);
    let sigma_delay = cal.anchor_counts.sqrt() / cal.slope_counts_per_um;
    for r in &run.records {
        assert!(r.stage_moves <= MAX_COMPENSATION_MOVES);
        let s_now = hom_core::estimation::delay_from_counts(r.coincidence_counts as f64, &cal).unwrap();
        assert!((s_now - op.start_separation_um).abs() < 2.0 * sigma_delay);
    }
    assert!(run.records.windows(2).all(|w| w[1].inferred_delay_um > w[0].inferred_delay_um));
}

#[test]
fn stage_travel_limit_faults_with_state() {
    let mut inst = instrument(30.12, 2, 25.0);
    let mut cfg = inst.config().clone();
    cfg.stage_travel_um = [0.0, 27_420.0];
    inst = Instrument::new(cfg, 25.0, 27_000.0).unwrap();
    let err = run_compensated_sweep(&mut inst, &sweep(25.0, 100.0, 3.0, 0.1)).unwrap_err();
    match err {
        ProtocolError::CompensationFault { state, .. } => assert!(state.contains("stage_position_um")),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn oven_limits_are_enforced() {
    let mut inst = instrument(30.12, 1, 25.0);
    assert!(matches!(inst.set_temperature(201.0), Err(ProtocolError::OvenRange(..))));
    inst.set_temperature(26.04).unwrap();
    assert_eq!(inst.temperature_c(), 26.0);
}

fn stability(step_c: f64, drift: Option<DriftModel>, seed: u64) -> StabilityTrace {
    let mut inst = instrument(30.12, seed, 27.1);
    if drift.is_some() {
        let mut cfg = inst.config().clone();
        cfg.detector.drift = drift;
        inst = Instrument::new(cfg, 27.1, 0.0).unwrap();
    }
    let st = StabilitySettings {
        start_c: 27.1,
        step_c,
        plateaus: 4,
        reads_per_plateau: 60,
        integration_time_s: 0.1,
        wavelength_um: 0.8108,
        calibration: CalibrationSettings::default(),
    };
    run_stability_trace(&mut inst, &st).unwrap()
}

/// Two-sided Welch t-test p-value for equal means.
fn welch_p(a: &Plateau, b: &Plateau) -> f64 {
    let (na, nb) = (a.counts.len() as f64, b.counts.len() as f64);
    let (va, vb) = (a.std.powi(2) / na, b.std.powi(2) / nb);
    let t = (a.mean - b.mean) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().sf(t.abs())
}

#[test]
fn stability_plateaus_without_steps_are_indistinguishable() {
    let tr = stability(0.0, None, 31);
    for w in tr.plateaus.windows(2) {
        assert!(welch_p(&w[0], &w[1]) > 0.01, "{} vs {}", w[0].mean, w[1].mean);
    }
}

#[test]
fn temperature_steps_dominate_detector_drift() {
    let quiet = stability(0.1, None, 32);
    let drift = DriftModel {
        amplitude: 0.02,
        period_s: 30.0,
        walk_per_sqrt_s: 0.005,
    };
    let noisy = stability(0.1, Some(drift), 32);
    let mean_std = |t: &StabilityTrace| t.plateaus.iter().map(|p| p.std).sum::<f64>() / t.plateaus.len() as f64;
    assert!(mean_std(&noisy) > mean_std(&quiet));
    for tr in [&quiet, &noisy] {
        assert!(tr.jumps.iter().all(|j| j.abs() > 100.0), "{:?}", tr.jumps);
        for (w, j) in tr.plateaus.windows(2).zip(&tr.jumps) {
            assert!(welch_p(&w[0], &w[1]) < 1e-6, "jump {j}");
        }
    }
}
