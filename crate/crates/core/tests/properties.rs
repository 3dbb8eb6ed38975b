//! Property tests for the physical invariants.

use hom_core::biphoton::{qpm_temperature, spdc_spectral_density, synthetic_gaussian, CrystalSpec};
use hom_core::estimation::delta_ng_formula;
use hom_core::interference::{delay_grid, sample_phase, ArmSample, HomEngine};
use hom_core::materials::{builtin, Sample};
use proptest::prelude::*;

fn ktp_crystal(length_mm: f64, temperature_c: f64) -> CrystalSpec {
    let ktp = builtin().get("KTP").unwrap();
    CrystalSpec::new(ktp, length_mm, 3.425, temperature_c, 0.4054).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn spectrum_is_symmetric_and_normalized(length in 0.5f64..30.0, offset in 0.0f64..1.5) {
        // Temperatures within the phase-matching acceptance, which narrows as 1/L.
        let t_qpm = qpm_temperature(&ktp_crystal(length, 25.0)).unwrap();
        let s = spdc_spectral_density(&ktp_crystal(length, t_qpm + offset * 3.6 / length), 2048, 4.0).unwrap();
        prop_assert!((s.integral() - 1.0).abs() < 1e-12);
        prop_assert!(s.asymmetry() < 1e-12);
        let n = s.len();
        for k in 0..n {
            prop_assert!((s.detuning[k] + s.detuning[n - 1 - k]).abs() <= 1e-12 * s.detuning[n - 1].abs());
        }
    }

    #[test]
    fn even_phase_leaves_profile_unchanged(
        a0 in -50.0f64..50.0,
        a2 in -1e-26f64..1e-26,
        a4 in -1e-52f64..1e-52,
        delay in -20.0f64..20.0,
    ) {
        let s = synthetic_gaussian(0.8108, 40.0, 2048, 6.0).unwrap();
        let even: Vec<f64> = s.detuning.iter().map(|w| a0 + a2 * w * w + a4 * w.powi(4)).collect();
        let plain = HomEngine::with_phase(&s, None, 0.93, None).unwrap();
        let dispersed = HomEngine::with_phase(&s, Some(&even), 0.93, None).unwrap();
        prop_assert!((plain.probability(delay) - dispersed.probability(delay)).abs() <= 1e-9);
    }

    #[test]
    fn analytic_group_index_matches_finite_difference(
        name in prop::sample::select(vec!["KTP", "SLT", "CLN", "Schott-glass", "BK7"]),
        lambda in 0.6f64..1.6,
        temp in 20.0f64..35.0,
    ) {
        let m = builtin().get(name).unwrap();
        let a = m.group_index(lambda, temp).unwrap();
        let f = m.group_index_fd(lambda, temp).unwrap();
        prop_assert!((a - f).abs() <= 1e-7, "{name} {lambda} {temp}: {a} vs {f}");
    }

    #[test]
    fn delta_ng_is_linear_in_delay(
        dx1 in -300.0f64..300.0,
        dx2 in -300.0f64..300.0,
        length in 1.0f64..50.0,
        ng in 1.4f64..2.4,
        dl in -0.01f64..0.01,
    ) {
        let f = |dx| delta_ng_formula(dx, length, ng, dl);
        let zero = f(0.0);
        let lhs = f(dx1 + dx2) - zero;
        let rhs = (f(dx1) - zero) + (f(dx2) - zero);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn expansion_scales_with_length(length in 0.1f64..100.0, t0 in 20.0f64..100.0, dt in 0.0f64..100.0) {
        let ktp = builtin().get("KTP").unwrap();
        let one = ktp.thermal_expansion(1.0, t0, dt).unwrap();
        let many = ktp.thermal_expansion(length, t0, dt).unwrap();
        prop_assert!((many - length * one).abs() <= 1e-12 * many.abs().max(1e-12));
    }

    #[test]
    fn expansion_composes(t0 in 20.0f64..100.0, dt1 in 0.0f64..50.0, dt2 in 0.0f64..50.0) {
        let ktp = builtin().get("KTP").unwrap();
        let l = 30.12;
        let first = ktp.thermal_expansion(l, t0, dt1).unwrap();
        let second = ktp.thermal_expansion(l + first, t0 + dt1, dt2).unwrap();
        let direct = ktp.thermal_expansion(l, t0, dt1 + dt2).unwrap();
        prop_assert!((first + second - direct).abs() <= 1e-12);
    }

    #[test]
    fn profile_stays_in_bounds(visibility in 0.05f64..1.0, sample_mm in 0.0f64..10.0) {
        let s = spdc_spectral_density(&ktp_crystal(1.0, 51.3), 1024, 4.0).unwrap();
        let ktp = builtin().get("KTP").unwrap();
        let arm = (sample_mm > 0.5).then(|| ArmSample::new(Sample::new(ktp, sample_mm, 25.0).unwrap()));
        let engine = HomEngine::new(&s, arm.as_ref(), visibility).unwrap();
        let center = match &arm {
            Some(a) => {
                let ph = sample_phase(a, &s).unwrap();
                let n = ph.len();
                let dw = s.detuning[n / 2 + 1] - s.detuning[n / 2 - 1];
                (ph[n / 2 + 1] - ph[n / 2 - 1]) / dw * hom_core::SPEED_OF_LIGHT_UM_PER_S
            }
            None => 0.0,
        };
        for x in delay_grid(center, 30.0, 61) {
            let p = engine.probability(x);
            prop_assert!((0.5 * (1.0 - visibility) - 1e-12..=0.5 * (1.0 + visibility) + 1e-12).contains(&p));
        }
    }
}
