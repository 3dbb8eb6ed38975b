//! HOM coincidence profiles.
//!
//! For a symmetric pair spectrum `S(Ω)` and a sample phase `φ(Ω)` in one arm, the coincidence
//! probability at one-pass path delay `x` is
//! `C(x) = ½[1 − V·∫S(Ω) cos(φ(Ω) − φ(−Ω) − 2Ωx/c) dΩ]`,
//! integrated with the trapezoid rule on the spectrum's uniform grid. Only the odd part of
//! `φ` enters, which is the dispersion-cancellation property of the interferometer.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::biphoton::SpectralDensity;
use crate::error::ErrorKind;
use crate::estimation::{locate_min, EstimationError};
use crate::materials::{MaterialError, Sample};
use crate::SPEED_OF_LIGHT_UM_PER_S as C;

#[derive(Debug, Error)]
pub enum InterferenceError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("curve shape error: {0}")]
    Shape(String),
    #[error("degenerate curve: all probabilities are zero")]
    DegenerateCurve,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("curve I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("curve CSV parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

impl InterferenceError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            InterferenceError::Material(e) => e.kind(),
            InterferenceError::InvalidParameter { .. } | InterferenceError::Csv { .. } => ErrorKind::Config,
            InterferenceError::Io(_) => ErrorKind::Io,
            InterferenceError::Estimation(e) => e.kind(),
            _ => ErrorKind::Fit,
        }
    }
}

/// Interferometer arm holding the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arm {
    /// The dip moves to positive delay by the sample's group delay.
    #[default]
    First,
    /// The dip moves to negative delay.
    Second,
}

impl Arm {
    fn sign(self) -> f64 {
        match self {
            Arm::First => 1.0,
            Arm::Second => -1.0,
        }
    }
}

/// A sample placed in one interferometer arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSample {
    pub sample: Sample,
    pub arm: Arm,
    /// The sample replaces an equal length of air (vacuum) in the arm.
    pub displaces_air: bool,
}

impl ArmSample {
    pub fn new(sample: Sample) -> Self {
        ArmSample {
            sample,
            arm: Arm::First,
            displaces_air: true,
        }
    }

    pub fn describe(&self) -> String {
        format!(
            "{} {} mm at {} °C ({:?} arm{})",
            self.sample.material.name,
            self.sample.length_mm,
            self.sample.temperature_c,
            self.arm,
            if self.displaces_air { ", displaces air" } else { "" }
        )
    }
}

/// Spectral phase of a sample on the spectrum's grid, rad.
///
/// `φ(Ω) = (ω/c)·[n(λ, T)·L(T) − L_ref]` with `ω = ω0 + Ω`, where `L(T)` is the expanded
/// glass length and `L_ref` the reference length of the displaced air column (dropped when
/// `displaces_air` is false).
pub fn sample_phase(arm_sample: &ArmSample, spectrum: &SpectralDensity) -> Result<Vec<f64>, InterferenceError> {
    let s = &arm_sample.sample;
    let l_glass = s.current_length_mm() * 1e3;
    let l_air = if arm_sample.displaces_air { s.length_mm * 1e3 } else { 0.0 };
    (0..spectrum.len())
        .map(|k| {
            let lam = spectrum.wavelength_um(k);
            let n = s.material.refractive_index(lam, s.temperature_c)?;
            let omega = spectrum.omega0 + spectrum.detuning[k];
            Ok(omega / C * (n * l_glass - l_air))
        })
        .collect()
}

/// Coincidence probability profile.
#[derive(Debug, Clone, PartialEq)]
pub struct HomCurve {
    pub delay_um: Vec<f64>,
    pub probability: Vec<f64>,
    pub visibility0: f64,
    pub sample: Option<String>,
    pub spectrum: String,
}

impl HomCurve {
    pub fn len(&self) -> usize {
        self.delay_um.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delay_um.is_empty()
    }

    /// CSV with columns `delay_um,probability` at 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), InterferenceError> {
        writeln!(w, "delay_um,probability")?;
        for (x, p) in self.delay_um.iter().zip(&self.probability) {
            writeln!(w, "{x:.11e},{p:.11e}")?;
        }
        Ok(())
    }

    /// Parse the format written by [`HomCurve::write_csv`]; metadata is not stored in the file.
    pub fn read_csv<R: BufRead>(r: R, visibility0: f64) -> Result<Self, InterferenceError> {
        let mut delay_um = Vec::new();
        let mut probability = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "delay_um,probability" {
                    return Err(InterferenceError::Csv {
                        line: 1,
                        message: format!("unexpected header `{line}`"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let mut field = |name: &str| -> Result<f64, InterferenceError> {
                it.next()
                    .ok_or_else(|| InterferenceError::Csv {
                        line: i + 1,
                        message: format!("missing {name}"),
                    })?
                    .trim()
                    .parse()
                    .map_err(|e| InterferenceError::Csv {
                        line: i + 1,
                        message: format!("{name}: {e}"),
                    })
            };
            delay_um.push(field("delay_um")?);
            probability.push(field("probability")?);
        }
        Ok(HomCurve {
            delay_um,
            probability,
            visibility0,
            sample: None,
            spectrum: "csv".into(),
        })
    }
}

/// Precomputed quadrature weights and phase difference for fast profile evaluation.
#[derive(Debug, Clone)]
pub struct HomEngine {
    detuning: Vec<f64>,
    weights: Vec<f64>,
    dphi: Vec<f64>,
    visibility0: f64,
    spectrum: String,
    sample: Option<String>,
}

impl HomEngine {
    /// Engine for an optional sample.
    pub fn new(spectrum: &SpectralDensity, sample: Option<&ArmSample>, visibility0: f64) -> Result<Self, InterferenceError> {
        let (phase, desc) = match sample {
            Some(s) => {
                let mut p = sample_phase(s, spectrum)?;
                let sign = s.arm.sign();
                p.iter_mut().for_each(|v| *v *= sign);
                (Some(p), Some(s.describe()))
            }
            None => (None, None),
        };
        Self::with_phase(spectrum, phase.as_deref(), visibility0, desc)
    }

    /// Engine for an explicit phase array on the spectrum grid.
    pub fn with_phase(
        spectrum: &SpectralDensity,
        phase: Option<&[f64]>,
        visibility0: f64,
        sample: Option<String>,
    ) -> Result<Self, InterferenceError> {
        if !(visibility0 > 0.0 && visibility0 <= 1.0) {
            return Err(InterferenceError::InvalidParameter {
                name: "visibility0",
                message: format!("must lie in (0, 1], got {visibility0}"),
            });
        }
        let n = spectrum.len();
        if let Some(p) = phase {
            if p.len() != n {
                return Err(InterferenceError::InvalidParameter {
                    name: "phase",
                    message: format!("length {} does not match the {n}-point grid", p.len()),
                });
            }
        }
        let h = spectrum.step();
        let weights: Vec<f64> = spectrum
            .weights
            .iter()
            .enumerate()
            .map(|(k, w)| if k == 0 || k == n - 1 { 0.5 * h * w } else { h * w })
            .collect();
        let dphi = match phase {
            Some(p) => (0..n).map(|k| p[k] - p[n - 1 - k]).collect(),
            None => vec![0.0; n],
        };
        Ok(HomEngine {
            detuning: spectrum.detuning.clone(),
            weights,
            dphi,
            visibility0,
            spectrum: spectrum.provenance.to_string(),
            sample,
        })
    }

    pub fn visibility0(&self) -> f64 {
        self.visibility0
    }

    /// Coincidence probability at one delay.
    pub fn probability(&self, delay_um: f64) -> f64 {
        let k = 2.0 * delay_um / C;
        let overlap: f64 = self
            .detuning
            .iter()
            .zip(&self.weights)
            .zip(&self.dphi)
            .map(|((w, s), d)| s * (d - k * w).cos())
            .sum();
        0.5 * (1.0 - self.visibility0 * overlap)
    }

    /// Profile on a delay grid, evaluated in parallel.
    pub fn curve(&self, delays_um: &[f64]) -> HomCurve {
        let probability = delays_um.par_iter().map(|&x| self.probability(x)).collect();
        HomCurve {
            delay_um: delays_um.to_vec(),
            probability,
            visibility0: self.visibility0,
            sample: self.sample.clone(),
            spectrum: self.spectrum.clone(),
        }
    }
}

/// HOM profile for a spectrum, an optional sample and a visibility factor.
pub fn hom_profile(
    spectrum: &SpectralDensity,
    delays_um: &[f64],
    sample: Option<&ArmSample>,
    visibility0: f64,
) -> Result<HomCurve, InterferenceError> {
    Ok(HomEngine::new(spectrum, sample, visibility0)?.curve(delays_um))
}

/// Uniform delay grid `center ± half_range` with `points` samples.
pub fn delay_grid(center_um: f64, half_range_um: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| center_um - half_range_um + 2.0 * half_range_um * i as f64 / (n - 1) as f64)
        .collect()
}

/// Width at half depth between the global minimum and the 0.5 asymptote, µm.
pub fn curve_fwhm(curve: &HomCurve) -> Result<f64, InterferenceError> {
    let p = &curve.probability;
    let x = &curve.delay_um;
    if p.len() < 3 {
        return Err(InterferenceError::Shape("fewer than three points".into()));
    }
    let (i0, pmin) = p
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    let level = 0.5 * (pmin + 0.5);
    if !(pmin < 0.5) {
        return Err(InterferenceError::Shape("curve has no dip below the 0.5 asymptote".into()));
    }
    let none = || InterferenceError::Shape("no half-depth crossing inside the delay window".into());
    let r = (i0..p.len()).find(|&j| p[j] >= level).ok_or_else(none)?;
    let l = (0..=i0).rev().find(|&j| p[j] >= level).ok_or_else(none)?;
    let interp = |a: usize, b: usize| x[a] + (level - p[a]) * (x[b] - x[a]) / (p[b] - p[a]);
    Ok(interp(r - 1, r) - interp(l + 1, l))
}

/// `(max − min)/max` over the curve.
pub fn curve_visibility(curve: &HomCurve) -> Result<f64, InterferenceError> {
    if curve.is_empty() {
        return Err(InterferenceError::Shape("empty curve".into()));
    }
    let max = curve.probability.iter().cloned().fold(f64::MIN, f64::max);
    let min = curve.probability.iter().cloned().fold(f64::MAX, f64::min);
    if !(max > 0.0) {
        return Err(InterferenceError::DegenerateCurve);
    }
    Ok((max - min) / max)
}

/// Shift of the refined minimum from `reference` to `with_sample`, µm.
pub fn dip_shift(reference: &HomCurve, with_sample: &HomCurve) -> Result<f64, InterferenceError> {
    let a = locate_min(&reference.delay_um, &reference.probability)?;
    let b = locate_min(&with_sample.delay_um, &with_sample.probability)?;
    Ok(b.delay_um - a.delay_um)
}
