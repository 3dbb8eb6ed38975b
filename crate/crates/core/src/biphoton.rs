//! Degenerate type-0 quasi-phase-matched SPDC spectra.
//!
//! A monochromatic CW pump at `λp` produces signal and idler at `ω0 ± Ω` with
//! `ω0 = πc/λp`. In the collinear scalar model the pair spectral density is
//! `S(Ω) ∝ sinc²(Δk(Ω)·L/2)` with
//! `Δk = 2π[n(λp)/λp − n(λs)/λs − n(λi)/λi] − 2π/Λ`.
//! Spectra live on a uniform detuning grid that is exactly antisymmetric,
//! `Ω[k] = −Ω[N−1−k]`, and are normalised so that the trapezoid integral is one.

use std::f64::consts::{LN_2, PI};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ErrorKind;
use crate::materials::{Material, MaterialError};
use crate::{trapz_uniform, SPEED_OF_LIGHT_UM_PER_S as C};

/// Default number of detuning grid points.
pub const DEFAULT_GRID_POINTS: usize = 8192;
/// Default ratio of grid span to the estimated spectral FWHM.
pub const DEFAULT_SPAN_FACTOR: f64 = 4.0;

const COARSE_POINTS: usize = 4001;
const QPM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BiphotonError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("degenerate phase mismatch does not change sign between {lo_c} °C and {hi_c} °C")]
    NoBracket { lo_c: f64, hi_c: f64 },
    #[error("spectrum shape error: {0}")]
    Shape(String),
    #[error("filtered spectrum is empty (filter at {center_um} µm lies outside the spectral grid)")]
    EmptySpectrum { center_um: f64 },
    #[error("cannot write spectrum: {0}")]
    Io(#[from] std::io::Error),
}

impl BiphotonError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            BiphotonError::Material(e) => e.kind(),
            BiphotonError::InvalidParameter { .. } => ErrorKind::Config,
            BiphotonError::NoBracket { .. } => ErrorKind::Range,
            BiphotonError::Shape(_) | BiphotonError::EmptySpectrum { .. } => ErrorKind::Fit,
            BiphotonError::Io(_) => ErrorKind::Io,
        }
    }
}

fn invalid(name: &'static str, message: impl Into<String>) -> BiphotonError {
    BiphotonError::InvalidParameter {
        name,
        message: message.into(),
    }
}

/// `sin(x)/x` with the series form near zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Angular frequency of a vacuum wavelength, rad/s.
pub fn angular_frequency(wavelength_um: f64) -> f64 {
    2.0 * PI * C / wavelength_um
}

/// Poled nonlinear crystal used as the pair source.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalSpec {
    pub material: Arc<Material>,
    pub length_mm: f64,
    pub grating_period_um: f64,
    pub temperature_c: f64,
    pub pump_wavelength_um: f64,
}

impl CrystalSpec {
    pub fn new(
        material: Arc<Material>,
        length_mm: f64,
        grating_period_um: f64,
        temperature_c: f64,
        pump_wavelength_um: f64,
    ) -> Result<Self, BiphotonError> {
        if !(length_mm > 0.0) {
            return Err(invalid("length_mm", format!("must be positive, got {length_mm}")));
        }
        if !(grating_period_um > 0.0) {
            return Err(invalid("grating_period_um", format!("must be positive, got {grating_period_um}")));
        }
        if !(pump_wavelength_um > 0.0) {
            return Err(invalid("pump_wavelength_um", format!("must be positive, got {pump_wavelength_um}")));
        }
        Ok(CrystalSpec {
            material,
            length_mm,
            grating_period_um,
            temperature_c,
            pump_wavelength_um,
        })
    }

    pub fn with_temperature(&self, temperature_c: f64) -> Self {
        CrystalSpec {
            temperature_c,
            ..self.clone()
        }
    }

    pub fn degenerate_wavelength_um(&self) -> f64 {
        2.0 * self.pump_wavelength_um
    }

    pub fn omega0(&self) -> f64 {
        angular_frequency(self.degenerate_wavelength_um())
    }

    /// Largest detuning keeping both daughters inside the material's wavelength range.
    pub fn max_detuning(&self) -> f64 {
        let [lo, hi] = self.material.valid_range.wavelength_um;
        let w0 = self.omega0();
        let by_signal = angular_frequency(lo) - w0;
        let by_idler = w0 - angular_frequency(hi);
        (by_signal.min(by_idler) * (1.0 - 1e-9)).max(0.0)
    }

    fn mismatch(&self, wavelength_s: f64, temperature_c: f64) -> Result<f64, BiphotonError> {
        let lp = self.pump_wavelength_um;
        let inv_i = 1.0 / lp - 1.0 / wavelength_s;
        if !(inv_i > 0.0) {
            return Err(invalid(
                "signal_wavelength_um",
                format!("{wavelength_s} µm leaves no idler for a {lp} µm pump"),
            ));
        }
        let li = 1.0 / inv_i;
        let m = &self.material;
        let np = m.refractive_index(lp, temperature_c)?;
        let ns = m.refractive_index(wavelength_s, temperature_c)?;
        let ni = m.refractive_index(li, temperature_c)?;
        Ok(2.0 * PI * (np / lp - ns / wavelength_s - ni / li) - 2.0 * PI / self.grating_period_um)
    }

    fn mismatch_at_detuning(&self, omega: f64, temperature_c: f64) -> Result<f64, BiphotonError> {
        self.mismatch(2.0 * PI * C / (self.omega0() + omega), temperature_c)
    }
}

/// Phase mismatch `Δk` in rad/µm at the crystal temperature.
pub fn phase_mismatch(crystal: &CrystalSpec, signal_wavelength_um: f64) -> Result<f64, BiphotonError> {
    crystal.mismatch(signal_wavelength_um, crystal.temperature_c)
}

/// Temperature at which the degenerate phase mismatch vanishes.
///
/// The material's temperature range is scanned for the first sign change of `Δk(2λp)`,
/// which is then refined by bisection until `|Δk| < 1e-6` rad/µm.
pub fn qpm_temperature(crystal: &CrystalSpec) -> Result<f64, BiphotonError> {
    let [t_lo, t_hi] = crystal.material.valid_range.temperature_c;
    let ls = crystal.degenerate_wavelength_um();
    let f = |t: f64| crystal.mismatch(ls, t);
    let steps = 200;
    let mut a = t_lo;
    let mut fa = f(a)?;
    if fa == 0.0 {
        return Ok(a);
    }
    let mut bracket = None;
    for i in 1..=steps {
        let b = t_lo + (t_hi - t_lo) * i as f64 / steps as f64;
        let fb = f(b)?;
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() != fb.signum() {
            bracket = Some((a, fa, b));
            break;
        }
        a = b;
        fa = fb;
    }
    let (mut a, mut fa, mut b) = bracket.ok_or(BiphotonError::NoBracket { lo_c: t_lo, hi_c: t_hi })?;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid)?;
        if fm.abs() < QPM_TOLERANCE || (b - a) < 1e-12 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Detuning at which the quadratic part of the mismatch reaches `k_max` phase, capped by the
/// material range. Used to size coarse grids.
fn mismatch_extent(crystal: &CrystalSpec, temperature_c: f64, k_max: f64) -> Result<(f64, bool), BiphotonError> {
    let l_um = crystal.length_mm * 1e3;
    let cap = crystal.max_detuning();
    if cap <= 0.0 {
        return Err(BiphotonError::Shape("no detuning range inside the material window".into()));
    }
    let dk0 = crystal.mismatch_at_detuning(0.0, temperature_c)?;
    let g = |w: f64| -> Result<f64, BiphotonError> {
        Ok((crystal.mismatch_at_detuning(w, temperature_c)? - dk0).abs() * l_um / 2.0 - k_max)
    };
    if g(cap)? < 0.0 {
        return Ok((cap, true));
    }
    let (mut a, mut b) = (0.0, cap);
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if g(mid)? < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((b, false))
}

fn sinc2_weight(crystal: &CrystalSpec, omega: f64, temperature_c: f64) -> Result<f64, BiphotonError> {
    let l_um = crystal.length_mm * 1e3;
    let s = sinc(crystal.mismatch_at_detuning(omega, temperature_c)? * l_um / 2.0);
    Ok(s * s)
}

/// Pair flux (unnormalised ∫S dΩ) at a temperature, on a one-sided grid up to `extent`.
fn pair_flux(crystal: &CrystalSpec, temperature_c: f64, extent: f64) -> Result<f64, BiphotonError> {
    let n = 2001;
    let h = extent / (n - 1) as f64;
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        vals.push(sinc2_weight(crystal, i as f64 * h, temperature_c)?);
    }
    Ok(2.0 * trapz_uniform(&vals, h))
}

/// Oven temperature that maximises the collected pair flux near degenerate phase matching.
///
/// Starts from [`qpm_temperature`] and runs a golden-section search over the window in which
/// the degenerate mismatch phase `Δk·L/2` changes by ±π.
pub fn flux_optimal_temperature(crystal: &CrystalSpec) -> Result<f64, BiphotonError> {
    let t0 = qpm_temperature(crystal)?;
    let m = &crystal.material;
    let [t_lo, t_hi] = m.valid_range.temperature_c;
    let ls = crystal.degenerate_wavelength_um();
    let dt = 0.01;
    let (ta, tb) = ((t0 - dt).max(t_lo), (t0 + dt).min(t_hi));
    let slope = (crystal.mismatch(ls, tb)? - crystal.mismatch(ls, ta)?) / (tb - ta);
    let l_um = crystal.length_mm * 1e3;
    let half_window = if slope.abs() > 0.0 { 2.0 * PI / (l_um * slope.abs()) } else { 1.0 };
    let mut a = (t0 - half_window).max(t_lo);
    let mut b = (t0 + half_window).min(t_hi);
    let (extent, _) = mismatch_extent(crystal, t0, 12.0 * PI)?;
    let flux = |t: f64| pair_flux(crystal, t, extent);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = flux(c)?;
    let mut fd = flux(d)?;
    while (b - a) > 1e-6 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = flux(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = flux(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Origin of a spectral density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Sinc2,
    Filtered,
    SyntheticGaussian,
    SyntheticRect,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Sinc2 => "sinc2",
            Provenance::Filtered => "filtered",
            Provenance::SyntheticGaussian => "synthetic-gaussian",
            Provenance::SyntheticRect => "synthetic-rect",
        })
    }
}

/// Biphoton spectral density on a symmetric detuning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub detuning: Vec<f64>,
    pub weights: Vec<f64>,
    pub center_wavelength_um: f64,
    pub omega0: f64,
    pub provenance: Provenance,
    /// The requested span exceeded the material range and was clipped.
    pub clipped: bool,
}

impl SpectralDensity {
    /// Build from a weight function evaluated on the positive half of the grid and mirrored.
    fn from_half<F>(
        center_wavelength_um: f64,
        grid_points: usize,
        half_span: f64,
        provenance: Provenance,
        mut weight: F,
    ) -> Result<Self, BiphotonError>
    where
        F: FnMut(f64) -> Result<f64, BiphotonError>,
    {
        let n = grid_points;
        let h = 2.0 * half_span / (n - 1) as f64;
        let mid = (n - 1) as f64 / 2.0;
        let detuning: Vec<f64> = (0..n).map(|k| h * (k as f64 - mid)).collect();
        let mut weights = vec![0.0; n];
        for k in n / 2..n {
            let w = weight(detuning[k])?;
            weights[k] = w;
            weights[n - 1 - k] = w;
        }
        let mut s = SpectralDensity {
            detuning,
            weights,
            center_wavelength_um,
            omega0: angular_frequency(center_wavelength_um),
            provenance,
            clipped: false,
        };
        s.normalize()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.detuning.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detuning.is_empty()
    }

    /// Grid spacing, rad/s.
    pub fn step(&self) -> f64 {
        self.detuning[1] - self.detuning[0]
    }

    pub fn span(&self) -> f64 {
        self.detuning[self.len() - 1] - self.detuning[0]
    }

    /// Vacuum wavelength of grid point `k`, µm.
    pub fn wavelength_um(&self, k: usize) -> f64 {
        2.0 * PI * C / (self.omega0 + self.detuning[k])
    }

    pub fn integral(&self) -> f64 {
        trapz_uniform(&self.weights, self.step())
    }

    fn normalize(&mut self) -> Result<(), BiphotonError> {
        let total = self.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(BiphotonError::Shape("spectrum has no positive weight".into()));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(())
    }

    /// Largest relative asymmetry `|S(Ω) − S(−Ω)| / max S`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let peak = self.weights.iter().cloned().fold(0.0, f64::max);
        (0..n / 2)
            .map(|k| (self.weights[k] - self.weights[n - 1 - k]).abs())
            .fold(0.0, f64::max)
            / peak
    }

    /// CSV with columns `detuning_rad_per_s,wavelength_nm,weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), BiphotonError> {
        writeln!(w, "detuning_rad_per_s,wavelength_nm,weight")?;
        for k in 0..self.len() {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e}",
                self.detuning[k],
                self.wavelength_um(k) * 1e3,
                self.weights[k]
            )?;
        }
        Ok(())
    }
}

fn check_grid(grid_points: usize, span_factor: f64) -> Result<(), BiphotonError> {
    if grid_points < 1024 || grid_points % 2 != 0 {
        return Err(invalid("grid_points", format!("must be even and at least 1024, got {grid_points}")));
    }
    if !(span_factor >= 3.0) {
        return Err(invalid("span_factor", format!("must be at least 3, got {span_factor}")));
    }
    Ok(())
}

/// Detuning full width of a symmetric one-sided profile: twice the outermost half-maximum
/// crossing of the lobe containing the global maximum.
fn coarse_full_width(omegas: &[f64], values: &[f64]) -> Option<f64> {
    let (imax, vmax) = values
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    if !(vmax > 0.0) {
        return None;
    }
    let half = vmax / 2.0;
    let j = (imax..values.len()).find(|&j| values[j] < half)?;
    let (x0, x1, y0, y1) = (omegas[j - 1], omegas[j], values[j - 1], values[j]);
    Some(2.0 * (x0 + (half - y0) * (x1 - x0) / (y1 - y0)))
}

/// Degenerate sinc² pair spectrum of `crystal` at its temperature.
///
/// The grid spans `span_factor` times a coarse estimate of the spectral FWHM; if that exceeds
/// the material's wavelength window the span is clipped and `clipped` is set.
pub fn spdc_spectral_density(
    crystal: &CrystalSpec,
    grid_points: usize,
    span_factor: f64,
) -> Result<SpectralDensity, BiphotonError> {
    check_grid(grid_points, span_factor)?;
    let t = crystal.temperature_c;
    crystal.material.check_temperature(t)?;
    crystal.material.check_wavelength(crystal.pump_wavelength_um)?;
    let (extent, _) = mismatch_extent(crystal, t, 12.0 * PI)?;
    let h = extent / (COARSE_POINTS - 1) as f64;
    let omegas: Vec<f64> = (0..COARSE_POINTS).map(|i| i as f64 * h).collect();
    let values = omegas
        .iter()
        .map(|&w| sinc2_weight(crystal, w, t))
        .collect::<Result<Vec<_>, _>>()?;
    let fwhm = coarse_full_width(&omegas, &values).ok_or_else(|| {
        BiphotonError::Shape(format!(
            "no half-maximum crossing in the phase-matching profile of {} at {t} °C",
            crystal.material.name
        ))
    })?;
    let mut half_span = span_factor * fwhm / 2.0;
    let cap = crystal.max_detuning();
    let clipped = half_span > cap;
    if clipped {
        half_span = cap;
    }
    let mut s = SpectralDensity::from_half(
        crystal.degenerate_wavelength_um(),
        grid_points,
        half_span,
        Provenance::Sinc2,
        |w| sinc2_weight(crystal, w, t),
    )?;
    s.clipped = clipped;
    Ok(s)
}

/// Gaussian spectrum with the given wavelength FWHM, defined as a Gaussian in detuning.
pub fn synthetic_gaussian(
    center_wavelength_um: f64,
    fwhm_nm: f64,
    grid_points: usize,
    span_factor: f64,
) -> Result<SpectralDensity, BiphotonError> {
    check_grid(grid_points, span_factor)?;
    if !(fwhm_nm > 0.0) {
        return Err(invalid("fwhm_nm", "must be positive"));
    }
    let d = detuning_width(center_wavelength_um, fwhm_nm);
    SpectralDensity::from_half(
        center_wavelength_um,
        grid_points,
        span_factor * d / 2.0,
        Provenance::SyntheticGaussian,
        |w| Ok((-4.0 * LN_2 * w * w / (d * d)).exp()),
    )
}

/// Flat-top spectrum of the given wavelength width.
pub fn synthetic_rect(
    center_wavelength_um: f64,
    width_nm: f64,
    grid_points: usize,
    span_factor: f64,
) -> Result<SpectralDensity, BiphotonError> {
    check_grid(grid_points, span_factor)?;
    if !(width_nm > 0.0) {
        return Err(invalid("width_nm", "must be positive"));
    }
    let d = detuning_width(center_wavelength_um, width_nm);
    SpectralDensity::from_half(
        center_wavelength_um,
        grid_points,
        span_factor * d / 2.0,
        Provenance::SyntheticRect,
        |w| Ok(if w.abs() <= d / 2.0 { 1.0 } else { 0.0 }),
    )
}

/// Angular-frequency width corresponding to a small wavelength width at `center_um`.
pub fn detuning_width(center_um: f64, width_nm: f64) -> f64 {
    2.0 * PI * C * (width_nm * 1e-3) / (center_um * center_um)
}

/// Where a bandpass filter sits in the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterPlacement {
    /// One filter acting on the pair: `S·√(T(Ω)T(−Ω))`, equal to `S·T` for a centred filter.
    #[default]
    OneArm,
    /// Identical filters in both arms: `S·T(Ω)T(−Ω)`.
    BothArms,
}

/// Gaussian interference filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandpassFilter {
    pub center_um: f64,
    pub fwhm_nm: f64,
    pub placement: FilterPlacement,
}

impl BandpassFilter {
    pub fn new(center_um: f64, fwhm_nm: f64, placement: FilterPlacement) -> Result<Self, BiphotonError> {
        if !(fwhm_nm > 0.0) {
            return Err(invalid("fwhm_nm", format!("must be positive, got {fwhm_nm}")));
        }
        if !(center_um > 0.0) {
            return Err(invalid("center_um", format!("must be positive, got {center_um}")));
        }
        Ok(BandpassFilter {
            center_um,
            fwhm_nm,
            placement,
        })
    }

    /// Intensity transmission at detuning `omega` from `omega0`.
    pub fn transmission(&self, omega0: f64, omega: f64) -> f64 {
        let wc = angular_frequency(self.center_um) - omega0;
        let d = detuning_width(self.center_um, self.fwhm_nm);
        (-4.0 * LN_2 * (omega - wc).powi(2) / (d * d)).exp()
    }
}

/// Multiply a spectrum by a filter transmission and renormalise.
pub fn apply_filter(spectrum: &SpectralDensity, filter: &BandpassFilter) -> Result<SpectralDensity, BiphotonError> {
    let w0 = spectrum.omega0;
    let peak_in = spectrum.weights.iter().cloned().fold(0.0, f64::max);
    let weights: Vec<f64> = spectrum
        .detuning
        .iter()
        .zip(&spectrum.weights)
        .map(|(&w, &s)| {
            let (tp, tm) = (filter.transmission(w0, w), filter.transmission(w0, -w));
            match filter.placement {
                FilterPlacement::OneArm => s * (tp * tm).sqrt(),
                FilterPlacement::BothArms => s * tp * tm,
            }
        })
        .collect();
    let peak_out = weights.iter().cloned().fold(0.0, f64::max);
    if !(peak_out > 1e-12 * peak_in) {
        return Err(BiphotonError::EmptySpectrum {
            center_um: filter.center_um,
        });
    }
    let mut out = SpectralDensity {
        weights,
        provenance: Provenance::Filtered,
        ..spectrum.clone()
    };
    out.normalize()?;
    Ok(out)
}

/// Main-lobe FWHM of a spectrum in wavelength units, nm.
///
/// Walks outward from the global maximum to the first half-maximum crossing on each side and
/// interpolates linearly in detuning.
pub fn bandwidth_fwhm(spectrum: &SpectralDensity) -> Result<f64, BiphotonError> {
    let s = &spectrum.weights;
    let n = s.len();
    let (imax, vmax) = s
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
    let half = vmax / 2.0;
    let flat = || BiphotonError::Shape("no half-maximum crossing inside the grid".into());
    let right = (imax..n).find(|&j| s[j] < half).ok_or_else(flat)?;
    let left = (0..=imax).rev().find(|&j| s[j] < half).ok_or_else(flat)?;
    let om = &spectrum.detuning;
    let interp = |a: usize, b: usize| om[a] + (half - s[a]) * (om[b] - om[a]) / (s[b] - s[a]);
    let w_right = interp(right - 1, right);
    let w_left = interp(left + 1, left);
    let lam = |w: f64| 2.0 * PI * C / (spectrum.omega0 + w);
    Ok((lam(w_left) - lam(w_right)).abs() * 1e3)
}
