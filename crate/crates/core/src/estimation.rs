//! Estimators acting on count data: Gaussian dip fits, minimum location, slope calibration,
//! delay readout, group index from a dip shift, temperature-dependent group index and
//! shot-noise precision.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::Serialize;
use thiserror::Error;

use crate::detection::CountRecord;
use crate::error::ErrorKind;
use crate::materials::{MaterialError, Sample};

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

/// Reduced Pearson χ² above which a dip fit is flagged as a model mismatch.
pub const MISMATCH_THRESHOLD: f64 = 3.0;

/// Bound on the neglected `Δn_g·ΔL/L` term of the temperature readout.
pub const CROSS_TERM_BOUND: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dip fit did not converge after {iterations} iterations (last cost {last_cost:.6e}); trace: {trace:?}")]
    NonConvergence {
        iterations: usize,
        last_cost: f64,
        trace: Vec<(usize, f64, f64)>,
    },
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("calibration region [{a}, {b}] µm spans the dip minimum")]
    RegionSpansMinimum { a: f64, b: f64 },
    #[error("calibration slope {slope:.4e} counts/µm is not distinguishable from zero (stderr {stderr:.3e})")]
    NearZeroSlope { slope: f64, stderr: f64 },
    #[error("invalid calibration region [{a}, {b}] µm")]
    InvalidRegion { a: f64, b: f64 },
    #[error("{counts} counts lie outside the calibrated range [{lo:.1}, {hi:.1}]; recompensate the delay")]
    Extrapolation { counts: f64, lo: f64, hi: f64 },
    #[error("sample length must be positive, got {0} mm")]
    NonPositiveLength(f64),
    #[error(transparent)]
    Material(#[from] MaterialError),
}

impl EstimationError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            EstimationError::Extrapolation { .. } => ErrorKind::Range,
            EstimationError::InvalidRegion { .. } | EstimationError::NonPositiveLength(_) => ErrorKind::Config,
            EstimationError::Material(e) => e.kind(),
            _ => ErrorKind::Fit,
        }
    }
}

/// Refined location of a sampled minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinLocation {
    pub delay_um: f64,
    pub value: f64,
    /// Another, non-adjacent sample ties the minimum; the smallest delay was taken.
    pub ambiguous: bool,
}

/// Minimum of sampled data refined by a parabola through the lowest point and its neighbours.
///
/// Exact ties between non-adjacent samples resolve to the smallest delay and set
/// `ambiguous`. A flat series or a minimum on the first or last sample is a shape error.
pub fn locate_min(xs: &[f64], ys: &[f64]) -> Result<MinLocation, EstimationError> {
    if xs.len() != ys.len() {
        return Err(EstimationError::Shape("delay and value arrays differ in length".into()));
    }
    if xs.len() < 3 {
        return Err(EstimationError::InsufficientPoints { needed: 3, got: xs.len() });
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let x: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let y: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax > ymin) {
        return Err(EstimationError::Shape("flat data has no unique minimum".into()));
    }
    let ties: Vec<usize> = (0..y.len()).filter(|&i| y[i] == ymin).collect();
    let i0 = ties[0];
    let ambiguous = ties.windows(2).any(|w| w[1] - w[0] > 1);
    if i0 == 0 || i0 == y.len() - 1 {
        return Err(EstimationError::Shape(format!(
            "minimum at the scan edge ({} µm)",
            x[i0]
        )));
    }
    let (x1, x2, x3) = (x[i0 - 1], x[i0], x[i0 + 1]);
    let (y1, y2, y3) = (y[i0 - 1], y[i0], y[i0 + 1]);
    let num = (x2 - x1).powi(2) * (y2 - y3) - (x2 - x3).powi(2) * (y2 - y1);
    let den = (x2 - x1) * (y2 - y3) - (x2 - x3) * (y2 - y1);
    let (xv, yv) = if den != 0.0 {
        let xv = x2 - 0.5 * num / den;
        // Parabola value at the vertex from the Lagrange form.
        let l = |xa: f64, xb: f64, xc: f64| (xv - xb) * (xv - xc) / ((xa - xb) * (xa - xc));
        let yv = y1 * l(x1, x2, x3) + y2 * l(x2, x1, x3) + y3 * l(x3, x1, x2);
        (xv.clamp(x1, x3), yv)
    } else {
        (x2, y2)
    };
    Ok(MinLocation {
        delay_um: xv,
        value: yv,
        ambiguous,
    })
}

/// [`locate_min`] on coincidence counts.
pub fn locate_min_records(records: &[CountRecord]) -> Result<MinLocation, EstimationError> {
    let (x, y) = split_records(records);
    locate_min(&x, &y)
}

fn split_records(records: &[CountRecord]) -> (Vec<f64>, Vec<f64>) {
    records.iter().map(|r| (r.delay_um, r.coincidences as f64)).unzip()
}

/// Relative cost reduction below which the fit counts as converged.
const COST_TOLERANCE: f64 = 1.5e-8;

/// Inverted-Gaussian fit `B·[1 − V·exp(−4 ln2 (x − x0)²/w²)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DipFit {
    pub center_um: f64,
    pub fwhm_um: f64,
    pub visibility: f64,
    pub baseline_counts: f64,
    /// Reduced Pearson χ² of the fit.
    pub residual_norm: f64,
    /// Variances of `[B, V, x0, w]`.
    pub covariance_diag: [f64; 4],
    pub iterations: usize,
    /// `residual_norm` exceeds [`MISMATCH_THRESHOLD`].
    pub model_mismatch: bool,
}

impl DipFit {
    pub fn center_sigma_um(&self) -> f64 {
        self.covariance_diag[2].sqrt()
    }
}

fn gaussian_dip(p: &Vector4<f64>, x: f64) -> f64 {
    p[0] * (1.0 - p[1] * (-FOUR_LN2 * (x - p[2]).powi(2) / (p[3] * p[3])).exp())
}

/// Fit an inverted Gaussian to coincidence counts.
pub fn fit_gaussian_dip(records: &[CountRecord]) -> Result<DipFit, EstimationError> {
    let (x, y) = split_records(records);
    fit_gaussian_dip_xy(&x, &y)
}

/// Fit an inverted Gaussian to `(delay, value)` pairs by Levenberg-Marquardt with a
/// central-difference Jacobian.
pub fn fit_gaussian_dip_xy(x: &[f64], y: &[f64]) -> Result<DipFit, EstimationError> {
    let n = x.len();
    if n < 7 || y.len() != n {
        return Err(EstimationError::InsufficientPoints { needed: 7, got: n.min(y.len()) });
    }
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(xmax > xmin) {
        return Err(EstimationError::Shape("degenerate delay span".into()));
    }
    if !(ymax > ymin) {
        return Err(EstimationError::Shape("data has no dip".into()));
    }

    let mut p = initial_guess(x, y);
    let scale = |p: &Vector4<f64>| Vector4::new(p[0].abs().max(1e-12), 1.0, p[3].abs(), p[3].abs());
    let residuals = |p: &Vector4<f64>| DVector::from_iterator(n, (0..n).map(|i| y[i] - gaussian_dip(p, x[i])));
    let jacobian = |p: &Vector4<f64>| {
        let s = scale(p);
        let mut j = DMatrix::zeros(n, 4);
        for k in 0..4 {
            let h = 1e-6 * s[k];
            let (mut pp, mut pm) = (*p, *p);
            pp[k] += h;
            pm[k] -= h;
            for i in 0..n {
                j[(i, k)] = (gaussian_dip(&pp, x[i]) - gaussian_dip(&pm, x[i])) / (2.0 * h);
            }
        }
        j
    };

    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=200 {
        iterations = it;
        let j = jacobian(&p);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..4 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let step = Vector4::new(delta[0], delta[1], delta[2], delta[3]);
            let trial = p + step;
            let rt = residuals(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let s = scale(&p);
                let rel = (0..4).map(|k| (step[k] / s[k]).abs()).fold(0.0, f64::max);
                let cost_drop = (cost - ct) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < 1e-9 || cost_drop < COST_TOLERANCE {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        trace.push((it, cost, lambda));
        if trace.len() > 20 {
            trace.remove(0);
        }
        if converged || !accepted {
            // No downhill step exists at any damping: the iterate is a minimum to machine precision.
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EstimationError::NonConvergence {
            iterations,
            last_cost: cost,
            trace,
        });
    }
    p[3] = p[3].abs();
    let j = jacobian(&p);
    let dof = (n - 4) as f64;
    let s2 = cost / dof;
    let jtj = j.transpose() * &j;
    let cov = Matrix4::from_iterator(jtj.iter().cloned())
        .try_inverse()
        .map(|m| m * s2)
        .unwrap_or_else(|| Matrix4::from_element(f64::INFINITY));
    let chi2: f64 = (0..n)
        .map(|i| {
            let f = gaussian_dip(&p, x[i]);
            (y[i] - f).powi(2) / f.max(1.0)
        })
        .sum::<f64>()
        / dof;
    Ok(DipFit {
        center_um: p[2],
        fwhm_um: p[3],
        visibility: p[1].clamp(0.0, 1.0),
        baseline_counts: p[0],
        residual_norm: chi2,
        covariance_diag: [cov[(0, 0)], cov[(1, 1)], cov[(2, 2)], cov[(3, 3)]],
        iterations,
        model_mismatch: chi2 > MISMATCH_THRESHOLD,
    })
}

fn initial_guess(x: &[f64], y: &[f64]) -> Vector4<f64> {
    let n = x.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top = (n / 10).max(1);
    let b = sorted[n - top..].iter().sum::<f64>() / top as f64;
    let (i0, ymin) = y
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
    let v = if b > 0.0 { (1.0 - ymin / b).clamp(0.05, 1.0) } else { 0.5 };
    let level = 0.5 * (ymin + b);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &c| x[a].total_cmp(&x[c]));
    let pos = idx.iter().position(|&i| i == i0).unwrap_or(0);
    let right = idx[pos..].iter().find(|&&i| y[i] >= level).map(|&i| x[i]);
    let left = idx[..=pos].iter().rev().find(|&&i| y[i] >= level).map(|&i| x[i]);
    let span = x[idx[n - 1]] - x[idx[0]];
    let w = match (left, right) {
        (Some(l), Some(r)) if r > l => r - l,
        _ => span / 4.0,
    };
    Vector4::new(b, v, x[i0], w)
}

/// Linear map between counts and delay on one flank of the dip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeCalibration {
    /// Counts per µm per `integration_time_s` exposure.
    pub slope_counts_per_um: f64,
    pub slope_stderr: f64,
    pub anchor_delay_um: f64,
    pub anchor_counts: f64,
    pub linear_region: [f64; 2],
    /// Line value at the far end of the region.
    pub end_counts: f64,
    pub integration_time_s: f64,
    /// RMS of the fit residuals, counts.
    pub residual_rms_counts: f64,
    /// Residual RMS in excess of the Poisson expectation, counts.
    pub nonlinearity_counts: f64,
}

impl SlopeCalibration {
    /// Same calibration for another exposure time (counts scale linearly with time).
    pub fn rescaled(&self, integration_time_s: f64) -> Self {
        let k = integration_time_s / self.integration_time_s;
        SlopeCalibration {
            slope_counts_per_um: self.slope_counts_per_um * k,
            slope_stderr: self.slope_stderr * k,
            anchor_counts: self.anchor_counts * k,
            end_counts: self.end_counts * k,
            residual_rms_counts: self.residual_rms_counts * k,
            nonlinearity_counts: self.nonlinearity_counts * k,
            integration_time_s,
            ..self.clone()
        }
    }

    /// Systematic delay error bound from the calibration's curvature, µm.
    pub fn nonlinearity_um(&self) -> f64 {
        self.nonlinearity_counts / self.slope_counts_per_um.abs()
    }

    /// Counts range covered by the line.
    pub fn count_range(&self) -> (f64, f64) {
        (self.anchor_counts.min(self.end_counts), self.anchor_counts.max(self.end_counts))
    }
}

/// Least-squares line through the records whose delays lie in `region`.
///
/// The anchor is the region start `a`. A region whose middle third sits significantly below
/// both outer thirds contains the dip minimum and is rejected.
pub fn calibrate_linear_region(
    records: &[CountRecord],
    region: [f64; 2],
    integration_time_s: f64,
) -> Result<SlopeCalibration, EstimationError> {
    let [a, b] = region;
    if !(a < b) || !(integration_time_s > 0.0) {
        return Err(EstimationError::InvalidRegion { a, b });
    }
    let mut pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.delay_um >= a && r.delay_um <= b)
        .map(|r| (r.delay_um, r.coincidences as f64))
        .collect();
    if pts.len() < 5 {
        return Err(EstimationError::InsufficientPoints { needed: 5, got: pts.len() });
    }
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let n = pts.len();
    let third = n / 3;
    let mean = |s: &[(f64, f64)]| s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
    let (m1, m2, m3) = (mean(&pts[..third]), mean(&pts[third..n - third]), mean(&pts[n - third..]));
    let sig = (m2.max(1.0) / (n - 2 * third) as f64).sqrt() + (m1.max(m3).max(1.0) / third as f64).sqrt();
    if m2 < m1.min(m3) - 3.0 * sig {
        return Err(EstimationError::RegionSpansMinimum { a, b });
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = rss / (nf - 2.0);
    let stderr = (s2 / sxx).sqrt();
    if slope == 0.0 || slope.abs() < 3.0 * stderr {
        return Err(EstimationError::NearZeroSlope { slope, stderr });
    }
    Ok(SlopeCalibration {
        slope_counts_per_um: slope,
        slope_stderr: stderr,
        anchor_delay_um: a,
        anchor_counts: intercept + slope * a,
        linear_region: [a, b],
        end_counts: intercept + slope * b,
        integration_time_s,
        residual_rms_counts: s2.sqrt(),
        nonlinearity_counts: (s2 - my).max(0.0).sqrt(),
    })
}

/// Delay for a count reading through the calibration line, µm.
///
/// Readings outside the calibrated count range by more than three times the combined
/// Poisson and calibration-residual scatter are refused.
pub fn delay_from_counts(counts: f64, cal: &SlopeCalibration) -> Result<f64, EstimationError> {
    let (lo, hi) = cal.count_range();
    let margin = 3.0 * (hi.max(1.0) + cal.nonlinearity_counts.powi(2)).sqrt();
    if counts < lo - margin || counts > hi + margin {
        return Err(EstimationError::Extrapolation { counts, lo, hi });
    }
    Ok(cal.anchor_delay_um + (counts - cal.anchor_counts) / cal.slope_counts_per_um)
}

/// How a group index was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DipShift,
    LinearRegion,
    Compensated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupIndexResult {
    pub n_g: f64,
    pub uncertainty: f64,
    pub sample_length_mm: f64,
    pub method: Method,
}

/// Group index from the dip shift caused by a sample.
///
/// `n_g = 1 + Δx/L` when the sample displaces air, `Δx/L` otherwise. The uncertainty combines
/// the shift uncertainty with an optional length uncertainty.
pub fn group_index_from_shift(
    shift_um: f64,
    shift_sigma_um: f64,
    sample: &Sample,
    length_sigma_mm: f64,
    displaces_air: bool,
) -> Result<GroupIndexResult, EstimationError> {
    let l_mm = sample.current_length_mm();
    if !(l_mm > 0.0) {
        return Err(EstimationError::NonPositiveLength(l_mm));
    }
    let l_um = l_mm * 1e3;
    let ratio = shift_um / l_um;
    let n_g = if displaces_air { 1.0 + ratio } else { ratio };
    let u = ((shift_sigma_um / l_um).powi(2) + (ratio * length_sigma_mm / l_mm).powi(2)).sqrt();
    Ok(GroupIndexResult {
        n_g,
        uncertainty: u.max(f64::EPSILON * n_g.abs()),
        sample_length_mm: l_mm,
        method: Method::DipShift,
    })
}

/// `(Δx − n_g·ΔL)/L` with `Δx` in µm and lengths in mm.
pub fn delta_ng_formula(delta_x_um: f64, length_mm: f64, n_g: f64, delta_l_mm: f64) -> f64 {
    (delta_x_um - n_g * delta_l_mm * 1e3) / (length_mm * 1e3)
}

/// Temperature-induced group-index change from a measured delay change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaNg {
    pub delta_ng: f64,
    pub delta_l_mm: f64,
    pub n_g_base: f64,
    pub length_mm: f64,
    /// Neglected `Δn_g·ΔL/L` term.
    pub cross_term: f64,
    /// `|cross_term|` exceeds [`CROSS_TERM_BOUND`].
    pub cross_term_significant: bool,
}

/// `Δn_g = (Δx − n_g·ΔL)/L` for a sample heated by `dt_c` from its current temperature, with
/// `n_g` from the dispersion model at `wavelength_um` and `ΔL` from its expansion data.
pub fn delta_ng_from_delay(
    delta_x_um: f64,
    sample: &Sample,
    dt_c: f64,
    wavelength_um: f64,
) -> Result<DeltaNg, EstimationError> {
    let n_g = sample.group_index(wavelength_um)?;
    delta_ng_with_base(delta_x_um, sample, dt_c, n_g)
}

/// As [`delta_ng_from_delay`] with an explicit base group index.
pub fn delta_ng_with_base(delta_x_um: f64, sample: &Sample, dt_c: f64, n_g: f64) -> Result<DeltaNg, EstimationError> {
    let l_mm = sample.current_length_mm();
    let dl = sample.material.thermal_expansion(l_mm, sample.temperature_c, dt_c)?;
    let delta_ng = delta_ng_formula(delta_x_um, l_mm, n_g, dl);
    let cross = delta_ng * dl / l_mm;
    Ok(DeltaNg {
        delta_ng,
        delta_l_mm: dl,
        n_g_base: n_g,
        length_mm: l_mm,
        cross_term: cross,
        cross_term_significant: cross.abs() >= CROSS_TERM_BOUND,
    })
}

/// Group-index resolution for a delay resolution over a sample length.
pub fn sigma_delta_ng(sigma_x_um: f64, length_mm: f64) -> f64 {
    sigma_x_um / (length_mm * 1e3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionReport {
    pub sigma_delay_um: f64,
    /// Group-index resolution per centimetre of sample, cm⁻¹.
    pub sigma_ng_per_cm: f64,
    /// Zero counts were replaced by one.
    pub floored: bool,
}

/// Shot-noise precision `√C/|slope|` and the equivalent per-centimetre group-index resolution.
pub fn precision_report(cal: &SlopeCalibration, counts: f64) -> PrecisionReport {
    let floored = counts < 1.0;
    let c = counts.max(1.0);
    let sigma = c.sqrt() / cal.slope_counts_per_um.abs();
    PrecisionReport {
        sigma_delay_um: sigma,
        sigma_ng_per_cm: sigma * 1e-4,
        floored,
    }
}
