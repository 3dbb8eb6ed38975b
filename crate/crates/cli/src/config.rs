//! Run configuration files.
//!
//! A run is described by one TOML document with a `schema_version`, a `campaign` selector
//! and the sections that campaign needs. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use hom_core::biphoton::FilterPlacement;
use hom_core::detection::DetectorModel;
use hom_core::protocol::Flank;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Version of the config schema and of the CSV/summary layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Campaign {
    Spectrum,
    Dip,
    Measure,
    Sweep,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub campaign: Campaign,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Material registry file; the built-in registry when absent.
    pub materials: Option<PathBuf>,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default = "default_visibility")]
    pub visibility0: f64,
    pub spectrum: Option<SpectrumConfig>,
    pub dip: Option<DipConfig>,
    pub measure: Option<MeasureConfig>,
    pub sweep: Option<SweepConfig>,
}

fn default_seed() -> u64 {
    1
}

fn default_visibility() -> f64 {
    0.93
}

/// Named crystal operating temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedTemperature {
    /// Phase matching at degeneracy.
    Qpm,
    /// Largest integrated pair flux.
    FluxOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemperatureSpec {
    Named(NamedTemperature),
    Celsius(f64),
}

/// Photon-pair source crystal.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub material: String,
    pub length_mm: f64,
    pub grating_period_um: f64,
    pub pump_wavelength_um: f64,
    pub temperature: TemperatureSpec,
    pub grid_points: usize,
    pub span_factor: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            material: "KTP".into(),
            length_mm: 1.0,
            grating_period_um: 3.425,
            pump_wavelength_um: 0.4054,
            temperature: TemperatureSpec::Named(NamedTemperature::FluxOptimal),
            grid_points: hom_core::biphoton::DEFAULT_GRID_POINTS,
            span_factor: hom_core::biphoton::DEFAULT_SPAN_FACTOR,
        }
    }
}

/// Spectral density for several source lengths.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub lengths_mm: Vec<f64>,
}

/// A sample placed in one interferometer arm.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub material: String,
    pub length_mm: f64,
    #[serde(default = "default_sample_temperature")]
    pub temperature_c: f64,
    #[serde(default = "default_true")]
    pub displaces_air: bool,
}

fn default_sample_temperature() -> f64 {
    25.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub fwhm_nm: f64,
    #[serde(default)]
    pub placement: FilterPlacement,
}

/// One HOM profile.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DipCase {
    pub label: String,
    /// Overrides the source crystal length.
    pub source_length_mm: Option<f64>,
    pub filter: Option<FilterConfig>,
    pub sample: Option<SampleConfig>,
    /// Scan centre; the predicted dip position when absent.
    pub center_um: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DipConfig {
    pub half_range_um: f64,
    pub points: usize,
    #[serde(default = "default_wavelength")]
    pub wavelength_um: f64,
    pub cases: Vec<DipCase>,
}

fn default_wavelength() -> f64 {
    0.8108
}

/// One group-index measurement.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSample {
    pub label: String,
    #[serde(flatten)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub length_sigma_mm: f64,
    /// Externally reported value to compare against.
    pub reference_ng: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "default_wavelength")]
    pub wavelength_um: f64,
    pub integration_time_s: f64,
    pub half_range_um: f64,
    pub points: usize,
    pub samples: Vec<MeasureSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Calibration,
    Stability,
    Linear,
    Compensated,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub sample: SampleConfig,
    pub start_c: f64,
    #[serde(default)]
    pub end_c: f64,
    pub step_c: f64,
    pub integration_time_s: f64,
    #[serde(default = "default_one")]
    pub reads_per_step: usize,
    #[serde(default = "default_wavelength")]
    pub wavelength_um: f64,
    #[serde(default)]
    pub plateaus: usize,
    #[serde(default)]
    pub reads_per_plateau: usize,
    #[serde(default = "default_region")]
    pub region_um: [f64; 2],
    #[serde(default)]
    pub flank: Flank,
    #[serde(default = "default_calibration_time")]
    pub calibration_integration_s: f64,
    #[serde(default = "default_travel")]
    pub stage_travel_um: [f64; 2],
    #[serde(default = "default_oven")]
    pub oven_range_c: [f64; 2],
}

fn default_one() -> usize {
    1
}

fn default_region() -> [f64; 2] {
    [1.0, 4.4]
}

fn default_calibration_time() -> f64 {
    0.05
}

fn default_travel() -> [f64; 2] {
    [-1000.0, 100_000.0]
}

fn default_oven() -> [f64; 2] {
    [20.0, 200.0]
}

/// Shipped presets as `(name, TOML text)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("bandwidth", include_str!("../presets/bandwidth.toml")),
    ("fig1b", include_str!("../presets/fig1b.toml")),
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig4a", include_str!("../presets/fig4a.toml")),
    ("fig4b", include_str!("../presets/fig4b.toml")),
    ("table1", include_str!("../presets/table1.toml")),
];

pub fn preset(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::Config {
            path: "--preset".into(),
            message: format!(
                "unknown preset `{name}`; available: {}",
                PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
            ),
        })
}

fn field_error(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parse and validate a config document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count().max(1));
            CliError::Config {
                path: match line {
                    Some(l) => format!("line {l}"),
                    None => "config".into(),
                },
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.visibility0 > 0.0 && self.visibility0 <= 1.0) {
            return Err(field_error("visibility0", "must lie in (0, 1]"));
        }
        self.detector
            .validate()
            .map_err(|e| field_error("detector", e.to_string()))?;
        let s = &self.source;
        if !(s.length_mm > 0.0) {
            return Err(field_error("source.length_mm", "must be positive"));
        }
        match self.campaign {
            Campaign::Spectrum => {
                let sp = self.spectrum.as_ref().ok_or_else(|| field_error("spectrum", "section required"))?;
                if sp.lengths_mm.is_empty() {
                    return Err(field_error("spectrum.lengths_mm", "empty list"));
                }
                if sp.lengths_mm.iter().any(|l| !(*l > 0.0)) {
                    return Err(field_error("spectrum.lengths_mm", "lengths must be positive"));
                }
            }
            Campaign::Dip => {
                let d = self.dip.as_ref().ok_or_else(|| field_error("dip", "section required"))?;
                if d.cases.is_empty() {
                    return Err(field_error("dip.cases", "empty list"));
                }
                if d.points < 11 || !(d.half_range_um > 0.0) {
                    return Err(field_error("dip", "need at least 11 points over a positive half range"));
                }
            }
            Campaign::Measure => {
                let m = self.measure.as_ref().ok_or_else(|| field_error("measure", "section required"))?;
                if m.samples.is_empty() {
                    return Err(field_error("measure.samples", "empty list"));
                }
                if m.points < 11 || !(m.half_range_um > 0.0) || !(m.integration_time_s > 0.0) {
                    return Err(field_error(
                        "measure",
                        "need at least 11 points, a positive half range and a positive integration time",
                    ));
                }
            }
            Campaign::Sweep => {
                let w = self.sweep.as_ref().ok_or_else(|| field_error("sweep", "section required"))?;
                if !(w.integration_time_s > 0.0) {
                    return Err(field_error("sweep.integration_time_s", "must be positive"));
                }
                if w.mode == SweepMode::Stability && (w.plateaus == 0 || w.reads_per_plateau < 2) {
                    return Err(field_error("sweep.plateaus", "stability mode needs plateaus and at least two reads each"));
                }
            }
        }
        Ok(())
    }
}
