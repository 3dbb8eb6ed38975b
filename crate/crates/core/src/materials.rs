//! Dispersion engine: refractive index, group index, thermo-optic correction and thermal
//! expansion for named materials.
//!
//! Coefficients live in a TOML file with one `[[material]]` record per material; the
//! default file is compiled into the crate and available through [`builtin`]. The record
//! format is documented at the top of `data/materials.toml`.
//!
//! Indices are evaluated as `n(λ, T) = n_form(λ, T) + Δn(λ, T)`, where `n_form` is the
//! Sellmeier-type form and `Δn` is a polynomial in `(T - 25 °C)` whose coefficients are
//! themselves polynomials in `1/λ`. Evaluation outside a material's validity box is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::Deserialize;
use thiserror::Error;

use crate::error::ErrorKind;
use crate::REFERENCE_TEMPERATURE_C;

/// Central-difference step used by [`group_index_fd`], µm.
pub const FD_STEP_UM: f64 = 1e-4;

const DEFAULT_MATERIALS: &str = include_str!("../data/materials.toml");

#[derive(Debug, Error)]
pub enum MaterialError {
    #[error("{material}: {quantity} {value} is below the minimum {limit} of the valid range")]
    BelowRange {
        material: String,
        quantity: Quantity,
        value: f64,
        limit: f64,
    },
    #[error("{material}: {quantity} {value} is above the maximum {limit} of the valid range")]
    AboveRange {
        material: String,
        quantity: Quantity,
        value: f64,
        limit: f64,
    },
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("material file parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("material `{material}`: invalid field `{field}`: {message}")]
    InvalidField {
        material: String,
        field: &'static str,
        message: String,
    },
    #[error("duplicate material name `{0}`")]
    Duplicate(String),
    #[error("material file contains no materials")]
    EmptyRegistry,
    #[error("sample length must be positive, got {0} mm")]
    NonPositiveLength(f64),
    #[error("{material}: n^2 = {value} is not positive at {wavelength_um} µm, {temperature_c} °C")]
    NonPhysical {
        material: String,
        wavelength_um: f64,
        temperature_c: f64,
        value: f64,
    },
    #[error("cannot read material file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MaterialError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            MaterialError::BelowRange { .. } | MaterialError::AboveRange { .. } => ErrorKind::Range,
            MaterialError::Io { .. } => ErrorKind::Io,
            MaterialError::NonPhysical { .. } => ErrorKind::Fit,
            _ => ErrorKind::Config,
        }
    }
}

/// Quantity named in range errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Wavelength,
    Temperature,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quantity::Wavelength => f.write_str("wavelength (µm)"),
            Quantity::Temperature => f.write_str("temperature (°C)"),
        }
    }
}

/// Algebraic form of the room-temperature index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum SellmeierForm {
    /// `n² = A + Σ Bᵢλ²/(λ² − Cᵢ)`, coeffs `[A, B1, C1, ...]`.
    #[serde(rename = "sellmeier")]
    Sellmeier,
    /// As [`SellmeierForm::Sellmeier`] with a trailing `− Dλ²` term, coeffs `[A, B1, C1, ..., D]`.
    #[serde(rename = "sellmeier-ir")]
    SellmeierIr,
    /// Temperature-dependent extended Sellmeier with `f = (T − 24.5)(T + 570.82)`,
    /// coeffs `[a1..a6, b1..b5]`.
    #[serde(rename = "gayer")]
    Gayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidRange {
    pub wavelength_um: [f64; 2],
    pub temperature_c: [f64; 2],
}

impl ValidRange {
    pub fn contains_wavelength(&self, wavelength_um: f64) -> bool {
        wavelength_um >= self.wavelength_um[0] && wavelength_um <= self.wavelength_um[1]
    }

    pub fn contains_temperature(&self, temperature_c: f64) -> bool {
        temperature_c >= self.temperature_c[0] && temperature_c <= self.temperature_c[1]
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialRecord {
    name: String,
    form: SellmeierForm,
    coeffs: Vec<f64>,
    thermo: Vec<Vec<f64>>,
    expansion: Vec<f64>,
    range: ValidRange,
    source: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaterialFile {
    #[serde(default)]
    material: Vec<MaterialRecord>,
}

/// A named dispersion model.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub form: SellmeierForm,
    pub sellmeier_coeffs: Vec<f64>,
    /// `thermo_optic_coeffs[k][m]` multiplies `(T − 25)^(k+1) / λ^m`.
    pub thermo_optic_coeffs: Vec<Vec<f64>>,
    /// `expansion_coeffs[k]` multiplies `(T − 25)^(k+1)` in `L(T)/L(25)`.
    pub expansion_coeffs: Vec<f64>,
    pub valid_range: ValidRange,
    pub source: String,
}

impl Material {
    fn from_record(r: MaterialRecord) -> Result<Self, MaterialError> {
        let invalid = |field: &'static str, message: String| MaterialError::InvalidField {
            material: r.name.clone(),
            field,
            message,
        };
        if r.name.trim().is_empty() {
            return Err(invalid("name", "empty name".into()));
        }
        let n = r.coeffs.len();
        let shape_ok = match r.form {
            SellmeierForm::Sellmeier => n >= 1 && n % 2 == 1,
            SellmeierForm::SellmeierIr => n >= 2 && n % 2 == 0,
            SellmeierForm::Gayer => n == 11,
        };
        if !shape_ok {
            return Err(invalid(
                "coeffs",
                format!("{n} coefficients do not fit the {:?} form", r.form),
            ));
        }
        let all_finite = r.coeffs.iter().chain(r.expansion.iter()).chain(r.thermo.iter().flatten()).all(|c| c.is_finite());
        if !all_finite {
            return Err(invalid("coeffs", "non-finite coefficient".into()));
        }
        let [l0, l1] = r.range.wavelength_um;
        let [t0, t1] = r.range.temperature_c;
        if !(l0 > 0.0 && l0 < l1) {
            return Err(invalid("range", format!("bad wavelength interval [{l0}, {l1}]")));
        }
        if !(t0 < t1) {
            return Err(invalid("range", format!("bad temperature interval [{t0}, {t1}]")));
        }
        if r.source.trim().is_empty() {
            return Err(invalid("source", "provenance must not be empty".into()));
        }
        Ok(Material {
            name: r.name,
            form: r.form,
            sellmeier_coeffs: r.coeffs,
            thermo_optic_coeffs: r.thermo,
            expansion_coeffs: r.expansion,
            valid_range: r.range,
            source: r.source,
        })
    }

    pub fn check_wavelength(&self, wavelength_um: f64) -> Result<(), MaterialError> {
        let [lo, hi] = self.valid_range.wavelength_um;
        self.check(Quantity::Wavelength, wavelength_um, lo, hi)
    }

    pub fn check_temperature(&self, temperature_c: f64) -> Result<(), MaterialError> {
        let [lo, hi] = self.valid_range.temperature_c;
        self.check(Quantity::Temperature, temperature_c, lo, hi)
    }

    fn check(&self, quantity: Quantity, value: f64, lo: f64, hi: f64) -> Result<(), MaterialError> {
        if value < lo || value.is_nan() {
            Err(MaterialError::BelowRange {
                material: self.name.clone(),
                quantity,
                value,
                limit: lo,
            })
        } else if value > hi {
            Err(MaterialError::AboveRange {
                material: self.name.clone(),
                quantity,
                value,
                limit: hi,
            })
        } else {
            Ok(())
        }
    }

    /// `n²` of the algebraic form and its λ-derivative, without range checks.
    fn form_n2(&self, l: f64, t: f64) -> (f64, f64) {
        let c = &self.sellmeier_coeffs;
        let l2 = l * l;
        match self.form {
            SellmeierForm::Sellmeier | SellmeierForm::SellmeierIr => {
                let pairs_end = if self.form == SellmeierForm::SellmeierIr { c.len() - 1 } else { c.len() };
                let mut n2 = c[0];
                let mut d = 0.0;
                for pair in c[1..pairs_end].chunks_exact(2) {
                    let (b, cc) = (pair[0], pair[1]);
                    let den = l2 - cc;
                    n2 += b * l2 / den;
                    d += -2.0 * b * cc * l / (den * den);
                }
                if self.form == SellmeierForm::SellmeierIr {
                    let dd = c[c.len() - 1];
                    n2 -= dd * l2;
                    d -= 2.0 * dd * l;
                }
                (n2, d)
            }
            SellmeierForm::Gayer => {
                let f = (t - 24.5) * (t + 570.82);
                let (a, b) = (&c[0..6], &c[6..11]);
                let s1 = a[2] + b[2] * f;
                let s2 = a[4] + b[4] * f;
                let p1 = a[1] + b[1] * f;
                let p2 = a[3] + b[3] * f;
                let den1 = l2 - s1 * s1;
                let den2 = l2 - s2 * s2;
                let n2 = a[0] + b[0] * f + p1 / den1 + p2 / den2 - a[5] * l2;
                let d = -2.0 * l * p1 / (den1 * den1) - 2.0 * l * p2 / (den2 * den2) - 2.0 * a[5] * l;
                (n2, d)
            }
        }
    }

    /// Thermo-optic correction and its λ-derivative.
    fn thermo(&self, l: f64, t: f64) -> (f64, f64) {
        let dt = t - REFERENCE_TEMPERATURE_C;
        let mut dn = 0.0;
        let mut ddn = 0.0;
        let mut dt_pow = 1.0;
        for order in &self.thermo_optic_coeffs {
            dt_pow *= dt;
            let mut inv = 1.0;
            for (m, coeff) in order.iter().enumerate() {
                dn += coeff * inv * dt_pow;
                ddn += -(m as f64) * coeff * inv / l * dt_pow;
                inv /= l;
            }
        }
        (dn, ddn)
    }

    fn index_unchecked(&self, l: f64, t: f64) -> Result<(f64, f64), MaterialError> {
        let (n2, dn2) = self.form_n2(l, t);
        if !(n2 > 0.0) {
            return Err(MaterialError::NonPhysical {
                material: self.name.clone(),
                wavelength_um: l,
                temperature_c: t,
                value: n2,
            });
        }
        let n0 = n2.sqrt();
        let (dn, ddn) = self.thermo(l, t);
        Ok((n0 + dn, dn2 / (2.0 * n0) + ddn))
    }

    /// Refractive index `n(λ, T)`.
    pub fn refractive_index(&self, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
        self.check_wavelength(wavelength_um)?;
        self.check_temperature(temperature_c)?;
        Ok(self.index_unchecked(wavelength_um, temperature_c)?.0)
    }

    /// Analytic `dn/dλ`, µm⁻¹.
    pub fn dn_dlambda(&self, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
        self.check_wavelength(wavelength_um)?;
        self.check_temperature(temperature_c)?;
        Ok(self.index_unchecked(wavelength_um, temperature_c)?.1)
    }

    /// Group index `n − λ dn/dλ` from the analytic derivative.
    pub fn group_index(&self, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
        self.check_wavelength(wavelength_um)?;
        self.check_temperature(temperature_c)?;
        let (n, d) = self.index_unchecked(wavelength_um, temperature_c)?;
        Ok(n - wavelength_um * d)
    }

    /// Group index from a central finite difference with step [`FD_STEP_UM`].
    pub fn group_index_fd(&self, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
        self.check_wavelength(wavelength_um)?;
        self.check_temperature(temperature_c)?;
        let h = FD_STEP_UM;
        let n = self.index_unchecked(wavelength_um, temperature_c)?.0;
        let np = self.index_unchecked(wavelength_um + h, temperature_c)?.0;
        let nm = self.index_unchecked(wavelength_um - h, temperature_c)?.0;
        Ok(n - wavelength_um * (np - nm) / (2.0 * h))
    }

    /// `L(T) / L(25 °C)`.
    pub fn expansion_ratio(&self, temperature_c: f64) -> f64 {
        let dt = temperature_c - REFERENCE_TEMPERATURE_C;
        let mut r = 1.0;
        let mut p = 1.0;
        for e in &self.expansion_coeffs {
            p *= dt;
            r += e * p;
        }
        r
    }

    /// Length change of a sample of length `length_mm` at `t0_c` when heated by `dt_c`.
    ///
    /// `ΔL = L · [r(T0 + dT)/r(T0) − 1]` with `r` the expansion polynomial, so successive
    /// steps compose exactly when each step uses the already expanded length.
    pub fn thermal_expansion(&self, length_mm: f64, t0_c: f64, dt_c: f64) -> Result<f64, MaterialError> {
        self.check_temperature(t0_c)?;
        self.check_temperature(t0_c + dt_c)?;
        if dt_c == 0.0 {
            return Ok(0.0);
        }
        Ok(length_mm * (self.expansion_ratio(t0_c + dt_c) / self.expansion_ratio(t0_c) - 1.0))
    }

    /// True when `n(λ) ≡ 1` is not the only content, i.e. the material disperses.
    pub fn is_dispersive(&self) -> bool {
        !(self.form == SellmeierForm::Sellmeier
            && self.sellmeier_coeffs.len() == 1
            && self.sellmeier_coeffs[0] == 1.0
            && self.thermo_optic_coeffs.iter().flatten().all(|c| *c == 0.0))
    }
}

/// Free-function form of [`Material::refractive_index`].
pub fn refractive_index(material: &Material, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
    material.refractive_index(wavelength_um, temperature_c)
}

/// Free-function form of [`Material::group_index`].
pub fn group_index(material: &Material, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
    material.group_index(wavelength_um, temperature_c)
}

/// Free-function form of [`Material::group_index_fd`].
pub fn group_index_fd(material: &Material, wavelength_um: f64, temperature_c: f64) -> Result<f64, MaterialError> {
    material.group_index_fd(wavelength_um, temperature_c)
}

/// Free-function form of [`Material::thermal_expansion`].
pub fn thermal_expansion(material: &Material, length_mm: f64, t0_c: f64, dt_c: f64) -> Result<f64, MaterialError> {
    material.thermal_expansion(length_mm, t0_c, dt_c)
}

/// Immutable name-to-material map.
#[derive(Debug, Clone, Default)]
pub struct MaterialRegistry {
    materials: BTreeMap<String, Arc<Material>>,
}

impl MaterialRegistry {
    pub fn get(&self, name: &str) -> Result<Arc<Material>, MaterialError> {
        self.materials
            .get(name)
            .cloned()
            .ok_or_else(|| MaterialError::UnknownMaterial(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.materials.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Material>> {
        self.materials.values()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Parse a material file from text.
pub fn parse_materials(text: &str) -> Result<MaterialRegistry, MaterialError> {
    let file: MaterialFile = toml::from_str(text).map_err(|e| MaterialError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    if file.material.is_empty() {
        return Err(MaterialError::EmptyRegistry);
    }
    let mut materials = BTreeMap::new();
    for record in file.material {
        let m = Material::from_record(record)?;
        if materials.contains_key(&m.name) {
            return Err(MaterialError::Duplicate(m.name));
        }
        materials.insert(m.name.clone(), Arc::new(m));
    }
    Ok(MaterialRegistry { materials })
}

/// Load a material file from disk.
pub fn load_materials(path: impl AsRef<Path>) -> Result<MaterialRegistry, MaterialError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MaterialError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_materials(&text)
}

/// The compiled-in default material file.
pub fn builtin() -> &'static MaterialRegistry {
    static REGISTRY: OnceLock<MaterialRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| parse_materials(DEFAULT_MATERIALS).expect("shipped material file is valid"))
}

/// Text of the compiled-in default material file.
pub fn builtin_source_text() -> &'static str {
    DEFAULT_MATERIALS
}

/// A physical piece of material with a length and a temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub material: Arc<Material>,
    /// Length at the 25 °C reference, mm.
    pub length_mm: f64,
    pub temperature_c: f64,
}

impl Sample {
    pub fn new(material: Arc<Material>, length_mm: f64, temperature_c: f64) -> Result<Self, MaterialError> {
        if !(length_mm > 0.0) || !length_mm.is_finite() {
            return Err(MaterialError::NonPositiveLength(length_mm));
        }
        material.check_temperature(temperature_c)?;
        Ok(Sample {
            material,
            length_mm,
            temperature_c,
        })
    }

    /// Copy of this sample at another temperature.
    pub fn at_temperature(&self, temperature_c: f64) -> Result<Self, MaterialError> {
        Sample::new(self.material.clone(), self.length_mm, temperature_c)
    }

    /// Physical length at the current temperature, mm.
    pub fn current_length_mm(&self) -> f64 {
        self.length_mm * self.material.expansion_ratio(self.temperature_c)
    }

    pub fn group_index(&self, wavelength_um: f64) -> Result<f64, MaterialError> {
        self.material.group_index(wavelength_um, self.temperature_c)
    }
}
