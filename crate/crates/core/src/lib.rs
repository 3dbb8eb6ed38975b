//! Simulation and estimation toolkit for Hong-Ou-Mandel (HOM) group-index metrology.
//!
//! The crate follows the physical chain of the measurement:
//!
//! - [`materials`]: Sellmeier dispersion, group index, thermo-optic and thermal-expansion models.
//! - [`biphoton`]: type-0 quasi-phase-matched SPDC spectra and bandpass filtering.
//! - [`interference`]: HOM coincidence profiles with a dispersive sample in one arm.
//! - [`detection`]: Poisson photon counting with accidentals and optional drift.
//! - [`estimation`]: dip fits, minimum location, slope calibration and group-index readout.
//! - [`protocol`]: temperature-sweep campaigns on a simulated instrument, including the
//!   stepwise delay-compensation sweep.
//!
//! Units: wavelengths in µm, sample lengths in mm, delays in µm of one-pass optical path,
//! temperatures in °C, angular-frequency detunings in rad/s.

pub mod biphoton;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod interference;
pub mod materials;
pub mod protocol;

pub use error::Error;

/// Speed of light in vacuum, µm/s.
pub const SPEED_OF_LIGHT_UM_PER_S: f64 = 2.997_924_58e14;

/// Reference temperature of the thermo-optic and expansion polynomials, °C.
pub const REFERENCE_TEMPERATURE_C: f64 = 25.0;

/// Trapezoid rule on a uniform grid with spacing `h`.
pub(crate) fn trapz_uniform(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}
