//! Bath spectral densities seen by the resonator.
//!
//! A `SpectralDensity` maps an angular transition frequency to an emission
//! rate. Zero temperature throughout: J(omega) = 0 for omega <= 0, so the
//! bath only absorbs quanta. An optional Lorentzian band-pass filter models
//! a Purcell filter between resonator and line.

use crate::error::{Error, Result};

/// Lorentzian band-pass filter in the emission path, centered at `omega_f`
/// with half width `gamma_f` (both angular, rad/ns).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub omega_f: f64,
    pub gamma_f: f64,
}

impl FilterSpec {
    /// Transmission factor 1 / (1 + ((omega - omega_f)/gamma_f)^2).
    pub fn transmission(&self, omega: f64) -> f64 {
        let x = (omega - self.omega_f) / self.gamma_f;
        1.0 / (1.0 + x * x)
    }

    /// Lifetime gain of a transition at `omega` relative to the filter peak:
    /// 1 + ((omega - omega_f)/gamma_f)^2.
    pub fn t1_gain(&self, omega: f64) -> f64 {
        let x = (omega - self.omega_f) / self.gamma_f;
        1.0 + x * x
    }
}

/// One-sided bath spectral density (zero temperature).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BathSpectrum {
    /// Frequency-independent J(omega) = level for omega > 0.
    Flat { level: f64 },
    /// J(omega) = alpha * pi * omega up to a hard cutoff, zero above.
    Ohmic { alpha: f64, cutoff: f64 },
}

/// Full environment seen by the cavity: base spectrum, optional filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDensity {
    pub spectrum: BathSpectrum,
    pub filter: Option<FilterSpec>,
}

impl SpectralDensity {
    pub fn flat(level: f64) -> Self {
        SpectralDensity { spectrum: BathSpectrum::Flat { level }, filter: None }
    }

    pub fn ohmic(alpha: f64, cutoff: f64) -> Self {
        SpectralDensity { spectrum: BathSpectrum::Ohmic { alpha, cutoff }, filter: None }
    }

    /// Ohmic spectrum calibrated so J(omega_r) = kappa, with cutoff at
    /// twice the resonator frequency: alpha = kappa / (pi * omega_r).
    pub fn ohmic_calibrated(kappa: f64, omega_r: f64) -> Result<Self> {
        if kappa < 0.0 || omega_r <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ohmic calibration needs kappa >= 0 and omega_r > 0, got {kappa}, {omega_r}"
            )));
        }
        Ok(SpectralDensity::ohmic(kappa / (std::f64::consts::PI * omega_r), 2.0 * omega_r))
    }

    pub fn with_filter(mut self, filter: FilterSpec) -> Self {
        self.filter = Some(filter);
        self
    }

    /// Evaluate J(omega). Non-positive frequencies give exactly zero.
    pub fn eval(&self, omega: f64) -> f64 {
        if omega <= 0.0 {
            return 0.0;
        }
        let base = match self.spectrum {
            BathSpectrum::Flat { level } => level,
            BathSpectrum::Ohmic { alpha, cutoff } => {
                if omega > cutoff {
                    0.0
                } else {
                    alpha * std::f64::consts::PI * omega
                }
            }
        };
        match self.filter {
            Some(f) => base * f.transmission(omega),
            None => base,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_is_flat_and_one_sided() {
        let j = SpectralDensity::flat(0.25);
        assert_eq!(j.eval(1.0), 0.25);
        assert_eq!(j.eval(123.4), 0.25);
        assert_eq!(j.eval(0.0), 0.0);
        assert_eq!(j.eval(-5.0), 0.0);
    }

    #[test]
    fn ohmic_linear_with_hard_cutoff() {
        let j = SpectralDensity::ohmic(0.1, 10.0);
        assert_relative_eq!(j.eval(2.0), 0.1 * std::f64::consts::PI * 2.0, max_relative = 1e-15);
        assert_relative_eq!(j.eval(10.0), std::f64::consts::PI, max_relative = 1e-15);
        assert_eq!(j.eval(10.0 + 1e-12), 0.0);
        assert_eq!(j.eval(-1.0), 0.0);
    }

    #[test]
    fn ohmic_calibration_hits_kappa_at_omega_r() {
        let kappa = 0.7;
        let omega_r = 47.1;
        let j = SpectralDensity::ohmic_calibrated(kappa, omega_r).unwrap();
        assert_relative_eq!(j.eval(omega_r), kappa, max_relative = 1e-14);
        // cutoff sits at 2 omega_r
        assert!(j.eval(2.0 * omega_r) > 0.0);
        assert_eq!(j.eval(2.0 * omega_r + 1e-9), 0.0);
        // linearity below cutoff: J(w)/kappa = w/omega_r
        assert_relative_eq!(j.eval(0.5 * omega_r), 0.5 * kappa, max_relative = 1e-14);
    }

    #[test]
    fn ohmic_calibration_rejects_bad_parameters() {
        assert!(SpectralDensity::ohmic_calibrated(-1.0, 5.0).is_err());
        assert!(SpectralDensity::ohmic_calibrated(1.0, 0.0).is_err());
    }

    #[test]
    fn filter_peak_and_tails() {
        let f = FilterSpec { omega_f: 40.0, gamma_f: 2.0 };
        assert_eq!(f.transmission(40.0), 1.0);
        // one half width off peak halves the transmission
        assert_relative_eq!(f.transmission(42.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(f.t1_gain(42.0), 2.0, max_relative = 1e-15);
        // gain formula is exactly the reciprocal of transmission
        for w in [35.0, 39.0, 40.0, 44.5, 60.0] {
            assert_relative_eq!(f.t1_gain(w) * f.transmission(w), 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn filtered_flat_spectrum_composes() {
        let f = FilterSpec { omega_f: 30.0, gamma_f: 3.0 };
        let j = SpectralDensity::flat(0.5).with_filter(f);
        assert_relative_eq!(j.eval(30.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(j.eval(33.0), 0.25, max_relative = 1e-15);
        assert_eq!(j.eval(-3.0), 0.0);
    }
}
