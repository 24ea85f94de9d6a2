use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of wavelengths in a transmission spectrum. Part of the problem
/// definition, not configurable.
pub const N_WAVELENGTHS: usize = 283;

/// Spectral columns on the AIRS detector.
pub const AIRS_COLS: usize = 356;

/// Lower bound on any reported uncertainty, in flux-ratio units.
/// One order of magnitude below the 10 ppm ideal uncertainty; keeps
/// log(sigma^2) finite.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Airs,
    Fgs,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Channel::Airs => write!(f, "airs"),
            Channel::Fgs => write!(f, "fgs"),
        }
    }
}

/// 3D detector signal: frames x rows x cols, with an out-of-band bad-pixel
/// mask. Masked pixels carry ordinary (unreliable) values, never sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    pub data: Array3<f64>,
    /// true = dead/hot pixel, shape (rows, cols).
    pub mask: Array2<bool>,
    pub channel: Channel,
    pub calibrated: bool,
}

impl SpectralCube {
    pub fn new(data: Array3<f64>, mask: Array2<bool>, channel: Channel, calibrated: bool) -> Result<Self> {
        let (t, h, w) = data.dim();
        if t < 2 || h < 1 || w < 1 {
            return Err(Error::Data(format!("cube too small: {t}x{h}x{w}")));
        }
        if mask.dim() != (h, w) {
            return Err(Error::Data(format!(
                "mask shape {:?} does not match detector ({h}, {w})",
                mask.dim()
            )));
        }
        if channel == Channel::Airs && w != AIRS_COLS {
            return Err(Error::Data(format!("AIRS cube must have {AIRS_COLS} spectral columns, got {w}")));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("cube contains non-finite values".into()));
        }
        Ok(Self { data, mask, channel, calibrated })
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn rows(&self) -> usize {
        self.data.dim().1
    }

    pub fn cols(&self) -> usize {
        self.data.dim().2
    }
}

/// One normalized flux time series.
#[derive(Debug, Clone, PartialEq)]
pub struct LightCurve {
    pub flux: Array1<f64>,
    pub label: String,
}

impl LightCurve {
    pub fn new(flux: Array1<f64>, label: impl Into<String>) -> Result<Self> {
        if flux.len() < 16 {
            return Err(Error::Data(format!("light curve too short: {} < 16 samples", flux.len())));
        }
        if !flux.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Data("light curve values must be finite and positive".into()));
        }
        Ok(Self { flux, label: label.into() })
    }

    pub fn len(&self) -> usize {
        self.flux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flux.is_empty()
    }
}

/// The set of curves extracted from one planet's observation.
#[derive(Debug, Clone)]
pub struct LightCurveSet {
    pub fgs: LightCurve,
    pub airs_mean: LightCurve,
    pub airs_bins: Vec<LightCurve>,
}

impl LightCurveSet {
    /// Curves in the fixed feature order: fgs, airs_mean, airs_bin_00..
    pub fn iter(&self) -> impl Iterator<Item = &LightCurve> {
        std::iter::once(&self.fgs)
            .chain(std::iter::once(&self.airs_mean))
            .chain(self.airs_bins.iter())
    }
}

/// Ground-truth transmission spectrum for one planet.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpectrum {
    pub depth: Array1<f64>,
    pub planet_id: String,
    pub star_id: String,
}

impl TargetSpectrum {
    pub fn new(depth: Array1<f64>, planet_id: impl Into<String>, star_id: impl Into<String>) -> Result<Self> {
        if depth.len() != N_WAVELENGTHS {
            return Err(Error::Data(format!(
                "target spectrum length {} != {N_WAVELENGTHS}",
                depth.len()
            )));
        }
        if !depth.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0) {
            return Err(Error::Data("target depths must lie in (0, 1)".into()));
        }
        Ok(Self { depth, planet_id: planet_id.into(), star_id: star_id.into() })
    }
}

/// Predicted spectrum with per-wavelength uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPrediction {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
    pub planet_id: String,
}

impl SpectrumPrediction {
    pub fn new(mu: Array1<f64>, sigma: Array1<f64>, planet_id: impl Into<String>) -> Result<Self> {
        if mu.len() != N_WAVELENGTHS || sigma.len() != N_WAVELENGTHS {
            return Err(Error::Data(format!(
                "prediction lengths ({}, {}) != {N_WAVELENGTHS}",
                mu.len(),
                sigma.len()
            )));
        }
        if !mu.iter().all(|v| v.is_finite()) || !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("prediction contains non-finite values".into()));
        }
        if sigma.iter().any(|s| *s < SIGMA_FLOOR) {
            return Err(Error::Data(format!("sigma below floor {SIGMA_FLOOR}")));
        }
        Ok(Self { mu, sigma, planet_id: planet_id.into() })
    }
}

/// One planet's entry in a dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanetEntry {
    pub planet_id: String,
    pub star_id: String,
    /// Paths relative to the dataset root.
    pub airs: String,
    pub fgs: String,
}

/// Validated description of an on-disk dataset.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: std::path::PathBuf,
    /// Sorted by planet_id for deterministic iteration.
    pub planets: Vec<PlanetEntry>,
    pub wavelengths: usize,
    pub has_targets: bool,
}

impl DatasetManifest {
    pub fn star_ids(&self) -> Vec<String> {
        let mut stars: Vec<String> = self.planets.iter().map(|p| p.star_id.clone()).collect();
        stars.sort();
        stars.dedup();
        stars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn cube_rejects_mask_shape_mismatch() {
        let data = Array3::zeros((4, 2, 3));
        let mask = Array2::from_elem((3, 2), false);
        assert!(matches!(
            SpectralCube::new(data, mask, Channel::Fgs, false),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn cube_rejects_non_finite() {
        let mut data = Array3::zeros((4, 2, 3));
        data[[0, 0, 0]] = f64::NAN;
        let mask = Array2::from_elem((2, 3), false);
        assert!(SpectralCube::new(data, mask, Channel::Fgs, false).is_err());
    }

    #[test]
    fn airs_cube_requires_356_columns() {
        let data = Array3::zeros((4, 2, 3));
        let mask = Array2::from_elem((2, 3), false);
        assert!(SpectralCube::new(data, mask, Channel::Airs, false).is_err());
    }

    #[test]
    fn prediction_enforces_sigma_floor() {
        let mu = Array1::zeros(N_WAVELENGTHS);
        let sigma = Array1::from_elem(N_WAVELENGTHS, SIGMA_FLOOR / 2.0);
        assert!(SpectrumPrediction::new(mu, sigma, "p0").is_err());
    }

    #[test]
    fn target_spectrum_range_checked() {
        let depth = Array1::from_elem(N_WAVELENGTHS, 1.5);
        assert!(TargetSpectrum::new(depth, "p0", "s0").is_err());
        let depth = Array1::from_elem(N_WAVELENGTHS, 0.01);
        assert!(TargetSpectrum::new(depth, "p0", "s0").is_ok());
    }
}
