//! Detector calibration chain: ADC reversal, bad-pixel masking, linearity
//! correction, dark subtraction, correlated double sampling, optional
//! time-binning, and flat-fielding — applied in exactly that order.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::types::SpectralCube;

/// Flat-field values below this at an unmasked pixel are rejected; division
/// there would amplify noise by more than x20. Such pixels must be masked.
pub const FLAT_MIN: f64 = 0.05;

/// Per-detector calibration data. All arrays share the detector shape (H, W).
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    pub gain: Array2<f64>,
    pub offset: Array2<f64>,
    /// Coefficient axis first: shape (n_coeffs, H, W). The stored polynomial
    /// is the correction applied to measured values (already inverted).
    pub linearity_coeffs: Array3<f64>,
    /// Counts per exposure.
    pub dark: Array2<f64>,
    pub flat: Array2<f64>,
    pub hot_dead_mask: Array2<bool>,
}

impl CalibrationSet {
    /// Identity calibration: gain 1, offset 0, identity polynomial, zero
    /// dark, unit flat, empty mask.
    pub fn identity(h: usize, w: usize) -> Self {
        let mut linearity = Array3::zeros((2, h, w));
        linearity.index_axis_mut(Axis(0), 1).fill(1.0);
        Self {
            gain: Array2::ones((h, w)),
            offset: Array2::zeros((h, w)),
            linearity_coeffs: linearity,
            dark: Array2::zeros((h, w)),
            flat: Array2::ones((h, w)),
            hot_dead_mask: Array2::from_elem((h, w), false),
        }
    }

    pub fn detector_shape(&self) -> (usize, usize) {
        self.gain.dim()
    }

    fn check_shape(&self, cube: &SpectralCube) -> Result<()> {
        let shape = (cube.rows(), cube.cols());
        if self.gain.dim() != shape
            || self.offset.dim() != shape
            || self.dark.dim() != shape
            || self.flat.dim() != shape
            || self.hot_dead_mask.dim() != shape
            || (self.linearity_coeffs.dim().1, self.linearity_coeffs.dim().2) != shape
        {
            return Err(Error::Calib(format!(
                "calibration arrays do not match detector shape {shape:?}"
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_array(&dir.join("gain.bin"), &self.gain.clone().into_dyn(), None)?;
        io::write_array(&dir.join("offset.bin"), &self.offset.clone().into_dyn(), None)?;
        io::write_array(&dir.join("linearity.bin"), &self.linearity_coeffs.clone().into_dyn(), None)?;
        io::write_array(&dir.join("dark.bin"), &self.dark.clone().into_dyn(), None)?;
        io::write_array(&dir.join("flat.bin"), &self.flat.clone().into_dyn(), None)?;
        let mask_f64 = self.hot_dead_mask.mapv(|b| b as u8 as f64).into_dyn();
        io::write_array(&dir.join("mask.bin"), &mask_f64, None)?;
        let (h, w) = self.detector_shape();
        let sidecar = serde_json::json!({
            "detector": [h, w],
            "n_linearity_coeffs": self.linearity_coeffs.dim().0,
        });
        std::fs::write(dir.join("calib.json"), serde_json::to_vec_pretty(&sidecar).expect("json"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load2 = |name: &str| -> Result<Array2<f64>> {
            let (arr, _) = io::read_array(&dir.join(name))?;
            arr.into_dimensionality()
                .map_err(|e| Error::Format(format!("{name}: {e}")))
        };
        let (lin, _) = io::read_array(&dir.join("linearity.bin"))?;
        let linearity_coeffs: Array3<f64> = lin
            .into_dimensionality()
            .map_err(|e| Error::Format(format!("linearity.bin: {e}")))?;
        Ok(Self {
            gain: load2("gain.bin")?,
            offset: load2("offset.bin")?,
            linearity_coeffs,
            dark: load2("dark.bin")?,
            flat: load2("flat.bin")?,
            hot_dead_mask: load2("mask.bin")?.mapv(|v| v != 0.0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibStep {
    RevertAdc,
    ApplyMask,
    CorrectLinearity,
    SubtractDark,
    Cds,
    TimeBin,
    FlatField,
}

/// The fixed chain order. Configs listing a different order are rejected.
pub const CANONICAL_STEPS: [CalibStep; 7] = [
    CalibStep::RevertAdc,
    CalibStep::ApplyMask,
    CalibStep::CorrectLinearity,
    CalibStep::SubtractDark,
    CalibStep::Cds,
    CalibStep::TimeBin,
    CalibStep::FlatField,
];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibConfig {
    /// Must list the canonical step order; present so configs are explicit
    /// about what runs, not so the order can change.
    pub steps: Vec<CalibStep>,
    /// 1 = no binning.
    pub time_bin_factor: usize,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self { steps: CANONICAL_STEPS.to_vec(), time_bin_factor: 1 }
    }
}

fn rebuild(template: &SpectralCube, data: Array3<f64>, mask: Array2<bool>) -> SpectralCube {
    SpectralCube {
        data,
        mask,
        channel: template.channel,
        calibrated: template.calibrated,
    }
}

/// Undo the detector ADC: x -> (x - offset) / gain per pixel.
pub fn revert_adc(cube: &SpectralCube, calib: &CalibrationSet) -> Result<SpectralCube> {
    calib.check_shape(cube)?;
    if calib.gain.iter().any(|&g| g == 0.0) {
        return Err(Error::Calib("zero gain pixel".into()));
    }
    let mut data = cube.data.clone();
    for mut frame in data.axis_iter_mut(Axis(0)) {
        frame -= &calib.offset;
        frame /= &calib.gain;
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Union the cube mask with the hot/dead pixel mask. Data untouched.
pub fn apply_mask(cube: &SpectralCube, calib: &CalibrationSet) -> Result<SpectralCube> {
    calib.check_shape(cube)?;
    let mask = Array2::from_shape_fn(cube.mask.dim(), |ix| cube.mask[ix] || calib.hot_dead_mask[ix]);
    Ok(rebuild(cube, cube.data.clone(), mask))
}

/// Apply the per-pixel correction polynomial to every measured value.
pub fn correct_linearity(cube: &SpectralCube, calib: &CalibrationSet) -> Result<SpectralCube> {
    calib.check_shape(cube)?;
    let n_coeffs = calib.linearity_coeffs.dim().0;
    if n_coeffs == 0 {
        return Err(Error::Calib("linearity coefficients missing".into()));
    }
    let mut data = cube.data.clone();
    for mut frame in data.axis_iter_mut(Axis(0)) {
        for ((r, c), v) in frame.indexed_iter_mut() {
            // Horner evaluation, highest coefficient first
            let mut acc = calib.linearity_coeffs[[n_coeffs - 1, r, c]];
            for k in (0..n_coeffs - 1).rev() {
                acc = acc * *v + calib.linearity_coeffs[[k, r, c]];
            }
            *v = acc;
        }
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Subtract the dark frame from every exposure.
pub fn subtract_dark(cube: &SpectralCube, calib: &CalibrationSet) -> Result<SpectralCube> {
    calib.check_shape(cube)?;
    let mut data = cube.data.clone();
    for mut frame in data.axis_iter_mut(Axis(0)) {
        frame -= &calib.dark;
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Correlated double sampling: frames are (start_0, end_0, start_1, end_1, ...);
/// output[i] = input[2i+1] - input[2i], halving the frame count.
pub fn correlated_double_sampling(cube: &SpectralCube) -> Result<SpectralCube> {
    let t = cube.frames();
    if t % 2 != 0 {
        return Err(Error::Calib(format!("CDS requires an even frame count, got {t}")));
    }
    let (h, w) = (cube.rows(), cube.cols());
    let mut data = Array3::zeros((t / 2, h, w));
    for i in 0..t / 2 {
        let start = cube.data.index_axis(Axis(0), 2 * i);
        let end = cube.data.index_axis(Axis(0), 2 * i + 1);
        let mut out = data.index_axis_mut(Axis(0), i);
        out.assign(&end);
        out -= &start;
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Average consecutive groups of `factor` frames; trailing remainder dropped.
pub fn time_bin(cube: &SpectralCube, factor: usize) -> Result<SpectralCube> {
    if factor < 1 {
        return Err(Error::Calib("time-bin factor must be >= 1".into()));
    }
    let t = cube.frames();
    if factor > t {
        return Err(Error::Calib(format!("time-bin factor {factor} exceeds {t} frames")));
    }
    if factor == 1 {
        return Ok(cube.clone());
    }
    let t_out = t / factor;
    let (h, w) = (cube.rows(), cube.cols());
    let mut data = Array3::zeros((t_out, h, w));
    for i in 0..t_out {
        let mut out = data.index_axis_mut(Axis(0), i);
        for j in 0..factor {
            out += &cube.data.index_axis(Axis(0), i * factor + j);
        }
        out /= factor as f64;
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Divide each unmasked pixel by its flat value; masked pixels untouched.
pub fn flat_field(cube: &SpectralCube, calib: &CalibrationSet) -> Result<SpectralCube> {
    calib.check_shape(cube)?;
    for ((r, c), &f) in calib.flat.indexed_iter() {
        if !cube.mask[[r, c]] && f < FLAT_MIN {
            return Err(Error::Calib(format!(
                "flat value {f} at unmasked pixel ({r}, {c}) below {FLAT_MIN}; mask it instead"
            )));
        }
    }
    let mut data = cube.data.clone();
    for mut frame in data.axis_iter_mut(Axis(0)) {
        for ((r, c), v) in frame.indexed_iter_mut() {
            if !cube.mask[[r, c]] {
                *v /= calib.flat[[r, c]];
            }
        }
    }
    Ok(rebuild(cube, data, cube.mask.clone()))
}

/// Run the full chain in canonical order and flag the result calibrated.
pub fn calibrate(cube: &SpectralCube, calib: &CalibrationSet, config: &CalibConfig) -> Result<SpectralCube> {
    if cube.calibrated {
        return Err(Error::Calib("cube is already calibrated".into()));
    }
    if config.steps != CANONICAL_STEPS {
        return Err(Error::Config(format!(
            "calibration steps must be the canonical order {CANONICAL_STEPS:?}, got {:?}",
            config.steps
        )));
    }
    let mut out = revert_adc(cube, calib)?;
    out = apply_mask(&out, calib)?;
    out = correct_linearity(&out, calib)?;
    out = subtract_dark(&out, calib)?;
    out = correlated_double_sampling(&out)?;
    out = time_bin(&out, config.time_bin_factor)?;
    out = flat_field(&out, calib)?;
    out.calibrated = true;
    Ok(out)
}
