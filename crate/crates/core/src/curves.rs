//! Image domain to time domain: aperture photometry over calibrated cubes,
//! spectral binning of the 356 AIRS columns, and flux normalization.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{LightCurve, SpectralCube, AIRS_COLS};

/// Contiguous partition of the AIRS spectral columns into half-open ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub n_bins: usize,
    /// (start_col, end_col) half-open, covering [0, 356).
    pub bin_edges: Vec<(usize, usize)>,
}

/// Partition the 356 columns into `n_bins` ranges: the first n-1 bins have
/// width floor(356 / n); the final bin absorbs the remainder.
pub fn make_binning(n_bins: usize) -> Result<BinningScheme> {
    if n_bins < 1 || n_bins > AIRS_COLS {
        return Err(Error::Config(format!("n_bins {n_bins} out of range [1, {AIRS_COLS}]")));
    }
    let width = AIRS_COLS / n_bins;
    let mut bin_edges = Vec::with_capacity(n_bins);
    for i in 0..n_bins - 1 {
        bin_edges.push((i * width, (i + 1) * width));
    }
    bin_edges.push(((n_bins - 1) * width, AIRS_COLS));
    Ok(BinningScheme { n_bins, bin_edges })
}

/// Mean of unmasked pixels in each spatial column at each frame.
/// Output entry (t, w) covers the full spatial extent of column w.
pub fn cube_to_column_curves(cube: &SpectralCube) -> Result<Array2<f64>> {
    if !cube.calibrated {
        return Err(Error::Data("column curves require a calibrated cube".into()));
    }
    let (t, h, w) = cube.data.dim();
    let mut counts = vec![0usize; w];
    for col in 0..w {
        counts[col] = (0..h).filter(|&r| !cube.mask[[r, col]]).count();
        if counts[col] == 0 {
            return Err(Error::Data(format!("column {col} is entirely masked")));
        }
    }
    let mut out = Array2::zeros((t, w));
    for frame in 0..t {
        let image = cube.data.index_axis(Axis(0), frame);
        for col in 0..w {
            let mut sum = 0.0;
            for r in 0..h {
                if !cube.mask[[r, col]] {
                    sum += image[[r, col]];
                }
            }
            out[[frame, col]] = sum / counts[col] as f64;
        }
    }
    Ok(out)
}

/// Whole-detector photometry for the FGS channel: mean of all unmasked
/// pixels per frame, normalized.
pub fn cube_to_scalar_curve(cube: &SpectralCube) -> Result<LightCurve> {
    if !cube.calibrated {
        return Err(Error::Data("scalar curve requires a calibrated cube".into()));
    }
    let (t, h, w) = cube.data.dim();
    let n_unmasked = cube.mask.iter().filter(|&&m| !m).count();
    if n_unmasked == 0 {
        return Err(Error::Data("all pixels masked".into()));
    }
    let mut flux = Array1::zeros(t);
    for frame in 0..t {
        let image = cube.data.index_axis(Axis(0), frame);
        let mut sum = 0.0;
        for r in 0..h {
            for c in 0..w {
                if !cube.mask[[r, c]] {
                    sum += image[[r, c]];
                }
            }
        }
        flux[frame] = sum / n_unmasked as f64;
    }
    normalize_curve(&flux, None, "fgs")
}

/// Average column curves within each bin (plus the all-column mean curve)
/// and normalize each result. Returns (bin curves, "airs_mean").
pub fn bin_curves(column_curves: &Array2<f64>, scheme: &BinningScheme) -> Result<(Vec<LightCurve>, LightCurve)> {
    let (t, w) = column_curves.dim();
    if w != AIRS_COLS {
        return Err(Error::Data(format!("expected {AIRS_COLS} columns, got {w}")));
    }
    let mut bins = Vec::with_capacity(scheme.n_bins);
    for (i, &(start, end)) in scheme.bin_edges.iter().enumerate() {
        let mut flux = Array1::zeros(t);
        for frame in 0..t {
            let mut sum = 0.0;
            for col in start..end {
                sum += column_curves[[frame, col]];
            }
            flux[frame] = sum / (end - start) as f64;
        }
        bins.push(normalize_curve(&flux, None, format!("airs_bin_{i:02}"))?);
    }
    let mut mean_flux = Array1::zeros(t);
    for frame in 0..t {
        // explicit left-to-right sum so a single full-width bin is
        // bit-identical to this mean curve
        let mut sum = 0.0;
        for col in 0..w {
            sum += column_curves[[frame, col]];
        }
        mean_flux[frame] = sum / w as f64;
    }
    let airs_mean = normalize_curve(&mean_flux, None, "airs_mean")?;
    Ok((bins, airs_mean))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Divide flux by the median of the out-of-transit samples so depths become
/// flux ratios. When the transit location is not yet known, the first and
/// last 10% of samples stand in for the out-of-transit region; transits in
/// this data never reach the curve edges.
pub fn normalize_curve(
    flux: &Array1<f64>,
    out_of_transit: Option<&[std::ops::Range<usize>]>,
    label: impl Into<String>,
) -> Result<LightCurve> {
    let t = flux.len();
    let mut samples: Vec<f64> = match out_of_transit {
        Some(ranges) => {
            let mut s = Vec::new();
            for r in ranges {
                for i in r.clone() {
                    if i >= t {
                        return Err(Error::Data(format!("out-of-transit index {i} >= {t}")));
                    }
                    s.push(flux[i]);
                }
            }
            s
        }
        None => {
            let edge = (t / 10).max(1);
            flux.iter()
                .take(edge)
                .chain(flux.iter().skip(t - edge))
                .copied()
                .collect()
        }
    };
    if samples.is_empty() {
        return Err(Error::Data("empty out-of-transit region".into()));
    }
    let m = median(&mut samples);
    if m <= 0.0 {
        return Err(Error::Data(format!("non-positive out-of-transit median {m}")));
    }
    LightCurve::new(flux.mapv(|v| v / m), label)
}
