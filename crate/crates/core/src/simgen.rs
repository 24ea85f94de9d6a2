//! Synthetic forward instrument model and dataset generator. Applies
//! detector effects in the exact inverse order of the calibration chain so
//! that, with noise off, calibrate(render(...)) recovers the physical cube.

use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::CalibrationSet;
use crate::detrend::trapezoid_weight;
use crate::error::{Error, Result};
use crate::io;
use crate::types::{
    Channel, DatasetManifest, PlanetEntry, SpectralCube, TargetSpectrum, AIRS_COLS, N_WAVELENGTHS,
};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StarProfile {
    pub star_id: String,
    /// Out-of-transit flux per pixel, detector counts.
    pub baseline_flux: f64,
    /// Relative std of multiplicative jitter noise.
    pub jitter_rel_std: f64,
    /// Relative drift slope per frame, sampled uniformly.
    pub drift_slope_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SpectrumModel {
    pub base_depth_range: (f64, f64),
    pub n_features_range: (usize, usize),
    /// Gaussian bump width in wavelength-index units.
    pub feature_width_range: (f64, f64),
    pub feature_amplitude_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TimingModel {
    /// Ingress/egress centers as fractions of the frame count.
    pub t1_frac_range: (f64, f64),
    pub t2_frac_range: (f64, f64),
    pub ingress_frames_range: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DetectorModel {
    pub airs_rows: usize,
    pub fgs_rows: usize,
    pub fgs_cols: usize,
    /// Physical frames per observation; the raw cube has twice as many
    /// (CDS read pairs).
    pub n_frames: usize,
    pub gain_range: (f64, f64),
    pub offset_range: (f64, f64),
    /// Quadratic non-linearity coefficient of the correction polynomial.
    pub nonlin_quad_range: (f64, f64),
    pub dark_range: (f64, f64),
    pub flat_std: f64,
    pub hot_pixel_fraction: f64,
    /// Scale of the shared per-pair CDS read offset.
    pub read_offset_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimConfig {
    pub n_planets: usize,
    pub stars: Vec<StarProfile>,
    pub spectrum: SpectrumModel,
    pub timing: TimingModel,
    pub detector: DetectorModel,
    pub noise: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_planets: 100,
            stars: vec![
                StarProfile {
                    star_id: "star_a".into(),
                    baseline_flux: 5e3,
                    jitter_rel_std: 3e-4,
                    drift_slope_range: (-2e-5, 2e-5),
                },
                StarProfile {
                    star_id: "star_b".into(),
                    baseline_flux: 8e3,
                    jitter_rel_std: 1.5e-3,
                    drift_slope_range: (-3e-5, 3e-5),
                },
            ],
            spectrum: SpectrumModel {
                base_depth_range: (0.004, 0.03),
                n_features_range: (0, 5),
                feature_width_range: (5.0, 40.0),
                feature_amplitude_range: (0.0005, 0.003),
            },
            timing: TimingModel {
                t1_frac_range: (0.25, 0.35),
                t2_frac_range: (0.65, 0.75),
                ingress_frames_range: (5.0, 9.0),
            },
            detector: DetectorModel {
                airs_rows: 8,
                fgs_rows: 4,
                fgs_cols: 4,
                n_frames: 187,
                gain_range: (0.8, 1.2),
                offset_range: (-50.0, 50.0),
                nonlin_quad_range: (0.0, 2e-8),
                dark_range: (10.0, 100.0),
                flat_std: 0.02,
                hot_pixel_fraction: 0.005,
                read_offset_scale: 100.0,
            },
            noise: true,
            seed: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Sim(format!("range {name} = ({lo}, {hi}) is not ordered")));
    }
    Ok(())
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_planets == 0 {
            return Err(Error::Sim("n_planets must be positive".into()));
        }
        if self.stars.len() < 2 {
            return Err(Error::Sim("at least 2 star profiles required".into()));
        }
        for s in &self.stars {
            if s.baseline_flux <= 0.0 || s.jitter_rel_std < 0.0 {
                return Err(Error::Sim(format!("invalid star profile {:?}", s.star_id)));
            }
            check_range("drift_slope", s.drift_slope_range)?;
        }
        check_range("base_depth", self.spectrum.base_depth_range)?;
        check_range("feature_width", self.spectrum.feature_width_range)?;
        check_range("feature_amplitude", self.spectrum.feature_amplitude_range)?;
        check_range("t1_frac", self.timing.t1_frac_range)?;
        check_range("t2_frac", self.timing.t2_frac_range)?;
        check_range("ingress_frames", self.timing.ingress_frames_range)?;
        let t = self.detector.n_frames as f64;
        let half_ramp = self.timing.ingress_frames_range.1 / 2.0;
        // transits must stay >= 15% of T away from the curve edges so the
        // pre-segmentation normalization fallback is valid
        if self.timing.t1_frac_range.0 * t - half_ramp < 0.15 * t
            || self.timing.t2_frac_range.1 * t + half_ramp > 0.85 * t
        {
            return Err(Error::Sim("transit timing violates the 15% edge margin".into()));
        }
        if self.timing.t1_frac_range.1 >= self.timing.t2_frac_range.0 {
            return Err(Error::Sim("t1 range must precede t2 range".into()));
        }
        if self.detector.n_frames < 16 {
            return Err(Error::Sim("n_frames must be >= 16".into()));
        }
        if self.detector.gain_range.0 <= 0.0 {
            return Err(Error::Sim("gain must be positive".into()));
        }
        Ok(())
    }
}

/// Map an AIRS column to its wavelength index on the 283-point target grid;
/// index 0 is the FGS band, columns cover 1..=282 proportionally.
pub fn airs_column_wavelength(col: usize) -> usize {
    1 + ((col as f64) * 281.0 / (AIRS_COLS as f64 - 1.0)).round() as usize
}

/// Draw a transmission spectrum: base depth plus Gaussian absorption bumps
/// on the 283-point grid.
pub fn sample_spectrum(rng: &mut ChaCha8Rng, model: &SpectrumModel) -> Result<Array1<f64>> {
    let base = rng.random_range(model.base_depth_range.0..=model.base_depth_range.1);
    let n_bumps = rng.random_range(model.n_features_range.0..=model.n_features_range.1);
    let mut depth = Array1::from_elem(N_WAVELENGTHS, base);
    for _ in 0..n_bumps {
        let center = rng.random_range(0.0..N_WAVELENGTHS as f64);
        let width = rng.random_range(model.feature_width_range.0..=model.feature_width_range.1);
        let amp = rng
            .random_range(model.feature_amplitude_range.0..=model.feature_amplitude_range.1);
        for (i, d) in depth.iter_mut().enumerate() {
            let z = (i as f64 - center) / width;
            *d += amp * (-0.5 * z * z).exp();
        }
    }
    if depth.iter().any(|&d| d <= 0.0 || d >= 0.05) {
        return Err(Error::Sim(format!(
            "spectrum model produced out-of-range depth (base {base}, {n_bumps} bumps)"
        )));
    }
    Ok(depth)
}

/// Ground truth for one rendered planet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitTruth {
    pub t1: f64,
    pub t2: f64,
    pub ingress_frames: f64,
    pub drift_slope: f64,
}

/// A rendered observation: raw cubes plus the noiseless-chain physical
/// cubes the calibration should recover.
#[derive(Debug, Clone)]
pub struct RenderedPlanet {
    pub airs_raw: SpectralCube,
    pub fgs_raw: SpectralCube,
    pub airs_physical: Array3<f64>,
    pub fgs_physical: Array3<f64>,
    pub truth: TransitTruth,
}

/// Invert the correction polynomial g(x) = x + c2 x^2 by Newton iteration:
/// find m with g(m) = v. Converges in a handful of steps on the operating
/// range (c2 * x << 1).
fn invert_correction(v: f64, c2: f64) -> f64 {
    if c2 == 0.0 {
        return v;
    }
    let mut m = v;
    for _ in 0..60 {
        let g = m + c2 * m * m;
        let gp = 1.0 + 2.0 * c2 * m;
        let step = (g - v) / gp;
        m -= step;
        if step.abs() <= 1e-15 * m.abs().max(1.0) {
            break;
        }
    }
    m
}

/// Generate a detector's calibration data from the detector model.
pub fn make_calibration(
    rng: &mut ChaCha8Rng,
    det: &DetectorModel,
    h: usize,
    w: usize,
) -> CalibrationSet {
    let mut calib = CalibrationSet::identity(h, w);
    calib.gain.mapv_inplace(|_| rng.random_range(det.gain_range.0..=det.gain_range.1));
    calib
        .offset
        .mapv_inplace(|_| rng.random_range(det.offset_range.0..=det.offset_range.1));
    let mut lin = Array3::zeros((3, h, w));
    for r in 0..h {
        for c in 0..w {
            lin[[1, r, c]] = 1.0;
            lin[[2, r, c]] = rng.random_range(det.nonlin_quad_range.0..=det.nonlin_quad_range.1);
        }
    }
    calib.linearity_coeffs = lin;
    calib.dark.mapv_inplace(|_| rng.random_range(det.dark_range.0..=det.dark_range.1));
    let flat_noise = Normal::new(0.0, det.flat_std).expect("valid std");
    calib
        .flat
        .mapv_inplace(|_| (1.0 + flat_noise.sample(rng)).max(0.5));
    calib.hot_dead_mask = Array2::from_shape_fn((h, w), |_| {
        rng.random_bool(det.hot_pixel_fraction)
    });
    calib
}

struct ChannelSpec<'a> {
    channel: Channel,
    rows: usize,
    cols: usize,
    calib: &'a CalibrationSet,
    /// depth per detector column
    depth_per_col: Vec<f64>,
}

fn render_channel(
    spec: &ChannelSpec<'_>,
    star: &StarProfile,
    truth: &TransitTruth,
    det: &DetectorModel,
    rng: &mut ChaCha8Rng,
    noise: bool,
) -> Result<(SpectralCube, Array3<f64>)> {
    let t_phys = det.n_frames;
    let (h, w) = (spec.rows, spec.cols);
    let jitter = Normal::new(0.0, star.jitter_rel_std).expect("valid std");

    let mut physical = Array3::zeros((t_phys, h, w));
    for t in 0..t_phys {
        let trap = trapezoid_weight(t as f64, truth.t1, truth.t2, truth.ingress_frames);
        let drift = 1.0 + truth.drift_slope * (t as f64 - t_phys as f64 / 2.0);
        for c in 0..w {
            let jit = if noise { 1.0 + jitter.sample(rng) } else { 1.0 };
            let v = star.baseline_flux * (1.0 - spec.depth_per_col[c] * trap) * drift * jit;
            for r in 0..h {
                physical[[t, r, c]] = v;
            }
        }
    }

    // detector effects in the exact inverse order of the calibration chain
    let mut raw = Array3::zeros((2 * t_phys, h, w));
    for t in 0..t_phys {
        let read_offset = rng.random_range(-det.read_offset_scale..=det.read_offset_scale);
        for r in 0..h {
            for c in 0..w {
                let flat_applied = physical[[t, r, c]] * spec.calib.flat[[r, c]];
                // start read carries only the shared pair offset; the end
                // read adds the accumulated signal
                for (frame, pre_dark) in [(2 * t, read_offset), (2 * t + 1, read_offset + flat_applied)]
                {
                    let with_dark = pre_dark + spec.calib.dark[[r, c]];
                    let measured = invert_correction(with_dark, spec.calib.linearity_coeffs[[2, r, c]]);
                    raw[[frame, r, c]] =
                        spec.calib.gain[[r, c]] * measured + spec.calib.offset[[r, c]];
                }
            }
        }
    }
    let cube = SpectralCube::new(raw, spec.calib.hot_dead_mask.clone(), spec.channel, false)?;
    Ok((cube, physical))
}

/// Render one planet's raw AIRS + FGS observation from its spectrum and
/// star profile, recording the physical ground truth.
pub fn render_planet(
    depth: &Array1<f64>,
    star: &StarProfile,
    config: &SimConfig,
    airs_calib: &CalibrationSet,
    fgs_calib: &CalibrationSet,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedPlanet> {
    let det = &config.detector;
    let t = det.n_frames as f64;
    let truth = TransitTruth {
        t1: t * rng.random_range(config.timing.t1_frac_range.0..=config.timing.t1_frac_range.1),
        t2: t * rng.random_range(config.timing.t2_frac_range.0..=config.timing.t2_frac_range.1),
        ingress_frames: rng.random_range(
            config.timing.ingress_frames_range.0..=config.timing.ingress_frames_range.1,
        ),
        drift_slope: rng.random_range(star.drift_slope_range.0..=star.drift_slope_range.1),
    };

    let airs_spec = ChannelSpec {
        channel: Channel::Airs,
        rows: det.airs_rows,
        cols: AIRS_COLS,
        calib: airs_calib,
        depth_per_col: (0..AIRS_COLS).map(|c| depth[airs_column_wavelength(c)]).collect(),
    };
    let (airs_raw, airs_physical) = render_channel(&airs_spec, star, &truth, det, rng, config.noise)?;

    let fgs_spec = ChannelSpec {
        channel: Channel::Fgs,
        rows: det.fgs_rows,
        cols: det.fgs_cols,
        calib: fgs_calib,
        depth_per_col: vec![depth[0]; det.fgs_cols],
    };
    let (fgs_raw, fgs_physical) = render_channel(&fgs_spec, star, &truth, det, rng, config.noise)?;

    Ok(RenderedPlanet { airs_raw, fgs_raw, airs_physical, fgs_physical, truth })
}

/// Write a complete dataset (calibration, cubes, targets, truth sidecars,
/// manifest) under `out_root`. Byte-deterministic under the config seed.
pub fn generate_dataset(config: &SimConfig, out_root: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_root)?;

    let det = &config.detector;
    let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
    let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
    airs_calib.save(&out_root.join("calib/airs"))?;
    fgs_calib.save(&out_root.join("calib/fgs"))?;

    let results: Vec<(PlanetEntry, TargetSpectrum, TransitTruth)> = (0..config.n_planets)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let planet_id = format!("p{i:04}");
            let star = &config.stars[i % config.stars.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(
                config.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let depth = sample_spectrum(&mut rng, &config.spectrum)?;
            let rendered =
                render_planet(&depth, star, config, &airs_calib, &fgs_calib, &mut rng)?;
            let dir = out_root.join(format!("planets/{planet_id}"));
            std::fs::create_dir_all(&dir)?;
            io::save_cube(&rendered.airs_raw, &dir.join("airs.bin"))?;
            io::save_cube(&rendered.fgs_raw, &dir.join("fgs.bin"))?;
            let target = TargetSpectrum::new(depth, planet_id.clone(), star.star_id.clone())?;
            let entry = PlanetEntry {
                planet_id: planet_id.clone(),
                star_id: star.star_id.clone(),
                airs: format!("planets/{planet_id}/airs.bin"),
                fgs: format!("planets/{planet_id}/fgs.bin"),
            };
            Ok((entry, target, rendered.truth))
        })
        .collect::<Result<_>>()?;

    let planets: Vec<PlanetEntry> = results.iter().map(|(e, _, _)| e.clone()).collect();
    let targets: Vec<TargetSpectrum> = results.iter().map(|(_, t, _)| t.clone()).collect();
    io::save_targets(&out_root.join("targets.csv"), &targets)?;

    let mut writer =
        csv::Writer::from_path(out_root.join("truth_timing.csv")).map_err(|e| Error::Format(e.to_string()))?;
    writer
        .write_record(["planet_id", "t1", "t2", "ingress_frames", "drift_slope"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for (entry, _, truth) in &results {
        writer
            .write_record([
                entry.planet_id.clone(),
                format!("{:.17e}", truth.t1),
                format!("{:.17e}", truth.t2),
                format!("{:.17e}", truth.ingress_frames),
                format!("{:.17e}", truth.drift_slope),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;

    let manifest = DatasetManifest {
        root: out_root.to_path_buf(),
        planets,
        wavelengths: N_WAVELENGTHS,
        has_targets: true,
    };
    io::save_manifest(&manifest)?;
    crate::io::load_manifest(out_root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{calibrate, CalibConfig};

    fn small_config(seed: u64, noise: bool) -> SimConfig {
        SimConfig {
            n_planets: 4,
            detector: DetectorModel {
                airs_rows: 3,
                fgs_rows: 2,
                fgs_cols: 2,
                n_frames: 64,
                ..SimConfig::default().detector
            },
            noise,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn spectrum_constant_without_bumps() {
        let model = SpectrumModel {
            base_depth_range: (0.01, 0.01),
            n_features_range: (0, 0),
            feature_width_range: (5.0, 10.0),
            feature_amplitude_range: (0.001, 0.002),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let depth = sample_spectrum(&mut rng, &model).unwrap();
        assert!(depth.iter().all(|&d| (d - 0.01).abs() < 1e-15));
    }

    #[test]
    fn spectrum_deterministic_and_in_range() {
        let model = SimConfig::default().spectrum;
        let a = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(5), &model).unwrap();
        let b = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(5), &model).unwrap();
        assert_eq!(a, b);
        for seed in 0..1000 {
            let d = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(seed), &model).unwrap();
            assert!(d.iter().all(|&v| v > 0.0 && v < 0.05));
        }
    }

    #[test]
    fn wavelength_mapping_endpoints() {
        assert_eq!(airs_column_wavelength(0), 1);
        assert_eq!(airs_column_wavelength(AIRS_COLS - 1), 282);
        for c in 0..AIRS_COLS {
            let w = airs_column_wavelength(c);
            assert!((1..=282).contains(&w));
        }
    }

    #[test]
    fn calibrate_inverts_render_noiseless() {
        let config = small_config(7, false);
        let det = &config.detector;
        let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
        let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let depth = sample_spectrum(&mut rng, &config.spectrum).unwrap();
        let star = &config.stars[0];
        let rendered =
            render_planet(&depth, star, &config, &airs_calib, &fgs_calib, &mut rng).unwrap();

        for (raw, calibset, physical) in [
            (&rendered.airs_raw, &airs_calib, &rendered.airs_physical),
            (&rendered.fgs_raw, &fgs_calib, &rendered.fgs_physical),
        ] {
            let out = calibrate(raw, calibset, &CalibConfig::default()).unwrap();
            assert_eq!(out.frames(), physical.dim().0);
            for ((t, r, c), &want) in physical.indexed_iter() {
                if !out.mask[[r, c]] {
                    let got = out.data[[t, r, c]];
                    assert!(
                        ((got - want) / want).abs() < 1e-9,
                        "({t},{r},{c}): {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_depth_means_no_transit() {
        let mut config = small_config(3, false);
        config.spectrum = SpectrumModel {
            base_depth_range: (1e-12, 1e-12),
            n_features_range: (0, 0),
            feature_width_range: (5.0, 10.0),
            feature_amplitude_range: (0.0, 0.0),
        };
        let det = &config.detector;
        let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
        let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let depth = sample_spectrum(&mut rng, &config.spectrum).unwrap();
        let mut star = config.stars[0].clone();
        star.drift_slope_range = (0.0, 0.0);
        let rendered =
            render_planet(&depth, &star, &config, &airs_calib, &fgs_calib, &mut rng).unwrap();
        // in-transit and out-of-transit physical column means agree to ~depth
        let mid = rendered.airs_physical[[32, 0, 10]];
        let edge = rendered.airs_physical[[0, 0, 10]];
        assert!(((mid - edge) / edge).abs() < 1e-9);
    }

    #[test]
    fn doubling_baseline_doubles_physical_flux() {
        let config = small_config(11, false);
        let det = &config.detector;
        let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
        let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
        let depth = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(1), &config.spectrum).unwrap();
        let star = config.stars[0].clone();
        let mut doubled = star.clone();
        doubled.baseline_flux *= 2.0;
        let a = render_planet(&depth, &star, &config, &airs_calib, &fgs_calib, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = render_planet(&depth, &doubled, &config, &airs_calib, &fgs_calib, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (x, y) in a.airs_physical.iter().zip(b.airs_physical.iter()) {
            assert!((2.0 * x - y).abs() / y < 1e-12);
        }
    }

    #[test]
    fn injected_depth_survives_normalized_column_curve() {
        // noiseless, no drift: the column curve's relative dip equals the
        // column's depth exactly
        let mut config = small_config(13, false);
        let det = &config.detector;
        config.stars[0].drift_slope_range = (0.0, 0.0);
        let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
        let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
        let depth = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(21), &config.spectrum).unwrap();
        let star = config.stars[0].clone();
        let rendered =
            render_planet(&depth, &star, &config, &airs_calib, &fgs_calib, &mut ChaCha8Rng::seed_from_u64(22)).unwrap();
        let truth = &rendered.truth;
        // a frame fully inside the flat transit bottom
        let mid = ((truth.t1 + truth.t2) / 2.0) as usize;
        let col = 100;
        let out_level = rendered.airs_physical[[0, 0, col]];
        let in_level = rendered.airs_physical[[mid, 0, col]];
        let want = depth[airs_column_wavelength(col)];
        assert!((1.0 - in_level / out_level - want).abs() < 1e-12);
    }

    #[test]
    fn jitter_std_matches_configuration() {
        let mut config = small_config(17, true);
        config.detector.n_frames = 1500;
        config.timing = TimingModel {
            t1_frac_range: (0.3, 0.3),
            t2_frac_range: (0.7, 0.7),
            ingress_frames_range: (20.0, 20.0),
        };
        let det = &config.detector;
        let mut calib_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let airs_calib = make_calibration(&mut calib_rng, det, det.airs_rows, AIRS_COLS);
        let fgs_calib = make_calibration(&mut calib_rng, det, det.fgs_rows, det.fgs_cols);
        let depth = sample_spectrum(&mut ChaCha8Rng::seed_from_u64(1), &config.spectrum).unwrap();
        let mut star = config.stars[0].clone();
        star.drift_slope_range = (0.0, 0.0);
        star.jitter_rel_std = 1e-3;
        let rendered =
            render_planet(&depth, &star, &config, &airs_calib, &fgs_calib, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // estimate relative std over the pre-transit frames of one column
        let n = 400;
        let values: Vec<f64> = (0..n).map(|t| rendered.airs_physical[[t, 0, 7]]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let rel = var.sqrt() / mean;
        assert!((rel - 1e-3).abs() / 1e-3 < 0.1, "estimated rel std {rel}");
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let config = SimConfig { n_planets: 3, ..small_config(23, true) };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = generate_dataset(&config, dir_a.path()).unwrap();
        let mb = generate_dataset(&config, dir_b.path()).unwrap();
        assert_eq!(ma.planets, mb.planets);
        for p in &ma.planets {
            for rel in [&p.airs, &p.fgs] {
                let a = std::fs::read(dir_a.path().join(rel)).unwrap();
                let b = std::fs::read(dir_b.path().join(rel)).unwrap();
                assert_eq!(a, b, "{rel} differs between runs");
            }
        }
        let ta = std::fs::read(dir_a.path().join("targets.csv")).unwrap();
        let tb = std::fs::read(dir_b.path().join("targets.csv")).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn generated_dataset_loads_and_validates() {
        let config = SimConfig { n_planets: 4, ..small_config(29, true) };
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&config, dir.path()).unwrap();
        assert_eq!(manifest.planets.len(), 4);
        assert_eq!(manifest.star_ids().len(), 2);
        let targets = io::load_targets(&manifest).unwrap();
        assert_eq!(targets.len(), 4);
        assert!(targets.iter().all(|t| t.depth.len() == N_WAVELENGTHS));
    }
}
