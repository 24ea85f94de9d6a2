//! End-to-end orchestration: raw cubes -> calibrated curves -> features ->
//! model -> scored predictions, plus star-grouped cross-validation.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate, CalibConfig, CalibrationSet};
use crate::curves::{bin_curves, cube_to_column_curves, cube_to_scalar_curve, make_binning};
use crate::detrend::{align_baseline, detrend_zones, find_breakpoints, TransitSegmentation};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMatrix, FeatureSchema};
use crate::model::{fit_bagged, fit_member, BaggedModel, MemberModel, RidgeConfig};
use crate::scoring::{fit_reference, grouped_kfold, make_report, ScoreConfig, ScoreReport};
use crate::types::{
    DatasetManifest, LightCurveSet, PlanetEntry, SpectrumPrediction, TargetSpectrum,
};

/// How per-wavelength uncertainties are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum UncertaintyMode {
    /// Spread of the bagged ensemble members.
    Ensemble,
    /// One constant sigma for every planet and wavelength.
    Fixed { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// AIRS spectral bins; 0 disables binned curves (fgs + airs_mean only).
    pub n_bins: usize,
    pub schema: FeatureSchema,
    /// Per-zone linear detrending plus baseline alignment before features.
    pub geometric_correction: bool,
    pub scale_targets: bool,
    pub uncertainty: UncertaintyMode,
    pub ridge: RidgeConfig,
    pub smooth_window: usize,
    /// None uses the length-dependent default.
    pub guard: Option<usize>,
    pub calib: CalibConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(7).expect("preset 7 is valid")
    }
}

impl PipelineConfig {
    /// Numbered presets tracing the development history of the pipeline,
    /// from a minimal two-signal statistics model to the full configuration.
    /// Each preset adds capability on top of the previous one.
    pub fn preset(n: usize) -> Result<Self> {
        let base = Self {
            n_bins: 0,
            schema: FeatureSchema { stats: true, poly3: false, poly4: false, depth: true },
            geometric_correction: false,
            scale_targets: false,
            uncertainty: UncertaintyMode::Fixed { sigma: 1e-3 },
            ridge: RidgeConfig::default(),
            smooth_window: 9,
            guard: None,
            calib: CalibConfig::default(),
        };
        let config = match n {
            1 => base,
            2 => Self {
                n_bins: 5,
                schema: FeatureSchema::default(),
                ..base
            },
            3 => Self {
                n_bins: 8,
                ..base
            },
            4 => Self {
                n_bins: 8,
                schema: FeatureSchema::default(),
                scale_targets: true,
                ..base
            },
            5 => Self {
                n_bins: 8,
                schema: FeatureSchema::default(),
                scale_targets: true,
                geometric_correction: true,
                ..base
            },
            6 => Self {
                n_bins: 8,
                schema: FeatureSchema::default(),
                scale_targets: true,
                geometric_correction: true,
                uncertainty: UncertaintyMode::Ensemble,
                ..base
            },
            7 => Self {
                n_bins: 10,
                schema: FeatureSchema::default(),
                scale_targets: true,
                geometric_correction: true,
                uncertainty: UncertaintyMode::Ensemble,
                ..base
            },
            _ => return Err(Error::Config(format!("unknown preset {n}, expected 1..=7"))),
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.ridge.validate()?;
        if self.n_bins > 0 {
            make_binning(self.n_bins)?;
        }
        if self.smooth_window == 0 || self.smooth_window % 2 == 0 {
            return Err(Error::Config(format!(
                "smooth_window must be odd and positive, got {}",
                self.smooth_window
            )));
        }
        if let UncertaintyMode::Fixed { sigma } = self.uncertainty {
            if !(sigma > 0.0) {
                return Err(Error::Config(format!("fixed sigma must be > 0, got {sigma}")));
            }
        }
        let schema = &self.schema;
        if !(schema.stats || schema.poly3 || schema.poly4 || schema.depth) {
            return Err(Error::Config("feature schema selects nothing".into()));
        }
        Ok(())
    }

    /// Expected feature count: (2 + n_bins) signals times the schema width.
    pub fn n_features(&self) -> usize {
        (2 + self.n_bins) * self.schema.per_signal()
    }
}

/// Both detectors' calibration data for a dataset.
pub struct DatasetCalibration {
    pub airs: CalibrationSet,
    pub fgs: CalibrationSet,
}

impl DatasetCalibration {
    pub fn load(root: &Path) -> Result<Self> {
        Ok(Self {
            airs: CalibrationSet::load(&root.join("calib/airs"))?,
            fgs: CalibrationSet::load(&root.join("calib/fgs"))?,
        })
    }
}

/// Calibrate one planet's cubes and reduce them to normalized light curves,
/// plus the transit segmentation found on the mean AIRS curve.
pub fn planet_curves(
    root: &Path,
    entry: &PlanetEntry,
    calib: &DatasetCalibration,
    config: &PipelineConfig,
) -> Result<(LightCurveSet, TransitSegmentation)> {
    let airs_raw = crate::io::load_cube(&root.join(&entry.airs))?;
    let fgs_raw = crate::io::load_cube(&root.join(&entry.fgs))?;
    let airs = calibrate(&airs_raw, &calib.airs, &config.calib)?;
    let fgs = calibrate(&fgs_raw, &calib.fgs, &config.calib)?;

    let columns = cube_to_column_curves(&airs)?;
    let scheme = make_binning(self_bins(config))?;
    let (mut airs_bins, airs_mean) = bin_curves(&columns, &scheme)?;
    if config.n_bins == 0 {
        airs_bins.clear();
    }
    let fgs_curve = cube_to_scalar_curve(&fgs)?;

    let guard = config
        .guard
        .unwrap_or_else(|| TransitSegmentation::default_guard(airs_mean.len()));
    let seg = find_breakpoints(&airs_mean, config.smooth_window, guard)
        .map_err(|e| Error::Segmentation(format!("planet {:?}: {e}", entry.planet_id)))?;

    let mut set = LightCurveSet { fgs: fgs_curve, airs_mean, airs_bins };
    if config.geometric_correction {
        let correct = |c: &crate::types::LightCurve| -> Result<crate::types::LightCurve> {
            align_baseline(&detrend_zones(c, &seg)?, &seg)
        };
        set = LightCurveSet {
            fgs: correct(&set.fgs)?,
            airs_mean: correct(&set.airs_mean)?,
            airs_bins: set.airs_bins.iter().map(correct).collect::<Result<_>>()?,
        };
    }
    Ok((set, seg))
}

// binning with n_bins = 0 still needs a valid scheme for the mean curve
fn self_bins(config: &PipelineConfig) -> usize {
    config.n_bins.max(1)
}

/// Extract the feature matrix for every planet in the manifest, rows in
/// manifest (planet_id) order.
pub fn extract_dataset(
    manifest: &DatasetManifest,
    calib: &DatasetCalibration,
    config: &PipelineConfig,
) -> Result<FeatureMatrix> {
    config.validate()?;
    let rows: Vec<(Vec<String>, (String, Vec<f64>))> = manifest
        .planets
        .par_iter()
        .map(|entry| -> Result<_> {
            let (curves, seg) = planet_curves(&manifest.root, entry, calib, config)?;
            let (names, values) = extract_features(&curves, &seg, &config.schema)?;
            Ok((names, (entry.planet_id.clone(), values)))
        })
        .collect::<Result<_>>()?;
    let mut names = None;
    let mut data = Vec::with_capacity(rows.len());
    for (row_names, row) in rows {
        match &names {
            None => names = Some(row_names),
            Some(expected) => {
                if expected != &row_names {
                    return Err(Error::Feature(format!(
                        "planet {:?} produced a different feature layout",
                        row.0
                    )));
                }
            }
        }
        data.push(row);
    }
    let names = names.ok_or_else(|| Error::Data("empty dataset".into()))?;
    FeatureMatrix::from_rows(names, data)
}

/// Fit the regression stage on extracted features. Fixed-sigma mode trains
/// a single model on all rows; ensemble mode trains the bagged ensemble.
pub fn fit_pipeline_model(
    features: &FeatureMatrix,
    targets: &[TargetSpectrum],
    config: &PipelineConfig,
) -> Result<BaggedModel> {
    config.validate()?;
    match config.uncertainty {
        UncertaintyMode::Ensemble => {
            fit_bagged(features, targets, &config.ridge, config.scale_targets)
        }
        UncertaintyMode::Fixed { .. } => fit_single(features, targets, config),
    }
}

fn fit_single(
    features: &FeatureMatrix,
    targets: &[TargetSpectrum],
    config: &PipelineConfig,
) -> Result<BaggedModel> {
    // reuse the bagged plumbing with one full-sample member; sigma comes
    // from the uncertainty mode at prediction time
    let feature_scaler =
        crate::features::fit_scaler(&features.values, features.names.clone())?;
    let xz = feature_scaler.transform(&features.values)?;
    let mut y = ndarray::Array2::zeros((targets.len(), crate::types::N_WAVELENGTHS));
    for (i, t) in targets.iter().enumerate() {
        if t.planet_id != features.planet_ids[i] {
            return Err(Error::Model(format!(
                "feature/target order mismatch: {} vs {}",
                features.planet_ids[i], t.planet_id
            )));
        }
        y.row_mut(i).assign(&t.depth);
    }
    let target_names = (0..crate::types::N_WAVELENGTHS).map(|i| format!("w{i:03}")).collect();
    let (target_scaler, yz) = if config.scale_targets {
        let scaler = crate::features::fit_scaler(&y, target_names)?;
        let yz = scaler.transform(&y)?;
        (Some(scaler), yz)
    } else {
        (None, y)
    };
    let member: MemberModel = fit_member(&xz, &yz, &config.ridge)?;
    Ok(BaggedModel {
        config: config.ridge.clone(),
        feature_names: features.names.clone(),
        feature_scaler,
        target_scaler,
        members: vec![member],
    })
}

/// Predict spectra and apply the configured uncertainty mode.
pub fn predict_pipeline(
    model: &BaggedModel,
    features: &FeatureMatrix,
    config: &PipelineConfig,
) -> Result<Vec<SpectrumPrediction>> {
    let mut preds = crate::model::predict(model, features)?;
    if let UncertaintyMode::Fixed { sigma } = config.uncertainty {
        for p in &mut preds {
            p.sigma.fill(sigma);
        }
    }
    Ok(preds)
}

/// Cross-validation summary: one report per fold plus macro averages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<ScoreReport>,
    pub macro_score_raw: f64,
    pub macro_score_clipped: f64,
}

fn subset_features(features: &FeatureMatrix, ids: &[String]) -> Result<FeatureMatrix> {
    let index: HashMap<&str, usize> = features
        .planet_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("planet {id:?} missing from feature matrix")))?;
        rows.push((id.clone(), features.values.row(i).to_vec()));
    }
    FeatureMatrix::from_rows(features.names.clone(), rows)
}

fn subset_targets(targets: &[TargetSpectrum], ids: &[String]) -> Result<Vec<TargetSpectrum>> {
    let index: HashMap<&str, &TargetSpectrum> =
        targets.iter().map(|t| (t.planet_id.as_str(), t)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&t| t.clone())
                .ok_or_else(|| Error::Data(format!("planet {id:?} has no target")))
        })
        .collect()
}

/// Star-grouped K-fold cross-validation. Scalers, the model, and the
/// scoring reference are fit on each fold's training split only; the
/// macro score is the unweighted mean over folds.
pub fn cross_validate(
    manifest: &DatasetManifest,
    features: &FeatureMatrix,
    targets: &[TargetSpectrum],
    config: &PipelineConfig,
    k: usize,
    seed: u64,
    score_config: &ScoreConfig,
) -> Result<CvReport> {
    config.validate()?;
    let splits = grouped_kfold(manifest, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for (fold, (train_ids, val_ids)) in splits.iter().enumerate() {
        let train_x = subset_features(features, train_ids)?;
        let train_y = subset_targets(targets, train_ids)?;
        let val_x = subset_features(features, val_ids)?;
        let val_y = subset_targets(targets, val_ids)?;

        let model = fit_pipeline_model(&train_x, &train_y, config)?;
        let preds = predict_pipeline(&model, &val_x, config)?;
        let baseline = fit_reference(&train_y)?;
        folds.push(make_report(&preds, &val_y, &baseline, score_config, Some(fold))?);
    }
    let n = folds.len() as f64;
    let macro_raw = folds.iter().map(|f| f.score_raw).sum::<f64>() / n;
    let macro_clipped = folds.iter().map(|f| f.score_clipped).sum::<f64>() / n;
    Ok(CvReport { folds, macro_score_raw: macro_raw, macro_score_clipped: macro_clipped })
}
