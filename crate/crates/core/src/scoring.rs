//! Gaussian log-likelihood metric, normalized score, reference
//! baselines, star-grouped K-fold splitting, and the score landscape grid.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::types::{DatasetManifest, SpectrumPrediction, TargetSpectrum, N_WAVELENGTHS, SIGMA_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreConfig {
    /// 10 ppm in flux-ratio units.
    pub sigma_ideal: f64,
    pub clip_score: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { sigma_ideal: 1e-5, clip_score: true }
    }
}

/// Gaussian log-likelihood of truth y under N(mu, sigma^2):
/// -1/2 (ln 2pi + ln sigma^2 + (y - mu)^2 / sigma^2).
pub fn gll(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Score(format!("sigma must be > 0, got {sigma}")));
    }
    let z = (y - mu) / sigma;
    Ok(-0.5 * ((2.0 * std::f64::consts::PI).ln() + (sigma * sigma).ln() + z * z))
}

/// Unweighted double sum of gll over planets and wavelengths. Predictions
/// and truth must agree in planet order.
pub fn sum_gll(predictions: &[SpectrumPrediction], truth: &[TargetSpectrum]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Score(format!(
            "{} predictions vs {} truths",
            predictions.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in predictions.iter().zip(truth.iter()) {
        if p.planet_id != t.planet_id {
            return Err(Error::Score(format!(
                "planet id mismatch: {} vs {}",
                p.planet_id, t.planet_id
            )));
        }
        for w in 0..N_WAVELENGTHS {
            total += gll(t.depth[w], p.mu[w], p.sigma[w])?;
        }
    }
    Ok(total)
}

/// Linear normalization of L between the reference and ideal anchors.
pub fn score(l: f64, l_ideal: f64, l_ref: f64) -> Result<f64> {
    if l_ideal == l_ref {
        return Err(Error::Score("degenerate anchors: L_ideal == L_ref".into()));
    }
    Ok((l - l_ref) / (l_ideal - l_ref))
}

/// Training-set mean/std prediction repeated for every planet.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReferenceBaseline {
    pub mu_ref: Vec<f64>,
    /// Per-wavelength standard deviation, floored at the sigma floor.
    pub sigma_ref: Vec<f64>,
}

pub fn fit_reference(train_targets: &[TargetSpectrum]) -> Result<ReferenceBaseline> {
    let n = train_targets.len();
    if n < 2 {
        return Err(Error::Score(format!("reference baseline needs >= 2 planets, got {n}")));
    }
    let mut mu_ref = vec![0.0; N_WAVELENGTHS];
    let mut sigma_ref = vec![0.0; N_WAVELENGTHS];
    for w in 0..N_WAVELENGTHS {
        let mean = train_targets.iter().map(|t| t.depth[w]).sum::<f64>() / n as f64;
        let var = train_targets.iter().map(|t| (t.depth[w] - mean).powi(2)).sum::<f64>() / n as f64;
        mu_ref[w] = mean;
        let s = var.sqrt();
        if s < SIGMA_FLOOR {
            log::warn!("degenerate targets at wavelength {w}; sigma_ref floored");
        }
        sigma_ref[w] = s.max(SIGMA_FLOOR);
    }
    Ok(ReferenceBaseline { mu_ref, sigma_ref })
}

impl ReferenceBaseline {
    /// The baseline's prediction for any planet.
    pub fn as_prediction(&self, planet_id: &str) -> SpectrumPrediction {
        SpectrumPrediction {
            mu: Array1::from_vec(self.mu_ref.clone()),
            sigma: Array1::from_vec(self.sigma_ref.clone()),
            planet_id: planet_id.to_string(),
        }
    }
}

/// L with the submission exactly matching truth at the ideal uncertainty.
pub fn l_ideal(truth: &[TargetSpectrum], config: &ScoreConfig) -> f64 {
    let per_term = -0.5
        * ((2.0 * std::f64::consts::PI).ln() + (config.sigma_ideal * config.sigma_ideal).ln());
    truth.len() as f64 * N_WAVELENGTHS as f64 * per_term
}

/// L with the training baseline repeated for every truth planet.
pub fn l_ref(baseline: &ReferenceBaseline, truth: &[TargetSpectrum]) -> Result<f64> {
    let preds: Vec<SpectrumPrediction> =
        truth.iter().map(|t| baseline.as_prediction(&t.planet_id)).collect();
    sum_gll(&preds, truth)
}

/// Per-fold score report with per-planet and per-star breakdowns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub l: f64,
    pub l_ideal: f64,
    pub l_ref: f64,
    pub score_raw: f64,
    pub score_clipped: f64,
    pub per_planet: Vec<(String, f64)>,
    pub per_star: BTreeMap<String, f64>,
    pub fold: Option<usize>,
}

pub fn make_report(
    predictions: &[SpectrumPrediction],
    truth: &[TargetSpectrum],
    baseline: &ReferenceBaseline,
    config: &ScoreConfig,
    fold: Option<usize>,
) -> Result<ScoreReport> {
    let l = sum_gll(predictions, truth)?;
    let li = l_ideal(truth, config);
    let lr = l_ref(baseline, truth)?;
    let raw = score(l, li, lr)?;
    let mut per_planet = Vec::with_capacity(truth.len());
    let mut per_star: BTreeMap<String, f64> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truth.iter()) {
        let planet_l = sum_gll(std::slice::from_ref(p), std::slice::from_ref(t))?;
        per_planet.push((t.planet_id.clone(), planet_l));
        *per_star.entry(t.star_id.clone()).or_insert(0.0) += planet_l;
    }
    Ok(ScoreReport {
        l,
        l_ideal: li,
        l_ref: lr,
        score_raw: raw,
        score_clipped: raw.clamp(0.0, 1.0),
        per_planet,
        per_star,
        fold,
    })
}

/// Star-stratified K folds: every star's planets are shuffled (seeded) and
/// dealt round-robin, so every validation fold contains every star.
/// Returns (train ids, validation ids) per fold.
pub fn grouped_kfold(
    manifest: &DatasetManifest,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    let mut by_star: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in &manifest.planets {
        by_star.entry(&p.star_id).or_default().push(&p.planet_id);
    }
    if by_star.len() < 2 {
        return Err(Error::Config("grouped CV needs at least 2 distinct stars".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (star, mut ids) in by_star {
        if ids.len() < k {
            return Err(Error::Config(format!(
                "star {star:?} has {} planets, fewer than k = {k}",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % k].push(id.to_string());
        }
    }
    let all: Vec<String> = manifest.planets.iter().map(|p| p.planet_id.clone()).collect();
    Ok(folds
        .into_iter()
        .map(|mut val| {
            val.sort();
            let train: Vec<String> = all.iter().filter(|id| !val.contains(id)).cloned().collect();
            (train, val)
        })
        .collect())
}

/// Per-term GLL over an (error, sigma) grid with y = 0 and mu = error.
/// Rows follow the error grid, columns the sigma grid.
pub fn score_landscape(error_grid: &[f64], sigma_grid: &[f64]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((error_grid.len(), sigma_grid.len()));
    for (i, &e) in error_grid.iter().enumerate() {
        for (j, &s) in sigma_grid.iter().enumerate() {
            out[[i, j]] = gll(0.0, e, s)?;
        }
    }
    Ok(out)
}

/// CSV export: first column the error value, remaining columns one per sigma.
pub fn save_landscape_csv(
    path: &std::path::Path,
    error_grid: &[f64],
    sigma_grid: &[f64],
    grid: &Array2<f64>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["error".to_string()];
    header.extend(sigma_grid.iter().map(|s| format!("sigma_{s:e}")));
    writer.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for (i, &e) in error_grid.iter().enumerate() {
        let mut row = vec![format!("{e:e}")];
        row.extend(grid.row(i).iter().map(|v| format!("{v:.12e}")));
        writer.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
