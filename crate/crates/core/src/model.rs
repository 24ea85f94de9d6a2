//! Multi-output polynomial-kernel ridge regression with bootstrap-aggregated
//! heteroskedastic uncertainty.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, StandardScaler};
use crate::io;
use crate::types::{SpectrumPrediction, TargetSpectrum, N_WAVELENGTHS, SIGMA_FLOOR};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RidgeConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
    pub n_models: usize,
    pub sample_fraction: f64,
    pub base_seed: u64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            gamma: 1e-4,
            degree: 3,
            coef0: 1.0,
            n_models: 50,
            sample_fraction: 0.8,
            base_seed: 0,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.degree < 1 {
            return Err(Error::Config("kernel degree must be >= 1".into()));
        }
        if self.n_models < 2 {
            return Err(Error::Config(format!("n_models must be >= 2, got {}", self.n_models)));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "sample_fraction must be in (0, 1], got {}",
                self.sample_fraction
            )));
        }
        Ok(())
    }
}

/// Polynomial kernel matrix: K[i, j] = (gamma * <x_i, z_j> + coef0)^degree.
pub fn kernel(x: &Array2<f64>, z: &Array2<f64>, config: &RidgeConfig) -> Result<Array2<f64>> {
    let (n, d) = x.dim();
    let (m, dz) = z.dim();
    if d != dz {
        return Err(Error::Model(format!("kernel dimension mismatch: {d} vs {dz}")));
    }
    let gram = x.dot(&z.t());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            out[[i, j]] = (config.gamma * gram[[i, j]] + config.coef0).powi(config.degree as i32);
        }
    }
    Ok(out)
}

/// One bagged member: the rows it was trained on and its dual coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberModel {
    pub train_x: Array2<f64>,
    /// n_train x n_outputs, solving (K + alpha I) dual = Y.
    pub dual: Array2<f64>,
}

impl MemberModel {
    pub fn predict(&self, x_new: &Array2<f64>, config: &RidgeConfig) -> Result<Array2<f64>> {
        Ok(kernel(x_new, &self.train_x, config)?.dot(&self.dual))
    }
}

/// Cholesky factorization, lower triangle in place. Fails only for
/// non-SPD input, which for K + alpha I signals non-finite data.
fn cholesky_solve(mut a: Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.dim().0;
    for j in 0..n {
        for k in 0..j {
            let ajk = a[[j, k]];
            for i in j..n {
                a[[i, j]] -= a[[i, k]] * ajk;
            }
        }
        let diag = a[[j, j]];
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Model(format!(
                "Cholesky failed at column {j} (pivot {diag}); input is not SPD"
            )));
        }
        let root = diag.sqrt();
        for i in j..n {
            a[[i, j]] /= root;
        }
    }
    // forward then backward substitution per right-hand side
    let mut x = b.clone();
    let n_rhs = x.dim().1;
    for col in 0..n_rhs {
        for i in 0..n {
            let mut acc = x[[i, col]];
            for k in 0..i {
                acc -= a[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = acc / a[[i, i]];
        }
        for i in (0..n).rev() {
            let mut acc = x[[i, col]];
            for k in i + 1..n {
                acc -= a[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = acc / a[[i, i]];
        }
    }
    Ok(x)
}

/// Solve (K(X, X) + alpha I) A = Y in one factorization for all outputs.
pub fn fit_member(x: &Array2<f64>, y: &Array2<f64>, config: &RidgeConfig) -> Result<MemberModel> {
    let (n, _) = x.dim();
    if n < 1 || y.dim().0 != n {
        return Err(Error::Model(format!(
            "training shapes mismatch: X has {n} rows, Y has {}",
            y.dim().0
        )));
    }
    if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Model("non-finite training data".into()));
    }
    let mut k = kernel(x, x, config)?;
    for i in 0..n {
        k[[i, i]] += config.alpha;
    }
    let dual = cholesky_solve(k, y)?;
    Ok(MemberModel { train_x: x.clone(), dual })
}

/// Bagged kernel ridge ensemble plus the scalers that define its input and
/// output spaces.
#[derive(Debug, Clone)]
pub struct BaggedModel {
    pub config: RidgeConfig,
    pub feature_names: Vec<String>,
    pub feature_scaler: StandardScaler,
    pub target_scaler: Option<StandardScaler>,
    pub members: Vec<MemberModel>,
}

/// Bootstrap-sample row indices for member `i`: a fresh RNG seeded with
/// base_seed + i, drawing round(p * n) rows with replacement. Results do
/// not depend on execution order.
fn bootstrap_indices(n: usize, config: &RidgeConfig, member: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed.wrapping_add(member as u64));
    let n_draws = (config.sample_fraction * n as f64).round() as usize;
    (0..n_draws).map(|_| rng.random_range(0..n)).collect()
}

/// Fit the bagged ensemble on already-standardized inputs.
pub fn fit_bagged_raw(x: &Array2<f64>, y: &Array2<f64>, config: &RidgeConfig) -> Result<Vec<MemberModel>> {
    config.validate()?;
    let n = x.dim().0;
    if n < 5 {
        return Err(Error::Model(format!("bagging needs >= 5 training rows, got {n}")));
    }
    (0..config.n_models)
        .into_par_iter()
        .map(|i| {
            let idx = bootstrap_indices(n, config, i);
            let xs = x.select(Axis(0), &idx);
            let ys = y.select(Axis(0), &idx);
            fit_member(&xs, &ys, config)
        })
        .collect()
}

/// Fit scalers and the ensemble from a feature matrix and target spectra.
/// Features are always standardized; targets optionally.
pub fn fit_bagged(
    features: &FeatureMatrix,
    targets: &[TargetSpectrum],
    config: &RidgeConfig,
    scale_targets: bool,
) -> Result<BaggedModel> {
    if features.planet_ids.len() != targets.len() {
        return Err(Error::Model(format!(
            "{} feature rows vs {} targets",
            features.planet_ids.len(),
            targets.len()
        )));
    }
    for (id, t) in features.planet_ids.iter().zip(targets.iter()) {
        if id != &t.planet_id {
            return Err(Error::Model(format!(
                "feature/target order mismatch: {id} vs {}",
                t.planet_id
            )));
        }
    }
    let feature_scaler = crate::features::fit_scaler(&features.values, features.names.clone())?;
    let xz = feature_scaler.transform(&features.values)?;

    let mut y = Array2::zeros((targets.len(), N_WAVELENGTHS));
    for (i, t) in targets.iter().enumerate() {
        y.row_mut(i).assign(&t.depth);
    }
    let target_names = (0..N_WAVELENGTHS).map(|i| format!("w{i:03}")).collect();
    let (target_scaler, yz) = if scale_targets {
        let scaler = crate::features::fit_scaler(&y, target_names)?;
        let yz = scaler.transform(&y)?;
        (Some(scaler), yz)
    } else {
        (None, y)
    };

    let members = fit_bagged_raw(&xz, &yz, config)?;
    Ok(BaggedModel {
        config: config.clone(),
        feature_names: features.names.clone(),
        feature_scaler,
        target_scaler,
        members,
    })
}

/// Mean and sample standard deviation (divisor n-1) across member
/// predictions, per entry.
pub fn aggregate_members(preds: &[Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let n = preds.len();
    let dim = preds[0].dim();
    let mut mu = Array2::zeros(dim);
    for p in preds {
        mu += p;
    }
    mu /= n as f64;
    let mut sigma = Array2::zeros(dim);
    if n > 1 {
        for p in preds {
            sigma += &(p - &mu).mapv(|v| v * v);
        }
        sigma /= (n - 1) as f64;
        sigma.mapv_inplace(f64::sqrt);
    }
    (mu, sigma)
}

/// Predict spectra with bagged uncertainty; output in original target units
/// with sigma floored.
pub fn predict(model: &BaggedModel, features: &FeatureMatrix) -> Result<Vec<SpectrumPrediction>> {
    if features.names != model.feature_names {
        return Err(Error::Model("feature names do not match the training contract".into()));
    }
    let xz = model.feature_scaler.transform(&features.values)?;
    let member_preds: Vec<Array2<f64>> = model
        .members
        .par_iter()
        .map(|m| m.predict(&xz, &model.config))
        .collect::<Result<_>>()?;
    let (mu_z, sigma_z) = aggregate_members(&member_preds);

    let mut out = Vec::with_capacity(features.planet_ids.len());
    for (i, id) in features.planet_ids.iter().enumerate() {
        let mu_row = mu_z.row(i).to_owned();
        let sigma_row = sigma_z.row(i).to_owned();
        let (mu, sigma) = match &model.target_scaler {
            Some(scaler) => scaler.inverse_transform_mu_sigma(&mu_row, &sigma_row)?,
            None => (mu_row, sigma_row),
        };
        let sigma = sigma.mapv(|s| s.max(SIGMA_FLOOR));
        out.push(SpectrumPrediction::new(mu, sigma, id.clone())?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: RidgeConfig,
    feature_names: Vec<String>,
    feature_scaler: StandardScaler,
    target_scaler: Option<StandardScaler>,
    n_members: usize,
}

impl BaggedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ModelMeta {
            config: self.config.clone(),
            feature_names: self.feature_names.clone(),
            feature_scaler: self.feature_scaler.clone(),
            target_scaler: self.target_scaler.clone(),
            n_members: self.members.len(),
        };
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&meta).expect("json"))?;
        for (i, m) in self.members.iter().enumerate() {
            io::write_array(&dir.join(format!("member_{i:03}_x.bin")), &m.train_x.clone().into_dyn(), None)?;
            io::write_array(&dir.join(format!("member_{i:03}_a.bin")), &m.dual.clone().into_dyn(), None)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)
            .map_err(|e| Error::Format(format!("model config.json: {e}")))?;
        let mut members = Vec::with_capacity(meta.n_members);
        for i in 0..meta.n_members {
            let (x, _) = io::read_array(&dir.join(format!("member_{i:03}_x.bin")))?;
            let (a, _) = io::read_array(&dir.join(format!("member_{i:03}_a.bin")))?;
            members.push(MemberModel {
                train_x: x.into_dimensionality().map_err(|e| Error::Format(e.to_string()))?,
                dual: a.into_dimensionality().map_err(|e| Error::Format(e.to_string()))?,
            });
        }
        Ok(Self {
            config: meta.config,
            feature_names: meta.feature_names,
            feature_scaler: meta.feature_scaler,
            target_scaler: meta.target_scaler,
            members,
        })
    }
}
