//! Tabular feature extraction from segmented light curves, and standard
//! scaling of features and targets.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::detrend::{transit_depth, TransitSegmentation};
use crate::error::{Error, Result};
use crate::types::LightCurveSet;

/// Which feature kinds to extract per signal. Transition-zone statistics
/// and polynomial fits follow the transition zones; depth is one scalar
/// per signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub stats: bool,
    pub poly3: bool,
    pub poly4: bool,
    pub depth: bool,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self { stats: true, poly3: true, poly4: true, depth: true }
    }
}

impl FeatureSchema {
    /// Features produced per signal under this schema.
    pub fn per_signal(&self) -> usize {
        let mut n = 0;
        if self.stats {
            n += 4 * 2;
        }
        if self.poly3 {
            n += 4 * 2;
        }
        if self.poly4 {
            n += 5 * 2;
        }
        if self.depth {
            n += 1;
        }
        n
    }
}

/// planets x named features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub names: Vec<String>,
    pub planet_ids: Vec<String>,
}

impl FeatureMatrix {
    pub fn from_rows(names: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n_features = names.len();
        let mut values = Array2::zeros((rows.len(), n_features));
        let mut planet_ids = Vec::with_capacity(rows.len());
        for (i, (id, row)) in rows.into_iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::Feature(format!(
                    "planet {id}: {} features, expected {n_features}",
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Feature(format!("planet {id}: non-finite feature")));
            }
            for (j, v) in row.into_iter().enumerate() {
                values[[i, j]] = v;
            }
            planet_ids.push(id);
        }
        Ok(Self { values, names, planet_ids })
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec!["planet_id".to_string()];
        header.extend(self.names.iter().cloned());
        writer.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for (i, id) in self.planet_ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.values.row(i).iter().map(|v| format!("{v:.17e}")));
            writer.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Format(e.to_string()))?
            .iter()
            .skip(1)
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Format(e.to_string()))?;
            let id = record.get(0).unwrap_or_default().to_string();
            let row = record
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            rows.push((id, row));
        }
        Self::from_rows(names, rows)
    }
}

/// Least-squares polynomial fit of y against x via normal equations;
/// returns coefficients c0..c_degree.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < degree + 2 {
        return Err(Error::Feature(format!(
            "{n} samples too few for a degree-{degree} fit"
        )));
    }
    let m = degree + 1;
    // normal equations: (V^T V) c = V^T y with Vandermonde V
    let mut ata = vec![vec![0.0; m]; m];
    let mut aty = vec![0.0; m];
    for (xi, yi) in x.iter().zip(y.iter()) {
        let mut powers = vec![1.0; m];
        for k in 1..m {
            powers[k] = powers[k - 1] * xi;
        }
        for i in 0..m {
            aty[i] += powers[i] * yi;
            for j in 0..m {
                ata[i][j] += powers[i] * powers[j];
            }
        }
    }
    solve_dense(&mut ata, &mut aty)?;
    Ok(aty)
}

/// In-place Gaussian elimination with partial pivoting; solution left in `b`.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite"))
            .expect("non-empty");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Feature("singular system in polynomial fit".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * b[k];
        }
        b[col] = acc / a[col][col];
    }
    Ok(())
}

fn zone_values(flux: &Array1<f64>, zone: std::ops::Range<usize>) -> Vec<f64> {
    zone.map(|i| flux[i]).collect()
}

/// Zone-local time rescaled to [0, 1]; keeps polynomial coefficients
/// comparable across planets with different curve lengths.
fn zone_time(len: usize) -> Vec<f64> {
    (0..len).map(|i| i as f64 / (len - 1) as f64).collect()
}

/// Extract the schema's features for every signal of one planet, in the
/// fixed (signal, zone, kind, coefficient) order. All signals share one
/// segmentation, computed upstream on the airs_mean curve.
pub fn extract_features(
    curves: &LightCurveSet,
    seg: &TransitSegmentation,
    schema: &FeatureSchema,
) -> Result<(Vec<String>, Vec<f64>)> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for curve in curves.iter() {
        if curve.len() != seg.len {
            return Err(Error::Feature(format!(
                "signal {:?} length {} does not match segmentation length {}",
                curve.label,
                curve.len(),
                seg.len
            )));
        }
        for (zone_name, zone) in [("ingress", seg.ingress()), ("egress", seg.egress())] {
            let y = zone_values(&curve.flux, zone);
            if schema.stats {
                let n = y.len() as f64;
                let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mean = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                for (kind, v) in [("min", min), ("max", max), ("mean", mean), ("std", var.sqrt())] {
                    names.push(format!("{}_{zone_name}_{kind}", curve.label));
                    values.push(v);
                }
            }
            if schema.poly3 || schema.poly4 {
                let x = zone_time(y.len());
                if schema.poly3 {
                    let coeffs = polyfit(&x, &y, 3)?;
                    for (k, c) in coeffs.into_iter().enumerate() {
                        names.push(format!("{}_{zone_name}_p3_c{k}", curve.label));
                        values.push(c);
                    }
                }
                if schema.poly4 {
                    let coeffs = polyfit(&x, &y, 4)?;
                    for (k, c) in coeffs.into_iter().enumerate() {
                        names.push(format!("{}_{zone_name}_p4_c{k}", curve.label));
                        values.push(c);
                    }
                }
            }
        }
        if schema.depth {
            names.push(format!("{}_depth", curve.label));
            values.push(transit_depth(curve, seg)?);
        }
    }
    Ok((names, values))
}

/// Per-column standardization: z = (x - mean) / std, population divisor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub names: Vec<String>,
}

/// Fit a scaler on the columns of `matrix`. Near-constant columns get their
/// std guarded to 1 so transforms output zeros instead of blowing up.
pub fn fit_scaler(matrix: &Array2<f64>, names: Vec<String>) -> Result<StandardScaler> {
    let (n, d) = matrix.dim();
    if n < 2 {
        return Err(Error::Feature(format!("scaler needs >= 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for j in 0..d {
        let col = matrix.column(j);
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        mean[j] = m;
        let s = var.sqrt();
        if s < 1e-12 {
            log::warn!("column {j} is constant; std guarded to 1");
            std[j] = 1.0;
        } else {
            std[j] = s;
        }
    }
    Ok(StandardScaler { mean, std, names })
}

impl StandardScaler {
    pub fn transform(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, d) = matrix.dim();
        if d != self.mean.len() {
            return Err(Error::Feature(format!(
                "column count {d} does not match fitted scaler ({})",
                self.mean.len()
            )));
        }
        let mut out = matrix.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, d) = matrix.dim();
        if d != self.mean.len() {
            return Err(Error::Feature("column count mismatch".into()));
        }
        let mut out = matrix.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        Ok(out)
    }

    /// Map standardized predictions back to original units. Sigma is
    /// scale-equivariant: it picks up the std factor but not the mean shift.
    pub fn inverse_transform_mu_sigma(
        &self,
        mu_z: &Array1<f64>,
        sigma_z: &Array1<f64>,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        if mu_z.len() != self.mean.len() || sigma_z.len() != self.mean.len() {
            return Err(Error::Feature("length mismatch in inverse transform".into()));
        }
        let mu = Array1::from_shape_fn(mu_z.len(), |j| mu_z[j] * self.std[j] + self.mean[j]);
        let sigma = Array1::from_shape_fn(sigma_z.len(), |j| sigma_z[j] * self.std[j]);
        Ok((mu, sigma))
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("scaler serializes"))?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detrend::trapezoid;
    use crate::types::LightCurve;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve_set(t: usize, n_bins: usize, depth: f64) -> LightCurveSet {
        let flux = trapezoid(t, 60.0, 130.0, 8.0, depth);
        let mk = |label: &str| LightCurve::new(flux.clone(), label).unwrap();
        LightCurveSet {
            fgs: mk("fgs"),
            airs_mean: mk("airs_mean"),
            airs_bins: (0..n_bins).map(|i| mk(&format!("airs_bin_{i:02}"))).collect(),
        }
    }

    #[test]
    fn feature_count_at_ten_bins() {
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let curves = curve_set(187, 10, 0.01);
        let (names, values) = extract_features(&curves, &seg, &FeatureSchema::default()).unwrap();
        assert_eq!(names.len(), 12 * 27);
        assert_eq!(values.len(), 324);
        // names unique
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn constant_zone_statistics() {
        // flat curve: every zone is constant 1.0
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let flux = Array1::from_elem(187, 1.0);
        let mk = |label: &str| LightCurve::new(flux.clone(), label).unwrap();
        let curves = LightCurveSet { fgs: mk("fgs"), airs_mean: mk("airs_mean"), airs_bins: vec![] };
        let (names, values) = extract_features(&curves, &seg, &FeatureSchema::default()).unwrap();
        let get = |name: &str| values[names.iter().position(|n| n == name).unwrap()];
        assert_eq!(get("fgs_ingress_min"), 1.0);
        assert_eq!(get("fgs_ingress_max"), 1.0);
        assert_eq!(get("fgs_ingress_mean"), 1.0);
        assert_eq!(get("fgs_ingress_std"), 0.0);
        assert!((get("fgs_ingress_p3_c0") - 1.0).abs() < 1e-9);
        for k in 1..4 {
            assert!(get(&format!("fgs_ingress_p3_c{k}")).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_cubic_recovered_by_poly3() {
        let truth = [0.4, -1.2, 2.5, 0.7];
        let x: Vec<f64> = zone_time(12);
        let y: Vec<f64> = x
            .iter()
            .map(|&t| truth[0] + truth[1] * t + truth[2] * t * t + truth[3] * t * t * t)
            .collect();
        let coeffs = polyfit(&x, &y, 3).unwrap();
        for (got, want) in coeffs.iter().zip(truth.iter()) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        // independent oracle: degree-4 fit of the same cubic has c4 ~ 0
        let coeffs4 = polyfit(&x, &y, 4).unwrap();
        assert!(coeffs4[4].abs() < 1e-7);
    }

    #[test]
    fn degenerate_zone_is_feature_error() {
        let x = [0.0, 0.5, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(polyfit(&x, &y, 3), Err(Error::Feature(_))));
    }

    #[test]
    fn scaler_two_point_column() {
        let m = array![[1.0], [3.0]];
        let scaler = fit_scaler(&m, vec!["a".into()]).unwrap();
        assert_eq!(scaler.mean[0], 2.0);
        assert_eq!(scaler.std[0], 1.0);
    }

    #[test]
    fn constant_column_guarded() {
        let m = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]];
        let scaler = fit_scaler(&m, vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(scaler.std[0], 1.0);
        let z = scaler.transform(&m).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transform_self_check_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let m = Array2::from_shape_fn((40, 6), |_| rng.random_range(-5.0..5.0));
        let names = (0..6).map(|i| format!("f{i}")).collect();
        let scaler = fit_scaler(&m, names).unwrap();
        let z = scaler.transform(&m).unwrap();
        for j in 0..6 {
            let col = z.column(j);
            let mean = col.sum() / 40.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12);
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
        let back = scaler.inverse_transform(&z).unwrap();
        for (a, b) in back.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_inverse_is_scale_only() {
        let scaler = StandardScaler {
            mean: vec![10.0, -3.0],
            std: vec![2.0, 0.5],
            names: vec!["a".into(), "b".into()],
        };
        let mu_z = array![1.0, 2.0];
        let sigma_z = array![0.0, 4.0];
        let (mu, sigma) = scaler.inverse_transform_mu_sigma(&mu_z, &sigma_z).unwrap();
        assert_eq!(mu, array![12.0, -2.0]);
        assert_eq!(sigma, array![0.0, 2.0]);
    }

    #[test]
    fn scaler_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scaler = StandardScaler {
            mean: vec![1.0, 2.0],
            std: vec![3.0, 4.0],
            names: vec!["a".into(), "b".into()],
        };
        let path = dir.path().join("scaler.json");
        scaler.save_json(&path).unwrap();
        assert_eq!(StandardScaler::load_json(&path).unwrap(), scaler);
    }

    #[test]
    fn feature_matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec![
                ("p0".into(), vec![1.5, -2.25]),
                ("p1".into(), vec![0.125, 3.0]),
            ],
        )
        .unwrap();
        let path = dir.path().join("features.csv");
        m.save_csv(&path).unwrap();
        let loaded = FeatureMatrix::load_csv(&path).unwrap();
        assert_eq!(loaded.names, m.names);
        assert_eq!(loaded.planet_ids, m.planet_ids);
        for (a, b) in loaded.values.iter().zip(m.values.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn extraction_independent_of_processing_order() {
        let seg = TransitSegmentation::new(60, 130, 6, 187).unwrap();
        let curves = curve_set(187, 4, 0.015);
        let (_, a) = extract_features(&curves, &seg, &FeatureSchema::default()).unwrap();
        let (_, b) = extract_features(&curves, &seg, &FeatureSchema::default()).unwrap();
        assert_eq!(a, b);
    }
}
