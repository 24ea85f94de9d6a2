//! Dataset container formats: raw little-endian f64 arrays with JSON
//! sidecars, the dataset manifest, and the targets / predictions CSVs.
//!
//! Layout: `root/manifest.json`; per planet
//! `root/planets/<id>/{airs,fgs}.{bin,json}` plus optional
//! `{airs,fgs}.mask.bin`; optional `root/targets.csv`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Channel, DatasetManifest, PlanetEntry, SpectralCube, SpectrumPrediction, TargetSpectrum,
    N_WAVELENGTHS,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeSidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<Channel>,
}

impl CubeSidecar {
    fn validate(&self) -> Result<()> {
        if self.dtype != "f64" {
            return Err(Error::Format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.order != "row-major" {
            return Err(Error::Format(format!("unsupported order {:?}", self.order)));
        }
        Ok(())
    }
}

fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

fn mask_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("mask.bin")
}

/// Write an n-dimensional f64 array as raw little-endian bytes plus sidecar.
pub fn write_array(path: &Path, data: &ArrayD<f64>, channel: Option<Channel>) -> Result<()> {
    let sidecar = CubeSidecar {
        shape: data.shape().to_vec(),
        dtype: "f64".into(),
        order: "row-major".into(),
        channel,
    };
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&bytes)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"))?;
    Ok(())
}

/// Read an array written by [`write_array`]. Byte count must match the
/// sidecar shape exactly.
pub fn read_array(path: &Path) -> Result<(ArrayD<f64>, CubeSidecar)> {
    let sc_path = sidecar_path(path);
    if !sc_path.exists() {
        return Err(Error::Format(format!("missing sidecar {}", sc_path.display())));
    }
    let sidecar: CubeSidecar = serde_json::from_slice(&fs::read(&sc_path)?)
        .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", sc_path.display())))?;
    sidecar.validate()?;
    let n_elem: usize = sidecar.shape.iter().product();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != n_elem * 8 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for shape {:?}, found {}",
            path.display(),
            n_elem * 8,
            sidecar.shape,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let arr = ArrayD::from_shape_vec(IxDyn(&sidecar.shape), values)
        .map_err(|e| Error::Format(format!("shape error: {e}")))?;
    Ok((arr, sidecar))
}

fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn read_mask(path: &Path, h: usize, w: usize) -> Result<Array2<bool>> {
    let bytes = fs::read(path)?;
    if bytes.len() != h * w {
        return Err(Error::Format(format!(
            "{}: mask has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            h * w
        )));
    }
    Ok(Array2::from_shape_vec((h, w), bytes.iter().map(|&b| b != 0).collect())
        .expect("shape checked"))
}

/// Load a cube from `<path>.bin` + `<path>.json`; companion mask file is
/// optional (all-false when absent).
pub fn load_cube(path: &Path) -> Result<SpectralCube> {
    let (arr, sidecar) = read_array(path)?;
    if sidecar.shape.len() != 3 {
        return Err(Error::Format(format!("cube must be 3D, sidecar shape {:?}", sidecar.shape)));
    }
    let channel = sidecar
        .channel
        .ok_or_else(|| Error::Format("cube sidecar missing channel".into()))?;
    let data: Array3<f64> = arr
        .into_dimensionality()
        .map_err(|e| Error::Format(format!("dimensionality: {e}")))?;
    let (_, h, w) = data.dim();
    let mpath = mask_path(path);
    let mask = if mpath.exists() {
        read_mask(&mpath, h, w)?
    } else {
        Array2::from_elem((h, w), false)
    };
    SpectralCube::new(data, mask, channel, false)
}

/// Write a cube (data + sidecar + mask) such that [`load_cube`] inverts it
/// bit-exactly. The `calibrated` flag is not persisted; loaded cubes are raw.
pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    write_array(path, &cube.data.clone().into_dyn(), Some(cube.channel))?;
    write_mask(&mask_path(path), &cube.mask)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    planets: Vec<PlanetEntry>,
    wavelengths: usize,
}

pub fn save_manifest(manifest: &DatasetManifest) -> Result<()> {
    let file = ManifestFile {
        planets: manifest.planets.clone(),
        wavelengths: manifest.wavelengths,
    };
    fs::write(
        manifest.root.join("manifest.json"),
        serde_json::to_vec_pretty(&file).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Load and validate `root/manifest.json`. Planets come back sorted by
/// planet_id; every referenced file must exist.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let mpath = root.join("manifest.json");
    if !mpath.exists() {
        return Err(Error::Format(format!("no manifest at {}", mpath.display())));
    }
    let file: ManifestFile = serde_json::from_slice(&fs::read(&mpath)?)
        .map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
    let mut planets = file.planets;
    planets.sort_by(|a, b| a.planet_id.cmp(&b.planet_id));
    for pair in planets.windows(2) {
        if pair[0].planet_id == pair[1].planet_id {
            return Err(Error::Format(format!("duplicate planet_id {:?}", pair[0].planet_id)));
        }
    }
    for p in &planets {
        for rel in [&p.airs, &p.fgs] {
            let bin = root.join(rel);
            if !bin.exists() || !sidecar_path(&bin).exists() {
                return Err(Error::Format(format!(
                    "planet {:?}: dangling reference {}",
                    p.planet_id,
                    bin.display()
                )));
            }
        }
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        planets,
        wavelengths: file.wavelengths,
        has_targets: root.join("targets.csv").exists(),
    })
}

/// Targets CSV: header `planet_id,w000..w282`; star ids come from the
/// manifest. Rows returned in manifest order.
pub fn load_targets(manifest: &DatasetManifest) -> Result<Vec<TargetSpectrum>> {
    let path = manifest.root.join("targets.csv");
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut by_id = std::collections::BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("targets.csv: {e}")))?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::Format("targets.csv: empty row".into()))?
            .to_string();
        if record.len() != 1 + N_WAVELENGTHS {
            return Err(Error::Format(format!(
                "targets.csv: row {id} has {} columns, expected {}",
                record.len(),
                1 + N_WAVELENGTHS
            )));
        }
        let depth: Array1<f64> = record
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("targets.csv: {e}"))))
            .collect::<Result<Vec<f64>>>()?
            .into();
        by_id.insert(id, depth);
    }
    manifest
        .planets
        .iter()
        .map(|p| {
            let depth = by_id
                .remove(&p.planet_id)
                .ok_or_else(|| Error::Format(format!("targets.csv: missing planet {:?}", p.planet_id)))?;
            TargetSpectrum::new(depth, p.planet_id.clone(), p.star_id.clone())
        })
        .collect()
}

pub fn save_targets(path: &Path, targets: &[TargetSpectrum]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["planet_id".to_string()];
    header.extend((0..N_WAVELENGTHS).map(|i| format!("w{i:03}")));
    writer.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for t in targets {
        let mut row = vec![t.planet_id.clone()];
        row.extend(t.depth.iter().map(|v| format!("{v:.17e}")));
        writer.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Predictions CSV: header `planet_id,mu_000..mu_282,sigma_000..sigma_282`.
pub fn save_predictions(path: &Path, predictions: &[SpectrumPrediction]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut header = vec!["planet_id".to_string()];
    header.extend((0..N_WAVELENGTHS).map(|i| format!("mu_{i:03}")));
    header.extend((0..N_WAVELENGTHS).map(|i| format!("sigma_{i:03}")));
    writer.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
    for p in predictions {
        let mut row = vec![p.planet_id.clone()];
        row.extend(p.mu.iter().map(|v| format!("{v:.17e}")));
        row.extend(p.sigma.iter().map(|v| format!("{v:.17e}")));
        writer.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn load_predictions(path: &Path) -> Result<Vec<SpectrumPrediction>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format(format!("predictions: {e}")))?;
        if record.len() != 1 + 2 * N_WAVELENGTHS {
            return Err(Error::Format(format!(
                "predictions: row has {} columns, expected {}",
                record.len(),
                1 + 2 * N_WAVELENGTHS
            )));
        }
        let id = record.get(0).expect("checked").to_string();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("predictions: {e}")))
        };
        let mu: Array1<f64> = record
            .iter()
            .skip(1)
            .take(N_WAVELENGTHS)
            .map(parse)
            .collect::<Result<Vec<f64>>>()?
            .into();
        let sigma: Array1<f64> = record
            .iter()
            .skip(1 + N_WAVELENGTHS)
            .map(parse)
            .collect::<Result<Vec<f64>>>()?
            .into();
        out.push(SpectrumPrediction::new(mu, sigma, id)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn cube(t: usize, h: usize, w: usize, values: impl Fn(usize) -> f64) -> SpectralCube {
        let data = Array3::from_shape_fn((t, h, w), |(a, b, c)| values(a * h * w + b * w + c));
        SpectralCube::new(data, Array2::from_elem((h, w), false), Channel::Fgs, false).unwrap()
    }

    #[test]
    fn byte_count_mismatch_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_cube(&cube(4, 2, 3, |i| i as f64), &path).unwrap();
        // truncate by one element
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(_))));
    }

    #[test]
    fn missing_sidecar_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_cube(&cube(4, 2, 3, |i| i as f64), &path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(_))));
    }

    #[test]
    fn sidecar_shape_defines_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_cube(&cube(4, 2, 3, |i| i as f64), &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 4 * 2 * 3 * 8);
        let loaded = load_cube(&path).unwrap();
        assert_eq!(loaded.data.dim(), (4, 2, 3));
    }

    #[test]
    fn all_true_mask_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut c = cube(4, 2, 3, |i| i as f64);
        c.mask.fill(true);
        save_cube(&c, &path).unwrap();
        assert_eq!(load_cube(&path).unwrap().mask, c.mask);
    }

    #[test]
    fn duplicate_planet_id_rejected() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("planets/p0")).unwrap();
        let c = cube(4, 2, 3, |i| i as f64);
        save_cube(&c, &root.join("planets/p0/airs.bin")).unwrap();
        save_cube(&c, &root.join("planets/p0/fgs.bin")).unwrap();
        let entry = PlanetEntry {
            planet_id: "p0".into(),
            star_id: "s0".into(),
            airs: "planets/p0/airs.bin".into(),
            fgs: "planets/p0/fgs.bin".into(),
        };
        let manifest = DatasetManifest {
            root: root.to_path_buf(),
            planets: vec![entry.clone(), entry],
            wavelengths: N_WAVELENGTHS,
            has_targets: false,
        };
        save_manifest(&manifest).unwrap();
        assert!(matches!(load_manifest(root), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_sorts_and_validates() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        let c = cube(4, 2, 3, |i| i as f64);
        let mut planets = Vec::new();
        for id in ["p1", "p0"] {
            fs::create_dir_all(root.join(format!("planets/{id}"))).unwrap();
            save_cube(&c, &root.join(format!("planets/{id}/airs.bin"))).unwrap();
            save_cube(&c, &root.join(format!("planets/{id}/fgs.bin"))).unwrap();
            planets.push(PlanetEntry {
                planet_id: id.into(),
                star_id: "s0".into(),
                airs: format!("planets/{id}/airs.bin"),
                fgs: format!("planets/{id}/fgs.bin"),
            });
        }
        let manifest = DatasetManifest {
            root: root.to_path_buf(),
            planets,
            wavelengths: N_WAVELENGTHS,
            has_targets: false,
        };
        save_manifest(&manifest).unwrap();
        let loaded = load_manifest(root).unwrap();
        assert_eq!(loaded.planets.len(), 2);
        assert_eq!(loaded.planets[0].planet_id, "p0");
    }

    proptest! {
        #[test]
        fn cube_round_trip_is_bit_exact(
            t in 2usize..6,
            h in 1usize..4,
            w in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_fn((t, h, w), |_| rng.random_range(-1e6..1e6));
            let mask = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.1));
            let c = SpectralCube::new(data, mask, Channel::Fgs, false).unwrap();
            let dir = tempdir().unwrap();
            let path = dir.path().join("c.bin");
            save_cube(&c, &path).unwrap();
            let loaded = load_cube(&path).unwrap();
            prop_assert_eq!(loaded.data, c.data);
            prop_assert_eq!(loaded.mask, c.mask);
        }
    }
}
