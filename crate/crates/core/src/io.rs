//! Binary matrix files with a JSON header.
//!
//! Layout: the 8 bytes `PPCMAT01`, a little-endian `u64` header length, the
//! UTF-8 JSON header, then every matrix listed in `header.matrices` as
//! little-endian `f64` in column-major order. The header is
//! `{"kind": ..., "meta": {...}, "matrices": [{"name", "rows", "cols"}, ...]}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bnn::FunctionSampleSet;
use crate::error::{Error, Result};
use crate::gaussian::SymMatrix;
use crate::kernels::KernelSpec;
use crate::posterior::PredictiveSummary;
use crate::synth::{Split, SyntheticDataset};

pub const MAGIC: &[u8; 8] = b"PPCMAT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    matrices: Vec<MatrixEntry>,
}

/// Contents of a matrix file.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub matrices: BTreeMap<String, DMatrix<f64>>,
}

impl MatrixFile {
    fn take(&mut self, name: &str) -> Result<DMatrix<f64>> {
        self.matrices.remove(name).ok_or_else(|| Error::Format(format!("missing matrix {name:?}")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind} file, found {}", self.kind)));
        }
        Ok(())
    }

    fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta.get(key).and_then(|v| v.as_f64()).ok_or_else(|| Error::Format(format!("missing meta field {key:?}")))
    }
}

pub fn write_matrix_file(
    path: &Path,
    kind: &str,
    meta: serde_json::Value,
    matrices: &[(&str, &DMatrix<f64>)],
) -> Result<()> {
    let header = Header {
        kind: kind.to_string(),
        meta,
        matrices: matrices
            .iter()
            .map(|(n, m)| MatrixEntry { name: n.to_string(), rows: m.nrows(), cols: m.ncols() })
            .collect(),
    };
    let text = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(&text)?;
    for (_, m) in matrices {
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<MatrixFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a matrix file (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Format("header too large".into()))?;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let header: Header = serde_json::from_slice(&text)?;
    let mut matrices = BTreeMap::new();
    let mut buf = [0u8; 8];
    for e in header.matrices {
        let mut data = Vec::with_capacity(e.rows * e.cols);
        for _ in 0..e.rows * e.cols {
            r.read_exact(&mut buf).map_err(|_| Error::Format(format!("truncated matrix {:?}", e.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        if matrices.insert(e.name.clone(), DMatrix::from_vec(e.rows, e.cols, data)).is_some() {
            return Err(Error::Format(format!("duplicate matrix {:?}", e.name)));
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after last matrix".into()));
    }
    Ok(MatrixFile { kind: header.kind, meta: header.meta, matrices })
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn as_vector(m: DMatrix<f64>) -> Result<DVector<f64>> {
    if m.ncols() != 1 {
        return Err(Error::Format(format!("expected a column, found {} columns", m.ncols())));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

pub fn save_samples(path: &Path, s: &FunctionSampleSet, seed: u64) -> Result<()> {
    let meta = json!({ "m": s.n_samples(), "n": s.n_locations(), "noise_variance": s.noise_variance(), "seed": seed });
    let alea = s.aleatoric_variances().map(column);
    let mut mats = vec![("samples", s.samples()), ("locations", s.locations())];
    if let Some(a) = &alea {
        mats.push(("aleatoric", a));
    }
    write_matrix_file(path, "function_samples", meta, &mats)
}

/// Sample set and the seed recorded with it.
pub fn load_samples(path: &Path) -> Result<(FunctionSampleSet, u64)> {
    let mut f = read_matrix_file(path)?;
    f.expect_kind("function_samples")?;
    let noise = f.meta_f64("noise_variance")?;
    let seed = f.meta.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format("missing seed".into()))?;
    let alea = f.matrices.remove("aleatoric").map(as_vector).transpose()?;
    let set = FunctionSampleSet::new(f.take("samples")?, f.take("locations")?, noise, alea)?;
    Ok((set, seed))
}

pub fn save_summary(path: &Path, s: &PredictiveSummary) -> Result<()> {
    write_matrix_file(
        path,
        "predictive_summary",
        json!({ "n": s.dim(), "noise_variance": s.noise_variance() }),
        &[
            ("locations", s.locations()),
            ("mean", &column(s.mean())),
            ("cov", s.cov().as_matrix()),
            ("corr", s.corr().as_matrix()),
        ],
    )
}

pub fn load_summary(path: &Path) -> Result<PredictiveSummary> {
    let mut f = read_matrix_file(path)?;
    f.expect_kind("predictive_summary")?;
    let noise = f.meta_f64("noise_variance")?;
    PredictiveSummary::from_parts(
        f.take("locations")?,
        as_vector(f.take("mean")?)?,
        SymMatrix::new(f.take("cov")?)?,
        SymMatrix::new(f.take("corr")?)?,
        noise,
    )
}

pub fn save_dataset(path: &Path, ds: &SyntheticDataset) -> Result<()> {
    let meta = json!({ "d": ds.d, "kernel": ds.kernel, "noise_variance": ds.noise_variance, "seed": ds.seed });
    let parts: Vec<(String, DMatrix<f64>)> = [("train", &ds.train), ("test", &ds.test), ("pool", &ds.pool)]
        .iter()
        .flat_map(|(name, s)| {
            [
                (format!("{name}.x"), s.x.clone()),
                (format!("{name}.f"), column(&s.f)),
                (format!("{name}.noise"), column(&s.noise)),
                (format!("{name}.y"), column(&s.y)),
            ]
        })
        .collect();
    let refs: Vec<(&str, &DMatrix<f64>)> = parts.iter().map(|(n, m)| (n.as_str(), m)).collect();
    write_matrix_file(path, "synthetic_dataset", meta, &refs)
}

pub fn load_dataset(path: &Path) -> Result<SyntheticDataset> {
    let mut f = read_matrix_file(path)?;
    f.expect_kind("synthetic_dataset")?;
    let kernel: KernelSpec = serde_json::from_value(f.meta.get("kernel").cloned().unwrap_or_default())?;
    let noise_variance = f.meta_f64("noise_variance")?;
    let d = f.meta.get("d").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format("missing d".into()))? as usize;
    let seed = f.meta.get("seed").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format("missing seed".into()))?;
    let mut split = |name: &str| -> Result<Split> {
        Ok(Split {
            x: f.take(&format!("{name}.x"))?,
            f: as_vector(f.take(&format!("{name}.f"))?)?,
            noise: as_vector(f.take(&format!("{name}.noise"))?)?,
            y: as_vector(f.take(&format!("{name}.y"))?)?,
        })
    };
    let (train, test, pool) = (split("train")?, split("test")?, split("pool")?);
    Ok(SyntheticDataset { d, train, test, pool, kernel, noise_variance, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::summary_from_samples;
    use crate::rng::seeded_rng;
    use crate::synth::{oracle_summary, synth_generate};
    use rand::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ppc-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_set(aleatoric: bool) -> FunctionSampleSet {
        let mut rng = seeded_rng(3);
        let s = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = DMatrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 * 0.1);
        let a = aleatoric.then(|| DVector::from_element(4, 0.2));
        FunctionSampleSet::new(s, x, 0.05, a).unwrap()
    }

    #[test]
    fn samples_round_trip_bit_exact() {
        for alea in [false, true] {
            let p = tmp(&format!("samples-{alea}.bin"));
            let s = sample_set(alea);
            save_samples(&p, &s, 42).unwrap();
            let (back, seed) = load_samples(&p).unwrap();
            assert_eq!(seed, 42);
            assert_eq!(back, s);
        }
    }

    #[test]
    fn summary_round_trip_keeps_repaired_correlation() {
        let p = tmp("summary.bin");
        let s = summary_from_samples(&sample_set(false)).unwrap();
        save_summary(&p, &s).unwrap();
        assert_eq!(load_summary(&p).unwrap(), s);
        let ds = synth_generate(2, 1).unwrap();
        let o = oracle_summary(&ds, &ds.test.x.rows(0, 10).into_owned()).unwrap();
        save_summary(&p, &o).unwrap();
        assert_eq!(load_summary(&p).unwrap(), o);
    }

    #[test]
    fn dataset_round_trip() {
        let p = tmp("dataset.bin");
        let ds = synth_generate(3, 7).unwrap();
        save_dataset(&p, &ds).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = tmp("bad.bin");
        std::fs::write(&p, b"NOTMAGIC\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_matrix_file(&p), Err(Error::Format(_))));

        save_samples(&p, &sample_set(false), 0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_matrix_file(&p), Err(Error::Format(_))));

        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&p, &extra).unwrap();
        assert!(matches!(read_matrix_file(&p), Err(Error::Format(_))));

        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_summary(&p), Err(Error::Format(_))));
    }
}
