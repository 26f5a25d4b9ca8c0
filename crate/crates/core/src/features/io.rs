//! Ensemble containers.
//!
//! `.ens.json` holds one object:
//!
//! ```text
//! { "format": "tdmf-ensemble", "version": 1, "n": N, "horizon": T,
//!   "representation": "dense" | "decoupled" | "sampled",
//!   "mean":    [(T+1)·N]      row t at offset t·N,
//!   "blocks":  [(T+1)²·N²]    dense: Σ(x,y)[i,j] at ((x(T+1)+y)N + i)N + j,
//!   "kernels": [N·(T+1)²]     decoupled: c_k(x,y) at k(T+1)² + x(T+1) + y,
//!   "table_rows": S, "table": [S·N] sampled: ψ(s)_k at sN + k,
//!   "n_paths": n, "paths": [(T+1)·n] sampled: state of path i at time t at tn + i }
//! ```
//!
//! `.ens.bin` is the magic `TDMFENS1`, a little-endian `u32` header length,
//! the same JSON object with every array left empty, then the arrays in the
//! order mean, blocks|kernels|table as little-endian `f64`, then paths as
//! little-endian `u32`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{FeatureEnsemble, SampledMoments, SecondMoment};
use crate::error::{Error, Result};

const FORMAT: &str = "tdmf-ensemble";
const MAGIC: &[u8; 8] = b"TDMFENS1";

#[derive(Serialize, Deserialize, Default)]
struct EnsembleFile {
    format: String,
    version: u32,
    n: usize,
    horizon: usize,
    representation: String,
    #[serde(default)]
    mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    blocks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    kernels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    table: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    paths: Vec<u32>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn to_file(e: &FeatureEnsemble) -> EnsembleFile {
    let (n, times) = (e.dim(), e.times());
    let mut f = EnsembleFile {
        format: FORMAT.into(),
        version: 1,
        n,
        horizon: e.horizon(),
        representation: e.representation().into(),
        mean: (0..times * n).map(|a| e.mean()[(a / n, a % n)]).collect(),
        ..Default::default()
    };
    match e.second() {
        SecondMoment::Dense(blocks) => {
            f.blocks = blocks.iter().flat_map(|b| (0..n * n).map(move |a| b[(a / n, a % n)])).collect();
        }
        SecondMoment::Decoupled(c) => {
            f.kernels = (0..n).flat_map(|k| (0..times * times).map(move |r| c[(r, k)])).collect();
        }
        SecondMoment::Sampled(s) => {
            let t = s.table();
            f.table_rows = Some(t.nrows());
            f.table = (0..t.nrows() * n).map(|a| t[(a / n, a % n)]).collect();
            f.n_paths = Some(s.n_paths());
            f.paths = s.paths().to_vec();
        }
    }
    f
}

fn from_file(f: EnsembleFile) -> Result<FeatureEnsemble> {
    if f.format != FORMAT || f.version != 1 {
        return Err(fmt_err(format!("unsupported container {} v{}", f.format, f.version)));
    }
    let (n, times) = (f.n, f.horizon + 1);
    let need = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(fmt_err(format!("{what}: {got} values, expected {want}")))
        }
    };
    need("mean", f.mean.len(), times * n)?;
    let mean = Mat::from_fn(times, n, |t, k| f.mean[t * n + k]);
    match f.representation.as_str() {
        "dense" => {
            need("blocks", f.blocks.len(), times * times * n * n)?;
            let blocks = (0..times * times).map(|r| Mat::from_fn(n, n, |i, j| f.blocks[(r * n + i) * n + j])).collect();
            FeatureEnsemble::dense(mean, blocks)
        }
        "decoupled" => {
            need("kernels", f.kernels.len(), n * times * times)?;
            let tt = times * times;
            FeatureEnsemble::decoupled(mean, Mat::from_fn(tt, n, |r, k| f.kernels[k * tt + r]))
        }
        "sampled" => {
            let rows = f.table_rows.ok_or_else(|| fmt_err("sampled ensemble without table_rows"))?;
            let n_paths = f.n_paths.ok_or_else(|| fmt_err("sampled ensemble without n_paths"))?;
            need("table", f.table.len(), rows * n)?;
            need("paths", f.paths.len(), times * n_paths)?;
            let table = Arc::new(Mat::from_fn(rows, n, |s, k| f.table[s * n + k]));
            FeatureEnsemble::sampled(SampledMoments::new(table, f.paths, n_paths)?)
        }
        other => Err(fmt_err(format!("unknown representation {other:?}"))),
    }
}

/// Writes `.ens.json` or `.ens.bin` depending on the extension.
pub fn save_ensemble(e: &FeatureEnsemble, path: &Path) -> Result<()> {
    let f = to_file(e);
    let bytes = if is_binary(path) {
        let header = EnsembleFile {
            format: f.format.clone(),
            version: f.version,
            n: f.n,
            horizon: f.horizon,
            representation: f.representation.clone(),
            table_rows: f.table_rows,
            n_paths: f.n_paths,
            ..Default::default()
        };
        let json = serde_json::to_vec(&header).map_err(|x| fmt_err(x.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in f.mean.iter().chain(&f.blocks).chain(&f.kernels).chain(&f.table) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &f.paths {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    } else {
        serde_json::to_vec(&f).map_err(|x| fmt_err(x.to_string()))?
    };
    let tmp = path.with_extension("tmp");
    fs::File::create(&tmp)?.write_all(&bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<FeatureEnsemble> {
    let bytes = fs::read(path)?;
    if !is_binary(path) {
        let f: EnsembleFile = serde_json::from_slice(&bytes).map_err(|x| fmt_err(x.to_string()))?;
        return from_file(f);
    }
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(fmt_err("missing ensemble magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| fmt_err("truncated header"))?;
    let mut f: EnsembleFile = serde_json::from_slice(body).map_err(|x| fmt_err(x.to_string()))?;
    let mut rest = &bytes[12 + hlen..];
    let mut take_f64 = |count: usize| -> Result<Vec<f64>> {
        if rest.len() < count * 8 {
            return Err(fmt_err("truncated payload"));
        }
        let (head, tail) = rest.split_at(count * 8);
        rest = tail;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let (n, times) = (f.n, f.horizon + 1);
    f.mean = take_f64(times * n)?;
    match f.representation.as_str() {
        "dense" => f.blocks = take_f64(times * times * n * n)?,
        "decoupled" => f.kernels = take_f64(n * times * times)?,
        "sampled" => f.table = take_f64(f.table_rows.unwrap_or(0) * n)?,
        _ => {}
    }
    if let Some(np) = f.n_paths {
        let count = np * times;
        if rest.len() != count * 4 {
            return Err(fmt_err("path payload has the wrong length"));
        }
        f.paths = rest.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    }
    from_file(f)
}

fn is_binary(path: &Path) -> bool {
    path.to_string_lossy().ends_with(".bin")
}
