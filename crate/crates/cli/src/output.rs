//! Artifact writers. Every file is written to a temporary sibling and renamed
//! into place.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use tdmf_core::simulator::LearningCurve;

use crate::error::CliError;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `variant,seed,iteration,value_error,eta`, one row per seed and iteration;
/// the seed is empty for deterministic variants.
pub fn curve_csv(curve: &LearningCurve) -> String {
    let mut out = String::from("variant,seed,iteration,value_error,eta\n");
    for tr in &curve.traces {
        let seed = tr.seed.map(|s| s.to_string()).unwrap_or_default();
        for (n, v) in tr.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", curve.variant, seed, n, v, curve.etas[n]);
        }
    }
    out
}

/// `variant,iteration,mean,stderr,n_alive,eta` across all variants.
pub fn aggregate_csv(curves: &[LearningCurve]) -> String {
    let mut out = String::from("variant,iteration,mean,stderr,n_alive,eta\n");
    for c in curves {
        for n in 0..c.mean.len() {
            let alive = c.traces.iter().filter(|t| t.values.len() > n).count();
            let _ = writeln!(out, "{},{},{},{},{},{}", c.variant, n, c.mean[n], c.stderr[n], alive, c.etas[n]);
        }
    }
    out
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Slope of the mean curve against iteration over the last `window` fraction
/// of iterations (iteration 0 excluded).
pub fn late_slope(curve: &LearningCurve, window: f64) -> Option<f64> {
    let len = curve.mean.len();
    if len < 3 {
        return None;
    }
    let start = ((len as f64) * (1.0 - window)).floor().max(1.0) as usize;
    let xs: Vec<f64> = (start..len).map(|n| n as f64).collect();
    loglog_slope(&xs, &curve.mean[start..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs: Vec<f64> = (1..50).map(|n| n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.7)).collect();
        assert!((loglog_slope(&xs, &ys).unwrap() + 0.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        write_atomic(&p, b"x\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x\n");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
