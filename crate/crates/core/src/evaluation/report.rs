//! Run-directory outputs: metric CSVs, PNG frames and the summary file.

use std::fmt::Display;
use std::path::Path;

use super::experiments::{DriftCurve, MetricRow};
use crate::error::Result;
use crate::imageio::save_png;
use crate::pipeline::csv_err;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn write_metric_table(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["experiment", "method", "quantity", "l2", "ssim"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.experiment.to_string(),
            r.method.to_string(),
            r.quantity.clone(),
            r.l2.to_string(),
            r.ssim.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (method, round).
pub fn write_drift_table(curves: &[(&str, &DriftCurve)], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["method", "round", "l2", "ssim", "linf"]).map_err(csv_err)?;
    for (name, c) in curves {
        for k in 0..c.l2.len() {
            w.write_record([
                name.to_string(),
                k.to_string(),
                c.l2[k].to_string(),
                c.ssim[k].to_string(),
                c.linf[k].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Saves sample 0 of each frame as `<prefix>_<index>.png` in `dir`.
pub fn write_frames<T: Scalar>(dir: &Path, prefix: &str, frames: &[Tensor<T>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (k, f) in frames.iter().enumerate() {
        save_png(&f.slice_batch(0, 1), &dir.join(format!("{prefix}_{k:03}.png")))?;
    }
    Ok(())
}

/// Ordered `key=value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// Records an ordering check as `pass` or `fail`.
    pub fn check(&mut self, key: &str, ok: bool) {
        self.set(key, if ok { "pass" } else { "fail" });
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn all_checks_pass(&self) -> bool {
        self.entries.iter().all(|(_, v)| v != "fail")
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
