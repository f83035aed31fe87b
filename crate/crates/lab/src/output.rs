//! Result files. Every file is written to a temporary sibling and renamed
//! into place, so readers never observe a partial file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vnl_core::meta::IterationLog;

use crate::error::{LabError, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| LabError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| LabError::io(path, e))?;
    tmp.persist(path).map_err(|e| LabError::io(path, e.error))?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| LabError::Data(format!("csv {}: {}", path.display(), e)))?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Data(format!("{}: {}", path.display(), e)))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| LabError::Data(format!("{}: {}", path.display(), e)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("result types serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Whitespace-separated `x y` lines.
pub fn write_plot(path: &Path, points: impl IntoIterator<Item = (f64, f64)>) -> Result<()> {
    let mut text = String::new();
    for (x, y) in points {
        text.push_str(&format!("{} {}\n", x, y));
    }
    write_atomic(path, text.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub iter: usize,
    pub l_ms: f64,
    pub l_ce_meta: f64,
    pub kl: f64,
    pub yhat_acc: f64,
}

impl From<&IterationLog> for TrainRow {
    fn from(l: &IterationLog) -> Self {
        Self {
            iter: l.iteration,
            l_ms: l.meta_source_loss,
            l_ce_meta: l.meta_target_ce,
            kl: l.kl_term,
            yhat_acc: l.yhat_accuracy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRow {
    pub step: usize,
    pub acc: f64,
    pub mean_conf: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EceAt {
    pub bins: usize,
    pub ece: f64,
}

/// JSON summary of one stream run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub final_acc: f64,
    pub ece: f64,
    pub ece_bins: usize,
    pub ece_sweep: Vec<EceAt>,
    pub variant: String,
    pub target_angle: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub mean_step_acc: f64,
}
