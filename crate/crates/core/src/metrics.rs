//! Accuracy, expected calibration error, accuracy curves and sweep summaries.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const DEFAULT_ECE_BINS: usize = 10;

fn check_pair(probs: &Tensor, labels: &[usize], op: &'static str) -> Result<()> {
    let (n, _) = probs.dims2(op)?;
    if n != labels.len() {
        return Err(Error::Shape { op, detail: format!("{} rows but {} labels", n, labels.len()) });
    }
    if n == 0 {
        return Err(invalid(format!("{} of an empty set", op)));
    }
    Ok(())
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_pair(probs, labels, "accuracy")?;
    Ok(correct_count(probs, labels) as f64 / labels.len() as f64)
}

pub fn error_rate(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_pair(probs, labels, "error_rate")?;
    Ok((labels.len() - correct_count(probs, labels)) as f64 / labels.len() as f64)
}

fn correct_count(probs: &Tensor, labels: &[usize]) -> usize {
    probs.argmax_rows().iter().zip(labels).filter(|(a, b)| a == b).count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinStat {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    pub n_bins: usize,
    pub bins: Vec<BinStat>,
    pub ece: f64,
}

/// Bin of a confidence on `(0, 1]` split into `n` right-inclusive intervals.
pub fn confidence_bin(conf: f64, n_bins: usize) -> usize {
    let b = math::ceil(conf * n_bins as f64) as isize - 1;
    b.clamp(0, n_bins as isize - 1) as usize
}

/// Equal-width ECE over max-probability confidences.
pub fn ece(probs: &Tensor, labels: &[usize], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins < 1 {
        return Err(invalid("ECE needs at least one bin"));
    }
    check_pair(probs, labels, "ece")?;
    let conf = probs.max_rows();
    let pred = probs.argmax_rows();
    let mut conf_sum = alloc::vec![0.0; n_bins];
    let mut hits = alloc::vec![0usize; n_bins];
    let mut counts = alloc::vec![0usize; n_bins];
    for i in 0..labels.len() {
        let b = confidence_bin(conf[i], n_bins);
        counts[b] += 1;
        conf_sum[b] += conf[i];
        hits[b] += (pred[i] == labels[i]) as usize;
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            if counts[b] == 0 {
                return BinStat { count: 0, mean_confidence: 0.0, accuracy: 0.0 };
            }
            let c = counts[b] as f64;
            let stat = BinStat { count: counts[b], mean_confidence: conf_sum[b] / c, accuracy: hits[b] as f64 / c };
            total += c / n * (stat.accuracy - stat.mean_confidence).abs();
            stat
        })
        .collect();
    Ok(CalibrationReport { n_bins, bins, ece: total })
}

/// Trailing means over `window` consecutive entries (`len - window + 1` values).
pub fn rolling_mean(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(math::mean).collect()
}

/// Largest `window`-step mean of a curve.
pub fn peak_window_mean(values: &[f64], window: usize) -> Option<f64> {
    rolling_mean(values, window).into_iter().reduce(f64::max)
}

pub fn final_window_mean(values: &[f64], window: usize) -> Option<f64> {
    rolling_mean(values, window).last().copied()
}

/// Final-window mean minus peak-window mean; zero or negative, more negative
/// when a curve falls back after its best stretch.
pub fn saturation_gap(values: &[f64], window: usize) -> Option<f64> {
    Some(final_window_mean(values, window)? - peak_window_mean(values, window)?)
}

/// Running fraction correct after each step, weighted by step size.
pub fn cumulative_accuracy(step_correct: &[usize], step_sizes: &[usize]) -> Vec<f64> {
    let mut hit = 0usize;
    let mut seen = 0usize;
    step_correct
        .iter()
        .zip(step_sizes)
        .map(|(&c, &n)| {
            hit += c;
            seen += n;
            if seen == 0 { 0.0 } else { hit as f64 / seen as f64 }
        })
        .collect()
}

/// One result cell of a batch-size sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub method: String,
    pub batch_size: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub method: String,
    pub batch_size: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    /// Sorted by method, then batch size.
    pub cells: Vec<SweepCell>,
    /// Per method: mean accuracy at the largest batch minus at the smallest.
    pub drops: Vec<(String, f64)>,
}

/// Mean ± sample std over seeds per (method, batch size).
pub fn summarize_sweep(records: &[SweepRecord]) -> SweepSummary {
    let mut groups: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry((r.method.clone(), r.batch_size)).or_default().push(r.accuracy);
    }
    let cells: Vec<SweepCell> = groups
        .into_iter()
        .map(|((method, batch_size), accs)| SweepCell {
            method,
            batch_size,
            n: accs.len(),
            mean: math::mean(&accs),
            std: math::sample_std(&accs),
        })
        .collect();
    let mut drops = Vec::new();
    let mut i = 0;
    while i < cells.len() {
        let j = cells[i..].iter().position(|c| c.method != cells[i].method).map_or(cells.len(), |k| i + k);
        drops.push((cells[i].method.clone(), cells[j - 1].mean - cells[i].mean));
        i = j;
    }
    SweepSummary { cells, drops }
}
