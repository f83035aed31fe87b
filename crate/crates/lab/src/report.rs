//! Aggregates run summaries into a Markdown report: the method ladder per
//! batch size, a calibration table and, for sweeps, batch-size robustness.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use vnl_core::math;

use crate::error::{LabError, Result};
use crate::output::RunSummary;

/// Row order of the ladder; other methods follow alphabetically.
pub const LADDER_ORDER: [&str; 4] = ["hard_pl", "prob_pl", "vnl", "meta_vnl"];

/// Every `*.json` run summary directly inside `dir`, sorted by file name.
pub fn collect_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| LabError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p).map_err(|e| LabError::io(&p, e))?;
        let s: RunSummary = serde_json::from_str(&text).map_err(|e| LabError::Data(format!("{}: {}", p.display(), e)))?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(LabError::Data(format!("no run summaries in {}", dir.display())));
    }
    Ok(out)
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self { n: values.len(), mean: math::mean(values), std: math::sample_std(values) }
    }
}

fn pm(s: Stat) -> String {
    format!("{:.4} ± {:.4}", s.mean, s.std)
}

fn method_order(methods: impl Iterator<Item = String>) -> Vec<String> {
    let mut rest: Vec<String> = methods.filter(|m| !LADDER_ORDER.contains(&m.as_str())).collect();
    rest.sort();
    rest.dedup();
    LADDER_ORDER.iter().map(|s| s.to_string()).chain(rest).collect()
}

/// Per-seed values averaged over target domains, keyed by method.
fn per_seed<F: Fn(&RunSummary) -> f64>(runs: &[&RunSummary], f: F) -> BTreeMap<String, Vec<f64>> {
    let mut by: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in runs {
        by.entry((r.method.clone(), r.seed)).or_default().push(f(r));
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((m, _), v) in by {
        out.entry(m).or_default().push(math::mean(&v));
    }
    out
}

/// Accuracy and ECE per method over seeds, one table per batch size.
pub fn ladder(runs: &[RunSummary]) -> BTreeMap<usize, BTreeMap<String, (Stat, Stat)>> {
    let mut by_batch: BTreeMap<usize, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        by_batch.entry(r.batch_size).or_default().push(r);
    }
    by_batch
        .into_iter()
        .map(|(b, rs)| {
            let acc = per_seed(&rs, |r| r.final_acc);
            let ece = per_seed(&rs, |r| r.ece);
            let table = acc.into_iter().map(|(m, a)| (m.clone(), (Stat::of(&a), Stat::of(&ece[&m])))).collect();
            (b, table)
        })
        .collect()
}

pub fn render(runs: &[RunSummary]) -> String {
    let mut out = String::from("# Test-time generalization report\n");
    let tables = ladder(runs);
    let targets: Vec<String> = {
        let mut t: Vec<f64> = runs.iter().map(|r| r.target_angle).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t.iter().map(|a| format!("{}°", a)).collect()
    };
    out.push_str(&format!("\n{} runs; targets {}; online accuracy and ECE are averaged over targets per seed.\n", runs.len(), targets.join(", ")));
    for (batch, table) in &tables {
        out.push_str(&format!("\n## Method ladder, batch size {}\n\n| method | seeds | accuracy | ECE |\n|---|---|---|---|\n", batch));
        for m in method_order(table.keys().cloned()) {
            if let Some((a, e)) = table.get(&m) {
                out.push_str(&format!("| {} | {} | {} | {} |\n", m, a.n, pm(*a), pm(*e)));
            }
        }
    }
    out.push_str(&calibration(runs));
    if tables.len() > 1 {
        out.push_str(&robustness(&tables));
    }
    out
}

fn calibration(runs: &[RunSummary]) -> String {
    let mut bins: Vec<usize> = runs.iter().flat_map(|r| r.ece_sweep.iter().map(|e| e.bins)).collect();
    bins.sort();
    bins.dedup();
    let mut by: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in runs {
        for e in &r.ece_sweep {
            by.entry(r.method.clone()).or_default().entry(e.bins).or_default().push(e.ece);
        }
    }
    let mut out = String::from("\n## Calibration (mean ECE over all runs)\n\n| method |");
    for b in &bins {
        out.push_str(&format!(" {} bins |", b));
    }
    out.push_str(&format!("\n|---|{}\n", "---|".repeat(bins.len())));
    for m in method_order(by.keys().cloned()) {
        let Some(row) = by.get(&m) else { continue };
        out.push_str(&format!("| {} |", m));
        for b in &bins {
            match row.get(b) {
                Some(v) => out.push_str(&format!(" {:.4} |", math::mean(v))),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn robustness(tables: &BTreeMap<usize, BTreeMap<String, (Stat, Stat)>>) -> String {
    let sizes: Vec<usize> = tables.keys().copied().collect();
    let (small, large) = (sizes[0], sizes[sizes.len() - 1]);
    let mut out = String::from("\n## Batch-size robustness (mean accuracy)\n\n| method |");
    for b in &sizes {
        out.push_str(&format!(" B={} |", b));
    }
    out.push_str(&format!(" B={} minus B={} |\n|---|{}---|\n", large, small, "---|".repeat(sizes.len())));
    let methods = method_order(tables.values().flat_map(|t| t.keys().cloned()));
    for m in methods {
        if !tables.values().any(|t| t.contains_key(&m)) {
            continue;
        }
        out.push_str(&format!("| {} |", m));
        for b in &sizes {
            match tables[b].get(&m) {
                Some((a, _)) => out.push_str(&format!(" {:.4} |", a.mean)),
                None => out.push_str(" - |"),
            }
        }
        match (tables[&large].get(&m), tables[&small].get(&m)) {
            (Some((l, _)), Some((s, _))) => out.push_str(&format!(" {:+.4} |\n", l.mean - s.mean)),
            _ => out.push_str(" - |\n"),
        }
    }
    out
}
