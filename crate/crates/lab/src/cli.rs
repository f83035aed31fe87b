//! Subcommands of the `vnl` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use vnl_core::math;
use vnl_core::metrics::{self, SweepRecord};

use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, ExperimentConfig};
use crate::error::{LabError, Result};
use crate::experiment::{self, Domains, MethodSpec, RunOutput, TrainOutput};
use crate::output;
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "vnl", version, about = "Meta-learned variational neighbor labels: training, test-time runs and reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Episodic training for every configured seed: checkpoints and training CSVs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Online test-time runs of one checkpoint on every target domain.
    Ttg {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated methods.
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains the needed models and runs the method × batch size × seed grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "16,64,128")]
        batch_sizes: String,
        #[arg(long, default_value = "source_only,tent,hard_pl,soft_pl,prob_pl,vnl,meta_vnl")]
        methods: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregates run summaries of a directory into a Markdown report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn out_dir(cli_out: Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf> {
    cli_out
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| LabError::Config("no output directory: pass --out or set `out_dir`".into()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = parse_config(&config)?;
            train(&cfg, &out_dir(out, &cfg)?)
        }
        Command::Ttg { config, checkpoint, method, out } => {
            let cfg = parse_config(&config)?;
            let methods = experiment::parse_methods(&method)?;
            ttg(&cfg, &Checkpoint::load(&checkpoint)?, &methods, &out_dir(out, &cfg)?)
        }
        Command::Sweep { config, batch_sizes, methods, out } => {
            let cfg = parse_config(&config)?;
            let sizes = experiment::parse_batch_sizes(&batch_sizes)?;
            let methods = experiment::parse_methods(&methods)?;
            sweep(&cfg, &sizes, &methods, &out_dir(out, &cfg)?)
        }
        Command::Report { input, out } => {
            let runs = report::collect_summaries(&input)?;
            output::write_atomic(&out, report::render(&runs).as_bytes())
        }
    }
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for &seed in &cfg.seeds {
        let domains = experiment::load_domains(&cfg.dataset, seed)?;
        let t = experiment::train_seed(&cfg.train, &domains, seed)?;
        experiment::write_training(out, &t)?;
        if let Some(last) = t.logs.last() {
            log::info!("seed {}: trained {} iterations, final meta-target CE {:.4}", seed, t.logs.len(), last.meta_target_ce);
        }
    }
    Ok(())
}

pub fn ttg(cfg: &ExperimentConfig, ckpt: &Checkpoint, methods: &[MethodSpec], out: &Path) -> Result<()> {
    let domains = experiment::load_domains(&cfg.dataset, ckpt.seed)?;
    ckpt.expect_task(domains.input_dim(), domains.num_classes())?;
    for m in methods {
        if m.meta && ckpt.variant != "meta" {
            return Err(LabError::Checkpoint(format!("{} needs a meta-trained checkpoint, got {:?}", m, ckpt.variant)));
        }
        for target in &domains.targets {
            let r = experiment::run_stream(ckpt, target, m.method, &cfg.ttg, cfg.ttg.batch, ckpt.seed)?;
            log::info!("{}: final accuracy {:.4}, ECE {:.4}", r.stem(), r.summary.final_acc, r.summary.ece);
            r.write(out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow<'a> {
    method: &'a str,
    batch_size: usize,
    n: usize,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct DropRow<'a> {
    method: &'a str,
    drop: f64,
}

pub fn sweep(cfg: &ExperimentConfig, sizes: &[usize], methods: &[MethodSpec], out: &Path) -> Result<()> {
    let domains: Vec<Domains> = cfg.seeds.iter().map(|&s| experiment::load_domains(&cfg.dataset, s)).collect::<Result<_>>()?;
    let mut variants: Vec<bool> = methods.iter().map(|m| m.meta).collect();
    variants.sort();
    variants.dedup();
    let train_jobs: Vec<(usize, bool)> = (0..cfg.seeds.len()).flat_map(|i| variants.iter().map(move |&v| (i, v))).collect();
    let trained: Vec<TrainOutput> = train_jobs
        .par_iter()
        .map(|&(i, meta)| {
            let section = if meta { cfg.train.clone() } else { cfg.train.erm() };
            experiment::train_seed(&section, &domains[i], cfg.seeds[i])
        })
        .collect::<Result<_>>()?;
    for t in &trained {
        experiment::write_training(out, t)?;
    }
    let model = |i: usize, meta: bool| &trained[train_jobs.iter().position(|&j| j == (i, meta)).expect("trained")].checkpoint;
    let mut run_jobs = Vec::new();
    for m in methods {
        for &b in sizes {
            for (i, d) in domains.iter().enumerate() {
                for t in 0..d.targets.len() {
                    run_jobs.push((*m, b, i, t));
                }
            }
        }
    }
    let runs: Vec<RunOutput> = run_jobs
        .par_iter()
        .map(|&(m, b, i, t)| experiment::run_stream(model(i, m.meta), &domains[i].targets[t], m.method, &cfg.ttg, b, cfg.seeds[i]))
        .collect::<Result<_>>()?;
    for r in &runs {
        r.write(out)?;
    }
    let mut records = Vec::new();
    for m in methods {
        for &b in sizes {
            for &seed in &cfg.seeds {
                let accs: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.summary.method == m.name() && r.summary.batch_size == b && r.summary.seed == seed)
                    .map(|r| r.summary.final_acc)
                    .collect();
                records.push(SweepRecord { method: m.name(), batch_size: b, seed, accuracy: math::mean(&accs) });
            }
        }
    }
    let summary = metrics::summarize_sweep(&records);
    let rows: Vec<SweepRow> = summary
        .cells
        .iter()
        .map(|c| SweepRow { method: &c.method, batch_size: c.batch_size, n: c.n, mean: c.mean, std: c.std })
        .collect();
    output::write_csv(&out.join("sweep.csv"), &rows)?;
    let drops: Vec<DropRow> = summary.drops.iter().map(|(m, d)| DropRow { method: m, drop: *d }).collect();
    output::write_csv(&out.join("sweep_drops.csv"), &drops)?;
    log::info!("sweep: {} training runs, {} stream runs", trained.len(), runs.len());
    Ok(())
}
