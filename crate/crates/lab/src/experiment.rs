//! Building blocks shared by the subcommands: domain loading, seeded
//! training runs and stream runs with their result files.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use vnl_core::data::{self, IdxData, LabeledSet};
use vnl_core::meta::{self, IterationLog};
use vnl_core::rng::{self, Stream};
use vnl_core::ttg::{self, Method};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSpec, IdxSpec, TrainSection, TtgSection};
use crate::error::{LabError, Result};
use crate::output::{self, EceAt, RunSummary, StreamRow, TrainRow};

/// Bin counts of the calibration sweep stored with every run.
pub const ECE_SWEEP_BINS: [usize; 4] = [5, 10, 15, 20];

#[derive(Clone, Debug)]
pub struct Domains {
    pub sources: Vec<LabeledSet>,
    pub targets: Vec<LabeledSet>,
}

impl Domains {
    pub fn input_dim(&self) -> usize {
        self.sources[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.sources[0].num_classes
    }
}

fn data_err(e: vnl_core::Error) -> LabError {
    LabError::Data(e.to_string())
}

/// Source and target domains for run seed `seed`.
pub fn load_domains(spec: &DatasetSpec, seed: u64) -> Result<Domains> {
    match spec {
        DatasetSpec::Blobs(b) => {
            let angles: Vec<f64> = b.source_angles.iter().chain(&b.target_angles).copied().collect();
            let mut all = data::build_blob_domains(b.classes, &angles, b.n_per_class, b.noise, b.data_seed.wrapping_add(seed))
                .map_err(data_err)?;
            let targets = all.split_off(b.source_angles.len());
            Ok(Domains { sources: all, targets })
        }
        DatasetSpec::Idx(i) => load_idx_domains(i),
    }
}

fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = fs::read(path).map_err(|e| LabError::io(path, e))?;
    data::parse_idx(&bytes).map_err(|e| LabError::Data(format!("{}: {}", path.display(), e)))
}

fn load_idx_domains(spec: &IdxSpec) -> Result<Domains> {
    let (all, dims) =
        data::labeled_set_from_idx(&read_idx(&spec.images)?, &read_idx(&spec.labels)?, spec.num_classes).map_err(data_err)?;
    let n = spec.limit.map_or(all.len(), |l| l.min(all.len()));
    if spec.target_holdout >= n {
        return Err(LabError::Data(format!("target_holdout {} leaves no source images out of {}", spec.target_holdout, n)));
    }
    let order = data::permutation(n, &mut rng::stream(spec.split_seed, Stream::Data));
    let (src_idx, tgt_idx) = order.split_at(n - spec.target_holdout);
    let take = |idx: &[usize]| -> Result<LabeledSet> {
        let b = all.subset(idx).map_err(data_err)?;
        LabeledSet::new(b.x, b.y, all.num_classes, 0, 0.0).map_err(data_err)
    };
    let (source_pool, target_pool) = (take(src_idx)?, take(tgt_idx)?);
    let (sources, _) = data::build_rotated_domains(&source_pool, dims, &spec.source_angles, &[]).map_err(data_err)?;
    let (_, mut targets) = data::build_rotated_domains(&target_pool, dims, &[], &spec.target_angles).map_err(data_err)?;
    for (k, t) in targets.iter_mut().enumerate() {
        t.domain_id = sources.len() + k;
    }
    Ok(Domains { sources, targets })
}

/// A stream method applied to the ERM-trained or the meta-trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MethodSpec {
    pub method: Method,
    pub meta: bool,
}

impl MethodSpec {
    /// The ablation ladder plus the remaining baselines.
    pub const LADDER: [MethodSpec; 7] = [
        Self { method: Method::SourceOnly, meta: false },
        Self { method: Method::Tent, meta: false },
        Self { method: Method::HardPl, meta: false },
        Self { method: Method::SoftPl, meta: false },
        Self { method: Method::ProbPl, meta: false },
        Self { method: Method::Vnl, meta: false },
        Self { method: Method::Vnl, meta: true },
    ];

    pub fn name(&self) -> String {
        if self.meta {
            format!("meta_{}", self.method.name())
        } else {
            self.method.name().to_string()
        }
    }

    pub fn variant(&self) -> &'static str {
        if self.meta {
            "meta"
        } else {
            "erm"
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MethodSpec {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let (meta, base) = match s.strip_prefix("meta_") {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let method = base.parse::<Method>().map_err(|e| LabError::Config(e.to_string()))?;
        Ok(Self { method, meta })
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<MethodSpec>> {
    let out = list.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<MethodSpec>>>()?;
    if out.is_empty() {
        return Err(LabError::Config("empty method list".into()));
    }
    Ok(out)
}

pub fn parse_batch_sizes(list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(b) if b > 0 => Ok(b),
            _ => Err(LabError::Config(format!("bad batch size {:?}", s))),
        })
        .collect()
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Intermediate checkpoints, oldest first.
    pub snapshots: Vec<Checkpoint>,
    pub logs: Vec<IterationLog>,
}

/// Episodic training for one seed.
pub fn train_seed(section: &TrainSection, domains: &Domains, seed: u64) -> Result<TrainOutput> {
    let config = section.to_config(seed);
    let variant = config.variant().to_string();
    let mut snapshots = Vec::new();
    let every = section.checkpoint_every;
    let trained = meta::train_meta_with(&config, &domains.sources, None, |it, theta, phi| {
        if every > 0 && it % every == 0 && it < config.n_iter {
            snapshots.push(Checkpoint { variant: variant.clone(), seed, iteration: it, theta: theta.clone(), phi: phi.clone() });
        }
        if it % 100 == 0 {
            log::debug!("seed {} ({}): iteration {}/{}", seed, variant, it, config.n_iter);
        }
        Ok(())
    })?;
    let checkpoint = Checkpoint { variant, seed, iteration: config.n_iter, theta: trained.theta, phi: trained.phi };
    Ok(TrainOutput { checkpoint, snapshots, logs: trained.logs })
}

pub fn checkpoint_name(variant: &str, seed: u64) -> String {
    format!("{}_seed{}.ckpt", variant, seed)
}

/// Training CSV, loss curve and checkpoints of one seed.
pub fn write_training(dir: &Path, out: &TrainOutput) -> Result<()> {
    let (variant, seed) = (&out.checkpoint.variant, out.checkpoint.seed);
    let rows: Vec<TrainRow> = out.logs.iter().map(TrainRow::from).collect();
    output::write_csv(&dir.join(format!("train_{}_seed{}.csv", variant, seed)), &rows)?;
    output::write_plot(
        &dir.join(format!("train_{}_seed{}_l_ce_meta.dat", variant, seed)),
        rows.iter().map(|r| (r.iter as f64, r.l_ce_meta)),
    )?;
    for s in &out.snapshots {
        s.save(&dir.join(format!("{}_seed{}_iter{}.ckpt", variant, seed, s.iteration)))?;
    }
    out.checkpoint.save(&dir.join(checkpoint_name(variant, seed)))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub rows: Vec<StreamRow>,
}

impl RunOutput {
    pub fn stem(&self) -> String {
        let s = &self.summary;
        format!("{}_t{}_b{}_seed{}", s.method, s.target_angle, s.batch_size, s.seed)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let stem = self.stem();
        output::write_csv(&dir.join(format!("{}.csv", stem)), &self.rows)?;
        output::write_json(&dir.join(format!("{}.json", stem)), &self.summary)?;
        output::write_plot(&dir.join(format!("{}_acc.dat", stem)), self.rows.iter().map(|r| (r.step as f64, r.acc)))
    }
}

/// One method over one target stream, labelled with the checkpoint variant.
pub fn run_stream(ckpt: &Checkpoint, target: &LabeledSet, method: Method, ttg_cfg: &TtgSection, batch: usize, seed: u64) -> Result<RunOutput> {
    let spec = MethodSpec { method, meta: ckpt.variant == "meta" };
    let stream = data::stream_batches(target, batch, seed).map_err(data_err)?;
    let r = ttg::ttg_run(&ckpt.theta, Some(&ckpt.phi), &stream, &ttg_cfg.to_config(method, batch, seed))?;
    let ece_sweep = ECE_SWEEP_BINS.iter().map(|&b| Ok(EceAt { bins: b, ece: r.ece(b)?.ece })).collect::<Result<Vec<_>>>()?;
    let rows = r
        .step_accuracy
        .iter()
        .zip(&r.step_confidence)
        .enumerate()
        .map(|(step, (&acc, &mean_conf))| StreamRow { step, acc, mean_conf })
        .collect();
    let summary = RunSummary {
        method: spec.name(),
        seed,
        final_acc: r.final_accuracy,
        ece: r.ece(ttg_cfg.ece_bins)?.ece,
        ece_bins: ttg_cfg.ece_bins,
        ece_sweep,
        variant: ckpt.variant.clone(),
        target_angle: target.angle_deg,
        batch_size: batch,
        steps: r.step_accuracy.len(),
        mean_step_acc: r.mean_step_accuracy(),
    };
    Ok(RunOutput { summary, rows })
}
