//! Acceptance checks. Prints one line per criterion and exits nonzero when a
//! gated criterion fails (every criterion with `VNL_ACCEPTANCE_STRICT=1`).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use vnl_core::autodiff::{finite_diff_grad, grad_through_update, value_and_grad, GradMap, Tape, UpdateMode, Var};
use vnl_core::data::{self, Batch};
use vnl_core::meta::{self, EpisodeContext, EpisodeRngs, LabelGradient, TrainConfig};
use vnl_core::nn::{self, init_mlp, MlpParams, MlpVars};
use vnl_core::rng::{self, Rng, Stream};
use vnl_core::ttg::{self, Method};
use vnl_core::vnl::{self, LabelMode, NeighborLabelDist, WGaussian};
use vnl_core::{metrics, Tensor};
use vnl_lab::checkpoint::Checkpoint;
use vnl_lab::config::{parse_config, DatasetSpec, ExperimentConfig};
use vnl_lab::experiment::{load_domains, run_stream, train_seed, Domains};

// gradient oracle
const GRAD_MODELS: u64 = 100;
const GRAD_ABS: f64 = 1e-6;
const GRAD_REL: f64 = 1e-6;
const FD_EPS: f64 = 1e-5;
const GRAD_LIMIT_S: f64 = 60.0;
// second order
const TOY_TARGET: f64 = 1.28;
const TOY_TOL: f64 = 1e-9;
const COMPOSED_REL: f64 = 1e-4;
const COMPOSED_NETS: u64 = 10;
// KL
const KL_PAIRS: u64 = 50;
const KL_DRAWS: usize = 100_000;
const KL_TOL: f64 = 0.01;
const KL_FLOOR: f64 = -1e-12;
// sampling
const SAMPLE_DRAWS: usize = 100_000;
const SAMPLE_TOL: f64 = 0.005;
// ECE
const ECE_SINGLE: f64 = 0.4;
const ECE_CALIBRATED_N: usize = 10_000;
const ECE_CALIBRATED_MAX: f64 = 0.02;
const ECE_SWEEP: [usize; 4] = [5, 10, 15, 20];
// blob directions
const LADDER_SEEDS: u64 = 20;
const LADDER_WINS: usize = 15;
const LADDER_LIMIT_S: f64 = 600.0;
const CALIBRATION_WINS: usize = 15;
const ROBUST_SEEDS: u64 = 10;
const ROBUST_SMALL: usize = 16;
const ROBUST_LARGE: usize = 128;
const SAT_SEEDS: u64 = 10;
const SAT_STEPS: usize = 100;
const SAT_N_PER_CLASS: usize = 667;
const SAT_WINDOW: usize = 10;
// rotated MNIST
const MNIST_WINS: usize = 4;
const MNIST_LIMIT_S: f64 = 1800.0;

const GATED: [usize; 6] = [1, 2, 3, 4, 5, 11];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> ExperimentConfig {
    parse_config(&workspace().join("configs").join(name)).expect("bundled config parses")
}

fn gen(seed: u64) -> Rng {
    rng::stream(seed, Stream::Init)
}

fn uniform(r: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::uniform(r)
}

fn normal_matrix(r: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng::standard_normal(r)).collect()).unwrap()
}

/// Largest violation of `|a - fd| <= max(abs, rel |fd|)`, as a multiple of
/// the allowed error; `<= 1` passes.
fn worst_ratio(a: &GradMap, fd: &GradMap) -> f64 {
    a.tensors()
        .iter()
        .zip(fd.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs() / GRAD_ABS.max(GRAD_REL * q.abs())).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

struct GradCase {
    theta: MlpParams,
    phi: MlpParams,
    batch: Batch,
    config: TrainConfig,
}

/// Adds N(0, 0.1²) noise to every parameter, biases included, so no unit
/// sits exactly on a ReLU kink.
fn jitter(p: &MlpParams, r: &mut Rng) -> MlpParams {
    let tensors = p
        .tensors()
        .into_iter()
        .map(|mut t| {
            t.data_mut().iter_mut().for_each(|v| *v += 0.1 * rng::standard_normal(r));
            t
        })
        .collect();
    p.with_tensors(tensors).unwrap()
}

fn grad_case(i: u64) -> GradCase {
    let mut r = gen(10_000 + i);
    let input = 2 + rng::index(&mut r, 4);
    let classes = 2 + rng::index(&mut r, 3);
    let width = |r: &mut Rng| 2 + rng::index(r, 15);
    let hidden: Vec<usize> = (0..1 + rng::index(&mut r, 2)).map(|_| width(&mut r)).collect();
    let phi_hidden = vec![width(&mut r)];
    let config = TrainConfig { hidden, phi_hidden, lambda1: 0.1, mc_w: 1, mc_y: 1, seed: i, ..TrainConfig::default() };
    let (theta, phi) = meta::init_models(&config, input, classes).unwrap();
    let (theta, phi) = (jitter(&theta, &mut r), jitter(&phi, &mut r));
    let n = 6;
    let x = normal_matrix(&mut r, n, input);
    let y = (0..n).map(|_| rng::index(&mut r, classes)).collect();
    GradCase { theta, phi, batch: Batch { x, y }, config }
}

fn meta_loss(c: &GradCase, ctx: &EpisodeContext, theta: &MlpParams, phi: &MlpParams, mode: LabelGradient) -> vnl_core::Result<meta::EpisodeOutcome> {
    let config = TrainConfig { label_gradient: mode, ..c.config.clone() };
    let (mut w, mut labels) = (rng::stream(c.config.seed, Stream::LatentW), rng::stream(c.config.seed, Stream::Labels));
    meta::episode_gradients(theta, phi, ctx, &c.batch, &config, EpisodeRngs { w: &mut w, labels: &mut labels })
}

fn grad_check(i: u64) -> f64 {
    let c = grad_case(i);
    let classes = c.theta.output_dim();
    let t = Tensor::one_hot(&c.batch.y, classes).unwrap();
    let x = &c.batch.x;
    let params = c.theta.tensors();
    let with = |p: &[Tensor]| c.theta.with_tensors(p.to_vec());

    let (_, g) = nn::ce_value_and_grad(&c.theta, x, &t).unwrap();
    let fd = finite_diff_grad(|p| nn::cross_entropy(&nn::predict_probs(&with(p)?, x)?, &t), &params, FD_EPS).unwrap();
    let mut worst = worst_ratio(&g, &fd);

    let (_, g) = nn::entropy_value_and_grad(&c.theta, x).unwrap();
    let fd = finite_diff_grad(|p| nn::entropy_loss(&nn::predict_probs(&with(p)?, x)?), &params, FD_EPS).unwrap();
    worst = worst.max(worst_ratio(&g, &fd));

    let ctx = EpisodeContext::new(&c.theta, &c.batch).unwrap();
    let g = meta_loss(&c, &ctx, &c.theta, &c.phi, LabelGradient::GumbelSt).unwrap().grad_theta;
    let fd = finite_diff_grad(|p| Ok(meta_loss(&c, &ctx, &with(p)?, &c.phi, LabelGradient::GumbelSt)?.meta_loss), &params, FD_EPS).unwrap();
    worst = worst.max(worst_ratio(&g, &fd));

    let g = meta_loss(&c, &ctx, &c.theta, &c.phi, LabelGradient::Soft).unwrap().grad_phi_meta;
    let fd = finite_diff_grad(
        |p| Ok(meta_loss(&c, &ctx, &c.theta, &c.phi.with_tensors(p.to_vec())?, LabelGradient::Soft)?.meta_loss),
        &c.phi.tensors(),
        FD_EPS,
    )
    .unwrap();
    worst.max(worst_ratio(&g, &fd))
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let ratios: Vec<f64> = (0..GRAD_MODELS).into_par_iter().map(grad_check).collect();
    let secs = start.elapsed().as_secs_f64();
    let failing = ratios.iter().filter(|&&r| r > 1.0).count();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    verdict(
        failing == 0 && secs < GRAD_LIMIT_S,
        format!("{} models, {} outside tolerance, worst error {:.3} of allowed, {:.1}s", GRAD_MODELS, failing, worst, secs),
    )
}

fn mlp_loss(tape: &mut Tape, vars: &[Var], x: &Tensor, y: &Tensor) -> vnl_core::Result<Var> {
    let m = MlpVars::from_vars(vars, vars.len() / 2 - 1)?;
    let xv = tape.constant(x.clone())?;
    let yv = tape.constant(y.clone())?;
    let logits = m.logits(tape, xv)?;
    nn::cross_entropy_with_logits(tape, logits, yv)
}

fn criterion_2() -> Verdict {
    let toy = grad_through_update(
        |t, v| t.mul(v[0], v[0]),
        |t, v| t.mul(v[0], v[0]),
        &[Tensor::scalar(1.0)],
        0.1,
        UpdateMode::FullSecondOrder,
    )
    .unwrap()
    .tensors()[0]
        .item();
    let lr = 0.1;
    let mut worst: f64 = 0.0;
    for s in 0..COMPOSED_NETS {
        let mut r = gen(20_000 + s);
        let theta = init_mlp(&[2, 2, 2], 20_000 + s).unwrap().tensors();
        let x = normal_matrix(&mut r, 4, 2);
        let y_in = Tensor::one_hot(&(0..4).map(|_| rng::index(&mut r, 2)).collect::<Vec<_>>(), 2).unwrap();
        let y_out = Tensor::one_hot(&(0..4).map(|_| rng::index(&mut r, 2)).collect::<Vec<_>>(), 2).unwrap();
        let full =
            grad_through_update(|t, v| mlp_loss(t, v, &x, &y_out), |t, v| mlp_loss(t, v, &x, &y_in), &theta, lr, UpdateMode::FullSecondOrder)
                .unwrap();
        let composed = |p: &[Tensor]| {
            let (_, g) = value_and_grad(p, |t, v| mlp_loss(t, v, &x, &y_in))?;
            let star: Vec<Tensor> = p.iter().zip(g.tensors()).map(|(a, d)| a.sub(&d.scale(lr))).collect::<vnl_core::Result<_>>()?;
            Ok(value_and_grad(&star, |t, v| mlp_loss(t, v, &x, &y_out))?.0)
        };
        let fd = finite_diff_grad(composed, &theta, FD_EPS).unwrap();
        let scale = fd.tensors().iter().map(|t| t.max_abs()).fold(0.0, f64::max);
        let err = full.tensors().iter().zip(fd.tensors()).map(|(a, b)| a.sub(b).unwrap().max_abs()).fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    verdict(
        (toy - TOY_TARGET).abs() <= TOY_TOL && worst < COMPOSED_REL,
        format!("toy {:.12}, worst relative error over {} random 2-2-2 nets {:.2e}", toy, COMPOSED_NETS, worst),
    )
}

fn log_density(w: &[f64], g: &WGaussian) -> f64 {
    w.iter()
        .zip(g.mean.data())
        .zip(g.std.data())
        .map(|((x, m), s)| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
        .sum()
}

/// Means in [-0.3, 0.3] and stds in [0.85, 1.15] on a 2x2 grid.
fn random_gaussian(r: &mut Rng) -> WGaussian {
    let mean = Tensor::matrix(2, 2, (0..4).map(|_| uniform(r, -0.3, 0.3)).collect()).unwrap();
    let std = Tensor::matrix(2, 2, (0..4).map(|_| uniform(r, 0.85, 1.15)).collect()).unwrap();
    WGaussian { mean, std }
}

fn criterion_3() -> Verdict {
    let rows: Vec<(f64, f64, f64)> = (0..KL_PAIRS)
        .into_par_iter()
        .map(|s| {
            let mut r = gen(30_000 + s);
            let (q, p) = (random_gaussian(&mut r), random_gaussian(&mut r));
            let closed = vnl::kl_diag_gaussians(&q, &p).unwrap();
            let mut draws = rng::stream(30_000 + s, Stream::LatentW);
            let mc = (0..KL_DRAWS)
                .map(|_| {
                    let w = vnl::sample_w(&q, &mut draws).unwrap();
                    log_density(w.data(), &q) - log_density(w.data(), &p)
                })
                .sum::<f64>()
                / KL_DRAWS as f64;
            (closed, mc, vnl::kl_diag_gaussians(&q, &q).unwrap())
        })
        .collect();
    let worst = rows.iter().map(|(c, m, _)| (c - m).abs()).fold(0.0, f64::max);
    let self_zero = rows.iter().all(|r| r.2 == 0.0);
    let min_kl = rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    verdict(
        worst < KL_TOL && self_zero && min_kl >= KL_FLOOR,
        format!("{} pairs, worst |closed - MC| {:.4}, KL(q,q) = 0: {}, min KL {:.4}", KL_PAIRS, worst, self_zero, min_kl),
    )
}

fn criterion_4() -> Verdict {
    let dist = NeighborLabelDist { probs: Tensor::from_rows(&[&[0.4, 0.6]]).unwrap() };
    let mut r = rng::stream(40_000, Stream::Labels);
    let zeros = (0..SAMPLE_DRAWS)
        .filter(|_| vnl::sample_labels(&dist, LabelMode::Sampled, &mut r, 1.0).unwrap().labels.get(0, 0) == 1.0)
        .count();
    let freq = zeros as f64 / SAMPLE_DRAWS as f64;
    verdict((freq - 0.4).abs() <= SAMPLE_TOL, format!("class-0 frequency {:.4} over {} draws", freq, SAMPLE_DRAWS))
}

fn criterion_5() -> Verdict {
    let probs = Tensor::from_rows(&[&[0.9, 0.1], &[0.9, 0.1]]).unwrap();
    let single = metrics::ece(&probs, &[0, 1], 1).unwrap().ece;

    let mut r = gen(50_000);
    let mut rows = Vec::with_capacity(2 * ECE_CALIBRATED_N);
    let mut labels = Vec::with_capacity(ECE_CALIBRATED_N);
    for _ in 0..ECE_CALIBRATED_N {
        let c = uniform(&mut r, 0.5, 1.0);
        rows.extend([c, 1.0 - c]);
        labels.push(if rng::uniform(&mut r) < c { 0 } else { 1 });
    }
    let cal = Tensor::matrix(ECE_CALIBRATED_N, 2, rows).unwrap();
    let calibrated = metrics::ece(&cal, &labels, 10).unwrap().ece;
    let sweep: Vec<f64> = ECE_SWEEP.iter().map(|&b| metrics::ece(&cal, &labels, b).unwrap().ece).collect();
    verdict(
        single == ECE_SINGLE && calibrated < ECE_CALIBRATED_MAX && sweep.iter().all(|v| v.is_finite()),
        format!("single bin {}, calibrated {:.4}, sweep {:?} -> {:.4?}", single, calibrated, ECE_SWEEP, sweep),
    )
}

/// Meta-trained and ERM checkpoints of one blob seed with its domains.
struct BlobSeed {
    domains: Domains,
    meta: Checkpoint,
    erm: Checkpoint,
}

fn train_blob_seeds(cfg: &ExperimentConfig, n: u64) -> Vec<BlobSeed> {
    (0..n)
        .into_par_iter()
        .map(|seed| {
            let domains = load_domains(&cfg.dataset, seed).unwrap();
            let meta = train_seed(&cfg.train, &domains, seed).unwrap().checkpoint;
            let erm = train_seed(&cfg.train.erm(), &domains, seed).unwrap().checkpoint;
            BlobSeed { domains, meta, erm }
        })
        .collect()
}

/// Final accuracy and ECE of `method` on every target, averaged.
fn blob_run(cfg: &ExperimentConfig, s: &BlobSeed, method: Method, meta: bool, batch: usize, seed: u64) -> (f64, f64) {
    let ckpt = if meta { &s.meta } else { &s.erm };
    let runs: Vec<_> = s.domains.targets.iter().map(|t| run_stream(ckpt, t, method, &cfg.ttg, batch, seed).unwrap().summary).collect();
    let n = runs.len() as f64;
    (runs.iter().map(|r| r.final_acc).sum::<f64>() / n, runs.iter().map(|r| r.ece).sum::<f64>() / n)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct LadderRow {
    hard: (f64, f64),
    prob: (f64, f64),
    vnl: (f64, f64),
}

fn criteria_6_7(cfg: &ExperimentConfig, seeds: &[BlobSeed], started: Instant) -> (Verdict, Verdict) {
    let b = cfg.ttg.batch;
    let rows: Vec<LadderRow> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = i as u64;
            LadderRow {
                hard: blob_run(cfg, s, Method::HardPl, false, b, seed),
                prob: blob_run(cfg, s, Method::ProbPl, false, b, seed),
                vnl: blob_run(cfg, s, Method::Vnl, true, b, seed),
            }
        })
        .collect();
    let secs = started.elapsed().as_secs_f64();
    let acc = |f: fn(&LadderRow) -> (f64, f64)| mean(&rows.iter().map(|r| f(r).0).collect::<Vec<_>>());
    let (hard, prob, vnl) = (acc(|r| r.hard), acc(|r| r.prob), acc(|r| r.vnl));
    let best = rows.iter().filter(|r| r.vnl.0 > r.hard.0.max(r.prob.0)).count();
    let six = verdict(
        hard <= prob && prob <= vnl && best >= LADDER_WINS && secs < LADDER_LIMIT_S,
        format!(
            "mean acc hard_pl {:.4}, prob_pl {:.4}, meta_vnl {:.4}; meta_vnl strictly best in {}/{} seeds; {:.1}s",
            hard,
            prob,
            vnl,
            best,
            rows.len(),
            secs
        ),
    );
    let calibrated = rows.iter().filter(|r| r.vnl.1 <= r.hard.1).count();
    let ece = |f: fn(&LadderRow) -> (f64, f64)| mean(&rows.iter().map(|r| f(r).1).collect::<Vec<_>>());
    let seven = verdict(
        calibrated >= CALIBRATION_WINS,
        format!(
            "meta_vnl ECE <= hard_pl ECE in {}/{} seeds (mean ECE {:.4} vs {:.4})",
            calibrated,
            rows.len(),
            ece(|r| r.vnl),
            ece(|r| r.hard)
        ),
    );
    (six, seven)
}

fn criterion_8(cfg: &ExperimentConfig, seeds: &[BlobSeed]) -> Verdict {
    let drops: Vec<(f64, f64)> = seeds[..ROBUST_SEEDS as usize]
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = i as u64;
            let drop = |m, meta| blob_run(cfg, s, m, meta, ROBUST_LARGE, seed).0 - blob_run(cfg, s, m, meta, ROBUST_SMALL, seed).0;
            (drop(Method::Vnl, true), drop(Method::Tent, false))
        })
        .collect();
    let vnl = mean(&drops.iter().map(|d| d.0).collect::<Vec<_>>());
    let tent = mean(&drops.iter().map(|d| d.1).collect::<Vec<_>>());
    verdict(
        vnl < tent,
        format!("acc(B={}) - acc(B={}): meta_vnl {:+.4}, tent {:+.4} over {} seeds", ROBUST_LARGE, ROBUST_SMALL, vnl, tent, ROBUST_SEEDS),
    )
}

fn criterion_9(cfg: &ExperimentConfig, seeds: &[BlobSeed]) -> Verdict {
    let DatasetSpec::Blobs(spec) = &cfg.dataset else { unreachable!("blob config") };
    let long = DatasetSpec::Blobs(vnl_lab::config::BlobSpec { n_per_class: SAT_N_PER_CLASS, ..spec.clone() });
    let b = cfg.ttg.batch;
    let gaps: Vec<(f64, f64)> = seeds[..SAT_SEEDS as usize]
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = i as u64;
            let targets = load_domains(&long, seed).unwrap().targets;
            let gap = |m: Method, ckpt: &Checkpoint| {
                let gs: Vec<f64> = targets
                    .iter()
                    .map(|t| {
                        let stream = data::stream_batches(t, b, seed).unwrap().prefix(SAT_STEPS);
                        assert_eq!(stream.len(), SAT_STEPS);
                        let r = ttg::ttg_run(&ckpt.theta, Some(&ckpt.phi), &stream, &cfg.ttg.to_config(m, b, seed)).unwrap();
                        metrics::saturation_gap(&r.step_accuracy, SAT_WINDOW).unwrap()
                    })
                    .collect();
                mean(&gs)
            };
            (gap(Method::HardPl, &s.erm), gap(Method::Vnl, &s.meta))
        })
        .collect();
    let hard = mean(&gaps.iter().map(|g| g.0).collect::<Vec<_>>());
    let vnl = mean(&gaps.iter().map(|g| g.1).collect::<Vec<_>>());
    verdict(
        hard < vnl,
        format!("final-{w} minus peak-{w} over {} steps: hard_pl {:+.4}, meta_vnl {:+.4} over {} seeds", SAT_STEPS, hard, vnl, SAT_SEEDS, w = SAT_WINDOW),
    )
}

fn criterion_10() -> Verdict {
    let started = Instant::now();
    let cfg = config("mnist5k.json");
    let b = cfg.ttg.batch;
    let per_seed: Vec<Vec<(f64, f64)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let d = load_domains(&cfg.dataset, seed).unwrap();
            let (meta, erm) = rayon::join(
                || train_seed(&cfg.train, &d, seed).unwrap().checkpoint,
                || train_seed(&cfg.train.erm(), &d, seed).unwrap().checkpoint,
            );
            d.targets
                .iter()
                .map(|t| {
                    let src = run_stream(&erm, t, Method::SourceOnly, &cfg.ttg, b, seed).unwrap().summary.final_acc;
                    let vnl = run_stream(&meta, t, Method::Vnl, &cfg.ttg, b, seed).unwrap().summary.final_acc;
                    (src, vnl)
                })
                .collect()
        })
        .collect();
    let secs = started.elapsed().as_secs_f64();
    let wins = per_seed.iter().filter(|ts| ts.iter().all(|(src, vnl)| vnl > src)).count();
    let angles = cfg.dataset.target_angles();
    let means: Vec<String> = (0..angles.len())
        .map(|k| {
            let src = mean(&per_seed.iter().map(|ts| ts[k].0).collect::<Vec<_>>());
            let vnl = mean(&per_seed.iter().map(|ts| ts[k].1).collect::<Vec<_>>());
            format!("{}°: source_only {:.4}, meta_vnl {:.4}", angles[k], src, vnl)
        })
        .collect();
    verdict(
        wins >= MNIST_WINS && secs < MNIST_LIMIT_S,
        format!("meta_vnl above source_only on every target in {}/{} seeds; {}; {:.1}s", wins, per_seed.len(), means.join("; "), secs),
    )
}

fn sweep_files(out: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = workspace().join("configs/blobs.json");
    let status = Command::new(env!("CARGO_BIN_EXE_vnl"))
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("VNL_LOG", "warn")
        .status()
        .unwrap();
    assert!(status.success(), "sweep failed");
    let report = out.join("report.md");
    let status = Command::new(env!("CARGO_BIN_EXE_vnl"))
        .args(["report", "--in", out.to_str().unwrap(), "--out", report.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success(), "report failed");
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let a = sweep_files(&dir.path().join("a"));
    let b = sweep_files(&dir.path().join("b"));
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    let same_names = names(&a) == names(&b);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    let tabular = a.iter().filter(|f| f.0.ends_with(".csv") || f.0.ends_with(".json")).count();
    verdict(
        same_names && differing.is_empty() && tabular > 0,
        format!("{} files ({} CSV/JSON) from two full blob sweeps, {} differ", a.len(), tabular, differing.len()),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let mut results: Vec<(usize, Verdict)> = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        println!("criterion {}: {} ({})", n, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, v));
    };
    let oracles: [fn() -> Verdict; 5] = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5];
    for (i, f) in oracles.iter().enumerate() {
        if want(i + 1) {
            report(i + 1, f());
        }
    }

    if (6..=9).any(want) {
        let started = Instant::now();
        let mut blobs = config("blobs.json");
        blobs.seeds = (0..LADDER_SEEDS).collect();
        let seeds = train_blob_seeds(&blobs, LADDER_SEEDS);
        if want(6) || want(7) {
            let (six, seven) = criteria_6_7(&blobs, &seeds, started);
            report(6, six);
            report(7, seven);
        }
        if want(8) {
            report(8, criterion_8(&blobs, &seeds));
        }
        if want(9) {
            report(9, criterion_9(&blobs, &seeds));
        }
    }
    if want(10) {
        report(10, criterion_10());
    }
    if want(11) {
        report(11, criterion_11());
    }

    let strict = std::env::var("VNL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let failed: Vec<usize> = results.iter().filter(|(n, v)| !v.pass && (strict || GATED.contains(n))).map(|r| r.0).collect();
    let passed = results.iter().filter(|r| r.1.pass).count();
    println!("acceptance: {}/{} criteria pass", passed, results.len());
    if !failed.is_empty() {
        eprintln!("gated criteria failed: {:?}", failed);
        std::process::exit(1);
    }
}
