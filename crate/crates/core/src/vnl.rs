//! Variational neighbor labels.
//!
//! Per-class prototypes summarize a batch, a shared network `φ` maps each
//! prototype row to a diagonal Gaussian over that class's weight vector, and a
//! sampled weight bank classifies the batch by dot-product logits. Every
//! stochastic step has a numeric form (test time) and a tape form
//! (meta-training, where `φ` receives gradients).

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::nn::{self, Linear, MlpParams, MlpVars};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Lower bound on every standard deviation produced by `φ`.
pub const STD_FLOOR: f64 = 1e-6;

/// Classes whose total assignment weight is below this use the fallback row.
pub const EMPTY_CLASS_WEIGHT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    /// `[C, d + C]`: mean feature ⊕ class output summary.
    pub per_class: Tensor,
    /// `false` where the fallback row was used.
    pub filled_mask: Vec<bool>,
}

impl Prototypes {
    pub fn num_classes(&self) -> usize {
        self.filled_mask.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.per_class.cols() - self.num_classes()
    }
}

/// Row `c`: assignment-weighted mean of `features` ⊕ weighted mean of
/// `outputs`. Empty classes fall back to head row `c` ⊕ `e_c`.
pub fn class_prototypes(features: &Tensor, assignment: &Tensor, outputs: &Tensor, head: &Linear) -> Result<Prototypes> {
    let (b, d) = features.dims2("class_prototypes")?;
    let (ba, c) = assignment.dims2("class_prototypes")?;
    if ba != b || outputs.shape() != assignment.shape() || head.weight.shape() != [c, d] {
        return Err(Error::Shape {
            op: "class_prototypes",
            detail: format!(
                "features {:?}, assignment {:?}, outputs {:?}, head {:?}",
                features.shape(),
                assignment.shape(),
                outputs.shape(),
                head.weight.shape()
            ),
        });
    }
    let feat_sum = Tensor::matmul(assignment, features, true, false)?;
    let out_sum = Tensor::matmul(assignment, outputs, true, false)?;
    let weight = assignment.sum_rows()?;
    let mut rows = Vec::with_capacity(c * (d + c));
    let mut filled_mask = Vec::with_capacity(c);
    for k in 0..c {
        let wk = weight.data()[k];
        if wk < EMPTY_CLASS_WEIGHT {
            rows.extend_from_slice(head.weight.row(k));
            rows.extend((0..c).map(|j| if j == k { 1.0 } else { 0.0 }));
            filled_mask.push(false);
        } else {
            rows.extend(feat_sum.row(k).iter().map(|v| v / wk));
            rows.extend(out_sum.row(k).iter().map(|v| v / wk));
            filled_mask.push(true);
        }
    }
    Ok(Prototypes { per_class: Tensor::matrix(c, d + c, rows)?, filled_mask })
}

/// Prototypes for the prior: argmax assignments, predicted probabilities as
/// the output summary.
pub fn prior_prototypes(features: &Tensor, probs: &Tensor, head: &Linear) -> Result<Prototypes> {
    let assign = Tensor::one_hot(&probs.argmax_rows(), probs.cols())?;
    class_prototypes(features, &assign, probs, head)
}

/// Prototypes for the posterior: true-label assignments and summaries.
pub fn posterior_prototypes(features: &Tensor, labels: &[usize], num_classes: usize, head: &Linear) -> Result<Prototypes> {
    let y = Tensor::one_hot(labels, num_classes)?;
    class_prototypes(features, &y, &y, head)
}

/// Diagonal Gaussian over a `[C, d]` weight bank.
#[derive(Clone, Debug, PartialEq)]
pub struct WGaussian {
    pub mean: Tensor,
    pub std: Tensor,
}

fn check_phi(phi: &MlpParams, protos: &Prototypes) -> Result<usize> {
    let width = protos.per_class.cols();
    if phi.input_dim() != width {
        return Err(Error::Shape {
            op: "variational_w",
            detail: format!("φ takes {} inputs but prototypes have width {}", phi.input_dim(), width),
        });
    }
    let d = protos.feature_dim();
    if phi.output_dim() != 2 * d {
        return Err(Error::Shape {
            op: "variational_w",
            detail: format!("φ emits {} values, expected {} for feature width {}", phi.output_dim(), 2 * d, d),
        });
    }
    Ok(d)
}

/// Applies `φ` row-wise; the first `d` outputs are the mean, the rest pass
/// through softplus (floored) to give the std.
pub fn variational_w(phi: &MlpParams, protos: &Prototypes) -> Result<WGaussian> {
    let d = check_phi(phi, protos)?;
    let out = nn::forward_logits(phi, &protos.per_class)?;
    Ok(WGaussian {
        mean: out.slice_cols(0, d)?,
        std: out.slice_cols(d, 2 * d)?.map(|v| math::softplus(v).max(STD_FLOOR)),
    })
}

fn normals(rng: &mut Rng, shape: &[usize]) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng::standard_normal(rng)).collect())
}

/// `w = mean + std ⊙ ε` with `ε ~ N(0, I)` drawn row-major.
pub fn sample_w(g: &WGaussian, rng: &mut Rng) -> Result<Tensor> {
    let eps = normals(rng, g.mean.shape())?;
    g.mean.add(&g.std.mul(&eps)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborLabelDist {
    pub probs: Tensor,
}

/// `softmax(features · wᵀ)`.
pub fn neighbor_label_dist(w: &Tensor, features: &Tensor) -> Result<NeighborLabelDist> {
    let (_, d) = features.dims2("neighbor_label_dist")?;
    if w.cols() != d {
        return Err(Error::Shape { op: "neighbor_label_dist", detail: format!("w {:?} for features of width {}", w.shape(), d) });
    }
    Ok(NeighborLabelDist { probs: Tensor::matmul(features, w, false, true)?.softmax_rows()? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    /// Argmax one-hot, ties to the lowest class.
    Hard,
    /// One categorical draw per row.
    Sampled,
    /// Gumbel-max draw; on a tape the gradient follows the relaxed softmax.
    GumbelSt,
    /// The distribution itself.
    Soft,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Self::Hard),
            "sampled" => Ok(Self::Sampled),
            "gumbel_st" => Ok(Self::GumbelSt),
            "soft" => Ok(Self::Soft),
            other => Err(invalid(format!("unknown label mode {:?} (expected hard, sampled, gumbel_st or soft)", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledLabels {
    pub labels: Tensor,
    pub mode: LabelMode,
}

fn gumbel_argmax(probs: &[f64], rng: &mut Rng) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, &p) in probs.iter().enumerate() {
        let v = math::ln(p.max(nn::PROB_FLOOR)) + rng::gumbel(rng);
        if v > best_v {
            best = k;
            best_v = v;
        }
    }
    best
}

/// Draws class indices per row; `Soft` returns the argmax.
fn draw_classes(probs: &Tensor, mode: LabelMode, rng: &mut Rng) -> Vec<usize> {
    match mode {
        LabelMode::Hard | LabelMode::Soft => probs.argmax_rows(),
        LabelMode::Sampled => (0..probs.rows()).map(|i| rng::categorical(probs.row(i), rng)).collect(),
        LabelMode::GumbelSt => (0..probs.rows()).map(|i| gumbel_argmax(probs.row(i), rng)).collect(),
    }
}

fn check_tau(gumbel_tau: f64) -> Result<()> {
    if !(gumbel_tau > 0.0) {
        return Err(invalid(format!("gumbel temperature must be > 0, got {}", gumbel_tau)));
    }
    Ok(())
}

pub fn sample_labels(dist: &NeighborLabelDist, mode: LabelMode, rng: &mut Rng, gumbel_tau: f64) -> Result<SampledLabels> {
    check_tau(gumbel_tau)?;
    let labels = match mode {
        LabelMode::Soft => dist.probs.clone(),
        _ => Tensor::one_hot(&draw_classes(&dist.probs, mode, rng), dist.probs.cols())?,
    };
    Ok(SampledLabels { labels, mode })
}

/// `Σ log(σp/σq) + (σq² + (μq − μp)²) / (2σp²) − ½` over all coordinates.
pub fn kl_diag_gaussians(q: &WGaussian, p: &WGaussian) -> Result<f64> {
    let shape = q.mean.shape();
    if q.std.shape() != shape || p.mean.shape() != shape || p.std.shape() != shape {
        return Err(Error::Shape { op: "kl_diag_gaussians", detail: format!("q {:?} vs p {:?}", shape, p.mean.shape()) });
    }
    let mut total = 0.0;
    for k in 0..q.mean.len() {
        let (mq, sq) = (q.mean.data()[k], q.std.data()[k]);
        let (mp, sp) = (p.mean.data()[k], p.std.data()[k]);
        let diff = mq - mp;
        total += (math::ln(sp) - math::ln(sq)) + (sq * sq + diff * diff) / (2.0 * (sp * sp)) - 0.5;
    }
    Ok(total)
}

/// Tape handles of a [`WGaussian`].
#[derive(Clone, Copy, Debug)]
pub struct WVars {
    pub mean: Var,
    pub std: Var,
}

impl WVars {
    pub fn value(&self, tape: &Tape) -> WGaussian {
        WGaussian { mean: tape.value(self.mean).clone(), std: tape.value(self.std).clone() }
    }
}

/// Tape form of [`variational_w`]; prototypes enter as constants.
pub fn variational_w_on_tape(tape: &mut Tape, phi: &MlpVars, protos: &Prototypes) -> Result<WVars> {
    let d = protos.feature_dim();
    let input = tape.constant(protos.per_class.clone())?;
    let out = phi.logits(tape, input)?;
    if tape.value(out).cols() != 2 * d {
        return Err(Error::Shape {
            op: "variational_w",
            detail: format!("φ emits {} values, expected {}", tape.value(out).cols(), 2 * d),
        });
    }
    let mean = tape.slice_cols(out, 0, d)?;
    let pre = tape.slice_cols(out, d, 2 * d)?;
    let sp = tape.softplus(pre)?;
    let std = tape.clamp_min(sp, STD_FLOOR)?;
    Ok(WVars { mean, std })
}

/// Tape form of [`sample_w`]; draws the same noise for the same rng state.
pub fn sample_w_on_tape(tape: &mut Tape, g: &WVars, rng: &mut Rng) -> Result<Var> {
    let shape = tape.value(g.mean).shape().to_vec();
    let eps = tape.constant(normals(rng, &shape)?)?;
    let noise = tape.mul(g.std, eps)?;
    tape.add(g.mean, noise)
}

/// Neighbor-label logits `features · wᵀ`.
pub fn neighbor_logits_on_tape(tape: &mut Tape, w: Var, features: Var) -> Result<Var> {
    tape.matmul(features, w, false, true)
}

/// Tape form of [`sample_labels`] from neighbor logits. Returns the label rows
/// and the drawn class per row.
///
/// `Hard` and `Sampled` give constants. `GumbelSt` gives exact one-hot values
/// whose gradient is that of `softmax((log p + g) / τ)`. `Soft` gives the
/// differentiable distribution.
pub fn sample_labels_on_tape(
    tape: &mut Tape,
    logits: Var,
    mode: LabelMode,
    rng: &mut Rng,
    gumbel_tau: f64,
) -> Result<(Var, Vec<usize>)> {
    check_tau(gumbel_tau)?;
    let logp = tape.log_softmax(logits)?;
    let probs = tape.value(logp).map(math::exp);
    let c = probs.cols();
    match mode {
        LabelMode::Soft => {
            let p = tape.exp(logp)?;
            Ok((p, probs.argmax_rows()))
        }
        LabelMode::Hard | LabelMode::Sampled => {
            let classes = draw_classes(&probs, mode, rng);
            Ok((tape.constant(Tensor::one_hot(&classes, c)?)?, classes))
        }
        LabelMode::GumbelSt => {
            let (b, _) = probs.dims2("gumbel_st")?;
            let noise = Tensor::matrix(b, c, (0..b * c).map(|_| rng::gumbel(rng)).collect())?;
            let clamped = tape.clamp_min(logp, math::ln(nn::PROB_FLOOR))?;
            let g = tape.constant(noise)?;
            let perturbed = tape.add(clamped, g)?;
            let scaled = tape.scale(perturbed, 1.0 / gumbel_tau)?;
            let relaxed = tape.softmax(scaled)?;
            let classes = tape.value(perturbed).argmax_rows();
            let hard = tape.constant(Tensor::one_hot(&classes, c)?)?;
            let frozen = tape.detach(relaxed)?;
            let zero = tape.sub(relaxed, frozen)?;
            Ok((tape.add(hard, zero)?, classes))
        }
    }
}

/// Tape form of [`kl_diag_gaussians`].
pub fn kl_on_tape(tape: &mut Tape, q: &WVars, p: &WVars) -> Result<Var> {
    let log_ratio = {
        let lp = tape.log(p.std)?;
        let lq = tape.log(q.std)?;
        tape.sub(lp, lq)?
    };
    let diff = tape.sub(q.mean, p.mean)?;
    let d2 = tape.mul(diff, diff)?;
    let q2 = tape.mul(q.std, q.std)?;
    let num = tape.add(q2, d2)?;
    let p2 = tape.mul(p.std, p.std)?;
    let den = tape.scale(p2, 2.0)?;
    let ratio = tape.div(num, den)?;
    let terms = tape.add(log_ratio, ratio)?;
    let centered = tape.add_scalar(terms, -0.5)?;
    tape.sum(centered)
}

/// Fraction of rows whose label argmax equals the true class.
pub fn label_accuracy(labels: &Tensor, truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = labels.argmax_rows().iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
