//! Online test-time generalization over a target stream.
//!
//! Every batch is first used for one unsupervised update of the running
//! parameters and then predicted with the updated parameters. Held labels are
//! read only by the scorer.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::data::DomainStream;
use crate::error::{invalid, Error, Result};
use crate::metrics;
use crate::nn::{self, MlpParams};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;
use crate::vnl::{self, LabelMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    SourceOnly,
    Tent,
    HardPl,
    SoftPl,
    ProbPl,
    Vnl,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::SourceOnly, Self::Tent, Self::HardPl, Self::SoftPl, Self::ProbPl, Self::Vnl];

    pub fn name(self) -> &'static str {
        match self {
            Self::SourceOnly => "source_only",
            Self::Tent => "tent",
            Self::HardPl => "hard_pl",
            Self::SoftPl => "soft_pl",
            Self::ProbPl => "prob_pl",
            Self::Vnl => "vnl",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method {:?} (expected one of source_only, tent, hard_pl, soft_pl, prob_pl, vnl)", s)))
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TtgConfig {
    pub method: Method,
    pub lr: f64,
    pub batch: usize,
    /// Prior draws per batch; predictions and the carried parameters are
    /// averaged over the draws.
    pub mc_predict: usize,
    pub seed: u64,
    /// Restart every batch from the source parameters instead of carrying
    /// the running parameters.
    pub episodic_reset: bool,
}

impl Default for TtgConfig {
    fn default() -> Self {
        Self { method: Method::Vnl, lr: 1e-4, batch: 20, mc_predict: 1, seed: 0, episodic_reset: false }
    }
}

impl TtgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!("test-time learning rate must be a finite value >= 0, got {}", self.lr)));
        }
        if self.batch < 1 {
            return Err(invalid("test batch must be >= 1"));
        }
        if self.mc_predict < 1 {
            return Err(invalid("mc_predict must be >= 1"));
        }
        Ok(())
    }
}

/// Generators of one stream run.
pub struct TtgRngs {
    pub w: Rng,
    pub labels: Rng,
}

impl TtgRngs {
    pub fn new(seed: u64) -> Self {
        Self { w: rng::stream(seed, Stream::LatentW), labels: rng::stream(seed, Stream::Labels) }
    }
}

/// Targets a baseline trains on for a batch with predictions `probs`.
pub fn pseudo_labels(method: Method, probs: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let mode = match method {
        Method::HardPl => LabelMode::Hard,
        Method::SoftPl => LabelMode::Soft,
        Method::ProbPl => LabelMode::Sampled,
        other => return Err(invalid(format!("{} does not train on pseudo labels", other))),
    };
    let dist = vnl::NeighborLabelDist { probs: probs.clone() };
    Ok(vnl::sample_labels(&dist, mode, rng, 1.0)?.labels)
}

/// One update of a baseline method followed by prediction on the same batch.
pub fn baseline_step(theta: &MlpParams, x: &Tensor, method: Method, lr: f64, rng: &mut Rng) -> Result<(MlpParams, Tensor)> {
    let next = match method {
        Method::SourceOnly => theta.clone(),
        Method::Tent => {
            let (_, g) = nn::entropy_value_and_grad(theta, x)?;
            nn::sgd_step(theta, &g, lr)?
        }
        Method::HardPl | Method::SoftPl | Method::ProbPl => {
            let probs = nn::predict_probs(theta, x)?;
            let targets = pseudo_labels(method, &probs, rng)?;
            let (_, g) = nn::ce_value_and_grad(theta, x, &targets)?;
            nn::sgd_step(theta, &g, lr)?
        }
        Method::Vnl => return Err(invalid("vnl is not a baseline method")),
    };
    let probs = nn::predict_probs(&next, x)?;
    Ok((next, probs))
}

/// Mean of the softmax outputs of every parameter set on `x`.
pub fn predict_expected(thetas: &[MlpParams], x: &Tensor) -> Result<Tensor> {
    let (first, rest) = thetas.split_first().ok_or_else(|| invalid("prediction needs at least one parameter set"))?;
    let mut acc = nn::predict_probs(first, x)?;
    for t in rest {
        acc = acc.add(&nn::predict_probs(t, x)?)?;
    }
    Ok(if rest.is_empty() { acc } else { acc.scale(1.0 / thetas.len() as f64) })
}

fn mean_params(thetas: &[MlpParams]) -> Result<MlpParams> {
    if thetas.len() == 1 {
        return Ok(thetas[0].clone());
    }
    let k = thetas.len() as f64;
    let mut acc = thetas[0].tensors();
    for t in &thetas[1..] {
        for (a, b) in acc.iter_mut().zip(t.tensors()) {
            *a = a.add(&b)?;
        }
    }
    thetas[0].with_tensors(acc.into_iter().map(|a| a.scale(1.0 / k)).collect())
}

/// Labels drawn from the prior over class weights, one cross-entropy step,
/// then prediction on the same batch. `φ` is left untouched.
pub fn vnl_step(
    theta: &MlpParams,
    phi: &MlpParams,
    x: &Tensor,
    lr: f64,
    mc_predict: usize,
    rngs: &mut TtgRngs,
) -> Result<(MlpParams, Tensor)> {
    if mc_predict < 1 {
        return Err(invalid("mc_predict must be >= 1"));
    }
    let features = nn::forward_features(theta, x)?;
    let probs = nn::softmax(&nn::forward_logits(theta, x)?)?;
    let protos = vnl::prior_prototypes(&features, &probs, theta.head())?;
    let prior = vnl::variational_w(phi, &protos)?;
    let mut stars = Vec::with_capacity(mc_predict);
    for _ in 0..mc_predict {
        let w = vnl::sample_w(&prior, &mut rngs.w)?;
        let dist = vnl::neighbor_label_dist(&w, &features)?;
        let labels = vnl::sample_labels(&dist, LabelMode::Sampled, &mut rngs.labels, 1.0)?;
        let (_, g) = nn::ce_value_and_grad(theta, x, &labels.labels)?;
        stars.push(nn::sgd_step(theta, &g, lr)?);
    }
    let preds = predict_expected(&stars, x)?;
    Ok((mean_params(&stars)?, preds))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamResult {
    pub method: Method,
    pub step_accuracy: Vec<f64>,
    pub step_confidence: Vec<f64>,
    /// Predictions of every sample in stream order.
    pub probs: Tensor,
    pub labels: Vec<usize>,
    pub final_accuracy: f64,
    /// Parameters after the last batch.
    pub theta: MlpParams,
}

impl StreamResult {
    pub fn ece(&self, n_bins: usize) -> Result<metrics::CalibrationReport> {
        metrics::ece(&self.probs, &self.labels, n_bins)
    }

    pub fn mean_step_accuracy(&self) -> f64 {
        crate::math::mean(&self.step_accuracy)
    }
}

/// Runs one method over the stream, carrying parameters from batch to batch.
pub fn ttg_run(theta_s: &MlpParams, phi: Option<&MlpParams>, stream: &DomainStream, config: &TtgConfig) -> Result<StreamResult> {
    config.validate()?;
    if stream.is_empty() {
        return Err(invalid("empty target stream"));
    }
    if config.method == Method::Vnl && phi.is_none() {
        return Err(invalid("vnl needs the variational network φ"));
    }
    let mut rngs = TtgRngs::new(config.seed);
    let mut theta = theta_s.clone();
    let mut step_accuracy = Vec::with_capacity(stream.len());
    let mut step_confidence = Vec::with_capacity(stream.len());
    let mut all_probs: Vec<Tensor> = Vec::with_capacity(stream.len());
    let mut labels = Vec::with_capacity(stream.num_samples());
    for batch in &stream.batches {
        let start = if config.episodic_reset { theta_s } else { &theta };
        let (next, probs) = match config.method {
            Method::Vnl => vnl_step(start, phi.expect("checked above"), &batch.x, config.lr, config.mc_predict, &mut rngs)?,
            m => baseline_step(start, &batch.x, m, config.lr, &mut rngs.labels)?,
        };
        theta = next;
        step_accuracy.push(metrics::accuracy(&probs, &batch.y)?);
        step_confidence.push(crate::math::mean(&probs.max_rows()));
        labels.extend_from_slice(&batch.y);
        all_probs.push(probs);
    }
    let probs = Tensor::vstack(&all_probs.iter().collect::<Vec<_>>())?;
    let final_accuracy = metrics::accuracy(&probs, &labels)?;
    Ok(StreamResult { method: config.method, step_accuracy, step_confidence, probs, labels, final_accuracy, theta })
}
