//! Episodic meta-training of the classifier `θ` and the variational network `φ`.
//!
//! Each iteration holds out one source domain as a meta-target, trains `θ` on
//! the others, simulates a test-time update on the meta-target with labels
//! drawn from the posterior over class weights, and scores the updated model
//! on the true meta-target labels.
//!
//! Prototypes and the features fed to the neighbor-label classifier are read
//! from `θ_{s'}` as constants: `θ` learns only through the updated model, `φ`
//! through the sampled labels, the KL term and the neighbor-label loss.

use alloc::format;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::autodiff::{inner_update, GradMap, Tape, UpdateMode, Var};
use crate::data::{self, Batch, LabeledSet};
use crate::error::{invalid, Error, Result};
use crate::metrics;
use crate::nn::{self, MlpParams, MlpVars};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;
use crate::vnl::{self, LabelMode, Prototypes, SampledLabels, WGaussian};

/// How `φ` receives gradient through the sampled labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelGradient {
    /// Straight-through Gumbel-softmax.
    GumbelSt,
    /// Train on the neighbor-label distribution itself.
    Soft,
    /// Categorical draw without a gradient path; `φ` learns from the KL and
    /// neighbor-label terms only.
    HardDetached,
    /// Categorical draw plus a REINFORCE surrogate on the meta-target loss.
    ScoreFunction,
}

impl LabelGradient {
    pub fn name(self) -> &'static str {
        match self {
            Self::GumbelSt => "gumbel_st",
            Self::Soft => "soft",
            Self::HardDetached => "hard_detached",
            Self::ScoreFunction => "score_function",
        }
    }

    fn sampling_mode(self) -> LabelMode {
        match self {
            Self::GumbelSt => LabelMode::GumbelSt,
            Self::Soft => LabelMode::Soft,
            Self::HardDetached | Self::ScoreFunction => LabelMode::Sampled,
        }
    }
}

impl FromStr for LabelGradient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::GumbelSt, Self::Soft, Self::HardDetached, Self::ScoreFunction]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown label gradient mode {:?}", s)))
    }
}

/// Sign of the meta-loss gradient in the `φ` update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhiSign {
    /// `φ − λ3 (∇L_ĉe + ∇L_meta)`
    Descent,
    /// `φ − λ3 (∇L_ĉe − ∇L_meta)`
    AscendMeta,
}

impl PhiSign {
    pub fn name(self) -> &'static str {
        match self {
            Self::Descent => "descent",
            Self::AscendMeta => "ascend_meta",
        }
    }
}

impl FromStr for PhiSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descent" => Ok(Self::Descent),
            "ascend_meta" => Ok(Self::AscendMeta),
            other => Err(invalid(format!("unknown phi sign mode {:?} (expected descent or ascend_meta)", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Meta-generalization (inner) step size.
    pub lambda1: f64,
    /// Meta-target step size for `θ`.
    pub lambda2: f64,
    /// Step size for `φ`.
    pub lambda3: f64,
    /// Meta-source step size.
    pub lr_source: f64,
    pub batch: usize,
    pub n_iter: usize,
    /// Meta-source SGD steps per iteration.
    pub k_ms: usize,
    pub mc_w: usize,
    pub mc_y: usize,
    pub label_gradient: LabelGradient,
    pub gumbel_tau: f64,
    pub second_order: bool,
    pub phi_sign: PhiSign,
    /// Global-norm clip applied to the `θ` and `φ` update directions; `0`
    /// disables clipping.
    pub grad_clip: f64,
    /// Hidden widths of `θ`; the last hidden layer is the feature layer.
    pub hidden: Vec<usize>,
    /// Hidden widths of `φ`; empty makes `φ` a single linear map.
    pub phi_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-4,
            lambda2: 5e-5,
            lambda3: 1e-4,
            lr_source: 1e-4,
            batch: 70,
            n_iter: 1000,
            k_ms: 1,
            mc_w: 1,
            mc_y: 1,
            label_gradient: LabelGradient::GumbelSt,
            gumbel_tau: 1.0,
            second_order: true,
            phi_sign: PhiSign::Descent,
            grad_clip: 0.0,
            hidden: alloc::vec![256, 128],
            phi_hidden: alloc::vec![128, 128],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lr_source", self.lr_source),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{} must be finite and >= 0, got {}", name, v)));
            }
        }
        if self.batch < 1 {
            return Err(invalid("training batch must be >= 1"));
        }
        if self.mc_w < 1 || self.mc_y < 1 {
            return Err(invalid("Monte-Carlo sample counts must be >= 1"));
        }
        if !(self.gumbel_tau > 0.0) {
            return Err(invalid("gumbel temperature must be > 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.phi_hidden.contains(&0) {
            return Err(invalid("hidden widths must be nonempty and positive"));
        }
        Ok(())
    }

    pub fn update_mode(&self) -> UpdateMode {
        if self.second_order {
            UpdateMode::FullSecondOrder
        } else {
            UpdateMode::FirstOrder
        }
    }

    /// `"erm"` when the inner step is switched off, `"meta"` otherwise.
    pub fn variant(&self) -> &'static str {
        if self.lambda1 == 0.0 && !self.second_order {
            "erm"
        } else {
            "meta"
        }
    }

    pub fn theta_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut d = alloc::vec![input];
        d.extend_from_slice(&self.hidden);
        d.push(classes);
        d
    }

    pub fn phi_dims(&self, feature: usize, classes: usize) -> Vec<usize> {
        let mut d = alloc::vec![feature + classes];
        d.extend_from_slice(&self.phi_hidden);
        d.push(2 * feature);
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub meta_source_loss: f64,
    pub meta_target_ce: f64,
    pub kl_term: f64,
    /// Value of the full meta-target objective.
    pub meta_loss: f64,
    /// Neighbor-label loss against the true labels.
    pub neighbor_ce: f64,
    /// Agreement of the sampled labels with the true meta-target labels.
    pub yhat_accuracy: f64,
    /// Accuracy of the updated model on the meta-target batch.
    pub target_accuracy: f64,
}

/// `steps` SGD steps on the batch's cross-entropy. Returns the new snapshot
/// and the loss before the last step.
pub fn meta_source_step(theta: &MlpParams, batch: &Batch, lr: f64, steps: usize) -> Result<(MlpParams, f64)> {
    let targets = Tensor::one_hot(&batch.y, theta.output_dim())?;
    let mut cur = theta.clone();
    let mut loss = nn::cross_entropy(&nn::predict_probs(theta, &batch.x)?, &targets)?;
    for _ in 0..steps {
        let (l, g) = nn::ce_value_and_grad(&cur, &batch.x, &targets)?;
        loss = l;
        cur = nn::sgd_step(&cur, &g, lr)?;
    }
    Ok((cur, loss))
}

/// One cross-entropy step against sampled labels.
pub fn meta_generalize(theta: &MlpParams, x: &Tensor, labels: &SampledLabels, lambda1: f64) -> Result<MlpParams> {
    let (_, g) = nn::ce_value_and_grad(theta, x, &labels.labels)?;
    nn::sgd_step(theta, &g, lambda1)
}

/// Returns `(CE on true labels, KL(q‖p))`; the objective is their sum.
pub fn meta_target_objective(theta_star: &MlpParams, x: &Tensor, y: &[usize], q: &WGaussian, p: &WGaussian) -> Result<(f64, f64)> {
    let targets = Tensor::one_hot(y, theta_star.output_dim())?;
    let ce = nn::cross_entropy(&nn::predict_probs(theta_star, x)?, &targets)?;
    Ok((ce, vnl::kl_diag_gaussians(q, p)?))
}

pub fn update_theta(theta_source: &MlpParams, grad: &GradMap, lambda2: f64) -> Result<MlpParams> {
    nn::sgd_step(theta_source, grad, lambda2)
}

pub fn update_phi(phi: &MlpParams, grad_ce: &GradMap, grad_meta: &GradMap, lambda3: f64, sign: PhiSign) -> Result<MlpParams> {
    nn::sgd_step(phi, &phi_direction(grad_ce, grad_meta, sign)?, lambda3)
}

/// `∇L_ĉe ± ∇L_meta` according to `sign`.
pub fn phi_direction(grad_ce: &GradMap, grad_meta: &GradMap, sign: PhiSign) -> Result<GradMap> {
    if grad_ce.len() != grad_meta.len() {
        return Err(invalid("φ gradients cover different parameter sets"));
    }
    let s = match sign {
        PhiSign::Descent => 1.0,
        PhiSign::AscendMeta => -1.0,
    };
    let combined = grad_ce
        .tensors()
        .iter()
        .zip(grad_meta.tensors())
        .map(|(a, b)| a.zip_map(b, "update_phi", |x, y| x + s * y))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradMap::new(combined))
}

/// Rescales `g` to norm `max_norm` when it is longer; `max_norm = 0` is a no-op.
pub fn clip_grad(g: GradMap, max_norm: f64) -> GradMap {
    let norm = g.norm();
    if max_norm <= 0.0 || norm <= max_norm {
        return g;
    }
    let k = max_norm / norm;
    GradMap::new(g.into_tensors().into_iter().map(|t| t.scale(k)).collect())
}

/// Quantities read from `θ_{s'}` and held constant in an episode.
#[derive(Clone, Debug)]
pub struct EpisodeContext {
    pub features: Tensor,
    pub prior: Prototypes,
    pub posterior: Prototypes,
}

impl EpisodeContext {
    pub fn new(theta_source: &MlpParams, batch: &Batch) -> Result<Self> {
        let features = nn::forward_features(theta_source, &batch.x)?;
        let probs = nn::softmax(&nn::forward_logits(theta_source, &batch.x)?)?;
        let head = theta_source.head();
        Ok(Self {
            prior: vnl::prior_prototypes(&features, &probs, head)?,
            posterior: vnl::posterior_prototypes(&features, &batch.y, theta_source.output_dim(), head)?,
            features,
        })
    }
}

/// Generators consumed by one episode's sampling.
pub struct EpisodeRngs<'a> {
    pub w: &'a mut Rng,
    pub labels: &'a mut Rng,
}

/// Everything one meta-target episode produces.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub grad_theta: GradMap,
    pub grad_phi_meta: GradMap,
    pub grad_phi_ce: GradMap,
    pub meta_target_ce: f64,
    pub kl: f64,
    pub meta_loss: f64,
    pub neighbor_ce: f64,
    pub yhat_accuracy: f64,
    pub target_accuracy: f64,
}

/// Records the meta-target objective for parameters `theta` (at `θ_{s'}`)
/// and `phi` with the episode's constants, then differentiates it.
pub fn episode_gradients(
    theta: &MlpParams,
    phi: &MlpParams,
    ctx: &EpisodeContext,
    batch: &Batch,
    config: &TrainConfig,
    rngs: EpisodeRngs<'_>,
) -> Result<EpisodeOutcome> {
    let classes = theta.output_dim();
    let mut tape = Tape::new();
    let tv = MlpVars::load(&mut tape, theta)?;
    let pv = MlpVars::load(&mut tape, phi)?;
    let x = tape.constant(batch.x.clone())?;
    let y = tape.constant(Tensor::one_hot(&batch.y, classes)?)?;
    let feats = tape.constant(ctx.features.clone())?;

    let q = vnl::variational_w_on_tape(&mut tape, &pv, &ctx.posterior)?;
    let p = vnl::variational_w_on_tape(&mut tape, &pv, &ctx.prior)?;
    let kl = vnl::kl_on_tape(&mut tape, &q, &p)?;

    let mode = config.label_gradient.sampling_mode();
    let mut outer_terms: Vec<Var> = Vec::new();
    let mut surrogates: Vec<Var> = Vec::new();
    let mut nb_terms: Vec<Var> = Vec::new();
    let mut first_classes: Option<Vec<usize>> = None;
    let mut target_probs: Option<Tensor> = None;
    for _ in 0..config.mc_w {
        let w = vnl::sample_w_on_tape(&mut tape, &q, rngs.w)?;
        let nb_logits = vnl::neighbor_logits_on_tape(&mut tape, w, feats)?;
        nb_terms.push(nn::cross_entropy_with_logits(&mut tape, nb_logits, y)?);
        for _ in 0..config.mc_y {
            let (yhat, classes_drawn) = vnl::sample_labels_on_tape(&mut tape, nb_logits, mode, rngs.labels, config.gumbel_tau)?;
            let inner_logits = tv.logits(&mut tape, x)?;
            let inner = nn::cross_entropy_with_logits(&mut tape, inner_logits, yhat)?;
            let star = inner_update(&mut tape, &tv.vars(), inner, config.lambda1, config.update_mode())?;
            let star = MlpVars::from_vars(&star, theta.split_index())?;
            let outer_logits = star.logits(&mut tape, x)?;
            let outer = nn::cross_entropy_with_logits(&mut tape, outer_logits, y)?;
            if config.label_gradient == LabelGradient::ScoreFunction {
                let lp = tape.log_softmax(nb_logits)?;
                let picked = tape.constant(Tensor::one_hot(&classes_drawn, classes)?)?;
                let sel = tape.mul(picked, lp)?;
                let logq = tape.sum(sel)?;
                let frozen = tape.detach(logq)?;
                let centered = tape.sub(logq, frozen)?;
                let reward = tape.scalar(outer);
                surrogates.push(tape.scale(centered, reward)?);
            }
            if first_classes.is_none() {
                first_classes = Some(classes_drawn);
                target_probs = Some(tape.value(outer_logits).softmax_rows()?);
            }
            outer_terms.push(outer);
        }
    }
    let ce = mean_of(&mut tape, &outer_terms)?;
    let nb = mean_of(&mut tape, &nb_terms)?;
    let mut meta = tape.add(ce, kl)?;
    if !surrogates.is_empty() {
        let s = mean_of(&mut tape, &surrogates)?;
        meta = tape.add(meta, s)?;
    }

    let theta_vars = tv.vars();
    let phi_vars = pv.vars();
    let mut wrt = theta_vars.clone();
    wrt.extend_from_slice(&phi_vars);
    let mut grads = tape.backward(meta, &wrt)?;
    let grad_phi_meta = GradMap::new(grads.split_off(theta_vars.len()));
    let grad_theta = GradMap::new(grads);
    let grad_phi_ce = GradMap::new(tape.backward(nb, &phi_vars)?);

    let truth = &batch.y;
    Ok(EpisodeOutcome {
        grad_theta,
        grad_phi_meta,
        grad_phi_ce,
        meta_target_ce: tape.scalar(ce),
        kl: tape.scalar(kl),
        meta_loss: tape.scalar(meta),
        neighbor_ce: tape.scalar(nb),
        yhat_accuracy: hit_rate(first_classes.as_deref().unwrap_or(&[]), truth),
        target_accuracy: metrics::accuracy(target_probs.as_ref().expect("at least one sample"), truth)?,
    })
}

fn hit_rate(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    if terms.len() == 1 {
        Ok(acc)
    } else {
        tape.scale(acc, 1.0 / terms.len() as f64)
    }
}

/// Generators of one training run, one per component.
pub struct TrainRngs {
    pub episode: Rng,
    pub batch: Rng,
    pub w: Rng,
    pub labels: Rng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        Self {
            episode: rng::stream(seed, Stream::Episode),
            batch: rng::stream(seed, Stream::Batch),
            w: rng::stream(seed, Stream::LatentW),
            labels: rng::stream(seed, Stream::Labels),
        }
    }
}

/// One full training iteration from `(θ, φ)`.
pub fn train_iteration(
    theta: &MlpParams,
    phi: &MlpParams,
    sources: &[LabeledSet],
    config: &TrainConfig,
    rngs: &mut TrainRngs,
    iteration: usize,
) -> Result<(MlpParams, MlpParams, IterationLog)> {
    let episode = data::sample_episode(sources, &mut rngs.episode)?;
    let source_batch = data::sample_batch(&episode.meta_sources, config.batch, &mut rngs.batch)?;
    let (theta_s, l_ms) = meta_source_step(theta, &source_batch, config.lr_source, config.k_ms)?;
    let target_batch = data::sample_batch(&[episode.meta_target], config.batch, &mut rngs.batch)?;
    let ctx = EpisodeContext::new(&theta_s, &target_batch)?;
    let out = episode_gradients(
        &theta_s,
        phi,
        &ctx,
        &target_batch,
        config,
        EpisodeRngs { w: &mut rngs.w, labels: &mut rngs.labels },
    )?;
    let theta_next = update_theta(&theta_s, &clip_grad(out.grad_theta, config.grad_clip), config.lambda2)?;
    let phi_dir = phi_direction(&out.grad_phi_ce, &out.grad_phi_meta, config.phi_sign)?;
    let phi_next = nn::sgd_step(phi, &clip_grad(phi_dir, config.grad_clip), config.lambda3)?;
    let log = IterationLog {
        iteration,
        meta_source_loss: l_ms,
        meta_target_ce: out.meta_target_ce,
        kl_term: out.kl,
        meta_loss: out.meta_loss,
        neighbor_ce: out.neighbor_ce,
        yhat_accuracy: out.yhat_accuracy,
        target_accuracy: out.target_accuracy,
    };
    Ok((theta_next, phi_next, log))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct Trained {
    pub theta: MlpParams,
    pub phi: MlpParams,
    pub logs: Vec<IterationLog>,
}

/// Fresh `(θ, φ)` for the given input width and class count.
pub fn init_models(config: &TrainConfig, input: usize, classes: usize) -> Result<(MlpParams, MlpParams)> {
    let theta = nn::init_mlp(&config.theta_dims(input, classes), config.seed)?;
    let phi = nn::init_mlp_with(&config.phi_dims(theta.feature_dim(), classes), &mut rng::stream(config.seed, Stream::Phi))?;
    Ok((theta, phi))
}

fn check_sources(sources: &[LabeledSet]) -> Result<(usize, usize)> {
    let first = sources.first().ok_or_else(|| invalid("no source domains"))?;
    if sources.len() < 2 {
        return Err(invalid(format!("episodic meta-learning needs at least 2 source domains, got {}", sources.len())));
    }
    if sources.iter().any(|s| s.input_dim() != first.input_dim() || s.num_classes != first.num_classes || s.is_empty()) {
        return Err(invalid("source domains disagree on input width or class count, or one is empty"));
    }
    Ok((first.input_dim(), first.num_classes))
}

pub fn train_meta(config: &TrainConfig, sources: &[LabeledSet]) -> Result<Trained> {
    train_meta_with(config, sources, None, |_, _, _| Ok(()))
}

/// [`train_meta`] with optional starting parameters and a hook called after
/// every iteration with the iteration number (1-based) and the new `(θ, φ)`.
pub fn train_meta_with<H>(
    config: &TrainConfig,
    sources: &[LabeledSet],
    start: Option<(MlpParams, MlpParams)>,
    mut hook: H,
) -> Result<Trained>
where
    H: FnMut(usize, &MlpParams, &MlpParams) -> Result<()>,
{
    config.validate()?;
    let (input, classes) = check_sources(sources)?;
    let (mut theta, mut phi) = match start {
        Some(p) => p,
        None => init_models(config, input, classes)?,
    };
    let mut rngs = TrainRngs::new(config.seed);
    let mut logs = Vec::with_capacity(config.n_iter);
    for it in 0..config.n_iter {
        let (t, p, log) = train_iteration(&theta, &phi, sources, config, &mut rngs, it)?;
        theta = t;
        phi = p;
        logs.push(log);
        hook(it + 1, &theta, &phi)?;
    }
    Ok(Trained { theta, phi, logs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_grad;
    use crate::nn::init_mlp;
    use alloc::vec;

    fn blobs(seed: u64) -> Vec<LabeledSet> {
        data::build_blob_domains(3, &[0.0, 20.0, 40.0], 30, 0.25, seed).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig { hidden: vec![8, 6], phi_hidden: vec![8], batch: 24, n_iter: 5, ..TrainConfig::default() }
    }

    #[test]
    fn parse_modes() {
        assert_eq!("hard_detached".parse::<LabelGradient>().unwrap(), LabelGradient::HardDetached);
        assert!("relaxed".parse::<LabelGradient>().is_err());
        assert_eq!("ascend_meta".parse::<PhiSign>().unwrap(), PhiSign::AscendMeta);
        assert!("up".parse::<PhiSign>().is_err());
    }

    #[test]
    fn meta_source_step_basics() {
        let d = blobs(1);
        let theta = init_mlp(&[2, 8, 3], 2).unwrap();
        let b = d[0].subset(&(0..90).collect::<Vec<_>>()).unwrap();
        assert_eq!(meta_source_step(&theta, &b, 0.0, 1).unwrap().0, theta);
        let (next, before) = meta_source_step(&theta, &b, 1e-2, 1).unwrap();
        let after = nn::cross_entropy(&nn::predict_probs(&next, &b.x).unwrap(), &Tensor::one_hot(&b.y, 3).unwrap()).unwrap();
        assert!(after < before);
    }

    #[test]
    fn meta_source_gradient_matches_finite_differences() {
        let d = blobs(4);
        let theta = init_mlp(&[2, 5, 3], 7).unwrap();
        let b = d[1].subset(&[0, 5, 40, 70, 89]).unwrap();
        let t = Tensor::one_hot(&b.y, 3).unwrap();
        let (_, g) = nn::ce_value_and_grad(&theta, &b.x, &t).unwrap();
        let fd = finite_diff_grad(
            |p| nn::cross_entropy(&nn::predict_probs(&theta.with_tensors(p.to_vec())?, &b.x)?, &t),
            &theta.tensors(),
            1e-6,
        )
        .unwrap();
        for (a, e) in g.tensors().iter().zip(fd.tensors()) {
            assert!(a.sub(e).unwrap().max_abs() < 1e-7);
        }
    }

    #[test]
    fn meta_generalize_fixed_points() {
        let theta = init_mlp(&[2, 4, 2], 3).unwrap();
        let x = Tensor::from_rows(&[&[0.5, -0.2], &[1.0, 1.0]]).unwrap();
        let labels = SampledLabels { labels: Tensor::one_hot(&[0, 1], 2).unwrap(), mode: LabelMode::Hard };
        assert_eq!(meta_generalize(&theta, &x, &labels, 0.0).unwrap(), theta);
        // saturated head: predictions are already one-hot on the sampled labels
        let mut t = theta.tensors();
        let n = t.len();
        t[n - 2] = Tensor::zeros(&[2, 4]);
        t[n - 1] = Tensor::vector(vec![60.0, 0.0]);
        let sat = theta.with_tensors(t).unwrap();
        let own = SampledLabels { labels: Tensor::one_hot(&[0, 0], 2).unwrap(), mode: LabelMode::Hard };
        let star = meta_generalize(&sat, &x, &own, 1e-2).unwrap();
        for (a, b) in star.tensors().iter().zip(sat.tensors()) {
            assert!(a.sub(&b).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn objective_decomposes() {
        let theta = init_mlp(&[2, 4, 2], 3).unwrap();
        let x = Tensor::from_rows(&[&[0.5, -0.2], &[1.0, 1.0]]).unwrap();
        let g = WGaussian { mean: Tensor::from_rows(&[&[0.1], &[0.4]]).unwrap(), std: Tensor::full(&[2, 1], 0.5) };
        let (ce, kl) = meta_target_objective(&theta, &x, &[0, 1], &g, &g).unwrap();
        assert_eq!(kl, 0.0);
        let h = WGaussian { mean: g.mean.clone(), std: Tensor::full(&[2, 1], 0.9) };
        let (ce2, kl2) = meta_target_objective(&theta, &x, &[0, 1], &g, &h).unwrap();
        assert_eq!(ce, ce2);
        assert!(ce2 + kl2 >= ce2);
    }

    #[test]
    fn phi_update_modes() {
        let phi = init_mlp(&[3, 2], 1).unwrap();
        let zero = GradMap::new(phi.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect());
        let gm = GradMap::new(phi.tensors().iter().map(|t| t.map(|_| 0.25)).collect());
        let gc = GradMap::new(phi.tensors().iter().map(|t| t.map(|_| -1.0)).collect());
        assert_eq!(update_phi(&phi, &zero, &zero, 0.1, PhiSign::Descent).unwrap(), phi);
        assert_eq!(update_phi(&phi, &gc, &gm, 0.0, PhiSign::AscendMeta).unwrap(), phi);
        let a = update_phi(&phi, &gc, &gm, 0.1, PhiSign::Descent).unwrap();
        let b = update_phi(&phi, &gc, &gm, 0.1, PhiSign::AscendMeta).unwrap();
        for (x, y) in b.tensors().iter().zip(a.tensors()) {
            let diff = x.sub(&y).unwrap();
            assert!(diff.data().iter().all(|v| (v - 2.0 * 0.1 * 0.25).abs() < 1e-15));
        }
        assert_eq!(update_theta(&phi, &gm, 0.0).unwrap(), phi);
        assert_eq!(clip_grad(gm.clone(), 0.0), gm);
        assert_eq!(clip_grad(gm.clone(), 1e9), gm);
        assert!((clip_grad(gm, 0.1).norm() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_and_single_source() {
        let d = blobs(2);
        let cfg = TrainConfig { n_iter: 0, ..small_config() };
        let out = train_meta(&cfg, &d).unwrap();
        let (t0, p0) = init_models(&cfg, 2, 3).unwrap();
        assert_eq!(out.theta, t0);
        assert_eq!(out.phi, p0);
        assert!(train_meta(&small_config(), &d[..1]).is_err());
    }

    #[test]
    fn training_is_deterministic_and_decomposes() {
        let d = blobs(3);
        let cfg = TrainConfig { lambda1: 0.1, lambda2: 0.1, lambda3: 0.05, lr_source: 0.1, ..small_config() };
        let a = train_meta(&cfg, &d).unwrap();
        let b = train_meta(&cfg, &d).unwrap();
        assert_eq!(a.logs, b.logs);
        assert_eq!(a.theta, b.theta);
        for l in &a.logs {
            assert_eq!(l.meta_loss, l.meta_target_ce + l.kl_term);
            assert!(l.kl_term >= -1e-12);
        }
    }

    #[test]
    fn erm_variant_matches_episodic_supervised_reference() {
        let d = blobs(5);
        let cfg = TrainConfig { lambda1: 0.0, second_order: false, lambda2: 0.05, lambda3: 0.05, lr_source: 0.1, n_iter: 6, ..small_config() };
        assert_eq!(cfg.variant(), "erm");
        let out = train_meta(&cfg, &d).unwrap();

        let (mut theta, _) = init_models(&cfg, 2, 3).unwrap();
        let mut rngs = TrainRngs::new(cfg.seed);
        for _ in 0..cfg.n_iter {
            let ep = data::sample_episode(&d, &mut rngs.episode).unwrap();
            let sb = data::sample_batch(&ep.meta_sources, cfg.batch, &mut rngs.batch).unwrap();
            let (ts, _) = meta_source_step(&theta, &sb, cfg.lr_source, cfg.k_ms).unwrap();
            let tb = data::sample_batch(&[ep.meta_target], cfg.batch, &mut rngs.batch).unwrap();
            let (_, g) = nn::ce_value_and_grad(&ts, &tb.x, &Tensor::one_hot(&tb.y, 3).unwrap()).unwrap();
            theta = nn::sgd_step(&ts, &g, cfg.lambda2).unwrap();
        }
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn correct_saturated_labels_reduce_to_supervised_gradient() {
        // head saturated on class 0, every meta-target label 0, and a φ whose
        // class-0 weight mean dominates: the sampled labels equal the truth
        // and the inner step is a no-op
        let x = Tensor::from_rows(&[&[0.3, 0.1], &[0.9, -0.4], &[0.5, 0.5]]).unwrap();
        let batch = Batch { x: x.clone(), y: vec![0, 0, 0] };
        let base = init_mlp(&[2, 4, 2], 11).unwrap();
        let mut t = base.tensors();
        t[2] = Tensor::zeros(&[2, 4]);
        t[3] = Tensor::vector(vec![60.0, 0.0]);
        let theta = base.with_tensors(t).unwrap();

        let mut w1 = Tensor::zeros(&[5, 6]);
        w1.data_mut()[4] = 1.0;
        let mut w2 = Tensor::zeros(&[5, 5]);
        w2.data_mut()[0] = 1.0;
        let mut w3 = Tensor::zeros(&[8, 5]);
        for r in 0..4 {
            w3.data_mut()[r * 5] = 50.0;
        }
        let b3 = Tensor::vector(vec![0.0, 0.0, 0.0, 0.0, -50.0, -50.0, -50.0, -50.0]);
        let phi = init_mlp(&[6, 5, 5, 8], 2)
            .unwrap()
            .with_tensors(vec![w1, Tensor::zeros(&[5]), w2, Tensor::zeros(&[5]), w3, b3])
            .unwrap();

        let mut ctx = EpisodeContext::new(&theta, &batch).unwrap();
        ctx.features = Tensor::full(&[3, 4], 1.0);
        let cfg = TrainConfig { lambda1: 0.5, label_gradient: LabelGradient::HardDetached, ..small_config() };
        let mut w = rng::stream(1, Stream::LatentW);
        let mut l = rng::stream(1, Stream::Labels);
        let out = episode_gradients(&theta, &phi, &ctx, &batch, &cfg, EpisodeRngs { w: &mut w, labels: &mut l }).unwrap();
        assert_eq!(out.yhat_accuracy, 1.0);
        let (_, plain) = nn::ce_value_and_grad(&theta, &x, &Tensor::one_hot(&[0, 0, 0], 2).unwrap()).unwrap();
        for (a, b) in out.grad_theta.tensors().iter().zip(plain.tensors()) {
            assert!(a.sub(b).unwrap().max_abs() < 1e-12);
        }
    }
}
