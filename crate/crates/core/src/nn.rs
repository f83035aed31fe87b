//! ReLU MLPs split into a feature extractor and a linear head, the loss zoo
//! and plain SGD.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{value_and_grad, GradMap, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

/// Probabilities below this floor are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance for a target row to count as a distribution.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Snapshot of an MLP. Layers before `split_index` form the feature
/// extractor (each followed by ReLU); the final layer is the linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Linear>,
    split_index: usize,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>, split_index: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("an MLP needs at least one layer"));
        }
        if split_index + 1 != layers.len() {
            return Err(invalid(format!(
                "the head must be the final layer: split {} with {} layers",
                split_index,
                layers.len()
            )));
        }
        for (i, l) in layers.iter().enumerate() {
            let (out, inp) = l.weight.dims2("mlp")?;
            if l.bias.shape() != [out] {
                return Err(Error::Shape { op: "mlp", detail: format!("layer {} bias {:?} for {} outputs", i, l.bias.shape(), out) });
            }
            if i > 0 && layers[i - 1].weight.rows() != inp {
                return Err(Error::Shape {
                    op: "mlp",
                    detail: format!("layer {} takes {} inputs but layer {} emits {}", i, inp, i - 1, layers[i - 1].weight.rows()),
                });
            }
        }
        Ok(Self { layers, split_index })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.layers[0].weight.cols());
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    /// Width of the features fed to the head.
    pub fn feature_dim(&self) -> usize {
        self.head().weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.head().weight.rows()
    }

    pub fn head(&self) -> &Linear {
        &self.layers[self.split_index]
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    /// Flat parameter list `[w0, b0, w1, b1, ...]`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.layers.len()).flat_map(|i| [format!("layers.{}.weight", i), format!("layers.{}.bias", i)]).collect()
    }

    /// Same architecture, new values (in [`MlpParams::tensors`] order).
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.num_tensors() {
            return Err(invalid(format!("expected {} tensors, got {}", self.num_tensors(), tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let weight = it.next().expect("count checked");
            let bias = it.next().expect("count checked");
            if weight.shape() != l.weight.shape() || bias.shape() != l.bias.shape() {
                return Err(Error::Shape { op: "with_tensors", detail: format!("{:?}/{:?}", weight.shape(), bias.shape()) });
            }
            layers.push(Linear { weight, bias });
        }
        Ok(Self { layers, split_index: self.split_index })
    }
}

/// Glorot-uniform weights `U(±sqrt(6 / (fan_in + fan_out)))`, zero biases.
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpParams> {
    init_mlp_with(dims, &mut rng::stream(seed, Stream::Init))
}

/// [`init_mlp`] drawing from an explicit generator.
pub fn init_mlp_with(dims: &[usize], rng: &mut Rng) -> Result<MlpParams> {
    if dims.len() < 2 {
        return Err(invalid(format!("an MLP needs at least two widths, got {:?}", dims)));
    }
    if dims.contains(&0) {
        return Err(invalid(format!("zero-width layer in {:?}", dims)));
    }
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out).map(|_| (2.0 * rng::uniform(rng) - 1.0) * bound).collect();
            Ok(Linear { weight: Tensor::matrix(fan_out, fan_in, data)?, bias: Tensor::zeros(&[fan_out]) })
        })
        .collect::<Result<Vec<_>>>()?;
    MlpParams::new(layers, dims.len() - 2)
}

fn check_input(theta: &MlpParams, x: &Tensor) -> Result<()> {
    let (_, w) = x.dims2("forward")?;
    if w != theta.input_dim() {
        return Err(Error::Shape { op: "forward", detail: format!("input width {} for a {}-input network", w, theta.input_dim()) });
    }
    Ok(())
}

fn linear(l: &Linear, x: &Tensor) -> Result<Tensor> {
    Tensor::matmul(x, &l.weight, false, true)?.add_row_vector(&l.bias)
}

fn relu(t: Tensor) -> Tensor {
    t.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Activations after every pre-split layer, `[B, d]`.
pub fn forward_features(theta: &MlpParams, x: &Tensor) -> Result<Tensor> {
    check_input(theta, x)?;
    let mut h = x.clone();
    for l in &theta.layers[..theta.split_index] {
        h = relu(linear(l, &h)?);
    }
    Ok(h)
}

pub fn forward_logits(theta: &MlpParams, x: &Tensor) -> Result<Tensor> {
    let f = forward_features(theta, x)?;
    linear(theta.head(), &f)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.softmax_rows()
}

/// Forward pass straight to class probabilities.
pub fn predict_probs(theta: &MlpParams, x: &Tensor) -> Result<Tensor> {
    softmax(&forward_logits(theta, x)?)
}

pub(crate) fn check_simplex_rows(t: &Tensor, what: &'static str) -> Result<()> {
    for i in 0..t.rows() {
        let row = t.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < -SIMPLEX_TOL) {
            return Err(invalid(format!("{} row {} is not a distribution (sum {})", what, i, s)));
        }
    }
    Ok(())
}

/// Mean over the batch of `-Σ_c target_c · ln max(p_c, 1e-12)`.
pub fn cross_entropy(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::Shape { op: "cross_entropy", detail: format!("{:?} vs {:?}", probs.shape(), targets.shape()) });
    }
    let (b, _) = probs.dims2("cross_entropy")?;
    if b == 0 {
        return Err(invalid("cross-entropy of an empty batch"));
    }
    check_simplex_rows(targets, "target")?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { -t * math::ln(p.max(PROB_FLOOR)) })
        .sum();
    Ok(total / b as f64)
}

/// Mean over the batch of `-Σ_c p_c ln p_c`.
pub fn entropy_loss(probs: &Tensor) -> Result<f64> {
    let (b, _) = probs.dims2("entropy")?;
    if b == 0 {
        return Err(invalid("entropy of an empty batch"));
    }
    let total: f64 = probs.data().iter().map(|&p| if p <= 0.0 { 0.0 } else { -p * math::ln(p.max(PROB_FLOOR)) }).sum();
    Ok(total / b as f64)
}

/// `θ' = θ - lr · grads`; the input snapshot is left untouched.
pub fn sgd_step(theta: &MlpParams, grads: &GradMap, lr: f64) -> Result<MlpParams> {
    if !(lr >= 0.0) {
        return Err(invalid(format!("learning rate must be >= 0, got {}", lr)));
    }
    let params = theta.tensors();
    if grads.len() < params.len() {
        return Err(Error::MissingGradient(grads.len()));
    }
    if grads.len() > params.len() {
        return Err(invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    let updated = params
        .iter()
        .zip(grads.tensors())
        .map(|(p, g)| p.zip_map(g, "sgd_step", |a, b| a - lr * b))
        .collect::<Result<Vec<_>>>()?;
    theta.with_tensors(updated)
}

/// Parameter handles of an MLP recorded on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    split_index: usize,
}

impl MlpVars {
    /// Records every weight and bias as a leaf.
    pub fn load(tape: &mut Tape, theta: &MlpParams) -> Result<Self> {
        let layers = theta
            .layers
            .iter()
            .map(|l| Ok((tape.leaf(l.weight.clone())?, tape.leaf(l.bias.clone())?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, split_index: theta.split_index })
    }

    /// Rebuilds handles from a flat `[w0, b0, ...]` list.
    pub fn from_vars(vars: &[Var], split_index: usize) -> Result<Self> {
        if vars.len() % 2 != 0 || vars.len() / 2 != split_index + 1 {
            return Err(invalid(format!("{} tensors do not form {} layers", vars.len(), split_index + 1)));
        }
        Ok(Self { layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(), split_index })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    fn linear(&self, tape: &mut Tape, layer: usize, x: Var) -> Result<Var> {
        let (w, b) = self.layers[layer];
        let h = tape.matmul(x, w, false, true)?;
        tape.add_row_vector(h, b)
    }

    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.split_index {
            let z = self.linear(tape, i, h)?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    pub fn head(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.linear(tape, self.split_index, features)
    }

    pub fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let f = self.features(tape, x)?;
        self.head(tape, f)
    }

    /// Reads the current values back into a parameter snapshot.
    pub fn snapshot(&self, tape: &Tape, like: &MlpParams) -> Result<MlpParams> {
        like.with_tensors(self.vars().into_iter().map(|v| tape.value(v).clone()).collect())
    }
}

fn clamped_log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    tape.clamp_min(lp, math::ln(PROB_FLOOR))
}

/// Mean cross-entropy of `softmax(logits)` against target rows (one-hot or soft).
pub fn cross_entropy_with_logits(tape: &mut Tape, logits: Var, targets: Var) -> Result<Var> {
    let (b, _) = tape.value(logits).dims2("cross_entropy")?;
    if b == 0 {
        return Err(invalid("cross-entropy of an empty batch"));
    }
    if tape.value(targets).shape() != tape.value(logits).shape() {
        return Err(Error::Shape {
            op: "cross_entropy",
            detail: format!("{:?} vs {:?}", tape.value(logits).shape(), tape.value(targets).shape()),
        });
    }
    check_simplex_rows(tape.value(targets), "target")?;
    let lp = clamped_log_softmax(tape, logits)?;
    let prod = tape.mul(targets, lp)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / b as f64)
}

/// Cross-entropy of the network on `x` against `targets` and its gradient.
pub fn ce_value_and_grad(theta: &MlpParams, x: &Tensor, targets: &Tensor) -> Result<(f64, GradMap)> {
    value_and_grad(&theta.tensors(), |tape, vars| {
        let net = MlpVars::from_vars(vars, theta.split_index)?;
        let xv = tape.constant(x.clone())?;
        let logits = net.logits(tape, xv)?;
        let t = tape.constant(targets.clone())?;
        cross_entropy_with_logits(tape, logits, t)
    })
}

/// Mean prediction entropy of the network on `x` and its gradient.
pub fn entropy_value_and_grad(theta: &MlpParams, x: &Tensor) -> Result<(f64, GradMap)> {
    value_and_grad(&theta.tensors(), |tape, vars| {
        let net = MlpVars::from_vars(vars, theta.split_index)?;
        let xv = tape.constant(x.clone())?;
        let logits = net.logits(tape, xv)?;
        entropy_with_logits(tape, logits)
    })
}

/// Mean entropy of `softmax(logits)`.
pub fn entropy_with_logits(tape: &mut Tape, logits: Var) -> Result<Var> {
    let (b, _) = tape.value(logits).dims2("entropy")?;
    if b == 0 {
        return Err(invalid("entropy of an empty batch"));
    }
    let lp = tape.log_softmax(logits)?;
    let p = tape.exp(lp)?;
    let lpc = tape.clamp_min(lp, math::ln(PROB_FLOOR))?;
    let prod = tape.mul(p, lpc)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / b as f64)
}
