//! Checkpoint files: one line of UTF-8 JSON manifest, then the raw
//! little-endian `f64` data of every tensor in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vnl_core::nn::{Linear, MlpParams};
use vnl_core::Tensor;

use crate::error::{LabError, Result};
use crate::output::write_atomic;

pub const FORMAT: &str = "vnl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `"meta"` or `"erm"`.
    pub variant: String,
    pub seed: u64,
    /// Training iterations behind these parameters.
    pub iteration: usize,
    pub theta: MlpParams,
    pub phi: MlpParams,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    variant: String,
    seed: u64,
    iteration: usize,
    models: Vec<ModelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    name: String,
    dims: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn entry(name: &str, p: &MlpParams) -> ModelEntry {
    let tensors = p
        .tensor_names()
        .into_iter()
        .zip(p.tensors())
        .map(|(name, t)| TensorEntry { name, shape: t.shape().to_vec() })
        .collect();
    ModelEntry { name: name.into(), dims: p.dims(), tensors }
}

fn mismatch(msg: impl Into<String>) -> LabError {
    LabError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            variant: self.variant.clone(),
            seed: self.seed,
            iteration: self.iteration,
            models: vec![entry("theta", &self.theta), entry("phi", &self.phi)],
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        for p in [&self.theta, &self.phi] {
            for t in p.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| mismatch("missing manifest line"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| mismatch(format!("bad manifest: {}", e)))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(mismatch(format!(
                "unsupported format {:?} version {} (expected {:?} version {})",
                manifest.format, manifest.version, FORMAT, VERSION
            )));
        }
        let names: Vec<&str> = manifest.models.iter().map(|m| m.name.as_str()).collect();
        if names != ["theta", "phi"] {
            return Err(mismatch(format!("expected models [theta, phi], found {:?}", names)));
        }
        let mut payload = &bytes[nl + 1..];
        let mut models = Vec::with_capacity(2);
        for m in &manifest.models {
            models.push(read_model(m, &mut payload)?);
        }
        if !payload.is_empty() {
            return Err(mismatch(format!("{} unexpected trailing bytes", payload.len())));
        }
        let phi = models.pop().expect("two models");
        let theta = models.pop().expect("two models");
        if phi.input_dim() != theta.feature_dim() + theta.output_dim() || phi.output_dim() != 2 * theta.feature_dim() {
            return Err(mismatch(format!("phi dims {:?} do not fit theta dims {:?}", phi.dims(), theta.dims())));
        }
        Ok(Self { variant: manifest.variant, seed: manifest.seed, iteration: manifest.iteration, theta, phi })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| mismatch(format!("cannot read {}: {}", path.display(), e)))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            LabError::Checkpoint(msg) => mismatch(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }

    /// Fails unless `θ` maps `input_dim` features to `num_classes` outputs.
    pub fn expect_task(&self, input_dim: usize, num_classes: usize) -> Result<()> {
        if self.theta.input_dim() != input_dim || self.theta.output_dim() != num_classes {
            return Err(mismatch(format!(
                "checkpoint maps {} inputs to {} classes, data has {} inputs and {} classes",
                self.theta.input_dim(),
                self.theta.output_dim(),
                input_dim,
                num_classes
            )));
        }
        Ok(())
    }
}

fn read_model(m: &ModelEntry, payload: &mut &[u8]) -> Result<MlpParams> {
    if m.dims.len() < 2 {
        return Err(mismatch(format!("model {} needs at least two dims", m.name)));
    }
    let layers = m.dims.len() - 1;
    if m.tensors.len() != 2 * layers {
        return Err(mismatch(format!("model {} lists {} tensors for {} layers", m.name, m.tensors.len(), layers)));
    }
    let mut out = Vec::with_capacity(layers);
    for i in 0..layers {
        let (fan_in, fan_out) = (m.dims[i], m.dims[i + 1]);
        let expect = [
            (format!("layers.{}.weight", i), vec![fan_out, fan_in]),
            (format!("layers.{}.bias", i), vec![fan_out]),
        ];
        let mut pair = Vec::with_capacity(2);
        for (k, (name, shape)) in expect.into_iter().enumerate() {
            let t = &m.tensors[2 * i + k];
            if t.name != name || t.shape != shape {
                return Err(mismatch(format!(
                    "model {} tensor {} is {:?} {:?}, expected {:?} {:?}",
                    m.name,
                    2 * i + k,
                    t.name,
                    t.shape,
                    name,
                    shape
                )));
            }
            let n: usize = shape.iter().product();
            if payload.len() < 8 * n {
                return Err(mismatch(format!("payload truncated in {} {}", m.name, name)));
            }
            let (head, rest) = payload.split_at(8 * n);
            *payload = rest;
            let data = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            pair.push(Tensor::new(shape, data)?);
        }
        let bias = pair.pop().expect("two tensors");
        let weight = pair.pop().expect("two tensors");
        out.push(Linear { weight, bias });
    }
    Ok(MlpParams::new(out, layers - 1)?)
}
