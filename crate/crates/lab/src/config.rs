//! JSON experiment configuration.
//!
//! Every key is optional; an empty object selects the defaults. Unknown keys
//! are rejected and errors name the offending key path. Relative dataset
//! paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vnl_core::data::{DEFAULT_SOURCE_ANGLES, DEFAULT_TARGET_ANGLES};
use vnl_core::meta::{self, TrainConfig};
use vnl_core::metrics::DEFAULT_ECE_BINS;
use vnl_core::ttg::{Method, TtgConfig};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainSection,
    pub ttg: TtgSection,
    /// Default output directory when the command line gives none.
    pub out_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            train: TrainSection::default(),
            ttg: TtgSection::default(),
            out_dir: None,
            seeds: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Blobs(BlobSpec),
    Idx(IdxSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self::Blobs(BlobSpec::default())
    }
}

impl DatasetSpec {
    pub fn source_angles(&self) -> &[f64] {
        match self {
            Self::Blobs(b) => &b.source_angles,
            Self::Idx(i) => &i.source_angles,
        }
    }

    pub fn target_angles(&self) -> &[f64] {
        match self {
            Self::Blobs(b) => &b.target_angles,
            Self::Idx(i) => &i.target_angles,
        }
    }
}

/// Rotated two-dimensional Gaussian blobs. Domains of run seed `s` are drawn
/// with data seed `data_seed + s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub source_angles: Vec<f64>,
    pub target_angles: Vec<f64>,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            n_per_class: 200,
            noise: 0.35,
            data_seed: 1000,
            source_angles: DEFAULT_SOURCE_ANGLES.to_vec(),
            target_angles: DEFAULT_TARGET_ANGLES.to_vec(),
        }
    }
}

/// Rotated images from an IDX image/label pair. The images are put in a
/// random order drawn from `split_seed`; the first `len - target_holdout` are
/// rotated into every source angle, the rest into every target angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdxSpec {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub num_classes: usize,
    /// Use only the first `limit` images.
    pub limit: Option<usize>,
    pub target_holdout: usize,
    pub split_seed: u64,
    pub source_angles: Vec<f64>,
    pub target_angles: Vec<f64>,
}

impl Default for IdxSpec {
    fn default() -> Self {
        Self {
            images: PathBuf::new(),
            labels: PathBuf::new(),
            num_classes: 10,
            limit: None,
            target_holdout: 1000,
            split_seed: 0,
            source_angles: DEFAULT_SOURCE_ANGLES.to_vec(),
            target_angles: DEFAULT_TARGET_ANGLES.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelGradientKey {
    GumbelSt,
    Soft,
    HardDetached,
    ScoreFunction,
}

impl From<LabelGradientKey> for meta::LabelGradient {
    fn from(k: LabelGradientKey) -> Self {
        match k {
            LabelGradientKey::GumbelSt => Self::GumbelSt,
            LabelGradientKey::Soft => Self::Soft,
            LabelGradientKey::HardDetached => Self::HardDetached,
            LabelGradientKey::ScoreFunction => Self::ScoreFunction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiSignKey {
    Descent,
    AscendMeta,
}

impl From<PhiSignKey> for meta::PhiSign {
    fn from(k: PhiSignKey) -> Self {
        match k {
            PhiSignKey::Descent => Self::Descent,
            PhiSignKey::AscendMeta => Self::AscendMeta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lr_source: f64,
    pub batch: usize,
    pub n_iter: usize,
    pub k_ms: usize,
    pub mc_w: usize,
    pub mc_y: usize,
    pub label_gradient: LabelGradientKey,
    pub gumbel_tau: f64,
    pub second_order: bool,
    pub phi_sign: PhiSignKey,
    pub grad_clip: f64,
    pub hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    /// Write an intermediate checkpoint every this many iterations; 0 keeps
    /// only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lambda3: d.lambda3,
            lr_source: d.lr_source,
            batch: d.batch,
            n_iter: d.n_iter,
            k_ms: d.k_ms,
            mc_w: d.mc_w,
            mc_y: d.mc_y,
            label_gradient: LabelGradientKey::GumbelSt,
            gumbel_tau: d.gumbel_tau,
            second_order: d.second_order,
            phi_sign: PhiSignKey::Descent,
            grad_clip: d.grad_clip,
            hidden: d.hidden,
            phi_hidden: d.phi_hidden,
            checkpoint_every: 0,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lr_source: self.lr_source,
            batch: self.batch,
            n_iter: self.n_iter,
            k_ms: self.k_ms,
            mc_w: self.mc_w,
            mc_y: self.mc_y,
            label_gradient: self.label_gradient.into(),
            gumbel_tau: self.gumbel_tau,
            second_order: self.second_order,
            phi_sign: self.phi_sign.into(),
            grad_clip: self.grad_clip,
            hidden: self.hidden.clone(),
            phi_hidden: self.phi_hidden.clone(),
            seed,
        }
    }

    /// The same section with the inner step switched off.
    pub fn erm(&self) -> Self {
        Self { lambda1: 0.0, second_order: false, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtgSection {
    pub lr: f64,
    pub batch: usize,
    pub mc_predict: usize,
    pub episodic_reset: bool,
    pub ece_bins: usize,
}

impl Default for TtgSection {
    fn default() -> Self {
        let d = TtgConfig::default();
        Self { lr: d.lr, batch: d.batch, mc_predict: d.mc_predict, episodic_reset: d.episodic_reset, ece_bins: DEFAULT_ECE_BINS }
    }
}

impl TtgSection {
    pub fn to_config(&self, method: Method, batch: usize, seed: u64) -> TtgConfig {
        TtgConfig { method, lr: self.lr, batch, mc_predict: self.mc_predict, seed, episodic_reset: self.episodic_reset }
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config_str(&text, base).map_err(|e| match e {
        LabError::Config(msg) => LabError::Config(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

/// Parses a config document; relative dataset paths are joined onto `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            LabError::Config(e.inner().to_string())
        } else {
            LabError::Config(format!("at `{}`: {}", path, e.inner()))
        }
    })?;
    if let DatasetSpec::Idx(spec) = &mut config.dataset {
        spec.images = base.join(&spec.images);
        spec.labels = base.join(&spec.labels);
    }
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LabError::Config(msg));
        if self.seeds.is_empty() {
            return bad("`seeds` must list at least one seed".into());
        }
        self.train.to_config(0).validate().map_err(|e| LabError::Config(format!("at `train`: {}", e)))?;
        self.ttg
            .to_config(Method::Vnl, self.ttg.batch, 0)
            .validate()
            .map_err(|e| LabError::Config(format!("at `ttg`: {}", e)))?;
        if self.ttg.ece_bins < 1 {
            return bad("at `ttg.ece_bins`: need at least one bin".into());
        }
        let (src, tgt) = (self.dataset.source_angles(), self.dataset.target_angles());
        if src.len() < 2 {
            return bad("at `dataset.source_angles`: episodic training needs at least 2 source domains".into());
        }
        if tgt.is_empty() {
            return bad("at `dataset.target_angles`: need at least one target domain".into());
        }
        match &self.dataset {
            DatasetSpec::Blobs(b) => {
                if b.classes < 2 || b.n_per_class < 1 || !(b.noise >= 0.0) {
                    return bad("at `dataset`: blobs need classes >= 2, n_per_class >= 1 and noise >= 0".into());
                }
            }
            DatasetSpec::Idx(i) => {
                for (key, p) in [("images", &i.images), ("labels", &i.labels)] {
                    if !p.is_file() {
                        return bad(format!("at `dataset.{}`: file {} does not exist", key, p.display()));
                    }
                }
                if i.num_classes < 2 || i.target_holdout < 1 {
                    return bad("at `dataset`: need num_classes >= 2 and target_holdout >= 1".into());
                }
            }
        }
        Ok(())
    }
}
