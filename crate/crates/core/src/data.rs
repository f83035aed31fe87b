//! Domains: IDX ingestion, rotation-synthesized domains, rotated Gaussian
//! blobs, leave-one-out splits, episode sampling and target streams.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

/// Source rotations of the rotated-MNIST protocol, in degrees.
pub const DEFAULT_SOURCE_ANGLES: [f64; 5] = [15.0, 30.0, 45.0, 60.0, 75.0];
/// Target rotations of the rotated-MNIST protocol, in degrees.
pub const DEFAULT_TARGET_ANGLES: [f64; 2] = [0.0, 90.0];

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Labeled samples of one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub num_classes: usize,
    pub domain_id: usize,
    pub angle_deg: f64,
}

impl LabeledSet {
    pub fn new(x: Tensor, y: Vec<usize>, num_classes: usize, domain_id: usize, angle_deg: f64) -> Result<Self> {
        let (n, _) = x.dims2("labeled_set")?;
        if n != y.len() {
            return Err(Error::Shape { op: "labeled_set", detail: format!("{} rows but {} labels", n, y.len()) });
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!("label {} outside [0, {})", bad, num_classes)));
        }
        Ok(Self { x, y, num_classes, domain_id, angle_deg })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Batch> {
        Ok(Batch { x: self.x.select_rows(idx)?, y: idx.iter().map(|&i| self.y[i]).collect() })
    }
}

/// A batch of inputs with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Decoded IDX payload.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Pixels scaled to `[0, 1]`, one image per row.
    Images { images: Tensor, rows: usize, cols: usize },
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let b = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Parse { offset: bytes.len(), reason: "truncated header".into() })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    let dims: Vec<usize> = match magic {
        IDX_IMAGES => (0..3).map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize)).collect::<Result<_>>()?,
        IDX_LABELS => vec![read_u32(bytes, 4)? as usize],
        other => {
            return Err(Error::Parse { offset: 0, reason: format!("unexpected magic 0x{:08x}", other) });
        }
    };
    let header = 4 + 4 * dims.len();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse { offset: 4, reason: format!("dimensions {:?} overflow", dims) })?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::Parse {
            offset: bytes.len(),
            reason: format!("truncated payload: expected {} bytes, found {}", count, payload.len()),
        });
    }
    if payload.len() > count {
        return Err(Error::Parse { offset: header + count, reason: "unexpected trailing bytes".into() });
    }
    Ok(match magic {
        IDX_IMAGES => {
            let (n, rows, cols) = (dims[0], dims[1], dims[2]);
            let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
            IdxData::Images { images: Tensor::matrix(n, rows * cols, data)?, rows, cols }
        }
        _ => IdxData::Labels(payload.to_vec()),
    })
}

/// Inverse of [`parse_idx`].
pub fn encode_idx(data: &IdxData) -> Vec<u8> {
    let mut out = Vec::new();
    match data {
        IdxData::Images { images, rows, cols } => {
            out.extend_from_slice(&IDX_IMAGES.to_be_bytes());
            for d in [images.rows(), *rows, *cols] {
                out.extend_from_slice(&(d as u32).to_be_bytes());
            }
            out.extend(images.data().iter().map(|&v| math::round(v * 255.0).clamp(0.0, 255.0) as u8));
        }
        IdxData::Labels(labels) => {
            out.extend_from_slice(&IDX_LABELS.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
        }
    }
    out
}

/// Pairs an images file with a labels file.
pub fn labeled_set_from_idx(images: &IdxData, labels: &IdxData, num_classes: usize) -> Result<(LabeledSet, (usize, usize))> {
    match (images, labels) {
        (IdxData::Images { images, rows, cols }, IdxData::Labels(l)) => {
            let set = LabeledSet::new(images.clone(), l.iter().map(|&v| v as usize).collect(), num_classes, 0, 0.0)?;
            Ok((set, (*rows, *cols)))
        }
        _ => Err(invalid("expected an images file and a labels file")),
    }
}

/// Rotates an image counter-clockwise (as displayed) about its center with
/// bilinear interpolation; samples falling outside the frame read as zero.
pub fn rotate_image(img: &Tensor, angle_deg: f64) -> Result<Tensor> {
    let (rows, cols) = img.dims2("rotate_image")?;
    Ok(Tensor::matrix(rows, cols, rotate_pixels(img.data(), rows, cols, angle_deg))?)
}

fn rotate_pixels(src: &[f64], rows: usize, cols: usize, angle_deg: f64) -> Vec<f64> {
    let theta = angle_deg * math::PI / 180.0;
    let (s, c) = (math::sin(theta), math::cos(theta));
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let at = |r: isize, q: isize| -> f64 {
        if r < 0 || q < 0 || r >= rows as isize || q >= cols as isize {
            0.0
        } else {
            src[r as usize * cols + q as usize]
        }
    };
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for q in 0..cols {
            // output offset with y pointing up, mapped back through the inverse rotation
            let dx = q as f64 - cx;
            let dy = cy - r as f64;
            let sx = c * dx + s * dy;
            let sy = -s * dx + c * dy;
            let fr = cy - sy;
            let fc = cx + sx;
            let r0 = math::floor(fr);
            let c0 = math::floor(fc);
            let (wr, wc) = (fr - r0, fc - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            out[r * cols + q] = at(r0, c0) * (1.0 - wr) * (1.0 - wc)
                + at(r0, c0 + 1) * (1.0 - wr) * wc
                + at(r0 + 1, c0) * wr * (1.0 - wc)
                + at(r0 + 1, c0 + 1) * wr * wc;
        }
    }
    out
}

/// Rotates every flattened `rows × cols` image (one per row of `images`).
pub fn rotate_images(images: &Tensor, rows: usize, cols: usize, angle_deg: f64) -> Result<Tensor> {
    let (n, w) = images.dims2("rotate_images")?;
    if w != rows * cols {
        return Err(Error::Shape { op: "rotate_images", detail: format!("{} pixels for {}x{} images", w, rows, cols) });
    }
    let mut out = Vec::with_capacity(n * w);
    for i in 0..n {
        out.extend(rotate_pixels(images.row(i), rows, cols, angle_deg));
    }
    Tensor::matrix(n, w, out)
}

fn check_distinct(source_angles: &[f64], target_angles: &[f64]) -> Result<()> {
    let all: Vec<f64> = source_angles.iter().chain(target_angles).copied().collect();
    for i in 0..all.len() {
        for j in 0..i {
            if all[i] == all[j] {
                return Err(invalid(format!("angle {} appears more than once across source/target lists", all[i])));
            }
        }
    }
    Ok(())
}

/// One domain per angle: the same base images rotated. Source domains get ids
/// `0..S`, targets `S..S+T`.
pub fn build_rotated_domains(
    base: &LabeledSet,
    image_dims: (usize, usize),
    source_angles: &[f64],
    target_angles: &[f64],
) -> Result<(Vec<LabeledSet>, Vec<LabeledSet>)> {
    check_distinct(source_angles, target_angles)?;
    let (rows, cols) = image_dims;
    let make = |angle: f64, id: usize| -> Result<LabeledSet> {
        let x = rotate_images(&base.x, rows, cols, angle)?;
        LabeledSet::new(x, base.y.clone(), base.num_classes, id, angle)
    };
    let sources = source_angles.iter().enumerate().map(|(i, &a)| make(a, i)).collect::<Result<Vec<_>>>()?;
    let n = sources.len();
    let targets = target_angles.iter().enumerate().map(|(i, &a)| make(a, n + i)).collect::<Result<Vec<_>>>()?;
    Ok((sources, targets))
}

/// Two-dimensional Gaussian blobs: class `c` is centred at angle `2πc/C` on
/// the unit circle, rotated by each domain's angle. Domain `k` takes id `k`.
pub fn build_blob_domains(
    classes: usize,
    angles: &[f64],
    n_per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<LabeledSet>> {
    if classes < 2 {
        return Err(invalid(format!("blob domains need at least 2 classes, got {}", classes)));
    }
    if !(noise_sigma >= 0.0) {
        return Err(invalid("noise sigma must be >= 0"));
    }
    angles
        .iter()
        .enumerate()
        .map(|(k, &angle)| {
            let mut rng = rng::substream(seed, Stream::Data, k as u64);
            let rot = angle * math::PI / 180.0;
            let mut x = Vec::with_capacity(classes * n_per_class * 2);
            let mut y = Vec::with_capacity(classes * n_per_class);
            for c in 0..classes {
                let phase = 2.0 * math::PI * c as f64 / classes as f64 + rot;
                let (mx, my) = (math::cos(phase), math::sin(phase));
                for _ in 0..n_per_class {
                    x.push(mx + noise_sigma * rng::standard_normal(&mut rng));
                    x.push(my + noise_sigma * rng::standard_normal(&mut rng));
                    y.push(c);
                }
            }
            LabeledSet::new(Tensor::matrix(y.len(), 2, x)?, y, classes, k, angle)
        })
        .collect()
}

/// Every domain in turn as the target, the rest as sources.
pub fn split_leave_one_out(domains: &[LabeledSet]) -> Result<Vec<(Vec<LabeledSet>, LabeledSet)>> {
    if domains.len() < 2 {
        return Err(invalid(format!("leave-one-out needs at least 2 domains, got {}", domains.len())));
    }
    Ok((0..domains.len())
        .map(|t| {
            let sources = domains.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, d)| d.clone()).collect();
            (sources, domains[t].clone())
        })
        .collect())
}

/// Source domains of one training iteration, split into meta-sources and a
/// held-out meta-target.
#[derive(Clone, Debug)]
pub struct EpisodeSplit<'a> {
    pub meta_sources: Vec<&'a LabeledSet>,
    pub meta_target: &'a LabeledSet,
}

pub fn sample_episode<'a>(sources: &'a [LabeledSet], rng: &mut Rng) -> Result<EpisodeSplit<'a>> {
    if sources.len() < 2 {
        return Err(invalid(format!(
            "episodic meta-learning needs at least 2 source domains, got {}",
            sources.len()
        )));
    }
    let t = rng::index(rng, sources.len());
    Ok(EpisodeSplit {
        meta_sources: sources.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, d)| d).collect(),
        meta_target: &sources[t],
    })
}

/// `n` samples drawn uniformly with replacement from the union of `sets`.
pub fn sample_batch(sets: &[&LabeledSet], n: usize, rng: &mut Rng) -> Result<Batch> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    if total == 0 {
        return Err(invalid("cannot sample a batch from empty domains"));
    }
    let width = sets[0].input_dim();
    let mut x = Vec::with_capacity(n * width);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = rng::index(rng, total);
        for s in sets {
            if k < s.len() {
                x.extend_from_slice(s.x.row(k));
                y.push(s.y[k]);
                break;
            }
            k -= s.len();
        }
    }
    Ok(Batch { x: Tensor::matrix(n, width, x)?, y })
}

/// Ordered batches of one target domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainStream {
    pub batches: Vec<Batch>,
    pub domain_id: usize,
    pub angle_deg: f64,
    pub num_classes: usize,
}

impl DomainStream {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }

    /// The first `k` batches.
    pub fn prefix(&self, k: usize) -> Self {
        Self { batches: self.batches[..k.min(self.batches.len())].to_vec(), ..self.clone() }
    }
}

/// `0..n` in a seeded random order.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Seeded shuffle, then contiguous batches; the last batch may be short.
pub fn stream_batches(target: &LabeledSet, batch: usize, seed: u64) -> Result<DomainStream> {
    if batch == 0 {
        return Err(invalid("stream batch size must be >= 1"));
    }
    let order = permutation(target.len(), &mut rng::stream(seed, Stream::Shuffle));
    let batches = order.chunks(batch).map(|idx| target.subset(idx)).collect::<Result<Vec<_>>>()?;
    Ok(DomainStream { batches, domain_id: target.domain_id, angle_deg: target.angle_deg, num_classes: target.num_classes })
}
