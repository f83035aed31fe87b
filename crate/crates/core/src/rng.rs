//! Seeded random streams.
//!
//! A master seed is split into independent per-component streams by seeding a
//! ChaCha8 generator with the master seed and selecting the ChaCha stream
//! number of the component. Toggling the stochasticity of one component
//! (say, label sampling) therefore never shifts the draws of another.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

pub type Rng = ChaCha8Rng;

/// Component streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Episode = 3,
    Batch = 4,
    LatentW = 5,
    Labels = 6,
    Shuffle = 7,
    Phi = 8,
}

pub fn stream(seed: u64, s: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Generator for an arbitrary sub-stream number (e.g. one per domain).
pub fn substream(seed: u64, s: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(s as u64);
    rng
}

/// Uniform on the open interval (0, 1).
fn open_uniform(rng: &mut Rng) -> f64 {
    loop {
        let u = uniform(rng);
        if u > 0.0 {
            return u;
        }
    }
}

/// Box-Muller draw, one normal per two uniforms. All transcendental calls go
/// through `math`, so draws are bit-identical however the crate is built.
pub fn standard_normal(rng: &mut Rng) -> f64 {
    let u1 = open_uniform(rng);
    let u2 = uniform(rng);
    math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * math::PI * u2)
}

pub fn gumbel(rng: &mut Rng) -> f64 {
    -math::ln(-math::ln(open_uniform(rng)))
}

pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// One draw from the categorical distribution given by `probs`.
pub fn categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u = uniform(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass; fall back to the last nonzero class
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}
