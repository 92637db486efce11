//! Deterministic offline encoder.
//!
//! For a token `t` of modality tag `g`, with provider seed `s` and output
//! dimension `n`:
//!
//! 1. `key = fnv1a64(g ‖ 0x00 ‖ t) XOR (s · SEED_MIX)` (wrapping multiply).
//! 2. `noise` = `n` standard normals from `ChaCha8Rng::seed_from_u64(key)`,
//!    scaled to unit length. For `text-mean` the noise is instead the mean of
//!    the unit noise vectors of each whitespace token (keyed the same way),
//!    rescaled to unit length.
//! 3. Structured counts are read from the token: for images, the fields
//!    after `|` written as `poi=c0,c1,..;lu=c0,..`; for text, the
//!    `"<count> <category>"` items of the POI list. POI counts occupy feature
//!    slots 0..15 and land-use counts slots 15..35.
//! 4. Each slot `f` has a unit basis vector `b_f` drawn like the noise from
//!    `fnv1a64(g ‖ 0x00 ‖ "basis:" ‖ f) XOR (s · SEED_MIX)`. With
//!    `w_f = ln(1 + c_f)`, `sem = Σ w_f b_f` and `μ = 2 tanh(‖w‖ / 3)`.
//! 5. The output is `noise + μ · sem / ‖sem‖` (just `noise` when `sem = 0`),
//!    scaled to unit length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{EmbeddingProvider, Modality};
use crate::autograd::Mat;
use crate::error::Result;
use crate::ingest::describe::parse_poi_counts;
use crate::ingest::vocab::{NUM_LANDUSE, NUM_POI};

pub const SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const NUM_SLOTS: usize = NUM_POI + NUM_LANDUSE;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn key(tag: &str, token: &str, seed: u64) -> u64 {
    let mut bytes = Vec::with_capacity(tag.len() + 1 + token.len());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(token.as_bytes());
    fnv1a64(&bytes) ^ seed.wrapping_mul(SEED_MIX)
}

fn unit_normal(key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Feature counts carried by a token, by slot.
pub fn structured_counts(modality: Modality, token: &str) -> [f64; NUM_SLOTS] {
    let mut c = [0.0; NUM_SLOTS];
    match modality {
        Modality::Text | Modality::TextMean => {
            for (k, n) in parse_poi_counts(token) {
                c[k] = n;
            }
        }
        _ => {
            let Some((_, fields)) = token.split_once('|') else {
                return c;
            };
            for field in fields.split(';') {
                let Some((name, values)) = field.split_once('=') else {
                    continue;
                };
                let (offset, len) = match name.trim() {
                    "poi" => (0, NUM_POI),
                    "lu" => (NUM_POI, NUM_LANDUSE),
                    _ => continue,
                };
                for (k, v) in values.split(',').take(len).enumerate() {
                    if let Ok(x) = v.trim().parse::<f64>() {
                        if x.is_finite() && x > 0.0 {
                            c[offset + k] = x;
                        }
                    }
                }
            }
        }
    }
    c
}

#[derive(Clone, Debug)]
pub struct StubProvider {
    modality: Modality,
    dim: usize,
    seed: u64,
    basis: Vec<Vec<f64>>,
}

impl StubProvider {
    /// Provider with the modality's standard dimension.
    pub fn new(modality: Modality, seed: u64) -> Self {
        Self::build(modality, modality.default_dim(), seed)
    }

    /// Satellite providers accept any positive dimension; the others are
    /// fixed.
    pub fn with_dim(modality: Modality, dim: usize, seed: u64) -> Result<Self> {
        modality.check_dim(dim)?;
        Ok(Self::build(modality, dim, seed))
    }

    fn build(modality: Modality, dim: usize, seed: u64) -> Self {
        let basis = (0..NUM_SLOTS)
            .map(|f| unit_normal(key(modality.tag(), &format!("basis:{f}"), seed), dim))
            .collect();
        Self {
            modality,
            dim,
            seed,
            basis,
        }
    }

    pub fn encode_one(&self, token: &str) -> Vec<f64> {
        let tag = self.modality.tag();
        let mut out = match self.modality {
            Modality::TextMean => {
                let mut acc = vec![0.0; self.dim];
                for word in token.split_whitespace() {
                    let u = unit_normal(key(tag, word, self.seed), self.dim);
                    acc.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
                }
                normalize(&mut acc);
                acc
            }
            _ => unit_normal(key(tag, token, self.seed), self.dim),
        };
        let counts = structured_counts(self.modality, token);
        let w: Vec<f64> = counts.iter().map(|c| c.ln_1p()).collect();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn > 0.0 {
            let mut sem = vec![0.0; self.dim];
            for (wf, b) in w.iter().zip(&self.basis) {
                if *wf != 0.0 {
                    sem.iter_mut().zip(b).for_each(|(s, bv)| *s += wf * bv);
                }
            }
            normalize(&mut sem);
            let mu = 2.0 * (wn / 3.0).tanh();
            out.iter_mut().zip(&sem).for_each(|(o, s)| *o += mu * s);
        }
        normalize(&mut out);
        out
    }
}

impl EmbeddingProvider for StubProvider {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, items: &[String]) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = items.par_iter().map(|t| self.encode_one(t)).collect();
        let mut out = Mat::zeros((items.len(), self.dim));
        for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s);
        }
        Ok(out)
    }
}
