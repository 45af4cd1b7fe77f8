//! Seeded ladder codebooks and greedy residual vector quantization.
//!
//! Level `l` holds [`CODEBOOK_SIZE`] codewords. Codeword 0 is the zero vector;
//! entry `k` of codeword `j > 0` is `entry_scale * s_l * u(seed, l, j, k)` with
//! `s_l = base_scale * ratio^l` and `u` a splitmix64 hash mapped onto `[-1, 1]`.
//! Because the zero codeword is always a candidate, the residual norm can never
//! grow from one level to the next.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::hash::{hash4, to_signed_unit};
use crate::tokens::CODEBOOK_SIZE;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderSpec {
    pub seed: u64,
    pub dim: usize,
    pub levels: usize,
    pub base_scale: f64,
    pub ratio: f64,
    /// Extra per-entry factor applied on top of the level scale.
    pub entry_scale: f64,
}

impl LadderSpec {
    pub fn level_scale(&self, level: usize) -> f64 {
        self.base_scale * self.ratio.powi(level as i32)
    }

    /// Entry `k` of codeword `j` at `level`, computed directly from the hash.
    pub fn entry(&self, level: usize, j: usize, k: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        self.entry_scale
            * self.level_scale(level)
            * to_signed_unit(hash4(self.seed, level as u64, j as u64, k as u64))
    }
}

/// Lazily materialized codebooks for a [`LadderSpec`].
pub struct LadderCodebook {
    spec: LadderSpec,
    levels: Vec<OnceLock<Vec<f64>>>,
}

impl LadderCodebook {
    pub fn new(spec: LadderSpec) -> Self {
        Self {
            levels: (0..spec.levels).map(|_| OnceLock::new()).collect(),
            spec,
        }
    }

    pub fn spec(&self) -> &LadderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    /// Row-major `CODEBOOK_SIZE x dim` table for one level.
    pub fn level(&self, level: usize) -> &[f64] {
        self.levels[level].get_or_init(|| {
            let dim = self.spec.dim;
            let mut table = vec![0.0; CODEBOOK_SIZE * dim];
            for j in 1..CODEBOOK_SIZE {
                for k in 0..dim {
                    table[j * dim + k] = self.spec.entry(level, j, k);
                }
            }
            table
        })
    }

    pub fn codeword(&self, level: usize, j: usize) -> &[f64] {
        let dim = self.spec.dim;
        &self.level(level)[j * dim..(j + 1) * dim]
    }

    /// Index of the codeword closest to `target` in squared Euclidean distance;
    /// ties go to the lowest index.
    pub fn nearest(&self, level: usize, target: &[f64]) -> usize {
        let dim = self.spec.dim;
        let table = self.level(level);
        let mut best = 0;
        let mut best_dist: f64 = target.iter().map(|x| x * x).sum();
        for (j, word) in table.chunks_exact(dim).enumerate().skip(1) {
            let mut dist = 0.0;
            // Partial sums only grow, so abandoning once past `best_dist` is exact.
            for (block_t, block_w) in target.chunks(16).zip(word.chunks(16)) {
                dist += block_t
                    .iter()
                    .zip(block_w)
                    .map(|(t, w)| (t - w) * (t - w))
                    .sum::<f64>();
                if dist > best_dist {
                    break;
                }
            }
            if dist < best_dist {
                best_dist = dist;
                best = j;
            }
        }
        best
    }

    /// Greedy residual quantization over the first `depth` levels; returns the
    /// indices and the final residual.
    pub fn quantize(&self, target: &[f64], depth: usize) -> Result<(Vec<u16>, Vec<f64>)> {
        self.check_input(target, depth)?;
        let mut residual = target.to_vec();
        let mut indices = Vec::with_capacity(depth);
        for level in 0..depth {
            let j = self.nearest(level, &residual);
            if j != 0 {
                for (r, w) in residual.iter_mut().zip(self.codeword(level, j)) {
                    *r -= w;
                }
            }
            indices.push(j as u16);
        }
        Ok((indices, residual))
    }

    /// Sum of the selected codewords, one per level starting at level 0.
    pub fn reconstruct(&self, indices: &[u16]) -> Result<Vec<f64>> {
        if indices.len() > self.spec.levels {
            return Err(Error::Depth(format!(
                "{} levels requested, codebook has {}",
                indices.len(),
                self.spec.levels
            )));
        }
        let mut out = vec![0.0; self.spec.dim];
        for (level, &j) in indices.iter().enumerate() {
            if j as usize >= CODEBOOK_SIZE {
                return Err(Error::range("codebook index", j as usize, CODEBOOK_SIZE));
            }
            if j != 0 {
                for (o, w) in out.iter_mut().zip(self.codeword(level, j as usize)) {
                    *o += w;
                }
            }
        }
        Ok(out)
    }

    fn check_input(&self, target: &[f64], depth: usize) -> Result<()> {
        if target.len() != self.spec.dim {
            return Err(Error::Shape {
                expected: self.spec.dim,
                actual: target.len(),
            });
        }
        if depth > self.spec.levels {
            return Err(Error::Depth(format!(
                "depth {depth} exceeds {} codebook levels",
                self.spec.levels
            )));
        }
        if let Some(bad) = target.iter().find(|x| !x.is_finite()) {
            return Err(Error::Value(format!("non-finite quantizer input {bad}")));
        }
        Ok(())
    }
}

pub fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
