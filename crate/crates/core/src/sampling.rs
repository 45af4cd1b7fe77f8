//! Logit shaping and categorical sampling.
//!
//! Every sampled position goes through the same fixed pipeline:
//! [`cfg_combine`] → [`prior_combine`] → [`shape_logits`] → [`sample_token`].
//! Guidance acts on raw logits, so the guidance weight keeps its meaning
//! regardless of temperature.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded generator used by every stream; reproducible across platforms.
pub type SamplerRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_k: usize,
    /// Style guidance weight; 0 disables the unconditioned branch.
    pub cfg_weight: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.3,
            top_k: 40,
            cfg_weight: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        Self {
            temperature: 1.0,
            top_k: 1,
            cfg_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Value(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Value("top_k must be at least 1".into()));
        }
        if !(self.cfg_weight >= 0.0 && self.cfg_weight.is_finite()) {
            return Err(Error::Value(format!(
                "cfg weight must be non-negative, got {}",
                self.cfg_weight
            )));
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        })
    }
}

/// Classifier-free guidance: `(1 + w)·pos − w·neg`, evaluated as
/// `pos + w·(pos − neg)` so `w = 0` and `pos = neg` return `pos` bit-exactly.
pub fn cfg_combine(pos: &[f64], neg: &[f64], w: f64) -> Result<Vec<f64>> {
    check_lengths(pos, neg)?;
    if pos.iter().chain(neg).any(|x| !x.is_finite()) {
        return Err(Error::Value("guidance inputs must be finite".into()));
    }
    Ok(pos.iter().zip(neg).map(|(p, n)| p + w * (p - n)).collect())
}

/// Posterior logits: likelihood plus prior (a product in probability space).
pub fn prior_combine(likelihood: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
    check_lengths(likelihood, prior)?;
    Ok(likelihood.iter().zip(prior).map(|(l, p)| l + p).collect())
}

/// Divides by `temperature` and masks everything outside the `top_k` largest
/// entries with `-inf`. At the boundary, lower indices win.
pub fn shape_logits(logits: &[f64], temperature: f64, top_k: usize) -> Result<Vec<f64>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::Value(format!("temperature must be positive, got {temperature}")));
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    if top_k == 0 {
        return Err(Error::Value("top_k must be at least 1".into()));
    }
    if top_k < out.len() {
        let mut order: Vec<usize> = (0..out.len()).collect();
        let rank = |&a: &usize, &b: &usize| out[b].total_cmp(&out[a]).then(a.cmp(&b));
        order.select_nth_unstable_by(top_k - 1, rank);
        for &i in &order[top_k..] {
            out[i] = f64::NEG_INFINITY;
        }
    }
    Ok(out)
}

/// Softmax over the finite entries.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let exps: Vec<f64> = logits
        .iter()
        .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws an index by inverse CDF over the softmax; `-inf` entries are never chosen.
pub fn sample_token(logits: &[f64], rng: &mut SamplerRng) -> Result<usize> {
    let probs = softmax(logits);
    let last = match probs.iter().rposition(|&p| p > 0.0) {
        Some(i) => i,
        None => return Err(Error::Value("no finite logit to sample from".into())),
    };
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate().take(last) {
        cumulative += p;
        if p > 0.0 && u < cumulative {
            return Ok(i);
        }
    }
    Ok(last)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the full pipeline for one position. `neg` is only consulted when
/// `cfg_weight > 0`; `prior` may be empty.
pub fn sample_position(
    pos: &[f64],
    neg: Option<&[f64]>,
    prior: &[f64],
    config: &SamplerConfig,
    rng: &mut SamplerRng,
) -> Result<usize> {
    let guided = match neg {
        Some(neg) if config.cfg_weight > 0.0 => cfg_combine(pos, neg, config.cfg_weight)?,
        _ => pos.to_vec(),
    };
    let posterior = if prior.is_empty() {
        guided
    } else {
        prior_combine(&guided, prior)?
    };
    let shaped = shape_logits(&posterior, config.temperature, config.top_k)?;
    sample_token(&shaped, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cfg_identities() {
        let p = [0.3, -1.2, 4.0];
        let n = [1.0, 2.0, -0.5];
        assert_eq!(cfg_combine(&p, &n, 0.0).unwrap(), p.to_vec());
        assert_eq!(cfg_combine(&p, &p, 5.0).unwrap(), p.to_vec());
        assert_eq!(cfg_combine(&[2.0, 0.0], &[0.0, 2.0], 5.0).unwrap(), vec![12.0, -10.0]);
        assert!(matches!(cfg_combine(&p, &n[..2], 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn shape_examples() {
        let l = [3.0, 2.0, 1.0, 0.0];
        assert_eq!(shape_logits(&l, 1.0, 10).unwrap(), l.to_vec());
        assert_eq!(
            shape_logits(&l, 2.0, 2).unwrap(),
            vec![1.5, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY]
        );
        let one = shape_logits(&[0.1, 0.9, 0.5], 1.0, 1).unwrap();
        assert_eq!(one.iter().filter(|x| x.is_finite()).count(), 1);
        assert!(one[1].is_finite());
        assert!(shape_logits(&l, 0.0, 2).is_err());
        assert!(shape_logits(&l, -1.0, 2).is_err());
    }

    #[test]
    fn top_k_boundary_ties_keep_lowest_index() {
        let shaped = shape_logits(&[1.0, 5.0, 1.0, 1.0], 1.0, 2).unwrap();
        assert_eq!(shaped, vec![1.0, 5.0, f64::NEG_INFINITY, f64::NEG_INFINITY]);
    }

    #[test]
    fn prior_examples() {
        let l = [0.5, 2.0, -1.0];
        assert_eq!(prior_combine(&l, &[0.0; 3]).unwrap(), l.to_vec());
        let uniform = prior_combine(&l, &[3.0; 3]).unwrap();
        for (a, b) in softmax(&uniform).iter().zip(softmax(&l)) {
            assert!((a - b).abs() < 1e-12);
        }
        let spread = 2.0 - (-1.0);
        let bumped = prior_combine(&l, &[0.0, 0.0, spread + 0.01]).unwrap();
        assert_eq!(argmax(&bumped), 2);
        assert!(prior_combine(&l, &[0.0]).is_err());
    }

    #[test]
    fn one_hot_is_certain() {
        let mut rng = seeded_rng(3);
        let logits = shape_logits(&[10.0, -10.0, -10.0], 1.3, 1).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_token(&logits, &mut rng).unwrap(), 0);
        }
        assert!(sample_token(&[f64::NEG_INFINITY; 3], &mut rng).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let logits = [0.1, 0.4, 0.2, 0.9];
        let draw = |seed| {
            let mut rng = seeded_rng(seed);
            (0..50).map(|_| sample_token(&logits, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { top_k: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { cfg_weight: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn cfg_is_affine(
            pos in prop::collection::vec(-50.0f64..50.0, 1..32),
            noise in prop::collection::vec(-50.0f64..50.0, 32),
            w in 0.0f64..10.0,
        ) {
            let neg: Vec<f64> = noise[..pos.len()].to_vec();
            let out = cfg_combine(&pos, &neg, w).unwrap();
            for ((o, p), n) in out.iter().zip(&pos).zip(&neg) {
                let expanded = (1.0 + w) * p - w * n;
                prop_assert!((o - expanded).abs() <= 1e-12 * (1.0 + expanded.abs()));
            }
        }

        #[test]
        fn shaping_never_grows_support(
            logits in prop::collection::vec(-20.0f64..20.0, 1..64),
            k in 1usize..80,
            t in 0.1f64..4.0,
        ) {
            let shaped = shape_logits(&logits, t, k).unwrap();
            let support = shaped.iter().filter(|x| x.is_finite()).count();
            prop_assert_eq!(support, k.min(logits.len()));
            let total: f64 = softmax(&shaped).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn samples_stay_in_top_k(
            logits in prop::collection::vec(-5.0f64..5.0, 2..64),
            k in 1usize..10,
            seed in any::<u64>(),
        ) {
            let mut rng = seeded_rng(seed);
            let shaped = shape_logits(&logits, 1.3, k).unwrap();
            let id = sample_token(&shaped, &mut rng).unwrap();
            prop_assert!(shaped[id].is_finite());
            let better = logits.iter().filter(|&&l| l > logits[id]).count();
            prop_assert!(better < k);
        }
    }
}
