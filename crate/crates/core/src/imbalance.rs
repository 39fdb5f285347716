//! Inverse-frequency class weights and the weighted-BCE / focal losses.
//!
//! Each loss exists twice: a direct evaluation over probability matrices
//! and a tape-building form used by the trainers. The focal modulating
//! factor uses the true-class probability p_t per element, so at
//! gamma = 0 with unit alpha the focal loss reduces exactly to BCE.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::corpus::CorpusStats;
use crate::error::{Error, Result};
use std::io::{BufRead, Write};
use std::path::Path;

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::validation("class weights must be finite and positive"));
        }
        Ok(ClassWeights { weights })
    }

    pub fn uniform(k: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, label: usize) -> f64 {
        self.weights[label]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// `label_name<TAB>weight` lines.
    pub fn save(&self, path: &Path, label_names: &[String]) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, w) in self.weights.iter().enumerate() {
            let name = label_names.get(i).map(|s| s.as_str()).unwrap_or("?");
            writeln!(f, "{name}\t{w:.17e}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut weights = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let mut parts = line.split('\t');
            let _name = parts.next();
            let w: f64 = parts
                .next()
                .ok_or_else(|| Error::parse(path.display().to_string(), i + 1, "missing weight"))?
                .parse()
                .map_err(|_| Error::parse(path.display().to_string(), i + 1, "bad weight"))?;
            weights.push(w);
        }
        ClassWeights::new(weights)
    }
}

/// w_c = N / (n_c * K).
pub fn inverse_frequency_weights(stats: &CorpusStats) -> Result<ClassWeights> {
    let k = stats.per_label_counts.len();
    let n = stats.total as f64;
    let mut weights = Vec::with_capacity(k);
    for (label, &count) in stats.per_label_counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::validation(format!(
                "label {label} has zero training occurrences; cannot weight"
            )));
        }
        weights.push(n / (count as f64 * k as f64));
    }
    ClassWeights::new(weights)
}

fn validate_loss_inputs(
    probs: &Tensor,
    targets: &Tensor,
    weights: Option<&ClassWeights>,
) -> Result<()> {
    if !probs.same_shape(targets) {
        return Err(Error::shape(
            "loss",
            probs.shape_string(),
            targets.shape_string(),
        ));
    }
    if probs.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::validation("probability outside [0, 1]"));
    }
    if let Some(w) = weights {
        if w.len() != probs.cols() {
            return Err(Error::shape(
                "loss weights",
                format!("K = {}", probs.cols()),
                format!("{} weights", w.len()),
            ));
        }
    }
    Ok(())
}

/// Mean weighted binary cross-entropy over all N*K cells. Weights, when
/// present, apply to positive targets only.
pub fn weighted_bce(
    probs: &Tensor,
    targets: &Tensor,
    weights: Option<&ClassWeights>,
) -> Result<f64> {
    validate_loss_inputs(probs, targets, weights)?;
    let k = probs.cols();
    let mut total = 0.0;
    for r in 0..probs.rows() {
        for c in 0..k {
            let p = probs.get(r, c).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let y = targets.get(r, c);
            let u = if y > 0.5 {
                weights.map(|w| w.get(c)).unwrap_or(1.0)
            } else {
                1.0
            };
            total += u * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
    }
    Ok(-total / (probs.rows() * k) as f64)
}

/// Focal loss: BCE modulated by (1 - p_t)^gamma with alpha on positives.
pub fn focal_loss(
    probs: &Tensor,
    targets: &Tensor,
    weights: Option<&ClassWeights>,
    gamma: f64,
) -> Result<f64> {
    validate_loss_inputs(probs, targets, weights)?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::validation(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let k = probs.cols();
    let mut total = 0.0;
    for r in 0..probs.rows() {
        for c in 0..k {
            let p = probs.get(r, c).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let y = targets.get(r, c);
            let (p_t, alpha) = if y > 0.5 {
                (p, weights.map(|w| w.get(c)).unwrap_or(1.0))
            } else {
                (1.0 - p, 1.0)
            };
            total += alpha * (1.0 - p_t).powf(gamma) * p_t.ln();
        }
    }
    Ok(-total / (probs.rows() * k) as f64)
}

/// Per-cell multiplier matrix: weight on positive cells, 1 elsewhere.
fn positive_multipliers(targets: &Tensor, weights: Option<&ClassWeights>) -> Tensor {
    let mut u = Tensor::filled(targets.rows(), targets.cols(), 1.0);
    if let Some(w) = weights {
        for r in 0..targets.rows() {
            for c in 0..targets.cols() {
                if targets.get(r, c) > 0.5 {
                    u.set(r, c, w.get(c));
                }
            }
        }
    }
    u
}

/// p_t node: y*p + (1-y)*(1-p), with p clamped away from {0, 1}.
fn true_class_prob(tape: &mut Tape, probs: NodeId, targets: &Tensor) -> Result<NodeId> {
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = tape.leaf(targets.clone());
    let ones = tape.leaf(Tensor::filled(targets.rows(), targets.cols(), 1.0));
    let one_minus_y = tape.sub(ones, y)?;
    let one_minus_p = tape.sub(ones, p)?;
    let pos = tape.mul(y, p)?;
    let neg = tape.mul(one_minus_y, one_minus_p)?;
    tape.add(pos, neg)
}

/// Weighted BCE as a differentiable tape node.
pub fn bce_loss_node(
    tape: &mut Tape,
    probs: NodeId,
    targets: &Tensor,
    weights: Option<&ClassWeights>,
) -> Result<NodeId> {
    let cells = (targets.rows() * targets.cols()) as f64;
    let p_t = true_class_prob(tape, probs, targets)?;
    let log_pt = tape.log(p_t);
    let u = tape.leaf(positive_multipliers(targets, weights));
    let weighted = tape.mul(u, log_pt)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / cells))
}

/// Focal loss as a differentiable tape node.
pub fn focal_loss_node(
    tape: &mut Tape,
    probs: NodeId,
    targets: &Tensor,
    weights: Option<&ClassWeights>,
    gamma: f64,
) -> Result<NodeId> {
    let cells = (targets.rows() * targets.cols()) as f64;
    let p_t = true_class_prob(tape, probs, targets)?;
    let log_pt = tape.log(p_t);
    let ones = tape.leaf(Tensor::filled(targets.rows(), targets.cols(), 1.0));
    let one_minus_pt = tape.sub(ones, p_t)?;
    let modulator = tape.pow_const(one_minus_pt, gamma);
    let u = tape.leaf(positive_multipliers(targets, weights));
    let a = tape.mul(u, modulator)?;
    let weighted = tape.mul(a, log_pt)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / cells))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParameterSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_frequency_arithmetic() {
        let stats = CorpusStats {
            total: 58_009,
            per_label_counts: {
                let mut v = vec![1; 28];
                v[27] = 14_219; // neutral
                v[0] = 4_130; // admiration
                v
            },
            label_count_histogram: Default::default(),
            mean_char_length: 0.0,
            mean_word_count: 0.0,
            median_word_count: 0.0,
            char_length_range: (0, 0),
        };
        let w = inverse_frequency_weights(&stats).unwrap();
        assert!((w.get(27) - 0.14570).abs() < 5e-5);
        assert!((w.get(0) - 0.50164).abs() < 5e-5);
    }

    #[test]
    fn balanced_corpus_gives_unit_weights() {
        let stats = CorpusStats {
            total: 280,
            per_label_counts: vec![10; 28],
            label_count_histogram: Default::default(),
            mean_char_length: 0.0,
            mean_word_count: 0.0,
            median_word_count: 0.0,
            char_length_range: (0, 0),
        };
        let w = inverse_frequency_weights(&stats).unwrap();
        for c in 0..28 {
            assert!((w.get(c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_count_label_named() {
        let stats = CorpusStats {
            total: 10,
            per_label_counts: vec![5, 0, 5],
            label_count_histogram: Default::default(),
            mean_char_length: 0.0,
            mean_word_count: 0.0,
            median_word_count: 0.0,
            char_length_range: (0, 0),
        };
        let err = inverse_frequency_weights(&stats).unwrap_err().to_string();
        assert!(err.contains("label 1"), "{err}");
    }

    #[test]
    fn bce_perfect_prediction_near_zero() {
        let probs = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let targets = Tensor::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let loss = weighted_bce(&probs, &targets, None).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn bce_half_probability_is_ln2() {
        let probs = Tensor::scalar(0.5);
        let targets = Tensor::scalar(1.0);
        let loss = weighted_bce(&probs, &targets, None).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_weight_scales_positive_term() {
        let probs = Tensor::scalar(0.5);
        let targets = Tensor::scalar(1.0);
        let w = ClassWeights::new(vec![2.0]).unwrap();
        let loss = weighted_bce(&probs, &targets, Some(&w)).unwrap();
        assert!((loss - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_out_of_range_probability() {
        let probs = Tensor::scalar(1.5);
        let targets = Tensor::scalar(1.0);
        assert!(weighted_bce(&probs, &targets, None).is_err());
    }

    #[test]
    fn focal_scalar_hand_value() {
        let probs = Tensor::scalar(0.9);
        let targets = Tensor::scalar(1.0);
        let loss = focal_loss(&probs, &targets, None, 2.0).unwrap();
        let expected = 0.01 * -(0.9f64.ln());
        assert!((loss - expected).abs() < 1e-12, "loss {loss} expected {expected}");
    }

    #[test]
    fn focal_gamma_zero_equals_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let k = rng.gen_range(1..5);
            let probs = Tensor::from_vec(n, k, (0..n * k).map(|_| rng.gen()).collect()).unwrap();
            let targets = Tensor::from_vec(
                n,
                k,
                (0..n * k).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap();
            let b = weighted_bce(&probs, &targets, None).unwrap();
            let f = focal_loss(&probs, &targets, None, 0.0).unwrap();
            assert!((b - f).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_vanishes_faster_than_bce_on_confident_positive() {
        let targets = Tensor::scalar(1.0);
        for p in [0.99, 0.999, 0.9999] {
            let probs = Tensor::scalar(p);
            let b = weighted_bce(&probs, &targets, None).unwrap();
            let f = focal_loss(&probs, &targets, None, 2.0).unwrap();
            let ratio = f / b;
            assert!((ratio - (1.0 - p).powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn focal_monotone_in_true_class_probability() {
        let targets = Tensor::scalar(1.0);
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let l = focal_loss(&Tensor::scalar(p), &targets, None, 2.0).unwrap();
            assert!(l <= prev + 1e-15);
            prev = l;
        }
    }

    #[test]
    fn graph_losses_match_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let k = 3;
        let probs = Tensor::from_vec(n, k, (0..n * k).map(|_| rng.gen()).collect()).unwrap();
        let targets = Tensor::from_vec(
            n,
            k,
            (0..n * k).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let w = ClassWeights::new((0..k).map(|i| 0.5 + i as f64).collect()).unwrap();

        let mut tape = Tape::new();
        let p = tape.leaf(probs.clone());
        let bce_node = bce_loss_node(&mut tape, p, &targets, Some(&w)).unwrap();
        let direct = weighted_bce(&probs, &targets, Some(&w)).unwrap();
        assert!((tape.value(bce_node).item() - direct).abs() < 1e-12);

        let mut tape = Tape::new();
        let p = tape.leaf(probs.clone());
        let f_node = focal_loss_node(&mut tape, p, &targets, Some(&w), 2.0).unwrap();
        let direct = focal_loss(&probs, &targets, Some(&w), 2.0).unwrap();
        assert!((tape.value(f_node).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let k = 4;
        let targets = Tensor::from_vec(
            n,
            k,
            (0..n * k).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let w = ClassWeights::new((0..k).map(|i| 0.3 + 0.4 * i as f64).collect()).unwrap();
        // parameterize logits, push through sigmoid so probs stay in (0,1)
        let mut ps = ParameterSet::new();
        ps.insert(
            "z",
            Tensor::from_vec(n, k, (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap(),
        );
        for focal in [false, true] {
            let err = grad_check(&mut ps, 1e-5, |ps| {
                let mut tape = Tape::new();
                let z = tape.leaf(ps.value("z").clone());
                let probs = tape.sigmoid(z);
                let loss = if focal {
                    focal_loss_node(&mut tape, probs, &targets, Some(&w), 2.0)?
                } else {
                    bce_loss_node(&mut tape, probs, &targets, Some(&w))?
                };
                tape.backward(loss)?;
                ps.set_grad("z", tape.grad(z).clone());
                Ok(tape.value(loss).item())
            })
            .unwrap();
            assert!(err < 1e-4, "focal={focal} err={err}");
        }
    }
}
