//! Binary-relevance logistic regression over sparse features.
//!
//! Each of the K labels gets an independent binary classifier fit by
//! deterministic full-batch gradient descent with backtracking line
//! search on an L2-regularized weighted BCE objective. The objective is
//! convex, so the optimum is solver-independent up to tolerance.

use crate::autodiff::Tensor;
use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::features::SparseVector;
use rayon::prelude::*;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Debug)]
pub struct LinearConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    /// Inverse regularization strength in the C = 1 convention.
    pub l2_c: f64,
    pub balanced: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            max_iter: 1000,
            tolerance: 1e-6,
            l2_c: 1.0,
            balanced: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    dim: usize,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, label: usize) -> &[f64] {
        &self.weights[label]
    }

    pub fn bias(&self, label: usize) -> f64 {
        self.biases[label]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut f = std::io::BufWriter::new(f);
        let io = |e| Error::io(path.display().to_string(), e);
        writeln!(f, "linear-model\t{}\t{}", self.label_count(), self.dim).map_err(io)?;
        for (k, w) in self.weights.iter().enumerate() {
            let entries: Vec<String> = w
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| format!("{i}:{v:.17e}"))
                .collect();
            writeln!(f, "{k}\t{:.17e}\t{}", self.biases[k], entries.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut lines = std::io::BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::validation("empty model file"))?
            .map_err(|e| Error::io(&display, e))?;
        let parts: Vec<&str> = header.split('\t').collect();
        if parts.len() != 3 || parts[0] != "linear-model" {
            return Err(Error::parse(&display, 1, "bad model header"));
        }
        let k: usize = parts[1].parse().map_err(|_| Error::parse(&display, 1, "bad K"))?;
        let dim: usize = parts[2].parse().map_err(|_| Error::parse(&display, 1, "bad dim"))?;
        let mut weights = vec![vec![0.0; dim]; k];
        let mut biases = vec![0.0; k];
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(&display, e))?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::parse(&display, line_no, "expected 3 fields"));
            }
            let label: usize = parts[0]
                .parse()
                .map_err(|_| Error::parse(&display, line_no, "bad label index"))?;
            if label >= k {
                return Err(Error::parse(&display, line_no, "label index out of range"));
            }
            biases[label] = parts[1]
                .parse()
                .map_err(|_| Error::parse(&display, line_no, "bad bias"))?;
            for pair in parts[2].split_whitespace() {
                let (idx, val) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::parse(&display, line_no, "bad index:value pair"))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::parse(&display, line_no, "bad weight index"))?;
                if idx >= dim {
                    return Err(Error::parse(&display, line_no, "weight index out of range"));
                }
                weights[label][idx] = val
                    .parse()
                    .map_err(|_| Error::parse(&display, line_no, "bad weight value"))?;
            }
        }
        Ok(LinearModel {
            dim,
            weights,
            biases,
        })
    }
}

struct BinaryProblem<'a> {
    x: &'a [SparseVector],
    targets: Vec<f64>,
    sample_weights: Vec<f64>,
    l2: f64,
}

impl BinaryProblem<'_> {
    fn loss_and_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let n = self.x.len() as f64;
        let mut loss = 0.0;
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for ((xi, &y), &u) in self.x.iter().zip(&self.targets).zip(&self.sample_weights) {
            let z = xi.dot_dense(w) + b;
            // log(1 + e^-|z|) form keeps the loss finite at saturation
            let log1p = (-z.abs()).exp().ln_1p();
            let ll = if z >= 0.0 {
                (1.0 - y) * z + log1p
            } else {
                -y * z + log1p
            };
            loss += u * ll;
            let p = 1.0 / (1.0 + (-z).exp());
            let residual = u * (p - y);
            for &(i, v) in xi.entries() {
                gw[i] += residual * v;
            }
            gb += residual;
        }
        loss /= n;
        for g in &mut gw {
            *g /= n;
        }
        gb /= n;
        if self.l2 > 0.0 {
            let reg: f64 = w.iter().map(|v| v * v).sum();
            loss += 0.5 * self.l2 * reg;
            for (g, v) in gw.iter_mut().zip(w) {
                *g += self.l2 * v;
            }
        }
        (loss, gw, gb)
    }
}

fn train_one_label(problem: &BinaryProblem<'_>, dim: usize, config: &LinearConfig) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut step = 1.0;
    let (mut loss, mut gw, mut gb) = problem.loss_and_grad(&w, b);
    let mut history = vec![loss];
    for _ in 0..config.max_iter {
        if !loss.is_finite() {
            return Err(Error::NonFinite("logistic regression loss".into()));
        }
        let gnorm2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        if gnorm2 == 0.0 {
            break;
        }
        // Armijo backtracking on the descent direction -g
        let mut accepted = None;
        for _ in 0..60 {
            let wt: Vec<f64> = w.iter().zip(&gw).map(|(v, g)| v - step * g).collect();
            let bt = b - step * gb;
            let (lt, gwt, gbt) = problem.loss_and_grad(&wt, bt);
            if lt <= loss - 0.25 * step * gnorm2 {
                accepted = Some((wt, bt, lt, gwt, gbt));
                break;
            }
            step *= 0.5;
        }
        let Some((wt, bt, lt, gwt, gbt)) = accepted else {
            break; // step underflow: at numerical optimum
        };
        let improvement = (loss - lt).abs() / loss.abs().max(1.0);
        w = wt;
        b = bt;
        loss = lt;
        gw = gwt;
        gb = gbt;
        history.push(loss);
        step *= 2.0;
        if improvement < config.tolerance {
            break;
        }
    }
    Ok((w, b, history))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fit K independent binary classifiers. Returns the model and the
/// per-label loss histories.
pub fn train_binary_relevance(
    x: &[SparseVector],
    y: &[LabelSet],
    label_count: usize,
    config: &LinearConfig,
) -> Result<(LinearModel, Vec<Vec<f64>>)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::validation(format!(
            "feature/label count mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let dim = x[0].dim();
    let n = x.len();
    let results: Vec<Result<(Vec<f64>, f64, Vec<f64>)>> = (0..label_count)
        .into_par_iter()
        .map(|label| {
            let targets: Vec<f64> = y
                .iter()
                .map(|ls| if ls.contains(label) { 1.0 } else { 0.0 })
                .collect();
            let n_pos = targets.iter().filter(|&&t| t == 1.0).count();
            if n_pos == 0 || n_pos == n {
                // degenerate label: predict the smoothed base rate
                eprintln!(
                    "warning: label {label} has {n_pos}/{n} positives; fixing classifier to the base rate"
                );
                let rate = (n_pos + 1) as f64 / (n + 2) as f64;
                return Ok((vec![0.0; dim], logit(rate), vec![]));
            }
            let n_neg = n - n_pos;
            let sample_weights: Vec<f64> = if config.balanced {
                let wp = n as f64 / (2.0 * n_pos as f64);
                let wn = n as f64 / (2.0 * n_neg as f64);
                targets.iter().map(|&t| if t == 1.0 { wp } else { wn }).collect()
            } else {
                vec![1.0; n]
            };
            let problem = BinaryProblem {
                x,
                targets,
                sample_weights,
                l2: 1.0 / (config.l2_c * n as f64),
            };
            train_one_label(&problem, dim, config)
        })
        .collect();
    let mut weights = Vec::with_capacity(label_count);
    let mut biases = Vec::with_capacity(label_count);
    let mut histories = Vec::with_capacity(label_count);
    for r in results {
        let (w, b, h) = r?;
        weights.push(w);
        biases.push(b);
        histories.push(h);
    }
    Ok((
        LinearModel {
            dim,
            weights,
            biases,
        },
        histories,
    ))
}

/// Row (i, k) = sigmoid(w_k . x_i + b_k). Rows are not normalized.
pub fn predict_proba(model: &LinearModel, x: &[SparseVector]) -> Result<Tensor> {
    let k = model.label_count();
    let mut out = Tensor::zeros(x.len(), k);
    for (r, xi) in x.iter().enumerate() {
        if xi.dim() != model.dim {
            return Err(Error::shape(
                "predict_proba",
                format!("model dim {}", model.dim),
                format!("feature dim {}", xi.dim()),
            ));
        }
        for label in 0..k {
            let z = xi.dot_dense(&model.weights[label]) + model.biases[label];
            out.set(r, label, 1.0 / (1.0 + (-z).exp()));
        }
    }
    Ok(out)
}
