//! Multi-label metrics, probability binarization, per-label threshold
//! calibration, and classification-report rendering.

use crate::autodiff::Tensor;
use crate::corpus::{LabelSet, LabelVocabulary};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub type BinaryMatrix = Vec<Vec<bool>>;

#[derive(Clone, Debug)]
pub struct PredictionMatrix {
    pub ids: Vec<String>,
    pub probs: Tensor,
}

impl PredictionMatrix {
    pub fn new(ids: Vec<String>, probs: Tensor) -> Result<Self> {
        if ids.len() != probs.rows() {
            return Err(Error::shape(
                "prediction matrix",
                format!("{} ids", ids.len()),
                format!("{} rows", probs.rows()),
            ));
        }
        if probs.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::validation("prediction probability outside [0, 1]"));
        }
        Ok(PredictionMatrix { ids, probs })
    }

    pub fn label_count(&self) -> usize {
        self.probs.cols()
    }

    /// `id<TAB>p_1,...,p_K` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut f = std::io::BufWriter::new(f);
        for (r, id) in self.ids.iter().enumerate() {
            let probs: Vec<String> = self
                .probs
                .row_slice(r)
                .iter()
                .map(|p| format!("{p:.17e}"))
                .collect();
            writeln!(f, "{id}\t{}", probs.join(","))
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut ids = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(&display, e))?;
            if line.is_empty() {
                continue;
            }
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&display, line_no, "expected id<TAB>probs"))?;
            let probs: Vec<f64> = rest
                .split(',')
                .map(|p| {
                    p.parse::<f64>()
                        .map_err(|_| Error::parse(&display, line_no, format!("bad probability {p:?}")))
                })
                .collect::<Result<_>>()?;
            if let Some(first) = rows.first() {
                if probs.len() != first.len() {
                    return Err(Error::parse(&display, line_no, "inconsistent label count"));
                }
            }
            ids.push(id.to_string());
            rows.push(probs);
        }
        if rows.is_empty() {
            return Err(Error::validation(format!("{display} has no predictions")));
        }
        let k = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        PredictionMatrix::new(ids.clone(), Tensor::from_vec(ids.len(), k, flat)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::validation("thresholds must lie in (0, 1)"));
        }
        Ok(Thresholds(values))
    }

    pub fn uniform(k: usize, tau: f64) -> Self {
        Thresholds(vec![tau; k])
    }

    pub fn get(&self, label: usize) -> f64 {
        self.0[label]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `label_name<TAB>threshold` lines.
    pub fn save(&self, path: &Path, label_names: &[String]) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, t) in self.0.iter().enumerate() {
            let name = label_names.get(i).map(|s| s.as_str()).unwrap_or("?");
            writeln!(f, "{name}\t{t}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut values = Vec::new();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&display, e))?;
            let t = line
                .split('\t')
                .nth(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(&display, i + 1, "expected name<TAB>threshold"))?;
            values.push(t);
        }
        Thresholds::new(values)
    }
}

/// Predicted positive iff probability >= threshold.
pub fn binarize(predictions: &PredictionMatrix, thresholds: &Thresholds) -> BinaryMatrix {
    let k = predictions.label_count();
    debug_assert_eq!(thresholds.len(), k);
    (0..predictions.probs.rows())
        .map(|r| (0..k).map(|c| predictions.probs.get(r, c) >= thresholds.get(c)).collect())
        .collect()
}

/// Gold label sets as a dense binary matrix aligned with a corpus.
pub fn gold_matrix(labels: &[LabelSet], k: usize) -> BinaryMatrix {
    labels.iter().map(|ls| ls.to_binary_row(k)).collect()
}

fn check_shapes(pred: &BinaryMatrix, gold: &BinaryMatrix) -> Result<(usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::shape(
            "metrics",
            format!("{} pred rows", pred.len()),
            format!("{} gold rows", gold.len()),
        ));
    }
    let k = pred.first().map(|r| r.len()).unwrap_or(0);
    for (p, g) in pred.iter().zip(gold) {
        if p.len() != k || g.len() != k {
            return Err(Error::shape(
                "metrics",
                format!("{k} labels"),
                format!("{}/{} labels", p.len(), g.len()),
            ));
        }
    }
    Ok((pred.len(), k))
}

pub fn subset_accuracy(pred: &BinaryMatrix, gold: &BinaryMatrix) -> Result<f64> {
    let (n, _) = check_shapes(pred, gold)?;
    if n == 0 {
        return Ok(0.0);
    }
    let exact = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(exact as f64 / n as f64)
}

pub fn hamming_loss(pred: &BinaryMatrix, gold: &BinaryMatrix) -> Result<f64> {
    let (n, k) = check_shapes(pred, gold)?;
    if n == 0 || k == 0 {
        return Ok(0.0);
    }
    let mismatched: usize = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| p.iter().zip(g).filter(|(a, b)| a != b).count())
        .sum();
    Ok(mismatched as f64 / (n * k) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    // zero-denominator convention: rates are 0
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

pub fn per_label_prf(pred: &BinaryMatrix, gold: &BinaryMatrix) -> Result<Vec<LabelMetrics>> {
    let (_, k) = check_shapes(pred, gold)?;
    let mut out = Vec::with_capacity(k);
    for label in 0..k {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        let mut support = 0;
        for (p, g) in pred.iter().zip(gold) {
            match (p[label], g[label]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
            if g[label] {
                support += 1;
            }
        }
        let (precision, recall, f1) = prf_from_counts(tp, fp, fn_);
        out.push(LabelMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(out)
}

/// Micro F1 from pooled counts, macro F1 as the unweighted mean over all K.
pub fn micro_macro(pred: &BinaryMatrix, gold: &BinaryMatrix) -> Result<(f64, f64)> {
    micro_macro_excluding(pred, gold, &[])
}

/// Macro average optionally excluding a label set (sensitivity checks).
pub fn micro_macro_excluding(
    pred: &BinaryMatrix,
    gold: &BinaryMatrix,
    macro_exclude: &[usize],
) -> Result<(f64, f64)> {
    let (_, k) = check_shapes(pred, gold)?;
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (p, g) in pred.iter().zip(gold) {
        for label in 0..k {
            match (p[label], g[label]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let (_, _, micro) = prf_from_counts(tp, fp, fn_);
    let per_label = per_label_prf(pred, gold)?;
    let included: Vec<f64> = per_label
        .iter()
        .enumerate()
        .filter(|(i, _)| !macro_exclude.contains(i))
        .map(|(_, m)| m.f1)
        .collect();
    let macro_f1 = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    Ok((micro, macro_f1))
}

/// Per label independently, the grid value maximizing validation F1
/// (ties go to the smallest threshold).
pub fn tune_thresholds(
    probs_val: &PredictionMatrix,
    gold_val: &BinaryMatrix,
    grid: &[f64],
) -> Result<Thresholds> {
    if grid.is_empty() {
        return Err(Error::validation("empty threshold grid"));
    }
    if grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::validation("grid values must lie in (0, 1)"));
    }
    let k = probs_val.label_count();
    let n = probs_val.probs.rows();
    if gold_val.len() != n {
        return Err(Error::shape(
            "tune_thresholds",
            format!("{n} prediction rows"),
            format!("{} gold rows", gold_val.len()),
        ));
    }
    let mut sorted_grid: Vec<f64> = grid.to_vec();
    sorted_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut taus = Vec::with_capacity(k);
    for label in 0..k {
        let mut best = (f64::NEG_INFINITY, sorted_grid[0]);
        for &tau in &sorted_grid {
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for r in 0..n {
                let p = probs_val.probs.get(r, label) >= tau;
                match (p, gold_val[r][label]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let (_, _, f1) = prf_from_counts(tp, fp, fn_);
            if f1 > best.0 {
                best = (f1, tau);
            }
        }
        taus.push(best.1);
    }
    Thresholds::new(taus)
}

pub fn default_threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label_names: Vec<String>,
    pub per_label: Vec<LabelMetrics>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub subset_accuracy: f64,
    pub hamming_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Tsv,
    Json,
}

pub fn build_report(
    pred: &BinaryMatrix,
    gold: &BinaryMatrix,
    vocab: &LabelVocabulary,
) -> Result<MetricsReport> {
    let (_, k) = check_shapes(pred, gold)?;
    if k != vocab.len() {
        return Err(Error::shape(
            "build_report",
            format!("{k} labels"),
            format!("{} vocab entries", vocab.len()),
        ));
    }
    let per_label = per_label_prf(pred, gold)?;
    let (micro_f1, macro_f1) = micro_macro(pred, gold)?;
    Ok(MetricsReport {
        label_names: vocab.names().to_vec(),
        per_label,
        micro_f1,
        macro_f1,
        subset_accuracy: subset_accuracy(pred, gold)?,
        hamming_loss: hamming_loss(pred, gold)?,
    })
}

pub fn render_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => {
            let width = report
                .label_names
                .iter()
                .map(|n| n.len())
                .max()
                .unwrap_or(5)
                .max(5);
            let mut out = String::new();
            out.push_str(&format!(
                "{:width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
                "label", "precision", "recall", "f1", "support"
            ));
            for (name, m) in report.label_names.iter().zip(&report.per_label) {
                out.push_str(&format!(
                    "{:width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9}\n",
                    name, m.precision, m.recall, m.f1, m.support
                ));
            }
            out.push('\n');
            out.push_str(&format!("subset_accuracy  {:.4}\n", report.subset_accuracy));
            out.push_str(&format!("micro_f1         {:.4}\n", report.micro_f1));
            out.push_str(&format!("macro_f1         {:.4}\n", report.macro_f1));
            out.push_str(&format!("hamming_loss     {:.4}\n", report.hamming_loss));
            out
        }
        ReportFormat::Tsv => {
            let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
            for (name, m) in report.label_names.iter().zip(&report.per_label) {
                out.push_str(&format!(
                    "{name}\t{:.17e}\t{:.17e}\t{:.17e}\t{}\n",
                    m.precision, m.recall, m.f1, m.support
                ));
            }
            out.push_str(&format!("#subset_accuracy\t{:.17e}\n", report.subset_accuracy));
            out.push_str(&format!("#micro_f1\t{:.17e}\n", report.micro_f1));
            out.push_str(&format!("#macro_f1\t{:.17e}\n", report.macro_f1));
            out.push_str(&format!("#hamming_loss\t{:.17e}\n", report.hamming_loss));
            out
        }
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    }
}

/// Parse a TSV render back into a report (round-trip check support).
pub fn parse_tsv_report(text: &str) -> Result<MetricsReport> {
    let mut label_names = Vec::new();
    let mut per_label = Vec::new();
    let mut aggregates = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if let Some(key) = fields[0].strip_prefix('#') {
            let v: f64 = fields
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse("tsv report", i + 1, "bad aggregate"))?;
            aggregates.insert(key.to_string(), v);
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::parse("tsv report", i + 1, "expected 5 fields"));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::parse("tsv report", i + 1, "bad number"))
        };
        label_names.push(fields[0].to_string());
        per_label.push(LabelMetrics {
            precision: parse(fields[1])?,
            recall: parse(fields[2])?,
            f1: parse(fields[3])?,
            support: fields[4]
                .parse()
                .map_err(|_| Error::parse("tsv report", i + 1, "bad support"))?,
        });
    }
    let get = |k: &str| -> Result<f64> {
        aggregates
            .get(k)
            .copied()
            .ok_or_else(|| Error::validation(format!("missing aggregate {k}")))
    };
    Ok(MetricsReport {
        label_names,
        per_label,
        micro_f1: get("micro_f1")?,
        macro_f1: get("macro_f1")?,
        subset_accuracy: get("subset_accuracy")?,
        hamming_loss: get("hamming_loss")?,
    })
}
