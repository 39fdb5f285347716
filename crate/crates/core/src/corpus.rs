//! GoEmotions-format corpus ingestion and dataset statistics.
//!
//! Input files are 3-field TSV: `text<TAB>comma-separated label
//! indices<TAB>id`. A one-line header is auto-detected and skipped.

use crate::error::{Error, Result};
use crate::textprep;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

/// The 27 emotions plus neutral, in the official index order.
pub const GOEMOTIONS_LABELS: [&str; 28] = [
    "admiration",
    "amusement",
    "anger",
    "annoyance",
    "approval",
    "caring",
    "confusion",
    "curiosity",
    "desire",
    "disappointment",
    "disapproval",
    "disgust",
    "embarrassment",
    "excitement",
    "fear",
    "gratitude",
    "grief",
    "joy",
    "love",
    "nervousness",
    "optimism",
    "pride",
    "realization",
    "relief",
    "remorse",
    "sadness",
    "surprise",
    "neutral",
];

#[derive(Clone, Debug)]
pub struct LabelVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::validation("label vocabulary is empty"));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate label name {n}")));
            }
        }
        Ok(LabelVocabulary { names, index })
    }

    /// The canonical 28-label vocabulary.
    pub fn goemotions() -> Self {
        Self::new(GOEMOTIONS_LABELS.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    /// One label name per line; line order defines the index.
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut names = Vec::new();
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let line = line.trim();
            if !line.is_empty() {
                names.push(line.to_string());
            }
        }
        Self::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Sorted, deduplicated label indices attached to one example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    indices: Vec<usize>,
}

impl LabelSet {
    pub fn new(mut indices: Vec<usize>, label_count: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::validation("empty label set"));
        }
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= label_count) {
            return Err(Error::validation(format!(
                "label index {bad} out of range (K = {label_count})"
            )));
        }
        Ok(LabelSet { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.indices.binary_search(&label).is_ok()
    }

    /// Dense 0/1 membership row of length K.
    pub fn to_binary_row(&self, label_count: usize) -> Vec<bool> {
        let mut row = vec![false; label_count];
        for &i in &self.indices {
            row[i] = true;
        }
        row
    }
}

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub labels: LabelSet,
    pub char_length: usize,
    pub word_count: usize,
    pub avg_word_length: f64,
}

impl Example {
    pub fn new(id: String, text: String, labels: LabelSet) -> Self {
        let char_length = text.chars().count();
        let words: Vec<&str> = text.split_whitespace().collect();
        let word_count = words.len();
        let avg_word_length = if word_count > 0 {
            words.iter().map(|w| w.chars().count()).sum::<usize>() as f64 / word_count as f64
        } else {
            0.0
        };
        Example {
            id,
            text,
            labels,
            char_length,
            word_count,
            avg_word_length,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub examples: Vec<Example>,
    pub split_name: String,
    pub vocab: LabelVocabulary,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Write back in the ingestion TSV format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for ex in &self.examples {
            let labels: Vec<String> = ex.labels.indices().iter().map(|i| i.to_string()).collect();
            writeln!(f, "{}\t{}\t{}", ex.text, labels.join(","), ex.id)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

fn parse_labels(field: &str, line_no: usize, path: &str, k: usize) -> Result<LabelSet> {
    if field.trim().is_empty() {
        return Err(Error::validation(format!(
            "{path}:{line_no}: empty label field"
        )));
    }
    let mut indices = Vec::new();
    for part in field.split(',') {
        let v: i64 = part
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad label index {part:?}")))?;
        if v < 0 {
            return Err(Error::validation(format!(
                "{path}:{line_no}: negative label index {v}"
            )));
        }
        indices.push(v as usize);
    }
    LabelSet::new(indices, k)
        .map_err(|e| Error::validation(format!("{path}:{line_no}: {e}")))
}

pub fn load_corpus(path: &Path, vocab: &LabelVocabulary, split_name: &str) -> Result<Corpus> {
    let display = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let k = vocab.len();
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                &display,
                line_no,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        // A single header line is tolerated at the top of the file.
        if line_no == 1
            && !fields[1].is_empty()
            && fields[1].split(',').any(|p| p.trim().parse::<i64>().is_err()) {
            continue;
        }
        let labels = parse_labels(fields[1], line_no, &display, k)?;
        if labels.len() > 5 {
            eprintln!(
                "warning: {display}:{line_no}: example has {} labels (expected at most 5)",
                labels.len()
            );
        }
        let id = fields[2].to_string();
        if !ids.insert(id.clone()) {
            return Err(Error::validation(format!(
                "{display}:{line_no}: duplicate id {id} within split {split_name}"
            )));
        }
        examples.push(Example::new(id, fields[0].to_string(), labels));
    }
    Ok(Corpus {
        examples,
        split_name: split_name.to_string(),
        vocab: vocab.clone(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub per_label_counts: Vec<usize>,
    /// labels-per-example -> (count, percentage of total)
    pub label_count_histogram: BTreeMap<usize, (usize, f64)>,
    pub mean_char_length: f64,
    pub mean_word_count: f64,
    pub median_word_count: f64,
    pub char_length_range: (usize, usize),
}

impl CorpusStats {
    /// Flat key/value text report.
    pub fn render_text(&self, label_names: &[String]) -> String {
        let mut out = String::new();
        out.push_str(&format!("total\t{}\n", self.total));
        out.push_str(&format!("mean_char_length\t{:.2}\n", self.mean_char_length));
        out.push_str(&format!("mean_word_count\t{:.2}\n", self.mean_word_count));
        out.push_str(&format!("median_word_count\t{}\n", self.median_word_count));
        out.push_str(&format!(
            "char_length_range\t{}-{}\n",
            self.char_length_range.0, self.char_length_range.1
        ));
        for (n, (count, pct)) in &self.label_count_histogram {
            out.push_str(&format!("labels_per_example[{n}]\t{count}\t{pct:.2}%\n"));
        }
        for (i, count) in self.per_label_counts.iter().enumerate() {
            let name = label_names.get(i).map(|s| s.as_str()).unwrap_or("?");
            out.push_str(&format!("label[{name}]\t{count}\n"));
        }
        out
    }
}

pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats> {
    compute_stats_multi(&[corpus])
}

/// Statistics over examples pooled from several splits.
pub fn compute_stats_multi(corpora: &[&Corpus]) -> Result<CorpusStats> {
    let total: usize = corpora.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Err(Error::validation("cannot compute stats of an empty corpus"));
    }
    let k = corpora[0].vocab.len();
    let mut per_label_counts = vec![0usize; k];
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut char_sum = 0usize;
    let mut word_sum = 0usize;
    let mut word_counts = Vec::with_capacity(total);
    let mut char_min = usize::MAX;
    let mut char_max = 0usize;
    for corpus in corpora {
        for ex in &corpus.examples {
            for &l in ex.labels.indices() {
                per_label_counts[l] += 1;
            }
            *hist.entry(ex.labels.len()).or_insert(0) += 1;
            char_sum += ex.char_length;
            word_sum += ex.word_count;
            word_counts.push(ex.word_count);
            char_min = char_min.min(ex.char_length);
            char_max = char_max.max(ex.char_length);
        }
    }
    word_counts.sort_unstable();
    let median_word_count = if total % 2 == 1 {
        word_counts[total / 2] as f64
    } else {
        (word_counts[total / 2 - 1] + word_counts[total / 2]) as f64 / 2.0
    };
    let label_count_histogram = hist
        .into_iter()
        .map(|(n, c)| (n, (c, 100.0 * c as f64 / total as f64)))
        .collect();
    Ok(CorpusStats {
        total,
        per_label_counts,
        label_count_histogram,
        mean_char_length: char_sum as f64 / total as f64,
        mean_word_count: word_sum as f64 / total as f64,
        median_word_count,
        char_length_range: (char_min, char_max),
    })
}

/// The `k` most frequent tokens among examples carrying `label`,
/// descending frequency, ties broken lexicographically.
pub fn top_tokens_per_label(
    corpus: &Corpus,
    label: usize,
    k: usize,
) -> Result<Vec<(String, usize)>> {
    if label >= corpus.vocab.len() {
        return Err(Error::validation(format!(
            "label {label} out of range (K = {})",
            corpus.vocab.len()
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in &corpus.examples {
        if !ex.labels.contains(label) {
            continue;
        }
        for t in textprep::tokenize(&textprep::normalize(&ex.text)).tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}
