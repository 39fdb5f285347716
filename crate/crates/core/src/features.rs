//! Feature extraction: TF-IDF over unigrams and bigrams, mean-pooled
//! pretrained embeddings, padded embedding sequences, and ingestion of
//! precomputed per-example summary vectors.

use crate::autodiff::Tensor;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

/// Sparse feature vector: (index, value) pairs sorted by index.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::validation(format!("duplicate sparse index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::validation(format!(
                    "sparse index {i} >= dimension {dim}"
                )));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("sparse vector entry".into()));
        }
        Ok(SparseVector { dim, entries })
    }

    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    /// `index:value` pairs, space separated.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(i, v)| format!("{i}:{v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn ngrams(doc: &TokenSequence) -> Vec<String> {
    let mut grams: Vec<String> = doc.tokens.clone();
    for pair in doc.tokens.windows(2) {
        grams.push(format!("{} {}", pair[0], pair[1]));
    }
    grams
}

#[derive(Clone, Debug)]
pub struct TfidfModel {
    columns: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, ngram: &str) -> Option<f64> {
        self.columns.get(ngram).map(|&c| self.idf[c])
    }

    pub fn column(&self, ngram: &str) -> Option<usize> {
        self.columns.get(ngram).copied()
    }
}

/// Fit on all n-grams of the training documents (no frequency cutoff).
pub fn fit_tfidf(train_docs: &[TokenSequence]) -> Result<TfidfModel> {
    fit_tfidf_with(train_docs, 1, usize::MAX)
}

/// Fit keeping n-grams with document frequency >= `min_df`, capped at the
/// `max_size` most document-frequent (ties broken lexicographically).
/// idf[t] = ln((1 + |D|) / df(t)).
pub fn fit_tfidf_with(
    train_docs: &[TokenSequence],
    min_df: usize,
    max_size: usize,
) -> Result<TfidfModel> {
    if train_docs.iter().all(|d| d.is_empty()) {
        return Err(Error::validation("cannot fit TF-IDF on empty corpus"));
    }
    let n_docs = train_docs.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    for doc in train_docs {
        let mut grams = ngrams(doc);
        grams.sort_unstable();
        grams.dedup();
        for g in grams {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df.into_iter().filter(|&(_, d)| d >= min_df).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size);
    // stable column order: lexicographic over the kept n-grams
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let mut columns = HashMap::with_capacity(kept.len());
    let mut idf = Vec::with_capacity(kept.len());
    for (col, (gram, d)) in kept.into_iter().enumerate() {
        columns.insert(gram, col);
        idf.push(((1 + n_docs) as f64 / d as f64).ln());
    }
    Ok(TfidfModel { columns, idf })
}

/// Term frequency normalized over all in-model n-gram occurrences of the
/// document, scaled by idf. Unknown n-grams are skipped; a document with
/// no in-model n-grams yields an empty vector.
pub fn transform_tfidf(model: &TfidfModel, doc: &TokenSequence) -> SparseVector {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    let mut total = 0usize;
    for g in ngrams(doc) {
        if let Some(&col) = model.columns.get(&g) {
            *counts.entry(col).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return SparseVector::empty(model.dim());
    }
    let entries = counts
        .into_iter()
        .map(|(col, c)| (col, c as f64 / total as f64 * model.idf[col]))
        .collect();
    SparseVector::new(model.dim(), entries).expect("tfidf entries are valid by construction")
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    vectors: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(|v| v.as_slice())
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape(
                "embedding insert",
                format!("dim {}", self.dim),
                format!("len {}", vector.len()),
            ));
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(())
    }

    pub fn with_dim(dim: usize) -> Self {
        EmbeddingTable {
            vectors: HashMap::new(),
            dim,
        }
    }
}

/// GloVe distribution format: one `token v1 ... vd` line per token.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let display = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut table = EmbeddingTable::with_dim(expected_dim);
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or_else(|| Error::parse(&display, line_no, "empty row"))?;
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::parse(&display, line_no, format!("non-numeric value {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != expected_dim {
            return Err(Error::parse(
                &display,
                line_no,
                format!("expected {expected_dim} values, got {}", values.len()),
            ));
        }
        table.vectors.insert(token.to_string(), values);
    }
    Ok(table)
}

/// Mean of the embeddings of in-table tokens. Returns the vector and a
/// degenerate flag that is true when every token was out of vocabulary
/// (the vector is then all zeros).
pub fn mean_pool(table: &EmbeddingTable, doc: &TokenSequence) -> (Vec<f64>, bool) {
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for t in &doc.tokens {
        if let Some(v) = table.get(t) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
            n += 1;
        }
    }
    if n == 0 {
        return (acc, true);
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    (acc, false)
}

/// Token embeddings stacked into a matrix, truncated to `max_len`. OOV
/// tokens become zero rows. Returns the matrix and the actual length.
pub fn embed_sequence(
    table: &EmbeddingTable,
    doc: &TokenSequence,
    max_len: usize,
) -> (Tensor, usize) {
    assert!(max_len >= 1);
    let len = doc.tokens.len().min(max_len);
    let mut m = Tensor::zeros(len.max(1), table.dim());
    for (r, t) in doc.tokens.iter().take(len).enumerate() {
        if let Some(v) = table.get(t) {
            for (c, &x) in v.iter().enumerate() {
                m.set(r, c, x);
            }
        }
    }
    (m, len)
}

/// Load `id v1 ... vd` rows and align them to corpus order by id.
pub fn load_summary_vectors(path: &Path, corpus: &Corpus) -> Result<Tensor> {
    let display = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut rows: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .ok_or_else(|| Error::parse(&display, line_no, "empty row"))?
            .to_string();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::parse(&display, line_no, format!("non-numeric value {p:?}")))
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    &display,
                    line_no,
                    format!("expected {d} values, got {}", values.len()),
                ));
            }
            _ => {}
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::validation(format!("duplicate id {id} in {display}")));
        }
    }
    let dim = dim.ok_or_else(|| Error::validation(format!("{display} has no rows")))?;
    let missing: Vec<&str> = corpus
        .examples
        .iter()
        .filter(|e| !rows.contains_key(&e.id))
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "summary vectors missing ids: {}",
            missing.join(", ")
        )));
    }
    let mut out = Tensor::zeros(corpus.len(), dim);
    for (r, ex) in corpus.examples.iter().enumerate() {
        for (c, &v) in rows[&ex.id].iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}
