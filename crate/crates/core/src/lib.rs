//! Multi-label emotion classification engine: corpus handling, text
//! preprocessing, sparse and dense featurization, reverse-mode automatic
//! differentiation, class-imbalance losses, a binary-relevance linear
//! baseline, a BiLSTM-with-attention classifier, and evaluation tooling.

pub mod autodiff;
pub mod bilstm;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod imbalance;
pub mod linear;
pub mod textprep;

pub use autodiff::{grad_check, Axis, NodeId, ParameterSet, Tape, Tensor};
pub use corpus::{
    compute_stats, compute_stats_multi, load_corpus, Corpus, CorpusStats, Example, LabelSet,
    LabelVocabulary, GOEMOTIONS_LABELS,
};
pub use error::{Error, Result};
pub use eval::{
    binarize, build_report, gold_matrix, hamming_loss, micro_macro, per_label_prf, render_report,
    subset_accuracy, tune_thresholds, MetricsReport, PredictionMatrix, ReportFormat, Thresholds,
};
pub use features::{
    embed_sequence, fit_tfidf, load_embeddings, load_summary_vectors, mean_pool, transform_tfidf,
    EmbeddingTable, SparseVector, TfidfModel,
};
pub use imbalance::{focal_loss, inverse_frequency_weights, weighted_bce, ClassWeights};
pub use linear::{predict_proba, train_binary_relevance, LinearConfig, LinearModel};
pub use textprep::{build_vocab, normalize, tokenize, TokenVocabulary};
