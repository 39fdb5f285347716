//! One function per subcommand. All return the library `Result`; the
//! caller maps error variants onto process exit codes.

use crate::config::RunConfig;
use emoclass_core::autodiff::{Axis, NodeId, ParameterSet, Tape, Tensor};
use emoclass_core::bilstm::{
    attention_pool, bilstm_single_layer, classify, predict, render_epoch_log, train_bilstm,
    train_head, BiLstmHyper, GateIds, HeadHyper, LossChoice,
};
use emoclass_core::corpus::{
    compute_stats_multi, load_corpus, top_tokens_per_label, Corpus, LabelVocabulary,
};
use emoclass_core::eval::{
    binarize, build_report, default_threshold_grid, gold_matrix, micro_macro, render_report,
    tune_thresholds, PredictionMatrix, ReportFormat, Thresholds,
};
use emoclass_core::features::{fit_tfidf_with, load_embeddings, load_summary_vectors,
    transform_tfidf};
use emoclass_core::imbalance::{focal_loss, inverse_frequency_weights, weighted_bce, ClassWeights};
use emoclass_core::linear::{predict_proba, train_binary_relevance, LinearConfig};
use emoclass_core::textprep::{normalize, tokenize};
use emoclass_core::{grad_check, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

fn label_vocab(cfg: &RunConfig) -> Result<LabelVocabulary> {
    match cfg.path("labels") {
        Some(p) => LabelVocabulary::load(&p),
        None => Ok(LabelVocabulary::goemotions()),
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(cfg.require("out_dir")?);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    // provenance: exact resolved configuration, including the seed
    write_file(&dir.join("config.resolved"), &cfg.render())?;
    Ok(dir)
}

fn apply_workers(cfg: &RunConfig) -> Result<()> {
    if let Some(w) = cfg.get("workers") {
        let n: usize = w
            .parse()
            .map_err(|_| Error::validation(format!("workers must be an integer, got {w:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    Ok(())
}

fn tokenized(corpus: &Corpus) -> Vec<emoclass_core::textprep::TokenSequence> {
    corpus
        .examples
        .iter()
        .map(|e| tokenize(&normalize(&e.text)))
        .collect()
}

fn loss_choice(cfg: &RunConfig) -> Result<LossChoice> {
    match cfg.get("loss").unwrap_or("bce") {
        "bce" => Ok(LossChoice::WeightedBce),
        "focal" => Ok(LossChoice::Focal {
            gamma: cfg.f64_or("gamma", 2.0)?,
        }),
        other => Err(Error::validation(format!(
            "loss must be bce or focal, got {other:?}"
        ))),
    }
}

fn class_weights(cfg: &RunConfig, train: &Corpus) -> Result<Option<ClassWeights>> {
    match cfg.get("class_weights").unwrap_or("none") {
        "none" => Ok(None),
        "inverse" => {
            let stats = compute_stats_multi(&[train])?;
            Ok(Some(inverse_frequency_weights(&stats)?))
        }
        path => Ok(Some(ClassWeights::load(Path::new(path))?)),
    }
}

// ---------------------------------------------------------------- stats

pub const STATS_KEYS: &[&str] = &["data", "labels", "out", "top_tokens", "seed"];

pub fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let vocab = label_vocab(cfg)?;
    let paths: Vec<PathBuf> = cfg
        .require("data")?
        .split(',')
        .map(PathBuf::from)
        .collect();
    let mut corpora = Vec::new();
    for p in &paths {
        let split = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "split".into());
        corpora.push(load_corpus(p, &vocab, &split)?);
    }
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let stats = compute_stats_multi(&refs)?;
    let mut report = stats.render_text(&vocab.names().to_vec());
    if let Some(k) = cfg.get("top_tokens") {
        let k: usize = k
            .parse()
            .map_err(|_| Error::validation(format!("top_tokens must be an integer, got {k:?}")))?;
        let combined = Corpus {
            examples: corpora.iter().flat_map(|c| c.examples.clone()).collect(),
            split_name: "combined".into(),
            vocab: vocab.clone(),
        };
        for label in 0..vocab.len() {
            let tops = top_tokens_per_label(&combined, label, k)?;
            let rendered: Vec<String> =
                tops.iter().map(|(t, c)| format!("{t}:{c}")).collect();
            report.push_str(&format!(
                "top_tokens[{}]\t{}\n",
                vocab.names()[label],
                rendered.join(" ")
            ));
        }
    }
    match cfg.path("out") {
        Some(p) => write_file(&p, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

// ------------------------------------------------------------- train-lr

pub const TRAIN_LR_KEYS: &[&str] = &[
    "train", "val", "test", "labels", "out_dir", "min_df", "max_vocab", "l2_c", "max_iter",
    "tolerance", "balanced", "workers", "seed",
];

pub fn cmd_train_lr(cfg: &RunConfig) -> Result<()> {
    apply_workers(cfg)?;
    let vocab = label_vocab(cfg)?;
    let train_path = cfg.require_path("train")?;
    let out_dir = prepare_out_dir(cfg)?;
    let train = load_corpus(&train_path, &vocab, "train")?;
    let docs = tokenized(&train);
    let min_df = cfg.usize_or("min_df", 2)?;
    let max_vocab = cfg.usize_or("max_vocab", 50_000)?;
    eprintln!("fitting TF-IDF (min_df {min_df}, cap {max_vocab}) ...");
    let tfidf = fit_tfidf_with(&docs, min_df, max_vocab)?;
    let x: Vec<_> = docs.iter().map(|d| transform_tfidf(&tfidf, d)).collect();
    let y: Vec<_> = train.examples.iter().map(|e| e.labels.clone()).collect();
    let lc = LinearConfig {
        max_iter: cfg.usize_or("max_iter", 1000)?,
        tolerance: cfg.f64_or("tolerance", 1e-6)?,
        l2_c: cfg.f64_or("l2_c", 1.0)?,
        balanced: cfg.bool_or("balanced", true)?,
    };
    eprintln!("training {} binary classifiers ...", vocab.len());
    let (model, histories) = train_binary_relevance(&x, &y, vocab.len(), &lc)?;
    model.save(&out_dir.join("model.tsv"))?;
    let mut log = String::from("label\titerations\tfinal_loss\n");
    for (k, h) in histories.iter().enumerate() {
        log.push_str(&format!(
            "{}\t{}\t{:.17e}\n",
            vocab.names()[k],
            h.len(),
            h.last().copied().unwrap_or(f64::NAN)
        ));
    }
    write_file(&out_dir.join("train_log.tsv"), &log)?;
    for (key, name) in [("val", "val_predictions.tsv"), ("test", "test_predictions.tsv")] {
        if let Some(p) = cfg.path(key) {
            let corpus = load_corpus(&p, &vocab, key)?;
            let docs = tokenized(&corpus);
            let xs: Vec<_> = docs.iter().map(|d| transform_tfidf(&tfidf, d)).collect();
            let probs = predict_proba(&model, &xs)?;
            let pm = PredictionMatrix::new(
                corpus.examples.iter().map(|e| e.id.clone()).collect(),
                probs,
            )?;
            pm.save(&out_dir.join(name))?;
            eprintln!("wrote {name}");
        }
    }
    eprintln!("done; artifacts in {}", out_dir.display());
    Ok(())
}

// --------------------------------------------------------- train-bilstm

pub const TRAIN_BILSTM_KEYS: &[&str] = &[
    "train", "val", "test", "labels", "embeddings", "embed_dim", "hidden", "layers", "dropout",
    "max_len", "batch_size", "lr", "epochs", "seed", "loss", "gamma", "class_weights",
    "grad_clip", "out_dir",
];

pub fn cmd_train_bilstm(cfg: &RunConfig) -> Result<()> {
    let vocab = label_vocab(cfg)?;
    // validate every input before any training work begins
    let train_path = cfg.require_path("train")?;
    let val_path = cfg.require_path("val")?;
    let emb_path = cfg.require_path("embeddings")?;
    let out_dir = prepare_out_dir(cfg)?;
    let defaults = BiLstmHyper::default();
    let hyper = BiLstmHyper {
        embed_dim: cfg.usize_or("embed_dim", defaults.embed_dim)?,
        hidden: cfg.usize_or("hidden", defaults.hidden)?,
        layers: cfg.usize_or("layers", defaults.layers)?,
        dropout: cfg.f64_or("dropout", defaults.dropout)?,
        max_len: cfg.usize_or("max_len", defaults.max_len)?,
        batch_size: cfg.usize_or("batch_size", defaults.batch_size)?,
        lr: cfg.f64_or("lr", defaults.lr)?,
        epochs: cfg.usize_or("epochs", defaults.epochs)?,
        seed: cfg.u64_or("seed", defaults.seed)?,
        grad_clip: cfg.f64_or("grad_clip", defaults.grad_clip)?,
    };
    let loss = loss_choice(cfg)?;
    let train = load_corpus(&train_path, &vocab, "train")?;
    let val = load_corpus(&val_path, &vocab, "val")?;
    let weights = class_weights(cfg, &train)?;
    eprintln!("loading embeddings from {} ...", emb_path.display());
    let table = load_embeddings(&emb_path, hyper.embed_dim)?;
    eprintln!(
        "training BiLSTM (hidden {}, layers {}, {} epochs) ...",
        hyper.hidden, hyper.layers, hyper.epochs
    );
    let outcome = train_bilstm(&train, &val, &table, &hyper, loss, weights.as_ref())?;
    write_file(&out_dir.join("epochs.tsv"), &render_epoch_log(&outcome.log))?;
    outcome
        .model
        .save(&out_dir.join("model.ntc"), &out_dir.join("model.json"))?;
    if let Some((best, macro_f1)) = &outcome.best {
        best.save(&out_dir.join("best.ntc"))?;
        eprintln!("best validation macro-F1 {macro_f1:.4}");
    }
    if let Some(p) = cfg.path("test") {
        let test = load_corpus(&p, &vocab, "test")?;
        let pm = predict(&outcome.model, &test, &table)?;
        pm.save(&out_dir.join("test_predictions.tsv"))?;
        eprintln!("wrote test_predictions.tsv");
    }
    eprintln!("done; artifacts in {}", out_dir.display());
    Ok(())
}

// ----------------------------------------------------------- train-head

pub const TRAIN_HEAD_KEYS: &[&str] = &[
    "train", "summaries", "labels", "lr", "epochs", "batch_size", "seed", "loss", "gamma",
    "class_weights", "out_dir",
];

pub fn cmd_train_head(cfg: &RunConfig) -> Result<()> {
    let vocab = label_vocab(cfg)?;
    let train_path = cfg.require_path("train")?;
    let sum_path = cfg.require_path("summaries")?;
    let out_dir = prepare_out_dir(cfg)?;
    let defaults = HeadHyper::default();
    let hyper = HeadHyper {
        lr: cfg.f64_or("lr", defaults.lr)?,
        epochs: cfg.usize_or("epochs", defaults.epochs)?,
        batch_size: cfg.usize_or("batch_size", defaults.batch_size)?,
        seed: cfg.u64_or("seed", defaults.seed)?,
    };
    let loss = loss_choice(cfg)?;
    let train = load_corpus(&train_path, &vocab, "train")?;
    let weights = class_weights(cfg, &train)?;
    let xsum = load_summary_vectors(&sum_path, &train)?;
    let y: Vec<_> = train.examples.iter().map(|e| e.labels.clone()).collect();
    eprintln!("training summary head ({} epochs) ...", hyper.epochs);
    let (head, losses) = train_head(&xsum, &y, vocab.len(), &hyper, loss, weights.as_ref())?;
    let mut params = ParameterSet::new();
    params.insert("w", head.w.clone());
    params.insert("b", head.b.clone());
    params.save(&out_dir.join("head.ntc"))?;
    let mut log = String::from("epoch\ttrain_loss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{i}\t{l:.17e}\n"));
    }
    write_file(&out_dir.join("epochs.tsv"), &log)?;
    eprintln!("done; artifacts in {}", out_dir.display());
    Ok(())
}

// ------------------------------------------------------------- evaluate

pub const EVALUATE_KEYS: &[&str] = &[
    "test", "predictions", "thresholds", "labels", "format", "out", "macro_exclude", "seed",
];

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let vocab = label_vocab(cfg)?;
    let test = load_corpus(&cfg.require_path("test")?, &vocab, "test")?;
    let pm = PredictionMatrix::load(&cfg.require_path("predictions")?)?;
    if pm.label_count() != vocab.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} prediction columns", pm.label_count()),
            format!("{} labels", vocab.len()),
        ));
    }
    if pm.ids.len() != test.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} prediction rows", pm.ids.len()),
            format!("{} test examples", test.len()),
        ));
    }
    let thresholds = match cfg.path("thresholds") {
        Some(p) => Thresholds::load(&p)?,
        None => Thresholds::uniform(vocab.len(), 0.5),
    };
    let pred = binarize(&pm, &thresholds);
    let gold = gold_matrix(
        &test.examples.iter().map(|e| e.labels.clone()).collect::<Vec<_>>(),
        vocab.len(),
    );
    let report = build_report(&pred, &gold, &vocab)?;
    let format = match cfg.get("format").unwrap_or("text") {
        "text" => ReportFormat::Text,
        "tsv" => ReportFormat::Tsv,
        "json" => ReportFormat::Json,
        other => {
            return Err(Error::validation(format!(
                "format must be text, tsv, or json, got {other:?}"
            )))
        }
    };
    let rendered = render_report(&report, format);
    if let Some(p) = cfg.path("out") {
        write_file(&p, &rendered)?;
    } else {
        eprintln!("{rendered}");
    }
    // aggregate row: micro-F1, macro-F1, subset accuracy, Hamming loss
    println!(
        "{:.4}\t{:.4}\t{:.4}\t{:.4}",
        report.micro_f1, report.macro_f1, report.subset_accuracy, report.hamming_loss
    );
    Ok(())
}

// ------------------------------------------------------ tune-thresholds

pub const TUNE_KEYS: &[&str] = &["val", "predictions", "labels", "grid", "out", "workers", "seed"];

pub fn cmd_tune_thresholds(cfg: &RunConfig) -> Result<()> {
    apply_workers(cfg)?;
    let vocab = label_vocab(cfg)?;
    let val = load_corpus(&cfg.require_path("val")?, &vocab, "val")?;
    let pm = PredictionMatrix::load(&cfg.require_path("predictions")?)?;
    let grid = match cfg.get("grid") {
        None => default_threshold_grid(),
        Some(g) => g
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::validation(format!("bad grid value {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?,
    };
    let gold = gold_matrix(
        &val.examples.iter().map(|e| e.labels.clone()).collect::<Vec<_>>(),
        vocab.len(),
    );
    let tuned = tune_thresholds(&pm, &gold, &grid)?;
    let (_, macro_default) =
        micro_macro(&binarize(&pm, &Thresholds::uniform(vocab.len(), 0.5)), &gold)?;
    let (_, macro_tuned) = micro_macro(&binarize(&pm, &tuned), &gold)?;
    let out = PathBuf::from(cfg.require("out")?);
    tuned.save(&out, &vocab.names().to_vec())?;
    println!("default_macro_f1\t{macro_default:.4}");
    println!("tuned_macro_f1\t{macro_tuned:.4}");
    Ok(())
}

// ------------------------------------------------------------ gradcheck

pub const GRADCHECK_KEYS: &[&str] = &["seed", "epsilon", "threshold"];

const GATE_KEYS: [&str; 8] = ["w_f", "b_f", "w_i", "b_i", "w_c", "b_c", "w_o", "b_o"];

fn uni(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches data")
}

fn gates_of(ids: &HashMap<String, NodeId>, layer: usize, dir: &str) -> GateIds {
    let g = |key: &str| ids[&format!("l{layer}.{dir}.{key}")];
    GateIds {
        w_f: g("w_f"),
        b_f: g("b_f"),
        w_i: g("w_i"),
        b_i: g("b_i"),
        w_c: g("w_c"),
        b_c: g("b_c"),
        w_o: g("w_o"),
        b_o: g("b_o"),
    }
}

/// Self-check of the differentiation engine on toy shapes: the full
/// BiLSTM+attention+focal graph against central finite differences, plus
/// the focal/BCE identity at gamma 0.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.u64_or("seed", 42)?;
    let epsilon = cfg.f64_or("epsilon", 1e-4)?;
    let threshold = cfg.f64_or("threshold", 1e-4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hidden, d, layers, k) = (6usize, 3usize, 2usize, 4usize);
    let mut params = ParameterSet::new();
    for l in 0..layers {
        let input_dim = if l == 0 { d } else { 2 * hidden };
        for dir in ["fwd", "bwd"] {
            for key in GATE_KEYS {
                let t = if key.starts_with('w') {
                    uni(hidden + input_dim, hidden, 1.0, &mut rng)
                } else {
                    uni(1, hidden, 1.0, &mut rng)
                };
                params.insert(&format!("l{l}.{dir}.{key}"), t);
            }
        }
    }
    params.insert("attn.w", uni(2 * hidden, 2 * hidden, 1.0, &mut rng));
    params.insert("out.w", uni(2 * hidden, k, 1.0, &mut rng));
    params.insert("out.b", uni(1, k, 1.0, &mut rng));
    let sequences: Vec<Tensor> = (0..2).map(|_| uni(3, d, 1.0, &mut rng)).collect();
    let mut targets = Tensor::zeros(2, k);
    targets.set(0, 1, 1.0);
    targets.set(1, 0, 1.0);
    targets.set(1, 3, 1.0);

    let err = grad_check(&mut params, epsilon, |ps| {
        let mut tape = Tape::new();
        let ids: HashMap<String, NodeId> = ps
            .names()
            .iter()
            .map(|n| (n.clone(), tape.leaf(ps.value(n).clone())))
            .collect();
        let mut prob_rows = Vec::new();
        for seq in &sequences {
            let mut inputs: Vec<NodeId> = (0..seq.rows())
                .map(|r| tape.leaf(Tensor::row(seq.row_slice(r))))
                .collect();
            for l in 0..layers {
                let f = gates_of(&ids, l, "fwd");
                let b = gates_of(&ids, l, "bwd");
                inputs = bilstm_single_layer(&mut tape, &inputs, &f, &b, hidden)?;
            }
            let (c, _a) = attention_pool(&mut tape, &inputs, ids["attn.w"])?;
            prob_rows.push(classify(&mut tape, c, ids["out.w"], ids["out.b"])?);
        }
        let probs = tape.concat(Axis::Rows, &prob_rows)?;
        let loss = emoclass_core::imbalance::focal_loss_node(&mut tape, probs, &targets, None, 2.0)?;
        tape.backward(loss)?;
        for name in ps.names().to_vec() {
            let g = tape.grad(ids[&name]).clone();
            ps.set_grad(&name, g);
        }
        Ok(tape.value(loss).item())
    })?;
    println!("bilstm_focal_max_rel_err\t{err:.3e}");
    if err >= threshold {
        return Err(Error::NonFinite(format!(
            "gradient check failed: max relative error {err:.3e} >= {threshold:.3e}"
        )));
    }

    // loss identity on random instances
    for _ in 0..20 {
        let probs = {
            let mut t = uni(3, k, 0.499, &mut rng);
            t = t.map(|v| v + 0.5);
            t
        };
        let t01 = uni(3, k, 1.0, &mut rng).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let bce = weighted_bce(&probs, &t01, None)?;
        let focal0 = focal_loss(&probs, &t01, None, 0.0)?;
        if (bce - focal0).abs() >= 1e-12 {
            return Err(Error::NonFinite(format!(
                "focal(0) != bce: {bce} vs {focal0}"
            )));
        }
    }
    println!("focal_bce_identity\tok");
    Ok(())
}
