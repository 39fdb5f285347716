use criterion::{criterion_group, criterion_main, Criterion};
use emoclass_core::autodiff::{Tape, Tensor};
use emoclass_core::bilstm::{attention_pool, bilstm_single_layer, classify, GateIds};
use emoclass_core::eval::{binarize, micro_macro, PredictionMatrix, Thresholds};
use emoclass_core::features::{fit_tfidf, transform_tfidf};
use emoclass_core::textprep::{normalize, tokenize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn uni(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn bench_tfidf_transform(c: &mut Criterion) {
    let sentences = [
        "what a wonderful surprise to see you here today",
        "i am absolutely furious about the decision",
        "nothing ever changes around here does it",
        "thank you so much for all the help and support",
        "this is the saddest thing i have read all week",
    ];
    let docs: Vec<_> = (0..200)
        .map(|i| tokenize(&normalize(sentences[i % sentences.len()])))
        .collect();
    let model = fit_tfidf(&docs).unwrap();
    c.bench_function("tfidf_transform_200_docs", |b| {
        b.iter(|| {
            for d in &docs {
                black_box(transform_tfidf(&model, d));
            }
        })
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, k) = (1000, 28);
    let mut probs = Tensor::zeros(n, k);
    for r in 0..n {
        for col in 0..k {
            probs.set(r, col, rng.gen_range(0.0..1.0));
        }
    }
    let pm = PredictionMatrix::new((0..n).map(|i| format!("x{i}")).collect(), probs).unwrap();
    let gold: Vec<Vec<bool>> = (0..n)
        .map(|_| (0..k).map(|_| rng.gen_bool(0.15)).collect())
        .collect();
    let thr = Thresholds::uniform(k, 0.5);
    c.bench_function("micro_macro_1000x28", |b| {
        b.iter(|| {
            let pred = binarize(&pm, &thr);
            black_box(micro_macro(&pred, &gold).unwrap());
        })
    });
}

fn bench_bilstm_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (hidden, d) = (32, 50);
    let fan = hidden + d;
    let weights: Vec<Tensor> = (0..8)
        .map(|i| {
            if i % 2 == 0 {
                uni(fan, hidden, &mut rng)
            } else {
                uni(1, hidden, &mut rng)
            }
        })
        .collect();
    let attn = uni(2 * hidden, 2 * hidden, &mut rng);
    let out_w = uni(2 * hidden, 28, &mut rng);
    let out_b = uni(1, 28, &mut rng);
    let seq = uni(30, d, &mut rng);
    c.bench_function("bilstm_forward_30_tokens", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let ids: Vec<_> = weights.iter().map(|w| tape.leaf(w.clone())).collect();
            let gates = GateIds {
                w_f: ids[0],
                b_f: ids[1],
                w_i: ids[2],
                b_i: ids[3],
                w_c: ids[4],
                b_c: ids[5],
                w_o: ids[6],
                b_o: ids[7],
            };
            let inputs: Vec<_> = (0..seq.rows())
                .map(|r| tape.leaf(Tensor::row(seq.row_slice(r))))
                .collect();
            let states = bilstm_single_layer(&mut tape, &inputs, &gates, &gates, hidden).unwrap();
            let wa = tape.leaf(attn.clone());
            let (ctx, _alphas) = attention_pool(&mut tape, &states, wa).unwrap();
            let wo = tape.leaf(out_w.clone());
            let bo = tape.leaf(out_b.clone());
            let probs = classify(&mut tape, ctx, wo, bo).unwrap();
            black_box(tape.value(probs).sum());
        })
    });
}

criterion_group!(benches, bench_tfidf_transform, bench_metrics, bench_bilstm_forward);
criterion_main!(benches);
