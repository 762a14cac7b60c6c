//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ctm_core::metrics::{
    evaluate_crosslingual, gwet_ac1, kl_divergence, npmi_pair, CooccurrenceStats, PredictionSet,
    RatingMatrix, Weighting, EPSILON,
};
use ctm_core::model::network::kl_to_prior;
use ctm_core::model::{
    decode, laplace_prior, save_model, train, InputMode, ModelConfig, ModelParameters, Phase,
    PriorParams, TopicDistribution, TopicModel, TrainingSet,
};
use ctm_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus, SyntheticDoc, View};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SIMPLEX_TOL: f64 = 1e-6;
const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-4;
const HELD_OUT: usize = 300;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for (i, mode) in [InputMode::Contextual, InputMode::Bow, InputMode::Combined]
        .into_iter()
        .enumerate()
    {
        let inst = common::random_instance(mode, 7, 4, 3, vec![5], 2, 100 + i as u64);
        let r = common::check_gradients(&inst, FD_STEP);
        checked += r.checked;
        if r.max_relative_error >= worst.0 {
            worst = (r.max_relative_error, format!("{mode}: {}", r.worst));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.0 < GRADIENT_TOL && elapsed < Duration::from_secs(5),
        format!(
            "{checked} scalars, max rel err {:.2e} < {GRADIENT_TOL:e} ({}), {elapsed:.2?} < 5s",
            worst.0, worst.1
        ),
    )
}

fn on_simplex(v: &[f64]) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

fn simplex_suite() -> Outcome {
    let mut config = ModelConfig::new(10, InputMode::Combined, 50, 16);
    config.hidden_sizes = vec![20, 20];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = ModelParameters::init(&config, &mut rng);
    let model = params.into_model(
        config.clone(),
        ctm_core::corpus::Vocabulary::from_tokens((0..50).map(|i| format!("t{i}")).collect())
            .expect("vocabulary"),
    );
    let inputs = Array2::from_shape_simple_fn((1000, config.input_dim()), || {
        rng.random_range(-3.0..3.0_f64).abs() * rng.random_range(-1.0..1.0)
    });
    let thetas = model
        .infer_batch(inputs.view(), 10, 3)
        .expect("inference on valid inputs");
    let bad_theta = thetas.iter().filter(|t| !on_simplex(t.as_slice())).count();
    let z = Array2::from_shape_simple_fn((1000, config.num_topics), || rng.random_range(-4.0..4.0));
    let word_dist = decode(&model.params, &config, z.view(), Phase::Eval);
    let bad_words = word_dist
        .rows()
        .into_iter()
        .filter(|r| !on_simplex(r.as_slice().expect("standard layout")))
        .count();

    let mut self_kl_max: f64 = 0.0;
    let mut kl_min = f64::INFINITY;
    for _ in 0..1000 {
        let k = 10;
        let mu = Array1::from_shape_simple_fn(k, || rng.random_range(-3.0..3.0));
        let lv = Array1::from_shape_simple_fn(k, || rng.random_range(-3.0..3.0));
        let q = PriorParams {
            mean: mu.to_vec(),
            variance: lv.iter().map(|v: &f64| v.exp()).collect(),
        };
        self_kl_max = self_kl_max.max(kl_to_prior(mu.view(), lv.view(), &q).abs());
        let mu2 = Array1::from_shape_simple_fn(k, || rng.random_range(-3.0..3.0));
        let lv2 = Array1::from_shape_simple_fn(k, || rng.random_range(-3.0..3.0));
        kl_min = kl_min.min(kl_to_prior(mu2.view(), lv2.view(), &q));
    }
    outcome(
        bad_theta == 0 && bad_words == 0 && self_kl_max == 0.0 && kl_min >= -1e-9,
        format!(
            "theta off-simplex {bad_theta}/1000, word_dist off-simplex {bad_words}/1000, \
             max |KL(q||q)| = {self_kl_max:e}, min KL = {kl_min:.3e}"
        ),
    )
}

fn prior_formula() -> Outcome {
    let a = laplace_prior(2, 1.0);
    let b = laplace_prior(50, 0.02);
    let exact = |p: &PriorParams, var: f64| {
        p.mean.iter().all(|&m| m == 0.0) && p.variance.iter().all(|&v| v == var)
    };
    outcome(
        exact(&a, 0.5) && exact(&b, 49.0),
        format!(
            "(2, 1) -> (0, {}), (50, 0.02) -> (0, {})",
            a.variance[0], b.variance[0]
        ),
    )
}

fn uniform_baseline() -> Outcome {
    let mut got = Vec::new();
    for k in [25usize, 50] {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let entries = (0..200)
            .map(|i| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                let theta = TopicDistribution::new(raw.into_iter().map(|x| x / s).collect())
                    .expect("normalized");
                (format!("d{i}"), theta)
            })
            .collect();
        let en = PredictionSet::new(entries).expect("predictions");
        let r = evaluate_crosslingual(&BTreeMap::new(), &en, &[], None, &Default::default())
            .expect("report");
        got.push(r.baseline.mat);
    }
    outcome(
        got == [4.0, 2.0],
        format!("K=25 Mat {:.2}, K=50 Mat {:.2}", got[0], got[1]),
    )
}

fn view_inputs(docs: &[SyntheticDoc], view: View) -> Array2<f64> {
    let dim = docs[0].view_a.len();
    Array2::from_shape_fn((docs.len(), dim), |(r, c)| {
        let v = match view {
            View::A => &docs[r].view_a,
            View::B => &docs[r].view_b,
        };
        f64::from(v[c])
    })
}

fn predictions(model: &TopicModel, docs: &[SyntheticDoc], view: View, seed: u64) -> PredictionSet {
    let thetas = model
        .infer_batch(view_inputs(docs, view).view(), 100, seed)
        .expect("inference");
    PredictionSet::new(docs.iter().map(|d| d.id.clone()).zip(thetas).collect())
        .expect("predictions")
}

fn synthetic_config(corpus: &SyntheticCorpus, epochs: usize, seed: u64) -> ModelConfig {
    let mut config = ModelConfig::new(
        corpus.topics.len(),
        InputMode::Contextual,
        corpus.vocab.len(),
        corpus.docs[0].view_a.len(),
    );
    config.epochs = epochs;
    config.seed = seed;
    config
}

fn train_view_a(corpus: &SyntheticCorpus, config: &ModelConfig) -> TopicModel {
    let train_docs = &corpus.docs[..corpus.docs.len() - HELD_OUT];
    let emb = SyntheticCorpus::embeddings(train_docs, View::A);
    let data = TrainingSet::build(&SyntheticCorpus::bows(train_docs), Some(&emb), config)
        .expect("training set");
    train(&data, corpus.vocab.clone(), config).expect("training")
}

fn zero_shot_harness(corpus: &SyntheticCorpus) -> Outcome {
    let start = Instant::now();
    let model = train_view_a(corpus, &synthetic_config(corpus, 50, 1));
    let held = &corpus.docs[corpus.docs.len() - HELD_OUT..];
    let a = predictions(&model, held, View::A, 5);
    let b = predictions(&model, held, View::B, 5);
    let mut langs = BTreeMap::new();
    langs.insert("B".to_string(), b);
    let r = evaluate_crosslingual(&langs, &a, &[], None, &Default::default()).expect("report");
    let row = &r.languages["B"];
    let elapsed = start.elapsed();
    let pass = row.mat >= 90.0
        && row.kl <= 0.1
        && row.mat >= 5.0 * r.baseline.mat
        && row.kl * 5.0 <= r.baseline.kl
        && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "Mat(A,B) {:.2} >= 90, KL(B||A) {:.4} <= 0.1; uniform Mat {:.2}, KL {:.4}; {elapsed:.1?}",
            row.mat, row.kl, r.baseline.mat, r.baseline.kl
        ),
    )
}

fn training_sanity(corpus: &SyntheticCorpus) -> Outcome {
    let mut decreased = 0;
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..30 {
        let model = train_view_a(corpus, &synthetic_config(corpus, 10, seed));
        let first = model.training_log.first().expect("epochs ran").total;
        let last = model.training_log.last().expect("epochs ran").total;
        if last < first {
            decreased += 1;
        }
        worst = worst.max(last - first);
    }
    outcome(
        decreased >= 29,
        format!("final < first in {decreased}/30 runs (worst change {worst:+.2})"),
    )
}

fn metrics_oracles() -> Outcome {
    let stats = |docs: &[&[&str]]| {
        CooccurrenceStats::from_token_sets(docs.iter().map(|d| d.iter().copied()))
    };
    let perfect = npmi_pair(
        &stats(&[&["a", "b"], &["c"], &["a", "b"], &["d"]]),
        "a",
        "b",
        EPSILON,
    );
    let independent = npmi_pair(
        &stats(&[&["a", "b"], &["a"], &["b"], &[]]),
        "a",
        "b",
        EPSILON,
    );
    let uniform = TopicDistribution::uniform(4);
    let peaked = TopicDistribution::new(vec![0.7, 0.1, 0.1, 0.1]).expect("distribution");
    let kl = kl_divergence(&uniform, &peaked, EPSILON).expect("same K");
    let agree =
        RatingMatrix::from_rows([("a", vec![3, 3, 3]), ("b", vec![0, 0]), ("c", vec![2, 2])])
            .expect("ratings");
    let toy = RatingMatrix::from_rows([
        ("t1", vec![3, 3]),
        ("t2", vec![2, 1]),
        ("t3", vec![0, 0]),
        ("t4", vec![1, 3]),
    ])
    .expect("ratings");
    let ac_perfect = gwet_ac1(&agree, Weighting::Ordinal);
    let ac_toy = gwet_ac1(&toy, Weighting::Ordinal);
    let pass = (perfect - 1.0).abs() <= 1e-9
        && independent.abs() <= 1e-9
        && (kl - 0.4299).abs() <= 1e-4
        && ac_perfect == 1.0
        && (ac_toy - 67.0 / 131.0).abs() <= 1e-9;
    outcome(
        pass,
        format!(
            "NPMI perfect {perfect:.12}, independent {independent:.1e}, KL {kl:.6}, \
             AC1 perfect {ac_perfect}, toy {ac_toy:.12} (oracle 67/131)"
        ),
    )
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn determinism(corpus: &SyntheticCorpus) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let held = &corpus.docs[corpus.docs.len() - HELD_OUT..];
    let mut hashes = Vec::new();
    for run in 0..2 {
        let model = train_view_a(corpus, &synthetic_config(corpus, 3, 42));
        let ckpt = dir.path().join(format!("model{run}.ckpt"));
        let preds = dir.path().join(format!("preds{run}.jsonl"));
        save_model(&model, &ckpt).expect("save");
        predictions(&model, held, View::B, 9)
            .write(&preds)
            .expect("write predictions");
        let read = |p| std::fs::read(p).expect("read back");
        hashes.push((sha256(&read(&ckpt)), sha256(&read(&preds))));
    }
    outcome(
        hashes[0] == hashes[1],
        format!(
            "checkpoint {} vs {}, predictions {} vs {}",
            &hashes[0].0[..12],
            &hashes[1].0[..12],
            &hashes[0].1[..12],
            &hashes[1].1[..12]
        ),
    )
}

fn main() {
    let corpus = generate(&SyntheticConfig::default());
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("gradient correctness", Box::new(gradient_check)),
        ("simplex and KL normalization", Box::new(simplex_suite)),
        ("prior formula", Box::new(prior_formula)),
        ("uniform baseline identity", Box::new(uniform_baseline)),
        (
            "synthetic zero-shot harness",
            Box::new(|| zero_shot_harness(&corpus)),
        ),
        (
            "training sanity (30 seeds)",
            Box::new(|| training_sanity(&corpus)),
        ),
        ("metrics oracles", Box::new(metrics_oracles)),
        (
            "determinism (file hashes)",
            Box::new(|| determinism(&corpus)),
        ),
    ];
    let mut failures = 0;
    for (name, check) in &criteria {
        let o = check();
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "SKIP real parallel corpora (non-gating; run `ctm evaluate report` on user-supplied data)"
    );
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
