use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ctm_core::corpus::{
    build_vocabulary, filter_min_chars, load_corpus, load_stopwords, read_bows, to_bow,
    truncate_tokens, write_bows, write_corpus, BowVector, Vocabulary,
};
use ctm_core::embeddings::{read_embeddings, write_embeddings, EmbeddingMatrix};
use ctm_core::metrics::PredictionSet;
use ctm_core::model::train::input_vector;
use ctm_core::model::{load_model, save_model, ModelConfig, ModelError, TopicModel, TrainingSet};
use ctm_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus, View};
use ndarray::Array2;
use serde_json::json;

use crate::output::{Outputs, RunManifest};
use crate::{require_inputs, usage, InferArgs, PreprocessArgs, SynthArgs, TopicsArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let started = Instant::now();
    require_inputs([
        Some(a.input.as_path()),
        a.stopwords.as_deref(),
        a.vocab.as_deref(),
    ])?;
    if a.vocab_size == 0 {
        return Err(usage("--vocab-size must be at least 1"));
    }
    let loaded = load_corpus(&a.input, &a.lang)?;
    if loaded.dropped_empty > 0 {
        log::warn!(
            "dropped {} document(s) with empty text",
            loaded.dropped_empty
        );
    }
    let loaded_count = loaded.documents.len();
    let kept = filter_min_chars(loaded.documents, a.min_chars);
    let max_tokens = usize::try_from(a.max_tokens).context("--max-tokens is too large")?;
    let docs: Vec<_> = kept
        .iter()
        .map(|d| truncate_tokens(d, max_tokens))
        .collect();
    let stopwords = match &a.stopwords {
        Some(p) => load_stopwords(p)?,
        None => HashSet::new(),
    };
    let vocab = match &a.vocab {
        Some(p) => Vocabulary::read(p)?,
        None => build_vocabulary(&docs, &stopwords, a.vocab_size)?,
    };
    let bows: Vec<(String, BowVector)> = docs
        .iter()
        .map(|d| (d.id.clone(), to_bow(d, &vocab)))
        .collect();
    let empty = bows.iter().filter(|(_, b)| b.is_zero()).count();
    if empty > 0 {
        log::warn!("{empty} document(s) have no in-vocabulary tokens");
    }

    create_dir(&a.out_dir)?;
    let vocab_path = a.out_dir.join("vocab.txt");
    let bow_path = a.out_dir.join("bow.jsonl");
    let corpus_path = a.out_dir.join("corpus.jsonl");
    let mut out = Outputs::new();
    out.write(&vocab_path, |p| Ok(vocab.write(p)?))?;
    out.write(&bow_path, |p| Ok(write_bows(&bows, p)?))?;
    out.write(&corpus_path, |p| Ok(write_corpus(&docs, p)?))?;
    let config = json!({
        "lang": a.lang,
        "vocab_size": a.vocab_size,
        "max_tokens": a.max_tokens,
        "min_chars": a.min_chars,
        "reused_vocab": a.vocab.is_some(),
    });
    RunManifest::new("preprocess", config, None, started)
        .input("corpus", Some(&a.input))
        .input("stopwords", a.stopwords.as_deref())
        .input("vocab", a.vocab.as_deref())
        .write_beside(&bow_path, &mut out)?;
    out.commit();
    println!(
        "{}",
        json!({
            "documents": docs.len(),
            "dropped_empty": loaded.dropped_empty,
            "dropped_short": loaded_count - docs.len(),
            "vocab_size": vocab.len(),
            "empty_bows": empty,
        })
    );
    Ok(())
}

fn config_error(e: ModelError) -> anyhow::Error {
    match e {
        ModelError::InvalidConfig(m) => usage(format!("invalid model configuration: {m}")),
        other => other.into(),
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    require_inputs([
        Some(a.bow.as_path()),
        Some(a.vocab.as_path()),
        a.embeddings.as_deref(),
    ])?;
    if a.mode.uses_embedding() && a.embeddings.is_none() {
        return Err(usage(format!("--mode {} requires --embeddings", a.mode)));
    }
    if !a.mode.uses_embedding() && a.embeddings.is_some() {
        log::warn!("--embeddings is ignored in --mode {}", a.mode);
    }
    let vocab = Vocabulary::read(&a.vocab)?;
    let embeddings = match (&a.embeddings, a.mode.uses_embedding()) {
        (Some(p), true) => Some(read_embeddings(p)?),
        _ => None,
    };
    let mut config = ModelConfig::new(
        a.topics,
        a.mode,
        vocab.len(),
        embeddings.as_ref().map_or(0, EmbeddingMatrix::dim),
    );
    config.epochs = a.epochs;
    config.seed = a.seed;
    config.batch_size = a.batch_size;
    config.learning_rate = a.learning_rate;
    config.adam_beta1 = a.adam_beta1;
    config.adam_beta2 = a.adam_beta2;
    config.adam_eps = a.adam_eps;
    config.hidden_sizes = a.hidden.clone();
    config.dropout_rate = a.dropout;
    config.prior_alpha = a.alpha;
    config.learn_decoder_bn_scale = a.learn_decoder_bn_scale;
    config.normalize_embeddings = a.normalize_embeddings;
    config.validate().map_err(config_error)?;

    let bows = read_bows(&a.bow, vocab.len())?;
    let data = TrainingSet::build(&bows, embeddings.as_ref(), &config)?;
    log::info!(
        "training on {} documents ({} excluded with empty bags of words)",
        data.len(),
        data.excluded_zero_bow
    );
    let model = ctm_core::model::train(&data, vocab, &config)?;

    let mut csv = String::from("epoch,total,recon,kl\n");
    for (i, e) in model.training_log.iter().enumerate() {
        writeln!(csv, "{},{},{},{}", i + 1, e.total, e.recon, e.kl)?;
    }
    let loss_path = crate::output::sibling(&a.out, ".loss.csv");
    let mut out = Outputs::new();
    out.write(&a.out, |p| Ok(save_model(&model, p)?))?;
    out.write_bytes(&loss_path, csv.as_bytes())?;
    RunManifest::new(
        "train",
        serde_json::to_value(&config)?,
        Some(a.seed),
        started,
    )
    .input("bow", Some(&a.bow))
    .input("vocab", Some(&a.vocab))
    .input("embeddings", a.embeddings.as_deref())
    .write_beside(&a.out, &mut out)?;
    out.commit();
    if let (Some(first), Some(last)) = (model.training_log.first(), model.training_log.last()) {
        log::info!("loss {:.4} -> {:.4}", first.total, last.total);
    }
    Ok(())
}

/// Document ids and encoder inputs in file order: bag-of-words order when
/// the model reads bags of words, embedding order otherwise.
fn inference_inputs(
    model: &TopicModel,
    embeddings: Option<&EmbeddingMatrix>,
    bows: Option<&[(String, BowVector)]>,
) -> Result<(Vec<String>, Array2<f64>)> {
    let config = &model.config;
    let ids: Vec<String> = match (bows, embeddings) {
        (Some(b), _) if config.input_mode.uses_bow() => {
            b.iter().map(|(id, _)| id.clone()).collect()
        }
        (_, Some(e)) => e.ids().to_vec(),
        _ => bail!("no inputs"),
    };
    let mut x = Array2::zeros((ids.len(), config.input_dim()));
    for (r, id) in ids.iter().enumerate() {
        let emb = match embeddings {
            Some(m) if config.input_mode.uses_embedding() => Some(
                m.get(id)
                    .with_context(|| format!("document {id:?} has no embedding"))?,
            ),
            _ => None,
        };
        let bow = bows
            .filter(|_| config.input_mode.uses_bow())
            .map(|b| &b[r].1);
        let row = input_vector(config, emb, bow)?;
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    Ok((ids, x))
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let started = Instant::now();
    require_inputs([
        Some(a.model.as_path()),
        a.embeddings.as_deref(),
        a.bow.as_deref(),
    ])?;
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let model = load_model(&a.model)?;
    let mode = model.config.input_mode;
    if mode.uses_embedding() && a.embeddings.is_none() {
        return Err(usage(format!("a {mode} model needs --embeddings")));
    }
    if mode.uses_bow() && a.bow.is_none() {
        return Err(usage(format!("a {mode} model needs --bow")));
    }
    let embeddings = match &a.embeddings {
        Some(p) if mode.uses_embedding() => Some(read_embeddings(p)?),
        _ => None,
    };
    let bows = match &a.bow {
        Some(p) if mode.uses_bow() => Some(read_bows(p, model.vocab.len())?),
        _ => None,
    };
    let (ids, x) = inference_inputs(&model, embeddings.as_ref(), bows.as_deref())?;
    if ids.is_empty() {
        bail!("no documents to infer");
    }
    let thetas = if a.noiseless {
        x.rows()
            .into_iter()
            .map(|row| model.infer_noiseless(row))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        model.infer_batch(x.view(), a.samples, a.seed)?
    };
    let preds = PredictionSet::new(ids.into_iter().zip(thetas).collect())?;

    let mut out = Outputs::new();
    out.write(&a.out, |p| Ok(preds.write(p)?))?;
    let config = json!({
        "samples": if a.noiseless { 1 } else { a.samples },
        "noiseless": a.noiseless,
        "mode": mode.to_string(),
        "documents": preds.len(),
    });
    RunManifest::new("infer", config, Some(a.seed), started)
        .input("model", Some(&a.model))
        .input("embeddings", a.embeddings.as_deref())
        .input("bow", a.bow.as_deref())
        .write_beside(&a.out, &mut out)?;
    out.commit();
    Ok(())
}

pub fn topics(a: &TopicsArgs) -> Result<()> {
    let started = Instant::now();
    require_inputs([Some(a.model.as_path())])?;
    let model = load_model(&a.model)?;
    if a.top_n == 0 || a.top_n > model.vocab.len() {
        return Err(usage(format!(
            "--top-n must be between 1 and the vocabulary size {}",
            model.vocab.len()
        )));
    }
    let words = model.topic_words(a.top_n)?;
    let mut json = serde_json::to_vec_pretty(&words)?;
    json.push(b'\n');
    if let Some(path) = &a.out {
        let mut out = Outputs::new();
        out.write_bytes(path, &json)?;
        RunManifest::new("topics", json!({ "top_n": a.top_n }), None, started)
            .input("model", Some(&a.model))
            .write_beside(path, &mut out)?;
        out.commit();
    }
    print!("{}", String::from_utf8(json)?);
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    if a.topics == 0 || a.vocab_size < a.topics || a.dim == 0 || a.docs == 0 {
        return Err(usage(
            "need --docs >= 1, --dim >= 1 and --vocab-size >= --topics >= 1",
        ));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(usage("--noise must be a finite non-negative number"));
    }
    let config = SyntheticConfig {
        num_docs: a.docs,
        num_topics: a.topics,
        vocab_size: a.vocab_size,
        embedding_dim: a.dim,
        noise_sigma: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    let corpus = generate(&config);
    let truth = PredictionSet::new(
        corpus
            .docs
            .iter()
            .map(|d| (d.id.clone(), d.theta.clone()))
            .collect(),
    )?;
    create_dir(&a.out_dir)?;
    let bow_path = a.out_dir.join("bow.jsonl");
    let mut out = Outputs::new();
    out.write(&a.out_dir.join("vocab.txt"), |p| {
        Ok(corpus.vocab.write(p)?)
    })?;
    out.write(&bow_path, |p| {
        Ok(write_bows(&SyntheticCorpus::bows(&corpus.docs), p)?)
    })?;
    for (view, name) in [(View::A, "view_a.ctme"), (View::B, "view_b.ctme")] {
        let m = SyntheticCorpus::embeddings(&corpus.docs, view);
        out.write(&a.out_dir.join(name), |p| Ok(write_embeddings(&m, p)?))?;
    }
    out.write(&a.out_dir.join("truth.jsonl"), |p| Ok(truth.write(p)?))?;
    let manifest_config = json!({
        "docs": a.docs,
        "topics": a.topics,
        "vocab_size": a.vocab_size,
        "dim": a.dim,
        "noise": a.noise,
    });
    RunManifest::new("synth", manifest_config, Some(a.seed), started)
        .write_beside(&bow_path, &mut out)?;
    out.commit();
    Ok(())
}
