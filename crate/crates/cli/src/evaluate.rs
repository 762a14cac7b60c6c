use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use ctm_core::corpus::{load_corpus, read_bows, tokenize};
use ctm_core::embeddings::read_embeddings;
use ctm_core::metrics::{
    centroid_similarity, evaluate_crosslingual, gwet_ac1, kl_divergence, match_rate,
    npmi_coherence, CooccurrenceStats, CrosslingualOptions, KlDirection, PredictionSet,
    RatingMatrix, Weighting,
};
use ctm_core::model::load_model;
use serde_json::{json, Value};

use crate::output::{Outputs, RunManifest};
use crate::{
    require_inputs, usage, Ac1Args, CdArgs, EvaluateCommand, KlArgs, KlDirectionArg, NpmiArgs,
    PairArgs, ReportArgs, WeightsArg,
};

pub fn run(cmd: &EvaluateCommand) -> Result<()> {
    let started = Instant::now();
    let (name, result, out, inputs) = match cmd {
        EvaluateCommand::Match(a) => ("match", eval_match(a)?, &a.out, pair_inputs(a)),
        EvaluateCommand::Kl(a) => ("kl", eval_kl(a)?, &a.pair.out, pair_inputs(&a.pair)),
        EvaluateCommand::Cd(a) => {
            let mut inputs = pair_inputs(&a.pair);
            inputs.push(("model", a.model.as_path()));
            inputs.push(("word_vectors", a.word_vectors.as_path()));
            ("cd", eval_cd(a)?, &a.pair.out, inputs)
        }
        EvaluateCommand::Npmi(a) => {
            let mut inputs = vec![("model", a.model.as_path())];
            inputs.extend(a.reference.as_deref().map(|p| ("reference", p)));
            inputs.extend(a.reference_bow.as_deref().map(|p| ("reference_bow", p)));
            ("npmi", eval_npmi(a)?, &a.out, inputs)
        }
        EvaluateCommand::Ac1(a) => (
            "ac1",
            eval_ac1(a)?,
            &a.out,
            vec![("ratings", a.ratings.as_path())],
        ),
        EvaluateCommand::Report(a) => {
            let mut inputs = vec![("reference", a.reference.as_path())];
            inputs.extend(a.langs.iter().map(|(_, p)| ("lang", p.as_path())));
            inputs.extend(a.model.as_deref().map(|p| ("model", p)));
            inputs.extend(a.word_vectors.as_deref().map(|p| ("word_vectors", p)));
            ("report", eval_report(a)?, &a.out, inputs)
        }
    };
    let text = serde_json::to_string_pretty(&result)? + "\n";
    if let Some(path) = &out.out {
        let mut outputs = Outputs::new();
        outputs.write_bytes(path, text.as_bytes())?;
        let mut manifest =
            RunManifest::new(&format!("evaluate {name}"), Value::Null, None, started);
        for (k, p) in inputs {
            // repeated keys (several languages) get an index suffix
            let key = (0..)
                .map(|i| {
                    if i == 0 {
                        k.to_string()
                    } else {
                        format!("{k}{i}")
                    }
                })
                .find(|key| !manifest.inputs.contains_key(key))
                .expect("unbounded");
            manifest.inputs.insert(key, p.to_path_buf());
        }
        manifest.write_beside(path, &mut outputs)?;
        outputs.commit();
    }
    print!("{text}");
    Ok(())
}

fn pair_inputs(a: &PairArgs) -> Vec<(&'static str, &Path)> {
    vec![("a", a.a.as_path()), ("b", a.b.as_path())]
}

fn read_pair(a: &PairArgs) -> Result<(PredictionSet, PredictionSet)> {
    require_inputs([Some(a.a.as_path()), Some(a.b.as_path())])?;
    Ok((PredictionSet::read(&a.a)?, PredictionSet::read(&a.b)?))
}

fn eval_match(a: &PairArgs) -> Result<Value> {
    let (pa, pb) = read_pair(a)?;
    let mat = match_rate(&pa, &pb)?;
    Ok(json!({ "metric": "match", "documents": pa.len(), "value": mat }))
}

/// Pairs every document of `a` with the same id in `b`.
fn paired<'a>(
    a: &'a PredictionSet,
    b: &'a PredictionSet,
) -> Result<
    Vec<(
        &'a ctm_core::model::TopicDistribution,
        &'a ctm_core::model::TopicDistribution,
    )>,
> {
    a.iter()
        .map(|(id, ta)| {
            let tb = b
                .get(id)
                .with_context(|| format!("document {id:?} is missing from the second file"))?;
            Ok((ta, tb))
        })
        .collect()
}

fn eval_kl(a: &KlArgs) -> Result<Value> {
    let (pa, pb) = read_pair(&a.pair)?;
    if !(a.epsilon > 0.0 && a.epsilon < 1.0) {
        return Err(usage("--epsilon must lie in (0, 1)"));
    }
    let pairs = paired(&pa, &pb)?;
    let mut sum = 0.0;
    for (p, q) in &pairs {
        sum += kl_divergence(p, q, a.epsilon)?;
    }
    Ok(json!({
        "metric": "kl",
        "documents": pairs.len(),
        "value": sum / pairs.len() as f64,
    }))
}

fn eval_cd(a: &CdArgs) -> Result<Value> {
    require_inputs([Some(a.model.as_path()), Some(a.word_vectors.as_path())])?;
    let (pa, pb) = read_pair(&a.pair)?;
    let model = load_model(&a.model)?;
    let table = read_embeddings(&a.word_vectors)?;
    let top_n = a.top_n.min(model.vocab.len());
    let words = model.topic_words(top_n)?;
    let pairs = paired(&pa, &pb)?;
    let mut sum = 0.0;
    for (ta, tb) in &pairs {
        let wa = words
            .get(ta.argmax())
            .context("prediction has more topics than the model")?;
        let wb = words
            .get(tb.argmax())
            .context("prediction has more topics than the model")?;
        sum += centroid_similarity(wa, wb, &table)?;
    }
    Ok(json!({
        "metric": "cd",
        "documents": pairs.len(),
        "top_n": top_n,
        "value": sum / pairs.len() as f64,
    }))
}

fn eval_npmi(a: &NpmiArgs) -> Result<Value> {
    require_inputs([
        Some(a.model.as_path()),
        a.reference.as_deref(),
        a.reference_bow.as_deref(),
    ])?;
    let model = load_model(&a.model)?;
    if a.top_n < 2 || a.top_n > model.vocab.len() {
        return Err(usage(format!(
            "--top-n must be between 2 and the vocabulary size {}",
            model.vocab.len()
        )));
    }
    let stats = match (&a.reference, &a.reference_bow) {
        (Some(p), _) => {
            let docs = load_corpus(p, "ref")?.documents;
            CooccurrenceStats::from_token_sets(docs.iter().map(|d| tokenize(&d.text)))
        }
        (None, Some(p)) => {
            let bows = read_bows(p, model.vocab.len())?;
            CooccurrenceStats::from_bows(bows.iter().map(|(_, b)| b), &model.vocab)
        }
        (None, None) => return Err(usage("one of --reference or --reference-bow is required")),
    };
    let topics = model.topic_words(a.top_n)?;
    let tau = npmi_coherence(&topics, &stats, a.top_n, a.epsilon)?;
    Ok(json!({
        "metric": "npmi",
        "top_n": a.top_n,
        "reference_documents": stats.doc_count(),
        "value": tau,
    }))
}

fn eval_ac1(a: &Ac1Args) -> Result<Value> {
    require_inputs([Some(a.ratings.as_path())])?;
    let ratings = RatingMatrix::read_csv(&a.ratings)?;
    let (weighting, name) = match a.weights {
        WeightsArg::Ordinal => (Weighting::Ordinal, "ordinal"),
        WeightsArg::Identity => (Weighting::Identity, "identity"),
    };
    Ok(json!({
        "metric": "ac1",
        "weights": name,
        "items": ratings.len(),
        "value": gwet_ac1(&ratings, weighting),
    }))
}

fn direction(d: KlDirectionArg) -> KlDirection {
    match d {
        KlDirectionArg::OtherToReference => KlDirection::OtherToReference,
        KlDirectionArg::ReferenceToOther => KlDirection::ReferenceToOther,
    }
}

fn eval_report(a: &ReportArgs) -> Result<Value> {
    require_inputs(
        [
            Some(a.reference.as_path()),
            a.model.as_deref(),
            a.word_vectors.as_deref(),
        ]
        .into_iter()
        .chain(a.langs.iter().map(|(_, p)| Some(p.as_path()))),
    )?;
    let reference = PredictionSet::read(&a.reference)?;
    let mut langs = BTreeMap::new();
    for (lang, path) in &a.langs {
        if langs
            .insert(lang.clone(), PredictionSet::read(path)?)
            .is_some()
        {
            return Err(usage(format!("language {lang:?} given twice")));
        }
    }
    let (topic_words, table) = match (&a.model, &a.word_vectors) {
        (Some(m), Some(w)) => {
            let model = load_model(m)?;
            let top_n = a.top_n.min(model.vocab.len());
            (model.topic_words(top_n)?, Some(read_embeddings(w)?))
        }
        _ => (Vec::new(), None),
    };
    let options = CrosslingualOptions {
        kl_direction: direction(a.kl_direction),
        baseline_kl_direction: direction(a.baseline_kl_direction),
        centroid_words: a.top_n,
        ..Default::default()
    };
    let report = evaluate_crosslingual(&langs, &reference, &topic_words, table.as_ref(), &options)?;
    Ok(serde_json::to_value(report)?)
}
