//! The nine subcommands. Each one resolves and validates everything it needs
//! first, only then creates the output directory and writes results, and
//! finishes with a `manifest.txt` recording the run. Failures carry the exit
//! code of the pipeline stage they belong to.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use sorient_core::corpus::{
    assign_splits, derive_context_and_label, drop_final_turn, filter_candidates, load_corpus,
    mark_toxicity_by_keywords, pair_balanced, save_corpus, Corpus, Outcome, Split,
};
use sorient_core::eval::{
    accuracy, render_ablation_csv, render_agreement_csv, render_runs_csv, run_ablation, summarize,
    welch_t_test, EvalError,
};
use sorient_core::explain::{
    cooccurrence_ratio, parse_intervention_specs, preset_interventions, prevalence_by_outcome,
    render_cooccurrence_csv, render_intervention_csv, render_prevalence_csv, run_intervention,
    InterventionSpec,
};
use sorient_core::model::{
    load_model, save_model, OutcomePredictor, RemotePredictor, TrainConfig,
};
use sorient_core::tagging::{
    build_prompt, cache_append, cache_load, chunk_for_prompt, default_fewshot, tag_map_for_corpus,
    tag_with_lexicon, tag_with_remote, SocialOrientationTag, TagMap, TaggerConfig,
};

use crate::config::Settings;
use crate::featureset::{fit_and_train, ConfiguredTrainer, FeatureSelection, FittedFeatures, FittedPredictor};
use crate::manifest::Manifest;

pub const EXIT_DATA: u8 = 2;
pub const EXIT_TAGGING: u8 = 3;
pub const EXIT_TRAINING: u8 = 4;
pub const EXIT_ANALYSIS: u8 = 5;

/// An error bound to the exit code of the stage it occurred in.
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

/// Attaches a stage exit code to any error on the way up.
pub trait Stage<T> {
    fn stage(self, code: u8) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, code: u8) -> Result<T, CliError> {
        self.map_err(|e| CliError { code, error: e.into() })
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn ensure_out_dir(settings: &Settings) -> Result<PathBuf> {
    let out_dir = settings.out_dir();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory `{}`", out_dir.display()))?;
    Ok(out_dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write `{}`", path.display()))
}

fn load_corpus_at(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("cannot load corpus `{}`", path.display()))
}

/// The tag cache location: the `tags` setting, falling back to
/// `<out_dir>/tags.jsonl`.
fn tags_path(settings: &Settings) -> PathBuf {
    settings.path("tags").unwrap_or_else(|| settings.out_dir().join("tags.jsonl"))
}

fn load_tag_map(settings: &Settings, corpus: &Corpus) -> Result<(PathBuf, TagMap)> {
    let path = tags_path(settings);
    if !path.exists() {
        bail!("tag cache `{}` does not exist; run `sorient tag` first", path.display());
    }
    let assignments = cache_load(&path)
        .with_context(|| format!("cannot load tag cache `{}`", path.display()))?;
    Ok((path.clone(), tag_map_for_corpus(corpus, &assignments)))
}

/// A previously trained artifact: an explicit setting wins, otherwise the
/// conventional file in the output directory.
fn resolve_artifact(settings: &Settings, key: &str, default_name: &str) -> Result<PathBuf> {
    let path =
        settings.path(key).unwrap_or_else(|| settings.out_dir().join(default_name));
    if !path.exists() {
        bail!(
            "`{key}` artifact `{}` does not exist; run `sorient train` first or set `{key}`",
            path.display()
        );
    }
    Ok(path)
}

fn train_config(settings: &Settings) -> Result<TrainConfig> {
    let config = TrainConfig {
        learning_rate: settings.f64("learning_rate")?,
        max_epochs: settings.usize("max_epochs")?,
        l2_penalty: settings.f64("l2_penalty")?,
        tolerance: settings.f64("tolerance")?,
        seed: settings.seed()?,
    };
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        bail!("`learning_rate` must be positive, got {}", config.learning_rate);
    }
    if config.l2_penalty < 0.0 || config.tolerance < 0.0 {
        bail!("`l2_penalty` and `tolerance` must be nonnegative");
    }
    Ok(config)
}

fn threshold(settings: &Settings) -> Result<f64> {
    let threshold = settings.f64("threshold")?;
    if !(0.0..=1.0).contains(&threshold) {
        bail!("`threshold` must be in [0, 1], got {threshold}");
    }
    Ok(threshold)
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected train, val, or test)"),
    }
}

/// Reconstructs the trained predictor from its saved artifacts; also returns
/// the artifact paths for the manifest.
fn load_fitted_predictor(settings: &Settings) -> Result<(FittedPredictor, Vec<PathBuf>)> {
    let model_path = resolve_artifact(settings, "model", "model.txt")?;
    let model = load_model(&model_path)
        .with_context(|| format!("cannot load model `{}`", model_path.display()))?;
    let selection = FeatureSelection::from_schema_id(&model.schema_id)?;
    let mut inputs = vec![model_path];
    let vocab_path = if selection.needs_vocab() {
        let path = resolve_artifact(settings, "vocab", "tfidf_vocab.txt")?;
        inputs.push(path.clone());
        Some(path)
    } else {
        None
    };
    let features = FittedFeatures::load(selection, vocab_path.as_deref())?;
    let threshold = threshold(settings)?;
    Ok((FittedPredictor { features, model, threshold }, inputs))
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub mark_toxicity: bool,
    pub derive_context_and_label: bool,
    pub drop_final_turn: bool,
    pub filter_candidates: bool,
    pub pair_balanced: bool,
    pub assign_splits: bool,
}

pub fn ingest(settings: &Settings, opts: &IngestOptions) -> Result<(), CliError> {
    let input = settings.require_existing_path("input").stage(EXIT_DATA)?;
    let seed = settings.seed().stage(EXIT_DATA)?;
    let min_speakers = settings.usize("min_speakers").stage(EXIT_DATA)?;
    let min_turns = settings.usize("min_turns").stage(EXIT_DATA)?;
    let (train_frac, val_frac) = (
        settings.f64("train_frac").stage(EXIT_DATA)?,
        settings.f64("val_frac").stage(EXIT_DATA)?,
    );
    if opts.assign_splits
        && !(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0)
    {
        return Err(anyhow!(
            "`train_frac` and `val_frac` must be nonnegative and sum to at most 1, \
             got {train_frac} and {val_frac}"
        ))
        .stage(EXIT_DATA);
    }

    let mut corpus = load_corpus_at(&input).stage(EXIT_DATA)?;
    let mut summary = String::new();

    if opts.mark_toxicity {
        for conv in &mut corpus.conversations {
            mark_toxicity_by_keywords(conv);
        }
    }
    if opts.derive_context_and_label {
        corpus.conversations = corpus
            .conversations
            .iter()
            .map(|c| derive_context_and_label(c).map(|(context, _)| context))
            .collect::<Result<_, _>>()
            .stage(EXIT_DATA)?;
    }
    if opts.drop_final_turn {
        corpus.conversations = corpus
            .conversations
            .iter()
            .map(drop_final_turn)
            .collect::<Result<_, _>>()
            .stage(EXIT_DATA)?;
    }
    if opts.filter_candidates {
        let before = corpus.conversations.len();
        corpus = filter_candidates(&corpus, min_speakers, min_turns);
        writeln!(summary, "dropped_by_filter = {}", before - corpus.conversations.len())
            .unwrap();
    }
    if opts.pair_balanced {
        let (pairs, dropped) = pair_balanced(&corpus, seed);
        writeln!(summary, "pairs = {}", pairs.len()).unwrap();
        writeln!(summary, "dropped_unpaired = {dropped}").unwrap();
        let corpus_id = corpus.corpus_id.clone();
        let conversations =
            pairs.into_iter().flat_map(|(failure, success)| [failure, success]).collect();
        corpus = Corpus::new(&corpus_id, conversations).stage(EXIT_DATA)?;
    }
    if opts.assign_splits {
        assign_splits(&mut corpus, train_frac, val_frac, seed);
    }

    let counts = corpus.label_counts();
    let mut header = String::new();
    writeln!(header, "conversations = {}", corpus.conversations.len()).unwrap();
    writeln!(header, "success = {}", counts.success).unwrap();
    writeln!(header, "failure = {}", counts.failure).unwrap();
    writeln!(header, "unlabeled = {}", counts.unlabeled).unwrap();
    if opts.assign_splits {
        for (name, split) in
            [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)]
        {
            let n = corpus.split_subset(split).conversations.len();
            writeln!(summary, "{name} = {n}").unwrap();
        }
    }

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    save_corpus(&corpus, &out_dir.join("corpus.jsonl")).stage(EXIT_DATA)?;
    write_text(&out_dir.join("ingest_summary.txt"), &(header + &summary)).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("ingest", settings).stage(EXIT_DATA)?;
    manifest.add_input(&input).stage(EXIT_DATA)?;
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!(
        "ingested {} conversations into {}",
        corpus.conversations.len(),
        out_dir.join("corpus.jsonl").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// tag
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default)]
pub struct TagOptions {
    pub dry_run_prompts: bool,
}

fn safe_file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn tag(settings: &Settings, opts: &TagOptions) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let backend = settings.require("tagger_backend").stage(EXIT_DATA)?;
    if !["lexicon", "remote", "cache"].contains(&backend) {
        return Err(anyhow!(
            "unknown tagger backend `{backend}` (expected lexicon, remote, or cache)"
        ))
        .stage(EXIT_DATA);
    }
    let tagger = TaggerConfig {
        endpoint: settings.get("tagger_endpoint").map(str::to_string),
        ..TaggerConfig::default()
    };
    if backend == "remote" && !opts.dry_run_prompts && tagger.endpoint.is_none() {
        return Err(anyhow!("backend `remote` needs `tagger_endpoint`")).stage(EXIT_DATA);
    }
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let cache_path = tags_path(settings);
    if backend == "cache" && !cache_path.exists() {
        return Err(anyhow!(
            "backend `cache` needs an existing tag cache, `{}` not found",
            cache_path.display()
        ))
        .stage(EXIT_DATA);
    }

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    let mut manifest = Manifest::new("tag", settings).stage(EXIT_DATA)?;
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;

    if opts.dry_run_prompts {
        let prompts_dir = out_dir.join("prompts");
        std::fs::create_dir_all(&prompts_dir)
            .with_context(|| format!("cannot create `{}`", prompts_dir.display()))
            .stage(EXIT_DATA)?;
        let fewshot = default_fewshot();
        let mut n_prompts = 0usize;
        for conv in &corpus.conversations {
            let chunks =
                chunk_for_prompt(conv, tagger.max_chunk_chars).stage(EXIT_TAGGING)?;
            for chunk in &chunks {
                let name = format!(
                    "{}-{}.txt",
                    safe_file_stem(&conv.conversation_id),
                    chunk.index
                );
                write_text(&prompts_dir.join(name), &build_prompt(chunk, &fewshot))
                    .stage(EXIT_TAGGING)?;
                n_prompts += 1;
            }
        }
        manifest.write(&out_dir).stage(EXIT_DATA)?;
        println!("wrote {n_prompts} prompts to {}", prompts_dir.display());
        return Ok(());
    }

    // Conversations whose cached tags already cover every utterance are done;
    // anything else is (re)tagged and appended, so an interrupted run resumes
    // where it stopped and ends up byte-identical to an uninterrupted one.
    let mut done = BTreeSet::new();
    if cache_path.exists() {
        let existing = cache_load(&cache_path)
            .with_context(|| format!("cannot load tag cache `{}`", cache_path.display()))
            .stage(EXIT_TAGGING)?;
        let map = tag_map_for_corpus(&corpus, &existing);
        for conv in &corpus.conversations {
            let covered = map
                .get(&conv.conversation_id)
                .is_some_and(|tags| tags.len() == conv.utterances.len());
            if covered {
                done.insert(conv.conversation_id.clone());
            }
        }
    }

    if backend == "cache" {
        if let Some(conv) =
            corpus.conversations.iter().find(|c| !done.contains(&c.conversation_id))
        {
            return Err(anyhow!(
                "tag cache `{}` does not cover conversation `{}`",
                cache_path.display(),
                conv.conversation_id
            ))
            .stage(EXIT_TAGGING);
        }
        manifest.add_input(&cache_path).stage(EXIT_DATA)?;
        manifest.write(&out_dir).stage(EXIT_DATA)?;
        println!(
            "tag cache {} covers all {} conversations",
            cache_path.display(),
            corpus.conversations.len()
        );
        return Ok(());
    }

    let mut n_tagged = 0usize;
    for conv in &corpus.conversations {
        if done.contains(&conv.conversation_id) {
            continue;
        }
        let assignments = match backend {
            "lexicon" => tag_with_lexicon(conv),
            _ => tag_with_remote(conv, &tagger).stage(EXIT_TAGGING)?,
        };
        cache_append(&assignments, &cache_path).stage(EXIT_TAGGING)?;
        n_tagged += 1;
    }
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!(
        "tagged {n_tagged} conversations ({} already cached) into {}",
        done.len(),
        cache_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(settings: &Settings) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let selection =
        FeatureSelection::parse(settings.require("features").stage(EXIT_DATA)?)
            .stage(EXIT_DATA)?;
    let config = train_config(settings).stage(EXIT_DATA)?;
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let (tags_file, tags) = load_tag_map(settings, &corpus).stage(EXIT_DATA)?;
    let train_split = corpus.split_subset(Split::Train);
    if train_split.conversations.is_empty() {
        return Err(anyhow!(
            "no conversations in the Train split; run `sorient ingest --assign-splits` first"
        ))
        .stage(EXIT_DATA);
    }

    let (features, model) =
        fit_and_train(selection, &train_split, &tags, &config).stage(EXIT_TRAINING)?;

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    save_model(&model, &out_dir.join("model.txt")).stage(EXIT_TRAINING)?;
    if selection.needs_vocab() {
        features.save_vocab(&out_dir.join("tfidf_vocab.txt")).stage(EXIT_TRAINING)?;
    }
    let mut summary = String::new();
    writeln!(summary, "conversations = {}", train_split.conversations.len()).unwrap();
    writeln!(summary, "features = {}", selection.key()).unwrap();
    writeln!(summary, "dimension = {}", features.schema().dimension()).unwrap();
    writeln!(summary, "epochs_run = {}", model.train_meta.epochs_run).unwrap();
    writeln!(summary, "final_loss = {:.6}", model.train_meta.final_loss).unwrap();
    write_text(&out_dir.join("train_summary.txt"), &summary).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("train", settings).stage(EXIT_DATA)?;
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;
    manifest.add_input(&tags_file).stage(EXIT_DATA)?;
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!(
        "trained on {} conversations, model at {}",
        train_split.conversations.len(),
        out_dir.join("model.txt").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn evaluate(settings: &Settings, split_name: &str) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let split = parse_split(split_name).stage(EXIT_DATA)?;
    let (predictor, artifact_inputs) = load_fitted_predictor(settings).stage(EXIT_DATA)?;
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let (tags_file, tags) = load_tag_map(settings, &corpus).stage(EXIT_DATA)?;
    let subset = corpus.split_subset(split);
    if subset.conversations.is_empty() {
        return Err(anyhow!("no conversations in the {split_name} split")).stage(EXIT_DATA);
    }

    let mut predictions = Vec::with_capacity(subset.conversations.len());
    let mut gold = Vec::with_capacity(subset.conversations.len());
    for conv in &subset.conversations {
        let assignments = tags
            .get(&conv.conversation_id)
            .ok_or_else(|| anyhow!("no tag assignments for conversation `{}`", conv.conversation_id))
            .stage(EXIT_TRAINING)?;
        predictions
            .push(predictor.predict_outcome(conv, assignments).stage(EXIT_TRAINING)?);
        gold.push(
            conv.outcome
                .ok_or_else(|| {
                    anyhow!("conversation `{}` has no outcome label", conv.conversation_id)
                })
                .stage(EXIT_TRAINING)?,
        );
    }
    let accuracy = accuracy(&predictions, &gold).stage(EXIT_ANALYSIS)?;

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    let mut metrics = String::new();
    writeln!(metrics, "split = {split_name}").unwrap();
    writeln!(metrics, "conversations = {}", subset.conversations.len()).unwrap();
    writeln!(metrics, "accuracy = {accuracy:.6}").unwrap();
    let gold_failure = gold.iter().filter(|o| **o == Outcome::Failure).count();
    let predicted_failure =
        predictions.iter().filter(|p| p.label == Outcome::Failure).count();
    writeln!(metrics, "gold_failure = {gold_failure}").unwrap();
    writeln!(metrics, "predicted_failure = {predicted_failure}").unwrap();
    write_text(&out_dir.join("metrics.txt"), &metrics).stage(EXIT_DATA)?;

    let mut rows = String::from("conversation_id,probability_failure,label\n");
    for p in &predictions {
        writeln!(rows, "{},{:.6},{}", p.conversation_id, p.probability_failure, p.label)
            .unwrap();
    }
    write_text(&out_dir.join("predictions.csv"), &rows).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("evaluate", settings).stage(EXIT_DATA)?;
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;
    manifest.add_input(&tags_file).stage(EXIT_DATA)?;
    for path in &artifact_inputs {
        manifest.add_input(path).stage(EXIT_DATA)?;
    }
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!("accuracy {accuracy:.6} on {} {split_name} conversations", subset.conversations.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

pub fn ablate(settings: &Settings) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let fractions = settings.f64_list("fractions").stage(EXIT_DATA)?;
    if let Some(bad) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(anyhow!("ablation fraction {bad} outside (0, 1]")).stage(EXIT_DATA);
    }
    let seeds = settings.u64_list("seeds").stage(EXIT_DATA)?;
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(anyhow!("`seeds` contains duplicates")).stage(EXIT_DATA);
    }
    let selection =
        FeatureSelection::parse(settings.require("features").stage(EXIT_DATA)?)
            .stage(EXIT_DATA)?;
    let config = train_config(settings).stage(EXIT_DATA)?;
    let threshold = threshold(settings).stage(EXIT_DATA)?;
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let (tags_file, tags) = load_tag_map(settings, &corpus).stage(EXIT_DATA)?;

    let trainer = ConfiguredTrainer::new(selection, config, threshold);
    let runs = run_ablation(&corpus, &tags, &trainer, &fractions, &seeds).map_err(|e| {
        let code = match &e {
            EvalError::Model(_) => EXIT_TRAINING,
            _ => EXIT_DATA,
        };
        CliError { code, error: e.into() }
    })?;
    let method = sorient_core::eval::AblationTrainer::method_name(&trainer).to_string();
    let report =
        summarize(&corpus.corpus_id, &[(method.clone(), runs.clone())], None)
            .stage(EXIT_ANALYSIS)?;

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    let runs_csv =
        render_runs_csv(&corpus.corpus_id, &method, &runs).stage(EXIT_ANALYSIS)?;
    write_text(&out_dir.join("ablation_runs.csv"), &runs_csv).stage(EXIT_DATA)?;
    let report_csv = render_ablation_csv(&report).stage(EXIT_ANALYSIS)?;
    write_text(&out_dir.join("ablation_report.csv"), &report_csv).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("ablate", settings).stage(EXIT_DATA)?;
    manifest.record(
        "seeds",
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
    );
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;
    manifest.add_input(&tags_file).stage(EXIT_DATA)?;
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!(
        "ran {} ablation cells ({} fractions x {} seeds)",
        runs.len(),
        fractions.len(),
        seeds.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ttest
// ---------------------------------------------------------------------------

fn load_sample(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read sample file `{}`", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: not a number: `{line}`", path.display(), i + 1))?;
        values.push(value);
    }
    Ok(values)
}

pub fn ttest(settings: &Settings, sample_a: &Path, sample_b: &Path) -> Result<(), CliError> {
    let a = load_sample(sample_a).stage(EXIT_DATA)?;
    let b = load_sample(sample_b).stage(EXIT_DATA)?;
    let result = welch_t_test(&a, &b).stage(EXIT_ANALYSIS)?;

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut text = String::new();
    writeln!(text, "n_a = {}", a.len()).unwrap();
    writeln!(text, "n_b = {}", b.len()).unwrap();
    writeln!(text, "mean_a = {:.6}", mean(&a)).unwrap();
    writeln!(text, "mean_b = {:.6}", mean(&b)).unwrap();
    writeln!(text, "t = {:.6}", result.t).unwrap();
    writeln!(text, "df = {:.6}", result.df).unwrap();
    writeln!(text, "p_two_sided = {:.6}", result.p_two_sided).unwrap();
    write_text(&out_dir.join("ttest.txt"), &text).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("ttest", settings).stage(EXIT_DATA)?;
    manifest.add_input(sample_a).stage(EXIT_DATA)?;
    manifest.add_input(sample_b).stage(EXIT_DATA)?;
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!(
        "t = {:.6}, df = {:.6}, p = {:.6}",
        result.t, result.df, result.p_two_sided
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// intervene
// ---------------------------------------------------------------------------

fn load_specs(settings: &Settings) -> Result<(Option<PathBuf>, Vec<InterventionSpec>)> {
    match settings.path("interventions") {
        Some(path) => {
            if !path.exists() {
                bail!("`interventions` points to `{}`, which does not exist", path.display());
            }
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read `{}`", path.display()))?;
            let specs = parse_intervention_specs(&text)?;
            Ok((Some(path), specs))
        }
        None => Ok((None, preset_interventions())),
    }
}

pub fn intervene(settings: &Settings) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let (spec_file, specs) = load_specs(settings).stage(EXIT_DATA)?;
    for spec in &specs {
        spec.validate().stage(EXIT_DATA)?;
    }
    let mut artifact_inputs = Vec::new();
    let predictor: Box<dyn OutcomePredictor> = match settings.get("predictor_endpoint") {
        Some(endpoint) => Box::new(RemotePredictor { endpoint: endpoint.to_string() }),
        None => {
            let (fitted, inputs) = load_fitted_predictor(settings).stage(EXIT_DATA)?;
            artifact_inputs = inputs;
            Box::new(fitted)
        }
    };
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let (tags_file, tags) = load_tag_map(settings, &corpus).stage(EXIT_DATA)?;

    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        results.push(
            run_intervention(predictor.as_ref(), &corpus, &tags, spec).stage(EXIT_ANALYSIS)?,
        );
    }

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    let csv = render_intervention_csv(&results).stage(EXIT_ANALYSIS)?;
    write_text(&out_dir.join("intervention_report.csv"), &csv).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("intervene", settings).stage(EXIT_DATA)?;
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;
    manifest.add_input(&tags_file).stage(EXIT_DATA)?;
    if let Some(path) = &spec_file {
        manifest.add_input(path).stage(EXIT_DATA)?;
    }
    for path in &artifact_inputs {
        manifest.add_input(path).stage(EXIT_DATA)?;
    }
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!("ran {} interventions on {} conversations", results.len(), corpus.conversations.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// cooccur
// ---------------------------------------------------------------------------

pub fn cooccur(settings: &Settings) -> Result<(), CliError> {
    let corpus_path = settings.require_existing_path("corpus").stage(EXIT_DATA)?;
    let smoothing = settings.f64("smoothing").stage(EXIT_DATA)?;
    if smoothing.is_nan() || smoothing <= 0.0 {
        return Err(anyhow!("`smoothing` must be positive, got {smoothing}")).stage(EXIT_DATA);
    }
    let corpus = load_corpus_at(&corpus_path).stage(EXIT_DATA)?;
    let (tags_file, tags) = load_tag_map(settings, &corpus).stage(EXIT_DATA)?;

    let ratio = cooccurrence_ratio(&corpus, &tags, smoothing).stage(EXIT_ANALYSIS)?;
    let prevalence = prevalence_by_outcome(&corpus, &tags).stage(EXIT_ANALYSIS)?;

    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    write_text(&out_dir.join("cooccurrence.csv"), &render_cooccurrence_csv(&ratio))
        .stage(EXIT_DATA)?;
    write_text(&out_dir.join("prevalence.csv"), &render_prevalence_csv(&prevalence))
        .stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("cooccur", settings).stage(EXIT_DATA)?;
    manifest.add_input(&corpus_path).stage(EXIT_DATA)?;
    manifest.add_input(&tags_file).stage(EXIT_DATA)?;
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!("wrote co-occurrence and prevalence tables to {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// agree
// ---------------------------------------------------------------------------

fn load_annotations(path: &Path) -> Result<(String, Vec<SocialOrientationTag>)> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| anyhow!("annotation file `{}` has no usable name", path.display()))?
        .to_string();
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read annotation file `{}`", path.display()))?;
    let mut tags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let tag = SocialOrientationTag::parse(line).ok_or_else(|| {
            anyhow!("{}:{}: unknown tag `{line}`", path.display(), i + 1)
        })?;
        tags.push(tag);
    }
    Ok((name, tags))
}

pub fn agree(settings: &Settings, files: &[PathBuf]) -> Result<(), CliError> {
    if files.len() < 2 {
        return Err(anyhow!("need at least 2 annotation files, got {}", files.len()))
            .stage(EXIT_DATA);
    }
    let mut raters = Vec::with_capacity(files.len());
    for path in files {
        raters.push(load_annotations(path).stage(EXIT_DATA)?);
    }
    let names: BTreeSet<&str> = raters.iter().map(|(name, _)| name.as_str()).collect();
    if names.len() != raters.len() {
        return Err(anyhow!("annotation files must have distinct names")).stage(EXIT_DATA);
    }
    let n_items = raters[0].1.len();
    if n_items == 0 || raters.iter().any(|(_, tags)| tags.len() != n_items) {
        return Err(anyhow!(
            "annotation files must be nonempty and agree on the item count"
        ))
        .stage(EXIT_DATA);
    }

    let csv = render_agreement_csv(&raters).stage(EXIT_ANALYSIS)?;
    let out_dir = ensure_out_dir(settings).stage(EXIT_DATA)?;
    write_text(&out_dir.join("agreement.csv"), &csv).stage(EXIT_DATA)?;

    let mut manifest = Manifest::new("agree", settings).stage(EXIT_DATA)?;
    for path in files {
        manifest.add_input(path).stage(EXIT_DATA)?;
    }
    manifest.write(&out_dir).stage(EXIT_DATA)?;
    println!("wrote agreement table for {} annotators over {n_items} items", raters.len());
    Ok(())
}
