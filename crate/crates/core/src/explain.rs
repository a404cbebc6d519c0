//! Counterfactual tag interventions, cross-speaker pair analysis, and
//! co-occurrence likelihood ratios.
//!
//! The intervention engine treats the predictor as a black box: it predicts
//! each selected conversation once with its real tags and once with modified
//! tags, then counts label flips (Pos2Neg = predicted Success turning into
//! predicted Failure, Neg2Pos the reverse, Same everything else). Flip
//! counts always satisfy `pos2neg + neg2pos + same = n_filtered`, including
//! in the partial result attached to a mid-run predictor failure.
//!
//! "Co-occurrence" is cross-speaker and unordered throughout: a tag pair
//! occurs in a conversation when two utterances by *different* speakers
//! carry those tags, in either order. `NotAvailable` never participates.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Conversation, Corpus, Outcome};
use crate::model::{ModelError, OutcomePredictor};
use crate::tagging::{SocialOrientationTag, TagAssignment, TagMap};
use crate::util::fnv1a64;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid intervention spec `{name}`: {message}")]
    InvalidSpec { name: String, message: String },
    #[error("intervention spec line {line}: {message}")]
    SpecParse { line: usize, message: String },
    #[error("no tag assignment for utterance `{0}`")]
    MissingTag(String),
    #[error("no tag assignments for conversation `{0}`")]
    MissingTags(String),
    #[error("conversation `{0}` has no outcome label")]
    Unlabeled(String),
    #[error("no conversations on the {0} side")]
    EmptyCorpus(String),
    #[error("smoothing must be positive, got {0}")]
    InvalidSmoothing(f64),
    #[error(
        "predictor failed after {completed} of {total} conversations: {source}"
    )]
    PredictorFailed {
        completed: usize,
        total: usize,
        /// Counts over the conversations scored before the failure; its
        /// accounting invariant still holds.
        partial: InterventionResult,
        source: ModelError,
    },
    #[error("field `{0}` contains a comma or newline and cannot be a CSV field")]
    UnsafeCsvField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    Targeted,
    RandomPerturbation,
}

/// One intervention: an optional cross-speaker pair filter plus either a
/// fixed replacement map (Targeted) or seeded uniform re-tagging
/// (RandomPerturbation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub name: String,
    pub filter_pair: Option<(SocialOrientationTag, SocialOrientationTag)>,
    pub replacement: BTreeMap<SocialOrientationTag, SocialOrientationTag>,
    pub mode: InterventionMode,
    #[serde(default)]
    pub seed: u64,
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<(), ExplainError> {
        let fail = |message: &str| {
            Err(ExplainError::InvalidSpec {
                name: self.name.clone(),
                message: message.to_string(),
            })
        };
        match self.mode {
            InterventionMode::Targeted if self.replacement.is_empty() => {
                return fail("targeted mode needs a nonempty replacement map");
            }
            InterventionMode::RandomPerturbation if !self.replacement.is_empty() => {
                return fail("random perturbation takes no replacement map");
            }
            _ => {}
        }
        let na = SocialOrientationTag::NotAvailable;
        if self.replacement.keys().any(|t| *t == na)
            || self.replacement.values().any(|t| *t == na)
        {
            return fail("replacement must not map to or from Not Available");
        }
        if let Some((a, b)) = self.filter_pair {
            if a == na || b == na {
                return fail("filter_pair cannot include Not Available");
            }
        }
        Ok(())
    }
}

/// Counts from one intervention run. `n_filtered` is the number of
/// conversations that passed the filter and were scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionResult {
    pub spec_name: String,
    pub pos2neg: usize,
    pub neg2pos: usize,
    pub same: usize,
    pub n_filtered: usize,
}

fn normalized_pair(
    a: SocialOrientationTag,
    b: SocialOrientationTag,
) -> (SocialOrientationTag, SocialOrientationTag) {
    if a.index() <= b.index() {
        (a, b)
    } else {
        (b, a)
    }
}

fn tags_by_utterance<'a>(
    conv: &'a Conversation,
    tags: &[TagAssignment],
) -> Result<Vec<(&'a str, SocialOrientationTag)>, ExplainError> {
    let by_id: BTreeMap<&str, SocialOrientationTag> =
        tags.iter().map(|t| (t.utterance_id.as_str(), t.tag)).collect();
    conv.utterances
        .iter()
        .map(|u| {
            by_id
                .get(u.utterance_id.as_str())
                .map(|tag| (u.speaker_id.as_str(), *tag))
                .ok_or_else(|| ExplainError::MissingTag(u.utterance_id.clone()))
        })
        .collect()
}

/// The set of unordered tag pairs occurring on utterances by two different
/// speakers. `NotAvailable` is excluded.
pub fn find_cross_speaker_pairs(
    conv: &Conversation,
    tags: &[TagAssignment],
) -> Result<BTreeSet<(SocialOrientationTag, SocialOrientationTag)>, ExplainError> {
    let speaker_tags = tags_by_utterance(conv, tags)?;
    let mut pairs = BTreeSet::new();
    let na = SocialOrientationTag::NotAvailable;
    for (i, (speaker_a, tag_a)) in speaker_tags.iter().enumerate() {
        if *tag_a == na {
            continue;
        }
        for (speaker_b, tag_b) in speaker_tags.iter().skip(i + 1) {
            if *tag_b == na || speaker_a == speaker_b {
                continue;
            }
            pairs.insert(normalized_pair(*tag_a, *tag_b));
        }
    }
    Ok(pairs)
}

/// Conversations whose cross-speaker pair set contains the (unordered) pair.
pub fn filter_conversations<'a>(
    corpus: &'a Corpus,
    tags: &TagMap,
    pair: (SocialOrientationTag, SocialOrientationTag),
) -> Result<Vec<&'a Conversation>, ExplainError> {
    let pair = normalized_pair(pair.0, pair.1);
    let mut selected = Vec::new();
    for conv in &corpus.conversations {
        let assignments = tags
            .get(&conv.conversation_id)
            .ok_or_else(|| ExplainError::MissingTags(conv.conversation_id.clone()))?;
        if find_cross_speaker_pairs(conv, assignments)?.contains(&pair) {
            selected.push(conv);
        }
    }
    Ok(selected)
}

/// Applies a replacement map simultaneously: each tag is looked up in the
/// original map once, so swap maps do not chain.
pub fn apply_replacement(
    tags: &[TagAssignment],
    replacement: &BTreeMap<SocialOrientationTag, SocialOrientationTag>,
) -> Vec<TagAssignment> {
    tags.iter()
        .map(|t| TagAssignment {
            tag: replacement.get(&t.tag).copied().unwrap_or(t.tag),
            ..t.clone()
        })
        .collect()
}

/// Replaces every circumplex tag by a uniform seeded draw over the 8
/// circumplex tags; `NotAvailable` assignments are untouched.
pub fn random_perturbation(tags: &[TagAssignment], seed: u64) -> Vec<TagAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tags.iter()
        .map(|t| {
            if t.tag == SocialOrientationTag::NotAvailable {
                t.clone()
            } else {
                TagAssignment {
                    tag: SocialOrientationTag::CIRCUMPLEX
                        [rng.gen_range(0..SocialOrientationTag::CIRCUMPLEX.len())],
                    ..t.clone()
                }
            }
        })
        .collect()
}

/// Runs one intervention: filter, predict before/after the tag modification,
/// count flips. Conversations are processed in corpus order with a
/// per-conversation perturbation seed (`spec.seed ^ fnv1a64(conversation
/// id)`), so results do not depend on which other conversations are present.
pub fn run_intervention(
    predictor: &dyn OutcomePredictor,
    corpus: &Corpus,
    tags: &TagMap,
    spec: &InterventionSpec,
) -> Result<InterventionResult, ExplainError> {
    spec.validate()?;
    let selected: Vec<&Conversation> = match (spec.mode, spec.filter_pair) {
        (InterventionMode::Targeted, None) => {
            return Err(ExplainError::InvalidSpec {
                name: spec.name.clone(),
                message: "targeted mode needs a filter_pair".to_string(),
            });
        }
        (_, Some(pair)) => filter_conversations(corpus, tags, pair)?,
        (InterventionMode::RandomPerturbation, None) => {
            corpus.conversations.iter().collect()
        }
    };
    let total = selected.len();
    let mut result = InterventionResult {
        spec_name: spec.name.clone(),
        pos2neg: 0,
        neg2pos: 0,
        same: 0,
        n_filtered: 0,
    };
    for conv in selected {
        let assignments = tags
            .get(&conv.conversation_id)
            .ok_or_else(|| ExplainError::MissingTags(conv.conversation_id.clone()))?;
        let modified = match spec.mode {
            InterventionMode::Targeted => apply_replacement(assignments, &spec.replacement),
            InterventionMode::RandomPerturbation => random_perturbation(
                assignments,
                spec.seed ^ fnv1a64(conv.conversation_id.as_bytes()),
            ),
        };
        let predict = |tags: &[TagAssignment]| {
            predictor.predict_outcome(conv, tags).map_err(|source| {
                ExplainError::PredictorFailed {
                    completed: result.n_filtered,
                    total,
                    partial: result.clone(),
                    source,
                }
            })
        };
        let before = predict(assignments)?;
        let after = predict(&modified)?;
        match (before.label, after.label) {
            (Outcome::Success, Outcome::Failure) => result.pos2neg += 1,
            (Outcome::Failure, Outcome::Success) => result.neg2pos += 1,
            _ => result.same += 1,
        }
        result.n_filtered += 1;
    }
    Ok(result)
}

/// Elementwise failure/success ratio of smoothed, normalized cross-speaker
/// pair distributions, with the raw counts kept for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceRatio {
    pub labels: [SocialOrientationTag; 8],
    /// `ratio[a][b]` > 1 means the (a, b) interaction is more common in
    /// failed conversations.
    pub ratio: Vec<Vec<f64>>,
    pub fail_counts: Vec<Vec<u64>>,
    pub success_counts: Vec<Vec<u64>>,
    pub smoothing: f64,
}

fn accumulate_pair_counts(
    conv: &Conversation,
    tags: &[TagAssignment],
    counts: &mut [Vec<u64>],
) -> Result<(), ExplainError> {
    let speaker_tags = tags_by_utterance(conv, tags)?;
    for (i, (speaker_a, tag_a)) in speaker_tags.iter().enumerate() {
        let Some(a) = tag_a.circumplex_index() else { continue };
        for (speaker_b, tag_b) in speaker_tags.iter().skip(i + 1) {
            if speaker_a == speaker_b {
                continue;
            }
            let Some(b) = tag_b.circumplex_index() else { continue };
            // Symmetric double increment; an (x, x) pair lands twice on the
            // diagonal cell.
            counts[a][b] += 1;
            counts[b][a] += 1;
        }
    }
    Ok(())
}

pub fn cooccurrence_ratio(
    corpus: &Corpus,
    tags: &TagMap,
    smoothing: f64,
) -> Result<CooccurrenceRatio, ExplainError> {
    if smoothing.is_nan() || smoothing <= 0.0 {
        return Err(ExplainError::InvalidSmoothing(smoothing));
    }
    let n = SocialOrientationTag::CIRCUMPLEX.len();
    let mut fail_counts = vec![vec![0u64; n]; n];
    let mut success_counts = vec![vec![0u64; n]; n];
    let mut seen = [false; 2];
    for conv in &corpus.conversations {
        let outcome = conv
            .outcome
            .ok_or_else(|| ExplainError::Unlabeled(conv.conversation_id.clone()))?;
        let assignments = tags
            .get(&conv.conversation_id)
            .ok_or_else(|| ExplainError::MissingTags(conv.conversation_id.clone()))?;
        let counts = match outcome {
            Outcome::Failure => {
                seen[0] = true;
                &mut fail_counts
            }
            Outcome::Success => {
                seen[1] = true;
                &mut success_counts
            }
        };
        accumulate_pair_counts(conv, assignments, counts)?;
    }
    if !seen[0] {
        return Err(ExplainError::EmptyCorpus("failure".to_string()));
    }
    if !seen[1] {
        return Err(ExplainError::EmptyCorpus("success".to_string()));
    }

    let normalize = |counts: &[Vec<u64>]| -> Vec<Vec<f64>> {
        let total: f64 = counts
            .iter()
            .flatten()
            .map(|&c| c as f64 + smoothing)
            .sum();
        counts
            .iter()
            .map(|row| row.iter().map(|&c| (c as f64 + smoothing) / total).collect())
            .collect()
    };
    let fail_dist = normalize(&fail_counts);
    let success_dist = normalize(&success_counts);
    let ratio = fail_dist
        .iter()
        .zip(&success_dist)
        .map(|(f_row, s_row)| f_row.iter().zip(s_row).map(|(f, s)| f / s).collect())
        .collect();
    Ok(CooccurrenceRatio {
        labels: SocialOrientationTag::CIRCUMPLEX,
        ratio,
        fail_counts,
        success_counts,
        smoothing,
    })
}

/// Per-outcome tag distributions over all utterances (9-dim, canonical order
/// with `NotAvailable` last, each present outcome normalized to sum 1).
pub fn prevalence_by_outcome(
    corpus: &Corpus,
    tags: &TagMap,
) -> Result<BTreeMap<Outcome, Vec<f64>>, ExplainError> {
    if corpus.conversations.is_empty() {
        return Err(ExplainError::EmptyCorpus("corpus".to_string()));
    }
    let mut counts: BTreeMap<Outcome, Vec<u64>> = BTreeMap::new();
    for conv in &corpus.conversations {
        let outcome = conv
            .outcome
            .ok_or_else(|| ExplainError::Unlabeled(conv.conversation_id.clone()))?;
        let assignments = tags
            .get(&conv.conversation_id)
            .ok_or_else(|| ExplainError::MissingTags(conv.conversation_id.clone()))?;
        let row = counts
            .entry(outcome)
            .or_insert_with(|| vec![0; SocialOrientationTag::ALL.len()]);
        for (_, tag) in tags_by_utterance(conv, assignments)? {
            row[tag.index()] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(outcome, row)| {
            let total: f64 = row.iter().map(|&c| c as f64).sum();
            (outcome, row.into_iter().map(|c| c as f64 / total).collect())
        })
        .collect())
}

/// Parses one intervention spec per JSON line (blank lines skipped), each
/// validated.
pub fn parse_intervention_specs(text: &str) -> Result<Vec<InterventionSpec>, ExplainError> {
    let mut specs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: InterventionSpec =
            serde_json::from_str(line).map_err(|e| ExplainError::SpecParse {
                line: i + 1,
                message: e.to_string(),
            })?;
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

/// The four shipped interventions: one random perturbation and three
/// targeted replacements (defusing a (Cold, Arrogant-Calculating) clash,
/// provoking one from submissive tags, and forcing a dominance standoff).
pub fn preset_interventions() -> Vec<InterventionSpec> {
    parse_intervention_specs(include_str!("../assets/intervention_presets.jsonl"))
        .expect("embedded presets are valid")
}

// ---------------------------------------------------------------------------
// Report rendering

fn csv_field<'a>(value: &'a str, what: &str) -> Result<&'a str, ExplainError> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(ExplainError::UnsafeCsvField(format!("{what} `{value}`")));
    }
    Ok(value)
}

/// One row per intervention, flip-count columns.
pub fn render_intervention_csv(
    results: &[InterventionResult],
) -> Result<String, ExplainError> {
    let mut out = String::from("intervention,pos2neg,neg2pos,same,n_filtered\n");
    for r in results {
        let name = csv_field(&r.spec_name, "intervention")?;
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.pos2neg, r.neg2pos, r.same, r.n_filtered
        ));
    }
    Ok(out)
}

fn render_grid<T: std::fmt::Display>(
    out: &mut String,
    corner: &str,
    labels: &[SocialOrientationTag],
    rows: &[Vec<T>],
) {
    out.push_str(corner);
    for label in labels {
        out.push(',');
        out.push_str(label.wire_name());
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(rows) {
        out.push_str(label.wire_name());
        for value in row {
            out.push_str(&format!(",{value}"));
        }
        out.push('\n');
    }
}

/// The ratio grid plus both raw count grids, blank-line separated, each with
/// a tag-name header row and column.
pub fn render_cooccurrence_csv(ratio: &CooccurrenceRatio) -> String {
    let mut out = String::new();
    let rounded: Vec<Vec<String>> = ratio
        .ratio
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:.6}")).collect())
        .collect();
    render_grid(&mut out, "ratio", &ratio.labels, &rounded);
    out.push('\n');
    render_grid(&mut out, "fail_counts", &ratio.labels, &ratio.fail_counts);
    out.push('\n');
    render_grid(&mut out, "success_counts", &ratio.labels, &ratio.success_counts);
    out
}

/// One row per outcome over the 9 canonical tag columns.
pub fn render_prevalence_csv(prevalence: &BTreeMap<Outcome, Vec<f64>>) -> String {
    let mut out = String::from("outcome");
    for tag in SocialOrientationTag::ALL {
        out.push(',');
        out.push_str(tag.wire_name());
    }
    out.push('\n');
    for (outcome, row) in prevalence {
        out.push_str(outcome.as_str());
        for value in row {
            out.push_str(&format!(",{value:.6}"));
        }
        out.push('\n');
    }
    out
}
