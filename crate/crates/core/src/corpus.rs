//! Conversation data model and corpus operations.
//!
//! A corpus is a list of conversations; a conversation is an ordered list of
//! utterances with an optional binary outcome (`Success`/`Failure`), an
//! optional source page (the forum page it was collected from), and a split
//! assignment. The on-disk format is JSONL: one conversation object per line
//! with keys `conversation_id`, `source_page` (string or null), `outcome`
//! ("success", "failure", or null), optional `split` ("train"/"val"/"test"),
//! and `utterances` (objects with `utterance_id`, `speaker_id`, `text`, and
//! an optional boolean `toxic`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed conversation record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate conversation id `{0}`")]
    DuplicateConversationId(String),
    #[error("conversation `{conversation_id}`: duplicate utterance id `{utterance_id}`")]
    DuplicateUtteranceId {
        conversation_id: String,
        utterance_id: String,
    },
    #[error("conversation `{0}`: first utterance is already toxic, context would be empty")]
    EmptyContext(String),
    #[error("conversation `{0}`: too short to drop the final turn")]
    TooShort(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Binary conversation outcome. `Failure` is the positive class throughout
/// (a conversation that derails, e.g. into a personal attack).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub text: String,
    /// Zero-based position within the conversation; always contiguous.
    pub position: usize,
    /// Toxicity flag as provided by the input data; `None` when unknown.
    pub toxic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub conversation_id: String,
    pub source_page: Option<String>,
    pub outcome: Option<Outcome>,
    pub split: Split,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    /// Builds a conversation from `(utterance_id, speaker_id, text)` triples,
    /// assigning contiguous positions.
    pub fn from_turns(
        conversation_id: &str,
        source_page: Option<&str>,
        outcome: Option<Outcome>,
        turns: &[(&str, &str, &str)],
    ) -> Conversation {
        let utterances = turns
            .iter()
            .enumerate()
            .map(|(position, (id, speaker, text))| Utterance {
                utterance_id: id.to_string(),
                speaker_id: speaker.to_string(),
                text: text.to_string(),
                position,
                toxic: None,
            })
            .collect();
        Conversation {
            conversation_id: conversation_id.to_string(),
            source_page: source_page.map(str::to_string),
            outcome,
            split: Split::Unassigned,
            utterances,
        }
    }

    pub fn unique_speakers(&self) -> usize {
        self.utterances
            .iter()
            .map(|u| u.speaker_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn renumber(&mut self) {
        for (i, u) in self.utterances.iter_mut().enumerate() {
            u.position = i;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub success: usize,
    pub failure: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub corpus_id: String,
    pub conversations: Vec<Conversation>,
}

impl Corpus {
    /// Validates conversation-id uniqueness and per-conversation utterance-id
    /// uniqueness, and renumbers utterance positions.
    pub fn new(corpus_id: &str, mut conversations: Vec<Conversation>) -> Result<Corpus, CorpusError> {
        let mut seen = BTreeSet::new();
        for conv in &mut conversations {
            if !seen.insert(conv.conversation_id.clone()) {
                return Err(CorpusError::DuplicateConversationId(
                    conv.conversation_id.clone(),
                ));
            }
            let mut utt_seen = BTreeSet::new();
            for u in &conv.utterances {
                if !utt_seen.insert(u.utterance_id.clone()) {
                    return Err(CorpusError::DuplicateUtteranceId {
                        conversation_id: conv.conversation_id.clone(),
                        utterance_id: u.utterance_id.clone(),
                    });
                }
            }
            conv.renumber();
        }
        Ok(Corpus {
            corpus_id: corpus_id.to_string(),
            conversations,
        })
    }

    pub fn label_counts(&self) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for conv in &self.conversations {
            match conv.outcome {
                Some(Outcome::Success) => counts.success += 1,
                Some(Outcome::Failure) => counts.failure += 1,
                None => counts.unlabeled += 1,
            }
        }
        counts
    }

    /// Counts of labeled conversations only, keyed by outcome. Input shape
    /// for class weighting.
    pub fn outcome_counts(&self) -> BTreeMap<Outcome, usize> {
        let mut counts = BTreeMap::new();
        for conv in &self.conversations {
            if let Some(outcome) = conv.outcome {
                *counts.entry(outcome).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn get(&self, conversation_id: &str) -> Option<&Conversation> {
        self.conversations
            .iter()
            .find(|c| c.conversation_id == conversation_id)
    }

    /// A corpus containing only the conversations in the given split, in
    /// corpus order. The id is preserved; splits are carried over.
    pub fn split_subset(&self, split: Split) -> Corpus {
        Corpus {
            corpus_id: self.corpus_id.clone(),
            conversations: self
                .conversations
                .iter()
                .filter(|c| c.split == split)
                .cloned()
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    utterance_id: String,
    speaker_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    toxic: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct ConversationRecord {
    conversation_id: String,
    source_page: Option<String>,
    outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
    utterances: Vec<UtteranceRecord>,
}

impl From<&Conversation> for ConversationRecord {
    fn from(conv: &Conversation) -> ConversationRecord {
        ConversationRecord {
            conversation_id: conv.conversation_id.clone(),
            source_page: conv.source_page.clone(),
            outcome: conv.outcome,
            split: match conv.split {
                Split::Unassigned => None,
                s => Some(s),
            },
            utterances: conv
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    utterance_id: u.utterance_id.clone(),
                    speaker_id: u.speaker_id.clone(),
                    text: u.text.clone(),
                    toxic: u.toxic,
                })
                .collect(),
        }
    }
}

/// Loads a JSONL corpus. The corpus id is the file stem. Utterance positions
/// are assigned from file order; blank lines are ignored.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path)?;
    let corpus_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let mut conversations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ConversationRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?;
        let conv = Conversation {
            conversation_id: record.conversation_id,
            source_page: record.source_page,
            outcome: record.outcome,
            split: record.split.unwrap_or(Split::Unassigned),
            utterances: record
                .utterances
                .into_iter()
                .enumerate()
                .map(|(position, u)| Utterance {
                    utterance_id: u.utterance_id,
                    speaker_id: u.speaker_id,
                    text: u.text,
                    position,
                    toxic: u.toxic,
                })
                .collect(),
        };
        conversations.push(conv);
    }
    Corpus::new(&corpus_id, conversations)
}

/// Writes a corpus as JSONL, one conversation per line. Inverse of
/// [`load_corpus`] up to the corpus id (which is derived from the file name).
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = Vec::new();
    for conv in &corpus.conversations {
        let record = ConversationRecord::from(conv);
        let line = serde_json::to_string(&record).expect("conversation record serializes");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Label derivation and trimming
// ---------------------------------------------------------------------------

/// Derives the prediction context and outcome from toxicity flags: a
/// conversation containing a toxic utterance is a `Failure` and its context is
/// everything strictly before the first toxic utterance; a conversation with
/// no toxic utterance is a `Success` kept whole. The returned conversation has
/// its outcome set accordingly.
pub fn derive_context_and_label(
    conv: &Conversation,
) -> Result<(Conversation, Outcome), CorpusError> {
    let first_toxic = conv.utterances.iter().position(|u| u.toxic == Some(true));
    match first_toxic {
        Some(0) => Err(CorpusError::EmptyContext(conv.conversation_id.clone())),
        Some(idx) => {
            let mut context = conv.clone();
            context.utterances.truncate(idx);
            context.outcome = Some(Outcome::Failure);
            Ok((context, Outcome::Failure))
        }
        None => {
            let mut context = conv.clone();
            context.outcome = Some(Outcome::Success);
            Ok((context, Outcome::Success))
        }
    }
}

/// Removes the final turn: the maximal trailing run of utterances by the last
/// speaker. Guards against leaking the outcome through the utterance that
/// triggered the label.
pub fn drop_final_turn(conv: &Conversation) -> Result<Conversation, CorpusError> {
    let last_speaker = match conv.utterances.last() {
        Some(u) => u.speaker_id.clone(),
        None => return Err(CorpusError::TooShort(conv.conversation_id.clone())),
    };
    let keep = conv
        .utterances
        .iter()
        .rposition(|u| u.speaker_id != last_speaker)
        .map(|i| i + 1)
        .unwrap_or(0);
    if keep == 0 {
        return Err(CorpusError::TooShort(conv.conversation_id.clone()));
    }
    let mut trimmed = conv.clone();
    trimmed.utterances.truncate(keep);
    Ok(trimmed)
}

/// Keeps conversations with at least `min_speakers` unique speakers and at
/// least `min_turns` utterances.
pub fn filter_candidates(corpus: &Corpus, min_speakers: usize, min_turns: usize) -> Corpus {
    Corpus {
        corpus_id: corpus.corpus_id.clone(),
        conversations: corpus
            .conversations
            .iter()
            .filter(|c| c.utterances.len() >= min_turns && c.unique_speakers() >= min_speakers)
            .cloned()
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Pairing and subsetting
// ---------------------------------------------------------------------------

/// Pairs each failure-labeled conversation with one uniformly drawn, not yet
/// used success-labeled conversation from the same source page. Conversations
/// with an unknown source page never match. Returns the pairs plus the number
/// of failure conversations that could not be paired.
pub fn pair_balanced(corpus: &Corpus, seed: u64) -> (Vec<(Conversation, Conversation)>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = vec![false; corpus.conversations.len()];
    let mut pairs = Vec::new();
    let mut dropped = 0usize;
    for conv in &corpus.conversations {
        if conv.outcome != Some(Outcome::Failure) {
            continue;
        }
        let page = match &conv.source_page {
            Some(p) => p,
            None => {
                dropped += 1;
                continue;
            }
        };
        let candidates: Vec<usize> = corpus
            .conversations
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                !used[*i]
                    && c.outcome == Some(Outcome::Success)
                    && c.source_page.as_deref() == Some(page.as_str())
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            dropped += 1;
            continue;
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        used[pick] = true;
        pairs.push((conv.clone(), corpus.conversations[pick].clone()));
    }
    (pairs, dropped)
}

/// Seeded stratified subsample without replacement. Per outcome stratum the
/// subset size is `round(fraction * n)` (half away from zero) with a floor of
/// one conversation for any nonempty stratum. Conversation order is preserved;
/// `fraction = 1.0` returns the corpus unchanged.
pub fn stratified_subset(corpus: &Corpus, fraction: f64, seed: u64) -> Corpus {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "fraction must be in (0, 1], got {fraction}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected = BTreeSet::new();
    for stratum in [Some(Outcome::Success), Some(Outcome::Failure), None] {
        let mut indices: Vec<usize> = corpus
            .conversations
            .iter()
            .enumerate()
            .filter(|(_, c)| c.outcome == stratum)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let k = ((fraction * indices.len() as f64).round() as usize)
            .max(1)
            .min(indices.len());
        indices.shuffle(&mut rng);
        selected.extend(indices.into_iter().take(k));
    }
    Corpus {
        corpus_id: corpus.corpus_id.clone(),
        conversations: corpus
            .conversations
            .iter()
            .enumerate()
            .filter(|(i, _)| selected.contains(i))
            .map(|(_, c)| c.clone())
            .collect(),
    }
}

/// Seeded stratified split assignment. Per outcome stratum,
/// `round(train_frac * n)` conversations go to Train and `round(val_frac * n)`
/// to Val; the rest go to Test.
pub fn assign_splits(corpus: &mut Corpus, train_frac: f64, val_frac: f64, seed: u64) {
    assert!(
        train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0,
        "split fractions must be nonnegative and sum to at most 1"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for stratum in [Some(Outcome::Success), Some(Outcome::Failure), None] {
        let mut indices: Vec<usize> = corpus
            .conversations
            .iter()
            .enumerate()
            .filter(|(_, c)| c.outcome == stratum)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_train = ((train_frac * n as f64).round() as usize).min(n);
        let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
        for (pos, idx) in indices.into_iter().enumerate() {
            corpus.conversations[idx].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Keyword toxicity fallback
// ---------------------------------------------------------------------------

/// Attack-phrase cues for the keyword fallback detector.
const TOXIC_CUES: &[&str] = &[
    "idiot",
    "moron",
    "stupid",
    "shut up",
    "pathetic",
    "you people are",
    "incompetent fool",
    "worthless",
];

/// Keyword fallback toxicity detector for data without toxicity annotations.
/// Case-insensitive substring match against a fixed cue list.
pub fn text_is_toxic(text: &str) -> bool {
    let lower = text.to_lowercase();
    TOXIC_CUES.iter().any(|cue| lower.contains(cue))
}

/// Fills in missing toxicity flags using [`text_is_toxic`]. Flags already
/// present in the data are left untouched.
pub fn mark_toxicity_by_keywords(conv: &mut Conversation) {
    for u in &mut conv.utterances {
        if u.toxic.is_none() {
            u.toxic = Some(text_is_toxic(&u.text));
        }
    }
}
