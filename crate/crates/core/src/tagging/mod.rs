//! Utterance-level social orientation tagging.
//!
//! Every tag records who produced it ([`TagSource`]):
//!
//! * `Human` — annotator gold labels loaded from a cache file;
//! * `Llm` — parsed out of a markdown label table returned for a prompt built
//!   by [`prompt::build_prompt`];
//! * `Distilled` — returned by a remote tagger service over the JSON wire
//!   protocol ([`remote::tag_with_remote`]);
//! * `Lexicon` — the deterministic offline keyword fallback
//!   ([`lexicon::tag_with_lexicon`]).
//!
//! Long conversations are split into prompt-sized chunks with exactly one
//! utterance of overlap between consecutive chunks ([`chunk`]), and per-chunk
//! results are merged back with earlier chunks winning on the overlap.
//! Assignments persist in a line-delimited JSON cache ([`cache`]).

pub mod cache;
pub mod chunk;
pub mod lexicon;
pub mod parse;
pub mod prompt;
pub mod remote;

use std::collections::BTreeMap;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use cache::{cache_append, cache_load, cache_store};
pub use chunk::{chunk_for_prompt, merge_chunk_tags, PromptChunk};
pub use lexicon::{sentiment_with_lexicon, tag_with_lexicon};
pub use parse::parse_tag_table;
pub use prompt::{build_prompt, default_fewshot, FewShotExample, FewShotRow};
pub use remote::tag_with_remote;

#[derive(Debug, Error)]
pub enum TaggingError {
    #[error("utterance `{0}` does not fit the chunk budget on its own")]
    UtteranceTooLong(String),
    #[error("malformed tag table: {0}")]
    MalformedTable(String),
    #[error("tag table row {row}: unknown tag `{value}`")]
    UnknownTag { row: usize, value: String },
    #[error("no tag table row for utterance `{0}`")]
    MissingUtterance(String),
    #[error("tag table row {row}: {message}")]
    IdMismatch { row: usize, message: String },
    #[error("no chunk assignment covers utterance `{0}`")]
    CoverageGap(String),
    #[error("corrupt tag cache at byte {offset}: {message}")]
    CorruptCache { offset: u64, message: String },
    #[error("tagger transport: {0}")]
    Transport(String),
    #[error("tagger protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interpersonal-circumplex social orientation tag. The first eight variants
/// are in canonical circular order: each tag's neighbours on the circumplex
/// are the adjacent variants (wrapping around). `NotAvailable` sits off the
/// circle and is reserved for utterances with no usable text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SocialOrientationTag {
    AssuredDominant,
    GregariousExtraverted,
    WarmAgreeable,
    UnassumingIngenuous,
    UnassuredSubmissive,
    AloofIntroverted,
    Cold,
    ArrogantCalculating,
    NotAvailable,
}

impl SocialOrientationTag {
    /// The eight circumplex tags in canonical circular order.
    pub const CIRCUMPLEX: [SocialOrientationTag; 8] = [
        SocialOrientationTag::AssuredDominant,
        SocialOrientationTag::GregariousExtraverted,
        SocialOrientationTag::WarmAgreeable,
        SocialOrientationTag::UnassumingIngenuous,
        SocialOrientationTag::UnassuredSubmissive,
        SocialOrientationTag::AloofIntroverted,
        SocialOrientationTag::Cold,
        SocialOrientationTag::ArrogantCalculating,
    ];

    /// All nine tags, circumplex order first, then `NotAvailable`.
    pub const ALL: [SocialOrientationTag; 9] = [
        SocialOrientationTag::AssuredDominant,
        SocialOrientationTag::GregariousExtraverted,
        SocialOrientationTag::WarmAgreeable,
        SocialOrientationTag::UnassumingIngenuous,
        SocialOrientationTag::UnassuredSubmissive,
        SocialOrientationTag::AloofIntroverted,
        SocialOrientationTag::Cold,
        SocialOrientationTag::ArrogantCalculating,
        SocialOrientationTag::NotAvailable,
    ];

    /// Hyphenated display/wire name, e.g. `Warm-Agreeable`, `Not Available`.
    pub fn wire_name(self) -> &'static str {
        match self {
            SocialOrientationTag::AssuredDominant => "Assured-Dominant",
            SocialOrientationTag::GregariousExtraverted => "Gregarious-Extraverted",
            SocialOrientationTag::WarmAgreeable => "Warm-Agreeable",
            SocialOrientationTag::UnassumingIngenuous => "Unassuming-Ingenuous",
            SocialOrientationTag::UnassuredSubmissive => "Unassured-Submissive",
            SocialOrientationTag::AloofIntroverted => "Aloof-Introverted",
            SocialOrientationTag::Cold => "Cold",
            SocialOrientationTag::ArrogantCalculating => "Arrogant-Calculating",
            SocialOrientationTag::NotAvailable => "Not Available",
        }
    }

    /// Case-insensitive parse tolerating hyphen/space variation
    /// (`"warm agreeable"`, `"WARM-AGREEABLE"`, `"WarmAgreeable"`).
    pub fn parse(s: &str) -> Option<SocialOrientationTag> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '-')
            .collect::<String>()
            .to_lowercase();
        match key.as_str() {
            "assureddominant" => Some(SocialOrientationTag::AssuredDominant),
            "gregariousextraverted" => Some(SocialOrientationTag::GregariousExtraverted),
            "warmagreeable" => Some(SocialOrientationTag::WarmAgreeable),
            "unassumingingenuous" => Some(SocialOrientationTag::UnassumingIngenuous),
            "unassuredsubmissive" => Some(SocialOrientationTag::UnassuredSubmissive),
            "aloofintroverted" => Some(SocialOrientationTag::AloofIntroverted),
            "cold" => Some(SocialOrientationTag::Cold),
            "arrogantcalculating" => Some(SocialOrientationTag::ArrogantCalculating),
            "notavailable" => Some(SocialOrientationTag::NotAvailable),
            _ => None,
        }
    }

    /// Index into [`Self::ALL`]; also the feature column for tag counts.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).expect("tag is in ALL")
    }

    /// Position on the circumplex circle, `None` for `NotAvailable`.
    pub fn circumplex_index(self) -> Option<usize> {
        Self::CIRCUMPLEX.iter().position(|t| *t == self)
    }

    /// Whether two tags are adjacent on the circumplex circle (wrapping).
    /// `NotAvailable` neighbours nothing.
    pub fn is_circumplex_neighbor(self, other: SocialOrientationTag) -> bool {
        match (self.circumplex_index(), other.circumplex_index()) {
            (Some(a), Some(b)) => {
                let n = Self::CIRCUMPLEX.len();
                (a + 1) % n == b || (b + 1) % n == a
            }
            _ => false,
        }
    }
}

impl fmt::Display for SocialOrientationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl Serialize for SocialOrientationTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.wire_name())
    }
}

impl<'de> Deserialize<'de> for SocialOrientationTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SocialOrientationTag::parse(&s)
            .ok_or_else(|| D::Error::custom(format!("unknown social orientation tag `{s}`")))
    }
}

/// Utterance sentiment. Variant order is the feature column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SentimentTag {
    Negative,
    Neutral,
    Positive,
    NotAvailable,
}

impl SentimentTag {
    pub const ALL: [SentimentTag; 4] = [
        SentimentTag::Negative,
        SentimentTag::Neutral,
        SentimentTag::Positive,
        SentimentTag::NotAvailable,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            SentimentTag::Negative => "Negative",
            SentimentTag::Neutral => "Neutral",
            SentimentTag::Positive => "Positive",
            SentimentTag::NotAvailable => "Not Available",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|t| *t == self).expect("tag is in ALL")
    }
}

/// Who produced a tag assignment. `Human` marks annotator gold labels loaded
/// from disk; the other three are the in-process producers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagSource {
    Human,
    Llm,
    Distilled,
    Lexicon,
}

/// One social orientation tag for one utterance. `confidence` is in `[0, 1]`
/// when present; producers that don't score their outputs leave it `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TagAssignment {
    pub utterance_id: String,
    pub tag: SocialOrientationTag,
    pub source: TagSource,
    pub confidence: Option<f64>,
}

/// One sentiment tag for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentAssignment {
    pub utterance_id: String,
    pub tag: SentimentTag,
    pub source: TagSource,
}

/// Tag assignments per conversation, keyed by conversation id.
pub type TagMap = BTreeMap<String, Vec<TagAssignment>>;

/// Builds a [`TagMap`] by matching assignments to a corpus by utterance id.
/// Utterance ids are assumed unique corpus-wide (last assignment wins on a
/// duplicate). Conversations with no tagged utterances get no entry.
pub fn tag_map_for_corpus(corpus: &crate::corpus::Corpus, assignments: &[TagAssignment]) -> TagMap {
    let mut by_utterance: BTreeMap<&str, &TagAssignment> = BTreeMap::new();
    for a in assignments {
        by_utterance.insert(a.utterance_id.as_str(), a);
    }
    let mut map = TagMap::new();
    for conv in &corpus.conversations {
        let tags: Vec<TagAssignment> = conv
            .utterances
            .iter()
            .filter_map(|u| by_utterance.get(u.utterance_id.as_str()).map(|a| (*a).clone()))
            .collect();
        if !tags.is_empty() {
            map.insert(conv.conversation_id.clone(), tags);
        }
    }
    map
}

/// Tagger configuration. `endpoint` addresses the remote tagger service (plain
/// HTTP); `temperature` is recorded for provenance (the wire request does not
/// carry it — sampling is owned by the service); `context_window` is the
/// number of preceding utterances the service should condition on;
/// `max_chunk_chars` is the prompt chunk budget, which must be large enough to
/// fit any two utterances of the corpus being tagged.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerConfig {
    pub endpoint: Option<String>,
    pub temperature: f64,
    pub context_window: usize,
    pub max_chunk_chars: usize,
}

impl Default for TaggerConfig {
    fn default() -> TaggerConfig {
        TaggerConfig {
            endpoint: None,
            temperature: 0.4,
            context_window: 2,
            max_chunk_chars: 12_000,
        }
    }
}
