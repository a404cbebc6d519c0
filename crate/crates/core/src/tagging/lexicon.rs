//! Deterministic keyword fallback taggers.
//!
//! Each circumplex tag has a fixed list of lowercase cue substrings drawn
//! from its definition paragraph. An utterance scores one point per cue
//! occurrence in its lowercased text; the highest-scoring tag wins, ties
//! break toward the earlier tag in canonical order, and an utterance with no
//! cue hits falls back to `Unassuming-Ingenuous` (the "takes things as they
//! come" neutral of the circle). Empty or whitespace-only text is
//! `Not Available`. Both taggers are pure functions of the utterance text.

use crate::corpus::Conversation;
use crate::tagging::{
    SentimentAssignment, SentimentTag, SocialOrientationTag, TagAssignment, TagSource,
};

const SOCIAL_CUES: [(SocialOrientationTag, &[&str]); 8] = [
    (
        SocialOrientationTag::AssuredDominant,
        &["demand", "insist", "must", "listen to me", "i am certain", "obviously", "clearly"],
    ),
    (
        SocialOrientationTag::GregariousExtraverted,
        &["everyone", "let's all", "happy", "cheer", "welcome", "exciting", "folks"],
    ),
    (
        SocialOrientationTag::WarmAgreeable,
        &["thank", "kind", "appreciate", "glad to help", "well-being", "no worries", "happy to"],
    ),
    (
        SocialOrientationTag::UnassumingIngenuous,
        &["honest", "to be fair", "i could be wrong", "modest", "as it comes", "truthfully"],
    ),
    (
        SocialOrientationTag::UnassuredSubmissive,
        &["sorry", "i guess", "maybe i", "not sure", "i doubt", "give up", "if that's ok"],
    ),
    (
        SocialOrientationTag::AloofIntroverted,
        &["whatever", "don't care", "not interested", "leave me", "fine.", "no comment"],
    ),
    (
        SocialOrientationTag::Cold,
        &["your problem", "fend for", "nobody cares", "deal with it", "ruthless", "don't come crying", "not my problem"],
    ),
    (
        SocialOrientationTag::ArrogantCalculating,
        &["i'm better", "amateurs", "beneath me", "obviously you", "i always win", "outsmart", "my plan"],
    ),
];

const POSITIVE_CUES: [&str; 10] = [
    "thank", "great", "good", "appreciate", "glad", "love", "nice", "helpful", "wonderful",
    "i agree",
];
const NEGATIVE_CUES: [&str; 10] = [
    "bad", "wrong", "hate", "stupid", "awful", "terrible", "disagree", "ridiculous", "annoy",
    "worst",
];

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    haystack.matches(needle).count()
}

fn social_tag_for_text(text: &str) -> SocialOrientationTag {
    if text.trim().is_empty() {
        return SocialOrientationTag::NotAvailable;
    }
    let lowered = text.to_lowercase();
    let mut best = SocialOrientationTag::UnassumingIngenuous;
    let mut best_score = 0usize;
    for (tag, cues) in SOCIAL_CUES {
        let score: usize = cues.iter().map(|cue| count_occurrences(&lowered, cue)).sum();
        if score > best_score {
            best = tag;
            best_score = score;
        }
    }
    best
}

fn sentiment_tag_for_text(text: &str) -> SentimentTag {
    if text.trim().is_empty() {
        return SentimentTag::NotAvailable;
    }
    let lowered = text.to_lowercase();
    let positive: usize = POSITIVE_CUES.iter().map(|c| count_occurrences(&lowered, c)).sum();
    let negative: usize = NEGATIVE_CUES.iter().map(|c| count_occurrences(&lowered, c)).sum();
    match positive.cmp(&negative) {
        std::cmp::Ordering::Greater => SentimentTag::Positive,
        std::cmp::Ordering::Less => SentimentTag::Negative,
        std::cmp::Ordering::Equal => SentimentTag::Neutral,
    }
}

/// Tags every utterance of `conv` from the cue table.
pub fn tag_with_lexicon(conv: &Conversation) -> Vec<TagAssignment> {
    conv.utterances
        .iter()
        .map(|u| TagAssignment {
            utterance_id: u.utterance_id.clone(),
            tag: social_tag_for_text(&u.text),
            source: TagSource::Lexicon,
            confidence: None,
        })
        .collect()
}

/// Assigns a valence class to every utterance of `conv`: positive cues vs
/// negative cues by occurrence count, ties are `Neutral`.
pub fn sentiment_with_lexicon(conv: &Conversation) -> Vec<SentimentAssignment> {
    conv.utterances
        .iter()
        .map(|u| SentimentAssignment {
            utterance_id: u.utterance_id.clone(),
            tag: sentiment_tag_for_text(&u.text),
            source: TagSource::Lexicon,
        })
        .collect()
}
