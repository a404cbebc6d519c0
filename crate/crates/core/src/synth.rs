//! Seeded synthetic conversations with a planted social dynamic, used by the
//! end-to-end tests. Cross-speaker Cold/Cold and Arrogant/Cold pairings push a
//! conversation toward failure; Warm/Ingenuous pairings push it toward
//! success. Because the generator's rule is known exactly, downstream claims
//! (a count model can learn it, a defusing intervention can only help) can be
//! checked structurally rather than statistically.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Conversation, Corpus, Outcome, Split, Utterance};
use crate::model::{sigmoid, ModelError, OutcomePrediction, OutcomePredictor, DEFAULT_THRESHOLD};
use crate::tagging::{SocialOrientationTag, TagAssignment, TagMap, TagSource};
use crate::util::fnv1a64;

pub struct SynthConfig {
    pub n_conversations: usize,
    /// Trailing conversations assigned to the Test split; the rest are Train.
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_conversations: 2000,
            n_test: 500,
            seed: 42,
        }
    }
}

const BAD_WEIGHT: f64 = 0.8;
const GOOD_WEIGHT: f64 = 0.8;
const BASE_OFFSET: f64 = -0.5;
const EMPTY_TEXT_RATE: f64 = 0.03;

use SocialOrientationTag as Tag;

/// Tag pools per conversation archetype. The cold pool avoids Warm-Agreeable
/// and Unassuming-Ingenuous (and the warm pool avoids Cold and
/// Arrogant-Calculating) so each archetype carries a clean planted signal.
const COLD_POOL: &[Tag] = &[
    Tag::Cold,
    Tag::Cold,
    Tag::Cold,
    Tag::ArrogantCalculating,
    Tag::ArrogantCalculating,
    Tag::AloofIntroverted,
    Tag::AloofIntroverted,
    Tag::UnassuredSubmissive,
];

const WARM_POOL: &[Tag] = &[
    Tag::WarmAgreeable,
    Tag::WarmAgreeable,
    Tag::WarmAgreeable,
    Tag::UnassumingIngenuous,
    Tag::UnassumingIngenuous,
    Tag::GregariousExtraverted,
    Tag::GregariousExtraverted,
    Tag::AssuredDominant,
];

const MIXED_POOL: &[Tag] = &Tag::CIRCUMPLEX;

const WORD_POOL: &[&str] = &[
    "well", "so", "the", "page", "edit", "source", "claim", "section", "revert", "talk", "policy",
    "cite", "look", "point", "agree", "sure", "maybe", "right", "wrong", "check", "data", "note",
    "thanks", "please",
];

fn synth_text(rng: &mut ChaCha8Rng) -> String {
    let n_words = rng.gen_range(3..=8);
    let words: Vec<&str> = (0..n_words)
        .map(|_| WORD_POOL[rng.gen_range(0..WORD_POOL.len())])
        .collect();
    words.join(" ")
}

fn is_bad_pair(a: Tag, b: Tag) -> bool {
    matches!(
        (a, b),
        (Tag::Cold, Tag::Cold)
            | (Tag::Cold, Tag::ArrogantCalculating)
            | (Tag::ArrogantCalculating, Tag::Cold)
    )
}

fn is_good_pair(a: Tag, b: Tag) -> bool {
    matches!(
        (a, b),
        (Tag::WarmAgreeable, Tag::UnassumingIngenuous)
            | (Tag::UnassumingIngenuous, Tag::WarmAgreeable)
    )
}

/// Counts cross-speaker (bad, good) tag pairs over all utterance pairs.
fn pair_counts(speaker_tags: &[(&str, Tag)]) -> (usize, usize) {
    let mut bad = 0;
    let mut good = 0;
    for (i, (speaker_a, tag_a)) in speaker_tags.iter().enumerate() {
        for (speaker_b, tag_b) in speaker_tags.iter().skip(i + 1) {
            if speaker_a == speaker_b {
                continue;
            }
            if is_bad_pair(*tag_a, *tag_b) {
                bad += 1;
            }
            if is_good_pair(*tag_a, *tag_b) {
                good += 1;
            }
        }
    }
    (bad, good)
}

fn planted_probability(bad: usize, good: usize) -> f64 {
    sigmoid(BAD_WEIGHT * bad as f64 - GOOD_WEIGHT * good as f64 + BASE_OFFSET)
}

/// Generates a labeled, split, fully tagged corpus. Byte-identical for a
/// given config: each conversation is built from its own sub-seed so the
/// output is stable under reordering or partial regeneration.
pub fn planted_corpus(config: &SynthConfig) -> (Corpus, TagMap) {
    assert!(
        config.n_test < config.n_conversations,
        "test split must leave room for training conversations"
    );
    let mut conversations = Vec::with_capacity(config.n_conversations);
    let mut tag_map: TagMap = BTreeMap::new();
    for i in 0..config.n_conversations {
        let conversation_id = format!("synth-{i:04}");
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a64(conversation_id.as_bytes()));

        let archetype_roll: f64 = rng.gen();
        let pool = if archetype_roll < 0.4 {
            COLD_POOL
        } else if archetype_roll < 0.8 {
            WARM_POOL
        } else {
            MIXED_POOL
        };

        let n_utterances = rng.gen_range(6..=12);
        let mut utterances = Vec::with_capacity(n_utterances);
        let mut assignments = Vec::with_capacity(n_utterances);
        for u in 0..n_utterances {
            let utterance_id = format!("{conversation_id}-u{u}");
            let speaker_id = if u % 2 == 0 { "s0" } else { "s1" };
            let (text, tag) = if rng.gen::<f64>() < EMPTY_TEXT_RATE {
                (String::new(), Tag::NotAvailable)
            } else {
                (synth_text(&mut rng), pool[rng.gen_range(0..pool.len())])
            };
            utterances.push(Utterance {
                utterance_id: utterance_id.clone(),
                speaker_id: speaker_id.to_string(),
                text,
                position: u,
                toxic: None,
            });
            assignments.push(TagAssignment {
                utterance_id,
                tag,
                source: TagSource::Human,
                confidence: None,
            });
        }

        let speaker_tags: Vec<(&str, Tag)> = utterances
            .iter()
            .zip(&assignments)
            .map(|(utt, a)| (utt.speaker_id.as_str(), a.tag))
            .collect();
        let (bad, good) = pair_counts(&speaker_tags);
        let p_fail = planted_probability(bad, good);
        let outcome = if rng.gen::<f64>() < p_fail {
            Outcome::Failure
        } else {
            Outcome::Success
        };
        let split = if i < config.n_conversations - config.n_test {
            Split::Train
        } else {
            Split::Test
        };

        conversations.push(Conversation {
            conversation_id: conversation_id.clone(),
            source_page: None,
            outcome: Some(outcome),
            split,
            utterances,
        });
        tag_map.insert(conversation_id, assignments);
    }
    let corpus =
        Corpus::new("synthetic-planted", conversations).expect("generated ids are unique");
    (corpus, tag_map)
}

/// Predicts with the generator's own rule: failure probability from the
/// cross-speaker pair counts, thresholded at 0.5. Deterministic and
/// tag-sensitive, so interventions that remove every bad pair can only lower
/// its probability.
pub struct PlantedPredictor;

impl OutcomePredictor for PlantedPredictor {
    fn predict_outcome(
        &self,
        conv: &Conversation,
        tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError> {
        let by_id: BTreeMap<&str, Tag> =
            tags.iter().map(|t| (t.utterance_id.as_str(), t.tag)).collect();
        let mut speaker_tags = Vec::with_capacity(conv.utterances.len());
        for utt in &conv.utterances {
            let tag = by_id
                .get(utt.utterance_id.as_str())
                .ok_or_else(|| ModelError::MissingTags(conv.conversation_id.clone()))?;
            speaker_tags.push((utt.speaker_id.as_str(), *tag));
        }
        let (bad, good) = pair_counts(&speaker_tags);
        let probability_failure = planted_probability(bad, good);
        Ok(OutcomePrediction {
            conversation_id: conv.conversation_id.clone(),
            probability_failure,
            label: if probability_failure >= DEFAULT_THRESHOLD {
                Outcome::Failure
            } else {
                Outcome::Success
            },
        })
    }
}

/// Ignores tags entirely and derives a probability from a hash of the
/// utterance texts. A control predictor: any intervention that only rewrites
/// tags must produce zero flips against it.
pub struct TextHashPredictor;

impl OutcomePredictor for TextHashPredictor {
    fn predict_outcome(
        &self,
        conv: &Conversation,
        _tags: &[TagAssignment],
    ) -> Result<OutcomePrediction, ModelError> {
        let mut joined = String::new();
        for utt in &conv.utterances {
            joined.push_str(&utt.text);
            joined.push('\u{1f}');
        }
        let probability_failure = (fnv1a64(joined.as_bytes()) % 1000) as f64 / 999.0;
        Ok(OutcomePrediction {
            conversation_id: conv.conversation_id.clone(),
            probability_failure,
            label: if probability_failure >= DEFAULT_THRESHOLD {
                Outcome::Failure
            } else {
                Outcome::Success
            },
        })
    }
}
