//! Few-shot prompt construction for LLM tagging.
//!
//! The prompt skeleton (system line, tag-set preamble, tag definitions,
//! instruction paragraph) ships as a versioned text asset and is reproduced
//! byte for byte; only the inserted conversations vary. Conversations render
//! as markdown tables — an input table (`Utterance ID | Speaker ID | Text`)
//! and, for labeled examples, a label table (`Utterance ID | Speaker ID |
//! Label`) — separated by `---` lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tagging::chunk::{escape_cell, PromptChunk};
use crate::tagging::{SocialOrientationTag, TaggingError};

/// Version marker of the embedded prompt template asset.
pub const PROMPT_TEMPLATE_VERSION: &str = "v1";

const TEMPLATE: &str = include_str!("../../assets/prompt_template_v1.txt");
const DEFINITIONS: &str = include_str!("../../assets/tag_definitions_v1.txt");
const FEWSHOT_DEFAULT: &str = include_str!("../../assets/fewshot_default.json");

/// One labeled utterance of a few-shot example conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub utterance_id: String,
    pub speaker_id: String,
    pub text: String,
    pub label: SocialOrientationTag,
}

/// A labeled example conversation shown in the prompt before the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub rows: Vec<FewShotRow>,
}

/// The four example conversations shipped with the crate. They cover all
/// eight circumplex tags.
pub fn default_fewshot() -> Vec<FewShotExample> {
    serde_json::from_str(FEWSHOT_DEFAULT).expect("embedded few-shot asset is valid")
}

/// Loads few-shot examples from a JSON file with the same shape as the
/// embedded default asset.
pub fn load_fewshot(path: &Path) -> Result<Vec<FewShotExample>, TaggingError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| TaggingError::MalformedTable(format!("few-shot file {path:?}: {e}")))
}

/// The eight tag definition paragraphs inserted into every prompt.
pub fn tag_definitions() -> &'static str {
    DEFINITIONS
}

const INPUT_HEADER: &str = "| Utterance ID | Speaker ID | Text |\n| --- | --- | --- |\n";
const LABEL_HEADER: &str = "| Utterance ID | Speaker ID | Label |\n| --- | --- | --- |\n";

/// Renders an input table from `(utterance_id, speaker_id, text)` rows.
pub fn render_input_table<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
{
    let mut out = String::from(INPUT_HEADER);
    for (id, speaker, text) in rows {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            escape_cell(id),
            escape_cell(speaker),
            escape_cell(text)
        ));
    }
    out
}

/// Renders a label table from `(utterance_id, speaker_id, tag)` rows.
pub fn render_label_table<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str, SocialOrientationTag)>,
{
    let mut out = String::from(LABEL_HEADER);
    for (id, speaker, tag) in rows {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            escape_cell(id),
            escape_cell(speaker),
            tag.wire_name()
        ));
    }
    out
}

/// Builds the full tagging prompt for one chunk: the versioned skeleton with
/// the tag definitions, the few-shot example conversations (input + label
/// table pairs), and the target chunk as a final input table.
pub fn build_prompt(chunk: &PromptChunk, fewshot: &[FewShotExample]) -> String {
    let mut examples = String::new();
    for example in fewshot {
        examples.push_str("---\n");
        examples.push_str(&render_input_table(example.rows.iter().map(|r| {
            (r.utterance_id.as_str(), r.speaker_id.as_str(), r.text.as_str())
        })));
        examples.push('\n');
        examples.push_str(&render_label_table(
            example
                .rows
                .iter()
                .map(|r| (r.utterance_id.as_str(), r.speaker_id.as_str(), r.label)),
        ));
    }

    let mut target = String::from("---\n");
    target.push_str(&render_input_table(chunk.utterances.iter().map(|u| {
        (u.utterance_id.as_str(), u.speaker_id.as_str(), u.text.as_str())
    })));

    // Split-and-join keeps placeholder-like text inside payloads inert.
    let mut prompt = TEMPLATE.to_string();
    for (placeholder, payload) in [
        ("{{definitions}}", DEFINITIONS),
        ("{{examples}}", examples.as_str()),
        ("{{target}}", target.as_str()),
    ] {
        let (before, after) = prompt
            .split_once(placeholder)
            .expect("template contains placeholder");
        prompt = format!("{before}{payload}{after}");
    }
    prompt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Conversation;
    use crate::tagging::chunk_for_prompt;

    fn sample_chunk() -> PromptChunk {
        let conv = Conversation::from_turns(
            "c9",
            None,
            None,
            &[
                ("u1", "SpeakerA", "That sounds like a good plan."),
                ("u2", "SpeakerB", "I | disagree with the plan."),
            ],
        );
        chunk_for_prompt(&conv, 10_000).unwrap().remove(0)
    }

    #[test]
    fn default_fewshot_has_four_examples_covering_all_tags() {
        let fewshot = default_fewshot();
        assert_eq!(fewshot.len(), 4);
        let used: std::collections::BTreeSet<_> = fewshot
            .iter()
            .flat_map(|e| e.rows.iter().map(|r| r.label))
            .collect();
        for tag in SocialOrientationTag::CIRCUMPLEX {
            assert!(used.contains(&tag), "few-shot examples never use {tag}");
        }
    }

    #[test]
    fn prompt_layout_matches_template() {
        let prompt = build_prompt(&sample_chunk(), &default_fewshot());
        assert!(prompt.starts_with("System Prompt: You are a helpful assistant.\n"));
        assert!(prompt.contains("User Input: Social orientation (from circumplex theory)"));
        // All eight definition paragraphs present.
        for tag in SocialOrientationTag::CIRCUMPLEX {
            assert!(prompt.contains(&format!("{} - ", tag.wire_name())));
        }
        assert!(prompt.contains("Here are a few examples.\n---\n| Utterance ID | Speaker ID | Text |"));
        // 4 examples => 4 input tables + 4 label tables + 1 target input table.
        assert_eq!(prompt.matches(INPUT_HEADER).count(), 5);
        assert_eq!(prompt.matches(LABEL_HEADER).count(), 4);
        assert_eq!(prompt.matches("---\n|").count(), 5);
        // No unexpanded placeholders.
        assert!(!prompt.contains("{{"));
        // Target table is the tail, with escaped cells.
        assert!(prompt.ends_with("| u2 | SpeakerB | I \\| disagree with the plan. |\n"));
    }

    #[test]
    fn target_rows_appear_exactly_once() {
        let chunk = sample_chunk();
        let prompt = build_prompt(&chunk, &default_fewshot());
        for u in &chunk.utterances {
            let row = crate::tagging::chunk::render_row(u);
            assert_eq!(prompt.matches(row.as_str()).count(), 1);
        }
    }

    #[test]
    fn fewshot_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fewshot.json");
        let fewshot = default_fewshot();
        std::fs::write(&path, serde_json::to_string_pretty(&fewshot).unwrap()).unwrap();
        assert_eq!(load_fewshot(&path).unwrap(), fewshot);
    }
}
