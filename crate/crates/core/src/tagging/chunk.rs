//! Prompt chunking: splitting a conversation into prompt-sized pieces and
//! merging per-chunk tag assignments back together.

use std::collections::BTreeMap;

use crate::corpus::{Conversation, Utterance};
use crate::tagging::{TagAssignment, TaggingError};

/// A contiguous slice of a conversation destined for one prompt. When
/// `overlap_head` is set, the first utterance repeats the last utterance of
/// the previous chunk; reconstruction drops it. Consecutive chunks share
/// exactly one utterance whenever the budget admits any two utterances of the
/// conversation (which [`crate::tagging::TaggerConfig`] requires).
#[derive(Debug, Clone, PartialEq)]
pub struct PromptChunk {
    pub conversation_id: String,
    pub index: usize,
    pub overlap_head: bool,
    pub utterances: Vec<Utterance>,
}

impl PromptChunk {
    /// `(utterance_id, speaker_id)` pairs, the expected-row input for
    /// [`crate::tagging::parse_tag_table`].
    pub fn expected_rows(&self) -> Vec<(String, String)> {
        self.utterances
            .iter()
            .map(|u| (u.utterance_id.clone(), u.speaker_id.clone()))
            .collect()
    }
}

/// Escapes a value for a single markdown table cell: backslashes and pipes
/// are backslash-escaped, newlines collapse to spaces.
pub(crate) fn escape_cell(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_cell`] modulo newline collapsing. Unrecognized escape
/// sequences are kept verbatim.
pub(crate) fn unescape_cell(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('\\') => out.push('\\'),
                Some('|') => out.push('|'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Renders one utterance as a markdown table row (with trailing newline).
/// Chunk budgets are measured in characters of these rows.
pub fn render_row(utterance: &Utterance) -> String {
    format!(
        "| {} | {} | {} |\n",
        escape_cell(&utterance.utterance_id),
        escape_cell(&utterance.speaker_id),
        escape_cell(&utterance.text)
    )
}

fn row_cost(utterance: &Utterance) -> usize {
    render_row(utterance).chars().count()
}

/// Greedy chunking by rendered row length. Whole utterances are packed in
/// order until the budget would overflow; each following chunk starts with the
/// previous chunk's last utterance as overlap. Errors if a single utterance
/// cannot fit the budget by itself.
pub fn chunk_for_prompt(
    conv: &Conversation,
    max_chunk_chars: usize,
) -> Result<Vec<PromptChunk>, TaggingError> {
    let costs: Vec<usize> = conv.utterances.iter().map(row_cost).collect();
    for (u, &cost) in conv.utterances.iter().zip(&costs) {
        if cost > max_chunk_chars {
            return Err(TaggingError::UtteranceTooLong(u.utterance_id.clone()));
        }
    }

    let mut chunks = Vec::new();
    let mut current: Vec<Utterance> = Vec::new();
    let mut current_cost = 0usize;
    let mut overlap_head = false;
    for (u, &cost) in conv.utterances.iter().zip(&costs) {
        if !current.is_empty() && current_cost + cost > max_chunk_chars {
            let last = current.last().cloned().expect("current chunk is nonempty");
            let last_cost = row_cost(&last);
            chunks.push((overlap_head, std::mem::take(&mut current)));
            // Seed the next chunk with the overlap utterance when the pair
            // fits; otherwise start fresh so chunking always makes progress.
            if last_cost + cost <= max_chunk_chars {
                current.push(last);
                current_cost = last_cost;
                overlap_head = true;
            } else {
                current_cost = 0;
                overlap_head = false;
            }
        }
        current_cost += cost;
        current.push(u.clone());
    }
    if !current.is_empty() {
        chunks.push((overlap_head, current));
    }

    Ok(chunks
        .into_iter()
        .enumerate()
        .map(|(index, (overlap_head, utterances))| PromptChunk {
            conversation_id: conv.conversation_id.clone(),
            index,
            overlap_head,
            utterances,
        })
        .collect())
}

/// Reassembles the original utterance sequence from chunks by dropping each
/// chunk's overlap head. Inverse of [`chunk_for_prompt`].
pub fn reconstruct(chunks: &[PromptChunk]) -> Vec<Utterance> {
    let mut out = Vec::new();
    for chunk in chunks {
        let skip = usize::from(chunk.overlap_head);
        out.extend(chunk.utterances.iter().skip(skip).cloned());
    }
    out
}

/// Merges per-chunk tag assignments into one assignment per utterance, in
/// conversation order. On overlap utterances the earlier chunk wins. Errors
/// with `CoverageGap` if any chunk utterance has no assignment.
///
/// `per_chunk[i]` holds the assignments obtained for `chunks[i]`; the two
/// slices must be parallel. Assignments for ids outside their chunk are
/// ignored.
pub fn merge_chunk_tags(
    chunks: &[PromptChunk],
    per_chunk: &[Vec<TagAssignment>],
) -> Result<Vec<TagAssignment>, TaggingError> {
    assert_eq!(
        chunks.len(),
        per_chunk.len(),
        "chunks and per-chunk assignments must be parallel"
    );
    let mut chosen: BTreeMap<&str, &TagAssignment> = BTreeMap::new();
    for (chunk, assignments) in chunks.iter().zip(per_chunk) {
        for a in assignments {
            let in_chunk = chunk
                .utterances
                .iter()
                .any(|u| u.utterance_id == a.utterance_id);
            if in_chunk {
                chosen.entry(a.utterance_id.as_str()).or_insert(a);
            }
        }
    }

    let mut merged = Vec::new();
    let mut emitted: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
    for chunk in chunks {
        for u in &chunk.utterances {
            if !emitted.insert(u.utterance_id.as_str()) {
                continue;
            }
            match chosen.get(u.utterance_id.as_str()) {
                Some(a) => merged.push((*a).clone()),
                None => return Err(TaggingError::CoverageGap(u.utterance_id.clone())),
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagging::{SocialOrientationTag, TagSource};

    fn conv_with_texts(texts: &[&str]) -> Conversation {
        let turns: Vec<(String, String, String)> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("u{i}"), format!("spk{}", i % 2), t.to_string()))
            .collect();
        let turns_ref: Vec<(&str, &str, &str)> = turns
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str()))
            .collect();
        Conversation::from_turns("c1", None, None, &turns_ref)
    }

    fn assignment(id: &str, tag: SocialOrientationTag) -> TagAssignment {
        TagAssignment {
            utterance_id: id.to_string(),
            tag,
            source: TagSource::Llm,
            confidence: None,
        }
    }

    #[test]
    fn cell_escaping_round_trips() {
        for s in ["plain", "pipe | inside", "back\\slash", "both \\| mix", ""] {
            assert_eq!(unescape_cell(&escape_cell(s)), s);
        }
        // Newlines collapse to spaces so a row stays a single line.
        assert_eq!(escape_cell("a\nb"), "a b");
        assert!(!render_row(&Utterance {
            utterance_id: "u|1".into(),
            speaker_id: "a\nb".into(),
            text: "x | y".into(),
            position: 0,
            toxic: None,
        })
        .trim_end_matches('\n')
        .contains('\n'));
    }

    #[test]
    fn single_chunk_when_budget_fits() {
        let conv = conv_with_texts(&["aaa", "bbb", "ccc"]);
        let chunks = chunk_for_prompt(&conv, 10_000).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(!chunks[0].overlap_head);
        assert_eq!(chunks[0].utterances.len(), 3);
    }

    #[test]
    fn chunks_overlap_by_exactly_one_utterance() {
        // Five rows of identical rendered length; budget fits three rows.
        let conv = conv_with_texts(&["aaaa", "bbbb", "cccc", "dddd", "eeee"]);
        let cost = row_cost(&conv.utterances[0]);
        assert!(conv.utterances.iter().all(|u| row_cost(u) == cost));
        let chunks = chunk_for_prompt(&conv, 3 * cost).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(
            chunks[0]
                .utterances
                .iter()
                .map(|u| u.utterance_id.as_str())
                .collect::<Vec<_>>(),
            ["u0", "u1", "u2"]
        );
        assert!(chunks[1].overlap_head);
        assert_eq!(
            chunks[1]
                .utterances
                .iter()
                .map(|u| u.utterance_id.as_str())
                .collect::<Vec<_>>(),
            ["u2", "u3", "u4"]
        );
        assert_eq!(reconstruct(&chunks), conv.utterances);
    }

    #[test]
    fn oversized_utterance_is_rejected() {
        let long = "x".repeat(200);
        let conv = conv_with_texts(&["short", &long]);
        assert!(matches!(
            chunk_for_prompt(&conv, 100),
            Err(TaggingError::UtteranceTooLong(id)) if id == "u1"
        ));
    }

    #[test]
    fn empty_conversation_has_no_chunks() {
        let conv = conv_with_texts(&[]);
        assert!(chunk_for_prompt(&conv, 100).unwrap().is_empty());
    }

    #[test]
    fn merge_prefers_earlier_chunk_on_overlap() {
        let conv = conv_with_texts(&["aaaa", "bbbb", "cccc", "dddd", "eeee"]);
        let cost = row_cost(&conv.utterances[0]);
        let chunks = chunk_for_prompt(&conv, 3 * cost).unwrap();
        let first = vec![
            assignment("u0", SocialOrientationTag::Cold),
            assignment("u1", SocialOrientationTag::Cold),
            assignment("u2", SocialOrientationTag::WarmAgreeable),
        ];
        let second = vec![
            assignment("u2", SocialOrientationTag::Cold), // loses to chunk 0
            assignment("u3", SocialOrientationTag::AloofIntroverted),
            assignment("u4", SocialOrientationTag::AssuredDominant),
        ];
        let merged = merge_chunk_tags(&chunks, &[first, second]).unwrap();
        assert_eq!(merged.len(), 5);
        assert_eq!(merged[2].utterance_id, "u2");
        assert_eq!(merged[2].tag, SocialOrientationTag::WarmAgreeable);
    }

    #[test]
    fn merge_reports_coverage_gap() {
        let conv = conv_with_texts(&["aaaa", "bbbb"]);
        let chunks = chunk_for_prompt(&conv, 10_000).unwrap();
        let partial = vec![assignment("u0", SocialOrientationTag::Cold)];
        assert!(matches!(
            merge_chunk_tags(&chunks, &[partial]),
            Err(TaggingError::CoverageGap(id)) if id == "u1"
        ));
    }

    #[test]
    fn chunk_reconstruction_is_identity_across_budgets() {
        // Mixed-length texts, several budgets; identity must always hold.
        let texts: Vec<String> = (0..40)
            .map(|i| "word ".repeat(1 + (i * 7) % 23))
            .collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let conv = conv_with_texts(&refs);
        let max_cost = conv.utterances.iter().map(row_cost).max().unwrap();
        for budget in [max_cost, 2 * max_cost, 3 * max_cost + 7, 10_000] {
            let chunks = chunk_for_prompt(&conv, budget).unwrap();
            assert_eq!(reconstruct(&chunks), conv.utterances, "budget {budget}");
            if budget >= 2 * max_cost {
                for pair in chunks.windows(2) {
                    assert!(pair[1].overlap_head);
                    assert_eq!(
                        pair[0].utterances.last().unwrap().utterance_id,
                        pair[1].utterances.first().unwrap().utterance_id
                    );
                }
            }
        }
    }
}
