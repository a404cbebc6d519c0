//! Parsing the label table out of an LLM response.
//!
//! Responses are free text that contains a markdown table with `Utterance
//! ID`, `Speaker ID`, and `Label` columns. The parser locates the first such
//! table, maps columns by header (extra columns are ignored, order does not
//! matter), and checks every row against the utterances the prompt asked
//! about: ids must exist, must not repeat, and must carry the speaker the
//! prompt stated.

use std::collections::BTreeMap;

use crate::tagging::chunk::unescape_cell;
use crate::tagging::{SocialOrientationTag, TagAssignment, TagSource, TaggingError};

/// Splits a markdown table line into trimmed raw cells, honouring `\|`
/// escapes. Returns `None` if the line is not pipe-delimited.
fn split_row(line: &str) -> Option<Vec<String>> {
    let line = line.trim();
    let rest = line.strip_prefix('|')?.strip_suffix('|')?;
    let mut cells = Vec::new();
    let mut cell = String::new();
    let mut chars = rest.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                cell.push(c);
                if let Some(next) = chars.next() {
                    cell.push(next);
                }
            }
            '|' => cells.push(std::mem::take(&mut cell)),
            _ => cell.push(c),
        }
    }
    cells.push(cell);
    Some(cells.into_iter().map(|c| c.trim().to_string()).collect())
}

fn is_separator_row(cells: &[String]) -> bool {
    !cells.is_empty()
        && cells.iter().all(|c| {
            let body = c.trim_start_matches(':').trim_end_matches(':');
            !body.is_empty() && body.chars().all(|ch| ch == '-')
        })
}

fn normalize_header(cell: &str) -> String {
    cell.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

struct Columns {
    utterance_id: usize,
    speaker_id: usize,
    label: usize,
}

fn header_columns(cells: &[String]) -> Option<Columns> {
    let position = |name: &str| {
        cells
            .iter()
            .position(|c| normalize_header(c) == name)
    };
    Some(Columns {
        utterance_id: position("utterance id")?,
        speaker_id: position("speaker id")?,
        label: position("label")?,
    })
}

/// Extracts tag assignments from `response`, validating them against the
/// `(utterance_id, speaker_id)` rows the prompt presented. Assignments come
/// back in `expected` order with source [`TagSource::Llm`].
pub fn parse_tag_table(
    response: &str,
    expected: &[(String, String)],
) -> Result<Vec<TagAssignment>, TaggingError> {
    if expected.is_empty() {
        return Ok(Vec::new());
    }

    let mut lines = response.lines();
    let (columns, width) = loop {
        let line = lines
            .next()
            .ok_or_else(|| TaggingError::MalformedTable("no label table in response".into()))?;
        if let Some(cells) = split_row(line) {
            if let Some(columns) = header_columns(&cells) {
                break (columns, cells.len());
            }
        }
    };

    match lines.next().and_then(split_row) {
        Some(cells) if is_separator_row(&cells) => {}
        _ => {
            return Err(TaggingError::MalformedTable(
                "label table header is not followed by a separator row".into(),
            ))
        }
    }

    let speaker_by_id: BTreeMap<&str, &str> = expected
        .iter()
        .map(|(id, speaker)| (id.as_str(), speaker.as_str()))
        .collect();
    let mut tag_by_id: BTreeMap<&str, SocialOrientationTag> = BTreeMap::new();

    let mut row = 0usize;
    for line in lines {
        let cells = match split_row(line) {
            Some(cells) => cells,
            None => break,
        };
        row += 1;
        if cells.len() != width {
            return Err(TaggingError::MalformedTable(format!(
                "row {row} has {} cells, header has {width}",
                cells.len()
            )));
        }
        let utterance_id = unescape_cell(&cells[columns.utterance_id]);
        let speaker_id = unescape_cell(&cells[columns.speaker_id]);
        let label = unescape_cell(&cells[columns.label]);

        let expected_speaker = match speaker_by_id.get(utterance_id.as_str()) {
            Some(speaker) => *speaker,
            None => {
                return Err(TaggingError::IdMismatch {
                    row,
                    message: format!("utterance `{utterance_id}` was not in the prompt"),
                })
            }
        };
        if speaker_id != expected_speaker {
            return Err(TaggingError::IdMismatch {
                row,
                message: format!(
                    "utterance `{utterance_id}` has speaker `{speaker_id}`, prompt said `{expected_speaker}`"
                ),
            });
        }
        let tag = SocialOrientationTag::parse(&label)
            .ok_or(TaggingError::UnknownTag { row, value: label })?;
        let key = speaker_by_id
            .get_key_value(utterance_id.as_str())
            .expect("id present")
            .0;
        if tag_by_id.insert(key, tag).is_some() {
            return Err(TaggingError::IdMismatch {
                row,
                message: format!("utterance `{utterance_id}` appears twice"),
            });
        }
    }

    expected
        .iter()
        .map(|(id, _)| {
            let tag = tag_by_id
                .get(id.as_str())
                .ok_or_else(|| TaggingError::MissingUtterance(id.clone()))?;
            Ok(TagAssignment {
                utterance_id: id.clone(),
                tag: *tag,
                source: TagSource::Llm,
                confidence: None,
            })
        })
        .collect()
}
