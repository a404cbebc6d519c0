//! Persistent tag cache: one JSON record per line, one line per assignment.
//!
//! `cache_store` replaces the whole file atomically (write to a sibling
//! temporary file, then rename), so readers never observe a half-written
//! cache. `cache_append` adds records to the end of an existing cache in a
//! single write, which is how incremental tagging runs persist progress
//! conversation by conversation.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tagging::{SocialOrientationTag, TagAssignment, TagSource, TaggingError};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    utterance_id: String,
    tag: SocialOrientationTag,
    source: TagSource,
    confidence: Option<f64>,
}

fn render_lines(assignments: &[TagAssignment]) -> String {
    let mut out = String::new();
    for a in assignments {
        let record = CacheRecord {
            utterance_id: a.utterance_id.clone(),
            tag: a.tag,
            source: a.source,
            confidence: a.confidence,
        };
        out.push_str(&serde_json::to_string(&record).expect("cache record serializes"));
        out.push('\n');
    }
    out
}

/// Writes `assignments` to `path`, replacing any existing cache atomically.
pub fn cache_store(assignments: &[TagAssignment], path: &Path) -> Result<(), TaggingError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, render_lines(assignments))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Appends `assignments` to the cache at `path`, creating it if absent.
pub fn cache_append(assignments: &[TagAssignment], path: &Path) -> Result<(), TaggingError> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(render_lines(assignments).as_bytes())?;
    Ok(())
}

/// Loads every assignment from the cache at `path`. Blank lines are skipped;
/// anything else that fails to parse — bad JSON (including a line truncated
/// by a crashed writer), an unknown tag or source, a confidence outside
/// `[0, 1]` — reports the byte offset of the offending line.
pub fn cache_load(path: &Path) -> Result<Vec<TagAssignment>, TaggingError> {
    let text = std::fs::read_to_string(path)?;
    let mut assignments = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let payload = line.trim_end_matches(['\n', '\r']);
        if !payload.trim().is_empty() {
            let record: CacheRecord =
                serde_json::from_str(payload).map_err(|e| TaggingError::CorruptCache {
                    offset,
                    message: e.to_string(),
                })?;
            if let Some(c) = record.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return Err(TaggingError::CorruptCache {
                        offset,
                        message: format!("confidence {c} outside [0, 1]"),
                    });
                }
            }
            assignments.push(TagAssignment {
                utterance_id: record.utterance_id,
                tag: record.tag,
                source: record.source,
                confidence: record.confidence,
            });
        }
        offset += line.len() as u64;
    }
    Ok(assignments)
}
