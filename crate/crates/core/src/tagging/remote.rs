//! Client for the remote tagger service.
//!
//! The conversation is chunked exactly as for prompting, and each chunk goes
//! out as one POST. Utterances with empty text are never sent — they are
//! assigned `Not Available` locally — and the service must return exactly one
//! tag for every utterance it was asked about. Responses are validated
//! strictly: an unknown utterance id, a missing one, a duplicate, an
//! unparseable tag string, or a confidence outside `[0, 1]` is a protocol
//! error, never silently repaired.

use std::collections::BTreeMap;

use crate::corpus::Conversation;
use crate::tagging::chunk::{chunk_for_prompt, merge_chunk_tags, PromptChunk};
use crate::tagging::{
    SocialOrientationTag, TagAssignment, TagSource, TaggerConfig, TaggingError,
};
use crate::wire::{post_json, TagRequest, TagRequestUtterance, TagResponse, WireError};

impl From<WireError> for TaggingError {
    fn from(e: WireError) -> TaggingError {
        match e {
            WireError::Transport(m) => TaggingError::Transport(m),
            WireError::Protocol(m) => TaggingError::Protocol(m),
        }
    }
}

fn tag_chunk(
    chunk: &PromptChunk,
    config: &TaggerConfig,
    endpoint: &str,
) -> Result<Vec<TagAssignment>, TaggingError> {
    let mut local: Vec<TagAssignment> = Vec::new();
    let mut wanted: BTreeMap<&str, bool> = BTreeMap::new();
    let mut to_send: Vec<TagRequestUtterance> = Vec::new();
    for u in &chunk.utterances {
        if u.text.trim().is_empty() {
            local.push(TagAssignment {
                utterance_id: u.utterance_id.clone(),
                tag: SocialOrientationTag::NotAvailable,
                source: TagSource::Distilled,
                confidence: None,
            });
        } else {
            wanted.insert(u.utterance_id.as_str(), false);
            to_send.push(TagRequestUtterance {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                text: u.text.clone(),
            });
        }
    }

    if to_send.is_empty() {
        return Ok(local);
    }

    let request = TagRequest {
        conversation_id: chunk.conversation_id.clone(),
        window: config.context_window,
        utterances: to_send,
    };
    let response: TagResponse = post_json(endpoint, &request)?;

    let mut assignments = local;
    for entry in &response.tags {
        match wanted.get_mut(entry.utterance_id.as_str()) {
            None => {
                return Err(TaggingError::Protocol(format!(
                    "response tags utterance `{}`, which was not in the request",
                    entry.utterance_id
                )))
            }
            Some(seen) if *seen => {
                return Err(TaggingError::Protocol(format!(
                    "response tags utterance `{}` twice",
                    entry.utterance_id
                )))
            }
            Some(seen) => *seen = true,
        }
        let tag = SocialOrientationTag::parse(&entry.tag).ok_or_else(|| {
            TaggingError::Protocol(format!("unknown tag `{}` in response", entry.tag))
        })?;
        if let Some(c) = entry.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(TaggingError::Protocol(format!(
                    "confidence {c} outside [0, 1] for utterance `{}`",
                    entry.utterance_id
                )));
            }
        }
        assignments.push(TagAssignment {
            utterance_id: entry.utterance_id.clone(),
            tag,
            source: TagSource::Distilled,
            confidence: entry.confidence,
        });
    }
    if let Some((id, _)) = wanted.iter().find(|(_, seen)| !**seen) {
        return Err(TaggingError::Protocol(format!(
            "response is missing utterance `{id}`"
        )));
    }
    Ok(assignments)
}

/// Tags `conv` through the service at `config.endpoint`, one request per
/// prompt chunk, and merges chunk results (earlier chunk wins on overlaps).
pub fn tag_with_remote(
    conv: &Conversation,
    config: &TaggerConfig,
) -> Result<Vec<TagAssignment>, TaggingError> {
    let endpoint = config
        .endpoint
        .as_deref()
        .ok_or_else(|| TaggingError::Transport("no tagger endpoint configured".into()))?;
    let chunks = chunk_for_prompt(conv, config.max_chunk_chars)?;
    let per_chunk = chunks
        .iter()
        .map(|chunk| tag_chunk(chunk, config, endpoint))
        .collect::<Result<Vec<_>, _>>()?;
    merge_chunk_tags(&chunks, &per_chunk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testserver::TestServer;
    use crate::wire::TagResponseEntry;

    fn conv() -> Conversation {
        Conversation::from_turns(
            "c1",
            None,
            None,
            &[("u1", "a", "hello there"), ("u2", "b", ""), ("u3", "a", "goodbye now")],
        )
    }

    fn config(endpoint: &str) -> TaggerConfig {
        TaggerConfig { endpoint: Some(endpoint.to_string()), ..TaggerConfig::default() }
    }

    fn echo_server(tag: &'static str, confidence: Option<f64>) -> TestServer {
        TestServer::start(move |body| {
            let request: TagRequest = serde_json::from_str(&body).unwrap();
            let response = TagResponse {
                tags: request
                    .utterances
                    .iter()
                    .map(|u| TagResponseEntry {
                        utterance_id: u.utterance_id.clone(),
                        tag: tag.to_string(),
                        confidence,
                    })
                    .collect(),
            };
            (200, serde_json::to_string(&response).unwrap())
        })
    }

    #[test]
    fn tags_every_utterance_handling_empties_locally() {
        let server = echo_server("Warm-Agreeable", Some(0.9));
        let tags = tag_with_remote(&conv(), &config(&server.url())).unwrap();
        assert_eq!(tags.len(), 3);
        assert!(tags.iter().all(|t| t.source == TagSource::Distilled));
        let by_id: BTreeMap<&str, &TagAssignment> =
            tags.iter().map(|t| (t.utterance_id.as_str(), t)).collect();
        assert_eq!(by_id["u1"].tag, SocialOrientationTag::WarmAgreeable);
        assert_eq!(by_id["u1"].confidence, Some(0.9));
        assert_eq!(by_id["u2"].tag, SocialOrientationTag::NotAvailable);
        assert_eq!(by_id["u2"].confidence, None);
        assert_eq!(by_id["u3"].tag, SocialOrientationTag::WarmAgreeable);
        assert_eq!(server.hits(), 1);
    }

    #[test]
    fn empty_utterances_stay_out_of_the_request() {
        let server = TestServer::start(|body| {
            let request: TagRequest = serde_json::from_str(&body).unwrap();
            assert_eq!(request.window, 2);
            let ids: Vec<&str> =
                request.utterances.iter().map(|u| u.utterance_id.as_str()).collect();
            assert_eq!(ids, ["u1", "u3"]);
            let response = TagResponse {
                tags: request
                    .utterances
                    .iter()
                    .map(|u| TagResponseEntry {
                        utterance_id: u.utterance_id.clone(),
                        tag: "cold".to_string(),
                        confidence: None,
                    })
                    .collect(),
            };
            (200, serde_json::to_string(&response).unwrap())
        });
        let tags = tag_with_remote(&conv(), &config(&server.url())).unwrap();
        assert_eq!(tags[0].tag, SocialOrientationTag::Cold);
        assert_eq!(tags[1].tag, SocialOrientationTag::NotAvailable);
    }

    #[test]
    fn chunked_conversation_merges_with_single_assignment_per_utterance() {
        let server = echo_server("Aloof-Introverted", None);
        let long = Conversation::from_turns(
            "c2",
            None,
            None,
            &[
                ("u1", "a", "aaaaaaaaaa"),
                ("u2", "b", "bbbbbbbbbb"),
                ("u3", "a", "cccccccccc"),
                ("u4", "b", "dddddddddd"),
                ("u5", "a", "eeeeeeeeee"),
            ],
        );
        let mut cfg = config(&server.url());
        cfg.max_chunk_chars = 2 * "| u1 | a | aaaaaaaaaa |\n".chars().count();
        let tags = tag_with_remote(&long, &cfg).unwrap();
        assert_eq!(tags.len(), 5);
        assert!(server.hits() > 1);
        let mut ids: Vec<&str> = tags.iter().map(|t| t.utterance_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn missing_endpoint_is_a_transport_error() {
        let err = tag_with_remote(&conv(), &TaggerConfig::default()).unwrap_err();
        assert!(matches!(err, TaggingError::Transport(_)));
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = tag_with_remote(&conv(), &config(&format!("http://{addr}"))).unwrap_err();
        assert!(matches!(err, TaggingError::Transport(_)));
    }

    #[test]
    fn schema_violations_are_protocol_errors() {
        // Unknown tag string.
        let server = echo_server("Tepid", None);
        assert!(matches!(
            tag_with_remote(&conv(), &config(&server.url())).unwrap_err(),
            TaggingError::Protocol(_)
        ));
        drop(server);

        // Confidence out of range.
        let server = echo_server("Cold", Some(1.5));
        assert!(matches!(
            tag_with_remote(&conv(), &config(&server.url())).unwrap_err(),
            TaggingError::Protocol(_)
        ));
        drop(server);

        // Missing utterance.
        let server = TestServer::start(|body| {
            let request: TagRequest = serde_json::from_str(&body).unwrap();
            let response = TagResponse {
                tags: vec![TagResponseEntry {
                    utterance_id: request.utterances[0].utterance_id.clone(),
                    tag: "Cold".to_string(),
                    confidence: None,
                }],
            };
            (200, serde_json::to_string(&response).unwrap())
        });
        assert!(matches!(
            tag_with_remote(&conv(), &config(&server.url())).unwrap_err(),
            TaggingError::Protocol(_)
        ));
        drop(server);

        // Duplicate utterance.
        let server = TestServer::start(|body| {
            let request: TagRequest = serde_json::from_str(&body).unwrap();
            let entry = |id: &str| TagResponseEntry {
                utterance_id: id.to_string(),
                tag: "Cold".to_string(),
                confidence: None,
            };
            let mut tags: Vec<TagResponseEntry> = request
                .utterances
                .iter()
                .map(|u| entry(&u.utterance_id))
                .collect();
            tags.push(entry(&request.utterances[0].utterance_id));
            (200, serde_json::to_string(&TagResponse { tags }).unwrap())
        });
        assert!(matches!(
            tag_with_remote(&conv(), &config(&server.url())).unwrap_err(),
            TaggingError::Protocol(_)
        ));
    }
}
