//! JSON-over-HTTP payloads and the one POST helper shared by the tagger and
//! predictor clients. Both services speak plain HTTP: a JSON body in, a JSON
//! body out, any non-200 status is a protocol violation.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub(crate) enum WireError {
    /// The endpoint could not be reached or the connection failed mid-flight.
    Transport(String),
    /// The endpoint answered, but not with what the protocol promises.
    Protocol(String),
}

/// Tagger request: one conversation chunk per call.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TagRequest {
    pub conversation_id: String,
    pub window: usize,
    pub utterances: Vec<TagRequestUtterance>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TagRequestUtterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TagResponse {
    pub tags: Vec<TagResponseEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct TagResponseEntry {
    pub utterance_id: String,
    pub tag: String,
    pub confidence: Option<f64>,
}

/// Outcome predictor request: the conversation rendered to tagged text.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct PredictRequest {
    pub conversation_id: String,
    pub rendered_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct PredictResponse {
    pub probability_failure: f64,
}

/// POSTs `request` as JSON to `endpoint` and decodes the JSON response.
pub(crate) fn post_json<Req: Serialize, Resp: DeserializeOwned>(
    endpoint: &str,
    request: &Req,
) -> Result<Resp, WireError> {
    let body = serde_json::to_string(request).expect("wire request serializes");
    let response = ureq::post(endpoint)
        .set("Content-Type", "application/json")
        .send_string(&body)
        .map_err(|e| match e {
            ureq::Error::Status(code, response) => {
                let detail = response.into_string().unwrap_or_default();
                WireError::Protocol(format!("endpoint returned status {code}: {detail}"))
            }
            ureq::Error::Transport(t) => WireError::Transport(t.to_string()),
        })?;
    let text = response
        .into_string()
        .map_err(|e| WireError::Transport(format!("reading response body: {e}")))?;
    serde_json::from_str(&text)
        .map_err(|e| WireError::Protocol(format!("undecodable response body: {e}")))
}
