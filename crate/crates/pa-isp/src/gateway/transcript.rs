//! Scripted chat provider for offline runs and tests.
//!
//! A transcript is an ordered list of entries, each matching one stage tag
//! and carrying either a reply or a scripted transport error. Requests
//! consume the earliest unconsumed entry whose tag matches, so every
//! pipeline run against a transcript is a pure function of its inputs.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, GatewayError};

/// One scripted exchange: exactly one of `reply` / `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    #[serde(rename = "match")]
    pub match_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TranscriptEntry {
    pub fn reply(tag: &str, text: impl Into<String>) -> Self {
        TranscriptEntry { match_tag: tag.to_string(), reply: Some(text.into()), error: None }
    }

    pub fn fail(tag: &str, message: impl Into<String>) -> Self {
        TranscriptEntry { match_tag: tag.to_string(), reply: None, error: Some(message.into()) }
    }
}

struct TranscriptState {
    consumed: Vec<bool>,
    requests: Vec<ChatRequest>,
}

/// Serves transcript entries in order per tag and records every request.
pub struct TranscriptProvider {
    entries: Vec<TranscriptEntry>,
    state: Mutex<TranscriptState>,
}

impl TranscriptProvider {
    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Result<Self, GatewayError> {
        for (i, entry) in entries.iter().enumerate() {
            if entry.reply.is_some() == entry.error.is_some() {
                return Err(GatewayError::Config(format!(
                    "transcript entry {i} (tag '{}') must set exactly one of reply/error",
                    entry.match_tag
                )));
            }
        }
        let consumed = vec![false; entries.len()];
        Ok(TranscriptProvider {
            entries,
            state: Mutex::new(TranscriptState { consumed, requests: Vec::new() }),
        })
    }

    /// Load a JSON transcript: an array of `{match, reply | error}` objects.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            GatewayError::Config(format!("cannot read transcript {}: {e}", path.display()))
        })?;
        let entries: Vec<TranscriptEntry> = serde_json::from_str(&raw).map_err(|e| {
            GatewayError::Config(format!("transcript {} does not parse: {e}", path.display()))
        })?;
        TranscriptProvider::from_entries(entries)
    }

    /// All requests seen so far, in arrival order.
    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.state.lock().unwrap().requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().consumed.iter().filter(|c| !**c).count()
    }
}

/// Load a scripted provider from a transcript file.
pub fn load_transcript(path: &Path) -> Result<TranscriptProvider, GatewayError> {
    TranscriptProvider::load(path)
}

impl ChatProvider for TranscriptProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut state = self.state.lock().unwrap();
        state.requests.push(request.clone());
        let next = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !state.consumed[*i] && e.match_tag == request.request_tag);
        match next {
            None => Err(GatewayError::TranscriptExhausted { tag: request.request_tag.clone() }),
            Some((i, entry)) => {
                state.consumed[i] = true;
                match (&entry.reply, &entry.error) {
                    (Some(reply), _) => Ok(reply.clone()),
                    (None, Some(message)) => {
                        Err(GatewayError::Transport { attempts: 1, message: message.clone() })
                    }
                    (None, None) => unreachable!("validated in from_entries"),
                }
            }
        }
    }

    fn provider_id(&self) -> &str {
        "transcript"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replies_served_in_order_per_tag() {
        let entries: Vec<TranscriptEntry> =
            (1..=5).map(|i| TranscriptEntry::reply("summarize", format!("S{i}"))).collect();
        let t = TranscriptProvider::from_entries(entries).unwrap();
        let req = ChatRequest::new("summarize", "", "x");
        for i in 1..=5 {
            assert_eq!(t.complete(&req).unwrap(), format!("S{i}"));
        }
        assert_eq!(t.remaining(), 0);
    }

    #[test]
    fn tags_consume_independent_queues() {
        let t = TranscriptProvider::from_entries(vec![
            TranscriptEntry::reply("reflect", "R1"),
            TranscriptEntry::reply("summarize", "S1"),
            TranscriptEntry::reply("reflect", "R2"),
        ])
        .unwrap();
        assert_eq!(t.complete(&ChatRequest::new("summarize", "", "x")).unwrap(), "S1");
        assert_eq!(t.complete(&ChatRequest::new("reflect", "", "x")).unwrap(), "R1");
        assert_eq!(t.complete(&ChatRequest::new("reflect", "", "x")).unwrap(), "R2");
    }

    #[test]
    fn unknown_tag_names_the_tag() {
        let t = TranscriptProvider::from_entries(vec![TranscriptEntry::reply("summarize", "S")])
            .unwrap();
        let err = t.complete(&ChatRequest::new("mystery", "", "x")).unwrap_err();
        assert!(matches!(err, GatewayError::TranscriptExhausted { ref tag } if tag == "mystery"));
    }

    #[test]
    fn entry_must_have_exactly_one_payload() {
        let bad = TranscriptEntry { match_tag: "a".into(), reply: None, error: None };
        assert!(TranscriptProvider::from_entries(vec![bad]).is_err());
        let both = TranscriptEntry {
            match_tag: "a".into(),
            reply: Some("r".into()),
            error: Some("e".into()),
        };
        assert!(TranscriptProvider::from_entries(vec![both]).is_err());
    }

    #[test]
    fn recorded_requests_round_trip_as_json() {
        let t = TranscriptProvider::from_entries(vec![TranscriptEntry::reply("summarize", "S")])
            .unwrap();
        let req = ChatRequest::new("summarize", "sys", "user").with_temperature(0.2);
        t.complete(&req).unwrap();
        let log = t.recorded_requests();
        let json = serde_json::to_string(&log).unwrap();
        let back: Vec<ChatRequest> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transcript.json");
        let entries = vec![
            TranscriptEntry::reply("prompt_init", "PROMPT-A"),
            TranscriptEntry::fail("summarize", "timeout"),
        ];
        std::fs::write(&path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
        let t = load_transcript(&path).unwrap();
        assert_eq!(t.remaining(), 2);
        assert_eq!(
            t.complete(&ChatRequest::new("prompt_init", "", "meta")).unwrap(),
            "PROMPT-A"
        );
        assert!(t.complete(&ChatRequest::new("summarize", "", "x")).is_err());
    }
}
