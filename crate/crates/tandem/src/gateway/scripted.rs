//! Deterministic scripted backend driven by a fixture file.
//!
//! A fixture is a JSON array or line-delimited JSON of entries:
//!
//! ```json
//! {"tag": "code", "match": "Plan B", "text": "```python\n...\n```",
//!  "input_tokens": 120, "output_tokens": 40}
//! {"tag": "embed", "match": "greedy", "embedding": [0.1, 0.9]}
//! ```
//!
//! Chat entries are consumed at most once, in file order per tag; an entry
//! with `match` only fires when the rendered prompt contains the matcher
//! substring. Embedding entries are keyed, reusable lookups, so identical
//! texts always embed identically. When a fixture defines no embedding
//! entries at all, vectors are synthesized from a stable hash of each text.
//! Omitted token fields default to whitespace token counts.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    whitespace_tokens, Backend, BackendSession, ChatRequest, ChatResponse, EmbedResponse,
    EmbeddingVector, GatewayError,
};

/// Dimension of synthesized embeddings.
pub const SYNTHETIC_EMBED_DIM: usize = 8;

/// One fixture record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub tag: String,
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl FixtureEntry {
    /// A plain sequential chat entry.
    pub fn chat(tag: &str, text: &str) -> Self {
        Self {
            tag: tag.into(),
            matcher: None,
            text: text.into(),
            input_tokens: None,
            output_tokens: None,
            embedding: None,
        }
    }

    /// A chat entry gated on the prompt containing `matcher`.
    pub fn matched(tag: &str, matcher: &str, text: &str) -> Self {
        Self {
            matcher: Some(matcher.into()),
            ..Self::chat(tag, text)
        }
    }

    /// An embedding entry for texts containing `matcher`.
    pub fn embedding(matcher: &str, values: Vec<f64>) -> Self {
        Self {
            tag: super::EMBED_TAG.into(),
            matcher: Some(matcher.into()),
            text: String::new(),
            input_tokens: None,
            output_tokens: None,
            embedding: Some(values),
        }
    }
}

/// Parses fixture bytes; accepts a JSON array or one JSON object per line.
pub fn parse_fixture(bytes: &[u8]) -> Result<Vec<FixtureEntry>, GatewayError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| GatewayError::FixtureParse(format!("fixture is not UTF-8: {e}")))?;
    let entries: Vec<FixtureEntry> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| GatewayError::FixtureParse(e.to_string()))?
    } else {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::FixtureParse(format!("line {}: {e}", idx + 1)))?;
            entries.push(entry);
        }
        entries
    };
    validate_entries(&entries)?;
    Ok(entries)
}

fn validate_entries(entries: &[FixtureEntry]) -> Result<(), GatewayError> {
    let mut embed_dim = None;
    for entry in entries {
        if let Some(values) = &entry.embedding {
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(GatewayError::FixtureParse(
                    "embedding entries must be non-empty and finite".into(),
                ));
            }
            match embed_dim {
                None => embed_dim = Some(values.len()),
                Some(dim) if dim != values.len() => {
                    return Err(GatewayError::FixtureParse(format!(
                        "embedding dimensions differ: {dim} vs {}",
                        values.len()
                    )));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// A backend that replays canned responses. Each session consumes the
/// fixture from the start, so concurrent sessions never interleave.
pub struct ScriptedBackend {
    entries: Arc<Vec<FixtureEntry>>,
}

impl ScriptedBackend {
    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let bytes = fs::read(path)
            .map_err(|e| GatewayError::FixtureParse(format!("{}: {e}", path.display())))?;
        Ok(Self::from_entries(parse_fixture(&bytes)?))
    }

    pub fn from_entries(entries: Vec<FixtureEntry>) -> Self {
        Self {
            entries: Arc::new(entries),
        }
    }
}

impl Backend for ScriptedBackend {
    fn start_session(&self) -> Box<dyn BackendSession> {
        Box::new(ScriptedSession {
            consumed: vec![false; self.entries.len()],
            entries: Arc::clone(&self.entries),
        })
    }
}

struct ScriptedSession {
    entries: Arc<Vec<FixtureEntry>>,
    consumed: Vec<bool>,
}

impl BackendSession for ScriptedSession {
    fn complete(&mut self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let tag = request.tag.as_str();
        let prompt = request.rendered_text();
        let hit = self.entries.iter().enumerate().find(|(i, entry)| {
            !self.consumed[*i]
                && entry.tag == tag
                && entry.embedding.is_none()
                && entry
                    .matcher
                    .as_ref()
                    .is_none_or(|needle| prompt.contains(needle.as_str()))
        });
        let (index, entry) = match hit {
            Some(found) => found,
            None => {
                return Err(GatewayError::FixtureMiss {
                    tag: tag.to_string(),
                })
            }
        };
        self.consumed[index] = true;
        Ok(ChatResponse {
            text: entry.text.clone(),
            input_tokens: entry
                .input_tokens
                .unwrap_or_else(|| whitespace_tokens(&prompt)),
            output_tokens: entry
                .output_tokens
                .unwrap_or_else(|| whitespace_tokens(&entry.text)),
        })
    }

    fn embed(&mut self, texts: &[String]) -> Result<EmbedResponse, GatewayError> {
        let keyed: Vec<&FixtureEntry> = self
            .entries
            .iter()
            .filter(|e| e.tag == super::EMBED_TAG && e.embedding.is_some())
            .collect();
        let mut vectors = Vec::with_capacity(texts.len());
        for text in texts {
            let vector = if keyed.is_empty() {
                synthetic_embedding(text, SYNTHETIC_EMBED_DIM)
            } else {
                let entry = keyed
                    .iter()
                    .find(|e| match &e.matcher {
                        Some(needle) => text.contains(needle.as_str()),
                        None => e.text.is_empty() || *text == e.text,
                    })
                    .ok_or_else(|| GatewayError::FixtureMiss {
                        tag: super::EMBED_TAG.to_string(),
                    })?;
                EmbeddingVector {
                    values: entry.embedding.clone().expect("keyed entries have vectors"),
                }
            };
            vectors.push(vector);
        }
        let input_tokens = texts.iter().map(|t| whitespace_tokens(t)).sum();
        Ok(EmbedResponse {
            vectors,
            input_tokens,
        })
    }
}

/// Derives a stable pseudo-embedding from the whitespace-normalized text.
/// Equal texts map to equal vectors; entries lie in [0, 1).
pub fn synthetic_embedding(text: &str, dimension: usize) -> EmbeddingVector {
    let normalized: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut values = Vec::with_capacity(dimension);
    for lane in 0..dimension {
        let mut hasher = Sha256::new();
        hasher.update(normalized.as_bytes());
        hasher.update([lane as u8]);
        let digest = hasher.finalize();
        let word = u64::from_be_bytes(digest[..8].try_into().expect("digest >= 8 bytes"));
        values.push(word as f64 / u64::MAX as f64);
    }
    EmbeddingVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, Message, RetryConfig, Role, StepTag};

    fn request(tag: StepTag, content: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![Message {
                role: Role::User,
                content: content.into(),
            }],
            temperature: 0.0,
            max_tokens: 64,
            tag,
        }
    }

    fn gateway(entries: Vec<FixtureEntry>) -> crate::gateway::SessionGateway {
        Gateway::new(std::sync::Arc::new(ScriptedBackend::from_entries(entries)))
            .with_retry(RetryConfig::immediate(3))
            .session()
    }

    #[test]
    fn single_scripted_call_bumps_ledger() {
        let mut gw = gateway(vec![FixtureEntry::chat("code", "print(1)")]);
        assert_eq!(gw.ledger().snapshot().api_calls, 0);
        let response = gw.complete(&request(StepTag::Code, "write code")).unwrap();
        assert_eq!(response.text, "print(1)");
        assert_eq!(gw.ledger().snapshot().api_calls, 1);
    }

    #[test]
    fn sequential_entries_consume_in_order_and_exhaust() {
        let mut gw = gateway(vec![
            FixtureEntry::chat("repair", "first"),
            FixtureEntry::chat("repair", "second"),
        ]);
        assert_eq!(
            gw.complete(&request(StepTag::Repair, "x")).unwrap().text,
            "first"
        );
        assert_eq!(
            gw.complete(&request(StepTag::Repair, "x")).unwrap().text,
            "second"
        );
        let err = gw.complete(&request(StepTag::Repair, "x")).unwrap_err();
        match err {
            GatewayError::FixtureMiss { tag } => assert_eq!(tag, "repair"),
            other => panic!("expected FixtureMiss, got {other:?}"),
        }
    }

    #[test]
    fn matcher_entry_fires_on_prompt_substring() {
        let mut gw = gateway(vec![
            FixtureEntry::matched("select", "Plan B", "I pick 2"),
            FixtureEntry::chat("select", "I pick 1"),
        ]);
        let hit = gw
            .complete(&request(
                StepTag::Select,
                "candidates:\n1. Plan A\n2. Plan B",
            ))
            .unwrap();
        assert_eq!(hit.text, "I pick 2");
        let fallback = gw
            .complete(&request(StepTag::Select, "only Plan C here"))
            .unwrap();
        assert_eq!(fallback.text, "I pick 1");
    }

    #[test]
    fn fresh_session_restarts_consumption() {
        let backend = std::sync::Arc::new(ScriptedBackend::from_entries(vec![FixtureEntry::chat(
            "code", "only",
        )]));
        let gateway = Gateway::new(backend).with_retry(RetryConfig::immediate(1));
        for _ in 0..3 {
            let mut session = gateway.session();
            let got = session.complete(&request(StepTag::Code, "go")).unwrap();
            assert_eq!(got.text, "only");
        }
    }

    #[test]
    fn synthetic_embeddings_are_deterministic_and_uniform() {
        let mut gw = gateway(vec![]);
        let texts: Vec<String> = (0..15).map(|i| format!("plan {i}")).collect();
        let vectors = gw.embed(&texts).unwrap();
        assert_eq!(vectors.len(), 15);
        assert!(vectors.iter().all(|v| v.dimension() == SYNTHETIC_EMBED_DIM));
        let again = gw.embed(&texts).unwrap();
        assert_eq!(vectors, again);
    }

    #[test]
    fn identical_texts_embed_identically() {
        let mut gw = gateway(vec![]);
        let texts = vec!["same plan".to_string(), "same plan".to_string()];
        let vectors = gw.embed(&texts).unwrap();
        assert_eq!(vectors[0], vectors[1]);
    }

    #[test]
    fn keyed_embeddings_hit_and_miss() {
        let entries = vec![
            FixtureEntry::embedding("greedy", vec![0.0, 1.0]),
            FixtureEntry::embedding("brute", vec![1.0, 0.0]),
        ];
        let mut gw = gateway(entries.clone());
        let vectors = gw
            .embed(&["use a greedy scan".into(), "brute force it".into()])
            .unwrap();
        assert_eq!(vectors[0].values, vec![0.0, 1.0]);
        assert_eq!(vectors[1].values, vec![1.0, 0.0]);

        let mut gw = gateway(entries);
        let err = gw.embed(&["dynamic programming".into()]).unwrap_err();
        assert!(matches!(err, GatewayError::FixtureMiss { tag } if tag == "embed"));
    }

    #[test]
    fn token_usage_defaults_to_whitespace_counts() {
        let mut gw = gateway(vec![FixtureEntry::chat("reflect", "three word answer")]);
        let response = gw
            .complete(&request(StepTag::Reflect, "one two three four"))
            .unwrap();
        assert_eq!(response.input_tokens, 4);
        assert_eq!(response.output_tokens, 3);
        let snap = gw.ledger().snapshot();
        assert_eq!(snap.per_tag["reflect"].input_tokens, 4);
        assert_eq!(snap.per_tag["reflect"].output_tokens, 3);
    }

    #[test]
    fn fixture_parses_array_and_jsonl() {
        let array = br#"[{"tag":"code","text":"a"},{"tag":"embed","match":"x","embedding":[0.5]}]"#;
        assert_eq!(parse_fixture(array).unwrap().len(), 2);
        let jsonl = b"{\"tag\":\"code\",\"text\":\"a\"}\n\n{\"tag\":\"plan\",\"text\":\"b\"}\n";
        assert_eq!(parse_fixture(jsonl).unwrap().len(), 2);
    }

    #[test]
    fn fixture_rejects_bad_entries() {
        assert!(parse_fixture(b"{\"tag\":").is_err());
        assert!(parse_fixture(br#"{"tag":"embed","embedding":[]}"#).is_err());
        let nan = br#"{"tag":"embed","embedding":[null]}"#;
        assert!(parse_fixture(nan).is_err());
        let mixed =
            b"{\"tag\":\"embed\",\"embedding\":[0.1]}\n{\"tag\":\"embed\",\"embedding\":[0.1,0.2]}";
        assert!(parse_fixture(mixed).is_err());
    }
}
