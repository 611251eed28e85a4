use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{approx_tokens, Backend, CompletionRequest, CompletionResponse, GatewayError, Purpose};

/// Responses for one purpose: a single text for every ordinal, or a list
/// indexed by ordinal (cycling when the ordinal runs past the end).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TagFixture {
    One(String),
    Many(Vec<String>),
}

impl TagFixture {
    fn pick(&self, ordinal: u32) -> Option<&str> {
        match self {
            TagFixture::One(s) => Some(s),
            TagFixture::Many(v) if v.is_empty() => None,
            TagFixture::Many(v) => Some(&v[ordinal as usize % v.len()]),
        }
    }
}

/// On-disk fixture map: `{"by_fingerprint": {hex: text}, "by_tag": {tag: text | [text]}}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureFile {
    pub by_fingerprint: BTreeMap<String, String>,
    pub by_tag: BTreeMap<Purpose, TagFixture>,
}

/// Scripted backend. A response is a pure function of the request's
/// fingerprint, tag and ordinal: exact fingerprint first, then the tag list.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: FixtureFile,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixtures(fixtures: FixtureFile) -> Self {
        MockBackend { fixtures }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        let fixtures = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        Ok(MockBackend { fixtures })
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>, text: impl Into<String>) -> Self {
        self.fixtures.by_fingerprint.insert(fingerprint.into(), text.into());
        self
    }

    pub fn with_tag(mut self, tag: Purpose, text: impl Into<String>) -> Self {
        self.fixtures.by_tag.insert(tag, TagFixture::One(text.into()));
        self
    }

    pub fn with_tag_list<S: Into<String>>(mut self, tag: Purpose, texts: impl IntoIterator<Item = S>) -> Self {
        self.fixtures
            .by_tag
            .insert(tag, TagFixture::Many(texts.into_iter().map(Into::into).collect()));
        self
    }

    pub fn fixtures(&self) -> &FixtureFile {
        &self.fixtures
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let fp = request.fingerprint();
        let text = self
            .fixtures
            .by_fingerprint
            .get(&fp.0)
            .map(String::as_str)
            .or_else(|| self.fixtures.by_tag.get(&request.tag)?.pick(request.ordinal))
            .ok_or_else(|| GatewayError::NoFixture {
                tag: request.tag,
                ordinal: request.ordinal,
                fingerprint: fp.0.clone(),
            })?;
        Ok(CompletionResponse {
            text: text.to_string(),
            prompt_tokens: approx_tokens(&request.prompt_text()),
            completion_tokens: approx_tokens(text),
            backend: "mock".into(),
        })
    }

    fn name(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(tag: Purpose, ordinal: u32, text: &str) -> CompletionRequest {
        let mut r = CompletionRequest::new("m", tag, vec![ChatMessage::user(text)]);
        r.ordinal = ordinal;
        r
    }

    #[test]
    fn fingerprint_fixture_wins() {
        let r = req(Purpose::Answer, 0, "capital of Japan?");
        let mock = MockBackend::new()
            .with_fingerprint(r.fingerprint().0, "The capital of Japan is Tokyo.")
            .with_tag(Purpose::Answer, "fallback");
        assert_eq!(mock.complete(&r).unwrap().text, "The capital of Japan is Tokyo.");
        assert_eq!(mock.complete(&req(Purpose::Answer, 0, "other")).unwrap().text, "fallback");
    }

    #[test]
    fn tag_lists_index_by_ordinal() {
        let mock = MockBackend::new().with_tag_list(Purpose::Judge, ["a", "b", "c"]);
        let got: Vec<_> = (0..5).map(|i| mock.complete(&req(Purpose::Judge, i, "x")).unwrap().text).collect();
        assert_eq!(got, ["a", "b", "c", "a", "b"]);
    }

    #[test]
    fn unknown_request_has_no_fixture() {
        let mock = MockBackend::new();
        assert!(matches!(
            mock.complete(&req(Purpose::Answer, 3, "x")),
            Err(GatewayError::NoFixture { ordinal: 3, .. })
        ));
        let empty = MockBackend::new().with_tag_list(Purpose::Answer, Vec::<String>::new());
        assert!(empty.complete(&req(Purpose::Answer, 0, "x")).is_err());
    }

    #[test]
    fn fixture_file_json() {
        let json = r#"{"by_tag": {"judge": ["Score: 8", "Score: 3"], "answer": "lion"}}"#;
        let f: FixtureFile = serde_json::from_str(json).unwrap();
        let mock = MockBackend::from_fixtures(f);
        assert_eq!(mock.complete(&req(Purpose::Judge, 1, "x")).unwrap().text, "Score: 3");
        assert_eq!(mock.complete(&req(Purpose::Answer, 7, "x")).unwrap().text, "lion");
    }
}
