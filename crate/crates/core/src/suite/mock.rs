//! Scripted fixture backends (`mock:<path>` endpoints).
//!
//! A fixture is a JSON list. Each element is either a rule
//! `{"role", "image_id", "prompt_contains", "reply"}` (`"*"` matches
//! anything) or a single `{"default": "..."}` fallback. The first rule that
//! matches a request wins; `prompt_contains` is a case-sensitive substring.

use std::path::Path;

use serde::Deserialize;

use super::{Backend, BackendFault, BackendReply, QueryRequest, SuiteError};
use crate::types::ModelRole;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoleMatcher {
    Any,
    Role(ModelRole),
}

impl TryFrom<String> for RoleMatcher {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if value == "*" {
            Ok(RoleMatcher::Any)
        } else {
            value.parse().map(RoleMatcher::Role)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Any,
    Text(String),
}

impl From<String> for Pattern {
    fn from(value: String) -> Self {
        if value == "*" {
            Pattern::Any
        } else {
            Pattern::Text(value)
        }
    }
}

fn any_role() -> RoleMatcher {
    RoleMatcher::Any
}

fn any_pattern() -> Pattern {
    Pattern::Any
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    #[serde(default)]
    role: Option<RawRole>,
    #[serde(default)]
    image_id: Option<String>,
    #[serde(default)]
    prompt_contains: Option<String>,
    #[serde(default)]
    reply: Option<String>,
    #[serde(default)]
    default: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(try_from = "String")]
struct RawRole(RoleMatcher);

impl TryFrom<String> for RawRole {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        RoleMatcher::try_from(value).map(RawRole)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureRule {
    pub role: RoleMatcher,
    pub image_id: Pattern,
    pub prompt_contains: Pattern,
    pub reply: String,
}

impl FixtureRule {
    pub fn new(role: RoleMatcher, image_id: &str, prompt_contains: &str, reply: &str) -> Self {
        Self {
            role,
            image_id: Pattern::from(image_id.to_string()),
            prompt_contains: Pattern::from(prompt_contains.to_string()),
            reply: reply.to_string(),
        }
    }

    fn matches(&self, request: &QueryRequest) -> bool {
        let role_ok = match &self.role {
            RoleMatcher::Any => true,
            RoleMatcher::Role(r) => *r == request.role,
        };
        let image_ok = match &self.image_id {
            Pattern::Any => true,
            Pattern::Text(id) => *id == request.image.id,
        };
        let prompt_ok = match &self.prompt_contains {
            Pattern::Any => true,
            Pattern::Text(needle) => request.prompt.contains(needle.as_str()),
        };
        role_ok && image_ok && prompt_ok
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockFixture {
    pub rules: Vec<FixtureRule>,
    pub default: Option<String>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let raw = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&raw).map_err(|(line, message)| SuiteError::Fixture {
            path: path.to_path_buf(),
            line,
            message,
        })
    }

    /// Parses fixture text; errors carry a 1-based line number.
    pub fn parse(raw: &str) -> Result<Self, (usize, String)> {
        let elements: Vec<RawElement> =
            serde_json::from_str(raw).map_err(|e| (e.line(), e.to_string()))?;
        let lines = element_lines(raw);
        let mut fixture = MockFixture::default();
        for (idx, el) in elements.into_iter().enumerate() {
            let line = lines.get(idx).copied().unwrap_or(1);
            match (el.default, el.reply) {
                (Some(_), Some(_)) => {
                    return Err((line, "element has both `default` and `reply`".into()))
                }
                (Some(default), None) => {
                    if el.role.is_some() || el.image_id.is_some() || el.prompt_contains.is_some() {
                        return Err((line, "`default` element cannot carry match fields".into()));
                    }
                    if fixture.default.is_some() {
                        return Err((line, "more than one `default` element".into()));
                    }
                    fixture.default = Some(default);
                }
                (None, Some(reply)) => fixture.rules.push(FixtureRule {
                    role: el.role.map_or_else(any_role, |r| r.0),
                    image_id: el.image_id.map_or_else(any_pattern, Pattern::from),
                    prompt_contains: el.prompt_contains.map_or_else(any_pattern, Pattern::from),
                    reply,
                }),
                (None, None) => return Err((line, "rule is missing `reply`".into())),
            }
        }
        Ok(fixture)
    }

    /// First matching rule's reply, else the default.
    pub fn answer(&self, request: &QueryRequest) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.reply.as_str())
            .or(self.default.as_deref())
    }
}

/// Line on which each top-level array element opens.
fn element_lines(raw: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let mut line = 1;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for ch in raw.chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '[' | '{' => {
                if depth == 1 {
                    lines.push(line);
                }
                depth += 1;
            }
            ']' | '}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    lines
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    fixture: MockFixture,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &QueryRequest) -> Result<BackendReply, BackendFault> {
        self.fixture
            .answer(request)
            .map(BackendReply::text)
            .ok_or(BackendFault::NoRuleMatched)
    }

    fn measures_latency(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{BackendDescriptor, SuiteRegistry};
    use crate::types::{ImageOrigin, ImageRef, TaskKind};
    use std::io::Write;

    fn req(role: ModelRole, image: &str, prompt: &str) -> QueryRequest {
        QueryRequest::new(
            role,
            TaskKind::Vqa,
            prompt,
            ImageRef::new(image, Vec::new(), ImageOrigin::Clean),
        )
    }

    #[test]
    fn scripted_detector_passthrough() {
        let fx = MockFixture::parse(
            r#"[{"role": "object_detector", "image_id": "img_7", "prompt_contains": "*", "reply": "person, bicycle, dog"}]"#,
        )
        .unwrap();
        let backend = MockBackend::new(fx);
        let reply = backend
            .generate(&req(ModelRole::ObjectDetector, "img_7", "anything"))
            .unwrap();
        assert_eq!(reply.text, "person, bicycle, dog");
    }

    #[test]
    fn wildcard_image_with_prompt_substring() {
        let fx = MockFixture::parse(
            r#"[{"role": "plugin_lvlm", "image_id": "*", "prompt_contains": "Describe", "reply": "A dog on grass."}]"#,
        )
        .unwrap();
        assert_eq!(
            fx.answer(&req(ModelRole::PluginLvlm, "x", "Describe the image in detail.")),
            Some("A dog on grass.")
        );
        assert_eq!(fx.answer(&req(ModelRole::PluginLvlm, "y", "Is there a cat?")), None);
    }

    #[test]
    fn first_listed_rule_wins() {
        let fx = MockFixture::parse(
            r#"[
                {"role": "*", "image_id": "*", "prompt_contains": "dog", "reply": "first"},
                {"role": "*", "image_id": "*", "prompt_contains": "*", "reply": "second"}
            ]"#,
        )
        .unwrap();
        assert_eq!(fx.answer(&req(ModelRole::AuxLvlmA, "i", "a dog?")), Some("first"));
        assert_eq!(fx.answer(&req(ModelRole::AuxLvlmA, "i", "a cat?")), Some("second"));
    }

    #[test]
    fn default_used_when_nothing_matches() {
        let fx = MockFixture::parse(
            r#"[{"role": "vlp_vqa", "image_id": "*", "prompt_contains": "*", "reply": "yes"}, {"default": "no"}]"#,
        )
        .unwrap();
        assert_eq!(fx.answer(&req(ModelRole::AuxLvlmB, "i", "p")), Some("no"));
    }

    #[test]
    fn no_rule_matched_is_hard_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(
            file,
            r#"[{{"role": "plugin_lvlm", "image_id": "a", "prompt_contains": "*", "reply": "x"}}]"#
        )
        .unwrap();
        let mut reg = SuiteRegistry::new();
        reg.register(BackendDescriptor::new(
            ModelRole::PluginLvlm,
            format!("mock:{}", file.path().display()),
            "mock",
        ))
        .unwrap();
        let err = reg
            .query_model(&req(ModelRole::PluginLvlm, "b", "p"), 1)
            .unwrap_err();
        assert!(err.to_string().starts_with("no rule matched"), "{err}");
    }

    #[test]
    fn malformed_fixture_reports_line() {
        let (line, msg) = MockFixture::parse("[\n  {\"reply\": \"a\"},\n  {\"role\": \"dragon\", \"reply\": \"b\"}\n]")
            .unwrap_err();
        assert_eq!(line, 3);
        assert!(msg.contains("dragon"), "{msg}");

        let (line, msg) =
            MockFixture::parse("[\n  {\"reply\": \"a\"},\n\n  {\"image_id\": \"b\"}\n]").unwrap_err();
        assert_eq!(line, 4);
        assert!(msg.contains("reply"));

        let (line, _) = MockFixture::parse("[\n {\"reply\": \"a\"\n").unwrap_err();
        assert_eq!(line, 3);
    }

    #[test]
    fn escaped_quotes_do_not_confuse_line_scan() {
        let raw = "[\n {\"reply\": \"say \\\"{[\\\"\"},\n {\"bogus\": 1}\n]";
        let (line, _) = MockFixture::parse(raw).unwrap_err();
        assert_eq!(line, 3);
    }
}
