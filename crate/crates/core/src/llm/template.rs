use serde::{Deserialize, Serialize};

use super::LlmError;

/// Identifies which shipped prompt a request was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Extract,
    Match,
    Plan,
    Evidence,
    Refine,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::Extract,
        TemplateId::Match,
        TemplateId::Plan,
        TemplateId::Evidence,
        TemplateId::Refine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Extract => "extract",
            TemplateId::Match => "match",
            TemplateId::Plan => "plan",
            TemplateId::Evidence => "evidence",
            TemplateId::Refine => "refine",
        }
    }

    fn source(self) -> &'static str {
        match self {
            TemplateId::Extract => include_str!("../../templates/extract.txt"),
            TemplateId::Match => include_str!("../../templates/match.txt"),
            TemplateId::Plan => include_str!("../../templates/plan.txt"),
            TemplateId::Evidence => include_str!("../../templates/evidence.txt"),
            TemplateId::Refine => include_str!("../../templates/refine.txt"),
        }
    }
}

/// A versioned prompt with `{{name}}` placeholders.
///
/// The first line of every template file is a header of the form
/// `# template: <id> v<version> ...`.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub version: u32,
    pub header: String,
    body: String,
}

impl PromptTemplate {
    pub fn shipped(id: TemplateId) -> Self {
        Self::parse(id, id.source()).expect("shipped templates carry a valid header")
    }

    pub fn parse(id: TemplateId, source: &str) -> Result<Self, LlmError> {
        let (header, body) = source
            .split_once('\n')
            .ok_or_else(|| LlmError::Template(format!("{}: missing header line", id.as_str())))?;
        let version = header
            .strip_prefix("# template: ")
            .and_then(|rest| {
                let mut parts = rest.split_whitespace();
                let name = parts.next()?;
                let ver = parts.next()?.strip_prefix('v')?.parse().ok()?;
                (name == id.as_str()).then_some(ver)
            })
            .ok_or_else(|| LlmError::Template(format!("{}: bad header {header:?}", id.as_str())))?;
        Ok(Self {
            id,
            version,
            header: header.to_string(),
            body: body.to_string(),
        })
    }

    /// Substitutes every placeholder. Unknown or unfilled placeholders are
    /// errors.
    pub fn fill(&self, vars: &[(&str, &str)]) -> Result<String, LlmError> {
        let mut out = String::with_capacity(self.body.len());
        let mut rest = self.body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| LlmError::Template(format!("{}: unclosed placeholder", self.id.as_str())))?;
            let name = &after[..end];
            let value = vars
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| LlmError::Template(format!("{}: no value for {{{{{name}}}}}", self.id.as_str())))?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
