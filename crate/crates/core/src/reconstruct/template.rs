use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Level, Result};

pub const INTRA_TRIGGER: &str = "<INTRA>";
pub const INTER_TRIGGER: &str = "<INTER>";

/// Literal trigger string of a trainable level.
pub fn trigger(level: Level) -> Result<&'static str> {
    match level {
        Level::Intra => Ok(INTRA_TRIGGER),
        Level::Inter => Ok(INTER_TRIGGER),
        Level::Inst => Err(Error::InvalidInput("instance level has no reconstruction trigger".into())),
    }
}

/// Diagnose-then-correct block: prompt `p`, diagnosis `d`, correction `c`.
///
/// `d` and `c` may contain placeholders filled per sample:
/// `{span}`, `{error_type}`, `{theme}`, `{paragraphs}`, `{original}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub prompt: String,
    pub diagnosis: String,
    pub correction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub intra: Template,
    pub inter: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            intra: Template {
                prompt: "[FAILURE_INTRA] A key reasoning error surfaced in the step just written; locate it, explain it and repair it before going on.".into(),
                diagnosis: "- **error span**: \"{span}\"\n- **analysis**: [schematic placeholder] the quoted span carries an injected error of type {error_type}.".into(),
                correction: "[schematic placeholder] Redoing that step without the error: {original}".into(),
            },
            inter: Template {
                prompt: "[FAILURE_INTER] I'm stuck in an inter-step loop and the last few paragraphs keep circling the same checks; summarize them and switch to a different route.".into(),
                diagnosis: "- **past attempts summary:** [schematic placeholder] {paragraphs} paragraphs of {theme} that restate one constraint.\n- **problem-grounded analysis:** [schematic placeholder] none of them changes what is known.".into(),
                correction: "[schematic placeholder] Pivot back to the main line of work: {original}".into(),
            },
        }
    }
}

impl TemplateSet {
    pub fn get(&self, level: Level) -> Result<&Template> {
        match level {
            Level::Intra => Ok(&self.intra),
            Level::Inter => Ok(&self.inter),
            Level::Inst => Err(Error::InvalidInput("instance level has no template".into())),
        }
    }

    /// Every component must be present and non-blank.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("intra", &self.intra), ("inter", &self.inter)] {
            for (part, text) in [("prompt", &t.prompt), ("diagnosis", &t.diagnosis), ("correction", &t.correction)] {
                if text.trim().is_empty() {
                    return Err(Error::Config(format!("template {name}.{part} is missing")));
                }
                if text.contains(INTRA_TRIGGER) || text.contains(INTER_TRIGGER) {
                    return Err(Error::Config(format!("template {name}.{part} contains a trigger string")));
                }
            }
        }
        Ok(())
    }

    /// Reads a JSON template set and validates it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let set: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })?;
        set.validate()?;
        Ok(set)
    }
}

/// Values substituted into `d` and `c`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fill<'a> {
    pub span: &'a str,
    pub error_type: &'a str,
    pub theme: &'a str,
    pub paragraphs: usize,
    pub original: &'a str,
}

/// Single pass over `{name}` placeholders so substituted text is never re-scanned.
pub fn render(text: &str, fill: &Fill) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let value = after.find('}').and_then(|close| {
            let v = match &after[..close] {
                "span" => fill.span.to_string(),
                "error_type" => fill.error_type.to_string(),
                "theme" => fill.theme.to_string(),
                "paragraphs" => fill.paragraphs.to_string(),
                "original" => fill.original.to_string(),
                _ => return None,
            };
            Some((v, close))
        });
        match value {
            Some((v, close)) => {
                out.push_str(&v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
