use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Paragraph delimiter between reasoning steps.
pub const STEP_DELIMITER: &str = "\n\n";

/// Steps of a reasoning output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub steps: Vec<String>,
    /// Rejoining with single delimiters does not reproduce the input (runs of
    /// delimiters, or a leading/trailing delimiter, were collapsed).
    pub canonicalized: bool,
}

/// Splits on `"\n\n"` and drops empty pieces.
pub fn segment(output: &str) -> Segmentation {
    let steps: Vec<String> = output.split(STEP_DELIMITER).filter(|s| !s.is_empty()).map(str::to_string).collect();
    let canonicalized = rejoin(&steps) != output;
    Segmentation { steps, canonicalized }
}

pub fn rejoin<S: AsRef<str>>(steps: &[S]) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        if i > 0 {
            out.push_str(STEP_DELIMITER);
        }
        out.push_str(s.as_ref());
    }
    out
}

/// One raw (input, output) pair with its steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningSample {
    pub id: String,
    pub input: String,
    pub output: String,
    pub steps: Vec<String>,
    pub canonicalized: bool,
}

impl ReasoningSample {
    pub fn new(id: impl Into<String>, input: impl Into<String>, output: impl Into<String>) -> Self {
        let output = output.into();
        let Segmentation { steps, canonicalized } = segment(&output);
        Self { id: id.into(), input: input.into(), output, steps, canonicalized }
    }

    /// Number of steps `K`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Deserialize, Serialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(alias = "question", alias = "problem")]
    input: String,
    #[serde(alias = "response", alias = "reasoning")]
    output: String,
}

/// Reads JSON lines of `{"id"?, "input", "output"}`; missing ids become the line number.
pub fn read_raw_samples(path: &Path) -> Result<Vec<ReasoningSample>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { location: format!("{}:{}", path.display(), i + 1), message: e.to_string() })?;
        let id = match rec.id {
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
            None => (i + 1).to_string(),
        };
        out.push(ReasoningSample::new(id, rec.input, rec.output));
    }
    Ok(out)
}

pub fn write_raw_samples(samples: &[ReasoningSample], path: &Path) -> Result<()> {
    crate::util::write_atomic(path, |w| {
        for s in samples {
            let rec = RawRecord { id: Some(serde_json::Value::String(s.id.clone())), input: s.input.clone(), output: s.output.clone() };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}
