use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sample::{ReasoningSample, STEP_DELIMITER};
use super::template::{self, trigger, Fill, Template, TemplateSet};
use super::Rewrite;
use crate::{Error, Level, Result};

/// Separator between the trigger and `p`, and between `p` and `d`.
pub const BLOCK_LINE: &str = "\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prefix,
    Rewritten,
    Trigger,
    Prompt,
    Diagnosis,
    Correction,
    Suffix,
}

/// A segment of the output, as a half-open range of character (Unicode scalar) offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub role: Role,
    pub start: usize,
    pub end: usize,
}

/// `⟨π_<j, π̃_j, trigger, p, d, c, π_>j⟩` for one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconstructedSample {
    pub id: String,
    pub variant: usize,
    pub level: Level,
    /// 1-based perturbed step.
    pub j: usize,
    pub input: String,
    pub prefix: Vec<String>,
    pub rewritten: String,
    /// Rendered `p`, `d`, `c`.
    pub block: Template,
    pub suffix: Vec<String>,
    pub canonicalized: bool,
    /// Rewriter mode and the perturbation it applied.
    pub rewriter: String,
}

fn separator(prev: Role, next: Role) -> &'static str {
    match (prev, next) {
        (Role::Trigger, Role::Prompt) | (Role::Prompt, Role::Diagnosis) => BLOCK_LINE,
        _ => STEP_DELIMITER,
    }
}

impl ReconstructedSample {
    pub fn trigger(&self) -> &'static str {
        trigger(self.level).expect("reconstructed samples are intra or inter")
    }

    fn parts(&self) -> Vec<(Role, &str)> {
        let mut parts: Vec<(Role, &str)> = self.prefix.iter().map(|s| (Role::Prefix, s.as_str())).collect();
        parts.push((Role::Rewritten, &self.rewritten));
        parts.push((Role::Trigger, self.trigger()));
        parts.push((Role::Prompt, &self.block.prompt));
        parts.push((Role::Diagnosis, &self.block.diagnosis));
        parts.push((Role::Correction, &self.block.correction));
        parts.extend(self.suffix.iter().map(|s| (Role::Suffix, s.as_str())));
        parts
    }

    /// Output text and its segments.
    pub fn render(&self) -> (String, Vec<Segment>) {
        let mut out = String::new();
        let mut chars = 0;
        let mut segments = Vec::new();
        let mut prev: Option<Role> = None;
        for (role, text) in self.parts() {
            if let Some(p) = prev {
                let sep = separator(p, role);
                out.push_str(sep);
                chars += sep.chars().count();
            }
            let n = text.chars().count();
            segments.push(Segment { role, start: chars, end: chars + n });
            out.push_str(text);
            chars += n;
            prev = Some(role);
        }
        (out, segments)
    }

    pub fn output(&self) -> String {
        self.render().0
    }

    /// Trained character ranges of the output: everything but the trigger.
    /// The input is never trained on.
    pub fn mask(&self) -> Vec<Range<usize>> {
        let (out, segments) = self.render();
        let total = out.chars().count();
        let t = segments.iter().find(|s| s.role == Role::Trigger).expect("trigger segment");
        [0..t.start, t.end..total].into_iter().filter(|r| !r.is_empty()).collect()
    }

    pub fn to_record(&self) -> CorpusRecord {
        let (output, segments) = self.render();
        CorpusRecord {
            id: self.id.clone(),
            variant: self.variant,
            level: self.level,
            j: self.j,
            input: self.input.clone(),
            output,
            segments,
            mask: self.mask().into_iter().map(|r| [r.start, r.end]).collect(),
            canonicalized: self.canonicalized,
            rewriter: self.rewriter.clone(),
        }
    }
}

/// One corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub variant: usize,
    pub level: Level,
    pub j: usize,
    pub input: String,
    pub output: String,
    pub segments: Vec<Segment>,
    /// Trained `[start, end)` character ranges of `output`.
    pub mask: Vec<[usize; 2]>,
    pub canonicalized: bool,
    pub rewriter: String,
}

/// Inserts the rewritten step, trigger and rendered block at step `j`.
pub fn assemble(
    sample: &ReasoningSample,
    variant: usize,
    j: usize,
    level: Level,
    rewrite: &Rewrite,
    rewriter: &str,
    templates: &TemplateSet,
) -> Result<ReconstructedSample> {
    let trig = trigger(level)?;
    if j == 0 || j > sample.len() {
        return Err(Error::InvalidInput(format!("step {j} outside 1..={}", sample.len())));
    }
    let original = &sample.steps[j - 1];
    if rewrite.text.trim().is_empty() || rewrite.text == *original {
        return Err(Error::Rewrite("rewritten step is empty or unchanged".into()));
    }
    let t = templates.get(level)?;
    for (part, text) in [("prompt", &t.prompt), ("diagnosis", &t.diagnosis), ("correction", &t.correction)] {
        if text.trim().is_empty() {
            return Err(Error::Config(format!("template {level}.{part} is missing")));
        }
    }
    let theme = rewrite.theme.map_or("", |t| t.as_str());
    let fill = Fill { span: &rewrite.span, error_type: &rewrite.error_type, theme, paragraphs: rewrite.paragraphs, original };
    let block = Template {
        prompt: t.prompt.clone(),
        diagnosis: template::render(&t.diagnosis, &fill),
        correction: template::render(&t.correction, &fill),
    };
    let out = ReconstructedSample {
        id: sample.id.clone(),
        variant,
        level,
        j,
        input: sample.input.clone(),
        prefix: sample.steps[..j - 1].to_vec(),
        rewritten: rewrite.text.clone(),
        block,
        suffix: sample.steps[j..].to_vec(),
        canonicalized: sample.canonicalized,
        rewriter: format!("{rewriter}:{}", rewrite.error_type),
    };
    if out.output().matches(trig).count() != 1 || [template::INTRA_TRIGGER, template::INTER_TRIGGER].iter().any(|t| *t != trig && out.output().contains(t)) {
        return Err(Error::Rewrite("trigger string collides with sample text".into()));
    }
    Ok(out)
}

fn grammar_error(id: &str, message: impl Into<String>) -> Error {
    Error::Parse { location: format!("record {id}"), message: message.into() }
}

/// Rebuilds a sample from a record and checks the layout grammar:
/// `prefix* rewritten trigger prompt diagnosis correction suffix*`, contiguous
/// ranges joined by the expected separators, a single trigger occurrence and a
/// mask that covers everything but the trigger.
pub fn parse_record(rec: &CorpusRecord) -> Result<ReconstructedSample> {
    let id = rec.id.as_str();
    let trig = trigger(rec.level).map_err(|e| grammar_error(id, e.to_string()))?;
    let chars: Vec<char> = rec.output.chars().collect();
    let text = |s: &Segment| -> Result<String> {
        if s.start > s.end || s.end > chars.len() {
            return Err(grammar_error(id, format!("segment {}..{} outside output", s.start, s.end)));
        }
        Ok(chars[s.start..s.end].iter().collect())
    };

    let roles: Vec<Role> = rec.segments.iter().map(|s| s.role).collect();
    let prefix_len = roles.iter().take_while(|r| **r == Role::Prefix).count();
    let core = [Role::Rewritten, Role::Trigger, Role::Prompt, Role::Diagnosis, Role::Correction];
    if roles.len() < prefix_len + core.len()
        || roles[prefix_len..prefix_len + core.len()] != core
        || roles[prefix_len + core.len()..].iter().any(|r| *r != Role::Suffix)
    {
        return Err(grammar_error(id, format!("segment roles out of order: {roles:?}")));
    }
    if rec.j != prefix_len + 1 {
        return Err(grammar_error(id, format!("j = {} but {prefix_len} prefix steps", rec.j)));
    }
    let mut pos = 0;
    for (i, s) in rec.segments.iter().enumerate() {
        if i > 0 {
            let sep: Vec<char> = separator(rec.segments[i - 1].role, s.role).chars().collect();
            let got: String = chars.get(pos..s.start.max(pos)).map(|c| c.iter().collect()).unwrap_or_default();
            if s.start != pos + sep.len() || got.chars().ne(sep.iter().copied()) {
                return Err(grammar_error(id, format!("bad separator before segment {i}")));
            }
        } else if s.start != 0 {
            return Err(grammar_error(id, "output does not start with a segment"));
        }
        text(s)?;
        pos = s.end;
    }
    if pos != chars.len() {
        return Err(grammar_error(id, "trailing text after the last segment"));
    }
    let seg_text = |i: usize| text(&rec.segments[i]);
    if seg_text(prefix_len + 1)? != trig {
        return Err(grammar_error(id, "trigger segment does not hold the level's trigger"));
    }
    if rec.output.matches(trig).count() != 1 {
        return Err(grammar_error(id, "trigger must occur exactly once"));
    }
    let sample = ReconstructedSample {
        id: rec.id.clone(),
        variant: rec.variant,
        level: rec.level,
        j: rec.j,
        input: rec.input.clone(),
        prefix: (0..prefix_len).map(seg_text).collect::<Result<_>>()?,
        rewritten: seg_text(prefix_len)?,
        block: Template {
            prompt: seg_text(prefix_len + 2)?,
            diagnosis: seg_text(prefix_len + 3)?,
            correction: seg_text(prefix_len + 4)?,
        },
        suffix: (prefix_len + core.len()..rec.segments.len()).map(seg_text).collect::<Result<_>>()?,
        canonicalized: rec.canonicalized,
        rewriter: rec.rewriter.clone(),
    };
    if sample.to_record() != *rec {
        return Err(grammar_error(id, "mask or segments disagree with the canonical layout"));
    }
    Ok(sample)
}

/// Why a raw sample or variant produced no output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub id: String,
    pub variant: usize,
    pub level: Option<Level>,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub raw_samples: usize,
    pub emitted: BTreeMap<Level, usize>,
    pub skipped: BTreeMap<String, usize>,
    pub skips: Vec<SkipEntry>,
    pub canonicalized: usize,
    pub rewriter: String,
    pub deterministic: bool,
}

impl ReconstructReport {
    pub fn skip(&mut self, entry: SkipEntry) {
        *self.skipped.entry(entry.reason.clone()).or_default() += 1;
        self.skips.push(entry);
    }

    pub fn total_emitted(&self) -> usize {
        self.emitted.values().sum()
    }
}

/// `<stem>.report.json` next to the corpus.
pub fn report_path(corpus: &Path) -> PathBuf {
    let stem = corpus.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    corpus.with_file_name(format!("{stem}.report.json"))
}

/// Writes the corpus as JSON lines and the report beside it, each atomically.
pub fn emit_corpus(samples: &[ReconstructedSample], report: &ReconstructReport, path: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no reconstructed samples to write".into()));
    }
    crate::util::write_atomic(path, |w| {
        for s in samples {
            serde_json::to_writer(&mut *w, &s.to_record())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    crate::util::write_atomic(&report_path(path), |w| {
        serde_json::to_writer_pretty(&mut *w, report)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Reads and validates every record of a corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<ReconstructedSample>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { location: format!("{}:{}", path.display(), i + 1), message: e.to_string() })?;
        out.push(parse_record(&rec)?);
    }
    Ok(out)
}
