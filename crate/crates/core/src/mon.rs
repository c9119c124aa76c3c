//! Mixture-of-Neurons selection: the neurons that stay in the per-step
//! Top-K of attribution scores across every selected time step.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{util, Error, Level, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronKind {
    Ffn,
    AttentionHead,
}

impl NeuronKind {
    fn as_str(self) -> &'static str {
        match self {
            NeuronKind::Ffn => "ffn",
            NeuronKind::AttentionHead => "attn",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ffn" => Some(NeuronKind::Ffn),
            "attn" | "attention_head" => Some(NeuronKind::AttentionHead),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub id: u64,
    pub kind: NeuronKind,
    pub layer: u32,
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}[{}@{}]", self.id, self.kind.as_str(), self.layer)
    }
}

/// Attribution scores `φ(c, t)`, one row per neuron, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    neurons: Vec<NeuronId>,
    steps: usize,
    scores: Vec<f64>,
}

impl AttributionMatrix {
    /// `scores` is row-major: `scores[row * steps + step]`.
    pub fn new(neurons: Vec<NeuronId>, steps: usize, scores: Vec<f64>) -> Result<Self> {
        if neurons.is_empty() || steps == 0 {
            return Err(Error::InvalidInput("attribution matrix is empty".into()));
        }
        if scores.len() != neurons.len() * steps {
            return Err(Error::Shape { expected: neurons.len() * steps, got: scores.len() });
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "score for {} at step {} is not finite",
                neurons[i / steps],
                i % steps
            )));
        }
        let mut seen = HashSet::with_capacity(neurons.len());
        for n in &neurons {
            if !seen.insert(n.id) {
                return Err(Error::InvalidInput(format!("duplicate neuron id {}", n.id)));
            }
        }
        Ok(Self { neurons, steps, scores })
    }

    pub fn neurons(&self) -> &[NeuronId] {
        &self.neurons
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn score(&self, row: usize, step: usize) -> f64 {
        self.scores[row * self.steps + step]
    }

    /// Restricts the matrix to the given step columns, in the given order.
    pub fn select_steps(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.steps) {
            return Err(Error::InvalidInput(format!("step column {c} out of range")));
        }
        let scores = (0..self.neurons.len())
            .flat_map(|r| columns.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.score(r, c))
            .collect();
        Self::new(self.neurons.clone(), columns.len(), scores)
    }

    /// Row indices of the `k` best neurons at `step`; ties go to the smaller id.
    fn top_k(&self, step: usize, k: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.neurons.len()).collect();
        rows.sort_by(|&a, &b| {
            self.score(b, step)
                .total_cmp(&self.score(a, step))
                .then(self.neurons[a].id.cmp(&self.neurons[b].id))
        });
        rows.truncate(k);
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonSelection {
    pub level: Level,
    pub k: usize,
    /// Selected neurons in ascending id order.
    pub neurons: Vec<NeuronId>,
    /// Set when no neuron survives the intersection.
    pub empty: bool,
}

pub fn select_mon(matrix: &AttributionMatrix, k: usize, level: Level) -> Result<MonSelection> {
    let total = matrix.neurons.len();
    if k == 0 || k > total {
        return Err(Error::InvalidInput(format!("k must be in 1..={total}, got {k}")));
    }
    let mut hits = vec![0usize; total];
    for step in 0..matrix.steps {
        for row in matrix.top_k(step, k) {
            hits[row] += 1;
        }
    }
    let mut neurons: Vec<NeuronId> = hits
        .iter()
        .enumerate()
        .filter(|(_, &h)| h == matrix.steps)
        .map(|(row, _)| matrix.neurons[row])
        .collect();
    neurons.sort_by_key(|n| n.id);
    let empty = neurons.is_empty();
    if empty {
        tracing::warn!(%level, k, "top-k intersection is empty");
    }
    Ok(MonSelection { level, k, neurons, empty })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionFormat {
    /// Comma-separated `id,kind,layer,score_1,...,score_T` per line.
    Text,
    /// Columnar little-endian binary with a 16-byte magic header.
    Binary,
}

impl AttributionFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => AttributionFormat::Binary,
            _ => AttributionFormat::Text,
        }
    }
}

pub const ATTRIBUTION_MAGIC: &[u8; 16] = b"NRMN-ATTRIB-COL1";

pub fn load_attributions(path: &Path, format: AttributionFormat) -> Result<AttributionMatrix> {
    let file = std::fs::File::open(path)?;
    match format {
        AttributionFormat::Text => read_text(file),
        AttributionFormat::Binary => read_binary(std::io::BufReader::new(file)),
    }
}

pub fn save_attributions(matrix: &AttributionMatrix, path: &Path, format: AttributionFormat) -> Result<()> {
    util::write_atomic(path, |w| match format {
        AttributionFormat::Text => write_text(matrix, w),
        AttributionFormat::Binary => write_binary(matrix, w),
    })
}

fn write_text<W: Write>(m: &AttributionMatrix, w: &mut W) -> Result<()> {
    for (row, n) in m.neurons.iter().enumerate() {
        write!(w, "{},{},{}", n.id, n.kind.as_str(), n.layer)?;
        for step in 0..m.steps {
            // `{:?}` prints the shortest representation that round-trips.
            write!(w, ",{:?}", m.score(row, step))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_text<R: Read>(reader: R) -> Result<AttributionMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut neurons = Vec::new();
    let mut scores = Vec::new();
    let mut steps = None;
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let location = e.position().map_or("unknown".to_string(), |p| format!("line {}", p.line()));
            Error::Parse { location, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse { location: format!("line {line}"), message };
        if record.len() < 4 {
            return Err(err(format!("expected id,kind,layer and scores, got {} fields", record.len())));
        }
        let t = record.len() - 3;
        if *steps.get_or_insert(t) != t {
            return Err(err(format!("expected {} scores, got {t}", steps.unwrap())));
        }
        let id = record[0].parse().map_err(|_| err(format!("bad neuron id '{}'", &record[0])))?;
        let kind = NeuronKind::parse(&record[1]).ok_or_else(|| err(format!("bad kind '{}'", &record[1])))?;
        let layer = record[2].parse().map_err(|_| err(format!("bad layer '{}'", &record[2])))?;
        neurons.push(NeuronId { id, kind, layer });
        for (i, field) in record.iter().skip(3).enumerate() {
            let v: f64 = field.parse().map_err(|_| err(format!("bad score '{field}' in column {}", i + 4)))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite score in column {}", i + 4)));
            }
            scores.push(v);
        }
    }
    AttributionMatrix::new(neurons, steps.unwrap_or(0), scores)
}

fn write_binary<W: Write>(m: &AttributionMatrix, w: &mut W) -> Result<()> {
    w.write_all(ATTRIBUTION_MAGIC)?;
    w.write_all(&(m.neurons.len() as u64).to_le_bytes())?;
    w.write_all(&(m.steps as u64).to_le_bytes())?;
    for n in &m.neurons {
        w.write_all(&n.id.to_le_bytes())?;
        w.write_all(&[match n.kind {
            NeuronKind::Ffn => 0u8,
            NeuronKind::AttentionHead => 1u8,
        }])?;
        w.write_all(&n.layer.to_le_bytes())?;
    }
    for step in 0..m.steps {
        for row in 0..m.neurons.len() {
            w.write_all(&m.score(row, step).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<AttributionMatrix> {
    let mut offset = 0u64;
    let mut take = |r: &mut R, buf: &mut [u8]| -> Result<()> {
        r.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Parse {
                location: format!("byte {offset}"),
                message: "truncated attribution file".into(),
            },
            _ => Error::Io(e),
        })?;
        offset += buf.len() as u64;
        Ok(())
    };
    let mut magic = [0u8; 16];
    take(&mut r, &mut magic)?;
    if &magic != ATTRIBUTION_MAGIC {
        return Err(Error::Parse { location: "byte 0".into(), message: "bad magic header".into() });
    }
    let mut b8 = [0u8; 8];
    take(&mut r, &mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    take(&mut r, &mut b8)?;
    let steps = u64::from_le_bytes(b8) as usize;
    if rows.checked_mul(steps).is_none_or(|n| n > (1 << 32)) {
        return Err(Error::Parse { location: "byte 16".into(), message: "implausible dimensions".into() });
    }
    let mut neurons = Vec::with_capacity(rows);
    for _ in 0..rows {
        take(&mut r, &mut b8)?;
        let id = u64::from_le_bytes(b8);
        let mut kind = [0u8; 1];
        take(&mut r, &mut kind)?;
        let kind = match kind[0] {
            0 => NeuronKind::Ffn,
            1 => NeuronKind::AttentionHead,
            other => {
                return Err(Error::Parse {
                    location: format!("byte {}", offset - 1),
                    message: format!("bad kind tag {other}"),
                })
            }
        };
        let mut b4 = [0u8; 4];
        take(&mut r, &mut b4)?;
        neurons.push(NeuronId { id, kind, layer: u32::from_le_bytes(b4) });
    }
    let mut scores = vec![0.0; rows * steps];
    for step in 0..steps {
        for row in 0..rows {
            take(&mut r, &mut b8)?;
            scores[row * steps + step] = f64::from_le_bytes(b8);
        }
    }
    AttributionMatrix::new(neurons, steps, scores)
}
