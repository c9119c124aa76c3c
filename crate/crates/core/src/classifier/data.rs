use serde::{Deserialize, Serialize};

use crate::spectral::FeatureVector;
use crate::Level;

/// One labeled window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: FeatureVector,
    pub label: bool,
    /// Source trace; splits never share a trace.
    pub trace: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub level: Option<Level>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn positives(examples: &[Example]) -> usize {
        examples.iter().filter(|e| e.label).count()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
