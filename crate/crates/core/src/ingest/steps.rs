/// Paragraph delimiter that closes a reasoning step.
pub const STEP_SEPARATOR: &str = "\n\n";

/// Streaming step-separator detector over token texts.
///
/// Separators are matched left to right without overlap on the concatenated
/// text, so "\n\n\n\n" holds two and "\n\n\n" one.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepDetector {
    pending_newline: bool,
}

impl StepDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// True when `text` completes at least one separator.
    pub fn feed(&mut self, text: &str) -> bool {
        let mut completed = false;
        for b in text.bytes() {
            if b == b'\n' {
                if self.pending_newline {
                    completed = true;
                    self.pending_newline = false;
                } else {
                    self.pending_newline = true;
                }
            } else {
                self.pending_newline = false;
            }
        }
        completed
    }
}

pub fn derive_step_flags<S: AsRef<str>>(tokens: &[S]) -> Vec<bool> {
    let mut d = StepDetector::new();
    tokens.iter().map(|t| d.feed(t.as_ref())).collect()
}
