//! Fine-tuning corpus reconstruction.
//!
//! Each raw `(input, output)` pair is split into paragraph steps, one critical
//! step `j` is rewritten to carry an intra-step error or an inter-step loop,
//! and the level's trigger plus a diagnose-then-correct block is inserted
//! right after it:
//!
//! ```text
//! π_1 … π_{j-1}  π̃_j  <INTRA>  p  d  c  π_{j+1} … π_K
//! ```
//!
//! Emitted records carry the segment layout and the trained character ranges,
//! which cover the whole output except the trigger.

mod corpus;
mod rewrite;
mod sample;
mod select;
mod template;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{
    assemble, emit_corpus, parse_record, read_corpus, report_path, CorpusRecord, ReconstructReport, ReconstructedSample,
    Role, Segment, SkipEntry, BLOCK_LINE,
};
pub use rewrite::{
    IntraRule, LoopTheme, RemoteConfig, RemoteRequest, RemoteRewriter, Rewrite, Rewriter, RewriterConfig, RuleConfig,
    RuleRewriter, Secret, REMOTE_ERROR_TYPES,
};
pub use sample::{read_raw_samples, rejoin, segment, write_raw_samples, ReasoningSample, Segmentation, STEP_DELIMITER};
pub use select::{choose_critical_steps, middle_weights, SelectionPolicy};
pub use template::{render, trigger, Fill, Template, TemplateSet, INTER_TRIGGER, INTRA_TRIGGER};

use crate::{Error, Level, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub seed: u64,
    /// Perturbed variants per raw sample.
    pub variants: usize,
    /// Intra : inter ratio of the variants.
    pub mix_intra: u32,
    pub mix_inter: u32,
    pub policy: SelectionPolicy,
    pub rewriter: RewriterConfig,
    pub templates: TemplateSet,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variants: 1,
            mix_intra: 1,
            mix_inter: 1,
            policy: SelectionPolicy::default(),
            rewriter: RewriterConfig::default(),
            templates: TemplateSet::default(),
        }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variants == 0 {
            return Err(Error::Config("variants must be at least 1".into()));
        }
        if self.mix_intra + self.mix_inter == 0 {
            return Err(Error::Config("mix_intra and mix_inter cannot both be 0".into()));
        }
        if let RewriterConfig::RuleBased(r) = &self.rewriter {
            r.validate()?;
        }
        self.templates.validate()
    }

    /// Level of the `g`-th variant overall; spreads the mix evenly.
    pub fn level_of(&self, g: usize) -> Level {
        let (a, total) = (u64::from(self.mix_intra), u64::from(self.mix_intra + self.mix_inter));
        let g = g as u64;
        if (g + 1) * a / total > g * a / total {
            Level::Intra
        } else {
            Level::Inter
        }
    }
}

struct Job {
    sample: usize,
    variant: usize,
    j: usize,
    level: Level,
    seed: u64,
}

/// Rewrites, assembles and reports a whole corpus.
///
/// With the rule-based rewriter the result depends only on `samples` and `config`.
pub fn reconstruct_corpus(
    samples: &[ReasoningSample],
    config: &ReconstructConfig,
) -> Result<(Vec<ReconstructedSample>, ReconstructReport)> {
    config.validate()?;
    let rewriter = Rewriter::from_config(&config.rewriter)?;
    reconstruct_with(samples, config, &rewriter)
}

pub fn reconstruct_with(
    samples: &[ReasoningSample],
    config: &ReconstructConfig,
    rewriter: &Rewriter,
) -> Result<(Vec<ReconstructedSample>, ReconstructReport)> {
    config.validate()?;
    let mut report = ReconstructReport {
        raw_samples: samples.len(),
        rewriter: rewriter.name().into(),
        deterministic: rewriter.is_deterministic(),
        ..ReconstructReport::default()
    };
    let mut jobs = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        report.canonicalized += usize::from(s.canonicalized);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        for variant in 0..config.variants {
            let level = config.level_of(i * config.variants + variant);
            match choose_critical_steps(s.len(), &config.policy, &mut rng) {
                Ok(js) => {
                    for j in js {
                        jobs.push(Job { sample: i, variant, j, level, seed: rng.random() });
                    }
                }
                Err(e) => {
                    let reason = if s.len() < 2 { "too_few_steps" } else { "invalid_index" };
                    report.skip(SkipEntry { id: s.id.clone(), variant, level: Some(level), reason: reason.into(), detail: e.to_string() });
                }
            }
        }
    }

    let rewrites = run_jobs(samples, &jobs, rewriter);

    let mut out = Vec::with_capacity(jobs.len());
    for (job, rewrite) in jobs.iter().zip(rewrites) {
        let s = &samples[job.sample];
        let skip = |reason: &str, detail: String| SkipEntry {
            id: s.id.clone(),
            variant: job.variant,
            level: Some(job.level),
            reason: reason.into(),
            detail,
        };
        let rewrite = match rewrite {
            Ok(r) => r,
            Err(Error::Rewrite(msg)) if msg == UNCHANGED => {
                report.skip(skip("unchanged_rewrite", msg));
                continue;
            }
            Err(e) => {
                report.skip(skip("rewrite_failed", e.to_string()));
                continue;
            }
        };
        match assemble(s, job.variant, job.j, job.level, &rewrite, rewriter.name(), &config.templates) {
            Ok(r) => {
                *report.emitted.entry(job.level).or_default() += 1;
                out.push(r);
            }
            Err(Error::Rewrite(msg)) => report.skip(skip("trigger_collision", msg)),
            Err(e) => return Err(e),
        }
    }
    Ok((out, report))
}

const UNCHANGED: &str = "rewritten step is unchanged after a retry";

/// One job: a rewrite that leaves the step unchanged is retried once with a
/// fresh draw before giving up.
fn run_job(samples: &[ReasoningSample], job: &Job, rewriter: &Rewriter) -> Result<Rewrite> {
    let s = &samples[job.sample];
    let original = &s.steps[job.j - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    for _ in 0..2 {
        let r = rewriter.rewrite_step(&s.input, &s.steps, job.j, job.level, &mut rng)?;
        if r.text != *original && !r.text.trim().is_empty() {
            return Ok(r);
        }
    }
    Err(Error::Rewrite(UNCHANGED.into()))
}

/// Runs jobs with at most `max_in_flight` concurrent rewrites; results keep job order.
fn run_jobs(samples: &[ReasoningSample], jobs: &[Job], rewriter: &Rewriter) -> Vec<Result<Rewrite>> {
    let workers = rewriter.max_in_flight().min(jobs.len());
    if workers <= 1 {
        return jobs.iter().map(|j| run_job(samples, j, rewriter)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Rewrite>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(samples, job, rewriter);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}
