//! Acceptance criteria AC1 to AC10, run in order with one PASS/FAIL line each.
//!
//! `cargo test -p neuromon --test acceptance -- --nocapture` shows the report.

mod common;

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use neuromon::classifier::{grad_check, train, Example, MlpModel, TrainConfig, DEFAULT_HIDDEN};
use neuromon::ingest::{connect_stream, serve_socket, ActivationFrame, Directive, SessionHandler, SessionOutcome};
use neuromon::mon::{select_mon, AttributionMatrix, NeuronId, NeuronKind};
use neuromon::monitor::{
    bench, replay_frames, score_events, BenchConfig, Detectors, EventScore, LogRecord, MonitorConfig, MonitorSession,
    NO_THINKING,
};
use neuromon::reconstruct::{emit_corpus, parse_record, reconstruct_corpus, trigger, ReconstructConfig, Role};
use neuromon::sim::{build_dataset, generate, CorpusSpec};
use neuromon::spectral::{
    dft_spectrum, inst_features, inter_features, intra_features, spectral_entropy, ActivationSeries, FeatureVector,
    ProbeSet, SpectralWindow, DEFAULT_EPSILON as EPS,
};
use neuromon::{Level, PerLevel, Result};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn series(v: Vec<f64>) -> ActivationSeries {
    ActivationSeries::new(v).unwrap()
}

fn ac1_incremental_matches_recompute() -> Check {
    let channels = 8;
    let probes = ProbeSet::default();
    let omegas = probes.omegas().to_vec();
    let mut w = SpectralWindow::new(channels, Arc::new(probes)).with_rebuild_interval(Some(4096));
    let mut mirror: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rng = common::rng(1);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let ops = 100_000;
    for op in 0..ops {
        if mirror.len() < 4 || (mirror.len() < 256 && rng.random_bool(0.55)) {
            let v: Vec<f64> = (0..channels).map(|_| rng.random_range(-4.0..4.0)).collect();
            w.push(&v).unwrap();
            mirror.push_back(v.iter().map(|x| x.abs()).collect());
        } else {
            let count = rng.random_range(1..=mirror.len().min(6) - 2);
            w.pop(count).unwrap();
            mirror.drain(..count);
        }
        if (op % 499 == 0 || op + 1 == ops) && mirror.len() >= 2 {
            checked += 1;
            for level in Level::ALL {
                for (n, f) in w.features(level).unwrap().iter().enumerate() {
                    let col: Vec<f64> = mirror.iter().map(|e| e[n]).collect();
                    let o = common::naive_probe_features(&col, &omegas, EPS);
                    let expected = match level {
                        Level::Intra => vec![o[0], o[3], o[4]],
                        Level::Inter => vec![o[2], o[3]],
                        Level::Inst => vec![o[1], o[3]],
                    };
                    for (a, b) in f.as_slice().iter().zip(&expected) {
                        worst = worst.max((a - b).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:.3e} > 1e-8"))?;
    Ok(format!("{ops} ops, {checked} checkpoints, max deviation {worst:.2e}"))
}

fn ac2_constant_per_token_cost() -> Check {
    let cfg = BenchConfig { windows: vec![64, 4096], channels: 32, ..BenchConfig::default() };
    let report = bench(&cfg, &MonitorConfig::default()).map_err(|e| e.to_string())?;
    let ratio = report.ratio();
    let (a, b) = (report.rows[0].median_ns, report.rows[1].median_ns);
    ensure(ratio <= 3.0, || format!("median W=4096 {b:.0} ns / W=64 {a:.0} ns = {ratio:.2} > 3"))?;
    Ok(format!("median {a:.0} ns at W=64, {b:.0} ns at W=4096, ratio {ratio:.2}"))
}

fn ac3_closed_forms() -> Check {
    let impulse = series(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let h = spectral_entropy(&dft_spectrum(&impulse, EPS).unwrap());
    let r_hf = intra_features(&impulse, EPS).unwrap().as_slice()[0];
    let r_lf = inst_features(&impulse, EPS).unwrap().as_slice()[0];
    ensure((h - 1.0).abs() <= 1e-12, || format!("impulse H = {h}"))?;
    ensure((r_hf - 0.75).abs() <= 1e-12, || format!("impulse r_HF = {r_hf}"))?;
    ensure((r_lf - 0.25).abs() <= 1e-12, || format!("impulse r_LF = {r_lf}"))?;

    // bin f = 3 counting DC as f = 1: period 4 over T = 8
    let tone = series((0..8).map(|t| 2.0 + (std::f64::consts::TAU * t as f64 / 4.0).cos()).collect());
    let f = inter_features(&tone, EPS).unwrap();
    let (r_dom, h_tone) = (f.as_slice()[0], f.as_slice()[1]);
    ensure(r_dom >= 1.0 - 1e-9, || format!("tone r_dom = {r_dom}"))?;
    ensure(h_tone <= 1e-9, || format!("tone H = {h_tone}"))?;
    Ok(format!("impulse H {h:.12} r_HF {r_hf:.12} r_LF {r_lf:.12}; tone r_dom {r_dom:.12} H {h_tone:.1e}"))
}

fn ac4_parseval() -> Check {
    let mut rng = common::rng(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(8..=64);
        let v: Vec<f64> = (0..t).map(|_| rng.random_range(-10.0..10.0)).collect();
        // y is the mean-removed magnitude series
        let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        let mean = mags.iter().sum::<f64>() / t as f64;
        let rhs = t as f64 * mags.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let lhs: f64 = common::naive_dft_power(&v).iter().sum();
        let spec = dft_spectrum(&series(v), EPS).unwrap();
        let got = spec.two_sided_energy();
        worst = worst.max((got - rhs).abs() / rhs).max((lhs - rhs).abs() / rhs);
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:.3e}"))?;
    Ok(format!("1000 windows, max relative error {worst:.2e}"))
}

fn random_batch(seed: u64, level: Level, n: usize) -> Vec<Example> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..level.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            Example { features: FeatureVector::new(level, &v).unwrap(), label: rng.random_bool(0.5), trace: i as u32 }
        })
        .collect()
}

fn ac5_gradients() -> Check {
    let mut worst = 0.0f64;
    for level in Level::ALL {
        for seed in 0..20u64 {
            let model = MlpModel::new(level, level.dim(), DEFAULT_HIDDEN, 500 + seed).map_err(|e| e.to_string())?;
            let batch = random_batch(900 + seed, level, 16);
            let err = grad_check(&model, &batch, 1e-5).map_err(|e| e.to_string())?;
            ensure(err <= 1e-4, || format!("{level} seed {seed}: relative error {err:.3e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("60 models, max relative error {worst:.2e}"))
}

fn ac6_detectors(config: &MonitorConfig) -> std::result::Result<(PerLevel<Option<MlpModel>>, String), String> {
    let corpus = CorpusSpec::default();
    let specs = corpus.specs().map_err(|e| e.to_string())?;
    let data = build_dataset(&specs, config, corpus.seed).map_err(|e| e.to_string())?;
    let mut models: PerLevel<Option<MlpModel>> = PerLevel::default();
    let mut detail = Vec::new();
    let mut failures = Vec::new();
    for level in Level::ALL {
        let (mut model, report) = train(&data[level], &TrainConfig::default()).map_err(|e| e.to_string())?;
        model.set_probe_hash(config.probes.hash());
        let t = report.test;
        detail.push(format!("{level} acc {:.3} rec {:.3}", t.accuracy, t.recall));
        if t.accuracy < 0.90 || t.recall < 0.85 {
            failures.push(format!("{level}: accuracy {:.4} recall {:.4}", t.accuracy, t.recall));
        }
        models[level] = Some(model);
    }
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    Ok((models, format!("{} traces; {}", specs.len(), detail.join(", "))))
}

fn ac7_end_to_end(config: &MonitorConfig, models: PerLevel<Option<MlpModel>>) -> Check {
    let detectors = Arc::new(Detectors::new(models.intra, models.inter, models.inst).map_err(|e| e.to_string())?);
    let config = Arc::new(config.clone());
    let replay_corpus = CorpusSpec { traces: 50, seed: 7_000, ..CorpusSpec::default() };
    let mut total = EventScore::default();
    for spec in replay_corpus.specs().map_err(|e| e.to_string())? {
        let trace = generate(&spec).map_err(|e| e.to_string())?;
        let out = replay_frames(trace.frames.iter().cloned().map(Ok), Arc::clone(&config), Arc::clone(&detectors), false)
            .map_err(|e| e.to_string())?;
        let inst: Vec<_> = out.events.iter().filter(|e| e.level == Level::Inst).collect();
        if trace.labels.events(Level::Inst).next().is_some() {
            ensure(inst.len() == 1, || format!("stream {}: {} instance events on an easy trace", spec.stream, inst.len()))?;
            let at = config.inst_prefix as u64 - 1;
            ensure(inst[0].step == at && inst[0].payload == NO_THINKING, || {
                format!("stream {}: instance event at step {} with payload {:?}", spec.stream, inst[0].step, inst[0].payload)
            })?;
        } else {
            ensure(inst.is_empty(), || format!("stream {}: instance event on a hard trace", spec.stream))?;
        }
        total.merge(&score_events(&trace.labels, &out.events, &config));
    }
    let mut detail = Vec::new();
    for (level, s) in total.levels.iter() {
        let (recall, false_rate) = (s.recall(), s.false_per_100_clean_steps());
        detail.push(format!("{level} recall {recall:.3} ({}/{}) false/100 {false_rate:.3}", s.detected, s.events));
        ensure(s.events > 0, || format!("{level}: no labeled events in the replay set"))?;
        ensure(recall >= 0.90, || format!("{level}: event recall {recall:.3} < 0.90"))?;
        ensure(false_rate <= 0.05, || format!("{level}: {false_rate:.3} false events per 100 clean steps"))?;
    }
    Ok(format!("50 traces; {}", detail.join(", ")))
}

fn ac8_reconstruction() -> Check {
    let raw = common::text::raw_samples(1000, 8);
    let cfg = ReconstructConfig { seed: 8, ..ReconstructConfig::default() };
    let (samples, report) = reconstruct_corpus(&raw, &cfg).map_err(|e| e.to_string())?;
    ensure(samples.len() == 1000, || format!("{} of 1000 samples emitted; skipped {:?}", samples.len(), report.skipped))?;
    for s in &samples {
        let rec = s.to_record();
        let back = parse_record(&rec).map_err(|e| format!("{}: {e}", rec.id))?;
        ensure(&back == s, || format!("{}: parse-back differs", rec.id))?;

        let trig = trigger(rec.level).unwrap();
        let chars: Vec<char> = rec.output.chars().collect();
        let t = rec.segments.iter().find(|g| g.role == Role::Trigger).ok_or_else(|| format!("{}: no trigger", rec.id))?;
        let r = rec.segments.iter().find(|g| g.role == Role::Rewritten).unwrap();
        let p = rec.segments.iter().find(|g| g.role == Role::Prompt).unwrap();
        ensure(chars[t.start..t.end].iter().collect::<String>() == trig, || format!("{}: trigger text", rec.id))?;
        ensure(rec.output.matches(trig).count() == 1, || format!("{}: trigger not unique", rec.id))?;
        let gap: String = chars[r.end..t.start].iter().collect();
        ensure(gap == "\n\n" && t.end < p.start, || format!("{}: trigger not right after the rewritten step", rec.id))?;
        let rewritten: String = chars[r.start..r.end].iter().collect();
        ensure(rewritten == s.rewritten, || format!("{}: rewritten step misplaced", rec.id))?;
        ensure(rec.mask == vec![[0, t.start], [t.end, chars.len()]], || format!("{}: mask {:?}", rec.id, rec.mask))?;
        let trained: usize = rec.mask.iter().map(|m| m[1] - m[0]).sum();
        ensure(trained + trig.chars().count() == chars.len(), || format!("{}: mask covers more than output minus trigger", rec.id))?;
    }
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    emit_corpus(&samples, &report, &a).map_err(|e| e.to_string())?;
    let (again, report2) = reconstruct_corpus(&raw, &cfg).map_err(|e| e.to_string())?;
    emit_corpus(&again, &report2, &b).map_err(|e| e.to_string())?;
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(x == y, || "seeded re-run differs".into())?;
    let intra = report.emitted.get(&Level::Intra).copied().unwrap_or(0);
    Ok(format!("1000 records ({intra} intra), {} bytes, identical re-run", x.len()))
}

fn neuron(id: u64) -> NeuronId {
    NeuronId { id, kind: if id.is_multiple_of(2) { NeuronKind::Ffn } else { NeuronKind::AttentionHead }, layer: 12 }
}

fn arb_matrix() -> impl Strategy<Value = AttributionMatrix> {
    (1usize..20, 1usize..8, any::<u64>()).prop_map(|(n, t, seed)| {
        let mut rng = common::rng(seed);
        let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 5 + 2).collect();
        ids.shuffle(&mut rng);
        let scores = (0..n * t).map(|_| f64::from(rng.random_range(0..8u8)) * 0.25).collect();
        AttributionMatrix::new(ids.into_iter().map(neuron).collect(), t, scores).unwrap()
    })
}

fn ids(sel: &[NeuronId]) -> BTreeSet<u64> {
    sel.iter().map(|n| n.id).collect()
}

fn ac9_mon_properties() -> Check {
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&arb_matrix(), |m| {
            let mut prev = BTreeSet::new();
            for k in 1..=m.neurons().len() {
                let cur = ids(&select_mon(&m, k, Level::Intra).unwrap().neurons);
                prop_assert!(prev.is_subset(&cur), "not monotone at k={}", k);
                prev = cur;
            }
            Ok(())
        })
        .map_err(|e| format!("monotonicity: {e}"))?;

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&(arb_matrix(), any::<u64>(), 0.0f64..1.0), |(m, seed, frac)| {
            let k = 1 + ((m.neurons().len() - 1) as f64 * frac) as usize;
            let mut cols: Vec<usize> = (0..m.steps()).collect();
            cols.shuffle(&mut common::rng(seed));
            let permuted = m.select_steps(&cols).unwrap();
            prop_assert_eq!(select_mon(&m, k, Level::Inter).unwrap(), select_mon(&permuted, k, Level::Inter).unwrap());
            Ok(())
        })
        .map_err(|e| format!("permutation invariance: {e}"))?;

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    runner
        .run(&any::<u64>(), |seed| {
            let mut rng = common::rng(seed);
            let base = [[5.0, 1.0], [3.0, 4.0], [2.0, 2.0]];
            let labels: Vec<u64> = {
                let (o, g) = (rng.random_range(0..1000u64), rng.random_range(1..40u64));
                (0..3).map(|i| o + i * g).collect()
            };
            let scale: Vec<f64> = (0..2).map(|_| rng.random_range(0.1..10.0)).collect();
            let mut rows = [0usize, 1, 2];
            rows.shuffle(&mut rng);
            let neurons = rows.iter().map(|&r| neuron(labels[r])).collect();
            let scores = rows.iter().flat_map(|&r| (0..2).map(move |t| (r, t))).map(|(r, t)| base[r][t] * scale[t]).collect();
            let m = AttributionMatrix::new(neurons, 2, scores).unwrap();
            prop_assert_eq!(ids(&select_mon(&m, 2, Level::Intra).unwrap().neurons), BTreeSet::from([labels[1]]));
            Ok(())
        })
        .map_err(|e| format!("worked example: {e}"))?;
    Ok("3 properties x 1000 matrices".into())
}

struct Recorder {
    seen: Arc<Mutex<Vec<u64>>>,
    directive_at: u64,
}

impl SessionHandler for Recorder {
    fn on_frame(&mut self, frame: &ActivationFrame) -> Result<Option<Directive>> {
        self.seen.lock().unwrap().push(frame.token);
        Ok((frame.token == self.directive_at).then(|| Directive {
            stream: frame.stream,
            level: Level::Intra,
            token: frame.token,
            force: "<INTRA>".into(),
            at: frame.token + 1,
            resume: frame.token + 2,
            probability: 0.95,
        }))
    }

    fn on_close(&mut self, _: &SessionOutcome) {}
}

fn ac10_wire() -> Check {
    let mut rng = common::rng(10);
    let frames: Vec<ActivationFrame> = (0..10_000u64)
        .map(|t| {
            let v = (0..12).map(|_| rng.random_range(0.1..5.0)).collect();
            ActivationFrame::new(3, t, v).with_step_end(t % 20 == 19)
        })
        .collect();

    let seen = Arc::new(Mutex::new(Vec::new()));
    let s = Arc::clone(&seen);
    let mid = 5_000;
    let server =
        serve_socket("127.0.0.1:0", move || Recorder { seen: Arc::clone(&s), directive_at: mid }).map_err(|e| e.to_string())?;
    let mut client = connect_stream(server.local_addr(), 1).map_err(|e| e.to_string())?;
    let mut received = Vec::new();
    for f in &frames {
        // checkpoint: the directive for `mid` must be in hand before `at` is produced
        if f.token == mid + 1 {
            received.extend(client.ready().map_err(|e| e.to_string())?);
            ensure(received.len() == 1, || format!("directive missing before token {}", f.token))?;
        }
        received.extend(client.send(f).map_err(|e| e.to_string())?);
    }
    received.extend(client.finish().map_err(|e| e.to_string())?);
    let outcomes = server.shutdown();
    ensure(received.len() == 1 && received[0].at == mid + 1, || format!("directives {received:?}"))?;
    let order = seen.lock().unwrap().clone();
    ensure(order == (0..10_000).collect::<Vec<_>>(), || "frames delivered out of order".into())?;
    ensure(outcomes == vec![SessionOutcome::Completed { stream: 3, frames: 10_000 }], || format!("{outcomes:?}"))?;

    let cfg = Arc::new(MonitorConfig::default());
    let det = Arc::new(Detectors::new(None, None, None).map_err(|e| e.to_string())?);
    let log: Arc<Mutex<Vec<LogRecord>>> = Arc::default();
    let l = Arc::clone(&log);
    let server = serve_socket("127.0.0.1:0", move || {
        MonitorSession::new(Arc::clone(&cfg), Arc::clone(&det), Arc::clone(&l)).unwrap()
    })
    .map_err(|e| e.to_string())?;
    let mut client = connect_stream(server.local_addr(), 1).map_err(|e| e.to_string())?;
    for f in &frames[..2_500] {
        client.send(f).map_err(|e| e.to_string())?;
    }
    client.abort();
    server.shutdown();
    let log = log.lock().unwrap();
    match log.last() {
        Some(LogRecord::Truncated(s)) if s.truncated && s.frames == 2_500 => {}
        other => return Err(format!("expected a truncated-stream record, got {other:?}")),
    }
    Ok(format!("10000 frames in order, directive at {} honored, truncation after 2500 logged", mid + 1))
}

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn record(&mut self, id: &str, name: &str, budget: Duration, f: impl FnOnce() -> Check) {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > budget => Err(format!("{d}; took {took:.1?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("{id} PASS {name} [{took:.2?}] {detail}"),
            Err(detail) => {
                println!("{id} FAIL {name} [{took:.2?}] {detail}");
                self.failed.push(id.to_string());
            }
        }
    }
}

#[test]
fn acceptance() {
    let secs = Duration::from_secs;
    let mut report = Report { failed: Vec::new() };
    let config = MonitorConfig::default();
    report.record("AC1", "incremental vs direct recompute", secs(30), ac1_incremental_matches_recompute);
    report.record("AC2", "amortized O(1) per token", secs(120), ac2_constant_per_token_cost);
    report.record("AC3", "exact DFT closed forms", secs(1), ac3_closed_forms);
    report.record("AC4", "Parseval", secs(10), ac4_parseval);
    report.record("AC5", "gradient check", secs(30), ac5_gradients);
    let mut models = None;
    report.record("AC6", "synthetic detection", secs(180), || {
        let (m, detail) = ac6_detectors(&config)?;
        models = Some(m);
        Ok(detail)
    });
    report.record("AC7", "end-to-end monitor", secs(120), || match models.take() {
        Some(m) => ac7_end_to_end(&config, m),
        None => Err("no detectors (AC6 failed)".into()),
    });
    report.record("AC8", "reconstruction conformance", secs(30), ac8_reconstruction);
    report.record("AC9", "MoN selection properties", secs(10), ac9_mon_properties);
    report.record("AC10", "wire robustness", secs(30), ac10_wire);
    assert!(report.failed.is_empty(), "failed: {:?}", report.failed);
}
