mod common;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use neuromon::classifier::{train, Layer, MlpModel, TrainConfig};
use neuromon::ingest::{connect_stream, write_trace, ActivationFrame, TraceFormat};
use neuromon::monitor::{
    aggregate, decode_constraint, replay, replay_frames, Aggregation, Detectors, FeatureTracker, InterventionEvent,
    LogRecord, Monitor, MonitorConfig, MonitorSession, NO_THINKING,
};
use neuromon::sim::{dataset_from_traces, generate, CorpusSpec, Injection, InstanceKind, SimSpec};
use neuromon::spectral::{FeatureVector, ProbeSet};
use neuromon::{Error, Level};
use rand::Rng;

/// Fires when the first feature exceeds `cut` (by less than 1e-4); the small
/// negative output bias keeps saturated negative inputs below 0.5.
fn step_model(level: Level, cut: f64) -> MlpModel {
    let d = level.dim();
    let mut w = vec![0.0; d];
    w[0] = 50.0;
    let l1 = Layer { inputs: d, outputs: 1, weights: w, bias: vec![-50.0 * cut] };
    let l2 = Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![0.0] };
    let l3 = Layer { inputs: 1, outputs: 1, weights: vec![1.0], bias: vec![-1e-3] };
    MlpModel::from_layers(level, [l1, l2, l3])
}

/// Constant output `sigmoid(bias)`.
fn constant_model(level: Level, bias: f64) -> MlpModel {
    let mut m = MlpModel::zeros(level, level.dim(), [2, 2]);
    m.layers_mut()[2].bias[0] = bias;
    m
}

fn always(level: Level) -> Option<MlpModel> {
    Some(constant_model(level, 8.0))
}

fn monitor(cfg: MonitorConfig, det: Detectors) -> Monitor {
    Monitor::new(Arc::new(cfg), Arc::new(det)).unwrap()
}

fn random_frames(seed: u64, steps: usize, channels: usize) -> Vec<ActivationFrame> {
    let mut rng = common::rng(seed);
    let mut out = Vec::new();
    for _ in 0..steps {
        let len = rng.random_range(1..=9);
        for i in 0..len {
            let v = (0..channels).map(|_| rng.random_range(0.1..3.0)).collect();
            out.push(ActivationFrame::new(1, out.len() as u64, v).with_step_end(i + 1 == len));
        }
    }
    out
}

#[test]
fn windows_hold_last_k_steps_plus_current() {
    for k in [2, 4, 8] {
        let cfg = MonitorConfig { k_intra: k, k_inter: k, ..MonitorConfig::default() };
        let mut tracker = FeatureTracker::new(&cfg).unwrap();
        let omegas = cfg.probes.omegas().to_vec();
        let frames = random_frames(k as u64, 40, 12);
        let mut done: VecDeque<usize> = VecDeque::new();
        let mut current = 0usize;
        for (t, f) in frames.iter().enumerate() {
            let obs = tracker.observe(f).unwrap();
            current += 1;
            if f.step_end {
                done.push_back(current);
                current = 0;
                if done.len() > k {
                    done.pop_front();
                }
            }
            let len = done.iter().sum::<usize>() + current;
            assert_eq!(tracker.window_len(Level::Intra), len);
            assert_eq!(tracker.window_len(Level::Inter), len);
            assert_eq!(tracker.window_steps(Level::Inter), done.iter().copied().collect::<Vec<_>>());
            assert_eq!(obs.evaluated.intra, len >= 2);
            if len >= 2 && t % 7 == 0 {
                for (i, &c) in cfg.channels.inter.iter().enumerate() {
                    let w: Vec<f64> = frames[t + 1 - len..=t].iter().map(|g| g.channels[c]).collect();
                    let oracle = common::naive_probe_features(&w, &omegas, cfg.epsilon);
                    let got = tracker.features(Level::Inter)[i].as_slice();
                    assert!((got[0] - oracle[2]).abs() < 1e-9 && (got[1] - oracle[3]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn refractory_spaces_same_level_events() {
    let frames = random_frames(3, 60, 12);
    for (refractory, expected_gap) in [(None, 8u64), (Some(3), 3)] {
        let cfg = MonitorConfig { refractory_steps: refractory, ..MonitorConfig::default() };
        let mut m = monitor(cfg, Detectors::new(always(Level::Intra), None, None).unwrap());
        let events: Vec<_> = frames.iter().filter_map(|f| m.on_frame(f).unwrap()).collect();
        assert!(!events.is_empty());
        // the second token is the first with a two-sample window
        assert_eq!(events[0].token, 1);
        for pair in events.windows(2) {
            assert_eq!(pair[1].step - pair[0].step, expected_gap);
        }
        assert!(events.iter().all(|e| e.level == Level::Intra && e.payload == "<INTRA>"));
        let summary = m.finish(false);
        assert_eq!(summary.events.intra, events.len() as u64);
        assert_eq!(summary.steps, 60);
    }
}

#[test]
fn instance_event_fires_once_at_prefix_end() {
    for prefix in [2, 4, 8] {
        let frames = random_frames(prefix as u64, 30, 12);
        let cfg = MonitorConfig { inst_prefix: prefix, ..MonitorConfig::default() };
        let det = Detectors::new(always(Level::Intra), always(Level::Inter), always(Level::Inst)).unwrap();
        let mut m = monitor(cfg, det);
        let events: Vec<_> = frames.iter().filter_map(|f| m.on_frame(f).unwrap()).collect();
        let inst: Vec<&InterventionEvent> = events.iter().filter(|e| e.level == Level::Inst).collect();
        assert_eq!(inst.len(), 1);
        let end_of_prefix = frames.iter().filter(|f| f.step_end).nth(prefix - 1).unwrap().token;
        assert_eq!(inst[0].token, end_of_prefix);
        assert_eq!(inst[0].step, prefix as u64 - 1);
        assert_eq!(inst[0].payload, NO_THINKING);
        assert_eq!(inst[0].payload, "Okay, I have finished thinking.");
    }
    let frames = random_frames(5, 30, 12);
    let mut m = monitor(MonitorConfig::default(), Detectors::new(None, None, Some(constant_model(Level::Inst, -8.0))).unwrap());
    assert!(frames.iter().all(|f| m.on_frame(f).unwrap().is_none()));
}

#[test]
fn one_event_per_frame_with_level_priority() {
    let frames = random_frames(8, 30, 12);
    let det = Detectors::new(always(Level::Intra), always(Level::Inter), always(Level::Inst)).unwrap();
    let mut m = monitor(MonitorConfig::default(), det);
    let events: Vec<_> = frames.iter().filter_map(|f| m.on_frame(f).unwrap()).collect();
    let mut tokens: Vec<u64> = events.iter().map(|e| e.token).collect();
    tokens.dedup();
    assert_eq!(tokens.len(), events.len());
    // intra outranks inter on the first evaluable frame
    assert_eq!(events[0].level, Level::Intra);
    assert_eq!(events[1].level, Level::Inter);
}

#[test]
fn aggregation_modes() {
    let model = step_model(Level::Inter, 0.5);
    let feats = [FeatureVector::inter(0.2, 0.9), FeatureVector::inter(0.9, 0.3)];
    let mean = aggregate(&feats, &model, Aggregation::MeanFeatures).unwrap();
    let mean_direct = model.forward(&FeatureVector::inter(0.55, 0.6)).unwrap();
    assert!((mean - mean_direct).abs() < 1e-12);
    assert!(mean > 0.5);
    let max = aggregate(&feats, &model, Aggregation::MaxProbability).unwrap();
    assert_eq!(max, model.forward(&feats[1]).unwrap());
    assert!(model.forward(&feats[0]).unwrap() < 0.5);

    let low = [FeatureVector::inter(0.2, 0.9), FeatureVector::inter(0.6, 0.3)];
    assert!(aggregate(&low, &model, Aggregation::MeanFeatures).unwrap() < 0.5);
    assert!(aggregate(&low, &model, Aggregation::MaxProbability).unwrap() > 0.5);
    assert!(aggregate(&[], &model, Aggregation::MeanFeatures).is_err());
    assert_eq!("max-probability".parse::<Aggregation>().unwrap(), Aggregation::MaxProbability);
}

#[test]
fn decode_constraint_forces_payload_next_token() {
    assert!(decode_constraint(None).is_none());
    let e = InterventionEvent {
        stream: 3,
        token: 41,
        step: 6,
        level: Level::Inst,
        payload: NO_THINKING.into(),
        probability: 0.8,
        window: 1,
    };
    let d = decode_constraint(Some(&e)).unwrap();
    assert_eq!((d.stream, d.level, d.token, d.at, d.resume), (3, Level::Inst, 41, 42, 43));
    assert_eq!(d.force, NO_THINKING);
}

#[test]
fn probe_mismatch_is_refused() {
    let mut model = step_model(Level::Intra, 0.5);
    model.set_probe_hash(ProbeSet::uniform(8).unwrap().hash());
    let det = Arc::new(Detectors::new(Some(model), None, None).unwrap());
    let r = Monitor::new(Arc::new(MonitorConfig::default()), Arc::clone(&det));
    assert!(matches!(r, Err(Error::ProbeMismatch { .. })));
    let cfg = MonitorConfig { probes: ProbeSet::uniform(8).unwrap(), ..MonitorConfig::default() };
    assert!(Monitor::new(Arc::new(cfg), det).is_ok());

    let wrong_slot = Detectors::new(None, Some(step_model(Level::Intra, 0.5)), None);
    assert!(matches!(wrong_slot, Err(Error::Config(_))));
}

#[test]
fn channel_and_protocol_violations() {
    let narrow = random_frames(1, 4, 8);
    let mut m = monitor(MonitorConfig::default(), Detectors::default());
    assert!(matches!(m.on_frame(&narrow[0]), Err(Error::Config(_))));

    let frames = random_frames(1, 4, 12);
    let mut m = monitor(MonitorConfig::default(), Detectors::default());
    m.on_frame(&frames[0]).unwrap();
    let wide = ActivationFrame::new(1, 1, vec![1.0; 13]);
    assert!(matches!(m.on_frame(&wide), Err(Error::Config(_))));

    let mut m = monitor(MonitorConfig::default(), Detectors::default());
    m.on_frame(&frames[0]).unwrap();
    let other = ActivationFrame { stream: 2, ..frames[1].clone() };
    assert!(matches!(m.on_frame(&other), Err(Error::Protocol(_))));
    m.finish(false);
    assert!(matches!(m.on_frame(&frames[1]), Err(Error::Protocol(_))));
}

#[test]
fn config_validation() {
    let bad = [
        MonitorConfig { k_intra: 3, ..MonitorConfig::default() },
        MonitorConfig { inst_prefix: 0, ..MonitorConfig::default() },
        MonitorConfig { threshold_inter: 1.0, ..MonitorConfig::default() },
        MonitorConfig { threshold_intra: 0.0, ..MonitorConfig::default() },
        MonitorConfig { stride: 0, ..MonitorConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
    }
    let custom = MonitorConfig { k_intra: 3, custom_windows: true, ..MonitorConfig::default() };
    custom.validate().unwrap();
    let text = r#"{"k_inter": 8, "threshold_inst": 0.7, "aggregation": "max-probability"}"#;
    let cfg: MonitorConfig = serde_json::from_str(text).unwrap();
    assert_eq!((cfg.k_inter, cfg.threshold_inst, cfg.aggregation), (8, 0.7, Aggregation::MaxProbability));
    assert!(serde_json::from_str::<MonitorConfig>(r#"{"k_intar": 8}"#).is_err());
}

fn demo_detectors() -> Arc<Detectors> {
    Arc::new(
        Detectors::new(
            Some(step_model(Level::Intra, 0.6)),
            Some(step_model(Level::Inter, 0.45)),
            Some(step_model(Level::Inst, 0.7)),
        )
        .unwrap(),
    )
}

fn demo_trace() -> Vec<ActivationFrame> {
    let spec = SimSpec {
        seed: 12,
        stream: 4,
        inter_period: 16.0,
        injections: vec![Injection::intra(6, 30.0), Injection::inter(14, 4, 10.0), Injection::intra(25, 30.0)],
        instance: InstanceKind::Easy,
        ..SimSpec::default()
    };
    generate(&spec).unwrap().frames
}

#[test]
fn replay_is_deterministic_and_matches_file_and_socket() {
    let frames = demo_trace();
    let cfg = Arc::new(MonitorConfig::default());
    let det = demo_detectors();
    let a = replay_frames(frames.iter().cloned().map(Ok), Arc::clone(&cfg), Arc::clone(&det), true).unwrap();
    let b = replay_frames(frames.iter().cloned().map(Ok), Arc::clone(&cfg), Arc::clone(&det), true).unwrap();
    assert_eq!(a, b);
    assert!(a.events.iter().any(|e| e.level == Level::Intra));
    assert!(a.events.iter().any(|e| e.level == Level::Inter));
    assert!(!a.summary.truncated);

    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("t.nrmn", TraceFormat::Binary), ("t.jsonl", TraceFormat::Text)] {
        let path = dir.path().join(name);
        write_trace(&path, &frames, format).unwrap();
        let from_file = replay(&path, Arc::clone(&cfg), Arc::clone(&det), true).unwrap();
        assert_eq!(from_file, a);
    }

    let log_path = dir.path().join("events.jsonl");
    a.write_log(&log_path).unwrap();
    let lines: Vec<LogRecord> = std::fs::read_to_string(&log_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, a.log());

    let log = Arc::new(Mutex::new(Vec::new()));
    let (c, d, l) = (Arc::clone(&cfg), Arc::clone(&det), Arc::clone(&log));
    let server = neuromon::ingest::serve_socket("127.0.0.1:0", move || {
        MonitorSession::new(Arc::clone(&c), Arc::clone(&d), Arc::clone(&l)).unwrap()
    })
    .unwrap();
    let mut client = connect_stream(server.local_addr(), 1).unwrap();
    let mut directives = Vec::new();
    for f in &frames {
        directives.extend(client.send(f).unwrap());
    }
    directives.extend(client.finish().unwrap());
    server.shutdown();
    assert_eq!(*log.lock().unwrap(), a.log());
    let expected: Vec<_> = a.events.iter().map(|e| decode_constraint(Some(e)).unwrap()).collect();
    assert_eq!(directives, expected);
}

#[test]
fn disconnect_finalizes_truncated_stream() {
    let frames = demo_trace();
    let cfg = Arc::new(MonitorConfig::default());
    let det = demo_detectors();
    let log = Arc::new(Mutex::new(Vec::new()));
    let (c, d, l) = (Arc::clone(&cfg), Arc::clone(&det), Arc::clone(&log));
    let server = neuromon::ingest::serve_socket("127.0.0.1:0", move || {
        MonitorSession::new(Arc::clone(&c), Arc::clone(&d), Arc::clone(&l)).unwrap()
    })
    .unwrap();
    let mut client = connect_stream(server.local_addr(), 1).unwrap();
    for f in &frames[..50] {
        client.send(f).unwrap();
    }
    client.abort();
    server.shutdown();
    let log = log.lock().unwrap();
    match log.last().unwrap() {
        LogRecord::Truncated(s) => assert_eq!((s.frames, s.truncated, s.stream), (50, true, Some(4))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn feature_dump_has_one_row_per_evaluated_window() {
    let frames = demo_trace();
    let out = replay_frames(frames.iter().cloned().map(Ok), Arc::new(MonitorConfig::default()), demo_detectors(), true)
        .unwrap();
    let n = frames.len();
    assert_eq!(out.features.len(), 2 * (n - 1) + 1);
    assert_eq!(out.features.iter().filter(|r| r.level == Level::Inst).count(), 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    out.write_features(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(reader.headers().unwrap().len(), 9);
    assert_eq!(reader.records().count(), out.features.len());
    let quiet = replay_frames(frames.iter().cloned().map(Ok), Arc::new(MonitorConfig::default()), demo_detectors(), false)
        .unwrap();
    assert!(quiet.features.is_empty());
    assert_eq!(quiet.events, out.events);
}

#[test]
fn stride_thins_evaluations() {
    let frames = random_frames(2, 20, 12);
    let cfg = MonitorConfig { stride: 4, ..MonitorConfig::default() };
    let mut tracker = FeatureTracker::new(&cfg).unwrap();
    for (i, f) in frames.iter().enumerate() {
        let o = tracker.observe(f).unwrap();
        assert_eq!(o.evaluated.intra, (i + 1) % 4 == 0);
    }
}

#[test]
fn clean_traces_raise_no_events_with_trained_detectors() {
    let cfg = MonitorConfig::default();
    let corpus = CorpusSpec { traces: 80, seed: 31, ..CorpusSpec::default() };
    let traces: Vec<_> = corpus.specs().unwrap().iter().map(|s| generate(s).unwrap()).collect();
    let data = dataset_from_traces(&traces, &cfg, 1).unwrap();
    let tc = TrainConfig { epochs: 30, ..TrainConfig::default() };
    let models: Vec<MlpModel> = Level::ALL.iter().map(|&l| train(&data[l], &tc).unwrap().0).collect();
    let det = Arc::new(Detectors::new(Some(models[0].clone()), Some(models[1].clone()), Some(models[2].clone())).unwrap());
    let cfg = Arc::new(cfg);
    for seed in 0..10 {
        let trace = generate(&SimSpec { seed: 500 + seed, stream: seed, ..SimSpec::default() }).unwrap();
        let out = replay_frames(trace.frames.into_iter().map(Ok), Arc::clone(&cfg), Arc::clone(&det), false).unwrap();
        assert!(out.events.is_empty(), "seed {seed}: {:?}", out.events);
    }
}
