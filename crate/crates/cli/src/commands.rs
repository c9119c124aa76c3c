use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use neuromon::classifier::{evaluate, grad_check, load_model_checked, save_model, train as train_model, MlpModel, TrainReport};
use neuromon::ingest::{read_trace, serve_socket, TraceFormat};
use neuromon::mon::{self, load_attributions, AttributionFormat};
use neuromon::monitor::{bench as run_bench, replay, score_events, Detectors, LogRecord, MonitorSession, ReplayOutput};
use neuromon::reconstruct::{emit_corpus, read_raw_samples, reconstruct_corpus, report_path, TemplateSet};
use neuromon::sim::{build_dataset, dataset_from_traces, generate, read_labels, write_labeled_trace, LabeledTrace, SimSpec};
use neuromon::util::write_atomic;
use neuromon::{Error, Level, PerLevel, Result};

use crate::config::RunConfig;
use crate::{BenchArgs, FeaturesArgs, Format, MonitorArgs, ReconstructArgs, SelectMonArgs, SimulateArgs, TrainArgs};

const MODEL_EXT: &str = "mlp";

fn trace_format(explicit: Option<Format>, path: &Path) -> TraceFormat {
    match explicit {
        Some(Format::Binary) => TraceFormat::Binary,
        Some(Format::Jsonl) => TraceFormat::Text,
        None => TraceFormat::from_path(path),
    }
}

fn load_spec(path: &Path) -> Result<SimSpec> {
    let text = std::fs::read_to_string(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| Error::Parse { location: path.display().to_string(), message })
}

pub fn simulate(config: &RunConfig, args: SimulateArgs) -> Result<()> {
    if !args.corpus {
        let spec = match &args.spec {
            Some(p) => load_spec(p)?,
            None => SimSpec::default(),
        };
        let trace = generate(&spec)?;
        let sidecar = write_labeled_trace(&trace, &args.out, trace_format(args.format, &args.out))?;
        println!(
            "wrote {} ({} frames, {} steps) and {}",
            args.out.display(),
            trace.frames.len(),
            trace.labels.steps.len(),
            sidecar.display()
        );
        return Ok(());
    }
    if args.out.exists() {
        return Err(Error::InvalidInput(format!("{} already exists", args.out.display())));
    }
    let specs = config.corpus.specs()?;
    let parent = match args.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let staging = tempfile::Builder::new().prefix(".neuromon-corpus").tempdir_in(&parent)?;
    let ext = if args.format == Some(Format::Jsonl) { "jsonl" } else { "nrmn" };
    for (i, spec) in specs.iter().enumerate() {
        let trace = generate(spec)?;
        let path = staging.path().join(format!("trace-{i:04}.{ext}"));
        write_labeled_trace(&trace, &path, trace_format(args.format, &path))?;
    }
    std::fs::rename(staging.keep(), &args.out)?;
    println!("wrote {} traces to {}", specs.len(), args.out.display());
    Ok(())
}

pub fn features(config: &RunConfig, args: FeaturesArgs) -> Result<()> {
    let detectors = Arc::new(Detectors::new(None, None, None)?);
    let out = replay(&args.trace, Arc::new(config.monitor.clone()), detectors, true)?;
    out.write_features(&args.out)?;
    println!("wrote {} feature rows to {}", out.features.len(), args.out.display());
    Ok(())
}

/// Labeled traces in `dir`, in file-name order; files without a sidecar are skipped.
fn load_traces(dir: &Path) -> Result<Vec<LabeledTrace>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.to_string_lossy().ends_with(".labels.json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let Ok(labels) = read_labels(&p) else {
            tracing::info!(path = %p.display(), "no label sidecar, skipped");
            continue;
        };
        let frames = read_trace(&p)?.collect::<Result<Vec<_>>>()?;
        out.push(LabeledTrace { frames, labels });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no labeled traces in {}", dir.display())));
    }
    Ok(out)
}

fn model_path(out: &Path, level: Level, single: bool) -> PathBuf {
    if single {
        out.to_path_buf()
    } else {
        out.join(format!("{level}.{MODEL_EXT}"))
    }
}

pub fn train(config: &RunConfig, args: TrainArgs) -> Result<()> {
    let levels = args.level.levels();
    let single = levels.len() == 1;
    if !single {
        std::fs::create_dir_all(&args.out)?;
    }
    let cfg = &config.monitor;
    let data = match &args.traces {
        Some(dir) => dataset_from_traces(&load_traces(dir)?, cfg, config.corpus.seed)?,
        None => build_dataset(&config.corpus.specs()?, cfg, config.corpus.seed)?,
    };
    let mut reports: Vec<TrainReport> = Vec::new();
    for level in levels {
        let (mut model, report) = train_model(&data[level], &config.train)?;
        model.set_probe_hash(cfg.probes.hash());
        let path = model_path(&args.out, level, single);
        save_model(&model, &path)?;
        let t = report.test;
        println!(
            "{level}: train {} test {} accuracy {:.4} recall {:.4} precision {:.4} -> {}",
            report.train_size,
            report.test_size,
            t.accuracy,
            t.recall,
            t.precision,
            path.display()
        );
        let reloaded = load_model_checked(&path, &cfg.probes)?;
        let again = evaluate(&reloaded, &data[level].test, config.train.threshold)?;
        if again != t {
            return Err(Error::Training(format!("{level}: reloaded model scores {again:?}, trained model {t:?}")));
        }
        println!("{level}: reloaded {} with identical test metrics", path.display());
        if args.grad_check {
            check_gradients(&model, &data[level], level)?;
        }
        reports.push(report);
    }
    if let Some(path) = &args.metrics {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &reports)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    Ok(())
}

fn check_gradients(model: &MlpModel, data: &neuromon::classifier::Dataset, level: Level) -> Result<()> {
    let pool = if data.test.is_empty() { &data.train } else { &data.test };
    let batch = &pool[..pool.len().min(32)];
    let err = grad_check(model, batch, 1e-5)?;
    println!("{level}: grad-check max relative error {err:.3e}");
    if err > 1e-4 {
        return Err(Error::Training(format!("{level}: gradient check failed, max relative error {err:.3e} > 1e-4")));
    }
    Ok(())
}

fn load_detectors(config: &RunConfig, args: &MonitorArgs) -> Result<Detectors> {
    let mut paths: PerLevel<Option<PathBuf>> = PerLevel::default();
    if let Some(dir) = &args.models {
        for level in Level::ALL {
            let p = dir.join(format!("{level}.{MODEL_EXT}"));
            if p.exists() {
                paths[level] = Some(p);
            }
        }
    }
    for (level, p) in [(Level::Intra, &args.intra_model), (Level::Inter, &args.inter_model), (Level::Inst, &args.inst_model)] {
        if p.is_some() {
            paths[level] = p.clone();
        }
    }
    if paths.iter().all(|(_, p)| p.is_none()) {
        return Err(Error::Config("no detector models given (use --models or --<level>-model)".into()));
    }
    let mut models: PerLevel<Option<MlpModel>> = PerLevel::default();
    for (level, p) in paths.iter() {
        if let Some(p) = p {
            models[level] = Some(load_model_checked(p, &config.monitor.probes)?);
        }
    }
    Detectors::new(models.intra, models.inter, models.inst)
}

fn print_summary(out: &ReplayOutput) {
    let s = &out.summary;
    println!(
        "stream {}: {} frames, {} steps, events intra {} inter {} inst {}{}",
        s.stream.map_or("-".to_string(), |v| v.to_string()),
        s.frames,
        s.steps,
        s.events.intra,
        s.events.inter,
        s.events.inst,
        if s.truncated { " (truncated)" } else { "" }
    );
}

pub fn monitor(config: &RunConfig, args: MonitorArgs) -> Result<()> {
    let detectors = Arc::new(load_detectors(config, &args)?);
    let cfg = Arc::new(config.monitor.clone());
    if let Some(trace) = &args.replay {
        let out = replay(trace, Arc::clone(&cfg), detectors, args.dump_features.is_some())?;
        out.write_log(&args.log)?;
        if let Some(p) = &args.dump_features {
            out.write_features(p)?;
        }
        print_summary(&out);
        let labels = match &args.labels {
            Some(p) => Some(read_labels(p)?),
            None => read_labels(trace).ok(),
        };
        if let Some(labels) = labels {
            let score = score_events(&labels, &out.events, &cfg);
            for (level, s) in score.levels.iter() {
                println!(
                    "{level}: events {} detected {} fired {} precision {:.3} recall {:.3} false/100 clean steps {:.3}",
                    s.events,
                    s.detected,
                    s.fired,
                    s.precision(),
                    s.recall(),
                    s.false_per_100_clean_steps()
                );
            }
        }
        println!("event log: {}", args.log.display());
        return Ok(());
    }

    let addr = args.listen.as_deref().expect("clap requires --replay or --listen");
    let log: Arc<Mutex<Vec<LogRecord>>> = Arc::default();
    let factory = {
        let (cfg, detectors, log) = (Arc::clone(&cfg), Arc::clone(&detectors), Arc::clone(&log));
        move || MonitorSession::new(Arc::clone(&cfg), Arc::clone(&detectors), Arc::clone(&log)).expect("validated config")
    };
    // validate before accepting anything
    MonitorSession::new(Arc::clone(&cfg), Arc::clone(&detectors), Arc::default())?;
    let server = serve_socket(addr, factory)?;
    println!("listening on {}", server.local_addr());
    std::io::stdout().flush()?;
    let mut written = 0;
    loop {
        std::thread::sleep(Duration::from_millis(20));
        let (records, ended) = {
            let log = log.lock().unwrap();
            let ended = log.iter().filter(|r| !matches!(r, LogRecord::Event(_))).count();
            (log.len(), ended)
        };
        if records != written {
            write_log(&log, &args.log)?;
            written = records;
        }
        if args.sessions.is_some_and(|n| ended >= n) {
            break;
        }
    }
    let outcomes = server.shutdown();
    write_log(&log, &args.log)?;
    for o in &outcomes {
        println!("{}", serde_json::to_string(o)?);
    }
    println!("event log: {}", args.log.display());
    Ok(())
}

fn write_log(log: &Mutex<Vec<LogRecord>>, path: &Path) -> Result<()> {
    let records = log.lock().unwrap().clone();
    write_atomic(path, |w| {
        for r in &records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn bench(config: &RunConfig, args: BenchArgs) -> Result<()> {
    let report = run_bench(&config.bench, &config.monitor)?;
    println!("{:>8} {:>8} {:>12} {:>12}", "window", "channels", "median_ns", "p90_ns");
    for r in &report.rows {
        println!("{:>8} {:>8} {:>12.1} {:>12.1}", r.window, r.channels, r.median_ns, r.p90_ns);
    }
    println!("median ratio longest/shortest window: {:.3}", report.ratio());
    if let Some(path) = &args.out {
        let json = path.extension().is_some_and(|e| e == "json");
        write_atomic(path, |w| {
            if json {
                serde_json::to_writer_pretty(&mut *w, &report)?;
                w.write_all(b"\n")?;
            } else {
                writeln!(w, "window,channels,median_ns,p90_ns")?;
                for r in &report.rows {
                    writeln!(w, "{},{},{},{}", r.window, r.channels, r.median_ns, r.p90_ns)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

pub fn select_mon(args: SelectMonArgs) -> Result<()> {
    let levels = args.level.levels();
    let [level] = levels[..] else {
        return Err(Error::InvalidInput("select-mon takes a single level".into()));
    };
    let matrix = load_attributions(&args.scores, AttributionFormat::from_path(&args.scores))?;
    let sel = mon::select_mon(&matrix, args.k, level)?;
    println!("{level}: k {} selected {} of {} neurons", sel.k, sel.neurons.len(), matrix.neurons().len());
    for n in &sel.neurons {
        println!("{}", serde_json::to_string(n)?);
    }
    if let Some(path) = &args.out {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &sel)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    Ok(())
}

pub fn reconstruct(config: &RunConfig, args: ReconstructArgs) -> Result<()> {
    let mut rc = config.reconstruct.clone();
    if let Some(p) = &args.templates {
        rc.templates = TemplateSet::load(p)?;
    }
    let raw = read_raw_samples(&args.input)?;
    if raw.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no samples", args.input.display())));
    }
    let (samples, report) = reconstruct_corpus(&raw, &rc)?;
    if samples.is_empty() {
        write_atomic(&report_path(&args.out), |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
        return Err(Error::Rewrite(format!(
            "every sample was skipped; see {}",
            report_path(&args.out).display()
        )));
    }
    emit_corpus(&samples, &report, &args.out)?;
    let count = |l: Level| report.emitted.get(&l).copied().unwrap_or(0);
    println!(
        "{} raw samples -> {} records (intra {}, inter {}), {} skipped, rewriter {}{}",
        report.raw_samples,
        report.total_emitted(),
        count(Level::Intra),
        count(Level::Inter),
        report.skips.len(),
        report.rewriter,
        if report.deterministic { "" } else { " (not deterministic)" }
    );
    for (reason, n) in &report.skipped {
        println!("  skipped {n}: {reason}");
    }
    println!("corpus: {}  report: {}", args.out.display(), report_path(&args.out).display());
    Ok(())
}
