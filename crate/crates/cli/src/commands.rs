use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use argrel::alloop::{
    compare_strategies, flat_table, resume_al, run_al, summary_table, AlConfig, AlOutcome, AlState, AlTrace,
    OracleMode, SimulatedOracle, Variant,
};
use argrel::baseline::{train_baseline, Baseline, LinearConfig, Stopwords};
use argrel::corpus::{generate_synthetic, load_corpus, save_corpus, Corpus, Split, SynthConfig};
use argrel::eval::{evaluate, Metrics, Prediction};
use argrel::markers::MarkerLexicon;
use argrel::pretrain::pretrain;
use argrel::relhead::{load_checkpoint, predict_corpus, save_checkpoint, train, Checkpoint, EpochRecord};
use argrel_annotate::{ExternalOracle, RunInfo, RunStatus, Service, ServiceConfig};

use crate::args::*;
use crate::stats::corpus_stats;
use crate::{usage, Resolved, RunContext};

fn need<'a, T>(v: &'a Option<T>, flag: &str, command: &str) -> anyhow::Result<&'a T> {
    v.as_ref().ok_or_else(|| usage(format!("{command} requires --{flag}")))
}

/// Checks that cannot be expressed as clap requirements because the value
/// may also come from the config file.
pub fn check(run: &Resolved) -> anyhow::Result<()> {
    match run {
        Resolved::Stats(a) => {
            need(&a.corpus, "corpus", "stats")?;
        }
        Resolved::Synth(_) => {}
        Resolved::Train(a) => {
            need(&a.train, "train", "train")?;
        }
        Resolved::Baseline(a) => {
            need(&a.train, "train", "baseline")?;
        }
        Resolved::Pretrain(a) => {
            need(&a.corpus, "corpus", "pretrain")?;
            need(&a.objective, "objective", "pretrain")?;
        }
        Resolved::Transfer(a) => {
            if a.stages.is_empty() {
                return Err(usage("transfer requires at least one --stage"));
            }
        }
        Resolved::AlRun(a) => {
            need(&a.strategy, "strategy", "al-run")?;
            need(&a.al.pool, "pool", "al-run")?;
            need(&a.al.test, "test", "al-run")?;
        }
        Resolved::AlCompare(a) => {
            if a.strategies.is_empty() {
                return Err(usage("al-compare requires --strategies"));
            }
            need(&a.al.pool, "pool", "al-compare")?;
            need(&a.al.test, "test", "al-compare")?;
            if a.with_warm_start {
                need(&a.al.warm_start, "warm-start", "al-compare --with-warm-start")?;
            }
        }
        Resolved::Eval(a) => {
            need(&a.test, "test", "eval")?;
            if a.checkpoint.is_some() == a.baseline.is_some() {
                return Err(usage("eval requires exactly one of --checkpoint and --baseline"));
            }
        }
        Resolved::Serve(a) => {
            if a.strategy.is_some() {
                need(&a.al.pool, "pool", "serve --strategy")?;
                need(&a.al.test, "test", "serve --strategy")?;
            }
        }
    }
    Ok(())
}

/// Input files whose digests go into the manifest.
pub fn inputs(run: &Resolved) -> Vec<PathBuf> {
    let mut v: Vec<Option<&PathBuf>> = Vec::new();
    match run {
        Resolved::Stats(a) => v.extend([a.corpus.as_ref(), a.markers.as_ref()]),
        Resolved::Synth(_) => {}
        Resolved::Train(a) => v.extend([a.train.as_ref(), a.test.as_ref(), a.init.as_ref()]),
        Resolved::Baseline(a) => v.extend([a.train.as_ref(), a.test.as_ref(), a.stopwords.as_ref()]),
        Resolved::Pretrain(a) => v.extend([a.corpus.as_ref(), a.donors.as_ref()]),
        Resolved::Transfer(a) => {
            v.extend(a.stages.iter().map(Some));
            v.extend([a.init.as_ref(), a.test.as_ref()]);
        }
        Resolved::AlRun(a) => v.extend([a.al.pool.as_ref(), a.al.test.as_ref(), a.al.warm_start.as_ref(), a.resume.as_ref()]),
        Resolved::AlCompare(a) => v.extend([a.al.pool.as_ref(), a.al.test.as_ref(), a.al.warm_start.as_ref()]),
        Resolved::Eval(a) => v.extend([a.test.as_ref(), a.checkpoint.as_ref(), a.baseline.as_ref()]),
        Resolved::Serve(a) => v.extend([a.al.pool.as_ref(), a.al.test.as_ref(), a.al.warm_start.as_ref()]),
    }
    v.into_iter().flatten().cloned().collect()
}

pub fn dispatch(run: Resolved, ctx: &RunContext) -> anyhow::Result<()> {
    match run {
        Resolved::Stats(a) => stats(a, ctx),
        Resolved::Synth(a) => synth(a, ctx),
        Resolved::Train(a) => train_cmd(a, ctx),
        Resolved::Baseline(a) => baseline(a, ctx),
        Resolved::Pretrain(a) => pretrain_cmd(a, ctx),
        Resolved::Transfer(a) => transfer(a, ctx),
        Resolved::AlRun(a) => al_run(a, ctx),
        Resolved::AlCompare(a) => al_compare(a, ctx),
        Resolved::Eval(a) => eval(a, ctx),
        Resolved::Serve(a) => serve(a, ctx),
    }
}

fn load(path: &Path, split: Split) -> anyhow::Result<Corpus> {
    load_corpus(path, split).with_context(|| format!("loading {}", path.display()))
}

fn load_ckpt(path: &Path) -> anyhow::Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, serde_json::to_string_pretty(value)?)
}

fn epochs_csv(epochs: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for e in epochs {
        let _ = writeln!(s, "{},{:.6},{:.6}", e.epoch, e.loss, e.accuracy);
    }
    s
}

fn metrics_line(m: &Metrics) -> String {
    format!(
        "macro-F1 {:.4} (support {:.4}, attack {:.4}, no_rel {:.4}; {} pairs{})",
        m.macro_f1,
        m.support.f1,
        m.attack.f1,
        m.no_rel.f1,
        m.pairs,
        if m.two_class { ", two-class" } else { "" }
    )
}

fn stats(a: StatsArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let corpus = load(a.corpus.as_ref().expect("checked"), Split::Train)?;
    let lexicon = match &a.markers {
        Some(p) => MarkerLexicon::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => MarkerLexicon::default(),
    };
    let report = corpus_stats(&corpus, a.window, &lexicon)?;
    print!("{report}");
    write_json(&ctx.path("stats.json"), &report)
}

fn synth(a: SynthArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_docs: a.n_docs,
        props_per_doc: a.props_per_doc,
        relation_rate: a.relation_rate,
        distance_skew: a.distance_skew,
        marker_plant_prob: a.marker_plant_prob,
        vocab_size: a.vocab_size,
        attack_rate: a.attack_rate,
        shared_word_prob: a.shared_word_prob,
        vocab_offset: a.vocab_offset,
        doc_prefix: a.doc_prefix,
        seed: a.seed,
    };
    let corpus = generate_synthetic(&cfg)?;
    let out = a.out.unwrap_or_else(|| ctx.path("corpus.jsonl"));
    save_corpus(&corpus, &out).with_context(|| format!("writing {}", out.display()))?;
    println!("{} documents, {} relations -> {}", corpus.documents.len(), corpus.num_relations(), out.display());
    Ok(())
}

fn evaluate_ckpt(ckpt: &Checkpoint, test: &Corpus, window: &argrel::windowing::WindowConfig) -> anyhow::Result<Metrics> {
    let preds: Vec<Prediction> = predict_corpus(test, ckpt, window)?.iter().map(Prediction::from).collect();
    Ok(evaluate(&preds, test, window)?)
}

fn train_cmd(a: TrainArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let corpus = load(a.train.as_ref().expect("checked"), Split::Train)?;
    let window = a.model.window_config();
    let init = a.init.as_deref().map(load_ckpt).transpose()?;
    let enc = match &init {
        Some(c) => c.config.clone(),
        None => a.model.encoder_config(),
    };
    let out = train(&corpus, &window, &a.model.train_config(), &enc, init.as_ref())?;
    let path = a.out.unwrap_or_else(|| ctx.path("model.ckpt"));
    save_checkpoint(&out.checkpoint, &path)?;
    write(&ctx.path("epochs.csv"), epochs_csv(&out.epochs))?;
    if let Some(last) = out.epochs.last() {
        println!("epoch {} loss {:.4} accuracy {:.4}", last.epoch, last.loss, last.accuracy);
    }
    if let Some(test) = &a.test {
        let m = evaluate_ckpt(&out.checkpoint, &load(test, Split::Test)?, &window)?;
        println!("{}", metrics_line(&m));
        write_json(&ctx.path("metrics.json"), &m)?;
    }
    println!("checkpoint -> {}", path.display());
    Ok(())
}

fn baseline(a: BaselineArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let corpus = load(a.train.as_ref().expect("checked"), Split::Train)?;
    let window = a.window.config();
    let stopwords = match &a.stopwords {
        Some(p) => Stopwords::from_file(p)?,
        None => Stopwords::default(),
    };
    let cfg = LinearConfig { reg: a.reg, epochs: a.epochs, seed: a.seed };
    let model = train_baseline(&corpus, &window, &cfg, stopwords)?;
    let path = a.out.unwrap_or_else(|| ctx.path("baseline.model"));
    model.save(&path)?;
    if let Some(test) = &a.test {
        let test = load(test, Split::Test)?;
        let m = evaluate(&model.predict(&test, &window), &test, &window)?;
        println!("{}", metrics_line(&m));
        write_json(&ctx.path("metrics.json"), &m)?;
    }
    println!("baseline -> {}", path.display());
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let corpus = load(a.corpus.as_ref().expect("checked"), Split::Unlabeled)?;
    let donors = a.donors.as_deref().map(|p| load(p, Split::Unlabeled)).transpose()?;
    let objective = a.objective.expect("checked");
    let out = pretrain(&corpus, objective, &a.model.train_config(), &a.model.encoder_config(), donors.as_ref())?;
    let path = a.out.unwrap_or_else(|| ctx.path("encoder.ckpt"));
    save_checkpoint(&out.checkpoint, &path)?;
    write(&ctx.path("epochs.csv"), epochs_csv(&out.epochs))?;
    if let (Some(first), Some(last)) = (out.epochs.first(), out.epochs.last()) {
        println!("{objective}: loss {:.4} -> {:.4} over {} epochs", first.loss, last.loss, out.epochs.len());
    }
    println!("encoder -> {}", path.display());
    Ok(())
}

fn transfer(a: TransferArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let window = a.model.window_config();
    let test = a.test.as_deref().map(|p| load(p, Split::Test)).transpose()?;
    let mut current = a.init.as_deref().map(load_ckpt).transpose()?;
    let mut table = String::from("stage,corpus,macro_f1,f1_support,f1_attack,f1_no_rel\n");
    for (i, stage) in a.stages.iter().enumerate() {
        let corpus = load(stage, Split::Train)?;
        let enc = current.as_ref().map(|c| c.config.clone()).unwrap_or_else(|| a.model.encoder_config());
        let out = train(&corpus, &window, &a.model.train_config(), &enc, current.as_ref())?;
        save_checkpoint(&out.checkpoint, &ctx.path(&format!("stage-{}.ckpt", i + 1)))?;
        if let Some(test) = &test {
            let m = evaluate_ckpt(&out.checkpoint, test, &window)?;
            println!("stage {} ({}): {}", i + 1, stage.display(), metrics_line(&m));
            let _ = writeln!(
                table,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                i + 1,
                stage.display(),
                m.macro_f1,
                m.support.f1,
                m.attack.f1,
                m.no_rel.f1
            );
        }
        current = Some(out.checkpoint);
    }
    if test.is_some() {
        write(&ctx.path("metrics.csv"), table)?;
    }
    Ok(())
}

fn eval(a: EvalArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let test = load(a.test.as_ref().expect("checked"), Split::Test)?;
    let window = a.window.config();
    let m = match (&a.checkpoint, &a.baseline) {
        (Some(c), _) => evaluate_ckpt(&load_ckpt(c)?, &test, &window)?,
        (None, Some(b)) => evaluate(&Baseline::load(b)?.predict(&test, &window), &test, &window)?,
        (None, None) => unreachable!("checked"),
    };
    println!("{}", metrics_line(&m));
    let c = &m.confusion.counts;
    println!("confusion (rows gold, columns predicted: support attack no_rel)");
    for (name, row) in ["support", "attack", "no_rel"].iter().zip(c) {
        println!("{name:<8} {:>7} {:>7} {:>7}", row[0], row[1], row[2]);
    }
    write_json(&ctx.path("metrics.json"), &m)
}

fn al_config(p: &AlParams, strategy: argrel::acquire::Strategy, oracle: OracleMode) -> AlConfig {
    AlConfig {
        iterations: p.iterations,
        budget: p.budget,
        strategy,
        window: p.model.window_config(),
        train: p.model.train_config(),
        encoder: p.model.encoder_config(),
        mc_passes: p.mc_passes,
        oracle,
        seed: p.model.seed,
    }
}

/// Encoder shape and model of a warm-start checkpoint override the flags.
fn with_warm(mut cfg: AlConfig, warm: Option<&Checkpoint>) -> AlConfig {
    if let Some(w) = warm {
        cfg.encoder = w.config.clone();
    }
    cfg
}

fn dataset_name(explicit: Option<&str>, pool: &Path) -> String {
    explicit
        .map(String::from)
        .unwrap_or_else(|| pool.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "pool".into()))
}

fn write_trace(trace: &AlTrace, dataset: &str, ctx: &RunContext) -> anyhow::Result<()> {
    write_json(&ctx.path("trace.json"), trace)?;
    write(&ctx.path("table.csv"), flat_table(dataset, std::slice::from_ref(trace)))?;
    for r in &trace.records {
        println!("iteration {:>2} labeled {:>5} {}", r.iteration, r.labeled, metrics_line(&r.metrics));
    }
    if trace.exhausted {
        println!("pool exhausted after {} iterations", trace.records.len());
    }
    Ok(())
}

fn al_run(a: AlRunArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let pool_path = a.al.pool.clone().expect("checked");
    let pool = load(&pool_path, Split::Train)?;
    let test = load(a.al.test.as_ref().expect("checked"), Split::Test)?;
    let warm = a.al.warm_start.as_deref().map(load_ckpt).transpose()?;
    let mode = match a.oracle {
        OracleKind::Simulated => OracleMode::Simulated,
        OracleKind::External => OracleMode::External,
    };
    let cfg = with_warm(al_config(&a.al, a.strategy.expect("checked"), mode), warm.as_ref());
    let state: Option<AlState> = match &a.resume {
        Some(p) => Some(serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    let outcome = match a.oracle {
        OracleKind::Simulated => match state {
            Some(s) => resume_al(s, &pool.documents, &test, &cfg, warm.as_ref(), &mut SimulatedOracle)?,
            None => run_al(&pool.documents, &test, &cfg, warm.as_ref(), &mut SimulatedOracle)?,
        },
        OracleKind::External => run_external(&a.service, &pool, &test, &cfg, warm.as_ref(), state, ctx)?,
    };
    finish(outcome, &dataset_name(None, &pool_path), ctx)
}

fn finish(outcome: AlOutcome, dataset: &str, ctx: &RunContext) -> anyhow::Result<()> {
    match outcome {
        AlOutcome::Completed(trace) => write_trace(&trace, dataset, ctx),
        AlOutcome::Suspended(state) => {
            let path = ctx.path("state.json");
            write_json(&path, &state)?;
            println!("no labels before the timeout; run suspended at iteration {}", state.iteration);
            println!("resume with --resume {}", path.display());
            Ok(())
        }
    }
}

fn run_external(
    p: &ServiceParams,
    pool: &Corpus,
    test: &Corpus,
    cfg: &AlConfig,
    warm: Option<&Checkpoint>,
    state: Option<AlState>,
    ctx: &RunContext,
) -> anyhow::Result<AlOutcome> {
    let service = Service::new(ServiceConfig {
        data_dir: p.data_dir.clone(),
        overlap: p.overlap,
        ..Default::default()
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let (bound_tx, bound_rx) = std::sync::mpsc::channel();
    let server = rt.spawn(argrel_annotate::serve(
        service.clone(),
        p.listen,
        move |addr| {
            let _ = bound_tx.send(addr);
        },
        async {
            let _ = stopped.await;
        },
    ));
    let Ok(addr) = bound_rx.recv() else {
        rt.block_on(server)??;
        return Err(anyhow!("annotation service stopped before binding"));
    };
    println!("annotation service at http://{addr}/api/v1");
    let size = pool.num_propositions();
    let run_id = ctx.dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    service.start_run(
        RunInfo {
            run_id,
            strategy: cfg.strategy,
            iterations: cfg.iterations,
            budget: cfg.resolved_budget(size),
            window: cfg.window,
        },
        Arc::new(pool.documents.clone()),
    );
    let mut oracle = ExternalOracle { service: service.clone(), timeout: Duration::from_secs(p.timeout_secs) };
    let outcome = match state {
        Some(s) => resume_al(s, &pool.documents, test, cfg, warm, &mut oracle),
        None => run_al(&pool.documents, test, cfg, warm, &mut oracle),
    };
    service.set_status(match &outcome {
        Ok(AlOutcome::Suspended(_)) => RunStatus::Suspended,
        _ => RunStatus::Completed,
    });
    let _ = stop.send(());
    rt.block_on(server)??;
    Ok(outcome?)
}

fn al_compare(a: AlCompareArgs, ctx: &RunContext) -> anyhow::Result<()> {
    let pool_path = a.al.pool.clone().expect("checked");
    let pool = load(&pool_path, Split::Train)?;
    let test = load(a.al.test.as_ref().expect("checked"), Split::Test)?;
    let warm = a.al.warm_start.as_deref().map(load_ckpt).transpose()?;
    let mut variants: Vec<Variant> = a.strategies.iter().map(|&s| Variant { strategy: s, warm_start: false }).collect();
    if a.with_warm_start {
        variants.extend(a.strategies.iter().map(|&s| Variant { strategy: s, warm_start: true }));
    }
    let base = al_config(&a.al, a.strategies[0], OracleMode::Simulated);
    let dataset = dataset_name(a.dataset.as_deref(), &pool_path);
    let warm_ref = if a.with_warm_start { warm.as_ref() } else { None };
    let cfg = with_warm(base, warm_ref);
    let report = compare_strategies(&dataset, &pool.documents, &test, &cfg, &variants, &a.seeds, warm_ref)?;
    write_json(&ctx.path("report.json"), &report)?;
    write(&ctx.path("table.csv"), flat_table(&dataset, &report.traces))?;
    let summary = summary_table(&report.summary);
    write(&ctx.path("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn serve(a: ServeArgs, ctx: &RunContext) -> anyhow::Result<()> {
    if let Some(strategy) = a.strategy {
        let pool_path = a.al.pool.clone().expect("checked");
        let pool = load(&pool_path, Split::Train)?;
        let test = load(a.al.test.as_ref().expect("checked"), Split::Test)?;
        let warm = a.al.warm_start.as_deref().map(load_ckpt).transpose()?;
        let cfg = with_warm(al_config(&a.al, strategy, OracleMode::External), warm.as_ref());
        let outcome = run_external(&a.service, &pool, &test, &cfg, warm.as_ref(), None, ctx)?;
        return finish(outcome, &dataset_name(None, &pool_path), ctx);
    }
    let service = Service::new(ServiceConfig { data_dir: a.service.data_dir.clone(), overlap: a.service.overlap, ..Default::default() })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(argrel_annotate::serve(
        service,
        a.service.listen,
        |addr| println!("annotation service at http://{addr}/api/v1 (no active run)"),
        async {
            let _ = tokio::signal::ctrl_c().await;
        },
    ))?;
    Ok(())
}
