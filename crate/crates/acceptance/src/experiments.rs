use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use argrel::acquire::Strategy;
use argrel::alloop::{compare_strategies, AlConfig, SummaryRow, Variant};
use argrel::corpus::{generate_synthetic, Corpus, Split, SynthConfig};
use argrel::encoder::EncoderConfig;
use argrel::relhead::{train, TrainConfig};
use argrel::windowing::{WindowConfig, WindowMode};

use crate::{err, require, timed, Check};

fn corpus(n_docs: usize, seed: u64, prefix: &str, split: Split) -> Result<Corpus, String> {
    let c = generate_synthetic(&SynthConfig { n_docs, marker_plant_prob: 1.0, seed, doc_prefix: prefix.into(), ..Default::default() })
        .map_err(err)?;
    Ok(Corpus { split, ..c })
}

fn al_config(dim: usize, epochs: usize, iterations: usize) -> AlConfig {
    AlConfig {
        iterations,
        window: WindowConfig { window: 4, max_tokens: 128, mode: WindowMode::HeadGiven },
        train: TrainConfig { epochs, lr: 3e-3, warmup_steps: 20, batch_size: 8, ..Default::default() },
        encoder: EncoderConfig { dim, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.1, max_positions: 128, seed: 0 },
        mc_passes: 5,
        ..Default::default()
    }
}

fn means(rows: &[SummaryRow]) -> BTreeMap<(String, usize), f64> {
    rows.iter().map(|r| ((r.variant.label(), r.iteration), r.mean_macro_f1)).collect()
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

pub fn active_learning() -> Check {
    timed(1200, || {
        let pool = corpus(500, 1, "synth", Split::Train)?;
        let test = corpus(200, 2, "t", Split::Test)?;
        let variants: Vec<Variant> = [Strategy::RandomProp, Strategy::DiscMarker, Strategy::MaxEntropy]
            .into_iter()
            .map(|strategy| Variant { strategy, warm_start: false })
            .collect();
        let cmp = compare_strategies("synthetic", &pool.documents, &test, &al_config(32, 6, 3), &variants, &SEEDS, None).map_err(err)?;
        let m = means(&cmp.summary);
        let get = |s: &str, t: usize| m[&(s.to_string(), t)];
        let (random1, disc1) = (get("random_prop", 1), get("disc_marker", 1));
        let (random3, entropy3) = (get("random_prop", 3), get("max_entropy", 3));
        let detail = format!(
            "iteration 1: disc_marker {disc1:.4} vs random_prop {random1:.4}; iteration 3: max_entropy {entropy3:.4} vs random_prop {random3:.4}"
        );
        require!(disc1 > random1, "{detail}");
        require!(entropy3 >= random3, "{detail}");
        Ok(detail)
    })
}

pub fn warm_start() -> Check {
    timed(1200, || {
        let pool = corpus(150, 1, "synth", Split::Train)?;
        let test = corpus(200, 2, "t", Split::Test)?;
        let source = corpus(300, 77, "src", Split::Train)?;
        let cfg = al_config(16, 8, 10);
        let checkpoint = train(&source, &cfg.window, &cfg.train, &cfg.encoder, None).map_err(err)?.checkpoint;
        let variants = [true, false].map(|warm_start| Variant { strategy: Strategy::RandomProp, warm_start });
        let cmp = compare_strategies("synthetic", &pool.documents, &test, &cfg, &variants, &SEEDS, Some(&checkpoint)).map_err(err)?;
        let m = means(&cmp.summary);
        let gap = |t: usize| m[&("random_prop+tl".to_string(), t)] - m[&("random_prop".to_string(), t)];
        let gaps: Vec<String> = (1..=10).map(|t| format!("{:+.3}", gap(t))).collect();
        let detail = format!("warm minus cold by iteration: {}", gaps.join(" "));
        require!(gap(1) >= 0.0, "{detail}");
        require!(gap(10) <= gap(1), "{detail}");
        Ok(detail)
    })
}

fn cli(runs: &Path, args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["argrel".to_string(), "--runs-dir".into(), runs.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    match argrel_cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("argrel {} exited with {code}", args.join(" "))),
    }
}

fn run_dirs(runs: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(runs)
        .map(|r| r.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.to_string_lossy().ends_with(suffix)).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn same_files(a: &Path, b: &Path, files: &[&str]) -> Result<(), String> {
    for f in files {
        let x = fs::read(a.join(f)).map_err(err)?;
        let y = fs::read(b.join(f)).map_err(err)?;
        require!(x == y, "{f} differs between {} and {}", a.display(), b.display());
    }
    Ok(())
}

/// Simulated runs repeated from their manifests give identical tables.
pub fn reproducibility() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let runs = tmp.path().join("runs");
    let p = |n: &str| tmp.path().join(n).display().to_string();
    let (pool, test) = (p("pool.jsonl"), p("test.jsonl"));
    cli(&runs, &["synth", "--n-docs", "40", "--marker-plant-prob", "1", "--seed", "1", "--out", &pool])?;
    cli(&runs, &["synth", "--n-docs", "20", "--seed", "2", "--doc-prefix", "t", "--out", &test])?;
    let model = ["--dim", "16", "--layers", "1", "--epochs", "2", "--max-positions", "128", "--max-tokens", "128", "--window", "4"];
    let mut compare = vec!["--tag", "cmp", "al-compare", "--pool", &pool, "--test", &test, "--iterations", "3", "--seeds", "0,1"];
    compare.extend(["--strategies", "random_prop,random_ctx,max_entropy,bald,coreset,novel_vocab,disc_marker,no_disc_marker"]);
    compare.extend(model);
    cli(&runs, &compare)?;
    let mut single = vec!["--tag", "one", "al-run", "--strategy", "bald", "--pool", &pool, "--test", &test, "--iterations", "3"];
    single.extend(model);
    cli(&runs, &single)?;
    for (tag, files) in [("-cmp", &["table.csv", "summary.csv", "report.json"][..]), ("-one", &["table.csv", "trace.json"][..])] {
        let first = run_dirs(&runs, tag);
        require!(first.len() == 1, "expected one {tag} run, found {}", first.len());
        cli(&runs, &["rerun", &first[0].join("manifest.json").display().to_string()])?;
        let dirs = run_dirs(&runs, tag);
        require!(dirs.len() == 2, "rerun of {tag} did not create a run directory");
        same_files(&dirs[0], &dirs[1], files)?;
    }
    Ok("al-compare (8 strategies, 2 seeds) and al-run tables byte-identical after rerun".into())
}
