use std::fs;
use std::path::{Path, PathBuf};

use argrel_cli::{run, Manifest, Resolved};

fn argrel(dir: &Path, args: &[&str]) -> i32 {
    let runs = dir.join("runs");
    let mut argv = vec!["argrel".to_string(), "--runs-dir".into(), runs.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn run_dirs(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join("runs"))
        .map(|r| r.map(|e| e.unwrap().path()).filter(|p| p.to_string_lossy().ends_with(suffix)).collect())
        .unwrap_or_default();
    v.sort();
    v
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const FIXTURE: &str = r#"{"doc_id":"d1","propositions":[{"id":0,"text":"the plot is thin","type":"evaluation"},{"id":1,"text":"the cast is large","type":"fact"},{"id":2,"text":"because the budget was small","type":"fact"},{"id":3,"text":"overall fine","type":"evaluation"}],"relations":[{"head":0,"tail":2,"label":"support"}]}
"#;

#[test]
fn stats_on_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.jsonl");
    fs::write(&corpus, FIXTURE).unwrap();
    assert_eq!(argrel(tmp.path(), &["stats", "--corpus", corpus.to_str().unwrap()]), 0);
    let dir = &run_dirs(tmp.path(), "-stats")[0];
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["density"], 0.25);
    assert_eq!(stats["distances"], serde_json::json!({"2": 1}));
    assert_eq!(stats["markers"]["because"]["tails"], 1);
    let m = manifest(dir);
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256, argrel_cli::sha256_file(&corpus).unwrap());
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = tmp.path().join(name);
        assert_eq!(argrel(tmp.path(), &["synth", "--n-docs", "20", "--seed", "7", "--out", out.to_str().unwrap()]), 0);
    }
    let a = fs::read(tmp.path().join("a.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(tmp.path().join("b.jsonl")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(argrel(tmp.path(), &["al-run", "--pool", "p.jsonl", "--test", "t.jsonl"]), 2);
    assert_eq!(argrel(tmp.path(), &["stats", "--no-such-flag"]), 2);
    assert_eq!(argrel(tmp.path(), &["eval", "--test", "t.jsonl"]), 2);
    assert_eq!(argrel(tmp.path(), &["al-run", "--strategy", "nonsense", "--pool", "p", "--test", "t"]), 2);
    // Nothing ran, so no run directory was created.
    assert!(run_dirs(tmp.path(), "").is_empty());
}

#[test]
fn missing_input_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(argrel(tmp.path(), &["stats", "--corpus", "missing.jsonl"]), 1);
}

#[test]
fn config_file_then_section_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "seed = 3\nn_docs = 5\n[synth]\nn_docs = 9\nvocab_size = 50\n").unwrap();
    let out = tmp.path().join("s.jsonl");
    let code = argrel(
        tmp.path(),
        &["--config", cfg.to_str().unwrap(), "synth", "--vocab-size", "60", "--out", out.to_str().unwrap()],
    );
    assert_eq!(code, 0);
    let Resolved::Synth(s) = manifest(&run_dirs(tmp.path(), "-synth")[0]).run else { panic!("wrong command") };
    assert_eq!(s.seed, 3);
    assert_eq!(s.n_docs, 9);
    assert_eq!(s.vocab_size, 60);
    assert_eq!(s.props_per_doc, 8);
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[synth]\nn_docs = \"many\"\n").unwrap();
    assert_eq!(argrel(tmp.path(), &["--config", cfg.to_str().unwrap(), "synth"]), 2);
}

#[test]
fn tag_names_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s.jsonl");
    assert_eq!(argrel(tmp.path(), &["--tag", "mine", "synth", "--n-docs", "2", "--out", out.to_str().unwrap()]), 0);
    assert_eq!(run_dirs(tmp.path(), "-mine").len(), 1);
}

#[test]
fn rerun_reproduces_al_compare_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).display().to_string();
    assert_eq!(argrel(tmp.path(), &["synth", "--n-docs", "30", "--seed", "1", "--out", &p("pool.jsonl")]), 0);
    assert_eq!(argrel(tmp.path(), &["synth", "--n-docs", "15", "--seed", "2", "--out", &p("test.jsonl")]), 0);
    let code = argrel(
        tmp.path(),
        &[
            "al-compare", "--pool", &p("pool.jsonl"), "--test", &p("test.jsonl"),
            "--strategies", "random_prop,max_entropy,disc_marker", "--seeds", "0,1", "--iterations", "2",
            "--dim", "16", "--layers", "1", "--epochs", "1", "--max-positions", "128", "--max-tokens", "128", "--window", "4",
        ],
    );
    assert_eq!(code, 0);
    let first = run_dirs(tmp.path(), "-al-compare")[0].clone();
    assert_eq!(argrel(tmp.path(), &["rerun", first.join("manifest.json").to_str().unwrap()]), 0);
    let dirs = run_dirs(tmp.path(), "-al-compare");
    assert_eq!(dirs.len(), 2);
    for file in ["table.csv", "summary.csv"] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        assert_eq!(a, fs::read(dirs[1].join(file)).unwrap(), "{file} differs");
    }
    assert_eq!(manifest(&dirs[0]).run, manifest(&dirs[1]).run);
    let table = fs::read_to_string(dirs[0].join("table.csv")).unwrap();
    // header + 3 strategies x 2 seeds x 2 iterations
    assert_eq!(table.lines().count(), 1 + 12);
}

#[test]
fn train_eval_and_al_run_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n).display().to_string();
    let small = ["--dim", "16", "--layers", "1", "--epochs", "1", "--max-positions", "128", "--max-tokens", "128", "--window", "4"];
    assert_eq!(argrel(tmp.path(), &["synth", "--n-docs", "20", "--seed", "1", "--out", &p("pool.jsonl")]), 0);
    let (a, b) = (p("pool.jsonl"), p("m.ckpt"));
    let mut train = vec!["train", "--train", &a, "--test", &a, "--out", &b];
    train.extend(small);
    assert_eq!(argrel(tmp.path(), &train), 0);
    let tdir = &run_dirs(tmp.path(), "-train")[0];
    assert!(tdir.join("epochs.csv").exists() && tdir.join("metrics.json").exists());

    let code = argrel(tmp.path(), &["eval", "--test", &p("pool.jsonl"), "--checkpoint", &p("m.ckpt"), "--window", "4", "--max-tokens", "128"]);
    assert_eq!(code, 0);
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dirs(tmp.path(), "-eval")[0].join("metrics.json")).unwrap()).unwrap();
    let train_metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(tdir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(eval["macro_f1"], train_metrics["macro_f1"]);

    let mut al = vec!["al-run", "--strategy", "coreset", "--pool", &a, "--test", &a, "--iterations", "2", "--warm-start", &b];
    al.extend(small);
    assert_eq!(argrel(tmp.path(), &al), 0);
    let adir = &run_dirs(tmp.path(), "-al-run")[0];
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(adir.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["records"].as_array().unwrap().len(), 2);
    assert_eq!(trace["warm_start"], true);
}
