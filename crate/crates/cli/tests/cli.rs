use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lightlink_core::synthetic::{SyntheticConfig, SyntheticTask};
use serde_json::Value;

fn lightlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightlink"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small generated task plus a config file with matching model sizes.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let task = SyntheticTask::generate(&SyntheticConfig {
            entities: 15,
            train_mentions: 60,
            test_mentions: 20,
            nil_prob: 0.1,
            ..SyntheticConfig::default()
        })
        .unwrap();
        task.write_files(&root).unwrap();
        std::fs::write(
            root.join("run.conf"),
            "# small model for the generated task\n\
             kb = kb.tsv\n\
             train = train.jsonl\n\
             words = words.vec\n\
             entities = entities.vec\n\
             word_dim = 16\n\
             char_emb_dim = 8\n\
             char_lstm_dim = 8\n\
             cnn_feature_maps = 8\n\
             context_lstm_dim = 4\n\
             entity_emb_dim = 8\n\
             hidden_dim = 16\n\
             max_epochs = 2\n\
             seed = 3\n",
        )
        .unwrap();
        Fixture { _dir: dir, root }
    })
}

#[test]
fn help_documents_every_key_and_command() {
    let out = lightlink(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for cmd in [
        "preprocess",
        "gen-candidates",
        "train",
        "link",
        "eval",
        "ablate",
        "simulate",
        "gradcheck",
        "count-params",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    for key in [
        "kb",
        "use_coherence",
        "cnn_windows",
        "holdout_fraction",
        "max_neighbors",
        "threads",
    ] {
        assert!(text.contains(&format!("  {key} ")), "{key} missing from help");
    }
    let sub = lightlink(&["train", "--help"]);
    assert_eq!(code(&sub), 0);
    assert!(stdout(&sub).contains("--checkpoint"));
}

#[test]
fn argument_errors_exit_with_one() {
    assert_eq!(code(&lightlink(&[])), 1);
    assert_eq!(code(&lightlink(&["frobnicate"])), 1);
    assert_eq!(code(&lightlink(&["gradcheck", "--seed", "many"])), 1);
    assert_eq!(code(&lightlink(&["gradcheck", "--set", "nonsense"])), 1);
}

#[test]
fn unknown_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "seed = 1\nnum_epochs = 4\n").unwrap();
    let out = lightlink(&["count-params", "--config", conf.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`num_epochs`"), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad.conf:2"));

    let out = lightlink(&["count-params", "--set", "learning_rat=0.1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`learning_rat`"));
}

#[test]
fn missing_paths_exit_with_one() {
    let out = lightlink(&["preprocess"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("`corpus`"), "{}", stderr(&out));

    let out = lightlink(&[
        "preprocess",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "-o",
        "/tmp/x.jsonl",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn malformed_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("broken.jsonl");
    std::fs::write(&corpus, "{\"doc_id\": \"d1\", \"text\": \"abc\"\n").unwrap();
    let out_path = dir.path().join("out.jsonl");
    let out = lightlink(&[
        "preprocess",
        "--corpus",
        corpus.to_str().unwrap(),
        "-o",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("broken.jsonl:1"), "{}", stderr(&out));
}

#[test]
fn gradcheck_passes_on_the_builtin_model() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.json");
    let out = lightlink(&["gradcheck", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["passed"], Value::Bool(true));
    assert_eq!(r["command"], "gradcheck");
    assert!(r["config"]["seed"].is_u64());
}

#[test]
fn count_params_reports_the_default_ledger() {
    let out = lightlink(&["count-params"]);
    assert_eq!(code(&out), 0);
    assert!(
        stdout(&out).contains("total 620353 parameters (40 character rows)"),
        "{}",
        stdout(&out)
    );
}

#[test]
fn flags_override_the_config_file() {
    let f = fixture();
    let out_path = f.path("flags/sim.jsonl");
    let out = lightlink(&[
        "simulate",
        "--config",
        &f.path("run.conf"),
        "--corpus",
        &f.path("test.jsonl"),
        "--seed",
        "11",
        "--set",
        "rate=0.5",
        "-o",
        &out_path,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let meta = read_json(Path::new(&format!("{out_path}.meta.json")));
    assert_eq!(meta["config"]["seed"], 11);
    assert_eq!(meta["config"]["rate"], 0.5);
    assert_eq!(meta["config"]["model"]["word_dim"], 16);
    assert_eq!(meta["inputs"]["corpus"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_at_rate_zero_copies_the_corpus() {
    let f = fixture();
    for kind in ["typos", "reordering"] {
        let out_path = f.path(&format!("sim0/{kind}.jsonl"));
        let out = lightlink(&[
            "simulate",
            "--corpus",
            &f.path("test.jsonl"),
            "--simulation",
            kind,
            "--rate",
            "0",
            "-o",
            &out_path,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert_eq!(
            std::fs::read(&out_path).unwrap(),
            std::fs::read(f.path("test.jsonl")).unwrap()
        );
    }
}

#[test]
fn preprocess_and_candidates_write_sidecars() {
    let f = fixture();
    let pre = f.path("pre/test.jsonl");
    let out = lightlink(&["preprocess", "--corpus", &f.path("test.jsonl"), "-o", &pre]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first: Value = serde_json::from_str(std::fs::read_to_string(&pre).unwrap().lines().next().unwrap()).unwrap();
    assert!(first["tokens"].as_array().is_some_and(|t| !t.is_empty()));
    assert!(Path::new(&format!("{pre}.meta.json")).is_file());

    let cands = f.path("pre/candidates.jsonl");
    let out = lightlink(&[
        "gen-candidates",
        "--config",
        &f.path("run.conf"),
        "--corpus",
        &f.path("test.jsonl"),
        "-k",
        "5",
        "-o",
        &cands,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("recall@5"));
    let lines = std::fs::read_to_string(&cands).unwrap();
    assert_eq!(lines.lines().count(), 20);
    let meta = read_json(Path::new(&format!("{cands}.meta.json")));
    for key in ["kb", "words", "corpus", "train"] {
        assert!(meta["inputs"][key]["sha256"].is_string(), "{key}");
    }
    assert_eq!(meta["output"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn train_link_and_eval_end_to_end() {
    let f = fixture();
    let conf = f.path("run.conf");
    let mut checkpoints = Vec::new();
    let ckpt = f.path("e2e/model.ckpt");
    for _ in 0..2 {
        let out = lightlink(&[
            "train",
            "--config",
            &conf,
            "--checkpoint",
            &ckpt,
            "--report",
            &f.path("e2e/train.json"),
            "--threads",
            "1",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        checkpoints.push(std::fs::read(&ckpt).unwrap());
    }
    assert!(
        checkpoints[0] == checkpoints[1],
        "checkpoints differ between identical runs"
    );
    let report = read_json(Path::new(&f.path("e2e/train.json")));
    assert_eq!(report["training"]["epochs"].as_array().unwrap().len(), 2);
    assert!(report["training"]["parameters"]
        .as_array()
        .is_some_and(|p| !p.is_empty()));

    let preds = f.path("e2e/predictions.tsv");
    let out = lightlink(&[
        "link",
        "--config",
        &conf,
        "--checkpoint",
        &ckpt,
        "--corpus",
        &f.path("test.jsonl"),
        "--tau",
        "0",
        "-o",
        &preds,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(tsv.lines().count(), 20);
    assert!(tsv.lines().all(|l| l.split('\t').nth(2) != Some("NIL")), "{tsv}");
    let meta = read_json(Path::new(&format!("{preds}.meta.json")));
    assert_eq!(meta["config"]["tau"], 0.0);
    assert!(meta["inputs"]["checkpoint"]["sha256"].is_string());

    // Linking from the candidate cache gives the same predictions.
    let cands = f.path("e2e/candidates.jsonl");
    let out = lightlink(&[
        "gen-candidates",
        "--config",
        &conf,
        "--corpus",
        &f.path("test.jsonl"),
        "-o",
        &cands,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cached = f.path("e2e/cached.tsv");
    let out = lightlink(&[
        "link",
        "--config",
        &conf,
        "--checkpoint",
        &ckpt,
        "--corpus",
        &f.path("test.jsonl"),
        "--candidates",
        &cands,
        "--tau",
        "0",
        "-o",
        &cached,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&cached).unwrap(), tsv);

    let eval = f.path("e2e/eval.json");
    let out = lightlink(&[
        "eval",
        "--config",
        &conf,
        "--checkpoint",
        &ckpt,
        "--corpus",
        &f.path("test.jsonl"),
        "--report",
        &eval,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(Path::new(&eval));
    let e = &r["eval"];
    assert_eq!(e["n_mentions"], 20);
    let acc = e["accuracy"].as_f64().unwrap();
    assert_eq!(acc, e["n_correct"].as_f64().unwrap() / 20.0);
    assert!(r["tau"].is_f64());
    assert!(stdout(&out).starts_with("accuracy"));
}

#[test]
fn ablate_reports_each_removal() {
    let f = fixture();
    let report = f.path("ablate/report.json");
    let out = lightlink(&[
        "ablate",
        "--config",
        &f.path("run.conf"),
        "--test",
        &f.path("test.jsonl"),
        "--set",
        "max_epochs=1",
        "--report",
        &report,
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(Path::new(&report));
    let rows = r["ablation"]["rows"].as_array().unwrap();
    let labels: Vec<&str> = rows.iter().map(|row| row["variant"].as_str().unwrap()).collect();
    assert_eq!(labels, ["without-char", "without-alignment", "without-cnn"]);
}
