use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tfbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfbeam"))
        .args(args)
        .env_remove("TFBEAM_CORPUS")
        .output()
        .expect("spawn tfbeam")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn echo_line(o: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&o.stdout);
    let line = stdout.lines().next().expect("config echo");
    serde_json::from_str(line).expect("echo is JSON")
}

fn gen(dir: &Path, seed: &str, jobs: &str) -> Output {
    let out = dir.to_str().unwrap();
    tfbeam(&["--jobs", jobs, "gen-corpus", "--count", "3", "--duration", "0.5", "--seed", seed, "--out", out])
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn interferer_count_outside_range_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfbeam(&["gen-corpus", "--interferers", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn missing_output_dir_is_usage_error() {
    assert_eq!(code(&tfbeam(&["gen-corpus", "--count", "1"])), 2);
    assert_eq!(code(&tfbeam(&["run", "--method", "mvdr"])), 2);
}

#[test]
fn neural_method_without_checkpoint_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tfbeam(&["run", "--corpus", dir.path().to_str().unwrap(), "--method", "nn-tflc-mpdr"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn unknown_method_is_usage_error() {
    assert_eq!(code(&tfbeam(&["run", "--corpus", "/nonexistent", "--method", "delay-and-sum"])), 2);
}

#[test]
fn missing_corpus_is_runtime_error() {
    let o = tfbeam(&["run", "--corpus", "/nonexistent/corpus", "--method", "mvdr"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn corpus_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tfbeam"))
        .args(["gen-corpus", "--count", "1", "--duration", "0.25", "--interferers", "2"])
        .env("TFBEAM_CORPUS", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn config_file_is_echoed_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[gen-corpus]\ncount = 1\nseed = 11\nduration_s = 0.25\ninterferers = 3\n").unwrap();
    let out = dir.path().join("c");
    let o = tfbeam(&[
        "--config",
        cfg.to_str().unwrap(),
        "gen-corpus",
        "--seed",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = echo_line(&o);
    assert_eq!(v["command"], "gen-corpus");
    assert_eq!(v["config"]["count"], 1);
    assert_eq!(v["config"]["seed"], 12);
    assert_eq!(v["config"]["interferers"], 3);
    assert_eq!(v["config"]["duration_s"], 0.25);
}

#[test]
fn unknown_config_table_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "[generate]\ncount = 1\n").unwrap();
    assert_eq!(code(&tfbeam(&["--config", cfg.to_str().unwrap(), "gen-corpus", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&tfbeam(&["--config", "/nonexistent.toml", "gen-corpus", "--out", "/tmp/x"])), 2);
}

#[test]
fn corpus_is_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&gen(a.path(), "3", "1")), 0);
    assert_eq!(code(&gen(b.path(), "3", "4")), 0);
    assert_eq!(code(&gen(c.path(), "4", "2")), 0);
    let fa = files(a.path());
    assert!(!fa.is_empty());
    assert_eq!(fa, files(b.path()));
    assert_ne!(fa, files(c.path()));
}

#[test]
fn run_evaluate_and_plot_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let cs = corpus.to_str().unwrap();
    assert_eq!(code(&gen(&corpus, "9", "2")), 0);

    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out = dir.path().join(format!("out{jobs}"));
        let o = tfbeam(&[
            "--jobs", jobs, "run", "--corpus", cs, "--method", "tflc-mpdr", "--iters", "2", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(echo_line(&o)["config"]["iters"], 2);
        outputs.push(files(&out));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0].len(), 6);
    assert!(outputs[0].iter().any(|(p, _)| p.extension().is_some_and(|e| e == "tfwf")));

    let out = dir.path().join("out1");
    let o = tfbeam(&["run", "--corpus", cs, "--method", "mvdr", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let metrics = dir.path().join("metrics");
    let o = tfbeam(&[
        "evaluate", "--corpus", cs, "--outputs", out.to_str().unwrap(), "--out", metrics.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(echo_line(&o)["config"]["methods"], serde_json::json!(["mvdr", "tflc-mpdr"]));
    let csv = fs::read_to_string(metrics.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(metrics.join("metrics.json")).unwrap()).unwrap();
    let aggs = json.as_array().expect("aggregate list");
    assert!(aggs.iter().any(|a| a["method"] == "mvdr"));

    let tfwf = out.join("tflc-mpdr/mix00000.tfwf");
    let img = dir.path().join("w.pgm");
    let o = tfbeam(&["plot", "--input", tfwf.to_str().unwrap(), "--out", img.to_str().unwrap(), "--beam", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read(&img).unwrap().starts_with(b"P5\n"));
    let wav = out.join("mvdr/mix00000.wav");
    let img = dir.path().join("s.png");
    let o = tfbeam(&["plot", "--input", wav.to_str().unwrap(), "--out", img.to_str().unwrap(), "--floor-db", "-40"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(img.exists());
    let o = tfbeam(&["plot", "--input", corpus.join("manifest.json").to_str().unwrap(), "--out", "/tmp/x.png"]);
    assert_eq!(code(&o), 1);
}
