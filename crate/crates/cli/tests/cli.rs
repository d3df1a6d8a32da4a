use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    /// Synthetic workspace with 8 training pairs and 4 held-out pairs.
    fn new() -> Run {
        let dir = tempfile::tempdir().unwrap();
        let out = vmr(&["synth", "--out", dir.path().to_str().unwrap(), "--pairs", "8", "--holdout", "4", "--epochs", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Run { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("config.toml")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    fn cmd(&self, sub: &str, extra: &[&str]) -> Output {
        let cfg = self.config();
        let mut args = vec![sub, "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        vmr(&args)
    }

    fn ok(&self, sub: &str, extra: &[&str]) -> String {
        let out = self.cmd(sub, extra);
        assert!(out.status.success(), "{sub} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn edit_config(&self, from: &str, to: &str) {
        let text = std::fs::read_to_string(self.config()).unwrap();
        assert!(text.contains(from), "{from:?} not in config");
        std::fs::write(self.config(), text.replacen(from, to, 1)).unwrap();
    }
}

fn vmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmr")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn run_header(run: &Run) -> Value {
    read_jsonl(&run.out().join("train_log.jsonl")).remove(0)
}

#[test]
fn narrate_train_eval_smoke() {
    let t = Instant::now();
    let run = Run::new();
    let first = run.ok("narrate", &[]);
    assert!(first.contains("0 hits, 192 misses, 0 failures"), "{first}");
    let again = run.ok("narrate", &[]);
    assert!(again.contains("192 hits, 0 misses, 0 failures"), "{again}");

    run.ok("train", &[]);
    assert!(run.out().join("checkpoints/best.ckpt").exists());
    assert!(run.out().join("checkpoints/last.ckpt").exists());
    let log = read_jsonl(&run.out().join("train_log.jsonl"));
    assert_eq!(log.len(), 3);
    assert_eq!(log[0]["kind"], "run");

    let table = run.ok("eval", &[]);
    assert!(table.contains("| CD-Test-ood |"), "{table}");
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.out().join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["reports"][0]["n"], 4);
    assert!(run.out().join("eval/table.md").exists());
    assert!(t.elapsed().as_secs() < 60);
}

#[test]
fn align_writes_one_record_per_video() {
    let run = Run::new();
    run.ok("narrate", &[]);
    run.ok("align", &["--split", "train"]);
    let rows = read_jsonl(&run.out().join("aligned/train.jsonl"));
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0]["aligned"].as_array().unwrap().len(), 16);
}

#[test]
fn missing_fixture_lists_failures() {
    let run = Run::new();
    let fixtures = run.dir.path().join("data/fixtures.jsonl");
    let text = std::fs::read_to_string(&fixtures).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.contains("\"syn003\"")).collect();
    std::fs::write(&fixtures, kept.join("\n") + "\n").unwrap();

    let out = run.cmd("narrate", &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("syn003"), "{stderr}");
    // Videos that could be narrated were cached.
    assert!(run.out().join("narrations/syn000.jsonl").exists());

    // Training cannot proceed without the missing narratives.
    let out = run.cmd("train", &[]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vmr narrate"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let full = Run::new();
    full.edit_config("epochs = 2", "epochs = 4");
    full.ok("narrate", &[]);
    full.ok("train", &[]);

    let split = Run::new();
    split.edit_config("epochs = 2", "epochs = 4");
    split.ok("narrate", &[]);
    split.ok("train", &["--max-epochs", "2"]);
    split.ok("train", &["--resume"]);

    let a = std::fs::read(full.out().join("checkpoints/last.ckpt")).unwrap();
    let b = std::fs::read(split.out().join("checkpoints/last.ckpt")).unwrap();
    assert!(a == b, "resumed checkpoint differs from uninterrupted run");
    let epochs = |r: &Run| -> Vec<Value> {
        read_jsonl(&r.out().join("train_log.jsonl")).into_iter().filter(|v| v["kind"] == "epoch").collect()
    };
    assert_eq!(epochs(&full), epochs(&split));
}

#[test]
fn resume_refuses_changed_config() {
    let run = Run::new();
    run.ok("narrate", &[]);
    run.ok("train", &["--max-epochs", "1"]);
    run.edit_config("lambda_h = 5.0", "lambda_h = 2.0");
    let out = run.cmd("train", &["--resume"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));

    run.edit_config("lambda_h = 2.0", "lambda_h = 5.0");
    run.edit_config("d = 32", "d = 16");
    let out = run.cmd("eval", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn seed_changes_initialisation() {
    let run = Run::new();
    run.ok("narrate", &[]);
    run.ok("train", &["--max-epochs", "1"]);
    let a = run_header(&run);
    run.ok("train", &["--max-epochs", "1"]);
    assert_eq!(run_header(&run)["init_fingerprint"], a["init_fingerprint"]);
    run.ok("train", &["--max-epochs", "1", "--seed", "7"]);
    let b = run_header(&run);
    assert_ne!(b["init_fingerprint"], a["init_fingerprint"]);
    assert_eq!(b["stamp"]["seed"], 7);
}

#[test]
fn alpha_zero_is_video_only() {
    let run = Run::new();
    run.ok("narrate", &[]);
    run.ok("train", &[]);
    run.ok("predict", &["--alpha", "0"]);
    let rows = read_jsonl(&run.out().join("predictions/cd-test-ood.jsonl"));
    assert_eq!(rows[0]["alpha"], 0.0);
    for r in &rows[1..] {
        assert!(r.get("paragraph_p_start").is_none());
        let ps: Vec<f64> = serde_json::from_value(r["video_p_start"].clone()).unwrap();
        let pe: Vec<f64> = serde_json::from_value(r["video_p_end"].clone()).unwrap();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for j in 0..pe.len() {
            for i in 0..=j {
                if ps[i] * pe[j] > best.2 {
                    best = (i, j, ps[i] * pe[j]);
                }
            }
        }
        assert_eq!((r["start_idx"].as_u64().unwrap(), r["end_idx"].as_u64().unwrap()), (best.0 as u64, best.1 as u64));
    }
}

#[test]
fn sweep_covers_alpha_grid() {
    let run = Run::new();
    run.ok("narrate", &[]);
    run.ok("train", &[]);
    run.ok("sweep", &["--split", "train"]);
    let text = std::fs::read_to_string(run.out().join("sweep/train.tsv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with('#'));
    assert_eq!(lines[1], "alpha\tIoU@0.5\tIoU@0.7\tmIoU");
    let alphas: Vec<&str> = lines[2..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(alphas, ["0.00", "0.25", "0.50", "0.75", "1.00"]);
}

#[test]
fn missing_checkpoint_is_reported() {
    let run = Run::new();
    run.ok("narrate", &[]);
    let out = run.cmd("eval", &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("best.ckpt") && stderr.contains("not found"), "{stderr}");
}

#[test]
fn exit_codes() {
    let run = Run::new();
    assert_eq!(vmr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vmr(&["--help"]).status.code(), Some(0));
    assert_eq!(vmr(&["eval", "--config", "/nonexistent.toml"]).status.code(), Some(1));
    assert_eq!(run.cmd("eval", &["--split", "no-such-split"]).status.code(), Some(1));
    assert_eq!(run.cmd("train", &["--alpha", "-1"]).status.code(), Some(1));

    // An unreachable captioning service is a remote failure.
    run.edit_config("mode = \"fixture\"", "mode = \"remote\"\nendpoint = \"http://127.0.0.1:9/caption\"\nretries = 0");
    run.edit_config("retries = 3\n", "");
    let out = run.cmd("narrate", &["--split", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
