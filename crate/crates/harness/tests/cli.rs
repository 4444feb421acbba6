//! End-to-end runs of the `gradguess` binary.

use std::path::Path;
use std::process::Command;

fn smoke() -> String {
    format!("{}/configs/smoke.toml", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gradguess"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let common = [
        "train",
        "--config",
        &smoke(),
        "--override",
        "train.epochs=3",
        "--override",
        "train.replicates=40",
        "--override",
        "train.log_cosine=true",
    ];
    let ra = run(&[&common[..], &["--threads", "1"]].concat(), &a);
    let rb = run(&[&common[..], &["--threads", "3"]].concat(), &b);
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(rb.status.success(), "{}", String::from_utf8_lossy(&rb.stderr));
    let ca = std::fs::read(a.join("train.csv")).unwrap();
    let cb = std::fs::read(b.join("train.csv")).unwrap();
    assert!(!ca.is_empty());
    assert_eq!(ca, cb);
    // The manifest records the same run id and hash.
    let ma = std::fs::read_to_string(a.join("train.manifest.toml")).unwrap();
    let mb = std::fs::read_to_string(b.join("train.manifest.toml")).unwrap();
    assert_eq!(ma.lines().take(3).collect::<Vec<_>>(), mb.lines().take(3).collect::<Vec<_>>());
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = smoke();
    for seed in ["1", "2"] {
        let args = ["train", "--config", &config, "--override", "train.epochs=1", "--override", "train.methods=[\"wt\"]", "--seed", seed];
        assert!(run(&args, &dir.path().join(seed)).status.success());
    }
    let a = std::fs::read(dir.path().join("1/train.csv")).unwrap();
    let b = std::fs::read(dir.path().join("2/train.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn csv_schema_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["biastoy", "--config", &smoke()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("biastoy.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "run_id,seed,epoch,step,method,metric,layer,value");
    let records = gradguess::io::read_metrics(dir.path().join("biastoy.csv")).unwrap();
    assert!(records.iter().any(|(_, r)| r.metric == "bias_measured"));
    let run_id = &records[0].0;
    assert_eq!(run_id.len(), 12);
    let manifest = std::fs::read_to_string(dir.path().join("biastoy.manifest.toml")).unwrap();
    assert!(manifest.contains(&format!("run_id = \"{run_id}\"")));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in ["train.nonsense=1", "train.methods=[\"telepathy\"]", "model.depth=1", "train.optimizer=\"rmsprop\""] {
        let out = run(&["train", "--config", &smoke(), "--override", bad], dir.path());
        assert_eq!(out.status.code(), Some(2), "{bad}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["train", "--config", "/nonexistent/config.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_partial_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "train",
            "--config",
            &smoke(),
            "--override",
            "train.methods=[\"backprop\"]",
            "--override",
            "train.optimizer=\"sgd\"",
            "--override",
            "train.lr=1e30",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let records = gradguess::io::read_metrics(dir.path().join("train.csv")).unwrap();
    assert!(records.iter().any(|(_, r)| r.metric == "train_acc" && r.epoch == 0));
}

#[test]
fn every_subcommand_runs_on_the_smoke_config() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["train", "cosine", "replications", "onestep", "subspace", "biastoy", "svdpower", "sweep"] {
        let out = run(
            &[cmd, "--config", &smoke(), "--override", "train.epochs=2", "--override", "measure.bias_replicates=2000"],
            &dir.path().join(cmd),
        );
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(cmd).join(format!("{cmd}.csv")).exists(), "{cmd}");
    }
    assert!(dir.path().join("sweep/sweep_best.csv").exists());
}
