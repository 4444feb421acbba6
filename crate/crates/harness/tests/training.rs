//! Training-loop behaviour on separable clusters.

use gradguess_harness::audit::Audit;
use gradguess_harness::experiments::{sweep, Context};
use gradguess_harness::method::Method;
use gradguess_harness::train::{train, TrainResult};
use gradguess_harness::ExperimentConfig;

fn context(overrides: &[&str]) -> Context {
    let text = std::fs::read_to_string(format!("{}/configs/smoke.toml", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Context::new(ExperimentConfig::from_toml_str(&text, &o).unwrap()).unwrap()
}

fn fit(ctx: &Context, method: &str, optimizer: &str, lr: f64) -> TrainResult {
    let mut spec = ctx.spec(method.parse::<Method>().unwrap(), optimizer, lr).unwrap();
    spec.eval_every = 1;
    let mut sink = |_| Ok(());
    train(&ctx.model, &ctx.splits, &spec, &mut sink, None).unwrap()
}

fn epochs_to(r: &TrainResult, acc: f64) -> Option<u64> {
    r.epochs.iter().find(|e| e.train_acc >= acc).map(|e| e.epoch)
}

#[test]
fn separable_clusters_ordering() {
    let ctx = context(&["train.epochs=20", "train.threshold=0.95"]);
    let bp = fit(&ctx, "backprop", "adamw", 1e-3);
    let wt = fit(&ctx, "wt", "adamw", 1e-3);
    let dd = fit(&ctx, "directional", "adamw", 1e-3);
    let e_bp = epochs_to(&bp, 0.99).expect("backprop reaches 99%");
    assert!(e_bp <= 20);
    let e_wt = epochs_to(&wt, 0.95).expect("W^T reaches 95%");
    assert!(epochs_to(&bp, 0.95).unwrap() <= e_wt);
    assert!(bp.steps_to_threshold.unwrap() < wt.steps_to_threshold.unwrap());
    // Directional descent is strictly slowest to the threshold.
    match dd.steps_to_threshold {
        None => {}
        Some(s) => assert!(s > wt.steps_to_threshold.unwrap()),
    }
}

#[test]
fn oracle_audit_separates_purposes() {
    let ctx = context(&["train.epochs=2", "train.log_cosine=true"]);
    let wt = fit(&ctx, "wt", "adamw", 1e-3);
    assert_eq!(wt.audit.update, 0);
    assert_eq!(wt.audit.control, 0);
    assert_eq!(wt.audit.measurement, 3);
    let bp = fit(&ctx, "backprop", "adamw", 1e-3);
    assert_eq!(bp.audit.update, bp.steps);
    let sl = fit(&ctx, "slerp-cos:0.5", "adamw", 1e-3);
    assert_eq!(sl.audit.update, 0);
    assert_eq!(sl.audit.control, sl.steps);
    let mut total = Audit::default();
    total.merge(&wt.audit);
    total.merge(&sl.audit);
    assert_eq!(total.control, sl.steps);
}

#[test]
fn sweep_grid_bookkeeping_and_adam_for_directional() {
    let ctx = context(&[
        "train.epochs=6",
        "train.methods=[\"backprop\", \"directional\"]",
        "train.lr_grid=[1e-2, 1e-3]",
        "train.optimizers=[\"sgd\", \"adamw\"]",
    ]);
    let res = sweep::run(&ctx, None).unwrap();
    assert_eq!(res.runs.len(), 2 * 2 * 2);
    assert_eq!(res.best.len(), 2);
    let best = |m: &str, opt: &str| {
        res.runs
            .iter()
            .filter(|r| r.method == m && r.optimizer == opt)
            .map(|r| r.final_train_acc())
            .fold(f64::NEG_INFINITY, f64::max)
    };
    assert!(best("directional", "adamw") >= best("directional", "sgd"));
    let bp = res.best_run("backprop").unwrap().epochs.as_ref().unwrap();
    let dd = res.best_run("directional").unwrap().epochs.as_ref().unwrap();
    for (a, b) in bp.iter().zip(dd).skip(1) {
        assert!(a.train_acc >= b.train_acc, "epoch {}", a.epoch);
    }
}

#[test]
fn checkpoints_written_and_reloadable() {
    let ctx = context(&["train.epochs=2", "train.methods=[\"wt\"]"]);
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ctx.spec("wt".parse().unwrap(), "adamw", 1e-3).unwrap();
    spec.checkpoint_every = 1;
    spec.checkpoint_dir = Some(dir.path().to_path_buf());
    let mut sink = |_| Ok(());
    let res = train(&ctx.model, &ctx.splits, &spec, &mut sink, None).unwrap();
    let loaded = gradguess::io::load_checkpoint(dir.path().join("epoch-00002.ggck")).unwrap();
    assert_eq!(loaded.to_flat(), res.params.to_flat());
    assert!(dir.path().join("epoch-00001.ggck").exists());
}
