use std::collections::BTreeMap;

use gradguess::io::MetricsWriter;
use gradguess::MetricRecord;
use log::{info, warn};

use super::Context;
use crate::error::{config_err, Result};
use crate::method::parse_methods;
use crate::output::Output;
use crate::train::{train, EpochStats};

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub method: String,
    pub optimizer: String,
    pub lr: f64,
    pub descriptor: String,
    /// `None` if the run failed.
    pub epochs: Option<Vec<EpochStats>>,
}

impl SweepRun {
    pub fn final_train_acc(&self) -> f64 {
        self.epochs
            .as_ref()
            .and_then(|e| e.last())
            .map_or(f64::NEG_INFINITY, |s| s.train_acc)
    }
}

pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    /// Index into `runs` of each method's best run, by final train accuracy.
    pub best: BTreeMap<String, usize>,
}

impl SweepResult {
    pub fn best_run(&self, method: &str) -> Option<&SweepRun> {
        self.best.get(method).map(|&i| &self.runs[i])
    }
}

/// The cross product methods × optimizers × learning rates. Writes every
/// run to `sweep.csv` and each method's best run to `sweep_best.csv`.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<SweepResult> {
    let t = &ctx.cfg.train;
    let lrs = if t.lr_grid.is_empty() { vec![t.lr] } else { t.lr_grid.clone() };
    let opts = if t.optimizers.is_empty() {
        vec![t.optimizer.clone()]
    } else {
        t.optimizers.clone()
    };
    let methods = parse_methods(&t.methods)?;
    if lrs.is_empty() || opts.is_empty() || methods.is_empty() {
        return Err(config_err("sweep grids must be non-empty"));
    }
    let mut rec = ctx.recorder(out, "sweep")?;
    let mut runs = Vec::new();
    let mut per_run: Vec<Vec<MetricRecord>> = Vec::new();
    for method in &methods {
        for opt in &opts {
            for &lr in &lrs {
                let spec = ctx.spec(*method, opt, lr)?;
                let desc = spec.descriptor();
                let start = rec.records.len();
                let mut sink = |r| rec.push(r);
                let epochs = match train(&ctx.model, &ctx.splits, &spec, &mut sink, None) {
                    Ok(r) => {
                        info!("{desc}: final train acc {:.4}", r.final_stats().train_acc);
                        Some(r.epochs)
                    }
                    Err(e) => {
                        warn!("sweep {desc}: {e}");
                        None
                    }
                };
                per_run.push(rec.records[start..].to_vec());
                runs.push(SweepRun {
                    method: method.describe(&ctx.opts),
                    optimizer: opt.clone(),
                    lr,
                    descriptor: desc,
                    epochs,
                });
            }
        }
    }
    rec.flush()?;
    let mut best: BTreeMap<String, usize> = BTreeMap::new();
    for (i, r) in runs.iter().enumerate() {
        if r.epochs.is_none() {
            continue;
        }
        match best.get(&r.method) {
            Some(&j) if runs[j].final_train_acc() >= r.final_train_acc() => {}
            _ => {
                best.insert(r.method.clone(), i);
            }
        }
    }
    if let Some(o) = out {
        let mut w: MetricsWriter = o.writer("sweep_best")?;
        for &i in best.values() {
            for r in &per_run[i] {
                w.write(r)?;
            }
        }
        w.flush()?;
        let mut notes = ctx.base_notes();
        notes.push(("runs".into(), runs.len().to_string()));
        for (m, &i) in &best {
            notes.push((format!("best[{m}]"), runs[i].descriptor.clone()));
        }
        o.write_manifest("sweep", &notes)?;
    }
    Ok(SweepResult { runs, best })
}
