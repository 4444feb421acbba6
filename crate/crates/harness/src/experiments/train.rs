use log::info;

use super::Context;
use crate::error::Result;
use crate::method::parse_methods;
use crate::output::Output;
use crate::train::{train, TrainResult};

pub struct TrainRuns {
    pub runs: Vec<(String, TrainResult)>,
}

pub fn run(ctx: &Context, out: Option<&Output>) -> Result<TrainRuns> {
    let mut rec = ctx.recorder(out, "train")?;
    let mut runs = Vec::new();
    let mut notes = ctx.base_notes();
    for method in parse_methods(&ctx.cfg.train.methods)? {
        let mut spec = ctx.spec(method, &ctx.cfg.train.optimizer, ctx.cfg.train.lr)?;
        if let Some(o) = out {
            if spec.checkpoint_every > 0 {
                let dir = o.path("checkpoints").join(method.to_string().replace([':', '/'], "_"));
                std::fs::create_dir_all(&dir).map_err(|e| crate::error::HarnessError::io(&dir, e))?;
                spec.checkpoint_dir = Some(dir);
            }
        }
        let mut sink = |r| rec.push(r);
        let result = train(&ctx.model, &ctx.splits, &spec, &mut sink, None);
        rec.flush()?;
        let result = result?;
        let last = result.final_stats();
        info!(
            "{}: train acc {:.4}, test acc {:.4} after {} steps",
            spec.descriptor(),
            last.train_acc,
            last.test_acc,
            result.steps
        );
        notes.push((format!("audit[{method}]"), format!("{:?}", result.audit)));
        runs.push((spec.descriptor(), result));
    }
    if let Some(o) = out {
        o.write_manifest("train", &notes)?;
    }
    Ok(TrainRuns { runs })
}
