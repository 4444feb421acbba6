use gradguess::metrics::effective_rank;
use gradguess::GuessMethod;
use log::warn;

use super::Context;
use crate::error::Result;
use crate::method::Method;
use crate::output::Output;
use crate::train::train;

#[derive(Debug, Clone)]
pub struct PowerPoint {
    pub power: f64,
    /// Per-epoch own-method cosine, entry 0 at initialization.
    pub cosines: Vec<f64>,
    /// Per-epoch effective rank of the first weight matrix.
    pub ranks: Vec<f64>,
    pub train_acc: f64,
}

impl PowerPoint {
    pub fn final_cosine(&self) -> f64 {
        *self.cosines.last().unwrap_or(&f64::NAN)
    }
    pub fn final_rank(&self) -> f64 {
        *self.ranks.last().unwrap_or(&f64::NAN)
    }
}

/// Trains an SVD-power W^T run for each power in `measure.powers`, logging
/// its cosine and the effective rank of every weight matrix per epoch.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<Vec<PowerPoint>> {
    let mut rec = ctx.recorder(out, "svdpower")?;
    let mut points = Vec::new();
    for &p in &ctx.cfg.measure.powers {
        let method = Method::Guess(GuessMethod::SvdPowerWT(p));
        let mut spec = ctx.spec(method, &ctx.cfg.train.optimizer, ctx.cfg.train.lr)?;
        spec.cosine_guesses = ctx.cfg.measure.guesses.max(1);
        spec.log_rank = true;
        let mut sink = |r| rec.push(r);
        let res = match train(&ctx.model, &ctx.splits, &spec, &mut sink, None) {
            Ok(r) => r,
            Err(e) => {
                warn!("svdpower {p}: {e}");
                continue;
            }
        };
        let cosines = res.epochs.iter().map(|e| e.cosine.unwrap_or(f64::NAN)).collect();
        let desc = spec.descriptor();
        let ranks = rec
            .records
            .iter()
            .filter(|r| r.method == desc && r.metric == "effective_rank" && r.layer == Some(0))
            .map(|r| r.value)
            .collect::<Vec<_>>();
        let ranks = if ranks.is_empty() {
            vec![effective_rank(&res.params.weights[0])?]
        } else {
            ranks
        };
        points.push(PowerPoint {
            power: p,
            cosines,
            ranks,
            train_acc: res.final_stats().train_acc,
        });
    }
    rec.flush()?;
    if let Some(o) = out {
        o.write_manifest("svdpower", &ctx.base_notes())?;
    }
    Ok(points)
}
