use gradguess::metrics::one_step_effectiveness;
use gradguess::network::forward;
use gradguess::{estimate_gradient, GuessContext, GuessMethod, MetricRecord, RngStream};
use log::warn;

use super::Context;
use crate::audit::{Audit, OraclePurpose};
use crate::error::Result;
use crate::method::{parse_methods, Method};
use crate::output::Output;
use crate::train::{measurement_batch, train, MEASURE_STREAM};

#[derive(Debug, Clone)]
pub struct OneStepPoint {
    pub method: String,
    pub ratio: Option<f64>,
    pub best_lr: f64,
}

#[derive(Debug, Clone)]
pub struct MultiStep {
    pub momentum: f64,
    /// Steps to `train.threshold` for the slerp control and the compared method.
    pub slerp_steps: Option<u64>,
    pub compare_steps: Option<u64>,
    /// Total steps in the budget.
    pub budget: u64,
}

impl MultiStep {
    /// `compare - slerp`, with runs that never reach the threshold counted at
    /// one step past the budget.
    pub fn gap(&self) -> f64 {
        let f = |s: Option<u64>| s.unwrap_or(self.budget + 1) as f64;
        f(self.compare_steps) - f(self.slerp_steps)
    }
}

pub struct OneStepResult {
    pub points: Vec<OneStepPoint>,
    pub multistep: Vec<MultiStep>,
}

/// Best-step-size loss reduction relative to backprop for each measured
/// method, then multi-step training of the slerp control against
/// `measure.compare` under SGD for each momentum in `measure.momenta`, each
/// at its fastest learning rate in `train.lr_grid`.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<OneStepResult> {
    let m = &ctx.cfg.measure;
    let seed = ctx.seed();
    let slerp = GuessMethod::slerp_for_cosine(m.slerp_cos)?;
    let mut methods = parse_methods(&m.methods)?;
    methods.push(Method::Guess(slerp));
    let mut rec = ctx.recorder(out, "onestep")?;
    let mut audit = Audit::default();

    let params = ctx.warmed_params()?;
    let (x, y) = measurement_batch(&ctx.splits, m.batch);
    let trace = forward(&params, &x, &y)?;
    let oracle = audit.oracle(OraclePurpose::Measurement, &params, &trace)?;
    let mut points = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        let name = method.describe(&ctx.opts);
        let est = match method {
            Method::Backprop => oracle.weights.clone(),
            Method::Guess(g) => {
                let gctx = GuessContext {
                    params: &params,
                    trace: &trace,
                    oracle: g.uses_oracle().then_some(&oracle),
                };
                let rng = RngStream::derive(seed, &[MEASURE_STREAM, mi as u64]);
                match estimate_gradient(g, &gctx, &rng, ctx.cfg.train.replicates, &ctx.opts) {
                    Ok(e) => e,
                    Err(e) => {
                        warn!("onestep {name}: {e}");
                        continue;
                    }
                }
            }
        };
        let r = match one_step_effectiveness(&params, &x, &y, &est, &oracle.weights, &m.step_grid) {
            Ok(r) => r,
            Err(e) => {
                warn!("onestep {name}: {e}");
                continue;
            }
        };
        let ratio = r.ratio.unwrap_or(f64::NAN);
        rec.push(MetricRecord::new(seed, 0, 0, name.clone(), "onestep_ratio", ratio))?;
        rec.push(MetricRecord::new(seed, 0, 0, name.clone(), "onestep_best_lr", r.best_lr))?;
        rec.push(MetricRecord::new(seed, 0, 0, name.clone(), "onestep_reduction", r.reduction))?;
        points.push(OneStepPoint {
            method: name,
            ratio: r.ratio,
            best_lr: r.best_lr,
        });
    }

    let compare: Method = m.compare.parse()?;
    let t = &ctx.cfg.train;
    let lrs = if t.lr_grid.is_empty() { vec![t.lr] } else { t.lr_grid.clone() };
    let mut multistep = Vec::new();
    for &mu in &m.momenta {
        let opt = format!("sgd:{mu}");
        let mut best = Vec::new();
        let mut budget = 0;
        for method in [Method::Guess(slerp), compare] {
            // Fewest steps to threshold over the learning-rate grid.
            let mut fastest: Option<u64> = None;
            for &lr in &lrs {
                let mut spec = ctx.spec(method, &opt, lr)?;
                spec.cosine_guesses = 0;
                let mut sink = |r| rec.push(r);
                match train(&ctx.model, &ctx.splits, &spec, &mut sink, None) {
                    Ok(res) => {
                        audit.merge(&res.audit);
                        budget = budget.max(res.steps);
                        if let Some(s) = res.steps_to_threshold {
                            fastest = Some(fastest.map_or(s, |f| f.min(s)));
                        }
                    }
                    Err(e) => warn!("onestep {}: {e}", spec.descriptor()),
                }
            }
            best.push(fastest);
        }
        let point = MultiStep {
            momentum: mu,
            slerp_steps: best[0],
            compare_steps: best[1],
            budget,
        };
        let f = |s: Option<u64>| s.map_or(f64::NAN, |v| v as f64);
        for (name, v) in [
            (Method::Guess(slerp).describe(&ctx.opts), f(point.slerp_steps)),
            (compare.describe(&ctx.opts), f(point.compare_steps)),
        ] {
            rec.push(MetricRecord::new(seed, t.epochs, point.budget, format!("{name}|{opt}"), "steps_to_threshold", v))?;
        }
        multistep.push(point);
    }
    rec.flush()?;
    if let Some(o) = out {
        let mut notes = ctx.base_notes();
        notes.push(("threshold".into(), ctx.cfg.train.threshold.to_string()));
        notes.push(("audit".into(), format!("{audit:?}")));
        o.write_manifest("onestep", &notes)?;
    }
    Ok(OneStepResult { points, multistep })
}
