use gradguess::metrics::{bias_toy_chain, wt_bias_law, BiasToy};
use gradguess::network::forward;
use gradguess::{init_params, MetricRecord, MlpParams, RngStream};
use log::warn;

use super::Context;
use crate::audit::{Audit, OraclePurpose};
use crate::error::Result;
use crate::output::Output;
use crate::train::{measurement_batch, INIT_STREAM, MEASURE_STREAM};

pub struct BiasResult {
    pub toys: Vec<BiasToy>,
    /// Per-layer relative error of the W^T bias law.
    pub law: Vec<f64>,
}

/// The 2I-chain toy for each `k`, then the W^T covariance law on the
/// configured network (in f64) over a small measurement batch.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<BiasResult> {
    let m = &ctx.cfg.measure;
    let seed = ctx.seed();
    let mut rec = ctx.recorder(out, "biastoy")?;
    let mut toys = Vec::new();
    for &k in &m.bias_k {
        let mut rng = RngStream::derive(seed, &[MEASURE_STREAM, 0xB1A5, k as u64]);
        match bias_toy_chain(k, m.bias_dim, m.bias_replicates, &mut rng) {
            Ok(t) => {
                rec.push(MetricRecord::new(seed, 0, k as u64, "toy-chain", "bias_measured", t.measured))?;
                rec.push(MetricRecord::new(seed, 0, k as u64, "toy-chain", "bias_predicted", t.predicted))?;
                toys.push(t);
            }
            Err(e) => warn!("bias toy k={k}: {e}"),
        }
    }

    let params: MlpParams<f64> = if m.warmup_epochs > 0 {
        ctx.warmed_params()?.cast()
    } else {
        init_params(&ctx.model, &mut RngStream::derive(seed, &[INIT_STREAM]))?
    };
    let (x, y) = measurement_batch(&ctx.splits, m.law_batch);
    let trace = forward(&params, &x.cast::<f64>(), &y)?;
    let mut audit = Audit::default();
    let oracle = audit.oracle(OraclePurpose::Measurement, &params, &trace)?;
    let rng = RngStream::derive(seed, &[MEASURE_STREAM, 0x1A3]);
    let law = match wt_bias_law(&params, &trace, &oracle, m.law_replicates, &rng) {
        Ok(l) => l.relative_error,
        Err(e) => {
            warn!("bias law: {e}");
            Vec::new()
        }
    };
    for (i, &e) in law.iter().enumerate() {
        rec.push(MetricRecord::new(seed, 0, m.law_replicates as u64, "wt[norm=none]", "bias_law_relative_error", e).with_layer(i))?;
    }
    rec.flush()?;
    if let Some(o) = out {
        let mut notes = ctx.base_notes();
        notes.push(("step_column".into(), "chain depth k (toy) or replicates (law)".into()));
        o.write_manifest("biastoy", &notes)?;
    }
    Ok(BiasResult { toys, law })
}
