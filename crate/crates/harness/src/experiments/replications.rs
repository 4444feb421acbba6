use gradguess::metrics::replication_curve;
use gradguess::network::forward;
use gradguess::{GuessContext, MetricRecord, RngStream};

use super::Context;
use crate::audit::{Audit, OraclePurpose};
use crate::error::{config_err, Result};
use crate::method::{parse_methods, Method};
use crate::output::Output;
use crate::train::{measurement_batch, MEASURE_STREAM};

pub struct ReplicationCurves {
    pub methods: Vec<String>,
    pub ks: Vec<usize>,
    /// `cosines[m][j]`: cosine at `ks[j]`, averaged over single examples.
    pub cosines: Vec<Vec<f64>>,
}

/// Cosine against replicate count on single held-out examples.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<ReplicationCurves> {
    let m = &ctx.cfg.measure;
    let methods = parse_methods(&m.methods)?;
    let params = ctx.warmed_params()?;
    let repeats = m.repeats.max(1);
    let (x, y) = measurement_batch(&ctx.splits, repeats);
    let mut rec = ctx.recorder(out, "replications")?;
    let mut audit = Audit::default();
    let names: Vec<String> = methods.iter().map(|x| x.describe(&ctx.opts)).collect();
    let mut sums = vec![vec![0.0; m.ks.len()]; methods.len()];
    for ex in 0..x.rows().min(repeats) {
        let xe = x.select_rows(&[ex]);
        let trace = forward(&params, &xe, &y[ex..=ex])?;
        let oracle = audit.oracle(OraclePurpose::Measurement, &params, &trace)?;
        for (mi, method) in methods.iter().enumerate() {
            let Method::Guess(g) = method else {
                return Err(config_err("backprop has no replication curve"));
            };
            let gctx = GuessContext {
                params: &params,
                trace: &trace,
                oracle: g.uses_oracle().then_some(&oracle),
            };
            if g.uses_oracle() {
                audit.control += 1;
            }
            let rng = RngStream::derive(ctx.seed(), &[MEASURE_STREAM, ex as u64, mi as u64]);
            let curve = replication_curve(g, &gctx, &oracle.weights, &rng, &m.ks, &ctx.opts)?;
            for (j, &(k, c)) in curve.iter().enumerate() {
                sums[mi][j] += c;
                rec.push(MetricRecord::new(ctx.seed(), 0, k as u64, names[mi].clone(), "cosine", c).with_layer(ex))?;
            }
        }
    }
    rec.flush()?;
    let n = x.rows().min(repeats) as f64;
    let cosines = sums.into_iter().map(|v| v.into_iter().map(|s| s / n).collect()).collect();
    if let Some(o) = out {
        let mut notes = ctx.base_notes();
        notes.push(("layer_column".into(), "index of the held-out example".into()));
        notes.push(("step_column".into(), "replicate count k".into()));
        notes.push(("audit".into(), format!("{audit:?}")));
        o.write_manifest("replications", &notes)?;
    }
    Ok(ReplicationCurves {
        methods: names,
        ks: m.ks.clone(),
        cosines,
    })
}
