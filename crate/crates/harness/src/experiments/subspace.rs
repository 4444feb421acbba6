use gradguess::metrics::{subspace_alignment, SubspaceReport};
use gradguess::network::forward;
use gradguess::{MetricRecord, RngStream};
use log::warn;

use super::Context;
use crate::audit::{Audit, OraclePurpose};
use crate::error::Result;
use crate::output::Output;
use crate::train::{measurement_batch, MEASURE_STREAM};

/// PCA-subspace against random-subspace alignment of per-example activation
/// gradients for every hidden layer input, after warmup training.
pub fn run(ctx: &Context, out: Option<&Output>) -> Result<Vec<SubspaceReport>> {
    let m = &ctx.cfg.measure;
    let seed = ctx.seed();
    let params = ctx.warmed_params()?;
    let (x, y) = measurement_batch(&ctx.splits, m.batch);
    let trace = forward(&params, &x, &y)?;
    let mut audit = Audit::default();
    let oracle = audit.oracle(OraclePurpose::Measurement, &params, &trace)?;
    let mut rec = ctx.recorder(out, "subspace")?;
    let mut reports = Vec::new();
    // Layer i >= 1 reads the post-activations of hidden layer i - 1.
    for i in 1..params.depth() {
        let acts = trace.layer_input(i);
        let grads = oracle.post_activation(&params, i - 1)?;
        let mut rng = RngStream::derive(seed, &[MEASURE_STREAM, i as u64]);
        // Per-example gradients: the trace's loss is a batch mean.
        let grads = grads.scale(x.rows() as f32);
        match subspace_alignment(i, acts, &grads, &m.m_grid, m.center, &mut rng) {
            Ok(rs) => {
                for r in rs {
                    let method = format!("layer{}", r.layer);
                    rec.push(MetricRecord::new(seed, m.warmup_epochs, r.m as u64, method.clone(), "pca_cosine", r.activation_cosine).with_layer(r.layer))?;
                    rec.push(MetricRecord::new(seed, m.warmup_epochs, r.m as u64, method, "random_cosine", r.random_cosine).with_layer(r.layer))?;
                    reports.push(r);
                }
            }
            Err(e) => warn!("subspace layer {i}: {e}"),
        }
    }
    rec.flush()?;
    if let Some(o) = out {
        let mut notes = ctx.base_notes();
        notes.push(("step_column".into(), "basis size m".into()));
        notes.push(("center".into(), m.center.to_string()));
        o.write_manifest("subspace", &notes)?;
    }
    Ok(reports)
}
