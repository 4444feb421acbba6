use gradguess::RngStream;

use super::Context;
use crate::audit::Audit;
use crate::error::Result;
use crate::method::{parse_methods, Method};
use crate::output::Output;
use crate::train::{measurement_batch, method_cosine, train, MEASURE_STREAM};

/// Single-guess cosines along a backprop-trained trajectory.
pub struct CosineCurves {
    pub methods: Vec<String>,
    pub epochs: Vec<u64>,
    /// `cosines[m][e]`: mean single-guess cosine of method `m` at `epochs[e]`.
    pub cosines: Vec<Vec<f64>>,
    pub audit: Audit,
}

pub fn run(ctx: &Context, out: Option<&Output>) -> Result<CosineCurves> {
    let methods = parse_methods(&ctx.cfg.measure.methods)?;
    let m = &ctx.cfg.measure;
    let batch = measurement_batch(&ctx.splits, m.batch);
    let mut rec = ctx.recorder(out, "cosine")?;
    let mut epochs = Vec::new();
    let mut cosines = vec![Vec::new(); methods.len()];
    let names: Vec<String> = methods.iter().map(|x| x.describe(&ctx.opts)).collect();
    let seed = ctx.seed();
    let mut hook = |epoch: u64, params: &gradguess::MlpParams<f32>, audit: &mut Audit| {
        let mut out = Vec::new();
        if epoch % m.every.max(1) != 0 {
            return Ok(out);
        }
        epochs.push(epoch);
        for (mi, method) in methods.iter().enumerate() {
            let rng = RngStream::derive(seed, &[MEASURE_STREAM, epoch, mi as u64]);
            let c = method_cosine(method, params, &batch, &ctx.opts, m.guesses, &rng, audit)?;
            cosines[mi].push(c);
            out.push(gradguess::MetricRecord::new(seed, epoch, 0, names[mi].clone(), "cosine", c));
        }
        Ok(out)
    };
    let spec = ctx.spec(Method::Backprop, &ctx.cfg.train.optimizer, ctx.cfg.train.lr)?;
    let mut sink = |r| rec.push(r);
    let result = train(&ctx.model, &ctx.splits, &spec, &mut sink, Some(&mut hook));
    rec.flush()?;
    let result = result?;
    if let Some(o) = out {
        let mut notes = ctx.base_notes();
        notes.push(("trajectory".into(), spec.descriptor()));
        notes.push(("audit".into(), format!("{:?}", result.audit)));
        o.write_manifest("cosine", &notes)?;
    }
    Ok(CosineCurves {
        methods: names,
        epochs,
        cosines,
        audit: result.audit,
    })
}
