//! The training loop shared by every subcommand.

use std::path::PathBuf;

use gradguess::data::{augment, AugmentFlags};
use gradguess::io::save_checkpoint;
use gradguess::metrics::{cosine_similarity, effective_rank, CosineScope};
use gradguess::network::{evaluate, forward};
use gradguess::{
    estimate_gradient, init_params, BatchPlan, Error, GuessContext, GuessOptions, ImageGeometry, Matrix, MetricRecord,
    MlpConfig, MlpParams, OptimizerKind, OptimizerState, RngStream,
};
use log::{debug, warn};

use crate::audit::{Audit, OraclePurpose};
use crate::datasets::Splits;
use crate::error::{HarnessError, Result};
use crate::method::Method;

/// Stream tags.
pub const INIT_STREAM: u64 = 0x1417;
pub const STEP_STREAM: u64 = 0x57E9;
pub const AUG_STREAM: u64 = 0xA06;
pub const MEASURE_STREAM: u64 = 0x3EA5;

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub method: Method,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub replicates: usize,
    pub opts: GuessOptions,
    /// Extra train-accuracy evaluations every this many steps (0: off).
    pub eval_every: u64,
    pub threshold: Option<f64>,
    /// Single-estimate draws averaged for the method's own cosine on the
    /// measurement batch each epoch (0: not logged).
    pub cosine_guesses: usize,
    /// Log the effective rank of every weight matrix each epoch.
    pub log_rank: bool,
    /// Examples from the test split used for cosine measurements.
    pub measure_batch: usize,
    pub augment: Option<(ImageGeometry, AugmentFlags)>,
    pub checkpoint_every: u64,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl TrainSpec {
    /// Descriptor naming method, optimizer and learning rate.
    pub fn descriptor(&self) -> String {
        format!("{}|{}|lr={}", self.method.describe(&self.opts), self.optimizer, self.lr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: MlpParams<f32>,
    /// Entry 0 is the initial state.
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub steps_to_threshold: Option<u64>,
    pub audit: Audit,
    pub rejected: u64,
}

impl TrainResult {
    pub fn final_stats(&self) -> &EpochStats {
        self.epochs.last().expect("initial entry")
    }
}

/// Called before training (epoch 0) and after every epoch.
pub type EpochHook<'a> = dyn FnMut(u64, &MlpParams<f32>, &mut Audit) -> Result<Vec<MetricRecord>> + 'a;

pub type Sink<'a> = dyn FnMut(MetricRecord) -> Result<()> + 'a;

pub fn initial_params(model: &MlpConfig, seed: u64) -> Result<MlpParams<f32>> {
    Ok(init_params(model, &mut RngStream::derive(seed, &[INIT_STREAM]))?)
}

/// The fixed held-out batch used for measurements.
pub fn measurement_batch(splits: &Splits, n: usize) -> (Matrix<f32>, Vec<usize>) {
    let src = if splits.test.is_empty() { &splits.train } else { &splits.test };
    let d = src.take(n.max(1));
    (d.features, d.labels)
}

/// Mean single-estimate cosine of `method` against the oracle on a batch,
/// over `guesses` independent draws.
pub fn method_cosine(
    method: &Method,
    params: &MlpParams<f32>,
    batch: &(Matrix<f32>, Vec<usize>),
    opts: &GuessOptions,
    guesses: usize,
    rng: &RngStream,
    audit: &mut Audit,
) -> Result<f64> {
    let trace = forward(params, &batch.0, &batch.1)?;
    let oracle = audit.oracle(OraclePurpose::Measurement, params, &trace)?;
    let Method::Guess(g) = method else {
        return Ok(1.0);
    };
    let ctx = GuessContext {
        params,
        trace: &trace,
        oracle: Some(&oracle),
    };
    let mut total = 0.0;
    for r in 0..guesses.max(1) {
        let est = estimate_gradient(g, &ctx, &rng.child(&[r as u64]), 1, opts)?;
        total += match cosine_similarity(&est, &oracle.weights, CosineScope::Global) {
            Ok(c) => c,
            Err(Error::ZeroNorm(_)) => 0.0,
            Err(e) => return Err(e.into()),
        };
    }
    Ok(total / guesses.max(1) as f64)
}

fn diverged(epoch: u64, step: u64, reason: impl Into<String>) -> HarnessError {
    HarnessError::Divergence {
        epoch,
        step,
        reason: reason.into(),
    }
}

pub fn train(
    model: &MlpConfig,
    splits: &Splits,
    spec: &TrainSpec,
    sink: &mut Sink<'_>,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<TrainResult> {
    let mut params = initial_params(model, spec.seed)?;
    train_from(&mut params, splits, spec, sink, hook.as_deref_mut()).map(|(epochs, steps, stt, audit, rejected)| {
        TrainResult {
            params,
            epochs,
            steps,
            steps_to_threshold: stt,
            audit,
            rejected,
        }
    })
}

type LoopOut = (Vec<EpochStats>, u64, Option<u64>, Audit, u64);

/// Trains `params` in place.
pub fn train_from(
    params: &mut MlpParams<f32>,
    splits: &Splits,
    spec: &TrainSpec,
    sink: &mut Sink<'_>,
    mut hook: Option<&mut EpochHook<'_>>,
) -> Result<LoopOut> {
    let desc = spec.descriptor();
    let mut audit = Audit::default();
    let mut opt = OptimizerState::new(spec.optimizer, params)?;
    let plan = BatchPlan::new(spec.batch_size, spec.seed);
    let measure = measurement_batch(splits, spec.measure_batch);
    let train = &splits.train;
    let mut epochs = Vec::new();
    let mut step = 0u64;
    let mut steps_to_threshold = None;
    let record = |epoch: u64, step: u64, metric: &str, value: f64| MetricRecord::new(spec.seed, epoch, step, desc.clone(), metric, value);

    let end_of_epoch = |epoch: u64,
                            step: u64,
                            params: &MlpParams<f32>,
                            audit: &mut Audit,
                            sink: &mut Sink<'_>,
                            stt: &mut Option<u64>,
                            hook: &mut Option<&mut EpochHook<'_>>|
     -> Result<EpochStats> {
        let (train_loss, train_acc) = evaluate(params, &train.features, &train.labels, EVAL_CHUNK)?;
        let (test_loss, test_acc) = if splits.test.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate(params, &splits.test.features, &splits.test.labels, EVAL_CHUNK)?
        };
        if !train_loss.is_finite() {
            return Err(diverged(epoch, step, "training loss is not finite"));
        }
        let cosine = if spec.cosine_guesses > 0 {
            let rng = RngStream::derive(spec.seed, &[MEASURE_STREAM, epoch]);
            Some(method_cosine(&spec.method, params, &measure, &spec.opts, spec.cosine_guesses, &rng, audit)?)
        } else {
            None
        };
        let stats = EpochStats {
            epoch,
            step,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            cosine,
        };
        for (m, v) in [
            ("train_loss", train_loss),
            ("train_acc", train_acc),
            ("test_loss", test_loss),
            ("test_acc", test_acc),
        ] {
            sink(record(epoch, step, m, v))?;
        }
        if let Some(c) = cosine {
            sink(record(epoch, step, "cosine", c))?;
        }
        if spec.log_rank {
            for (i, w) in params.weights.iter().enumerate() {
                sink(record(epoch, step, "effective_rank", effective_rank(w)?).with_layer(i))?;
            }
        }
        if let (Some(t), None) = (spec.threshold, *stt) {
            if train_acc >= t {
                *stt = Some(step);
            }
        }
        if let Some(h) = hook.as_mut() {
            for r in h(epoch, params, audit)? {
                sink(r)?;
            }
        }
        Ok(stats)
    };

    epochs.push(end_of_epoch(0, 0, params, &mut audit, sink, &mut steps_to_threshold, &mut hook)?);
    for epoch in 1..=spec.epochs {
        for (bi, idx) in plan.batches(train.len(), epoch)?.into_iter().enumerate() {
            let mut xb = train.features.select_rows(&idx);
            let yb: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            if let Some((geom, flags)) = spec.augment {
                let mut rng = RngStream::derive(spec.seed, &[AUG_STREAM, epoch, bi as u64]);
                xb = augment(&xb, geom, &mut rng, flags)?;
            }
            let trace = match forward(params, &xb, &yb) {
                Ok(t) => t,
                Err(Error::NonFinite { layer, .. }) => {
                    return Err(diverged(epoch, step, format!("non-finite activations in layer {layer}")))
                }
                Err(e) => return Err(e.into()),
            };
            if !trace.loss.is_finite() {
                return Err(diverged(epoch, step, "batch loss is not finite"));
            }
            let estimate = match spec.method {
                Method::Backprop => audit.oracle(OraclePurpose::Update, params, &trace)?.weights,
                Method::Guess(g) => {
                    let oracle = if g.uses_oracle() {
                        Some(audit.oracle(OraclePurpose::Control, params, &trace)?)
                    } else {
                        None
                    };
                    let ctx = GuessContext {
                        params,
                        trace: &trace,
                        oracle: oracle.as_ref(),
                    };
                    let rng = RngStream::derive(spec.seed, &[STEP_STREAM, epoch, bi as u64]);
                    estimate_gradient(&g, &ctx, &rng, spec.replicates, &spec.opts)?
                }
            };
            match opt.apply_update(params, &estimate, spec.lr) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => {
                    warn!("{desc}: rejected update at step {step}");
                }
                Err(e) => return Err(e.into()),
            }
            step += 1;
            if spec.eval_every > 0 && step % spec.eval_every == 0 {
                let (_, acc) = evaluate(params, &train.features, &train.labels, EVAL_CHUNK)?;
                sink(record(epoch, step, "train_acc_step", acc))?;
                if let (Some(t), None) = (spec.threshold, steps_to_threshold) {
                    if acc >= t {
                        steps_to_threshold = Some(step);
                    }
                }
            }
        }
        let stats = end_of_epoch(epoch, step, params, &mut audit, sink, &mut steps_to_threshold, &mut hook)?;
        debug!(
            "{desc} epoch {epoch}: train acc {:.4} loss {:.4}, test acc {:.4}",
            stats.train_acc, stats.train_loss, stats.test_acc
        );
        epochs.push(stats);
        if spec.checkpoint_every > 0 && epoch % spec.checkpoint_every == 0 {
            if let Some(dir) = &spec.checkpoint_dir {
                save_checkpoint(params, dir.join(format!("epoch-{epoch:05}.ggck")))?;
            }
        }
    }
    if !spec.method.oracle_in_update() && audit.update != 0 {
        return Err(HarnessError::Config(format!("{desc}: oracle used in a backprop-free update path")));
    }
    sink(record(spec.epochs, step, "rejected_updates", opt.rejected() as f64))?;
    sink(record(spec.epochs, step, "oracle_calls_update", audit.update as f64))?;
    sink(record(spec.epochs, step, "oracle_calls_control", audit.control as f64))?;
    sink(record(spec.epochs, step, "oracle_calls_measurement", audit.measurement as f64))?;
    Ok((epochs, step, steps_to_threshold, audit, opt.rejected()))
}
