//! One module per subcommand. Each `run` returns its measurements and, given
//! an [`Output`], also writes `<command>.csv` and a manifest.

pub mod biastoy;
pub mod cosine;
pub mod onestep;
pub mod replications;
pub mod subspace;
pub mod svdpower;
pub mod sweep;
pub mod train;

use gradguess::{GuessOptions, MlpConfig, MlpParams};

use crate::config::ExperimentConfig;
use crate::datasets::{load_splits, Splits};
use crate::error::Result;
use crate::method::Method;
use crate::output::{Output, Recorder};
use crate::train::{train, TrainSpec};

/// Everything a subcommand needs: resolved config, data and model shape.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub splits: Splits,
    pub model: MlpConfig,
    pub opts: GuessOptions,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let splits = load_splits(&cfg.data, cfg.run.seed)?;
        let model = MlpConfig::new(
            splits.train.input_dim(),
            cfg.model.width,
            cfg.model.depth,
            splits.train.class_count,
        )
        .with_bias(cfg.model.bias);
        let opts = cfg.guess_options()?;
        Ok(Context {
            cfg,
            splits,
            model,
            opts,
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    /// Training spec for `method` under the `[train]` section.
    pub fn spec(&self, method: Method, optimizer: &str, lr: f64) -> Result<TrainSpec> {
        let t = &self.cfg.train;
        let augment = self
            .splits
            .augment_flags(&self.cfg.data)
            .and_then(|f| self.splits.train.geometry.map(|g| (g, f)));
        Ok(TrainSpec {
            method,
            optimizer: self.cfg.optimizer_kind(optimizer)?,
            lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            replicates: t.replicates,
            opts: self.opts,
            eval_every: t.eval_every,
            threshold: (t.threshold > 0.0).then_some(t.threshold),
            cosine_guesses: if t.log_cosine { self.cfg.measure.guesses.max(1) } else { 0 },
            log_rank: t.log_rank,
            measure_batch: self.cfg.measure.batch,
            augment,
            checkpoint_every: t.checkpoint_every,
            checkpoint_dir: None,
            seed: self.seed(),
        })
    }

    /// Parameters after `measure.warmup_epochs` of backprop training.
    pub fn warmed_params(&self) -> Result<MlpParams<f32>> {
        let mut spec = self.spec(Method::Backprop, &self.cfg.train.optimizer, self.cfg.train.lr)?;
        spec.epochs = self.cfg.measure.warmup_epochs;
        spec.cosine_guesses = 0;
        spec.log_rank = false;
        spec.threshold = None;
        spec.eval_every = 0;
        let mut sink = |_| Ok(());
        Ok(train(&self.model, &self.splits, &spec, &mut sink, None)?.params)
    }

    pub fn recorder(&self, out: Option<&Output>, command: &str) -> Result<Recorder> {
        Recorder::open(out, command)
    }

    pub fn base_notes(&self) -> Vec<(String, String)> {
        vec![
            ("data_source".into(), self.splits.source.clone()),
            ("train_examples".into(), self.splits.train.len().to_string()),
            ("test_examples".into(), self.splits.test.len().to_string()),
            ("model".into(), format!("{:?}", self.model.layer_dims())),
            (
                "optimizer".into(),
                self.cfg
                    .optimizer_kind(&self.cfg.train.optimizer)
                    .map(|k| k.to_string())
                    .unwrap_or_default(),
            ),
            ("guess_norm".into(), self.opts.norm.to_string()),
            ("svd_keep_top".into(), self.opts.svd_keep_top.to_string()),
        ]
    }
}
