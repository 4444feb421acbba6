//! Parameter-update rules: SGD with momentum, AdamW and StableAdamW.

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};
use crate::network::{GradEstimate, MlpParams, WeightSpace};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    AdamW(AdamParams),
    /// AdamW whose learning rate is divided, per tensor, by
    /// `max(1, sqrt(mean(ĝ² / max(v̂, eps²))))`.
    StableAdamW(AdamParams),
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerKind::Sgd { momentum } if !(0.0..1.0).contains(momentum) => {
                Err(Error::invalid(format!("momentum {momentum} outside [0, 1)")))
            }
            OptimizerKind::AdamW(a) | OptimizerKind::StableAdamW(a)
                if !((0.0..1.0).contains(&a.beta1)
                    && (0.0..1.0).contains(&a.beta2)
                    && a.eps > 0.0
                    && a.weight_decay >= 0.0) =>
            {
                Err(Error::invalid(format!("bad adam hyperparameters {a:?}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sgd { momentum } => write!(f, "sgd(momentum={momentum})"),
            OptimizerKind::AdamW(a) => write!(
                f,
                "adamw(beta1={},beta2={},eps={:e},wd={})",
                a.beta1, a.beta2, a.eps, a.weight_decay
            ),
            OptimizerKind::StableAdamW(a) => write!(
                f,
                "stable-adamw(beta1={},beta2={},eps={:e},wd={},clip=rms)",
                a.beta1, a.beta2, a.eps, a.weight_decay
            ),
        }
    }
}

/// Accepts `sgd`, `sgd:<momentum>`, `adamw`, `stable-adamw` (defaults otherwise).
impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = match s.trim().split_once(':') {
            Some(("sgd", m)) => OptimizerKind::Sgd {
                momentum: m
                    .parse()
                    .map_err(|e| Error::invalid(format!("bad momentum in {s:?}: {e}")))?,
            },
            None if s == "sgd" => OptimizerKind::Sgd { momentum: 0.0 },
            None if s == "adamw" || s == "adam" => OptimizerKind::AdamW(AdamParams::default()),
            None if s == "stable-adamw" || s == "stableadamw" => OptimizerKind::StableAdamW(AdamParams::default()),
            _ => return Err(Error::invalid(format!("unknown optimizer {s:?}"))),
        };
        k.validate()?;
        Ok(k)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real = f32> {
    pub kind: OptimizerKind,
    /// Momentum (SGD) or first moment (Adam family).
    first: Option<WeightSpace<T>>,
    second: Option<WeightSpace<T>>,
    step: u64,
    rejected: u64,
    /// StableAdamW clip divisors from the last step, one per tensor.
    last_clip: Vec<f64>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &MlpParams<T>) -> Result<Self> {
        kind.validate()?;
        let (first, second) = match kind {
            OptimizerKind::Sgd { momentum } if momentum == 0.0 => (None, None),
            OptimizerKind::Sgd { .. } => (Some(WeightSpace::zeros_like(params)), None),
            _ => (
                Some(WeightSpace::zeros_like(params)),
                Some(WeightSpace::zeros_like(params)),
            ),
        };
        Ok(OptimizerState {
            kind,
            first,
            second,
            step: 0,
            rejected: 0,
            last_clip: Vec::new(),
        })
    }

    /// Number of accepted updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of estimates refused for containing NaN or infinity.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn last_clip(&self) -> &[f64] {
        &self.last_clip
    }

    /// Applies one update in place. A non-finite estimate leaves parameters
    /// and state untouched, bumps [`rejected`](Self::rejected), and errors.
    pub fn apply_update(&mut self, params: &mut MlpParams<T>, estimate: &GradEstimate<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        if params.tensors().iter().map(|t| t.len()).ne(estimate.tensors().iter().map(|t| t.len())) {
            return Err(Error::Shape {
                op: "apply_update",
                lhs: (params.depth(), params.param_count()),
                rhs: (estimate.depth(), estimate.param_count()),
            });
        }
        if let Some(layer) = estimate.weights.iter().position(|w| !w.is_finite()).or_else(|| {
            estimate
                .biases
                .as_ref()
                .and_then(|bs| bs.iter().position(|b| !b.is_finite()))
        }) {
            self.rejected += 1;
            warn!("rejected non-finite update estimate (layer {layer}, {} so far)", self.rejected);
            return Err(Error::NonFinite { stage: "update", layer });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu = T::lit(momentum);
                let lr = T::lit(lr);
                match self.first.as_mut() {
                    None => params.axpy(-lr, estimate)?,
                    Some(m) => {
                        m.scale_in_place(mu);
                        m.axpy(T::one(), estimate)?;
                        params.axpy(-lr, m)?;
                    }
                }
            }
            OptimizerKind::AdamW(a) => self.adam(params, estimate, lr, a, false),
            OptimizerKind::StableAdamW(a) => self.adam(params, estimate, lr, a, true),
        }
        Ok(())
    }

    fn adam(&mut self, params: &mut MlpParams<T>, g: &GradEstimate<T>, lr: f64, a: AdamParams, stable: bool) {
        let t = self.step as i32;
        let bc1 = 1.0 - a.beta1.powi(t);
        let bc2 = 1.0 - a.beta2.powi(t);
        let (b1, b2) = (T::lit(a.beta1), T::lit(a.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let eps = T::lit(a.eps);
        let eps2 = eps * eps;
        let m = self.first.as_mut().expect("adam state");
        let v = self.second.as_mut().expect("adam state");
        self.last_clip.clear();
        let (inv1, inv2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
        for (((w, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(g.tensors())
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
        {
            for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g) {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
            }
            let mut rate = lr;
            if stable {
                let ratio: f64 = g
                    .iter()
                    .zip(v.iter())
                    .map(|(&gi, &vi)| (gi * gi / (vi * inv2).max(eps2)).as_f64())
                    .sum();
                let clip = (ratio / g.len().max(1) as f64).sqrt().max(1.0);
                self.last_clip.push(clip);
                rate /= clip;
            }
            let rate = T::lit(rate);
            let decay = T::one() - rate * T::lit(a.weight_decay);
            for ((wi, &mi), &vi) in w.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi * inv1;
                let vhat = vi * inv2;
                *wi = *wi * decay - rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
