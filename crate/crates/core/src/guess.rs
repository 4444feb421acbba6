//! Gradient-guess generators and the forward-gradient estimator built on them.
//!
//! A guess is either a weight-space direction (directional descent and the
//! cosine-matched control) or one tangent per pre-activation per example.
//! Each replicate scales its guess by the directional derivative along it;
//! pre-activation guesses are turned into weight updates with the same outer
//! product backprop uses.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::svd;
use crate::network::{
    assemble_weight_update, jvp_preact_traced, jvp_weight, ForwardTrace, GradEstimate, Gradients,
    MlpParams, WeightSpace,
};
use crate::rng::{RngStream, UniformRange};
use crate::tensor::{dot, matmul, Matrix, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuessMethod {
    /// Isotropic weight-space direction.
    DirectionalDescent,
    /// Isotropic pre-activation tangents.
    ActivationPerturbation,
    /// Random mixtures of the batch's own activations, masked.
    ActivationMixing,
    /// Noise pushed through the next layer's transposed weights, masked.
    WTranspose,
    /// Noise backpropagated through the next `l` layers.
    LDownstream(usize),
    /// One-layer-downstream with uniform noise and the exact output error
    /// on the last layer.
    SelfSharpening,
    /// `WTranspose` through a copy of the next weights with singular values
    /// raised to this power.
    SvdPowerWT(f64),
    /// Oracle-built direction at exactly this angle (radians) to the gradient.
    SlerpMatched(f64),
}

impl GuessMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GuessMethod::LDownstream(0) => Err(Error::invalid("downstream depth must be >= 1")),
            GuessMethod::SvdPowerWT(p) if !(p > 0.0 && p.is_finite()) => {
                Err(Error::invalid(format!("svd power must be > 0, got {p}")))
            }
            GuessMethod::SlerpMatched(t) if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&t) => {
                Err(Error::invalid(format!("slerp angle must lie in [0, pi/2], got {t}")))
            }
            _ => Ok(()),
        }
    }

    /// True for methods that read the exact gradient.
    pub fn uses_oracle(&self) -> bool {
        matches!(self, GuessMethod::SlerpMatched(_))
    }

    pub fn is_weight_space(&self) -> bool {
        matches!(
            self,
            GuessMethod::DirectionalDescent | GuessMethod::SlerpMatched(_)
        )
    }

    /// Slerp control for a target cosine.
    pub fn slerp_for_cosine(cos: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cos) {
            return Err(Error::invalid(format!("target cosine {cos} outside [0, 1]")));
        }
        Ok(GuessMethod::SlerpMatched(cos.acos()))
    }
}

/// Short descriptor that round-trips through [`FromStr`].
impl fmt::Display for GuessMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuessMethod::DirectionalDescent => write!(f, "directional"),
            GuessMethod::ActivationPerturbation => write!(f, "act-perturb"),
            GuessMethod::ActivationMixing => write!(f, "act-mixing"),
            GuessMethod::WTranspose => write!(f, "wt"),
            GuessMethod::LDownstream(l) => write!(f, "downstream:{l}"),
            GuessMethod::SelfSharpening => write!(f, "self-sharpening"),
            GuessMethod::SvdPowerWT(p) => write!(f, "svd-power:{p}"),
            GuessMethod::SlerpMatched(t) => write!(f, "slerp:{t}"),
        }
    }
}

impl FromStr for GuessMethod {
    type Err = Error;

    /// Accepts the [`Display`](fmt::Display) forms plus `slerp-cos:<c>`
    /// (target cosine instead of angle).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |what: &str| -> Result<f64> {
            arg.ok_or_else(|| Error::invalid(format!("{what} needs an argument: {s}")))?
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad number in {s}: {e}")))
        };
        let m = match head {
            "directional" => GuessMethod::DirectionalDescent,
            "act-perturb" => GuessMethod::ActivationPerturbation,
            "act-mixing" => GuessMethod::ActivationMixing,
            "wt" => GuessMethod::WTranspose,
            "downstream" => {
                let l = num("downstream")?;
                if l.fract() != 0.0 || l < 1.0 {
                    return Err(Error::invalid(format!("downstream depth must be a positive integer: {s}")));
                }
                GuessMethod::LDownstream(l as usize)
            }
            "self-sharpening" => GuessMethod::SelfSharpening,
            "svd-power" => GuessMethod::SvdPowerWT(num("svd-power")?),
            "slerp" => GuessMethod::SlerpMatched(num("slerp")?),
            "slerp-cos" => GuessMethod::slerp_for_cosine(num("slerp-cos")?)?,
            _ => return Err(Error::invalid(format!("unknown guess method {s:?}"))),
        };
        if arg.is_some() && !matches!(head, "downstream" | "svd-power" | "slerp" | "slerp-cos") {
            return Err(Error::invalid(format!("{head} takes no argument")));
        }
        m.validate()?;
        Ok(m)
    }
}

/// Scope over which structured pre-activation guesses are rescaled to unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuessNorm {
    /// Per example, over the concatenation of every layer's guess.
    #[default]
    PerExample,
    /// Per example and per layer.
    PerLayer,
    None,
}

impl FromStr for GuessNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example" | "per-example" => Ok(GuessNorm::PerExample),
            "layer" | "per-layer" => Ok(GuessNorm::PerLayer),
            "none" => Ok(GuessNorm::None),
            _ => Err(Error::invalid(format!("unknown normalization {s:?}"))),
        }
    }
}

impl fmt::Display for GuessNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuessNorm::PerExample => "example",
            GuessNorm::PerLayer => "layer",
            GuessNorm::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessOptions {
    /// Applies to mixing, W^T, l-downstream and svd-power guesses.
    pub norm: GuessNorm,
    /// Noise support for self-sharpening.
    pub uniform: UniformRange,
    /// Rescale a powered spectrum so its top singular value is unchanged.
    pub svd_keep_top: bool,
    /// Apply the ReLU mask to structured guesses.
    pub mask: bool,
}

impl Default for GuessOptions {
    fn default() -> Self {
        GuessOptions {
            norm: GuessNorm::PerExample,
            uniform: UniformRange::Centered,
            svd_keep_top: true,
            mask: true,
        }
    }
}

impl GuessOptions {
    /// Full descriptor of a method under these options, for provenance.
    pub fn describe(&self, method: &GuessMethod) -> String {
        let mut s = method.to_string();
        let mut tags: Vec<String> = Vec::new();
        match method {
            GuessMethod::ActivationMixing
            | GuessMethod::WTranspose
            | GuessMethod::LDownstream(_)
            | GuessMethod::SvdPowerWT(_) => {
                tags.push(format!("norm={}", self.norm));
                if !self.mask {
                    tags.push("mask=off".into());
                }
            }
            GuessMethod::SelfSharpening => tags.push(format!(
                "noise={}",
                match self.uniform {
                    UniformRange::Centered => "u(-1,1)",
                    UniformRange::Unit => "u(0,1)",
                }
            )),
            GuessMethod::SlerpMatched(_) => tags.push("oracle".into()),
            _ => {}
        }
        if let GuessMethod::SvdPowerWT(_) = method {
            tags.push(format!("keep_top={}", self.svd_keep_top));
        }
        if !tags.is_empty() {
            s.push('[');
            s.push_str(&tags.join(","));
            s.push(']');
        }
        s
    }
}

/// One draw of a guess.
#[derive(Debug, Clone)]
pub enum GuessSet<T: Real = f32> {
    WeightSpace(WeightSpace<T>),
    /// `preact[i]` is batch × out_i, aligned with the trace's pre-activations.
    Preact(Vec<Matrix<T>>),
}

impl<T: Real> GuessSet<T> {
    pub fn is_finite(&self) -> bool {
        match self {
            GuessSet::WeightSpace(w) => w.is_finite(),
            GuessSet::Preact(p) => p.iter().all(|m| m.is_finite()),
        }
    }

    pub fn preact(&self) -> Option<&[Matrix<T>]> {
        match self {
            GuessSet::Preact(p) => Some(p),
            GuessSet::WeightSpace(_) => None,
        }
    }

    pub fn weight_space(&self) -> Option<&WeightSpace<T>> {
        match self {
            GuessSet::WeightSpace(w) => Some(w),
            GuessSet::Preact(_) => None,
        }
    }
}

fn randn_matrix<T: Real>(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix<T> {
    Matrix::from_vec(rows, cols, rng.randn(rows * cols).0).expect("sized")
}

fn apply_mask<T: Real>(g: &mut Matrix<T>, mask: &Matrix<T>) {
    for (x, &m) in g.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *x *= m;
    }
}

/// Rescales per-example guesses in place.
pub fn normalize_guesses<T: Real>(guesses: &mut [Matrix<T>], norm: GuessNorm) {
    match norm {
        GuessNorm::None => {}
        GuessNorm::PerLayer => guesses.iter_mut().for_each(|g| g.normalize_rows()),
        GuessNorm::PerExample => {
            let b = guesses.first().map_or(0, |g| g.rows());
            for r in 0..b {
                let total: T = guesses.iter().map(|g| dot(g.row(r), g.row(r))).sum();
                if total > T::zero() {
                    let inv = T::one() / total.sqrt();
                    for g in guesses.iter_mut() {
                        g.row_mut(r).iter_mut().for_each(|x| *x *= inv);
                    }
                }
            }
        }
    }
}

/// Directional-descent guess: every entry `N(0, 1) / sqrt(N)`.
pub fn gen_directional<T: Real>(params: &MlpParams<T>, rng: &mut RngStream) -> WeightSpace<T> {
    let n = params.param_count();
    let scale = 1.0 / (n as f64).sqrt();
    let mut d = WeightSpace::zeros_like(params);
    d.for_each_mut(|x| *x = T::lit(rng.normal::<f64>() * scale));
    d
}

/// i.i.d. `N(0, 1)` on every pre-activation of every example.
pub fn gen_activation_perturbation<T: Real>(trace: &ForwardTrace<T>, rng: &mut RngStream) -> Vec<Matrix<T>> {
    trace
        .pre
        .iter()
        .map(|s| randn_matrix(s.rows(), s.cols(), rng))
        .collect()
}

/// Hidden-layer mixing guesses before masking and normalization: row `b` of
/// layer `i` is `Σ_c α_{b,c} x_{i+1}[c]` with fresh `α ~ N(0, 1)` per example.
pub fn mixing_directions<T: Real>(trace: &ForwardTrace<T>, rng: &mut RngStream) -> Result<Vec<Matrix<T>>> {
    let b = trace.batch_size();
    trace
        .post
        .iter()
        .map(|x| {
            let alpha = randn_matrix::<T>(b, b, rng);
            matmul(&alpha, x)
        })
        .collect()
}

pub fn gen_activation_mixing<T: Real>(
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    if trace.batch_size() < 2 {
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| warn!("activation mixing needs a batch of at least 2; using activation perturbation"));
        return Ok(gen_activation_perturbation(trace, rng));
    }
    let mut g = mixing_directions(trace, rng)?;
    if opts.mask {
        for (gi, m) in g.iter_mut().zip(&trace.masks) {
            apply_mask(gi, m);
        }
    }
    let last = trace.logits();
    g.push(randn_matrix(last.rows(), last.cols(), rng));
    normalize_guesses(&mut g, opts.norm);
    Ok(g)
}

/// Backpropagates per-example vectors sitting at pre-activation `from` down
/// to pre-activation `to` through the stored masks and weights.
pub fn downstream_chain<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    from: usize,
    to: usize,
    vectors: &Matrix<T>,
    mask: bool,
) -> Result<Matrix<T>> {
    if to > from || from >= trace.depth() {
        return Err(Error::invalid(format!("bad downstream range {to}..={from}")));
    }
    let mut g = vectors.clone();
    for m in (to + 1..=from).rev() {
        g = matmul(&g, &params.weights[m])?;
        if mask {
            apply_mask(&mut g, &trace.masks[m - 1]);
        }
    }
    Ok(g)
}

fn wt_guesses<T: Real>(
    next_weights: &[&Matrix<T>],
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    let b = trace.batch_size();
    let mut g = Vec::with_capacity(trace.depth());
    for (i, w) in next_weights.iter().enumerate() {
        let noise = randn_matrix::<T>(b, w.rows(), rng);
        let mut gi = matmul(&noise, w)?;
        if opts.mask {
            apply_mask(&mut gi, &trace.masks[i]);
        }
        g.push(gi);
    }
    let last = trace.logits();
    g.push(randn_matrix(last.rows(), last.cols(), rng));
    normalize_guesses(&mut g, opts.norm);
    Ok(g)
}

/// `mask_i ⊙ (W_{i+1}ᵀ n)` per example, `n ~ N(0, 1)`; plain normal noise on the logits.
pub fn gen_w_transpose<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    let next: Vec<&Matrix<T>> = params.weights[1..].iter().collect();
    wt_guesses(&next, trace, rng, opts)
}

/// Noise at `s_{min(i+l, k-1)}` backpropagated to `s_i`; for `l = 1` this is
/// the W^T guess.
pub fn gen_l_downstream<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    l: usize,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    let k = trace.depth();
    if l == 0 || l > k - 1 {
        return Err(Error::invalid(format!("downstream depth {l} outside [1, {}]", k - 1)));
    }
    let b = trace.batch_size();
    let mut g = Vec::with_capacity(k);
    for i in 0..k - 1 {
        let from = (i + l).min(k - 1);
        let noise = randn_matrix::<T>(b, trace.pre[from].cols(), rng);
        g.push(downstream_chain(params, trace, from, i, &noise, opts.mask)?);
    }
    let last = trace.logits();
    g.push(randn_matrix(last.rows(), last.cols(), rng));
    normalize_guesses(&mut g, opts.norm);
    Ok(g)
}

/// Uniform-noise one-layer-downstream guesses, with the exact output error
/// `softmax(s_k) - onehot` on the last layer. Not normalized.
pub fn gen_self_sharpening<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    let b = trace.batch_size();
    let k = trace.depth();
    let mut g = Vec::with_capacity(k);
    for i in 0..k - 1 {
        let w = &params.weights[i + 1];
        let noise = Matrix::from_vec(b, w.rows(), rng.randu_in(b * w.rows(), opts.uniform).0)?;
        let mut gi = matmul(&noise, w)?;
        if opts.mask {
            apply_mask(&mut gi, &trace.masks[i]);
        }
        g.push(gi);
    }
    g.push(trace.output_error());
    Ok(g)
}

/// `U · diag(σ^p) · Vᵀ`, optionally rescaled so the top value stays `σ₁`.
pub fn powered_matrix<T: Real>(w: &Matrix<T>, power: f64, keep_top: bool) -> Result<Matrix<T>> {
    let s = svd(w)?;
    let top = s.singular_values.first().map_or(0.0, |v| v.as_f64());
    let rescale = if keep_top && top > 0.0 {
        top / top.powf(power)
    } else {
        1.0
    };
    let values: Vec<T> = s
        .singular_values
        .iter()
        .map(|v| T::lit(v.as_f64().powf(power) * rescale))
        .collect();
    Ok(s.reconstruct_with(&values))
}

/// The downstream weights `W_2..W_k` with powered spectra.
pub fn powered_next_weights<T: Real>(params: &MlpParams<T>, power: f64, keep_top: bool) -> Result<Vec<Matrix<T>>> {
    params.weights[1..]
        .iter()
        .map(|w| powered_matrix(w, power, keep_top))
        .collect()
}

pub fn gen_svd_power<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    rng: &mut RngStream,
    power: f64,
    opts: &GuessOptions,
) -> Result<Vec<Matrix<T>>> {
    if !(0.1..=4.0).contains(&power) {
        return Err(Error::invalid(format!("svd power {power} outside [0.1, 4]")));
    }
    let powered = powered_next_weights(params, power, opts.svd_keep_top)?;
    let refs: Vec<&Matrix<T>> = powered.iter().collect();
    wt_guesses(&refs, trace, rng, opts)
}

/// Unit direction at angle `theta` to the oracle gradient:
/// `cos θ · ĝ + sin θ · ε⊥ / |ε⊥|`, with `ε` a directional-descent draw.
pub fn gen_slerp_matched<T: Real>(
    oracle: &WeightSpace<T>,
    rng: &mut RngStream,
    theta: f64,
) -> Result<WeightSpace<T>> {
    let gnorm = oracle.norm();
    if gnorm == T::zero() {
        return Err(Error::ZeroNorm("gen_slerp_matched"));
    }
    let unit = oracle.scaled(T::one() / gnorm);
    // Draw until the orthogonal part is usable; a second draw is astronomically rare.
    loop {
        let eps = gen_directional(oracle, rng);
        let mut perp = eps.clone();
        perp.axpy(-eps.dot(&unit)?, &unit)?;
        let pn = perp.norm();
        if pn <= T::lit(1e-6) * eps.norm() {
            continue;
        }
        // One more projection pass keeps the angle exact at 32 bits.
        perp.axpy(-perp.dot(&unit)?, &unit)?;
        let pn = perp.norm();
        let mut out = unit.scaled(T::lit(theta.cos()));
        out.axpy(T::lit(theta.sin()) / pn, &perp)?;
        return Ok(out);
    }
}

/// What a generator may look at.
#[derive(Clone, Copy)]
pub struct GuessContext<'a, T: Real = f32> {
    pub params: &'a MlpParams<T>,
    pub trace: &'a ForwardTrace<T>,
    /// Only the oracle-using control reads this.
    pub oracle: Option<&'a Gradients<T>>,
}

/// Per-call precomputation shared by all replicates.
enum Prepared<T: Real> {
    None,
    Powered(Vec<Matrix<T>>),
}

fn prepare<T: Real>(method: &GuessMethod, ctx: &GuessContext<'_, T>, opts: &GuessOptions) -> Result<Prepared<T>> {
    method.validate()?;
    match *method {
        GuessMethod::SvdPowerWT(p) => {
            if !(0.1..=4.0).contains(&p) {
                return Err(Error::invalid(format!("svd power {p} outside [0.1, 4]")));
            }
            Ok(Prepared::Powered(powered_next_weights(ctx.params, p, opts.svd_keep_top)?))
        }
        GuessMethod::SlerpMatched(_) if ctx.oracle.is_none() => Err(Error::OracleRequired(method.to_string())),
        _ => Ok(Prepared::None),
    }
}

fn draw_prepared<T: Real>(
    method: &GuessMethod,
    ctx: &GuessContext<'_, T>,
    prepared: &Prepared<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<GuessSet<T>> {
    let set = match *method {
        GuessMethod::DirectionalDescent => GuessSet::WeightSpace(gen_directional(ctx.params, rng)),
        GuessMethod::ActivationPerturbation => GuessSet::Preact(gen_activation_perturbation(ctx.trace, rng)),
        GuessMethod::ActivationMixing => GuessSet::Preact(gen_activation_mixing(ctx.trace, rng, opts)?),
        GuessMethod::WTranspose => GuessSet::Preact(gen_w_transpose(ctx.params, ctx.trace, rng, opts)?),
        GuessMethod::LDownstream(l) => GuessSet::Preact(gen_l_downstream(ctx.params, ctx.trace, rng, l, opts)?),
        GuessMethod::SelfSharpening => GuessSet::Preact(gen_self_sharpening(ctx.params, ctx.trace, rng, opts)?),
        GuessMethod::SvdPowerWT(_) => {
            let Prepared::Powered(w) = prepared else {
                unreachable!("prepared above")
            };
            let refs: Vec<&Matrix<T>> = w.iter().collect();
            GuessSet::Preact(wt_guesses(&refs, ctx.trace, rng, opts)?)
        }
        GuessMethod::SlerpMatched(theta) => {
            let oracle = ctx.oracle.ok_or_else(|| Error::OracleRequired(method.to_string()))?;
            GuessSet::WeightSpace(gen_slerp_matched(&oracle.weights, rng, theta)?)
        }
    };
    Ok(set)
}

/// One guess draw.
pub fn draw_guess<T: Real>(
    method: &GuessMethod,
    ctx: &GuessContext<'_, T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<GuessSet<T>> {
    let prepared = prepare(method, ctx, opts)?;
    draw_prepared(method, ctx, &prepared, rng, opts)
}

enum Accum<T: Real> {
    Weight(WeightSpace<T>),
    Preact(Vec<Matrix<T>>),
}

/// One replicate: a guess scaled by its directional derivative(s).
fn scaled_replicate<T: Real>(
    method: &GuessMethod,
    ctx: &GuessContext<'_, T>,
    prepared: &Prepared<T>,
    rng: &mut RngStream,
    opts: &GuessOptions,
) -> Result<Accum<T>> {
    match draw_prepared(method, ctx, prepared, rng, opts)? {
        GuessSet::WeightSpace(mut d) => {
            let j = jvp_weight(ctx.params, &ctx.trace.input, &ctx.trace.labels, &d)?;
            d.scale_in_place(j);
            Ok(Accum::Weight(d))
        }
        GuessSet::Preact(mut g) => {
            let j = jvp_preact_traced(ctx.params, ctx.trace, &g)?;
            for gi in g.iter_mut() {
                for (r, &jr) in j.iter().enumerate() {
                    gi.row_mut(r).iter_mut().for_each(|x| *x *= jr);
                }
            }
            Ok(Accum::Preact(g))
        }
    }
}

fn accumulate<T: Real>(acc: &mut Option<Accum<T>>, item: Accum<T>) -> Result<()> {
    match (acc.as_mut(), item) {
        (None, item) => *acc = Some(item),
        (Some(Accum::Weight(a)), Accum::Weight(b)) => a.axpy(T::one(), &b)?,
        (Some(Accum::Preact(a)), Accum::Preact(b)) => {
            for (x, y) in a.iter_mut().zip(&b) {
                x.axpy(T::one(), y)?;
            }
        }
        _ => unreachable!("one method per estimator"),
    }
    Ok(())
}

/// Replicate-averaged forward-gradient estimate that can be grown
/// incrementally, e.g. to trace cosine against replicate count.
///
/// Replicate `r` always draws from `base.child(&[r])`, so results do not
/// depend on how replicates are spread over threads.
pub struct Estimator<'a, T: Real = f32> {
    method: GuessMethod,
    ctx: GuessContext<'a, T>,
    opts: GuessOptions,
    prepared: Prepared<T>,
    base: RngStream,
    sum: Option<Accum<T>>,
    count: usize,
}

const PAR_CHUNK: usize = 32;

impl<'a, T: Real> Estimator<'a, T> {
    pub fn new(method: GuessMethod, ctx: GuessContext<'a, T>, rng: &RngStream, opts: GuessOptions) -> Result<Self> {
        let prepared = prepare(&method, &ctx, &opts)?;
        Ok(Estimator {
            method,
            ctx,
            opts,
            prepared,
            base: rng.clone(),
            sum: None,
            count: 0,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Draw `n` more replicates.
    pub fn extend(&mut self, n: usize) -> Result<()> {
        let start = self.count;
        let end = start + n;
        let mut next = start;
        while next < end {
            let stop = (next + PAR_CHUNK).min(end);
            let items: Vec<Result<Accum<T>>> = (next..stop)
                .into_par_iter()
                .map(|r| {
                    let mut rng = self.base.child(&[r as u64]);
                    scaled_replicate(&self.method, &self.ctx, &self.prepared, &mut rng, &self.opts)
                })
                .collect();
            for item in items {
                accumulate(&mut self.sum, item?)?;
            }
            next = stop;
        }
        self.count = end;
        Ok(())
    }

    /// Current average as a weight-space update.
    pub fn estimate(&self) -> Result<GradEstimate<T>> {
        let inv = T::one() / T::lit(self.count.max(1) as f64);
        match &self.sum {
            None => Ok(WeightSpace::zeros_like(self.ctx.params)),
            Some(Accum::Weight(w)) => Ok(w.scaled(inv)),
            Some(Accum::Preact(g)) => {
                let mean: Vec<Matrix<T>> = g.iter().map(|m| m.scale(inv)).collect();
                assemble_weight_update(self.ctx.trace, &mean)
            }
        }
    }
}

/// Average of `replicates` scaled guesses, as a weight-space update.
pub fn estimate_gradient<T: Real>(
    method: &GuessMethod,
    ctx: &GuessContext<'_, T>,
    rng: &RngStream,
    replicates: usize,
    opts: &GuessOptions,
) -> Result<GradEstimate<T>> {
    if replicates == 0 {
        return Err(Error::invalid("replicates must be >= 1"));
    }
    let mut est = Estimator::new(*method, *ctx, rng, *opts)?;
    est.extend(replicates)?;
    est.estimate()
}
