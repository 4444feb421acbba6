//! Analyses of guess quality: cosine to the true gradient, replication
//! curves, one-step loss reduction, effective rank, activation/gradient
//! subspace alignment and the toy-chain bias law.

use crate::error::{Error, Result};
use crate::guess::{Estimator, GuessContext, GuessMethod, GuessNorm, GuessOptions};
use crate::linalg::{gram_schmidt, pca_basis, singular_values};
use crate::network::{assemble_weight_update, loss, ForwardTrace, GradEstimate, Gradients, MlpParams, WeightSpace};
use crate::rng::RngStream;
use crate::tensor::{dot, matmul, Matrix, Real, Vector};

/// One scalar measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
    /// Full method descriptor, e.g. `wt[norm=example]`.
    pub method: String,
    pub metric: String,
    pub layer: Option<usize>,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(seed: u64, epoch: u64, step: u64, method: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        MetricRecord {
            seed,
            epoch,
            step,
            method: method.into(),
            metric: metric.into(),
            layer: None,
            value,
        }
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = Some(layer);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CosineScope {
    Global,
    Layer(usize),
}

/// Cosine between two weight-space vectors, accumulated in f64.
pub fn cosine_similarity<T: Real>(estimate: &WeightSpace<T>, oracle: &WeightSpace<T>, scope: CosineScope) -> Result<f64> {
    let a = estimate.cast::<f64>();
    let b = oracle.cast::<f64>();
    let (ab, aa, bb) = match scope {
        CosineScope::Global => (a.dot(&b)?, a.dot(&a)?, b.dot(&b)?),
        CosineScope::Layer(i) => {
            if i >= a.depth() || a.depth() != b.depth() {
                return Err(Error::invalid(format!("layer {i} out of range")));
            }
            if a.weights[i].shape() != b.weights[i].shape() {
                return Err(Error::Shape {
                    op: "cosine",
                    lhs: a.weights[i].shape(),
                    rhs: b.weights[i].shape(),
                });
            }
            (a.layer_dot(&b, i), a.layer_dot(&a, i), b.layer_dot(&b, i))
        }
    };
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroNorm("cosine_similarity"));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine to `oracle` after averaging `k` replicates, for each `k` in
/// ascending order. Replicates are shared between points, so the curve is one
/// growing sample.
pub fn replication_curve<T: Real>(
    method: &GuessMethod,
    ctx: &GuessContext<'_, T>,
    oracle: &GradEstimate<T>,
    rng: &RngStream,
    ks: &[usize],
    opts: &GuessOptions,
) -> Result<Vec<(usize, f64)>> {
    if ks.windows(2).any(|w| w[0] >= w[1]) || ks.first() == Some(&0) {
        return Err(Error::invalid("replication counts must be positive and increasing"));
    }
    let mut est = Estimator::new(*method, *ctx, rng, *opts)?;
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        est.extend(k - est.count())?;
        out.push((k, cosine_similarity(&est.estimate()?, oracle, CosineScope::Global)?));
    }
    Ok(out)
}

/// The 2, 4, ..., 8192 grid (with 1 prepended).
pub fn doubling_grid(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| Some(k * 2))
        .take_while(|&k| k <= max)
        .collect()
}

pub const STEP_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

#[derive(Debug, Clone, PartialEq)]
pub struct OneStep {
    /// Best loss reduction of the estimate over the step grid.
    pub reduction: f64,
    pub best_lr: f64,
    /// Same for the exact gradient.
    pub backprop_reduction: f64,
    pub backprop_lr: f64,
    /// `reduction / backprop_reduction`; `None` if backprop did not reduce the loss.
    pub ratio: Option<f64>,
}

fn best_reduction<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    direction: &GradEstimate<T>,
    grid: &[f64],
) -> Result<(f64, f64)> {
    let l0 = loss(params, batch, labels)?.as_f64();
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &lr in grid {
        let mut p = params.clone();
        p.axpy(T::lit(-lr), direction)?;
        let l = match loss(&p, batch, labels) {
            Ok(l) if l.is_finite() => l.as_f64(),
            Ok(_) | Err(Error::NonFinite { .. }) => continue,
            Err(e) => return Err(e),
        };
        if l0 - l > best.0 {
            best = (l0 - l, lr);
        }
    }
    Ok(best)
}

/// Loss reduction from one plain step along `estimate`, relative to one step
/// along the exact gradient, each at its best step size in `grid`.
pub fn one_step_effectiveness<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    estimate: &GradEstimate<T>,
    oracle: &GradEstimate<T>,
    grid: &[f64],
) -> Result<OneStep> {
    if grid.is_empty() {
        return Err(Error::invalid("empty step grid"));
    }
    let (reduction, best_lr) = best_reduction(params, batch, labels, estimate, grid)?;
    let (backprop_reduction, backprop_lr) = best_reduction(params, batch, labels, oracle, grid)?;
    let ratio = (backprop_reduction > 0.0).then(|| reduction / backprop_reduction);
    Ok(OneStep {
        reduction,
        best_lr,
        backprop_reduction,
        backprop_lr,
        ratio,
    })
}

/// `exp(H(p))` with `p_i = σ_i / Σσ`.
pub fn effective_rank<T: Real>(a: &Matrix<T>) -> Result<f64> {
    let s = singular_values(a)?;
    let total: f64 = s.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroNorm("effective_rank"));
    }
    let h: f64 = s
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / total;
            -p * p.ln()
        })
        .sum();
    Ok(h.exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceReport {
    pub layer: usize,
    /// Basis size actually used.
    pub m: usize,
    pub activation_cosine: f64,
    pub random_cosine: f64,
    /// The requested size exceeded the available rank.
    pub truncated: bool,
}

/// Mean over rows with non-zero gradient of `‖P g‖ / ‖g‖`.
fn mean_projection_cosine(grads: &Matrix<f64>, basis: &[Vector<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..grads.rows() {
        let g = grads.row(r);
        let gg = dot(g, g);
        if gg == 0.0 {
            continue;
        }
        let pp: f64 = basis.iter().map(|b| dot(g, b).powi(2)).sum();
        sum += (pp / gg).sqrt().min(1.0);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// For each `m`, how much of each example's gradient with respect to a
/// layer's activations lies in the top-`m` principal subspace of that layer's
/// batch activations, against an `m`-dimensional random subspace.
///
/// `activations` and `grads` are batch × width; row `b` of `grads` is
/// `∂L_b/∂x[b]`. Random bases are nested prefixes of one draw.
pub fn subspace_alignment<T: Real>(
    layer: usize,
    activations: &Matrix<T>,
    grads: &Matrix<T>,
    m_grid: &[usize],
    center: bool,
    rng: &mut RngStream,
) -> Result<Vec<SubspaceReport>> {
    if activations.cols() != grads.cols() {
        return Err(Error::Shape {
            op: "subspace_alignment",
            lhs: activations.shape(),
            rhs: grads.shape(),
        });
    }
    let width = activations.cols();
    let m_max = m_grid.iter().copied().max().unwrap_or(0);
    if m_max == 0 {
        return Err(Error::invalid("empty basis-size grid"));
    }
    let pca = pca_basis(activations, m_max.min(width), center)?;
    let draws: Vec<Vector<f64>> = (0..m_max.min(width)).map(|_| rng.randn::<f64>(width)).collect();
    let random = gram_schmidt(&draws).vectors;
    let g = grads.cast::<f64>();
    Ok(m_grid
        .iter()
        .map(|&m| {
            let ma = m.min(pca.len());
            let mr = m.min(random.len());
            SubspaceReport {
                layer,
                m: ma,
                activation_cosine: mean_projection_cosine(&g, &pca[..ma]),
                random_cosine: mean_projection_cosine(&g, &random[..mr]),
                truncated: ma < m,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasToy {
    pub k: u32,
    pub measured: f64,
    pub predicted: f64,
    pub g_norm: f64,
}

/// Monte-Carlo bias of `(g·y) y` with `y = J n`, `J` a chain of `k` layers
/// each equal to `2 I`, against the closed form `(4^k - 1) ‖g‖`.
pub fn bias_toy_chain(k: u32, dim: usize, replicates: usize, rng: &mut RngStream) -> Result<BiasToy> {
    if dim == 0 || replicates == 0 {
        return Err(Error::invalid("bias toy needs dim > 0 and replicates > 0"));
    }
    let g = rng.randn::<f64>(dim);
    let layer = Matrix::<f64>::identity(dim).scale(2.0);
    let mut sum = vec![0.0; dim];
    const CHUNK: usize = 4096;
    let mut done = 0;
    while done < replicates {
        let n = CHUNK.min(replicates - done);
        let mut y = Matrix::from_vec(n, dim, rng.randn::<f64>(n * dim).0)?;
        for _ in 0..k {
            y = matmul(&y, &layer)?;
        }
        for r in 0..n {
            let row = y.row(r);
            let c = dot(&g, row);
            for (s, &v) in sum.iter_mut().zip(row) {
                *s += c * v;
            }
        }
        done += n;
    }
    let inv = 1.0 / replicates as f64;
    let measured = sum
        .iter()
        .zip(g.iter())
        .map(|(s, gi)| (s * inv - gi).powi(2))
        .sum::<f64>()
        .sqrt();
    let g_norm = g.norm();
    Ok(BiasToy {
        k,
        measured,
        predicted: (4f64.powi(k as i32) - 1.0) * g_norm,
        g_norm,
    })
}

#[derive(Debug, Clone)]
pub struct BiasLaw<T: Real = f32> {
    /// Replicate mean of unnormalized W^T estimates.
    pub measured: GradEstimate<T>,
    /// The mean the covariance argument predicts.
    pub predicted: GradEstimate<T>,
    /// Per layer `‖measured - predicted‖ / ‖predicted‖`.
    pub relative_error: Vec<f64>,
}

/// Checks that unnormalized W^T guesses estimate the gradient scaled by the
/// guess covariance: per example, `mask_i ⊙ (W_{i+1}ᵀ W_{i+1} ∂L_b/∂s_i)` on
/// hidden layers and the exact error on the logits (whose guess is isotropic).
pub fn wt_bias_law<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    oracle: &Gradients<T>,
    replicates: usize,
    rng: &RngStream,
) -> Result<BiasLaw<T>> {
    let opts = GuessOptions {
        norm: GuessNorm::None,
        ..Default::default()
    };
    let ctx = GuessContext {
        params,
        trace,
        oracle: None,
    };
    let measured = crate::guess::estimate_gradient(&GuessMethod::WTranspose, &ctx, rng, replicates, &opts)?;
    let k = trace.depth();
    let mut scaled = Vec::with_capacity(k);
    for i in 0..k - 1 {
        let w = &params.weights[i + 1];
        let cov = crate::tensor::matmul_at(w, w)?;
        let p = matmul(&oracle.preact[i], &cov)?.hadamard(&trace.masks[i])?;
        scaled.push(p);
    }
    scaled.push(oracle.preact[k - 1].clone());
    let predicted = assemble_weight_update(trace, &scaled)?;
    let relative_error = (0..k)
        .map(|i| {
            let mut d = measured.clone();
            d.axpy(-T::one(), &predicted).expect("same shape");
            d.layer_norm(i).as_f64() / predicted.layer_norm(i).as_f64()
        })
        .collect();
    Ok(BiasLaw {
        measured,
        predicted,
        relative_error,
    })
}
