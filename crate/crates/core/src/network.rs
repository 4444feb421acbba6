//! ReLU MLP: forward pass with activation trace, forward-mode tangents in
//! weight space and pre-activation space, and the exact backprop oracle.
//!
//! Layer `i` (0-based here) computes `s_i = x_i W_iᵀ + b_i` over a batch of
//! row vectors; hidden layers apply ReLU, the last layer's `s` are logits fed
//! to softmax cross-entropy. Batch loss is the mean of per-example losses.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{dot, matmul, matmul_at, matmul_bt, Matrix, Real, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Number of classes.
    pub output_dim: usize,
    /// Number of weight layers.
    pub depth: usize,
    pub width: usize,
    pub bias: bool,
}

impl MlpConfig {
    pub fn new(input_dim: usize, width: usize, depth: usize, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            output_dim,
            depth,
            width,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.width < 1 || self.input_dim < 1 || self.output_dim < 1 {
            return Err(Error::invalid("input_dim, width and output_dim must be >= 1"));
        }
        Ok(())
    }

    /// `[input, width, ..., width, output]`, `depth + 1` entries.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.depth + 1);
        d.push(self.input_dim);
        d.extend(std::iter::repeat_n(self.width, self.depth - 1));
        d.push(self.output_dim);
        d
    }

    pub fn param_count(&self) -> usize {
        let d = self.layer_dims();
        d.windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    /// Pre-activation entries per example: every hidden unit plus the logits.
    pub fn preact_dim(&self) -> usize {
        (self.depth - 1) * self.width + self.output_dim
    }
}

/// Per-layer weights (and optional biases). Used for parameters, gradients,
/// update estimates and weight-space directions alike.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpace<T: Real = f32> {
    /// `weights[i]` is `out_i × in_i`.
    pub weights: Vec<Matrix<T>>,
    pub biases: Option<Vec<Vector<T>>>,
}

pub type MlpParams<T = f32> = WeightSpace<T>;
pub type GradEstimate<T = f32> = WeightSpace<T>;

impl<T: Real> WeightSpace<T> {
    pub fn zeros_like(other: &WeightSpace<T>) -> Self {
        WeightSpace {
            weights: other
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: other
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| Vector::zeros(b.len())).collect()),
        }
    }

    pub fn zeros(config: &MlpConfig) -> Self {
        let d = config.layer_dims();
        WeightSpace {
            weights: d.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect(),
            biases: config
                .bias
                .then(|| d[1..].iter().map(|&n| Vector::zeros(n)).collect()),
        }
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn has_bias(&self) -> bool {
        self.biases.is_some()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.weights[0].cols()];
        d.extend(self.weights.iter().map(|w| w.rows()));
        d
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self
                .biases
                .as_ref()
                .map_or(0, |bs| bs.iter().map(|b| b.len()).sum())
    }

    fn same_shape(&self, other: &WeightSpace<T>) -> Result<()> {
        let ok = self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && match (&self.biases, &other.biases) {
                (None, None) => true,
                (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.len() == y.len()),
                _ => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape {
                op: "weight-space",
                lhs: (self.weights.len(), self.param_count()),
                rhs: (other.weights.len(), other.param_count()),
            })
        }
    }

    /// Flattened inner product, layer by layer in order.
    pub fn dot(&self, other: &WeightSpace<T>) -> Result<T> {
        self.same_shape(other)?;
        let mut s = T::zero();
        for i in 0..self.depth() {
            s += self.layer_dot(other, i);
        }
        Ok(s)
    }

    /// Inner product restricted to layer `i` (weights and bias).
    pub fn layer_dot(&self, other: &WeightSpace<T>, i: usize) -> T {
        let mut s = dot(self.weights[i].as_slice(), other.weights[i].as_slice());
        if let (Some(a), Some(b)) = (&self.biases, &other.biases) {
            s += dot(&a[i], &b[i]);
        }
        s
    }

    pub fn norm(&self) -> T {
        self.dot(self).expect("self-shaped").sqrt()
    }

    pub fn layer_norm(&self, i: usize) -> T {
        self.layer_dot(self, i).sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: T, x: &WeightSpace<T>) -> Result<()> {
        self.same_shape(x)?;
        for (w, xw) in self.weights.iter_mut().zip(&x.weights) {
            w.axpy(alpha, xw)?;
        }
        if let (Some(a), Some(b)) = (self.biases.as_mut(), x.biases.as_ref()) {
            for (ab, bb) in a.iter_mut().zip(b) {
                crate::tensor::axpy(alpha, bb, ab);
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: T) {
        self.for_each_mut(|x| *x *= c);
    }

    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.scale_in_place(c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> WeightSpace<U> {
        WeightSpace {
            weights: self.weights.iter().map(|w| w.cast()).collect(),
            biases: self
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| b.cast()).collect()),
        }
    }

    /// All entries: weights layer by layer, then biases layer by layer.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        let w = self.weights.iter().flat_map(|m| m.as_slice().iter());
        let b = self.biases.iter().flat_map(|bs| bs.iter().flat_map(|v| v.iter()));
        w.chain(b)
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(&mut f);
        }
        if let Some(bs) = self.biases.as_mut() {
            for b in bs {
                b.iter_mut().for_each(&mut f);
            }
        }
    }

    /// Each weight matrix, then each bias, as a flat slice.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.weights.iter().map(|w| w.as_slice()).collect();
        if let Some(bs) = &self.biases {
            out.extend(bs.iter().map(|b| &b[..]));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.weights.iter_mut().map(|w| w.as_mut_slice()).collect();
        if let Some(bs) = self.biases.as_mut() {
            out.extend(bs.iter_mut().map(|b| &mut b[..]));
        }
        out
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) for a template of the same shape.
    pub fn from_flat(template: &WeightSpace<T>, flat: &[T]) -> Result<Self> {
        if flat.len() != template.param_count() {
            return Err(Error::invalid(format!(
                "flat length {} != parameter count {}",
                flat.len(),
                template.param_count()
            )));
        }
        let mut out = template.clone();
        let mut it = flat.iter();
        out.for_each_mut(|x| *x = *it.next().expect("length checked"));
        Ok(out)
    }
}

/// Kaiming-normal weights, `N(0, 2 / fan_in)`; zero biases.
pub fn init_params<T: Real>(config: &MlpConfig, rng: &mut RngStream) -> Result<MlpParams<T>> {
    config.validate()?;
    let mut p = WeightSpace::zeros(config);
    for w in &mut p.weights {
        let std = (2.0 / w.cols() as f64).sqrt();
        for x in w.as_mut_slice() {
            *x = T::lit(rng.normal::<f64>() * std);
        }
    }
    Ok(p)
}

/// Cached activations of one forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real = f32> {
    pub input: Matrix<T>,
    pub labels: Vec<usize>,
    /// `pre[i]` = `s_i`, batch × out_i; the last entry holds the logits.
    pub pre: Vec<Matrix<T>>,
    /// `post[i] = relu(pre[i])` for hidden layers only.
    pub post: Vec<Matrix<T>>,
    /// `masks[i] = relu_mask(pre[i])` for hidden layers only.
    pub masks: Vec<Matrix<T>>,
    /// Softmax of the logits.
    pub probs: Matrix<T>,
    pub example_loss: Vec<T>,
    /// Mean of `example_loss`.
    pub loss: T,
    pub bias: bool,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    pub fn depth(&self) -> usize {
        self.pre.len()
    }

    /// Input to weight layer `i`: the batch for `i = 0`, else `post[i-1]`.
    pub fn layer_input(&self, i: usize) -> &Matrix<T> {
        if i == 0 {
            &self.input
        } else {
            &self.post[i - 1]
        }
    }

    pub fn logits(&self) -> &Matrix<T> {
        self.pre.last().expect("depth >= 2")
    }

    /// Per-example `softmax(s_k) - onehot(y)`, i.e. `∂L_b/∂s_k`.
    pub fn output_error(&self) -> Matrix<T> {
        let mut e = self.probs.clone();
        for (b, &y) in self.labels.iter().enumerate() {
            e[(b, y)] -= T::one();
        }
        e
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.batch_size()).map(|b| argmax(self.probs.row(b))).collect()
    }

    pub fn correct(&self) -> usize {
        self.predictions()
            .iter()
            .zip(&self.labels)
            .filter(|(p, y)| p == y)
            .count()
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn check_batch<T: Real>(params: &MlpParams<T>, batch: &Matrix<T>, labels: &[usize]) -> Result<()> {
    if batch.cols() != params.weights[0].cols() {
        return Err(Error::Shape {
            op: "forward input",
            lhs: batch.shape(),
            rhs: params.weights[0].shape(),
        });
    }
    if labels.len() != batch.rows() {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {}",
            labels.len(),
            batch.rows()
        )));
    }
    let classes = params.weights.last().expect("non-empty").rows();
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn add_bias<T: Real>(s: &mut Matrix<T>, b: &[T]) {
    for r in 0..s.rows() {
        for (x, &bj) in s.row_mut(r).iter_mut().zip(b) {
            *x += bj;
        }
    }
}

/// Row-wise softmax and cross-entropy. Returns `(probs, per-example loss)`.
fn softmax_ce<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> (Matrix<T>, Vec<T>) {
    let mut probs = logits.clone();
    let mut losses = Vec::with_capacity(labels.len());
    for (b, &y) in labels.iter().enumerate() {
        let row = probs.row_mut(b);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut z = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
        losses.push(z.ln() + max - logits[(b, y)]);
    }
    (probs, losses)
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::lit(xs.len() as f64)
}

pub fn forward<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
) -> Result<ForwardTrace<T>> {
    check_batch(params, batch, labels)?;
    let k = params.depth();
    let mut pre = Vec::with_capacity(k);
    let mut post = Vec::with_capacity(k - 1);
    let mut masks = Vec::with_capacity(k - 1);
    for i in 0..k {
        let x = if i == 0 { batch } else { &post[i - 1] };
        let mut s = matmul_bt(x, &params.weights[i])?;
        if let Some(bs) = &params.biases {
            add_bias(&mut s, &bs[i]);
        }
        if !s.is_finite() {
            return Err(Error::NonFinite {
                stage: "forward",
                layer: i,
            });
        }
        if i + 1 < k {
            post.push(s.relu());
            masks.push(s.relu_mask());
        }
        pre.push(s);
    }
    let (probs, example_loss) = softmax_ce(&pre[k - 1], labels);
    let loss = mean(&example_loss);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            stage: "loss",
            layer: k - 1,
        });
    }
    Ok(ForwardTrace {
        input: batch.clone(),
        labels: labels.to_vec(),
        pre,
        post,
        masks,
        probs,
        example_loss,
        loss,
        bias: params.has_bias(),
    })
}

/// Per-example losses with `offsets[i]` added to the pre-activations `s_i`.
/// The finite-difference reference for pre-activation JVPs.
pub fn example_losses_with_offsets<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    offsets: &[Matrix<T>],
) -> Result<Vector<T>> {
    check_batch(params, batch, labels)?;
    let k = params.depth();
    if offsets.len() != k {
        return Err(Error::invalid(format!("expected {k} offset matrices, got {}", offsets.len())));
    }
    let mut x = batch.clone();
    for i in 0..k {
        let mut s = matmul_bt(&x, &params.weights[i])?;
        if let Some(bs) = &params.biases {
            add_bias(&mut s, &bs[i]);
        }
        s.axpy(T::one(), &offsets[i])?;
        if i + 1 < k {
            x = s.relu();
        } else {
            x = s;
        }
    }
    Ok(Vector(softmax_ce(&x, labels).1))
}

/// Mean batch loss without keeping a trace.
pub fn loss<T: Real>(params: &MlpParams<T>, batch: &Matrix<T>, labels: &[usize]) -> Result<T> {
    check_batch(params, batch, labels)?;
    let k = params.depth();
    let mut x = batch.clone();
    for i in 0..k {
        let mut s = matmul_bt(&x, &params.weights[i])?;
        if let Some(bs) = &params.biases {
            add_bias(&mut s, &bs[i]);
        }
        if !s.is_finite() {
            return Err(Error::NonFinite {
                stage: "forward",
                layer: i,
            });
        }
        x = if i + 1 < k { s.relu() } else { s };
    }
    let (_, losses) = softmax_ce(&x, labels);
    Ok(mean(&losses))
}

/// Exact gradients from reverse-mode differentiation.
#[derive(Debug, Clone)]
pub struct Gradients<T: Real = f32> {
    /// `∂L/∂W_i` (and `∂L/∂b_i`) of the mean batch loss.
    pub weights: WeightSpace<T>,
    /// `preact[i]` row `b` is `∂L_b/∂s_i` for that example's own loss
    /// (not divided by the batch size).
    pub preact: Vec<Matrix<T>>,
}

impl<T: Real> Gradients<T> {
    /// Per-example `∂L_b/∂x_{i+1}` for hidden layer `i`, before the ReLU mask.
    pub fn post_activation(&self, params: &MlpParams<T>, i: usize) -> Result<Matrix<T>> {
        matmul(&self.preact[i + 1], &params.weights[i + 1])
    }
}

/// Backprop oracle. Used for measurement and for the oracle-driven baselines.
pub fn backprop<T: Real>(params: &MlpParams<T>, trace: &ForwardTrace<T>) -> Result<Gradients<T>> {
    let k = params.depth();
    let mut delta = trace.output_error();
    let mut preact = vec![Matrix::zeros(0, 0); k];
    let mut weights = WeightSpace::zeros_like(params);
    for i in (0..k).rev() {
        let (dw, db) = trace.layer_update(i, &delta)?;
        weights.weights[i] = dw;
        if let (Some(bs), Some(db)) = (weights.biases.as_mut(), db) {
            bs[i] = db;
        }
        if i > 0 {
            let mut next = matmul(&delta, &params.weights[i])?;
            let mask = &trace.masks[i - 1];
            for (d, &m) in next.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *d *= m;
            }
            preact[i] = std::mem::replace(&mut delta, next);
        } else {
            preact[0] = delta.clone();
        }
    }
    Ok(Gradients { weights, preact })
}

impl<T: Real> ForwardTrace<T> {
    /// `(1/B) Σ_b g[b] ⊗ x_i[b]` and the matching bias term for one layer.
    fn layer_update(&self, i: usize, g: &Matrix<T>) -> Result<(Matrix<T>, Option<Vector<T>>)> {
        let x = self.layer_input(i);
        if g.rows() != x.rows() {
            return Err(Error::Shape {
                op: "assemble",
                lhs: g.shape(),
                rhs: x.shape(),
            });
        }
        let inv_b = T::one() / T::lit(x.rows() as f64);
        let mut dw = matmul_at(g, x)?;
        dw.scale_in_place(inv_b);
        let db = self.bias.then(|| {
            let mut v = Vector::zeros(g.cols());
            for r in 0..g.rows() {
                crate::tensor::axpy(inv_b, g.row(r), &mut v);
            }
            v
        });
        Ok((dw, db))
    }
}

/// Converts per-example pre-activation vectors into a weight-space update:
/// `ΔW_i = (1/B) Σ_b scaled_i[b] x_i[b]ᵀ`.
pub fn assemble_weight_update<T: Real>(
    trace: &ForwardTrace<T>,
    scaled: &[Matrix<T>],
) -> Result<GradEstimate<T>> {
    let k = trace.depth();
    if scaled.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} layers of pre-activation vectors, got {}",
            scaled.len()
        )));
    }
    let mut weights = Vec::with_capacity(k);
    let mut biases = trace.bias.then(Vec::new);
    for (i, g) in scaled.iter().enumerate() {
        if g.shape() != trace.pre[i].shape() {
            return Err(Error::Shape {
                op: "assemble",
                lhs: g.shape(),
                rhs: trace.pre[i].shape(),
            });
        }
        let (dw, db) = trace.layer_update(i, g)?;
        weights.push(dw);
        if let (Some(bs), Some(db)) = (biases.as_mut(), db) {
            bs.push(db);
        }
    }
    Ok(WeightSpace { weights, biases })
}

/// Directional derivative of the mean batch loss along a weight-space
/// tangent, by propagating primal and tangent together layer by layer.
pub fn jvp_weight<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    direction: &WeightSpace<T>,
) -> Result<T> {
    check_batch(params, batch, labels)?;
    params.same_shape(direction)?;
    let k = params.depth();
    let mut x = batch.clone();
    let mut dx: Option<Matrix<T>> = None;
    for i in 0..k {
        let w = &params.weights[i];
        let mut s = matmul_bt(&x, w)?;
        let mut ds = matmul_bt(&x, &direction.weights[i])?;
        if let Some(dx) = &dx {
            ds.axpy(T::one(), &matmul_bt(dx, w)?)?;
        }
        if let (Some(bs), Some(dbs)) = (&params.biases, &direction.biases) {
            add_bias(&mut s, &bs[i]);
            add_bias(&mut ds, &dbs[i]);
        }
        if !s.is_finite() || !ds.is_finite() {
            return Err(Error::NonFinite {
                stage: "jvp",
                layer: i,
            });
        }
        if i + 1 < k {
            let mask = s.relu_mask();
            dx = Some(ds.hadamard(&mask)?);
            x = s.relu();
        } else {
            let (probs, _) = softmax_ce(&s, labels);
            let mut total = T::zero();
            for (b, &y) in labels.iter().enumerate() {
                total += dot(probs.row(b), ds.row(b)) - ds[(b, y)];
            }
            return Ok(total / T::lit(labels.len() as f64));
        }
    }
    unreachable!("depth >= 2")
}

fn check_preact_tangents<T: Real>(trace: &ForwardTrace<T>, tangents: &[Matrix<T>]) -> Result<()> {
    if tangents.len() != trace.depth() {
        return Err(Error::invalid(format!(
            "expected {} layers of tangents, got {}",
            trace.depth(),
            tangents.len()
        )));
    }
    for (t, s) in tangents.iter().zip(&trace.pre) {
        if t.shape() != s.shape() {
            return Err(Error::Shape {
                op: "jvp_preact",
                lhs: t.shape(),
                rhs: s.shape(),
            });
        }
    }
    Ok(())
}

/// Per-example directional derivatives `Σ_i ⟨tangent_i[b], ∂L_b/∂s_i⟩`,
/// reusing the primal values of an existing trace.
pub fn jvp_preact_traced<T: Real>(
    params: &MlpParams<T>,
    trace: &ForwardTrace<T>,
    tangents: &[Matrix<T>],
) -> Result<Vector<T>> {
    check_preact_tangents(trace, tangents)?;
    let k = trace.depth();
    let mut ds = tangents[0].clone();
    for i in 1..k {
        let dx = ds.hadamard(&trace.masks[i - 1])?;
        ds = matmul_bt(&dx, &params.weights[i])?;
        ds.axpy(T::one(), &tangents[i])?;
    }
    let err = trace.output_error();
    Ok(Vector(
        (0..trace.batch_size())
            .map(|b| dot(err.row(b), ds.row(b)))
            .collect(),
    ))
}

/// [`jvp_preact_traced`] with its own forward pass.
pub fn jvp_preact<T: Real>(
    params: &MlpParams<T>,
    batch: &Matrix<T>,
    labels: &[usize],
    tangents: &[Matrix<T>],
) -> Result<Vector<T>> {
    let trace = forward(params, batch, labels)?;
    jvp_preact_traced(params, &trace, tangents)
}

/// Mean loss and accuracy over a dataset, evaluated in chunks.
pub fn evaluate<T: Real>(
    params: &MlpParams<T>,
    features: &Matrix<T>,
    labels: &[usize],
    chunk: usize,
) -> Result<(f64, f64)> {
    let n = features.rows();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let x = features.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let t = forward(params, &x, &y)?;
        total_loss += t.example_loss.iter().map(|l| l.as_f64()).sum::<f64>();
        correct += t.correct();
    }
    Ok((total_loss / n as f64, correct as f64 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (MlpParams<f64>, Matrix<f64>, Vec<usize>) {
        let cfg = MlpConfig::new(4, 8, 3, 3);
        let mut rng = RngStream::new(42, 0);
        let p = init_params::<f64>(&cfg, &mut rng).unwrap();
        let x = Matrix::from_vec(5, 4, rng.randn::<f64>(20).0).unwrap();
        (p, x, vec![0, 1, 2, 1, 0])
    }

    #[test]
    fn config_counts() {
        let c = MlpConfig::new(3072, 1024, 6, 10);
        assert_eq!(c.param_count(), 3072 * 1024 + 4 * 1024 * 1024 + 1024 * 10);
        assert_eq!(c.with_bias(true).param_count(), c.param_count() + 5 * 1024 + 10);
        assert_eq!(c.preact_dim(), 5 * 1024 + 10);
        assert!(MlpConfig::new(3, 4, 1, 2).validate().is_err());
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let c = MlpConfig::new(1024, 1024, 2, 10);
        let a = init_params::<f32>(&c, &mut RngStream::new(1, 0)).unwrap();
        let b = init_params::<f32>(&c, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(a, b);
        let w = a.weights[0].as_slice();
        let var = w.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((1.8 / 1024.0..=2.2 / 1024.0).contains(&var), "{var}");
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let c = MlpConfig::new(5, 6, 3, 7);
        let p = WeightSpace::<f64>::zeros(&c);
        let x = Matrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let t = forward(&p, &x, &[0, 3, 6]).unwrap();
        assert!((t.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_layer_net() {
        // x=[1,2]; W1=[[1,-1],[0.5,0.5]] -> s1=[-1,1.5] -> x2=[0,1.5]
        // W2=[[1,0],[0,2]] -> logits [0,3]; label 1
        let p = WeightSpace {
            weights: vec![
                Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.5]]).unwrap(),
                Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap(),
            ],
            biases: None,
        };
        let x = Matrix::from_rows(&[vec![1.0f64, 2.0]]).unwrap();
        let t = forward(&p, &x, &[1]).unwrap();
        assert_eq!(t.pre[0].as_slice(), &[-1.0, 1.5]);
        assert_eq!(t.post[0].as_slice(), &[0.0, 1.5]);
        assert_eq!(t.masks[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(t.logits().as_slice(), &[0.0, 3.0]);
        let want = (1.0f64 + 3f64.exp()).ln() - 3.0;
        assert!((t.loss - want).abs() < 1e-12);
    }

    #[test]
    fn duplicated_examples_have_identical_rows() {
        let (p, x, _) = tiny();
        let xb = x.select_rows(&[2, 2, 2]);
        let t = forward(&p, &xb, &[1, 1, 1]).unwrap();
        let g = backprop(&p, &t).unwrap();
        for i in 0..p.depth() {
            assert_eq!(t.pre[i].row(0), t.pre[i].row(2));
            assert_eq!(g.preact[i].row(0), g.preact[i].row(1));
        }
    }

    #[test]
    fn output_error_is_softmax_minus_onehot() {
        let (p, x, y) = tiny();
        let t = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &t).unwrap();
        let e = &g.preact[p.depth() - 1];
        for b in 0..x.rows() {
            for c in 0..3 {
                let want = t.probs[(b, c)] - if y[b] == c { 1.0 } else { 0.0 };
                assert!((e[(b, c)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jvp_along_gradient_is_squared_norm() {
        let (p, x, y) = tiny();
        let t = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &t).unwrap();
        let j = jvp_weight(&p, &x, &y, &g.weights).unwrap();
        let n2 = g.weights.dot(&g.weights).unwrap();
        assert!((j - n2).abs() < 1e-10 * n2);

        let d: Vec<Matrix<f64>> = g.preact.clone();
        let per = jvp_preact_traced(&p, &t, &d).unwrap();
        for b in 0..x.rows() {
            let want: f64 = g.preact.iter().map(|m| dot(m.row(b), m.row(b))).sum();
            assert!((per[b] - want).abs() < 1e-10 * want.max(1e-12));
        }
    }

    #[test]
    fn jvp_orthogonal_direction_vanishes() {
        let (p, x, y) = tiny();
        let t = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &t).unwrap().weights;
        let mut rng = RngStream::new(3, 3);
        let r = WeightSpace::from_flat(&g, &rng.randn::<f64>(g.param_count())).unwrap();
        let mut d = r.clone();
        d.axpy(-r.dot(&g).unwrap() / g.dot(&g).unwrap(), &g).unwrap();
        let j = jvp_weight(&p, &x, &y, &d).unwrap();
        assert!(j.abs() <= 1e-5 * g.norm() * d.norm());
    }

    #[test]
    fn last_layer_onehot_tangent() {
        let (p, x, y) = tiny();
        let t = forward(&p, &x, &y).unwrap();
        let mut tang: Vec<Matrix<f64>> = t.pre.iter().map(|s| Matrix::zeros(s.rows(), s.cols())).collect();
        for b in 0..x.rows() {
            tang[2][(b, 1)] = 1.0;
        }
        let j = jvp_preact_traced(&p, &t, &tang).unwrap();
        let e = t.output_error();
        for b in 0..x.rows() {
            assert!((j[b] - e[(b, 1)]).abs() < 1e-15);
        }
    }

    #[test]
    fn assemble_matches_backprop_and_single_outer() {
        let (p, x, y) = tiny();
        let t = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &t).unwrap();
        let a = assemble_weight_update(&t, &g.preact).unwrap();
        let mut d = a.clone();
        d.axpy(-1.0, &g.weights).unwrap();
        assert!(d.norm() <= 1e-12 * g.weights.norm());

        let zero: Vec<Matrix<f64>> = t.pre.iter().map(|s| Matrix::zeros(s.rows(), s.cols())).collect();
        assert_eq!(assemble_weight_update(&t, &zero).unwrap().norm(), 0.0);

        let t1 = forward(&p, &x.select_rows(&[0]), &[0]).unwrap();
        let v = Matrix::from_vec(1, 8, (0..8).map(|i| i as f64).collect()).unwrap();
        let mut s: Vec<Matrix<f64>> = t1.pre.iter().map(|s| Matrix::zeros(1, s.cols())).collect();
        s[1] = v.clone();
        let u = assemble_weight_update(&t1, &s).unwrap();
        assert_eq!(u.weights[1], crate::tensor::outer(v.row(0), t1.post[0].row(0)));
    }

    #[test]
    fn bias_gradient_matches_finite_difference() {
        let cfg = MlpConfig::new(3, 5, 3, 4).with_bias(true);
        let mut rng = RngStream::new(9, 0);
        let mut p = init_params::<f64>(&cfg, &mut rng).unwrap();
        for b in p.biases.as_mut().unwrap() {
            b.0 = rng.randn::<f64>(b.len()).0.iter().map(|x| 0.1 * x).collect();
        }
        let x = Matrix::from_vec(4, 3, rng.randn::<f64>(12).0).unwrap();
        let y = vec![0, 1, 2, 3];
        let g = backprop(&p, &forward(&p, &x, &y).unwrap()).unwrap();
        let h = 1e-5;
        for layer in 0..3 {
            for j in 0..p.biases.as_ref().unwrap()[layer].len() {
                let mut pp = p.clone();
                pp.biases.as_mut().unwrap()[layer][j] += h;
                let mut pm = p.clone();
                pm.biases.as_mut().unwrap()[layer][j] -= h;
                let fd = (loss(&pp, &x, &y).unwrap() - loss(&pm, &x, &y).unwrap()) / (2.0 * h);
                let an = g.weights.biases.as_ref().unwrap()[layer][j];
                assert!((fd - an).abs() < 1e-7, "layer {layer} unit {j}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn nan_input_names_layer() {
        let (p, mut x, y) = tiny();
        x[(0, 0)] = f64::NAN;
        match forward(&p, &x, &y) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }
}
