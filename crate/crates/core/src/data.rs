//! In-memory datasets, standardization, batching, augmentation and
//! synthetic generators.

use log::warn;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Matrix;

/// Planar image layout: all of channel 0 row-major, then channel 1, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageGeometry {
    pub const CIFAR: ImageGeometry = ImageGeometry {
        height: 32,
        width: 32,
        channels: 3,
    };

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

/// Per-feature affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const MIN_STD: f64 = 1e-6;

impl Standardization {
    /// Statistics of each column.
    pub fn per_feature(x: &Matrix<f32>) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for r in 0..n {
            for (j, &v) in x.row(r).iter().enumerate() {
                mean[j] += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        for r in 0..n {
            for (j, &v) in x.row(r).iter().enumerate() {
                sq[j] += (v as f64 - mean[j]).powi(2);
            }
        }
        let std = sq.iter().map(|s| (s / n.max(1) as f64).sqrt().max(MIN_STD)).collect();
        Standardization { mean, std }
    }

    /// One mean and std per channel, expanded to every feature of that channel.
    pub fn per_channel(x: &Matrix<f32>, geom: ImageGeometry) -> Result<Self> {
        if x.cols() != geom.len() {
            return Err(Error::invalid(format!(
                "features have {} columns but geometry {geom:?} needs {}",
                x.cols(),
                geom.len()
            )));
        }
        let plane = geom.height * geom.width;
        let mut mean = Vec::with_capacity(geom.len());
        let mut std = Vec::with_capacity(geom.len());
        for c in 0..geom.channels {
            let range = c * plane..(c + 1) * plane;
            let count = (x.rows() * plane).max(1) as f64;
            let m: f64 = (0..x.rows())
                .map(|r| x.row(r)[range.clone()].iter().map(|&v| v as f64).sum::<f64>())
                .sum::<f64>()
                / count;
            let v: f64 = (0..x.rows())
                .map(|r| {
                    x.row(r)[range.clone()]
                        .iter()
                        .map(|&p| (p as f64 - m).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / count;
            mean.extend(std::iter::repeat_n(m, plane));
            std.extend(std::iter::repeat_n(v.sqrt().max(MIN_STD), plane));
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, x: &mut Matrix<f32>) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::invalid(format!(
                "standardization has {} features, data has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        for r in 0..x.rows() {
            for ((v, m), s) in x.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// examples × input_dim
    pub features: Matrix<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Set once [`standardize`](Dataset::standardize) has run.
    pub stats: Option<Standardization>,
    pub geometry: Option<ImageGeometry>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Matrix<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {class_count})")));
        }
        if !features.is_finite() {
            return Err(Error::invalid("non-finite feature value"));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            class_count,
            stats: None,
            geometry: None,
        })
    }

    pub fn with_geometry(mut self, geom: ImageGeometry) -> Result<Self> {
        if geom.len() != self.input_dim() {
            return Err(Error::invalid(format!("geometry {geom:?} does not match input dim {}", self.input_dim())));
        }
        self.geometry = Some(geom);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            stats: self.stats.clone(),
            geometry: self.geometry,
        }
    }

    /// First `n` examples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Deterministic shuffled split into `(first, rest)` with `n` in the first part.
    pub fn split(&self, n: usize, rng: &mut RngStream) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::invalid(format!("cannot take {n} of {} examples", self.len())));
        }
        let perm = rng.permutation(self.len());
        Ok((self.subset(&perm[..n]), self.subset(&perm[n..])))
    }

    /// Appropriate statistics for this dataset: per channel for images,
    /// per feature otherwise.
    pub fn fit_standardization(&self) -> Result<Standardization> {
        match self.geometry {
            Some(g) if g.channels > 1 => Standardization::per_channel(&self.features, g),
            _ => Ok(Standardization::per_feature(&self.features)),
        }
    }

    pub fn standardize(&mut self, stats: &Standardization) -> Result<()> {
        if self.stats.is_some() {
            warn!("dataset {} standardized twice", self.name);
        }
        stats.apply(&mut self.features)?;
        self.stats = Some(stats.clone());
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_count];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Fits statistics on `train` and applies them unchanged to both splits.
pub fn standardize_splits(train: &mut Dataset, test: &mut Dataset) -> Result<Standardization> {
    let stats = train.fit_standardization()?;
    train.standardize(&stats)?;
    test.standardize(&stats)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            batch_size,
            seed,
            drop_last: false,
        }
    }

    /// Index lists for one epoch; the shuffle depends only on `(seed, epoch)`.
    pub fn batches(&self, n: usize, epoch: u64) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        let perm = RngStream::derive(self.seed, &[0xBA7C, epoch]).permutation(n);
        Ok(perm
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(|c| c.to_vec())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentFlags {
    pub hflip: bool,
    /// Zero padding for random crops; 0 disables cropping.
    pub crop_pad: usize,
}

/// Mirrors one planar image left to right in place.
pub fn hflip_image(img: &mut [f32], geom: ImageGeometry) {
    for c in 0..geom.channels {
        for y in 0..geom.height {
            let start = geom.at(c, y, 0);
            img[start..start + geom.width].reverse();
        }
    }
}

/// Window of the zero-padded image with top-left corner `(dy, dx)` in padded
/// coordinates; `dy = dx = pad` is the identity.
pub fn crop_image(img: &[f32], geom: ImageGeometry, pad: usize, dy: usize, dx: usize) -> Vec<f32> {
    let mut out = vec![0.0; geom.len()];
    for c in 0..geom.channels {
        for y in 0..geom.height {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= geom.height as isize {
                continue;
            }
            for x in 0..geom.width {
                let sx = (x + dx) as isize - pad as isize;
                if sx >= 0 && sx < geom.width as isize {
                    out[geom.at(c, y, x)] = img[geom.at(c, sy as usize, sx as usize)];
                }
            }
        }
    }
    out
}

/// Independent random flip (p = 0.5) and pad-and-crop per example.
pub fn augment(batch: &Matrix<f32>, geom: ImageGeometry, rng: &mut RngStream, flags: AugmentFlags) -> Result<Matrix<f32>> {
    if batch.cols() != geom.len() {
        return Err(Error::invalid(format!(
            "batch has {} features but geometry {geom:?} needs {}",
            batch.cols(),
            geom.len()
        )));
    }
    let mut out = batch.clone();
    for r in 0..out.rows() {
        if flags.hflip && rng.bernoulli(0.5) {
            hflip_image(out.row_mut(r), geom);
        }
        if flags.crop_pad > 0 {
            let span = 2 * flags.crop_pad + 1;
            let (dy, dx) = (rng.below(span), rng.below(span));
            let cropped = crop_image(out.row(r), geom, flags.crop_pad, dy, dx);
            out.row_mut(r).copy_from_slice(&cropped);
        }
    }
    Ok(out)
}

/// Gaussian blobs around random directions scaled by `separation`, with unit
/// noise. Examples are ordered class by class.
pub fn synth_clusters(classes: usize, dim: usize, per_class: usize, separation: f64, rng: &mut RngStream) -> Result<Dataset> {
    if !(separation >= 0.0) || classes == 0 || dim == 0 {
        return Err(Error::invalid("synth_clusters needs classes, dim > 0 and separation >= 0"));
    }
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v = rng.randn::<f64>(dim);
            let n = v.norm();
            v.iter().map(|x| x / n * separation).collect()
        })
        .collect();
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|&m| (m + rng.normal::<f64>()) as f32));
            labels.push(c);
        }
    }
    Dataset::new(
        format!("synth-clusters(c={classes},d={dim},sep={separation})"),
        Matrix::from_vec(n, dim, data)?,
        labels,
        classes,
    )
}

/// Raw CIFAR-style images. Each class owns a few smooth color templates;
/// each example takes one of them at random strength, adds a random
/// combination of shared smooth fields, pixel noise, a random horizontal shift
/// and a random mirror. Returns `(labels, pixels)` in CIFAR byte layout.
pub fn synth_cifar_like(n: usize, classes: usize, rng: &mut RngStream) -> (Vec<u8>, Vec<Vec<u8>>) {
    let g = ImageGeometry::CIFAR;
    const FIELDS: usize = 32;
    const MODES: usize = 3;
    let field = |rng: &mut RngStream| -> Vec<f64> {
        // Sum of three low-frequency plane waves with a random color mix.
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.normal::<f64>() * 0.3,
                    rng.normal::<f64>() * 0.3,
                    rng.uniform01() * std::f64::consts::TAU,
                )
            })
            .collect();
        let color: Vec<f64> = (0..g.channels).map(|_| rng.normal::<f64>()).collect();
        let mut out = vec![0.0; g.len()];
        for c in 0..g.channels {
            for y in 0..g.height {
                for x in 0..g.width {
                    let v: f64 = waves
                        .iter()
                        .map(|&(fy, fx, ph)| (fy * y as f64 + fx * x as f64 + ph).cos())
                        .sum();
                    out[g.at(c, y, x)] = color[c] * v / 3f64.sqrt();
                }
            }
        }
        out
    };
    let templates: Vec<Vec<f64>> = (0..classes * MODES).map(|_| field(rng)).collect();
    let shared: Vec<Vec<f64>> = (0..FIELDS).map(|_| field(rng)).collect();
    let mut labels = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.below(classes);
        let template = &templates[label * MODES + rng.below(MODES)];
        let strength = 0.3 + 0.3 * rng.uniform01();
        let coef: Vec<f64> = (0..FIELDS).map(|_| rng.normal::<f64>() * 0.35).collect();
        let shift = rng.below(7) as isize - 3;
        let mirror = rng.uniform01() < 0.5;
        let mut img = vec![0u8; g.len()];
        for c in 0..g.channels {
            for y in 0..g.height {
                for x in 0..g.width {
                    let mut sx = (x as isize + shift).clamp(0, g.width as isize - 1) as usize;
                    if mirror {
                        sx = g.width - 1 - sx;
                    }
                    let k = g.at(c, y, sx);
                    let mut v = strength * template[k];
                    for (f, a) in shared.iter().zip(&coef) {
                        v += a * f[k];
                    }
                    v = 128.0 + 40.0 * v + 24.0 * rng.normal::<f64>();
                    img[g.at(c, y, x)] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        labels.push(label as u8);
        images.push(img);
    }
    (labels, images)
}
