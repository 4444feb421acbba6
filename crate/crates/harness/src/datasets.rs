//! Builds standardized train/test splits from a `[data]` section.

use std::path::{Path, PathBuf};

use gradguess::data::{standardize_splits, synth_cifar_like, synth_clusters, AugmentFlags};
use gradguess::io::{load_cifar_binary, load_idx, write_cifar_binary};
use gradguess::{Dataset, RngStream};
use log::{info, warn};

use crate::config::DataSection;
use crate::error::{config_err, Result};

pub const MNIST_ENV: &str = "GG_MNIST_DIR";
pub const CIFAR_ENV: &str = "GG_CIFAR_DIR";

/// Stream tag for dataset construction.
const DATA_STREAM: u64 = 0xDA7A;

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    /// Where the data actually came from (after any fallback).
    pub source: String,
}

impl Splits {
    pub fn augment_flags(&self, data: &DataSection) -> Option<AugmentFlags> {
        let flags = AugmentFlags {
            hflip: data.hflip,
            crop_pad: data.crop_pad,
        };
        (flags != AugmentFlags::default() && self.train.geometry.is_some()).then_some(flags)
    }
}

/// The bundled handwritten-digit IDX files.
pub fn digits_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/digits")
}

fn dir_from(path: &str, env: &str) -> Option<PathBuf> {
    if !path.is_empty() {
        return Some(PathBuf::from(path));
    }
    std::env::var_os(env).map(PathBuf::from).filter(|p| p.is_dir())
}

fn load_idx_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

fn load_cifar_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let present: Vec<&PathBuf> = train.iter().filter(|p| p.exists()).collect();
    if present.is_empty() {
        return Err(config_err(format!("no data_batch_*.bin files in {}", dir.display())));
    }
    Ok((load_cifar_binary(&present)?, load_cifar_binary(&[dir.join("test_batch.bin")])?))
}

/// Synthetic CIFAR-format images, written to a temporary batch file and read
/// back through the binary loader.
fn synth_cifar(n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = RngStream::derive(seed, &[DATA_STREAM, 1]);
    let (labels, images) = synth_cifar_like(n_train + n_test, 10, &mut rng);
    let dir = tempfile::tempdir().map_err(|e| crate::error::HarnessError::io(std::env::temp_dir(), e))?;
    let (a, b) = (dir.path().join("train.bin"), dir.path().join("test.bin"));
    write_cifar_binary(&a, &labels[..n_train], &images[..n_train])?;
    write_cifar_binary(&b, &labels[n_train..], &images[n_train..])?;
    let mut train = load_cifar_binary(&[a])?;
    let mut test = load_cifar_binary(&[b])?;
    train.name = "synth-cifar".into();
    test.name = "synth-cifar".into();
    Ok((train, test))
}

fn held_out(all: Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(config_err("data.test_fraction must lie in [0, 1)"));
    }
    let n_test = (all.len() as f64 * fraction).round() as usize;
    let (test, train) = all.split(n_test, &mut RngStream::derive(seed, &[DATA_STREAM, 2]))?;
    Ok((train, test))
}

fn or_all(n: usize) -> usize {
    if n == 0 {
        usize::MAX
    } else {
        n
    }
}

pub fn load_splits(cfg: &DataSection, seed: u64) -> Result<Splits> {
    let (train, test, source) = match cfg.source.as_str() {
        "synth-clusters" => {
            let mut rng = RngStream::derive(seed, &[DATA_STREAM, 0]);
            let all = synth_clusters(cfg.classes, cfg.dim, cfg.per_class, cfg.separation, &mut rng)?;
            let (a, b) = held_out(all, cfg.test_fraction, seed)?;
            (a, b, "synth-clusters".to_string())
        }
        "digits" => {
            let dir = if cfg.path.is_empty() {
                digits_dir()
            } else {
                PathBuf::from(&cfg.path)
            };
            let (a, b) = load_idx_dir(&dir)?;
            (a, b, "digits".to_string())
        }
        "mnist" => match dir_from(&cfg.path, MNIST_ENV) {
            Some(dir) => {
                let (a, b) = load_idx_dir(&dir)?;
                (a, b, "mnist".to_string())
            }
            None => {
                warn!("no MNIST directory ({MNIST_ENV} unset); using the bundled digits stand-in");
                let (a, b) = load_idx_dir(&digits_dir())?;
                (a, b, "digits".to_string())
            }
        },
        "cifar" | "synth-cifar" => match dir_from(&cfg.path, CIFAR_ENV).filter(|_| cfg.source == "cifar") {
            Some(dir) => {
                let (a, b) = load_cifar_dir(&dir)?;
                (a, b, "cifar".to_string())
            }
            None => {
                if cfg.source == "cifar" {
                    warn!("no CIFAR-10 directory ({CIFAR_ENV} unset); using synthetic CIFAR-format images");
                }
                let n_train = if cfg.train_size == 0 { 5000 } else { cfg.train_size };
                let n_test = if cfg.test_size == 0 { 1000 } else { cfg.test_size };
                let (a, b) = synth_cifar(n_train, n_test, seed)?;
                (a, b, "synth-cifar".to_string())
            }
        },
        other => return Err(config_err(format!("unknown data.source {other:?}"))),
    };
    let mut train = train.take(or_all(cfg.train_size));
    let mut test = test.take(or_all(cfg.test_size));
    if train.is_empty() {
        return Err(config_err("training split is empty"));
    }
    standardize_splits(&mut train, &mut test)?;
    info!(
        "data {source}: {} train / {} test, {} features, {} classes",
        train.len(),
        test.len(),
        train.input_dim(),
        train.class_count
    );
    Ok(Splits { train, test, source })
}
