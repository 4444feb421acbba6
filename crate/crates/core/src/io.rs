//! File formats: IDX and CIFAR-10 binary datasets, metric CSVs, checkpoints.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{Dataset, ImageGeometry};
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::network::{MlpParams, WeightSpace};
use crate::tensor::{Matrix, Real, Vector};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn format_err(format: &'static str, path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn be_u32(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err("idx", path, offset, "truncated header"))
}

/// Parses an IDX file of unsigned bytes, returning `(dims, payload)`.
fn parse_idx(path: &Path, expected_magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let buf = read_all(path)?;
    let magic = be_u32(&buf, 0, path)?;
    if magic != expected_magic {
        return Err(format_err(
            "idx",
            path,
            0,
            format!("magic {magic:#010x}, expected {expected_magic:#010x}"),
        ));
    }
    let ndim = (magic & 0xFF) as usize;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| be_u32(&buf, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let start = 4 + 4 * ndim;
    let want: usize = dims.iter().product();
    let have = buf.len() - start;
    if have < want {
        return Err(format_err(
            "idx",
            path,
            buf.len(),
            format!("truncated payload: {have} of {want} bytes"),
        ));
    }
    if have > want {
        return Err(format_err("idx", path, start + want, format!("{} trailing bytes", have - want)));
    }
    Ok((dims, buf[start..].to_vec()))
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]`; no
/// standardization is applied here (statistics belong to the train split).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (idims, pixels) = parse_idx(ip, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(lp, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(format_err(
            "idx",
            lp,
            4,
            format!("{} labels for {} images", ldims[0], idims[0]),
        ));
    }
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let features = Matrix::from_vec(n, h * w, pixels.iter().map(|&p| p as f32 / 255.0).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let name = ip
        .file_name()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, labels, classes)?.with_geometry(ImageGeometry {
        height: h,
        width: w,
        channels: 1,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Writes `n × h × w` unsigned-byte images in IDX format.
pub fn write_idx_images(path: impl AsRef<Path>, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    if h * w == 0 || pixels.len() % (h * w) != 0 {
        return Err(Error::invalid("pixel count is not a multiple of the image size"));
    }
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [pixels.len() / (h * w), h, w] {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_file(path.as_ref(), &out)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_file(path.as_ref(), &out)
}

/// Reads and concatenates CIFAR-10 binary batch files. Pixels are scaled to
/// `[0, 1]` and kept in planar R, G, B order.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR files given"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let buf = read_all(p)?;
        if buf.len() % CIFAR_RECORD != 0 {
            return Err(format_err(
                "cifar",
                p,
                buf.len() - buf.len() % CIFAR_RECORD,
                format!("length {} is not a multiple of {CIFAR_RECORD}", buf.len()),
            ));
        }
        for (i, rec) in buf.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(format_err("cifar", p, i * CIFAR_RECORD, format!("label {} > 9", rec[0])));
            }
            labels.push(rec[0] as usize);
            features.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
        }
    }
    let n = labels.len();
    Dataset::new("cifar10", Matrix::from_vec(n, 3072, features)?, labels, 10)?.with_geometry(ImageGeometry::CIFAR)
}

pub fn write_cifar_binary(path: impl AsRef<Path>, labels: &[u8], images: &[Vec<u8>]) -> Result<()> {
    if labels.len() != images.len() || images.iter().any(|i| i.len() != CIFAR_RECORD - 1) {
        return Err(Error::invalid("CIFAR records need one label and 3072 pixels each"));
    }
    let mut out = Vec::with_capacity(labels.len() * CIFAR_RECORD);
    for (l, img) in labels.iter().zip(images) {
        out.push(*l);
        out.extend_from_slice(img);
    }
    write_file(path.as_ref(), &out)
}

pub const METRICS_HEADER: [&str; 8] = ["run_id", "seed", "epoch", "step", "method", "metric", "layer", "value"];

/// Streaming metric CSV writer.
pub struct MetricsWriter {
    path: PathBuf,
    run_id: String,
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>, run_id: impl Into<String>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(METRICS_HEADER).map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?;
        Ok(MetricsWriter {
            path,
            run_id: run_id.into(),
            inner,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, r: &MetricRecord) -> Result<()> {
        if !r.value.is_finite() {
            log::warn!("writing non-finite {} for {}", r.metric, r.method);
        }
        let layer = r.layer.map(|l| l.to_string()).unwrap_or_default();
        self.inner
            .write_record([
                self.run_id.as_str(),
                &r.seed.to_string(),
                &r.epoch.to_string(),
                &r.step.to_string(),
                &r.method,
                &r.metric,
                &layer,
                &r.value.to_string(),
            ])
            .map_err(|e| Error::Csv {
                path: self.path.clone(),
                source: e,
            })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.inner.flush();
    }
}

pub fn write_metrics(path: impl AsRef<Path>, run_id: &str, records: &[MetricRecord]) -> Result<()> {
    let mut w = MetricsWriter::create(path, run_id)?;
    for r in records {
        w.write(r)?;
    }
    w.flush()
}

/// Parses a metrics CSV back into `(run_id, record)` pairs.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<(String, MetricRecord)>> {
    let path = path.as_ref();
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(format_err("csv", path, 0, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| format_err("csv", path, i + 1, format!("bad {what}"));
        let num = |j: usize, what: &str| rec[j].parse::<u64>().map_err(|_| bad(what));
        out.push((
            rec[0].to_string(),
            MetricRecord {
                seed: num(1, "seed")?,
                epoch: num(2, "epoch")?,
                step: num(3, "step")?,
                method: rec[4].to_string(),
                metric: rec[5].to_string(),
                layer: if rec[6].is_empty() {
                    None
                } else {
                    Some(rec[6].parse().map_err(|_| bad("layer"))?)
                },
                value: rec[7].parse().map_err(|_| bad("value"))?,
            },
        ));
    }
    Ok(out)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GGCK";

/// Little-endian: magic, version (1 = weights only, 2 = weights then
/// biases), depth, `depth + 1` layer widths, then every weight matrix
/// row-major as f32 (followed by every bias vector in version 2).
pub fn save_checkpoint<T: Real>(params: &MlpParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(16 + 4 * params.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend((if params.has_bias() { 2u32 } else { 1u32 }).to_le_bytes());
    out.extend((params.depth() as u32).to_le_bytes());
    for d in params.layer_dims() {
        out.extend((d as u32).to_le_bytes());
    }
    for x in params.iter() {
        out.extend((x.as_f64() as f32).to_le_bytes());
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&out).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpParams<f32>> {
    let path = path.as_ref();
    let buf = read_all(path)?;
    let u32_at = |off: usize| -> Result<u32> {
        buf.get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| format_err("checkpoint", path, off, "truncated header"))
    };
    if buf.get(0..4) != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(format_err("checkpoint", path, 0, "bad magic"));
    }
    let version = u32_at(4)?;
    if version != 1 && version != 2 {
        return Err(format_err("checkpoint", path, 4, format!("unsupported version {version}")));
    }
    let depth = u32_at(8)? as usize;
    if depth == 0 || depth > 1024 {
        return Err(format_err("checkpoint", path, 8, format!("implausible depth {depth}")));
    }
    let dims: Vec<usize> = (0..=depth).map(|i| u32_at(12 + 4 * i).map(|d| d as usize)).collect::<Result<_>>()?;
    let mut off = 12 + 4 * (depth + 1);
    let total: usize = dims.windows(2).map(|w| w[0] * w[1]).sum::<usize>()
        + if version == 2 { dims[1..].iter().sum() } else { 0 };
    if buf.len() != off + 4 * total {
        return Err(format_err(
            "checkpoint",
            path,
            buf.len(),
            format!("expected {} payload bytes, found {}", 4 * total, buf.len() - off),
        ));
    }
    let mut take = |n: usize| -> Vec<f32> {
        let v = buf[off..off + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        off += 4 * n;
        v
    };
    let mut weights = Vec::with_capacity(depth);
    for w in dims.windows(2) {
        weights.push(Matrix::from_vec(w[1], w[0], take(w[0] * w[1]))?);
    }
    let biases = (version == 2).then(|| dims[1..].iter().map(|&n| Vector(take(n))).collect());
    Ok(WeightSpace { weights, biases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, MlpConfig};
    use crate::rng::RngStream;

    #[test]
    fn idx_round_trip_and_magic_check() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let pixels: Vec<u8> = (0..2 * 3 * 4).map(|i| (i * 10) as u8).collect();
        write_idx_images(&ip, 3, 4, &pixels).unwrap();
        write_idx_labels(&lp, &[1, 9]).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.features.shape(), (2, 12));
        assert_eq!(d.labels, vec![1, 9]);
        assert_eq!(d.features[(1, 0)], 120.0 / 255.0);
        // a label file carrying the image magic is refused
        let err = load_idx(&ip, &ip).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        // truncation
        let mut bytes = std::fs::read(&ip).unwrap();
        bytes.pop();
        std::fs::write(&ip, &bytes).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let imgs = vec![vec![0u8; 3072], vec![255u8; 3072]];
        write_cifar_binary(&p, &[9, 0], &imgs).unwrap();
        let d = load_cifar_binary(&[&p]).unwrap();
        assert_eq!(d.labels, vec![9, 0]);
        assert_eq!(d.features.shape(), (2, 3072));
        assert_eq!(d.features[(1, 3071)], 1.0);
        let mut b = std::fs::read(&p).unwrap();
        b.push(0);
        std::fs::write(&p, b).unwrap();
        assert!(matches!(load_cifar_binary(&[&p]), Err(Error::Format { .. })));
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for bias in [false, true] {
            let cfg = MlpConfig::new(7, 5, 3, 4).with_bias(bias);
            let mut p = init_params::<f32>(&cfg, &mut RngStream::new(2, 0)).unwrap();
            if let Some(bs) = p.biases.as_mut() {
                bs[1].0[2] = -0.25;
            }
            let path = dir.path().join(format!("ck{bias}"));
            save_checkpoint(&p, &path).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), p);
        }
        std::fs::write(dir.path().join("bad"), b"GGCX").unwrap();
        assert!(load_checkpoint(dir.path().join("bad")).is_err());
    }

    #[test]
    fn metrics_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let recs = vec![
            MetricRecord::new(1, 2, 3, "wt[norm=example]", "cosine", 0.1 + 0.2),
            MetricRecord::new(1, 2, 3, "a,\"quoted\" name", "loss", -1e-300).with_layer(4),
        ];
        write_metrics(&p, "abc", &recs).unwrap();
        let back = read_metrics(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].1, recs[0]);
        assert_eq!(back[1].1, recs[1]);
        assert_eq!(back[1].0, "abc");
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("run_id,seed,epoch,step,method,metric,layer,value\n"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_checkpoint("/nonexistent/x.ggck").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ggck"));
    }
}
