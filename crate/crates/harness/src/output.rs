//! Output directory layout: one CSV per subcommand plus a manifest.

use std::path::{Path, PathBuf};

use gradguess::io::MetricsWriter;
use gradguess::MetricRecord;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub struct Output {
    pub dir: PathBuf,
    pub run_id: String,
    hash: String,
    config: String,
}

impl Output {
    pub fn create(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = PathBuf::from(&cfg.run.out);
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        Ok(Output {
            dir,
            run_id: cfg.run_id(),
            hash: cfg.hash(),
            config: cfg.to_toml(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn writer(&self, name: &str) -> Result<MetricsWriter> {
        Ok(MetricsWriter::create(self.path(&format!("{name}.csv")), &self.run_id)?)
    }

    /// `<command>.manifest.toml`: identity, resolved config and notes.
    pub fn write_manifest(&self, command: &str, notes: &[(String, String)]) -> Result<()> {
        let mut text = format!(
            "command = {command:?}\nrun_id = {:?}\nconfig_hash = {:?}\n",
            self.run_id, self.hash
        );
        if !notes.is_empty() {
            text.push_str("\n[notes]\n");
            for (k, v) in notes {
                text.push_str(&format!("{k:?} = {v:?}\n"));
            }
        }
        text.push_str("\n# resolved configuration\n");
        text.push_str(&self.config.lines().map(|l| format!("# {l}\n")).collect::<String>());
        let p = self.path(&format!("{command}.manifest.toml"));
        std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Keeps records in memory and optionally streams them to a CSV.
#[derive(Default)]
pub struct Recorder {
    writer: Option<MetricsWriter>,
    pub records: Vec<MetricRecord>,
}

impl Recorder {
    pub fn new(writer: Option<MetricsWriter>) -> Self {
        Recorder {
            writer,
            records: Vec::new(),
        }
    }

    pub fn open(out: Option<&Output>, name: &str) -> Result<Self> {
        Ok(Recorder::new(out.map(|o| o.writer(name)).transpose()?))
    }

    pub fn push(&mut self, r: MetricRecord) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.write(&r)?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    /// Records matching a metric name, in order.
    pub fn values(&self, metric: &str) -> Vec<&MetricRecord> {
        self.records.iter().filter(|r| r.metric == metric).collect()
    }
}
