//! Line-delimited JSON training telemetry, flushed per record so a crash
//! never loses more than the current line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub episode_index: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub ci95: f64,
    pub learning_rate: f32,
    pub wall_time_ms: u64,
}

impl MetricsRecord {
    /// The seed-determined portion of a record: everything except wall
    /// time, which legitimately varies between otherwise identical runs.
    pub fn deterministic_fields(&self) -> (usize, u64, u64, u64, u32) {
        (
            self.episode_index,
            self.train_loss.to_bits(),
            self.eval_accuracy.to_bits(),
            self.ci95.to_bits(),
            self.learning_rate.to_bits(),
        )
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot write metrics to {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metrics line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        let file = File::create(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<(), MetricsError> {
        let io_err = |source| MetricsError::Io {
            path: self.path.clone(),
            source,
        };
        let line = serde_json::to_string(record).expect("record is serializable");
        self.out.write_all(line.as_bytes()).map_err(io_err)?;
        self.out.write_all(b"\n").map_err(io_err)?;
        self.out.flush().map_err(io_err)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| MetricsError::Parse { line: i + 1, source })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let records = vec![
            MetricsRecord {
                episode_index: 500,
                train_loss: 1.58,
                eval_accuracy: 0.23,
                ci95: 0.04,
                learning_rate: 0.001,
                wall_time_ms: 1234,
            },
            MetricsRecord {
                episode_index: 1000,
                train_loss: 1.21,
                eval_accuracy: 0.41,
                ci95: 0.05,
                learning_rate: 0.0009,
                wall_time_ms: 2468,
            },
        ];
        let mut writer = MetricsWriter::create(&path).unwrap();
        for r in &records {
            writer.write(r).unwrap();
        }
        drop(writer);
        assert_eq!(read_metrics(&path).unwrap(), records);
    }
}
