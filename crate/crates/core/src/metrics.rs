//! Line-delimited JSON metric streams.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(file),
        })
    }

    /// Keeps the first `keep` records of an existing stream and appends after
    /// them; used when resuming from a checkpoint.
    pub fn resume(path: impl AsRef<Path>, keep: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let kept: Vec<String> = if path.exists() {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            BufReader::new(f)
                .lines()
                .take(keep)
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(&path, e))?
        } else {
            Vec::new()
        };
        let mut w = Self::create(&path)?;
        for line in kept {
            writeln!(w.out, "{line}").map_err(|e| Error::io(&w.path, e))?;
        }
        w.flush()?;
        Ok(w)
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Env(format!("metric record: {e}")))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = OpenOptions::new().read(true).open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
