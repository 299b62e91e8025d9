//! JSON and JSONL files: datasets, flags, queues, correction logs, configs.
//!
//! Whole-file writes go through a sibling temporary file and a rename, so a
//! reader never sees a half-written artifact. The correction log is the
//! exception: it is only ever appended to, one fsynced line per record.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use relabel_core::dataset::{DatasetBuilder, ExampleRecord};
use relabel_core::{CorrectionRecord, Dataset, FlagRecord, LabelSpace, QueueItem, RelabelQueue};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses every non-blank line of a JSONL file, keeping 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|source| Error::MalformedLine { path: path.to_path_buf(), line: i + 1, source })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes `body` to `path` atomically (temporary file, fsync, rename).
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| Error::io(&tmp, e))?;
    let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::MalformedFile { path: path.to_path_buf(), source })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

/// Loads a dataset. Without `label_space`, classes are taken in order of
/// first appearance. Unknown fields on a line are ignored.
pub fn load_dataset(path: &Path, label_space: Option<&LabelSpace>) -> Result<Dataset> {
    let mut builder = DatasetBuilder::new(label_space.cloned());
    for (line, record) in read_jsonl::<ExampleRecord>(path)? {
        builder
            .push_record(line, record)
            .map_err(|source| Error::Data { path: path.to_path_buf(), source })?;
    }
    builder
        .finish(path.display().to_string())
        .map_err(|source| Error::Data { path: path.to_path_buf(), source })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let records: Vec<ExampleRecord> = data.records().collect();
    write_jsonl(path, &records)
}

pub fn load_label_space(path: &Path) -> Result<LabelSpace> {
    read_json(path)
}

pub fn save_label_space(path: &Path, label_space: &LabelSpace) -> Result<()> {
    write_json(path, label_space)
}

fn values<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, v)| v).collect())
}

pub fn load_flags(path: &Path) -> Result<Vec<FlagRecord>> {
    values(path)
}

pub fn save_flags(path: &Path, flags: &[FlagRecord]) -> Result<()> {
    write_jsonl(path, flags)
}

pub fn load_queue(path: &Path) -> Result<RelabelQueue> {
    Ok(RelabelQueue { items: values::<QueueItem>(path)? })
}

pub fn save_queue(path: &Path, queue: &RelabelQueue) -> Result<()> {
    write_jsonl(path, &queue.items)
}

pub fn load_corrections(path: &Path) -> Result<Vec<CorrectionRecord>> {
    values(path)
}

pub fn save_corrections(path: &Path, corrections: &[CorrectionRecord]) -> Result<()> {
    write_jsonl(path, corrections)
}

/// Append-only correction log. Each record is written as one line and
/// fsynced before [`CorrectionLog::append`] returns.
#[derive(Debug)]
pub struct CorrectionLog {
    path: PathBuf,
    file: File,
}

impl CorrectionLog {
    /// Opens (creating if needed) the log for appending.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(CorrectionLog { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &CorrectionRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("correction records serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| Error::io(&self.path, e))
    }
}
