//! Append-only judgment log. Every submission is one JSON line; nothing is
//! rewritten. A snapshot holds only the governing (latest) judgment per
//! (query, annotator) and can always be rebuilt from the log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::AnnotationRecord;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct JudgmentLog {
    history: Vec<AnnotationRecord>,
    file: Option<(PathBuf, File)>,
}

/// Parses a log (or snapshot) stream, validating every record.
pub fn replay<R: BufRead>(source: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line)
            .map_err(|source| Error::Malformed {
                what: "judgment record",
                source,
            })
            .map_err(|e| e.at_line(i + 1))?;
        record.validate().map_err(|e| e.at_line(i + 1))?;
        out.push(record);
    }
    Ok(out)
}

/// Latest judgment per (query, annotator); on equal timestamps the later
/// log entry wins.
pub fn latest(records: &[AnnotationRecord]) -> BTreeMap<(String, String), &AnnotationRecord> {
    let mut out: BTreeMap<(String, String), &AnnotationRecord> = BTreeMap::new();
    for r in records {
        let key = (r.query_id.clone(), r.annotator_id.clone());
        match out.get(&key) {
            Some(prev) if prev.timestamp > r.timestamp => {}
            _ => {
                out.insert(key, r);
            }
        }
    }
    out
}

impl JudgmentLog {
    pub fn in_memory() -> Self {
        Self {
            history: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) a file-backed log, replaying what is already there.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let history = if path.exists() {
            replay(BufReader::new(File::open(&path)?))?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            history,
            file: Some((path, file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    /// Validates, persists and then records `record`.
    pub fn append(&mut self, record: AnnotationRecord) -> Result<()> {
        record.validate()?;
        if let Some((_, f)) = &mut self.file {
            let mut line = serde_json::to_string(&record).expect("record serialises");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.history.push(record);
        Ok(())
    }

    /// Full history, including superseded judgments.
    pub fn history(&self) -> &[AnnotationRecord] {
        &self.history
    }

    pub fn latest(&self) -> BTreeMap<(String, String), &AnnotationRecord> {
        latest(&self.history)
    }

    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        for r in self.latest().values() {
            serde_json::to_writer(&mut out, r).expect("record serialises");
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the snapshot next to a file-backed log as `<log>.snapshot`.
    pub fn compact(&self) -> Result<Option<PathBuf>> {
        let Some(path) = self.path() else {
            return Ok(None);
        };
        let mut snap = path.as_os_str().to_owned();
        snap.push(".snapshot");
        let snap = PathBuf::from(snap);
        self.write_snapshot(File::create(&snap)?)?;
        Ok(Some(snap))
    }
}
