//! JSONL datasets and tree files on disk: atomic writes, validation,
//! streaming reads and summary statistics.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::pipeline::{quality_filter, RejectReason, SampleRecord, SchemaViolation, Stage, Verdict};
use crate::prompts::{Difficulty, TaskKind};
use crate::text::Lang;
use crate::wkt::{KnowledgeTree, WktError};

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: {violation}")]
    Schema {
        path: PathBuf,
        line: usize,
        violation: SchemaViolation,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(#[from] SchemaViolation),
    #[error("{path}: {source}")]
    Tree {
        path: PathBuf,
        #[source]
        source: WktError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatastoreError + '_ {
    move |source| DatastoreError::Io { path: path.to_owned(), source }
}

/// A dataset file as written or inspected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetHandle {
    pub path: PathBuf,
    /// The single stage of every record, if they share one.
    pub stage: Option<Stage>,
    pub count: u64,
    /// SHA-256 over the canonical record lines, newline-terminated.
    pub content_hash: String,
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".lock");
    path.with_file_name(name)
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, holding the advisory `<path>.lock` throughout.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatastoreError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_owned(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let lock_file = lock_path(path);
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_file)
        .map_err(io_err(&lock_file))?;
    lock.lock().map_err(io_err(&lock_file))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DatastoreError::Io { path: path.to_owned(), source: e.error })?;
    lock.unlock().map_err(io_err(&lock_file))?;
    Ok(())
}

fn common_stage<'a>(stages: impl Iterator<Item = &'a Stage>) -> Option<Stage> {
    let mut out = None;
    for s in stages {
        match out {
            None => out = Some(*s),
            Some(prev) if prev != *s => return None,
            _ => {}
        }
    }
    out
}

/// Validates every record, then writes them as canonical JSONL.
pub fn write_records(records: &[SampleRecord], path: &Path) -> Result<DatasetHandle, DatastoreError> {
    let mut body = String::new();
    for r in records {
        r.validate()?;
        body.push_str(&canonical::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())?;
    Ok(DatasetHandle {
        path: path.to_owned(),
        stage: common_stage(records.iter().map(|r| &r.stage)),
        count: records.len() as u64,
        content_hash: canonical::sha256_hex(body.as_bytes()),
    })
}

/// Writes pre-serialized lines unchanged, one per line.
pub fn write_lines(lines: &[String], path: &Path) -> Result<(), DatastoreError> {
    let mut body = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        body.push_str(l);
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

/// Serializable value as sorted, indented JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), DatastoreError> {
    let mut s = canonical::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Streams `(line number, record)` pairs from a JSONL source.
pub struct RecordReader<R> {
    path: PathBuf,
    lines: io::Lines<R>,
    line: usize,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, DatastoreError> {
        let f = File::open(path).map_err(io_err(path))?;
        Ok(Self::new(BufReader::new(f), path))
    }
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, path: &Path) -> Self {
        Self { path: path.to_owned(), lines: reader.lines(), line: 0 }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<(usize, String, SampleRecord), DatastoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        let raw = self.lines.next()?;
        self.line += 1;
        let line = self.line;
        Some(
            raw.map_err(|source| DatastoreError::Io { path: self.path.clone(), source })
                .and_then(|text| {
                    let rec: SampleRecord = serde_json::from_str(&text).map_err(|e| DatastoreError::Parse {
                        path: self.path.clone(),
                        line,
                        message: e.to_string(),
                    })?;
                    rec.validate().map_err(|violation| DatastoreError::Schema {
                        path: self.path.clone(),
                        line,
                        violation,
                    })?;
                    Ok((line, text, rec))
                }),
        )
    }
}

pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>, DatastoreError> {
    RecordReader::open(path)?.map(|r| r.map(|(_, _, rec)| rec)).collect()
}

/// Records together with their exact line text.
pub fn read_records_with_lines(path: &Path) -> Result<Vec<(String, SampleRecord)>, DatastoreError> {
    RecordReader::open(path)?.map(|r| r.map(|(_, text, rec)| (text, rec))).collect()
}

/// Handle for an existing dataset; the hash is taken over canonicalized
/// lines so it matches what [`write_records`] reports.
pub fn inspect(path: &Path) -> Result<DatasetHandle, DatastoreError> {
    let mut hasher = Sha256::new();
    let mut count = 0;
    let mut stages = Vec::new();
    for item in RecordReader::open(path)? {
        let (_, _, rec) = item?;
        hasher.update(canonical::to_string(&rec).expect("record serializes").as_bytes());
        hasher.update(b"\n");
        count += 1;
        if !stages.contains(&rec.stage) {
            stages.push(rec.stage);
        }
    }
    Ok(DatasetHandle {
        path: path.to_owned(),
        stage: if stages.len() == 1 { Some(stages[0]) } else { None },
        count,
        content_hash: hex::encode(hasher.finalize()),
    })
}

/// Tallies from one streaming pass over a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: u64,
    pub by_stage: BTreeMap<Stage, u64>,
    pub by_lang: BTreeMap<Lang, u64>,
    pub by_task: BTreeMap<TaskKind, u64>,
    pub by_difficulty: BTreeMap<Difficulty, u64>,
    /// Joint counts keyed `stage/lang/task/difficulty`.
    pub joint: BTreeMap<String, u64>,
    pub mean_question_chars: f64,
    pub mean_response_chars: f64,
    /// Records whose question or response the quality filter would now
    /// reject, by reason.
    pub filter_rejections: BTreeMap<RejectReason, u64>,
}

pub fn stats_from_reader<R: BufRead>(reader: R, path: &Path) -> Result<DatasetStats, DatastoreError> {
    let mut s = DatasetStats::default();
    let (mut q_chars, mut r_chars) = (0u64, 0u64);
    for item in RecordReader::new(reader, path) {
        let (_, _, rec) = item?;
        s.total += 1;
        *s.by_stage.entry(rec.stage).or_default() += 1;
        *s.by_lang.entry(rec.lang).or_default() += 1;
        *s.by_task.entry(rec.task).or_default() += 1;
        *s.by_difficulty.entry(rec.difficulty).or_default() += 1;
        *s.joint
            .entry(format!("{}/{}/{}/{}", rec.stage, rec.lang, rec.task, rec.difficulty))
            .or_default() += 1;
        q_chars += rec.question.chars().count() as u64;
        r_chars += rec.response.chars().count() as u64;
        for text in [&rec.question, &rec.response] {
            if let Verdict::Reject(reason) = quality_filter(text, rec.difficulty) {
                *s.filter_rejections.entry(reason).or_default() += 1;
                break;
            }
        }
    }
    if s.total > 0 {
        s.mean_question_chars = q_chars as f64 / s.total as f64;
        s.mean_response_chars = r_chars as f64 / s.total as f64;
    }
    Ok(s)
}

pub fn stats(path: &Path) -> Result<DatasetStats, DatastoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    stats_from_reader(BufReader::new(f), path)
}

pub fn save_tree(tree: &KnowledgeTree, path: &Path) -> Result<(), DatastoreError> {
    write_atomic(path, tree.to_json().as_bytes())
}

pub fn load_tree(path: &Path) -> Result<KnowledgeTree, DatastoreError> {
    let raw = std::fs::read_to_string(path).map_err(io_err(path))?;
    KnowledgeTree::from_json(&raw).map_err(|source| DatastoreError::Tree { path: path.to_owned(), source })
}

/// Parses a JSONL file line by line into `T`; blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatastoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatastoreError::Parse {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::Critique;

    fn record(i: usize, stage: Stage) -> SampleRecord {
        let refine = stage == Stage::Refine;
        SampleRecord {
            id: format!("{i:032x}"),
            stage,
            lang: if i % 2 == 0 { Lang::En } else { Lang::Zh },
            tag_chain: vec!["maps".into(), format!("leaf {i}")],
            task: TaskKind::ALL[i % 7],
            difficulty: Difficulty::ALL[i % 3],
            question: format!("Question number {i} about how old maps were drawn and why they differ from modern ones?"),
            response: format!("Answer number {i} describes clay tablets, medieval world maps and satellite imaging in turn."),
            origin_response: refine.then(|| "An earlier answer that was a little too long for the reader.".into()),
            critique: refine.then(|| Critique { strength: "s".into(), weakness: "w".into(), suggestion: "g".into() }),
            model_id: "mock".into(),
            created_at: "1970-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("void.jsonl");
        let recs: Vec<_> = (0..3).map(|i| record(i, Stage::Void)).collect();
        let h = write_records(&recs, &path).unwrap();
        assert_eq!(h.count, 3);
        assert_eq!(h.stage, Some(Stage::Void));
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        assert_eq!(read_records(&path).unwrap(), recs);
        assert_eq!(inspect(&path).unwrap(), h);

        let first = std::fs::read(&path).unwrap();
        write_records(&read_records(&path).unwrap(), &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn refine_without_critique_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("refine.jsonl");
        let mut r = record(0, Stage::Refine);
        r.critique = None;
        assert!(matches!(write_records(&[r], &path), Err(DatastoreError::SchemaViolation(_))));
        assert!(!path.exists());
    }

    #[test]
    fn corrupt_line_is_reported_with_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = canonical::to_string(&record(0, Stage::Void)).unwrap();
        std::fs::write(&path, format!("{good}\n{good}\n{{\"id\": \n{good}\n")).unwrap();
        match stats(&path) {
            Err(DatastoreError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_zero_stats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert_eq!(stats(&path).unwrap(), DatasetStats::default());
    }

    #[test]
    fn stats_marginals_sum_to_total() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        let recs: Vec<_> = (0..42).map(|i| record(i, if i < 21 { Stage::Void } else { Stage::Refine })).collect();
        write_records(&recs, &path).unwrap();
        let s = stats(&path).unwrap();
        assert_eq!(s.total, 42);
        for m in [
            s.by_stage.values().sum::<u64>(),
            s.by_lang.values().sum(),
            s.by_task.values().sum(),
            s.by_difficulty.values().sum(),
            s.joint.values().sum(),
        ] {
            assert_eq!(m, 42);
        }
        assert_eq!(s.by_task[&TaskKind::View], 6);
        assert!(s.filter_rejections.is_empty());
        assert_eq!(inspect(&path).unwrap().stage, None);
    }
}
