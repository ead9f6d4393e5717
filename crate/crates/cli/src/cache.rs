//! Persistent, append-only store of solved samples.
//!
//! Each level has one CSV file. Every row ends in a checksum of its own
//! text, and `index.csv` records the row count and a digest of the rows of
//! every file. A row cut short by a crash is dropped on open; any other
//! mismatch is reported as corruption.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use henry_mlmc::grid::REPORT_COUNT;
use henry_mlmc::qoi::QoiSpec;
use henry_mlmc::sampling::{SamplerKind, STOCHASTIC_DIM};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::hex;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt cache file {path}, line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("cache {path} holds quantities `{found}`, this study needs `{expected}`")]
    QoiMismatch { path: PathBuf, expected: String, found: String },
    #[error("record for {0:?} conflicts with the cached one")]
    Conflict(SampleKey),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

/// Identity of one single-level solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub level: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    pub sample_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStatus {
    Ok,
    Failed,
}

/// Outcome of one solve: QoI series for every spec of the study, cost and
/// solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub key: SampleKey,
    pub xi: [f64; STOCHASTIC_DIM],
    pub status: SampleStatus,
    pub cost_s: f64,
    /// Deterministic work estimate of the solve.
    pub work: f64,
    pub newton_iterations: usize,
    pub retries: usize,
    /// `values[s * 48 + k - 1]` is spec `s` at report `k`; NaN if failed.
    pub values: Vec<f64>,
}

impl SampleRecord {
    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }

    /// Series of spec number `spec`.
    pub fn series(&self, spec: usize) -> &[f64] {
        &self.values[spec * REPORT_COUNT..(spec + 1) * REPORT_COUNT]
    }

    fn to_row(&self) -> String {
        let k = &self.key;
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            k.sampler,
            k.seed,
            k.sample_index,
            self.xi[0],
            self.xi[1],
            self.xi[2],
            if self.is_ok() { "ok" } else { "failed" },
            self.cost_s,
            self.work,
            self.newton_iterations,
            self.retries
        );
        for v in &self.values {
            row.push(',');
            row.push_str(&v.to_string());
        }
        let sum = row_checksum(&row);
        row.push(',');
        row.push_str(&sum);
        row
    }

    fn from_row(level: usize, row: &str, values: usize) -> Result<Self, String> {
        let (body, sum) = row.rsplit_once(',').ok_or("missing checksum")?;
        if row_checksum(body) != sum {
            return Err("checksum mismatch".into());
        }
        let f: Vec<&str> = body.split(',').collect();
        if f.len() != 11 + values {
            return Err(format!("{} fields, expected {}", f.len(), 11 + values));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {}: {e}", i + 1));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| format!("field {}: {e}", i + 1));
        let status = match f[6] {
            "ok" => SampleStatus::Ok,
            "failed" => SampleStatus::Failed,
            other => return Err(format!("unknown status `{other}`")),
        };
        Ok(Self {
            key: SampleKey { level, sampler: f[0].parse()?, seed: int(1)?, sample_index: int(2)? },
            xi: [num(3)?, num(4)?, num(5)?],
            status,
            cost_s: num(7)?,
            work: num(8)?,
            newton_iterations: int(9)? as usize,
            retries: int(10)? as usize,
            values: (11..f.len()).map(num).collect::<Result<_, _>>()?,
        })
    }
}

fn row_checksum(body: &str) -> String {
    hex(&Sha256::digest(body.as_bytes())[..8])
}

struct LevelFile {
    path: PathBuf,
    records: HashMap<(SamplerKind, u64, u64), SampleRecord>,
    rows: usize,
    digest: Sha256,
    writer: File,
}

/// Sample store of one study directory.
pub struct SampleCache {
    dir: PathBuf,
    tag: String,
    width: usize,
    levels: BTreeMap<usize, LevelFile>,
    index: BTreeMap<usize, (usize, String)>,
}

impl SampleCache {
    /// Opens or creates the cache in `dir` for records of `specs`.
    pub fn open(dir: &Path, specs: &[QoiSpec]) -> Result<Self, CacheError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tag = specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";");
        let index_path = dir.join("index.csv");
        let mut index = BTreeMap::new();
        if index_path.exists() {
            let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
            for (i, line) in text.lines().enumerate().skip(1) {
                let corrupt = |reason: &str| CacheError::Corrupt { path: index_path.clone(), line: i + 1, reason: reason.into() };
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(corrupt("expected level,rows,digest"));
                }
                let level = f[0].parse().map_err(|_| corrupt("bad level"))?;
                let rows = f[1].parse().map_err(|_| corrupt("bad row count"))?;
                index.insert(level, (rows, f[2].to_string()));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), tag, width: specs.len() * REPORT_COUNT, levels: BTreeMap::new(), index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn header(&self, level: usize) -> String {
        let values: Vec<String> = (0..self.width).map(|i| format!("q{}k{}", i / REPORT_COUNT, i % REPORT_COUNT + 1)).collect();
        format!(
            "# level={level} qoi={}\nsampler,seed,sample_index,xi1,xi2,xi3,status,cost_s,work,newton,retries,{},checksum\n",
            self.tag,
            values.join(",")
        )
    }

    fn level_file(&mut self, level: usize) -> Result<&mut LevelFile, CacheError> {
        if !self.levels.contains_key(&level) {
            let file = self.load(level)?;
            self.levels.insert(level, file);
        }
        Ok(self.levels.get_mut(&level).expect("inserted above"))
    }

    fn load(&self, level: usize) -> Result<LevelFile, CacheError> {
        let path = self.dir.join(format!("level_{level}.csv"));
        let header = self.header(level);
        let indexed = self.index.get(&level).cloned();
        if !path.exists() {
            if indexed.is_some_and(|(rows, _)| rows > 0) {
                return Err(CacheError::Corrupt { path, line: 0, reason: "file listed in the index is missing".into() });
            }
            fs::write(&path, &header).map_err(io_err(&path))?;
            let writer = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
            return Ok(LevelFile { path, records: HashMap::new(), rows: 0, digest: Sha256::new(), writer });
        }
        let mut text = fs::read_to_string(&path).map_err(io_err(&path))?;
        if !text.ends_with('\n') {
            // a crash interrupted the last append
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            text.truncate(keep);
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(keep as u64).map_err(io_err(&path))?;
        }
        let mut lines = text.lines();
        let first = lines.next().unwrap_or_default();
        let found = first.split_once("qoi=").map(|(_, q)| q).unwrap_or_default();
        if found != self.tag {
            return Err(CacheError::QoiMismatch { path, expected: self.tag.clone(), found: found.into() });
        }
        if text.len() < header.len() || !text.starts_with(&header) {
            return Err(CacheError::Corrupt { path, line: 2, reason: "unexpected header".into() });
        }
        let mut records = HashMap::new();
        let mut digest = Sha256::new();
        let mut rows = 0;
        for (i, row) in lines.skip(1).enumerate() {
            let line = i + 3;
            let record = SampleRecord::from_row(level, row, self.width)
                .map_err(|reason| CacheError::Corrupt { path: path.clone(), line, reason })?;
            digest.update(row.as_bytes());
            digest.update(b"\n");
            rows += 1;
            if let Some((n, sum)) = &indexed {
                if rows == *n && hex(&digest.clone().finalize()) != *sum {
                    return Err(CacheError::Corrupt { path: path.clone(), line, reason: "rows differ from the index digest".into() });
                }
            }
            let k = record.key;
            records.insert((k.sampler, k.seed, k.sample_index), record);
        }
        if let Some((n, _)) = indexed {
            if rows < n {
                return Err(CacheError::Corrupt { path, line: rows + 2, reason: format!("index lists {n} rows, file has {rows}") });
            }
        }
        let writer = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        Ok(LevelFile { path, records, rows, digest, writer })
    }

    pub fn get(&mut self, key: &SampleKey) -> Result<Option<&SampleRecord>, CacheError> {
        let file = self.level_file(key.level)?;
        Ok(file.records.get(&(key.sampler, key.seed, key.sample_index)))
    }

    /// Appends a record; storing an identical record again is a no-op.
    pub fn insert(&mut self, record: SampleRecord) -> Result<(), CacheError> {
        let level = record.key.level;
        let width = self.width;
        let file = self.level_file(level)?;
        let id = (record.key.sampler, record.key.seed, record.key.sample_index);
        if let Some(old) = file.records.get(&id) {
            // compare through the row text so NaN entries match
            return if old.to_row() == record.to_row() { Ok(()) } else { Err(CacheError::Conflict(record.key)) };
        }
        if record.values.len() != width {
            return Err(CacheError::Corrupt {
                path: file.path.clone(),
                line: file.rows + 3,
                reason: format!("record has {} values, expected {width}", record.values.len()),
            });
        }
        let mut row = record.to_row();
        row.push('\n');
        file.writer.write_all(row.as_bytes()).map_err(io_err(&file.path))?;
        file.writer.flush().map_err(io_err(&file.path))?;
        file.digest.update(row.as_bytes());
        file.rows += 1;
        let entry = (file.rows, hex(&file.digest.clone().finalize()));
        file.records.insert(id, record);
        self.index.insert(level, entry);
        self.write_index()
    }

    fn write_index(&self) -> Result<(), CacheError> {
        let mut text = String::from("level,rows,digest\n");
        for (level, (rows, sum)) in &self.index {
            text.push_str(&format!("{level},{rows},{sum}\n"));
        }
        let tmp = self.dir.join("index.csv.tmp");
        let path = self.dir.join("index.csv");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// All records of one level, sorted by key.
    pub fn records(&mut self, level: usize) -> Result<Vec<SampleRecord>, CacheError> {
        let mut all: Vec<SampleRecord> = self.level_file(level)?.records.values().cloned().collect();
        all.sort_by_key(|r| r.key);
        Ok(all)
    }
}
