//! Hash-keyed benchmark store.
//!
//! ```text
//! <root>/
//!   <hash>/
//!     arch.json           {n, adjacency, layer_types}
//!     log_<dataset>.json  {dataset, input_shape: [c, h, w], num_classes,
//!                          epochs: [{epoch, val_acc}], meta: {..}}
//! ```
//!
//! Writers take an advisory `<hash>.lock` file next to the record directory.

mod labels;
mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labels::{accuracies_at, holdout, label_pairs, PairMode, HOLDOUT_FRACTION};
pub use oracle::{
    synthetic_accuracy, CapacityFeatures, DatasetProfile, OracleCurve, DEFAULT_TOTAL_EPOCHS,
};

use crate::atomic::write_atomic;
use crate::search_space::{ArchJson, ArchSpec, HashId, SearchSpaceError};
use crate::shapes::{ShapeError, TensorShape};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("record {0} not found")]
    NotFound(HashId),
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing epoch {epoch} of {dataset} for {}", .hashes.join(", "))]
    MissingEpoch {
        dataset: String,
        epoch: u32,
        hashes: Vec<String>,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Spec(#[from] SearchSpaceError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochAccuracy {
    pub epoch: u32,
    pub val_acc: f64,
}

/// Training log of one architecture on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetLog {
    pub dataset: String,
    pub input_shape: TensorShape,
    pub num_classes: u32,
    pub epochs: Vec<EpochAccuracy>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl DatasetLog {
    pub fn accuracy_at(&self, epoch: u32) -> Option<f64> {
        self.epochs
            .binary_search_by_key(&epoch, |e| e.epoch)
            .ok()
            .map(|i| self.epochs[i].val_acc)
    }

    pub fn last_epoch(&self) -> Option<u32> {
        self.epochs.last().map(|e| e.epoch)
    }

    pub fn validate(&self) -> Result<()> {
        check_dataset_name(&self.dataset)?;
        if self.num_classes == 0 {
            return Err(StoreError::InvalidRecord(format!("{}: zero classes", self.dataset)));
        }
        for w in self.epochs.windows(2) {
            if w[0].epoch >= w[1].epoch {
                return Err(StoreError::InvalidRecord(format!(
                    "{}: epochs not strictly increasing at {}",
                    self.dataset, w[1].epoch
                )));
            }
        }
        if let Some(e) = self.epochs.iter().find(|e| !(0.0..=1.0).contains(&e.val_acc)) {
            return Err(StoreError::InvalidRecord(format!(
                "{}: accuracy {} at epoch {} outside [0, 1]",
                self.dataset, e.val_acc, e.epoch
            )));
        }
        Ok(())
    }
}

/// One architecture with its logs, keyed by canonical hash.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub hash: HashId,
    pub spec: ArchSpec,
    pub logs: BTreeMap<String, DatasetLog>,
}

impl BenchRecord {
    pub fn new(spec: ArchSpec) -> Self {
        Self {
            hash: spec.hash(),
            spec,
            logs: BTreeMap::new(),
        }
    }

    pub fn with_log(mut self, log: DatasetLog) -> Self {
        self.logs.insert(log.dataset.clone(), log);
        self
    }

    pub fn log(&self, dataset: &str) -> Option<&DatasetLog> {
        self.logs.get(dataset)
    }

    pub fn accuracy(&self, dataset: &str, epoch: u32) -> Option<f64> {
        self.log(dataset)?.accuracy_at(epoch)
    }

    pub fn validate(&self) -> Result<()> {
        let actual = self.spec.hash();
        if actual != self.hash {
            return Err(StoreError::Integrity(format!(
                "record hash {} does not match its architecture ({actual})",
                self.hash
            )));
        }
        for (name, log) in &self.logs {
            if name != &log.dataset {
                return Err(StoreError::InvalidRecord(format!(
                    "log keyed {name} names dataset {}",
                    log.dataset
                )));
            }
            log.validate()?;
        }
        Ok(())
    }
}

/// Log with a synthetic accuracy for every epoch `1..=total_epochs`.
pub fn synthetic_log(spec: &ArchSpec, profile: &DatasetProfile, total_epochs: u32) -> Result<DatasetLog> {
    let curve = OracleCurve::new(spec, profile, total_epochs)?;
    let epochs = curve
        .series()
        .into_iter()
        .zip(1..)
        .map(|(val_acc, epoch)| EpochAccuracy { epoch, val_acc })
        .collect();
    let meta = [
        ("source".to_string(), "synthetic".to_string()),
        ("difficulty".to_string(), profile.difficulty.to_string()),
    ];
    Ok(DatasetLog {
        dataset: profile.name.clone(),
        input_shape: profile.input_shape,
        num_classes: profile.num_classes,
        epochs,
        meta: meta.into_iter().collect(),
    })
}

fn check_dataset_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidArgument(format!("bad dataset name {name:?}")))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| StoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_atomic(path, &bytes).map_err(io_err(path))
}

/// Exclusive advisory lock on one record directory, released on drop.
struct RecordLock {
    path: PathBuf,
}

impl RecordLock {
    const TIMEOUT: Duration = Duration::from_secs(30);

    fn acquire(path: PathBuf) -> Result<Self> {
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(Self { path }),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > Self::TIMEOUT {
                        return Err(StoreError::Io {
                            path,
                            source: io::Error::new(io::ErrorKind::WouldBlock, "lock held"),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
    }
}

impl Drop for RecordLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Summary counts of a store.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StoreStats {
    pub records: usize,
    /// dataset -> (records with a log, min last epoch, max last epoch)
    pub datasets: BTreeMap<String, DatasetStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub min_epochs: u32,
    pub max_epochs: u32,
    pub best_final_acc: f64,
}

/// Outcome of [`BenchmarkStore::ingest_external`].
#[derive(Debug, Default)]
pub struct IngestReport {
    pub merged: usize,
    pub errors: Vec<(PathBuf, StoreError)>,
}

/// External log file: a dataset log plus the architecture, by hash or inline.
#[derive(Debug, Deserialize)]
struct ExternalLog {
    #[serde(default)]
    hash: Option<String>,
    #[serde(default)]
    arch: Option<ArchJson>,
    #[serde(default)]
    dataset: Option<String>,
    input_shape: TensorShape,
    num_classes: u32,
    epochs: Vec<EpochAccuracy>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkStore {
    root: PathBuf,
}

impl BenchmarkStore {
    /// Creates the root directory if needed.
    pub fn init(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self { root })
    }

    /// Opens an existing store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(StoreError::Io {
                source: io::Error::new(io::ErrorKind::NotFound, "store directory does not exist"),
                path: root,
            });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_dir(&self, hash: &HashId) -> PathBuf {
        self.root.join(hash.as_str())
    }

    fn lock(&self, hash: &HashId) -> Result<RecordLock> {
        RecordLock::acquire(self.root.join(format!("{hash}.lock")))
    }

    pub fn contains(&self, hash: &HashId) -> bool {
        self.record_dir(hash).join("arch.json").is_file()
    }

    /// Writes `record`; logs of datasets not in `record` are left in place.
    pub fn save(&self, record: &BenchRecord) -> Result<()> {
        record.validate()?;
        let _lock = self.lock(&record.hash)?;
        let dir = self.record_dir(&record.hash);
        let arch_path = dir.join("arch.json");
        if arch_path.is_file() {
            let existing: ArchJson = read_json(&arch_path)?;
            let existing = ArchSpec::try_from(existing)?;
            if existing != record.spec {
                return Err(StoreError::Integrity(format!(
                    "{} already holds a different architecture",
                    record.hash
                )));
            }
        } else {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            write_json(&arch_path, &ArchJson::from(record.spec.clone()))?;
        }
        for (name, log) in &record.logs {
            write_json(&dir.join(format!("log_{name}.json")), log)?;
        }
        Ok(())
    }

    pub fn load(&self, hash: &HashId) -> Result<BenchRecord> {
        let dir = self.record_dir(hash);
        let arch_path = dir.join("arch.json");
        if !arch_path.is_file() {
            return Err(StoreError::NotFound(hash.clone()));
        }
        let spec = ArchSpec::try_from(read_json::<ArchJson>(&arch_path)?)?;
        let mut record = BenchRecord {
            hash: hash.clone(),
            spec,
            logs: BTreeMap::new(),
        };
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .map(|e| e.map(|e| e.path()).map_err(io_err(&dir)))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(dataset) = name.strip_prefix("log_").and_then(|n| n.strip_suffix(".json")) {
                let log: DatasetLog = read_json(&path)?;
                if log.dataset != dataset {
                    return Err(StoreError::InvalidRecord(format!(
                        "{} names dataset {}",
                        path.display(),
                        log.dataset
                    )));
                }
                record.logs.insert(dataset.to_string(), log);
            }
        }
        record.validate()?;
        Ok(record)
    }

    /// All record hashes, ascending, rebuilt from the directory listing.
    pub fn hashes(&self) -> Result<Vec<HashId>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if !entry.path().is_dir() {
                continue;
            }
            if let Some(h) = entry.file_name().to_str().and_then(|n| HashId::parse(n).ok()) {
                if entry.path().join("arch.json").is_file() {
                    out.push(h);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Every record, ordered by hash.
    pub fn load_all(&self) -> Result<Vec<BenchRecord>> {
        self.hashes()?.iter().map(|h| self.load(h)).collect()
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let records = self.load_all()?;
        let mut stats = StoreStats {
            records: records.len(),
            ..Default::default()
        };
        for r in &records {
            for (name, log) in &r.logs {
                let last = log.last_epoch().unwrap_or(0);
                let acc = log.epochs.last().map_or(0.0, |e| e.val_acc);
                let d = stats.datasets.entry(name.clone()).or_insert(DatasetStats {
                    min_epochs: u32::MAX,
                    ..Default::default()
                });
                d.records += 1;
                d.min_epochs = d.min_epochs.min(last);
                d.max_epochs = d.max_epochs.max(last);
                d.best_final_acc = d.best_final_acc.max(acc);
            }
        }
        Ok(stats)
    }

    /// Merges external JSON logs from a file or a directory of `*.json` files.
    ///
    /// Each file holds one log in the `log_<dataset>.json` schema plus either
    /// `hash` (of an existing record) or an inline `arch`. `dataset`, when
    /// given, overrides the dataset named in the files. Bad files are
    /// reported and skipped.
    pub fn ingest_external(&self, path: &Path, dataset: Option<&str>) -> Result<IngestReport> {
        let files = if path.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(path)
                .map_err(io_err(path))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
                .collect();
            v.sort();
            v
        } else if path.is_file() {
            vec![path.to_path_buf()]
        } else {
            return Err(io_err(path)(io::Error::new(io::ErrorKind::NotFound, "no such path")));
        };
        let mut report = IngestReport::default();
        for file in files {
            match self.ingest_file(&file, dataset) {
                Ok(()) => report.merged += 1,
                Err(e) => report.errors.push((file, e)),
            }
        }
        Ok(report)
    }

    fn ingest_file(&self, file: &Path, dataset: Option<&str>) -> Result<()> {
        let ext: ExternalLog = read_json(file)?;
        let dataset = match (dataset, ext.dataset.as_deref()) {
            (Some(d), _) | (None, Some(d)) => d.to_string(),
            (None, None) => {
                return Err(StoreError::InvalidRecord("log names no dataset".into()));
            }
        };
        let mut incoming = DatasetLog {
            dataset: dataset.clone(),
            input_shape: ext.input_shape,
            num_classes: ext.num_classes,
            epochs: ext.epochs,
            meta: ext.meta,
        };
        incoming.epochs.sort_by_key(|e| e.epoch);
        incoming.validate()?;
        let inline = ext.arch.map(ArchSpec::try_from).transpose()?;
        let hash = match (&inline, ext.hash) {
            (Some(spec), Some(h)) => {
                let h = HashId::parse(&h)?;
                if h != spec.hash() {
                    return Err(StoreError::Integrity(format!(
                        "declared hash {h} does not match the embedded architecture"
                    )));
                }
                h
            }
            (Some(spec), None) => spec.hash(),
            (None, Some(h)) => HashId::parse(&h)?,
            (None, None) => {
                return Err(StoreError::InvalidRecord("log has neither hash nor arch".into()));
            }
        };
        let mut record = match self.load(&hash) {
            Ok(r) => r,
            Err(StoreError::NotFound(_)) => match inline {
                Some(spec) => BenchRecord::new(spec),
                None => return Err(StoreError::NotFound(hash)),
            },
            Err(e) => return Err(e),
        };
        let merged = match record.logs.remove(&dataset) {
            None => incoming,
            Some(existing) => merge_logs(&hash, existing, incoming)?,
        };
        record.logs.insert(dataset, merged);
        self.save(&record)
    }
}

fn merge_logs(hash: &HashId, mut existing: DatasetLog, incoming: DatasetLog) -> Result<DatasetLog> {
    if existing.input_shape != incoming.input_shape || existing.num_classes != incoming.num_classes {
        return Err(StoreError::Integrity(format!(
            "({hash}, {}): input shape or class count differs from the stored log",
            existing.dataset
        )));
    }
    let mut by_epoch: BTreeMap<u32, f64> =
        existing.epochs.iter().map(|e| (e.epoch, e.val_acc)).collect();
    for e in &incoming.epochs {
        match by_epoch.get(&e.epoch) {
            Some(&old) if old != e.val_acc => {
                return Err(StoreError::Integrity(format!(
                    "conflicting accuracy for ({hash}, {}, {}): {old} vs {}",
                    existing.dataset, e.epoch, e.val_acc
                )));
            }
            _ => {
                by_epoch.insert(e.epoch, e.val_acc);
            }
        }
    }
    existing.epochs = by_epoch
        .into_iter()
        .map(|(epoch, val_acc)| EpochAccuracy { epoch, val_acc })
        .collect();
    existing.meta.extend(incoming.meta);
    Ok(existing)
}
