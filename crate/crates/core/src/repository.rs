//! The memory repository: a durable, searchable store of memory items.
//!
//! Items live in an append-only log of JSON lines (the same record layout as
//! the `.mrx` archive). Opening a repository replays the log, keeping the
//! last record for each id, and rebuilds one vector index per
//! `(kind, success)` partition so success-only searches never have to
//! over-fetch. Forgetting rewrites the log atomically without the removed
//! records.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::Utc;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{rank_hits, Embedding, Hit, HnswIndex, IndexError, IndexParams};
use crate::memory::{MemoryItem, MemoryKind};

pub const ARCHIVE_EXTENSION: &str = "mrx";

/// Partitions up to this size are searched with the candidate list as wide
/// as the partition, which makes the graph search exhaustive.
pub const EXHAUSTIVE_SEARCH_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum RepositoryError {
    #[error("memory item violates invariants: {0}")]
    InvariantViolation(String),
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("unknown memory id {0}")]
    UnknownId(String),
    #[error("malformed archive at line {line}: {reason}")]
    MalformedArchive { line: usize, reason: String },
    #[error("embedding dimension mismatch: repository has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub type Result<T> = std::result::Result<T, RepositoryError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportPolicy {
    SkipDuplicates,
    Overwrite,
}

impl std::str::FromStr for ImportPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "skip" | "skip_duplicates" => Ok(ImportPolicy::SkipDuplicates),
            "overwrite" => Ok(ImportPolicy::Overwrite),
            other => Err(format!("unknown import policy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepositoryConfig {
    pub dim: usize,
    pub index: IndexParams,
    /// Seed for id generation. `None` draws ids from OS entropy.
    pub id_seed: Option<u64>,
}

impl Default for RepositoryConfig {
    fn default() -> Self {
        Self {
            dim: 768,
            index: IndexParams::default(),
            id_seed: None,
        }
    }
}

/// A memory item before the repository assigns its id and timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryDraft {
    pub kind: MemoryKind,
    pub original_text: String,
    pub concise_text: String,
    pub brief_text: String,
    pub embedding: Embedding,
    pub success: bool,
    pub source_task: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RepositoryStats {
    pub total: usize,
    pub task_memories: usize,
    pub knowledge: usize,
    pub successes: usize,
    pub failures: usize,
}

/// A search hit resolved to its stored item.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub item: MemoryItem,
    pub relevance: f64,
}

struct State {
    items: BTreeMap<String, MemoryItem>,
    indexes: HashMap<(MemoryKind, bool), HnswIndex>,
    log: File,
}

pub struct MemoryRepository {
    path: PathBuf,
    config: RepositoryConfig,
    state: RwLock<State>,
    ids: Mutex<ChaCha20Rng>,
}

impl std::fmt::Debug for MemoryRepository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryRepository")
            .field("path", &self.path)
            .field("config", &self.config)
            .field("len", &self.len())
            .finish()
    }
}

fn open_log(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).read(true).open(path)
}

impl MemoryRepository {
    /// Open (or create) the repository whose log lives at `path`.
    pub fn open(path: impl AsRef<Path>, config: RepositoryConfig) -> Result<Self> {
        config.index.validate()?;
        let path = path.as_ref().to_path_buf();
        if path.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("{} is a directory", path.display()),
            )
            .into());
        }
        let log = open_log(&path)?;
        let items = replay_log(&path, config.dim)?;

        let mut indexes = HashMap::new();
        for kind in MemoryKind::ALL {
            for success in [true, false] {
                indexes.insert((kind, success), HnswIndex::new(config.dim, config.index)?);
            }
        }
        let mut state = State { items: BTreeMap::new(), indexes, log };
        for item in items {
            state.index_item(&item)?;
            state.items.insert(item.id.clone(), item);
        }

        let rng = match config.id_seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_entropy(),
        };
        Ok(Self {
            path,
            config,
            state: RwLock::new(state),
            ids: Mutex::new(rng),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn config(&self) -> &RepositoryConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 128-bit random id as lowercase hex.
    fn fresh_id(&self) -> String {
        let mut bytes = [0u8; 16];
        self.ids.lock().unwrap().fill_bytes(&mut bytes);
        hex::encode(bytes)
    }

    fn check_item(&self, item: &MemoryItem) -> Result<()> {
        item.validate().map_err(RepositoryError::InvariantViolation)?;
        if item.embedding.dim() != self.config.dim {
            return Err(RepositoryError::DimensionMismatch {
                expected: self.config.dim,
                actual: item.embedding.dim(),
            });
        }
        if item.embedding.is_zero() {
            return Err(RepositoryError::InvariantViolation("embedding is the zero vector".into()));
        }
        Ok(())
    }

    /// Store a new memory; returns its freshly assigned id.
    pub fn insert(&self, draft: MemoryDraft) -> Result<String> {
        let mut id = self.fresh_id();
        while self.contains(&id) {
            id = self.fresh_id();
        }
        let item = MemoryItem {
            id,
            kind: draft.kind,
            original_text: draft.original_text,
            concise_text: draft.concise_text,
            brief_text: draft.brief_text,
            embedding: draft.embedding,
            success: draft.success,
            created_at: Utc::now(),
            source_task: draft.source_task,
        };
        self.insert_item(item)
    }

    /// Store a fully formed item, keeping its id. Fails on duplicate ids.
    pub fn insert_item(&self, item: MemoryItem) -> Result<String> {
        self.check_item(&item)?;
        let mut state = self.state.write().unwrap();
        if state.items.contains_key(&item.id) {
            return Err(RepositoryError::InvariantViolation(format!(
                "id {} already stored",
                item.id
            )));
        }
        state.append(&item)?;
        state.index_item(&item)?;
        let id = item.id.clone();
        state.items.insert(id.clone(), item);
        Ok(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.state.read().unwrap().items.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Result<MemoryItem> {
        self.state
            .read()
            .unwrap()
            .items
            .get(id)
            .cloned()
            .ok_or_else(|| RepositoryError::UnknownId(id.to_string()))
    }

    /// All items sorted by id.
    pub fn items(&self) -> Vec<MemoryItem> {
        self.state.read().unwrap().items.values().cloned().collect()
    }

    pub fn stats(&self) -> RepositoryStats {
        let state = self.state.read().unwrap();
        let mut s = RepositoryStats::default();
        for item in state.items.values() {
            s.total += 1;
            match item.kind {
                MemoryKind::TaskMemory => s.task_memories += 1,
                MemoryKind::Knowledge => s.knowledge += 1,
            }
            if item.success {
                s.successes += 1;
            } else {
                s.failures += 1;
            }
        }
        s
    }

    pub fn search(
        &self,
        query: &Embedding,
        kind: MemoryKind,
        k: usize,
        success_only: bool,
    ) -> Result<Vec<ScoredItem>> {
        self.search_excluding(query, kind, k, success_only, &HashSet::new())
    }

    /// Top-`k` items of `kind` by cosine relevance, skipping ids in `exclude`.
    pub fn search_excluding(
        &self,
        query: &Embedding,
        kind: MemoryKind,
        k: usize,
        success_only: bool,
        exclude: &HashSet<String>,
    ) -> Result<Vec<ScoredItem>> {
        if query.dim() != self.config.dim {
            return Err(RepositoryError::DimensionMismatch {
                expected: self.config.dim,
                actual: query.dim(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let state = self.state.read().unwrap();
        let fetch = k + exclude.len();
        let partitions: &[bool] = if success_only { &[true] } else { &[true, false] };

        let mut hits: Vec<Hit> = Vec::new();
        for &success in partitions {
            let index = &state.indexes[&(kind, success)];
            if index.is_empty() {
                continue;
            }
            let mut ef = self.config.index.ef_search.max(fetch);
            if index.len() <= EXHAUSTIVE_SEARCH_LIMIT {
                ef = ef.max(index.len());
            }
            hits.extend(
                index
                    .search(query, fetch, ef)?
                    .into_iter()
                    .filter(|h| !exclude.contains(&h.id)),
            );
        }
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|h| ScoredItem {
                item: state.items[&h.id].clone(),
                relevance: h.similarity,
            })
            .collect())
    }

    /// Remove the listed ids from storage and index; unknown ids are ignored.
    pub fn forget<S: AsRef<str>>(&self, ids: &[S]) -> Result<usize> {
        let mut state = self.state.write().unwrap();
        let doomed: Vec<String> = ids
            .iter()
            .map(|s| s.as_ref().to_string())
            .filter(|id| state.items.contains_key(id))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        if doomed.is_empty() {
            return Ok(0);
        }
        let remaining: Vec<&MemoryItem> = state
            .items
            .values()
            .filter(|i| !doomed.contains(&i.id))
            .collect();
        rewrite_atomically(&self.path, &remaining)?;
        state.log = open_log(&self.path)?;
        for id in &doomed {
            let item = state.items.remove(id).expect("filtered to known ids");
            state
                .indexes
                .get_mut(&(item.kind, item.success))
                .expect("all partitions exist")
                .remove(id)?;
        }
        Ok(doomed.len())
    }

    /// Write every item to `destination` as an archive sorted by id.
    pub fn export(&self, destination: impl AsRef<Path>) -> Result<usize> {
        let state = self.state.read().unwrap();
        let items: Vec<&MemoryItem> = state.items.values().collect();
        rewrite_atomically(destination.as_ref(), &items)?;
        Ok(items.len())
    }

    pub fn export_to<W: Write>(&self, mut out: W) -> Result<usize> {
        let state = self.state.read().unwrap();
        for item in state.items.values() {
            write_record(&mut out, item)?;
        }
        out.flush()?;
        Ok(state.items.len())
    }

    /// Load an archive. The whole archive is validated before anything is
    /// stored. Returns the number of items written.
    pub fn import(&self, source: impl AsRef<Path>, policy: ImportPolicy) -> Result<usize> {
        let file = File::open(source.as_ref())?;
        let items = parse_archive(BufReader::new(file), self.config.dim)?;
        for (n, item) in items.iter().enumerate() {
            self.check_item(item).map_err(|e| match e {
                RepositoryError::InvariantViolation(reason) => {
                    RepositoryError::MalformedArchive { line: n + 1, reason }
                }
                other => other,
            })?;
        }

        let mut state = self.state.write().unwrap();
        let mut imported = 0;
        for item in items {
            if let Some(existing) = state.items.get(&item.id) {
                match policy {
                    ImportPolicy::SkipDuplicates => continue,
                    ImportPolicy::Overwrite => {
                        let key = (existing.kind, existing.success);
                        state.indexes.get_mut(&key).expect("partition").remove(&item.id)?;
                    }
                }
            }
            state.append(&item)?;
            state.index_item(&item)?;
            state.items.insert(item.id.clone(), item);
            imported += 1;
        }
        Ok(imported)
    }
}

impl State {
    fn append(&mut self, item: &MemoryItem) -> io::Result<()> {
        let mut line = serde_json::to_vec(item).map_err(io::Error::other)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()
    }

    fn index_item(&mut self, item: &MemoryItem) -> Result<()> {
        self.indexes
            .get_mut(&(item.kind, item.success))
            .expect("all partitions exist")
            .insert(item.id.clone(), item.embedding.clone())?;
        Ok(())
    }
}

fn write_record<W: Write>(out: &mut W, item: &MemoryItem) -> io::Result<()> {
    serde_json::to_writer(&mut *out, item).map_err(io::Error::other)?;
    out.write_all(b"\n")
}

fn rewrite_atomically(path: &Path, items: &[&MemoryItem]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for item in items {
            write_record(&mut out, item)?;
        }
        out.flush()?;
        out.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Parse archive lines into items, checking embedding dimensions.
pub fn parse_archive<R: BufRead>(reader: R, dim: usize) -> Result<Vec<MemoryItem>> {
    let mut items = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: MemoryItem = serde_json::from_str(&line).map_err(|e| {
            RepositoryError::MalformedArchive { line: n + 1, reason: e.to_string() }
        })?;
        if item.embedding.dim() != dim {
            return Err(RepositoryError::DimensionMismatch {
                expected: dim,
                actual: item.embedding.dim(),
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Replay the log, last record per id wins. A torn final line (crash during
/// append) is truncated away; corruption anywhere else is an error.
fn replay_log(path: &Path, dim: usize) -> Result<Vec<MemoryItem>> {
    let bytes = fs::read(path)?;
    let mut items: BTreeMap<String, (usize, MemoryItem)> = BTreeMap::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..].iter().position(|b| *b == b'\n');
        let Some(end) = end.map(|e| offset + e) else {
            log::warn!("truncating torn record at end of {}", path.display());
            OpenOptions::new().write(true).open(path)?.set_len(offset as u64)?;
            break;
        };
        let raw = &bytes[offset..end];
        offset = end + 1;
        if raw.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let item: MemoryItem = serde_json::from_slice(raw).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("corrupt log record at line {line_no}: {e}"),
            )
        })?;
        if item.embedding.dim() != dim {
            return Err(RepositoryError::DimensionMismatch {
                expected: dim,
                actual: item.embedding.dim(),
            });
        }
        let seq = items.len();
        let order = items.get(&item.id).map(|(s, _)| *s).unwrap_or(seq);
        items.insert(item.id.clone(), (order, item));
    }
    let mut ordered: Vec<(usize, MemoryItem)> = items.into_values().collect();
    ordered.sort_by_key(|(s, _)| *s);
    Ok(ordered.into_iter().map(|(_, i)| i).collect())
}
