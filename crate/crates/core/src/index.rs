//! Precomputed embeddings and exact top-N cosine retrieval.
//!
//! Embeddings live in two spaces: a text space (claims and sentences) and a
//! cross-modal space (claims and images). Retrieval scores every candidate of
//! one modality against the claim vector and keeps the N best with a bounded
//! heap. Ordering is score descending, then candidate id ascending.

use crate::corpus::{Corpus, Modality};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("embedding {id:?} ({space}): {message}")]
    InvalidVector { id: String, space: Space, message: String },
    #[error("duplicate embedding id {id:?} in {space} space")]
    DuplicateId { id: String, space: Space },
    #[error("no {space} embedding for {id:?}")]
    MissingEmbedding { id: String, space: Space },
    #[error("invalid retrieval config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Space {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "crossmodal")]
    CrossModal,
}

impl Space {
    pub fn for_modality(m: Modality) -> Space {
        match m {
            Modality::Text => Space::Text,
            Modality::Image => Space::CrossModal,
        }
    }
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Text => "text",
            Space::CrossModal => "crossmodal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub space: Space,
    pub vector: Vec<f32>,
}

fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

fn cosine_with_norms(u: &[f32], v: &[f32], nu: f64, nv: f64) -> f64 {
    let c = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    // fold -0.0 into 0.0 so equal scores compare equal under total ordering
    if c == 0.0 {
        0.0
    } else {
        c
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroNorm);
    }
    Ok(cosine_with_norms(u, v, nu, nv))
}

/// Vectors of one space, stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    norms: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingTable {
    fn push(&mut self, space: Space, id: String, vector: Vec<f32>) -> Result<(), IndexError> {
        let invalid = |message: String| IndexError::InvalidVector {
            id: id.clone(),
            space,
            message,
        };
        if vector.is_empty() {
            return Err(invalid("empty vector".into()));
        }
        if self.ids.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(invalid(format!("dimension {} differs from {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite entry".into()));
        }
        let n = norm(&vector);
        if n == 0.0 {
            return Err(invalid("zero norm".into()));
        }
        if self.lookup.contains_key(&id) {
            return Err(IndexError::DuplicateId { id, space });
        }
        self.lookup.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&vector);
        self.norms.push(n);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.lookup.get(id).map(|&i| self.row(i))
    }
}

/// All embeddings, keyed by space then id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    text: EmbeddingTable,
    crossmodal: EmbeddingTable,
}

impl EmbeddingStore {
    pub fn from_records<I: IntoIterator<Item = EmbeddingRecord>>(records: I) -> Result<Self, IndexError> {
        let mut store = EmbeddingStore::default();
        for r in records {
            store.insert(r)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, r: EmbeddingRecord) -> Result<(), IndexError> {
        let space = r.space;
        self.table_mut(space).push(space, r.id, r.vector)
    }

    pub fn table(&self, space: Space) -> &EmbeddingTable {
        match space {
            Space::Text => &self.text,
            Space::CrossModal => &self.crossmodal,
        }
    }

    fn table_mut(&mut self, space: Space) -> &mut EmbeddingTable {
        match space {
            Space::Text => &mut self.text,
            Space::CrossModal => &mut self.crossmodal,
        }
    }

    pub fn get(&self, space: Space, id: &str) -> Option<&[f32]> {
        self.table(space).get(id)
    }

    /// Writes the binary sidecar: `<base>.f32` holds little-endian rows,
    /// `<base>.json` the manifest naming the ids of each space in row order.
    pub fn write_sidecar(&self, base: &Path) -> std::io::Result<PathBuf> {
        let data_path = base.with_extension("f32");
        let manifest_path = base.with_extension("json");
        let mut data = BufWriter::new(File::create(&data_path)?);
        let mut tables = Vec::new();
        for space in [Space::Text, Space::CrossModal] {
            let t = self.table(space);
            if t.is_empty() {
                continue;
            }
            for x in &t.data {
                data.write_all(&x.to_le_bytes())?;
            }
            tables.push(SidecarTable {
                space,
                dim: t.dim,
                ids: t.ids.clone(),
            });
        }
        data.flush()?;
        let manifest = SidecarManifest {
            data: data_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            tables,
        };
        std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest_path)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarManifest {
    data: String,
    tables: Vec<SidecarTable>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarTable {
    space: Space,
    dim: usize,
    ids: Vec<String>,
}

/// Loads embeddings from a line-delimited file, or from a binary sidecar when
/// `path` is a `.json` manifest.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore, IndexError> {
    if path.extension().is_some_and(|e| e == "json") {
        load_sidecar(path)
    } else {
        load_jsonl(path)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IndexError + '_ {
    move |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_jsonl(path: &Path) -> Result<EmbeddingStore, IndexError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut store = EmbeddingStore::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| IndexError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        store.insert(rec)?;
    }
    Ok(store)
}

fn load_sidecar(path: &Path) -> Result<EmbeddingStore, IndexError> {
    let manifest: SidecarManifest = serde_json::from_slice(&std::fs::read(path).map_err(io_err(path))?)
        .map_err(|e| IndexError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
    let data_path = path.with_file_name(&manifest.data);
    let mut bytes = Vec::new();
    File::open(&data_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(&data_path))?;
    let expected: usize = manifest.tables.iter().map(|t| t.dim * t.ids.len() * 4).sum();
    if bytes.len() != expected {
        return Err(IndexError::Parse {
            path: data_path,
            line: 0,
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut store = EmbeddingStore::default();
    for t in manifest.tables {
        for id in t.ids {
            let vector: Vec<f32> = floats.by_ref().take(t.dim).collect();
            store.insert(EmbeddingRecord {
                id,
                space: t.space,
                vector,
            })?;
        }
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub candidate_id: String,
    pub modality: Modality,
    pub initial_score: f64,
    pub initial_rank: usize,
}

/// Pool size and cut-offs for retrieval and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    #[serde(rename = "n")]
    pub pool_size: usize,
    pub k_values: Vec<usize>,
    pub k_evidence: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_size: 100,
            k_values: vec![1, 2, 5, 10],
            k_evidence: 5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.pool_size == 0 {
            return Err(IndexError::Config("N must be positive".into()));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(IndexError::Config("K values must be non-empty and positive".into()));
        }
        let max_k = self.k_values.iter().copied().max().unwrap_or(0);
        if max_k > self.pool_size {
            return Err(IndexError::Config(format!("K exceeds N ({max_k} > {})", self.pool_size)));
        }
        if self.k_evidence == 0 || self.k_evidence > self.pool_size {
            return Err(IndexError::Config(format!(
                "K_evidence must be in 1..=N, got {}",
                self.k_evidence
            )));
        }
        Ok(())
    }
}

struct Scored<'a> {
    score: f64,
    id: &'a str,
}

// Greater means worse, so a max-heap keeps the current worst on top.
impl Ord for Scored<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Scored<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scored<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored<'_> {}

/// Candidate rows for one modality, resolved against the corpus.
#[derive(Debug, Clone, Default)]
struct CandidateSet {
    rows: Vec<usize>,
}

/// Immutable retrieval index over a corpus and its embeddings.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    store: EmbeddingStore,
    sentences: CandidateSet,
    images: CandidateSet,
}

impl VectorIndex {
    /// Every corpus sentence needs a text embedding and every image a
    /// cross-modal embedding.
    pub fn build(corpus: &Corpus, store: EmbeddingStore) -> Result<Self, IndexError> {
        let resolve = |space: Space, ids: Vec<&str>| -> Result<CandidateSet, IndexError> {
            let table = store.table(space);
            let rows = ids
                .into_iter()
                .map(|id| {
                    table.lookup.get(id).copied().ok_or_else(|| IndexError::MissingEmbedding {
                        id: id.to_string(),
                        space,
                    })
                })
                .collect::<Result<_, _>>()?;
            Ok(CandidateSet { rows })
        };
        let sentences = resolve(Space::Text, corpus.sentences().map(|s| s.sent_id.as_str()).collect())?;
        let images = resolve(Space::CrossModal, corpus.images().map(|i| i.image_id.as_str()).collect())?;
        Ok(VectorIndex {
            store,
            sentences,
            images,
        })
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }

    pub fn candidate_count(&self, modality: Modality) -> usize {
        self.candidates(modality).rows.len()
    }

    fn candidates(&self, modality: Modality) -> &CandidateSet {
        match modality {
            Modality::Text => &self.sentences,
            Modality::Image => &self.images,
        }
    }

    /// Cosine between a claim and any embedded item of the modality's space.
    pub fn score(&self, claim_id: &str, item_id: &str, modality: Modality) -> Option<f64> {
        let table = self.store.table(Space::for_modality(modality));
        let q = *table.lookup.get(claim_id)?;
        let r = *table.lookup.get(item_id)?;
        Some(cosine_with_norms(table.row(q), table.row(r), table.norms[q], table.norms[r]))
    }

    /// Top-`n` candidates of one modality for a claim.
    pub fn retrieve(&self, claim_id: &str, modality: Modality, n: usize) -> Result<Vec<RankedCandidate>, IndexError> {
        let cands = self.candidates(modality);
        if cands.rows.is_empty() || n == 0 {
            return Ok(Vec::new());
        }
        let space = Space::for_modality(modality);
        let table = self.store.table(space);
        let q = *table.lookup.get(claim_id).ok_or_else(|| IndexError::MissingEmbedding {
            id: claim_id.to_string(),
            space,
        })?;
        let (qv, qn) = (table.row(q), table.norms[q]);

        let mut heap = BinaryHeap::with_capacity(n + 1);
        for &r in &cands.rows {
            let item = Scored {
                score: cosine_with_norms(qv, table.row(r), qn, table.norms[r]),
                id: &table.ids[r],
            };
            if heap.len() < n {
                heap.push(item);
            } else if let Some(worst) = heap.peek() {
                if item < *worst {
                    heap.pop();
                    heap.push(item);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, s)| RankedCandidate {
                candidate_id: s.id.to_string(),
                modality,
                initial_score: s.score,
                initial_rank: i + 1,
            })
            .collect())
    }

    pub fn retrieve_text(&self, claim_id: &str, config: &RetrievalConfig) -> Result<Vec<RankedCandidate>, IndexError> {
        self.retrieve(claim_id, Modality::Text, config.pool_size)
    }

    pub fn retrieve_image(&self, claim_id: &str, config: &RetrievalConfig) -> Result<Vec<RankedCandidate>, IndexError> {
        self.retrieve(claim_id, Modality::Image, config.pool_size)
    }
}
