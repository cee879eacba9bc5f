//! Dense vector storage, similarity kernels and pair scorers.
//!
//! Two on-disk formats are accepted by [`load_embeddings`], detected by the first
//! four bytes:
//!
//! * JSON-lines, one `{"id": "...", "values": [f32, ...]}` object per line.
//! * Binary: magic `NSCV`, `u32` dim, `u64` count, then per record a `u16` id
//!   length, the UTF-8 id bytes and `dim` `f32` values. All integers and floats are
//!   little-endian.
//!
//! Vectors are kept exactly as loaded; cosine normalizes at use so that raw inner
//! products stay available for DkMIPS.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{Method, RankedList};

pub const BINARY_MAGIC: &[u8; 4] = b"NSCV";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Headline,
    Paragraph,
    Sentence,
}

/// Finite dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidRecord("vector has zero dimensions".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord("vector has a non-finite entry".into()));
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

impl AsRef<[f32]> for Vector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Inner product accumulated in `f64`.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn inner_product(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(dot(&a.0, &b.0))
}

fn check_dims(a: &Vector, b: &Vector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim(), id: None });
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine distance `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &Vector, b: &Vector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Id → vector map with a single dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    kind: EmbeddingKind,
    dim: usize,
    entries: HashMap<String, Vector>,
}

impl EmbeddingStore {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Self {
        EmbeddingStore { kind, dim, entries: HashMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vector) -> Result<()> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: vector.dim(), id: Some(id) });
        }
        if self.entries.contains_key(&id) {
            return Err(Error::DuplicateId { kind: "embedding", id });
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.entries.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&Vector> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Ids in ascending order.
    pub fn sorted_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    /// Returns a copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        let mut out = EmbeddingStore::new(self.kind, self.dim);
        for (id, v) in &self.entries {
            out.insert(id.clone(), Vector::new(v.0.iter().map(|x| x * factor).collect())?)?;
        }
        Ok(out)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(BINARY_MAGIC).map_err(io)?;
        out.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for id in self.sorted_ids() {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::InvalidRecord(format!("id longer than 65535 bytes: {id}")))?;
            out.write_all(&len.to_le_bytes()).map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            for v in self.entries[id].values() {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for id in self.sorted_ids() {
            let record = VectorRecord { id: id.to_string(), values: self.entries[id].0.clone() };
            let line = serde_json::to_string(&record).expect("vector records serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorRecord {
    id: String,
    values: Vec<f32>,
}

/// Loads a JSON-lines or binary embedding file (format detected from the magic bytes).
pub fn load_embeddings(path: impl AsRef<Path>, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    let n = read_up_to(&mut file, &mut magic).map_err(|e| Error::io(path, e))?;
    drop(file);
    if n == 4 && &magic == BINARY_MAGIC {
        load_binary(path, kind)
    } else {
        load_jsonl(path, kind)
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}

fn load_jsonl(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut store: Option<EmbeddingStore> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VectorRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e))?;
        let vector = Vector::new(record.values).map_err(|e| Error::parse(path, lineno, e))?;
        let store = store.get_or_insert_with(|| EmbeddingStore::new(kind, vector.dim()));
        store.insert(record.id, vector).map_err(|e| Error::parse(path, lineno, e))?;
    }
    store.ok_or_else(|| Error::parse(path, 0, "embedding file contains no records"))
}

fn load_binary(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header = |msg: &str| Error::parse(path, 0, format!("malformed header: {msg}"));
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| header("truncated"))?;
    let dim = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(head[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(header("dim is zero"));
    }
    let mut store = EmbeddingStore::new(kind, dim);
    let mut buf = vec![0u8; dim * 4];
    for record in 0..count {
        let truncated = |_| Error::parse(path, record as usize + 1, "truncated record");
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(truncated)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id).map_err(|_| Error::parse(path, record as usize + 1, "id is not UTF-8"))?;
        r.read_exact(&mut buf).map_err(truncated)?;
        let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let vector = Vector::new(values).map_err(|e| Error::parse(path, record as usize + 1, e))?;
        store.insert(id, vector).map_err(|e| Error::parse(path, record as usize + 1, e))?;
    }
    let mut rest = [0u8; 1];
    if read_up_to(&mut r, &mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(header("trailing bytes after declared record count"));
    }
    Ok(store)
}

/// Orders scored ids by descending score, then ascending id.
pub(crate) fn score_desc_then_id(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Exact top-k of `candidate_ids` by cosine similarity to `query`.
///
/// Ties are broken by ascending id. The returned list has `method = Dense`
/// and an empty `query_id`; callers set it.
pub fn top_k_by_cosine<S: AsRef<str>>(
    query: &Vector,
    candidate_ids: &[S],
    store: &EmbeddingStore,
    k: usize,
) -> Result<RankedList> {
    let mut scored = candidate_ids
        .iter()
        .map(|id| {
            let id = id.as_ref();
            Ok((id.to_string(), cosine_similarity(query, store.require(id)?)?))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(score_desc_then_id);
    scored.truncate(k);
    Ok(RankedList::new("", Method::Dense, scored))
}

/// Precomputed cross-encoder scores keyed by (headline id, paragraph id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScoreTable {
    entries: BTreeMap<(String, String), f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairScoreRecord {
    headline_id: String,
    paragraph_id: String,
    score: serde_json::Value,
}

impl PairScoreTable {
    pub fn insert(
        &mut self,
        headline_id: impl Into<String>,
        paragraph_id: impl Into<String>,
        score: f64,
    ) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidRecord("pair score is not finite".into()));
        }
        self.entries.insert((headline_id.into(), paragraph_id.into()), score);
        Ok(())
    }

    pub fn get(&self, headline_id: &str, paragraph_id: &str) -> Option<f64> {
        self.entries.get(&(headline_id.to_string(), paragraph_id.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for ((h, p), s) in &self.entries {
            let line = serde_json::json!({"headline_id": h, "paragraph_id": p, "score": s});
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads pair scores from JSON-lines. A later line for the same pair overwrites
/// the earlier one.
pub fn load_pair_scores(path: impl AsRef<Path>) -> Result<PairScoreTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = PairScoreTable::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairScoreRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e))?;
        // Only JSON numbers are accepted; "NaN" / "inf" strings are rejected here.
        let score = record.score.as_f64().ok_or_else(|| Error::parse(path, lineno, "score must be a finite number"))?;
        table.insert(record.headline_id, record.paragraph_id, score).map_err(|e| Error::parse(path, lineno, e))?;
    }
    Ok(table)
}

/// Source of Sim(headline, paragraph).
pub trait PairScorer: Sync {
    fn score(&self, headline_id: &str, paragraph_id: &str) -> Result<f64>;
}

/// Cosine similarity between a headline vector and a paragraph vector.
#[derive(Debug, Clone, Copy)]
pub struct CosineScorer<'a> {
    pub headlines: &'a EmbeddingStore,
    pub paragraphs: &'a EmbeddingStore,
}

impl PairScorer for CosineScorer<'_> {
    fn score(&self, headline_id: &str, paragraph_id: &str) -> Result<f64> {
        cosine_similarity(self.headlines.require(headline_id)?, self.paragraphs.require(paragraph_id)?)
    }
}

impl PairScorer for PairScoreTable {
    fn score(&self, headline_id: &str, paragraph_id: &str) -> Result<f64> {
        self.get(headline_id, paragraph_id).ok_or_else(|| Error::MissingPairScore {
            headline_id: headline_id.to_string(),
            paragraph_id: paragraph_id.to_string(),
        })
    }
}

impl<T: PairScorer + ?Sized> PairScorer for &T {
    fn score(&self, headline_id: &str, paragraph_id: &str) -> Result<f64> {
        (**self).score(headline_id, paragraph_id)
    }
}
