//! OPTICS ordering of sentence embeddings under cosine distance, and the
//! DBSCAN-equivalent horizontal cut that turns an ordering into clusters.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SentenceRef};
use crate::embed::{EmbeddingStore, Vector};
use crate::error::{Error, Result};

/// Distances this close to zero are snapped to exactly zero, so identical
/// vectors are at distance 0 despite rounding in the normalization.
const ZERO_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticsParams {
    pub min_pts: usize,
    /// Neighbourhood radius for the ordering; `f64::INFINITY` means unbounded.
    pub max_eps: f64,
    /// Cut height used by [`extract_clusters`].
    pub extraction_eps: f64,
}

impl Default for OpticsParams {
    fn default() -> Self {
        OpticsParams { min_pts: 2, max_eps: f64::INFINITY, extraction_eps: 0.35 }
    }
}

impl OpticsParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_pts < 2 {
            return Err(Error::Config(format!("min_pts must be >= 2 (got {})", self.min_pts)));
        }
        if self.extraction_eps.is_nan() || self.extraction_eps <= 0.0 || self.extraction_eps > self.max_eps {
            return Err(Error::Config(format!(
                "extraction_eps must be in (0, max_eps] (got {} with max_eps {})",
                self.extraction_eps, self.max_eps
            )));
        }
        Ok(())
    }
}

/// Dense symmetric matrix of cosine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine<V: AsRef<[f32]>>(points: &[V]) -> Result<Self> {
        let unit: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                let p = p.as_ref();
                let norm = p.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::ZeroVector);
                }
                Ok(p.iter().map(|&x| f64::from(x) / norm).collect())
            })
            .collect::<Result<_>>()?;
        if let Some(first) = unit.first() {
            if let Some(bad) = unit.iter().find(|u| u.len() != first.len()) {
                return Err(Error::DimensionMismatch { expected: first.len(), found: bad.len(), id: None });
            }
        }
        let n = unit.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                let mut d = (1.0 - cos).clamp(0.0, 2.0);
                if d < ZERO_SNAP {
                    d = 0.0;
                }
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// OPTICS output. `reachability` and `core_dist` are indexed by point, not by
/// position in `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityOrdering {
    pub order: Vec<usize>,
    pub reachability: Vec<Option<f64>>,
    pub core_dist: Vec<Option<f64>>,
    pub min_pts: usize,
    distances: DistanceMatrix,
}

impl ReachabilityOrdering {
    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Reachability values in visiting order (the reachability plot).
    pub fn plot(&self) -> Vec<Option<f64>> {
        self.order.iter().map(|&p| self.reachability[p]).collect()
    }
}

/// Distance from `p` to its `min_pts`-th nearest point, counting `p` itself.
fn core_distance(row: &[f64], min_pts: usize, max_eps: f64, scratch: &mut Vec<f64>) -> Option<f64> {
    if row.len() < min_pts {
        return None;
    }
    scratch.clear();
    scratch.extend_from_slice(row);
    let (_, kth, _) = scratch.select_nth_unstable_by(min_pts - 1, f64::total_cmp);
    (*kth <= max_eps).then_some(*kth)
}

/// Computes the OPTICS reachability ordering of `points` under cosine distance.
///
/// Seeds are expanded in ascending reachability, ties by ascending point index;
/// a new component starts from the lowest-index unprocessed point.
pub fn optics_order<V: AsRef<[f32]>>(points: &[V], params: &OpticsParams) -> Result<ReachabilityOrdering> {
    let distances = DistanceMatrix::cosine(points)?;
    Ok(optics_order_with(distances, params))
}

pub fn optics_order_with(distances: DistanceMatrix, params: &OpticsParams) -> ReachabilityOrdering {
    let n = distances.len();
    let mut scratch = Vec::with_capacity(n);
    let core_dist: Vec<Option<f64>> =
        (0..n).map(|p| core_distance(distances.row(p), params.min_pts, params.max_eps, &mut scratch)).collect();

    let mut reach: Vec<Option<f64>> = vec![None; n];
    let mut processed = vec![false; n];
    let mut in_seeds = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let expand = |p: usize, reach: &mut [Option<f64>], in_seeds: &mut [bool], processed: &[bool]| {
        let Some(core) = core_dist[p] else { return };
        for (o, &d) in distances.row(p).iter().enumerate() {
            if processed[o] || d > params.max_eps {
                continue;
            }
            let candidate = core.max(d);
            if reach[o].is_none_or(|r| candidate < r) {
                reach[o] = Some(candidate);
                in_seeds[o] = true;
            }
        }
    };

    for start in 0..n {
        if processed[start] {
            continue;
        }
        processed[start] = true;
        order.push(start);
        expand(start, &mut reach, &mut in_seeds, &processed);
        loop {
            let mut best: Option<(f64, usize)> = None;
            for (o, &seed) in in_seeds.iter().enumerate() {
                if !seed {
                    continue;
                }
                let r = reach[o].expect("seeds have a reachability");
                if best.is_none_or(|(br, _)| r < br) {
                    best = Some((r, o));
                }
            }
            let Some((_, q)) = best else { break };
            in_seeds[q] = false;
            processed[q] = true;
            order.push(q);
            expand(q, &mut reach, &mut in_seeds, &processed);
        }
    }

    ReachabilityOrdering { order, reachability: reach, core_dist, min_pts: params.min_pts, distances }
}

/// Point-level cluster labels (`None` = noise); ids are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub labels: Vec<Option<usize>>,
    pub num_clusters: usize,
}

impl Labels {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Horizontal cut of the reachability plot at `eps`.
///
/// Walking the ordering, a point whose reachability exceeds `eps` starts a new
/// cluster if it is a core point at `eps`, and is noise otherwise; every other
/// point joins the current cluster. A noise point lying within `eps` of a core
/// point is then attached to the nearest such core point's cluster (ties to the
/// lower index), which gives exactly the DBSCAN(eps, min_pts) core partition with
/// every border point in an adjacent cluster.
pub fn extract_clusters(ordering: &ReachabilityOrdering, eps: f64) -> Labels {
    let n = ordering.order.len();
    let is_core = |p: usize| ordering.core_dist[p].is_some_and(|c| c <= eps);
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut current: Option<usize> = None;
    let mut next_id = 0;
    for &p in &ordering.order {
        let reachable = ordering.reachability[p].is_some_and(|r| r <= eps);
        if reachable && current.is_some() {
            labels[p] = current;
        } else if is_core(p) {
            current = Some(next_id);
            labels[p] = current;
            next_id += 1;
        }
    }
    let dist = &ordering.distances;
    let attachments: Vec<(usize, usize)> = (0..n)
        .filter(|&p| labels[p].is_none())
        .filter_map(|p| {
            (0..n)
                .filter(|&c| c != p && is_core(c) && dist.get(p, c) <= eps)
                .min_by(|&a, &b| dist.get(p, a).total_cmp(&dist.get(p, b)).then(a.cmp(&b)))
                .and_then(|c| labels[c].map(|l| (p, l)))
        })
        .collect();
    for (p, l) in attachments {
        labels[p] = Some(l);
    }
    Labels { labels, num_clusters: next_id }
}

/// Runs ordering and extraction in one call.
pub fn optics_cluster<V: AsRef<[f32]>>(points: &[V], params: &OpticsParams) -> Result<Labels> {
    params.validate()?;
    let ordering = optics_order(points, params)?;
    Ok(extract_clusters(&ordering, params.extraction_eps))
}

/// Sentence → cluster map; `None` marks noise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    sentences: Vec<SentenceRef>,
    labels: Vec<Option<usize>>,
    num_clusters: usize,
    index: HashMap<SentenceRef, usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRecord {
    paragraph_id: String,
    sentence_index: usize,
    cluster: i64,
}

impl ClusterAssignment {
    /// Builds an assignment; cluster ids must be exactly `0..num_clusters` with no gaps.
    pub fn new(sentences: Vec<SentenceRef>, labels: Vec<Option<usize>>) -> Result<Self> {
        if sentences.len() != labels.len() {
            return Err(Error::InvalidRecord(format!("{} sentences but {} labels", sentences.len(), labels.len())));
        }
        let used: BTreeSet<usize> = labels.iter().flatten().copied().collect();
        let num_clusters = used.len();
        if used.iter().copied().ne(0..num_clusters) {
            return Err(Error::InvalidRecord("cluster ids are not contiguous from 0".into()));
        }
        let mut index = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "sentence", id: s.to_string() });
            }
        }
        Ok(ClusterAssignment { sentences, labels, num_clusters, index })
    }

    /// Builds an assignment from explicit clusters; sentences listed in `noise`
    /// get no cluster. Cluster `i` of the input becomes id `i`.
    pub fn from_clusters(clusters: &[Vec<SentenceRef>], noise: &[SentenceRef]) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        for (id, members) in clusters.iter().enumerate() {
            for s in members {
                sentences.push(s.clone());
                labels.push(Some(id));
            }
        }
        for s in noise {
            sentences.push(s.clone());
            labels.push(None);
        }
        ClusterAssignment::new(sentences, labels)
    }

    pub fn empty() -> Self {
        ClusterAssignment::new(Vec::new(), Vec::new()).expect("empty assignment is valid")
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// `None` if the sentence is not part of the assignment; `Some(None)` if noise.
    pub fn label(&self, sentence: &SentenceRef) -> Option<Option<usize>> {
        self.index.get(sentence).map(|&i| self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SentenceRef, Option<usize>)> {
        self.sentences.iter().zip(self.labels.iter().copied())
    }

    /// Member sentences of `cluster`, in assignment order.
    pub fn members(&self, cluster: usize) -> Vec<&SentenceRef> {
        self.iter().filter(|(_, l)| *l == Some(cluster)).map(|(s, _)| s).collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }

    /// Clusters of every paragraph that has at least one sentence in the assignment.
    pub fn paragraph_clusters(&self) -> HashMap<&str, BTreeSet<usize>> {
        let mut out: HashMap<&str, BTreeSet<usize>> = HashMap::new();
        for (s, l) in self.iter() {
            let entry = out.entry(s.paragraph_id.as_str()).or_default();
            if let Some(l) = l {
                entry.insert(l);
            }
        }
        out
    }

    /// Turns every noise sentence into its own singleton cluster, numbered after the
    /// existing clusters in assignment order.
    pub fn promote_noise(&self) -> Self {
        let mut next = self.num_clusters;
        let labels = self
            .labels
            .iter()
            .map(|l| {
                l.or_else(|| {
                    next += 1;
                    Some(next - 1)
                })
            })
            .collect();
        ClusterAssignment::new(self.sentences.clone(), labels).expect("promotion keeps ids contiguous")
    }

    /// Keeps only sentences accepted by `keep`, renumbering clusters contiguously
    /// in order of first appearance.
    pub fn restrict(&self, mut keep: impl FnMut(&SentenceRef) -> bool) -> Self {
        let mut renumber: HashMap<usize, usize> = HashMap::new();
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        for (s, l) in self.iter() {
            if !keep(s) {
                continue;
            }
            sentences.push(s.clone());
            labels.push(l.map(|l| {
                let next = renumber.len();
                *renumber.entry(l).or_insert(next)
            }));
        }
        ClusterAssignment::new(sentences, labels).expect("renumbering keeps ids contiguous")
    }

    /// JSON-lines dump, one `{"paragraph_id","sentence_index","cluster"}` per
    /// sentence; noise is `-1`.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (s, l) in self.iter() {
            let record = AssignmentRecord {
                paragraph_id: s.paragraph_id.clone(),
                sentence_index: s.index,
                cluster: l.map_or(-1, |l| l as i64),
            };
            let line = serde_json::to_string(&record).expect("assignment records serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: AssignmentRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, n + 1, e))?;
            sentences.push(SentenceRef::new(r.paragraph_id, r.sentence_index));
            labels.push(match r.cluster {
                -1 => None,
                c if c >= 0 => Some(c as usize),
                c => return Err(Error::parse(path, n + 1, format!("invalid cluster {c}"))),
            });
        }
        ClusterAssignment::new(sentences, labels)
    }
}

/// Clusters every sentence of the listed paragraphs (in list order, then sentence
/// order) with OPTICS and the eps cut.
pub fn cluster_sentences<S: AsRef<str>>(
    paragraph_ids: &[S],
    corpus: &Corpus,
    sentence_store: &EmbeddingStore,
    params: &OpticsParams,
) -> Result<ClusterAssignment> {
    params.validate()?;
    let mut sentences = Vec::new();
    let mut vectors: Vec<&Vector> = Vec::new();
    for pid in paragraph_ids {
        for s in corpus.sentence_refs(pid.as_ref())? {
            vectors.push(sentence_store.require(&s.embedding_key())?);
            sentences.push(s);
        }
    }
    if sentences.is_empty() {
        return Ok(ClusterAssignment::empty());
    }
    let labels = optics_cluster(&vectors, params)?;
    ClusterAssignment::new(sentences, labels.labels)
}

/// Non-noise clusters of a paragraph's sentences.
pub fn clusters_of(paragraph_id: &str, assignment: &ClusterAssignment, corpus: &Corpus) -> BTreeSet<usize> {
    let Some(p) = corpus.paragraph(paragraph_id) else {
        return BTreeSet::new();
    };
    (0..p.sentences.len()).filter_map(|i| assignment.label(&SentenceRef::new(paragraph_id, i)).flatten()).collect()
}
