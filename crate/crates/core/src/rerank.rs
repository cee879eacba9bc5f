//! Stage-II re-ranking over a Stage-I candidate pool.
//!
//! * [`greedy_scs`]: greedy cluster coverage, each step taking the candidate that
//!   covers the most still-uncovered sentence clusters.
//! * [`greedy_plus`]: the same loop scored by the summed [`cluster_score`] of the
//!   newly covered clusters plus `lambda * Sim(h, p)`.
//! * [`mmr`] and [`dkmips`]: the diversity baselines.
//!
//! Every method breaks ties by Stage-I rank (position in `candidates`), which is
//! unique, so ids never need comparing.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::embed::{cosine_similarity, inner_product, EmbeddingStore, PairScorer};
use crate::error::{Error, Result};
use crate::retrieval::{Method, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Fill slots left after the coverage loop stops, in relevance order.
    RelevanceFill,
    /// Return only what the coverage loop selected.
    StopShort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub k: usize,
    /// The coverage loop stops once at most this many clusters remain uncovered.
    pub coverage_threshold: usize,
    pub lambda: f64,
    pub mmr_lambda: f64,
    pub dkmips_lambda: f64,
    pub dkmips_mu: f64,
    pub fill_policy: FillPolicy,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            k: 10,
            coverage_threshold: 0,
            lambda: 0.5,
            mmr_lambda: 0.5,
            dkmips_lambda: 0.5,
            dkmips_mu: 0.5,
            fill_policy: FillPolicy::RelevanceFill,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be finite and >= 0 (got {})", self.lambda)));
        }
        if !unit(self.mmr_lambda) || !unit(self.dkmips_lambda) {
            return Err(Error::Config("mmr_lambda and dkmips_lambda must lie in [0, 1]".into()));
        }
        if self.dkmips_mu.is_nan() || self.dkmips_mu < 0.0 {
            return Err(Error::Config("dkmips_mu must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_k(self, k: usize) -> Self {
        RerankConfig { k, ..self }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        RerankConfig { lambda, ..self }
    }
}

/// One greedy selection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub paragraph_id: String,
    pub score: f64,
    pub new_clusters: Vec<usize>,
    pub uncovered_after: usize,
    /// Diversity term of Score+ (GreedyPlus only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
    /// `lambda * Sim(h, p)` (GreedyPlus only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    /// Selected by the fill policy rather than the coverage loop.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub filled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub steps: Vec<TraceStep>,
}

impl SelectionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.steps.iter().map(|s| serde_json::to_string(s).expect("trace steps serialize") + "\n").collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(self.to_jsonl().as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
    }
}

/// Candidates in Stage-I order with their cluster sets.
fn candidate_clusters(candidates: &RankedList, assignment: &ClusterAssignment) -> Vec<BTreeSet<usize>> {
    let by_paragraph = assignment.paragraph_clusters();
    candidates.items.iter().map(|(id, _)| by_paragraph.get(id.as_str()).cloned().unwrap_or_default()).collect()
}

fn all_clusters(assignment: &ClusterAssignment) -> BTreeSet<usize> {
    (0..assignment.num_clusters()).collect()
}

/// Index of the largest score among `open` candidates; ties go to the earliest.
fn argmax(open: &[bool], mut score: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for i in (0..open.len()).filter(|&i| open[i]) {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

/// Greedy cluster coverage.
///
/// Selects `argmax |U ∩ Clusters(p)|` while fewer than `k` paragraphs are chosen
/// and more than `coverage_threshold` clusters are uncovered. Under
/// [`FillPolicy::RelevanceFill`] the remaining slots take unselected candidates
/// in Stage-I order. Output order is selection order.
pub fn greedy_scs(
    candidates: &RankedList,
    assignment: &ClusterAssignment,
    config: &RerankConfig,
) -> (RankedList, SelectionTrace) {
    let clusters = candidate_clusters(candidates, assignment);
    let mut uncovered = all_clusters(assignment);
    let mut open = vec![true; clusters.len()];
    let mut items = Vec::new();
    let mut trace = SelectionTrace::default();

    let mut take = |i: usize,
                    score: f64,
                    filled: bool,
                    uncovered: &mut BTreeSet<usize>,
                    open: &mut [bool],
                    items: &mut Vec<(String, f64)>| {
        open[i] = false;
        let new: Vec<usize> = clusters[i].intersection(uncovered).copied().collect();
        for c in &new {
            uncovered.remove(c);
        }
        let id = candidates.items[i].0.clone();
        trace.steps.push(TraceStep {
            step: items.len() + 1,
            paragraph_id: id.clone(),
            score,
            new_clusters: new,
            uncovered_after: uncovered.len(),
            diversity: None,
            relevance: None,
            filled,
        });
        items.push((id, score));
    };

    while items.len() < config.k && uncovered.len() > config.coverage_threshold {
        let Some((i, score)) = argmax(&open, |i| clusters[i].intersection(&uncovered).count() as f64) else {
            break;
        };
        take(i, score, false, &mut uncovered, &mut open, &mut items);
    }
    if config.fill_policy == FillPolicy::RelevanceFill {
        for i in 0..clusters.len() {
            if items.len() >= config.k {
                break;
            }
            if open[i] {
                let score = clusters[i].intersection(&uncovered).count() as f64;
                take(i, score, true, &mut uncovered, &mut open, &mut items);
            }
        }
    }
    (RankedList::new(candidates.query_id.clone(), Method::GreedyScs, items), trace)
}

/// Mean headline similarity of every cluster, indexed by cluster id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScores(pub Vec<f64>);

impl ClusterScores {
    /// Computes `ClusterScore(c) = (1/|c|) Σ_{s ∈ c} Sim(h, paragraph(s))` for all
    /// clusters at once; a paragraph with `m` sentences in `c` counts `m` times.
    pub fn compute(assignment: &ClusterAssignment, scorer: &dyn PairScorer, headline_id: &str) -> Result<Self> {
        let n = assignment.num_clusters();
        let mut sums = vec![0.0; n];
        let mut counts = vec![0usize; n];
        let mut sim_cache: HashMap<&str, f64> = HashMap::new();
        for (s, label) in assignment.iter() {
            let Some(c) = label else { continue };
            let sim = match sim_cache.get(s.paragraph_id.as_str()) {
                Some(&v) => v,
                None => {
                    let v = scorer.score(headline_id, &s.paragraph_id)?;
                    sim_cache.insert(&s.paragraph_id, v);
                    v
                }
            };
            sums[c] += sim;
            counts[c] += 1;
        }
        Ok(ClusterScores(sums.into_iter().zip(counts).map(|(s, n)| s / n as f64).collect()))
    }

    pub fn get(&self, cluster: usize) -> Option<f64> {
        self.0.get(cluster).copied()
    }
}

/// ClusterScore of a single cluster.
pub fn cluster_score(
    cluster_id: usize,
    assignment: &ClusterAssignment,
    scorer: &dyn PairScorer,
    headline_id: &str,
) -> Result<f64> {
    if cluster_id >= assignment.num_clusters() {
        return Err(Error::UnknownCluster(cluster_id));
    }
    let members = assignment.members(cluster_id);
    let mut total = 0.0;
    for s in &members {
        total += scorer.score(headline_id, &s.paragraph_id)?;
    }
    Ok(total / members.len() as f64)
}

/// Which Score+ terms are active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Diversity term plus `lambda * Sim(h, p)`.
    Full { lambda: f64 },
    /// Diversity term only (the "w/o relevance term" ablation).
    DiversityOnly,
}

impl Objective {
    fn relevance(self, sim: f64) -> f64 {
        match self {
            Objective::Full { lambda } => lambda * sim,
            Objective::DiversityOnly => 0.0,
        }
    }
}

/// GreedyPlus over precomputed cluster scores and per-candidate `Sim(h, p)`
/// (`relevance[i]` belongs to `candidates.items[i]`).
///
/// Fill slots are ordered by the relevance term (what Score+ reduces to once every
/// cluster is covered), ties by Stage-I rank.
pub fn greedy_plus_scored(
    candidates: &RankedList,
    assignment: &ClusterAssignment,
    cluster_scores: &ClusterScores,
    relevance: &[f64],
    objective: Objective,
    config: &RerankConfig,
) -> (RankedList, SelectionTrace) {
    assert_eq!(relevance.len(), candidates.len(), "one relevance score per candidate");
    let clusters = candidate_clusters(candidates, assignment);
    let mut uncovered = all_clusters(assignment);
    let mut open = vec![true; clusters.len()];
    let mut items = Vec::new();
    let mut trace = SelectionTrace::default();

    let diversity = |i: usize, uncovered: &BTreeSet<usize>| -> f64 {
        clusters[i].intersection(uncovered).map(|&c| cluster_scores.0[c]).sum()
    };
    let mut take =
        |i: usize, filled: bool, uncovered: &mut BTreeSet<usize>, open: &mut [bool], items: &mut Vec<(String, f64)>| {
            open[i] = false;
            let div = diversity(i, uncovered);
            let rel = objective.relevance(relevance[i]);
            let new: Vec<usize> = clusters[i].intersection(uncovered).copied().collect();
            for c in &new {
                uncovered.remove(c);
            }
            let id = candidates.items[i].0.clone();
            trace.steps.push(TraceStep {
                step: items.len() + 1,
                paragraph_id: id.clone(),
                score: div + rel,
                new_clusters: new,
                uncovered_after: uncovered.len(),
                diversity: Some(div),
                relevance: Some(rel),
                filled,
            });
            items.push((id, div + rel));
        };

    while items.len() < config.k && uncovered.len() > config.coverage_threshold {
        let Some((i, _)) = argmax(&open, |i| diversity(i, &uncovered) + objective.relevance(relevance[i])) else {
            break;
        };
        take(i, false, &mut uncovered, &mut open, &mut items);
    }
    if config.fill_policy == FillPolicy::RelevanceFill {
        while items.len() < config.k {
            let Some((i, _)) = argmax(&open, |i| objective.relevance(relevance[i])) else {
                break;
            };
            take(i, true, &mut uncovered, &mut open, &mut items);
        }
    }
    let method = match objective {
        Objective::Full { .. } => Method::GreedyPlus,
        Objective::DiversityOnly => Method::AblationNoRel,
    };
    (RankedList::new(candidates.query_id.clone(), method, items), trace)
}

/// `Sim(h, p)` for every candidate, in candidate order. The headline id is the
/// candidate list's `query_id`.
pub fn candidate_relevance(candidates: &RankedList, scorer: &dyn PairScorer) -> Result<Vec<f64>> {
    candidates.items.iter().map(|(id, _)| scorer.score(&candidates.query_id, id)).collect()
}

/// GreedyPlus with Score+ = Σ ClusterScore(c) over newly covered clusters +
/// `config.lambda * Sim(h, p)`.
pub fn greedy_plus(
    candidates: &RankedList,
    assignment: &ClusterAssignment,
    scorer: &dyn PairScorer,
    config: &RerankConfig,
) -> Result<(RankedList, SelectionTrace)> {
    let scores = ClusterScores::compute(assignment, scorer, &candidates.query_id)?;
    let relevance = candidate_relevance(candidates, scorer)?;
    Ok(greedy_plus_scored(
        candidates,
        assignment,
        &scores,
        &relevance,
        Objective::Full { lambda: config.lambda },
        config,
    ))
}

/// The "w/o diversity term" ablation: candidates ranked by `Sim(h, p)` alone,
/// ties by Stage-I rank.
pub fn relevance_only(candidates: &RankedList, relevance: &[f64], k: usize) -> RankedList {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
    let items = order.into_iter().take(k).map(|i| (candidates.items[i].0.clone(), relevance[i])).collect();
    RankedList::new(candidates.query_id.clone(), Method::AblationNoDiv, items)
}

/// Maximal marginal relevance with cosine similarity:
/// `argmax λ·cos(p, h) − (1 − λ)·max_{s ∈ S} cos(p, s)`, redundancy 0 while `S` is empty.
pub fn mmr(
    candidates: &RankedList,
    headline_id: &str,
    headlines: &EmbeddingStore,
    paragraphs: &EmbeddingStore,
    mmr_lambda: f64,
    k: usize,
) -> Result<RankedList> {
    let query = headlines.require(headline_id)?;
    let vectors = candidates.items.iter().map(|(id, _)| paragraphs.require(id)).collect::<Result<Vec<_>>>()?;
    let relevance = vectors.iter().map(|v| cosine_similarity(v, query)).collect::<Result<Vec<_>>>()?;
    let mut redundancy: Vec<Option<f64>> = vec![None; vectors.len()];
    let mut open = vec![true; vectors.len()];
    let mut items = Vec::new();
    while items.len() < k {
        let Some((best, score)) =
            argmax(&open, |i| mmr_lambda * relevance[i] - (1.0 - mmr_lambda) * redundancy[i].unwrap_or(0.0))
        else {
            break;
        };
        open[best] = false;
        items.push((candidates.items[best].0.clone(), score));
        for i in (0..vectors.len()).filter(|&i| open[i]) {
            let sim = cosine_similarity(vectors[i], vectors[best])?;
            redundancy[i] = Some(redundancy[i].map_or(sim, |r| r.max(sim)));
        }
    }
    Ok(RankedList::new(headline_id, Method::Mmr, items))
}

/// Penalty weight `2μ(1 − λ) / (k(k − 1))`; zero when `k < 2`.
pub fn dkmips_penalty_weight(dk_lambda: f64, dk_mu: f64, k: usize) -> f64 {
    if k < 2 {
        0.0
    } else {
        2.0 * dk_mu * (1.0 - dk_lambda) / (k as f64 * (k as f64 - 1.0))
    }
}

/// Greedy maximization of
/// `f(S) = λ Σ_{p∈S} ⟨p, q⟩ − w Σ_{p≠p′ ∈ S} ⟨p, p′⟩` (ordered pairs) on raw
/// inner products, `w` from [`dkmips_penalty_weight`]. Each step adds the
/// candidate with the largest marginal gain `λ⟨p, q⟩ − 2w Σ_{p′∈S} ⟨p, p′⟩`,
/// which is recorded as its score.
pub fn dkmips(
    candidates: &RankedList,
    headline_id: &str,
    headlines: &EmbeddingStore,
    paragraphs: &EmbeddingStore,
    dk_lambda: f64,
    dk_mu: f64,
    k: usize,
) -> Result<RankedList> {
    let query = headlines.require(headline_id)?;
    let vectors = candidates.items.iter().map(|(id, _)| paragraphs.require(id)).collect::<Result<Vec<_>>>()?;
    let relevance = vectors.iter().map(|v| inner_product(v, query)).collect::<Result<Vec<_>>>()?;
    let weight = dkmips_penalty_weight(dk_lambda, dk_mu, k);
    let mut overlap = vec![0.0; vectors.len()];
    let mut open = vec![true; vectors.len()];
    let mut items = Vec::new();
    while items.len() < k {
        let Some((best, gain)) = argmax(&open, |i| dk_lambda * relevance[i] - 2.0 * weight * overlap[i]) else {
            break;
        };
        open[best] = false;
        items.push((candidates.items[best].0.clone(), gain));
        for i in (0..vectors.len()).filter(|&i| open[i]) {
            overlap[i] += inner_product(vectors[i], vectors[best])?;
        }
    }
    Ok(RankedList::new(headline_id, Method::Dkmips, items))
}
