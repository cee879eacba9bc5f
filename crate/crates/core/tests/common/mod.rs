//! Independent reference implementations and random instance generators shared by
//! the integration and acceptance tests. Nothing here calls the code under test
//! except to build inputs.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use newscope::clustering::{ClusterAssignment, DistanceMatrix};
use newscope::corpus::{Corpus, EventRecord, ParagraphRecord, SentenceRef};
use newscope::embed::{EmbeddingKind, EmbeddingStore, PairScoreTable, Vector};
use newscope::retrieval::{Method, RankedList};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

pub fn store(kind: EmbeddingKind, dim: usize, items: &[(String, Vec<f32>)]) -> EmbeddingStore {
    let mut s = EmbeddingStore::new(kind, dim);
    for (id, v) in items {
        s.insert(id.clone(), Vector::new(v.clone()).unwrap()).unwrap();
    }
    s
}

// ---------------------------------------------------------------- vectors

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

pub fn ip(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Full sort by cosine, descending, ties by ascending id.
pub fn brute_top_k(query: &[f32], docs: &[(String, Vec<f32>)], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = docs.iter().map(|(id, v)| (id.clone(), cos(query, v))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

// ---------------------------------------------------------------- BM25

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Direct evaluation of the Okapi formula with `ln((N - n + 0.5)/(n + 0.5))`.
pub fn bm25_oracle(docs: &[(String, String)], query: &str, doc_id: &str, k1: f64, b: f64) -> f64 {
    let tokenized: Vec<(String, Vec<String>)> = docs.iter().map(|(id, t)| (id.clone(), words(t))).collect();
    let n = tokenized.len() as f64;
    let avgdl = tokenized.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let doc = &tokenized.iter().find(|(id, _)| id == doc_id).unwrap().1;
    let mut score = 0.0;
    for term in words(query) {
        let n_t = tokenized.iter().filter(|(_, t)| t.contains(&term)).count() as f64;
        if n_t == 0.0 {
            continue;
        }
        let f = doc.iter().filter(|w| **w == term).count() as f64;
        let idf = ((n - n_t + 0.5) / (n_t + 0.5)).ln();
        score += idf * (k1 + 1.0) * f / (k1 * (1.0 - b + b * doc.len() as f64 / avgdl) + f);
    }
    score
}

pub fn random_docs(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=20);
            let text: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect();
            (format!("doc{i:03}"), text.join(" "))
        })
        .collect()
}

// ---------------------------------------------------------------- DBSCAN

/// Brute-force DBSCAN on a precomputed distance matrix. Returns the core flags
/// and a component label for every core point (`None` for non-core points).
pub fn dbscan_core(d: &DistanceMatrix, eps: f64, min_pts: usize) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = d.len();
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| d.get(i, j) <= eps).count() >= min_pts).collect();
    let mut label = vec![None; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || label[s].is_some() {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        label[s] = Some(next);
        while let Some(p) = queue.pop_front() {
            for q in 0..n {
                if core[q] && label[q].is_none() && d.get(p, q) <= eps {
                    label[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (core, label)
}

/// Violations of: core partition equals DBSCAN's; border points sit in the
/// cluster of a core point within eps; everything else is noise.
pub fn dbscan_violations(d: &DistanceMatrix, eps: f64, min_pts: usize, got: &[Option<usize>]) -> Vec<String> {
    let (core, oracle) = dbscan_core(d, eps, min_pts);
    let n = d.len();
    let mut errors = Vec::new();
    let mut forward: HashMap<usize, usize> = HashMap::new();
    let mut backward: HashMap<usize, usize> = HashMap::new();
    for p in 0..n {
        if core[p] {
            let (o, Some(g)) = (oracle[p].unwrap(), got[p]) else {
                errors.push(format!("core point {p} labelled noise"));
                continue;
            };
            if *forward.entry(o).or_insert(g) != g || *backward.entry(g).or_insert(o) != o {
                errors.push(format!("core point {p}: partition mismatch"));
            }
        } else {
            let adjacent: BTreeSet<usize> =
                (0..n).filter(|&c| core[c] && d.get(p, c) <= eps).filter_map(|c| got[c]).collect();
            match got[p] {
                None if !adjacent.is_empty() => errors.push(format!("border point {p} left as noise")),
                Some(l) if !adjacent.contains(&l) => errors.push(format!("point {p} in non-adjacent cluster {l}")),
                _ => {}
            }
        }
    }
    errors
}

/// Blobs of directions around a few random centres.
pub fn random_point_set(rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let n = rng.random_range(2..=60);
    let dim = rng.random_range(2..=8);
    let centres: Vec<Vec<f32>> = (0..rng.random_range(1..=5)).map(|_| random_vec(rng, dim)).collect();
    let spread = rng.random_range(0.05f32..0.8);
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            loop {
                let v: Vec<f32> = c.iter().map(|&x| x + spread * rng.random_range(-1.0f32..1.0)).collect();
                if v.iter().any(|&x| x != 0.0) {
                    return v;
                }
            }
        })
        .collect()
}

// ---------------------------------------------------------------- greedy

/// A random re-ranking instance: candidates in Stage-I order, their cluster
/// memberships and pair scores against headline `h`.
pub struct GreedyInstance {
    pub pool: RankedList,
    pub assignment: ClusterAssignment,
    /// Clusters per candidate, Stage-I order.
    pub clusters: Vec<BTreeSet<usize>>,
    /// Candidate index of every member sentence, per cluster.
    pub members: Vec<Vec<usize>>,
    pub sims: Vec<f64>,
    pub table: PairScoreTable,
}

pub const HEADLINE: &str = "h";

/// `dyadic` draws pair scores from {0, 1/16, ..., 1} so exact ties occur.
pub fn greedy_instance(
    rng: &mut ChaCha8Rng,
    max_candidates: usize,
    max_clusters: usize,
    dyadic: bool,
) -> GreedyInstance {
    let n = rng.random_range(1..=max_candidates);
    let m = rng.random_range(1..=max_clusters);
    let mut names: Vec<usize> = (0..100).collect();
    names.shuffle(rng);
    let ids: Vec<String> = names[..n].iter().map(|x| format!("d{x:02}")).collect();

    let mut memberships: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..m {
        for cand in memberships.iter_mut() {
            if rng.random_bool(0.3) {
                for _ in 0..rng.random_range(1..=2) {
                    cand.push(c);
                }
            }
        }
        if !memberships.iter().any(|cs| cs.contains(&c)) {
            let i = rng.random_range(0..n);
            memberships[i].push(c);
        }
    }
    let mut cluster_refs: Vec<Vec<SentenceRef>> = vec![Vec::new(); m];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut noise = Vec::new();
    for (i, cs) in memberships.iter().enumerate() {
        let mut next = 0;
        for &c in cs {
            cluster_refs[c].push(SentenceRef::new(ids[i].clone(), next));
            members[c].push(i);
            next += 1;
        }
        if rng.random_bool(0.3) {
            noise.push(SentenceRef::new(ids[i].clone(), next));
        }
    }
    let assignment = ClusterAssignment::from_clusters(&cluster_refs, &noise).unwrap();
    let sims: Vec<f64> = (0..n)
        .map(|_| if dyadic { f64::from(rng.random_range(0..=16u8)) / 16.0 } else { rng.random::<f64>() })
        .collect();
    let mut table = PairScoreTable::default();
    for (id, &s) in ids.iter().zip(&sims) {
        table.insert(HEADLINE, id.clone(), s).unwrap();
    }
    let pool = RankedList::new(
        HEADLINE,
        Method::Dense,
        ids.iter().enumerate().map(|(i, id)| (id.clone(), 1.0 - i as f64 / 100.0)).collect(),
    );
    let clusters = memberships.into_iter().map(|cs| cs.into_iter().collect()).collect();
    GreedyInstance { pool, assignment, clusters, members, sims, table }
}

/// Index of the best candidate by `score`, ties to the lowest index.
fn best_of(candidates: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = candidates.collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.first().copied()
}

pub fn oracle_scs(inst: &GreedyInstance, k: usize, threshold: usize, fill: bool) -> Vec<String> {
    let n = inst.clusters.len();
    let mut uncovered: BTreeSet<usize> = (0..inst.members.len()).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k && uncovered.len() > threshold {
        let open = (0..n).filter(|i| !chosen.contains(i));
        let Some((i, _)) = best_of(open.map(|i| (i, inst.clusters[i].intersection(&uncovered).count() as f64))) else {
            break;
        };
        for c in &inst.clusters[i] {
            uncovered.remove(c);
        }
        chosen.push(i);
    }
    if fill {
        for i in 0..n {
            if chosen.len() < k && !chosen.contains(&i) {
                chosen.push(i);
            }
        }
    }
    chosen.into_iter().map(|i| inst.pool.items[i].0.clone()).collect()
}

pub fn oracle_cluster_scores(inst: &GreedyInstance) -> Vec<f64> {
    inst.members.iter().map(|ms| ms.iter().map(|&i| inst.sims[i]).sum::<f64>() / ms.len() as f64).collect()
}

/// Step-by-step Score+ argmax; `lambda = None` drops the relevance term.
pub fn oracle_plus(
    inst: &GreedyInstance,
    k: usize,
    threshold: usize,
    lambda: Option<f64>,
    fill: bool,
) -> Vec<(String, f64)> {
    let n = inst.clusters.len();
    let cs = oracle_cluster_scores(inst);
    let rel = |i: usize| lambda.map_or(0.0, |l| l * inst.sims[i]);
    let mut uncovered: BTreeSet<usize> = (0..cs.len()).collect();
    let mut chosen: Vec<(usize, f64)> = Vec::new();
    let taken = |chosen: &[(usize, f64)], i: usize| chosen.iter().any(|&(j, _)| j == i);
    let div = |i: usize, u: &BTreeSet<usize>| -> f64 {
        let mut total = 0.0;
        for c in u.iter().filter(|c| inst.clusters[i].contains(c)) {
            total += cs[*c];
        }
        total
    };
    while chosen.len() < k && uncovered.len() > threshold {
        let Some((i, s)) = best_of((0..n).filter(|&i| !taken(&chosen, i)).map(|i| (i, div(i, &uncovered) + rel(i))))
        else {
            break;
        };
        for c in &inst.clusters[i] {
            uncovered.remove(c);
        }
        chosen.push((i, s));
    }
    if fill {
        while chosen.len() < k {
            let Some((i, _)) = best_of((0..n).filter(|&i| !taken(&chosen, i)).map(|i| (i, rel(i)))) else {
                break;
            };
            let s = div(i, &uncovered) + rel(i);
            for c in &inst.clusters[i] {
                uncovered.remove(c);
            }
            chosen.push((i, s));
        }
    }
    chosen.into_iter().map(|(i, s)| (inst.pool.items[i].0.clone(), s)).collect()
}

/// Candidates sorted by pair score, descending, ties by Stage-I rank.
pub fn oracle_relevance_ranking(inst: &GreedyInstance, k: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..inst.sims.len()).collect();
    idx.sort_by(|&a, &b| inst.sims[b].partial_cmp(&inst.sims[a]).unwrap().then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| inst.pool.items[i].0.clone()).collect()
}

// ---------------------------------------------------------------- MMR / DkMIPS

/// Vectors for a headline `h` and candidates `c0..`, in a form the stores and the
/// oracles can both consume.
pub struct VectorInstance {
    pub query: Vec<f32>,
    pub docs: Vec<(String, Vec<f32>)>,
    pub headlines: EmbeddingStore,
    pub paragraphs: EmbeddingStore,
    /// Candidates in dense order.
    pub pool: RankedList,
}

pub fn vector_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> VectorInstance {
    let query = random_vec(rng, dim);
    let docs: Vec<(String, Vec<f32>)> = (0..n)
        .map(|i| {
            let scale = rng.random_range(0.2f32..3.0);
            (format!("c{i:02}"), random_vec(rng, dim).into_iter().map(|x| x * scale).collect())
        })
        .collect();
    let headlines = store(EmbeddingKind::Headline, dim, &[(HEADLINE.to_string(), query.clone())]);
    let paragraphs = store(EmbeddingKind::Paragraph, dim, &docs);
    let pool = RankedList::new(HEADLINE, Method::Dense, brute_top_k(&query, &docs, n));
    VectorInstance { query, docs, headlines, paragraphs, pool }
}

impl VectorInstance {
    pub fn vector(&self, id: &str) -> &[f32] {
        &self.docs.iter().find(|(d, _)| d == id).unwrap().1
    }
}

pub fn oracle_mmr(inst: &VectorInstance, lambda: f64, k: usize) -> Vec<String> {
    let ids: Vec<&str> = inst.pool.items.iter().map(|(id, _)| id.as_str()).collect();
    let mut chosen: Vec<&str> = Vec::new();
    while chosen.len() < k.min(ids.len()) {
        let open = ids.iter().enumerate().filter(|(_, id)| !chosen.contains(id));
        let scored = open.map(|(i, id)| {
            let v = inst.vector(id);
            let red = chosen
                .iter()
                .map(|s| cos(v, inst.vector(s)))
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            (i, lambda * cos(v, &inst.query) - (1.0 - lambda) * red.unwrap_or(0.0))
        });
        let (i, _) = best_of(scored).unwrap();
        chosen.push(ids[i]);
    }
    chosen.into_iter().map(String::from).collect()
}

/// Objective `λ Σ⟨p,q⟩ − w Σ_{p≠p'} ⟨p,p'⟩` over ordered pairs.
pub fn dkmips_objective(inst: &VectorInstance, set: &[&str], lambda: f64, weight: f64) -> f64 {
    let rel: f64 = set.iter().map(|id| ip(inst.vector(id), &inst.query)).sum();
    let mut pen = 0.0;
    for (i, a) in set.iter().enumerate() {
        for (j, b) in set.iter().enumerate() {
            if i != j {
                pen += ip(inst.vector(a), inst.vector(b));
            }
        }
    }
    lambda * rel - weight * pen
}

/// Candidates by raw inner product with the query, descending, ties by pool order.
pub fn oracle_ip_ranking(inst: &VectorInstance, k: usize) -> Vec<String> {
    let mut scored: Vec<(usize, f64)> =
        inst.pool.items.iter().enumerate().map(|(i, (id, _))| (i, ip(inst.vector(id), &inst.query))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(i, _)| inst.pool.items[i].0.clone()).collect()
}

// ---------------------------------------------------------------- metrics

/// A one-event corpus with random sentence counts, a random gold set and a random
/// gold-side clustering of the gold sentences.
pub struct MetricInstance {
    pub corpus: Corpus,
    pub paragraphs: EmbeddingStore,
    pub gold: BTreeSet<String>,
    pub gold_assignment: ClusterAssignment,
    pub ids: Vec<String>,
}

pub fn metric_instance(rng: &mut ChaCha8Rng) -> MetricInstance {
    let n = rng.random_range(2..=12);
    let dim = 4;
    let ids: Vec<String> = (0..n).map(|i| format!("p{i:02}")).collect();
    let mut records = Vec::new();
    let mut vecs = Vec::new();
    let mut gold = BTreeSet::new();
    let m = rng.random_range(1..=6);
    let mut clusters: BTreeMap<usize, Vec<SentenceRef>> = BTreeMap::new();
    let mut noise = Vec::new();
    for id in &ids {
        let sentences: Vec<String> = (0..rng.random_range(1..=5)).map(|i| format!("Sentence {i} of {id}.")).collect();
        let relevant = rng.random_bool(0.5);
        if relevant {
            gold.insert(id.clone());
            for i in 0..sentences.len() {
                let s = SentenceRef::new(id.clone(), i);
                if rng.random_bool(0.2) {
                    noise.push(s);
                } else {
                    clusters.entry(rng.random_range(0..m)).or_default().push(s);
                }
            }
        }
        records.push(ParagraphRecord {
            paragraph_id: id.clone(),
            event_id: "e".into(),
            text: sentences.join(" "),
            sentences,
            relevant,
        });
        vecs.push((id.clone(), random_vec(rng, dim)));
    }
    let event = EventRecord { event_id: "e".into(), headline: "Headline".into(), gold_paragraph_ids: gold.clone() };
    let cluster_lists: Vec<Vec<SentenceRef>> = clusters.into_values().collect();
    MetricInstance {
        corpus: Corpus::new(vec![event], records).unwrap(),
        paragraphs: store(EmbeddingKind::Paragraph, dim, &vecs),
        gold,
        gold_assignment: ClusterAssignment::from_clusters(&cluster_lists, &noise).unwrap(),
        ids,
    }
}

// ---------------------------------------------------------------- pipeline

/// Writes a synthetic fixture into `dir` and returns a config pointing at it.
pub fn synthetic_config(
    dir: &std::path::Path,
    spec: &newscope::synthetic::SyntheticSpec,
) -> newscope::experiment::ExperimentConfig {
    use newscope::synthetic as syn;
    syn::generate(spec).unwrap().write(dir).unwrap();
    newscope::experiment::ExperimentConfig {
        corpus: dir.join(syn::CORPUS_FILE),
        headline_embeddings: Some(dir.join(syn::HEADLINES_FILE)),
        paragraph_embeddings: Some(dir.join(syn::PARAGRAPHS_FILE)),
        sentence_embeddings: Some(dir.join(syn::SENTENCES_FILE)),
        out: dir.join("out"),
        ..Default::default()
    }
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
