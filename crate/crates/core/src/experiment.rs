//! End-to-end experiment runner: Stage I, clustering, re-ranking and metrics per
//! event, with report, run-file, trace and timing output.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_sentences, ClusterAssignment, OpticsParams};
use crate::corpus::{load_corpus, Corpus, EventRecord};
use crate::embed::{
    load_embeddings, load_pair_scores, CosineScorer, EmbeddingKind, EmbeddingStore, PairScoreTable, PairScorer,
};
use crate::error::{Error, Result};
use crate::fetch::{fetch_embeddings, FetchOptions};
use crate::metrics::{evaluate_list, EvalContext, EvalReport, StageTiming};
use crate::rerank::{
    candidate_relevance, dkmips, greedy_plus_scored, greedy_scs, mmr, relevance_only, ClusterScores, Objective,
    RerankConfig, SelectionTrace, TraceStep,
};
use crate::retrieval::{dense_retrieve, write_run, Bm25Index, Bm25Params, Method, RankedList, DEFAULT_POOL_SIZE};

/// Method name that expands to the full GreedyPlus run plus both ablations.
pub const ABLATIONS: &str = "ablations";

pub const DEFAULT_KS: [usize; 4] = [5, 10, 20, 50];
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub headline_embeddings: Option<PathBuf>,
    pub paragraph_embeddings: Option<PathBuf>,
    pub sentence_embeddings: Option<PathBuf>,
    /// Precomputed Sim(h, p); cosine on the dense embeddings when absent.
    pub pair_scores: Option<PathBuf>,
    /// Embedding service used for any embedding file not given.
    pub embed_url: Option<String>,
    /// Method names, or `ablations`.
    pub methods: Vec<String>,
    pub ks: Vec<usize>,
    pub pool_size: usize,
    /// One GreedyPlus variant per value.
    pub lambda_grid: Vec<f64>,
    pub optics: OpticsParams,
    /// Baseline settings, plus the lambda used by ablations and `explain`.
    pub rerank: RerankConfig,
    pub bm25: Bm25Params,
    pub promote_noise: bool,
    /// Event-level worker threads; 0 picks the number of CPUs.
    pub workers: usize,
    pub out: PathBuf,
    /// Only used to generate synthetic fixtures.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            headline_embeddings: None,
            paragraph_embeddings: None,
            sentence_embeddings: None,
            pair_scores: None,
            embed_url: None,
            methods: ["bm25", "dense", "mmr", "dkmips", "greedy_scs", "greedy_plus"].map(String::from).to_vec(),
            ks: DEFAULT_KS.to_vec(),
            pool_size: DEFAULT_POOL_SIZE,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            optics: OpticsParams::default(),
            rerank: RerankConfig::default(),
            bm25: Bm25Params::default(),
            promote_noise: false,
            workers: 0,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out);
        for p in [
            &mut self.headline_embeddings,
            &mut self.paragraph_embeddings,
            &mut self.sentence_embeddings,
            &mut self.pair_scores,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        self.plan()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty and positive".into()));
        }
        if self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("ks must be strictly ascending".into()));
        }
        if self.pool_size == 0 {
            return Err(Error::Config("pool_size must be >= 1".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda_grid must not be empty".into()));
        }
        for &l in &self.lambda_grid {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Config(format!("lambda values must be finite and >= 0 (got {l})")));
            }
        }
        self.optics.validate()?;
        self.rerank.validate()?;
        Bm25Index::build(std::iter::empty::<(&str, &str)>(), self.bm25)?;
        let embeddings = [&self.headline_embeddings, &self.paragraph_embeddings, &self.sentence_embeddings];
        if self.embed_url.is_none() && embeddings.iter().any(|p| p.is_none()) {
            return Err(Error::Config("headline, paragraph and sentence embeddings need a path or embed_url".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }

    /// Output variants in method order; duplicates are dropped.
    pub fn plan(&self) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = Vec::new();
        let mut push = |v: Variant| {
            if !out.iter().any(|o| o.label == v.label) {
                out.push(v);
            }
        };
        let has_plus = self.methods.iter().any(|m| m == Method::GreedyPlus.as_str());
        for name in &self.methods {
            if name == ABLATIONS {
                if !has_plus {
                    push(Variant::new(Method::GreedyPlus.as_str(), Step::Plus(self.rerank.lambda)));
                }
                push(Variant::new(Method::AblationNoRel.as_str(), Step::NoRel));
                push(Variant::new(Method::AblationNoDiv.as_str(), Step::NoDiv));
                continue;
            }
            let method: Method = name.parse().map_err(|_| Error::Config(format!("unknown method `{name}`")))?;
            match method {
                Method::GreedyPlus if self.lambda_grid.len() == 1 => {
                    push(Variant::new(method.as_str(), Step::Plus(self.lambda_grid[0])))
                }
                Method::GreedyPlus => {
                    for &l in &self.lambda_grid {
                        push(Variant::new(format!("greedy_plus@{l}"), Step::Plus(l)));
                    }
                }
                Method::Bm25 => push(Variant::new(method.as_str(), Step::Bm25)),
                Method::Dense => push(Variant::new(method.as_str(), Step::Dense)),
                Method::Mmr => push(Variant::new(method.as_str(), Step::Mmr)),
                Method::Dkmips => push(Variant::new(method.as_str(), Step::Dkmips)),
                Method::GreedyScs => push(Variant::new(method.as_str(), Step::Scs)),
                Method::AblationNoRel => push(Variant::new(method.as_str(), Step::NoRel)),
                Method::AblationNoDiv => push(Variant::new(method.as_str(), Step::NoDiv)),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Bm25,
    Dense,
    Mmr,
    Dkmips,
    Scs,
    Plus(f64),
    NoRel,
    NoDiv,
}

impl Step {
    fn needs_clusters(self) -> bool {
        matches!(self, Step::Scs | Step::Plus(_) | Step::NoRel)
    }

    fn needs_relevance(self) -> bool {
        matches!(self, Step::Plus(_) | Step::NoRel | Step::NoDiv)
    }
}

/// One labelled output list per event.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub step: Step,
}

impl Variant {
    fn new(label: impl Into<String>, step: Step) -> Self {
        Variant { label: label.into(), step }
    }
}

/// Loaded corpus, embeddings and optional pair-score table.
pub struct Inputs {
    pub corpus: Corpus,
    pub headlines: EmbeddingStore,
    pub paragraphs: EmbeddingStore,
    pub sentences: EmbeddingStore,
    pub pair_scores: Option<PairScoreTable>,
}

/// Sim(h, p) source chosen by the config.
pub enum Scorer<'a> {
    Cosine(CosineScorer<'a>),
    Table(&'a PairScoreTable),
}

impl PairScorer for Scorer<'_> {
    fn score(&self, headline_id: &str, paragraph_id: &str) -> Result<f64> {
        match self {
            Scorer::Cosine(s) => s.score(headline_id, paragraph_id),
            Scorer::Table(t) => t.score(headline_id, paragraph_id),
        }
    }
}

impl Inputs {
    /// Loads every input named by `config`, fetching missing embeddings from the
    /// configured service.
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let corpus = load_corpus(&config.corpus)?;
        let get = |path: &Option<PathBuf>, kind: EmbeddingKind, texts: &dyn Fn() -> Vec<(String, String)>| match (
            path,
            &config.embed_url,
        ) {
            (Some(p), _) => load_embeddings(p, kind),
            (None, Some(url)) => fetch_embeddings(url, &texts(), kind, &FetchOptions::default()),
            (None, None) => Err(Error::Config(format!("no source for {kind:?} embeddings"))),
        };
        let headlines = get(&config.headline_embeddings, EmbeddingKind::Headline, &|| {
            corpus.events().iter().map(|e| (e.event_id.clone(), e.headline.clone())).collect()
        })?;
        let paragraphs = get(&config.paragraph_embeddings, EmbeddingKind::Paragraph, &|| {
            corpus.paragraphs().iter().map(|p| (p.paragraph_id.clone(), p.text.clone())).collect()
        })?;
        let sentences = get(&config.sentence_embeddings, EmbeddingKind::Sentence, &|| {
            corpus
                .paragraphs()
                .iter()
                .flat_map(|p| {
                    p.sentences.iter().enumerate().map(|(i, s)| (format!("{}#{i}", p.paragraph_id), s.clone()))
                })
                .collect()
        })?;
        let pair_scores = config.pair_scores.as_ref().map(load_pair_scores).transpose()?;
        Ok(Inputs { corpus, headlines, paragraphs, sentences, pair_scores })
    }

    pub fn scorer(&self) -> Scorer<'_> {
        match &self.pair_scores {
            Some(t) => Scorer::Table(t),
            None => Scorer::Cosine(CosineScorer { headlines: &self.headlines, paragraphs: &self.paragraphs }),
        }
    }
}

/// Per-variant lists and traces, per-stage timing and the gold clustering of one event.
struct EventOutput {
    lists: Vec<RankedList>,
    traces: Vec<(String, SelectionTrace)>,
    timing: [f64; 3],
    gold: ClusterAssignment,
}

fn promote(assignment: ClusterAssignment, promote_noise: bool) -> ClusterAssignment {
    if promote_noise {
        assignment.promote_noise()
    } else {
        assignment
    }
}

/// Gold-side clustering used by the C and I metrics: sentences of the event's gold
/// paragraphs only.
pub fn gold_assignment(event: &EventRecord, inputs: &Inputs, config: &ExperimentConfig) -> Result<ClusterAssignment> {
    let gold: Vec<&str> = event.gold_paragraph_ids.iter().map(String::as_str).collect();
    let a = cluster_sentences(&gold, &inputs.corpus, &inputs.sentences, &config.optics)?;
    Ok(promote(a, config.promote_noise))
}

/// Stage-I pool for an event: the first `pool_size` paragraphs by headline cosine.
pub fn stage_one(event_id: &str, inputs: &Inputs, depth: usize) -> Result<RankedList> {
    dense_retrieve(event_id, &inputs.headlines, &inputs.paragraphs, &inputs.corpus, depth)
}

fn truncate(list: &RankedList, n: usize) -> RankedList {
    let mut out = list.clone();
    out.items.truncate(n);
    out
}

/// Checks the relevance-only ablation against an independent stable sort of the
/// pool by pair score.
fn check_relevance_order(pool: &RankedList, scorer: &dyn PairScorer, got: &RankedList) -> Result<()> {
    let mut expected = Vec::with_capacity(pool.len());
    for (id, _) in &pool.items {
        expected.push((id.as_str(), scorer.score(&pool.query_id, id)?));
    }
    expected.sort_by(|a, b| b.1.total_cmp(&a.1));
    let expected: Vec<&str> = expected.iter().take(got.len()).map(|e| e.0).collect();
    if expected != got.ids() {
        return Err(Error::Invariant(format!(
            "relevance-only ordering differs from the pair-score sort for `{}`",
            pool.query_id
        )));
    }
    Ok(())
}

fn run_event(
    event: &EventRecord,
    inputs: &Inputs,
    config: &ExperimentConfig,
    plan: &[Variant],
    bm25: Option<&Bm25Index>,
) -> Result<EventOutput> {
    let id = event.event_id.as_str();
    let k = config.max_k();
    let scorer = inputs.scorer();
    let rerank = config.rerank.with_k(k);

    let t = Instant::now();
    let dense = stage_one(id, inputs, config.pool_size.max(k))?;
    let pool = truncate(&dense, config.pool_size);
    let retrieval_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let clusters = if plan.iter().any(|v| v.step.needs_clusters()) {
        let ids = pool.ids();
        promote(cluster_sentences(&ids, &inputs.corpus, &inputs.sentences, &config.optics)?, config.promote_noise)
    } else {
        ClusterAssignment::empty()
    };
    let clustering_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let relevance =
        if plan.iter().any(|v| v.step.needs_relevance()) { candidate_relevance(&pool, &scorer)? } else { Vec::new() };
    let cluster_scores = if plan.iter().any(|v| matches!(v.step, Step::Plus(_) | Step::NoRel)) {
        ClusterScores::compute(&clusters, &scorer, id)?
    } else {
        ClusterScores(Vec::new())
    };
    let mut lists = Vec::with_capacity(plan.len());
    let mut traces = Vec::new();
    for v in plan {
        let list = match v.step {
            Step::Bm25 => bm25.expect("index built when bm25 is planned").retrieve(id, &event.headline, k),
            Step::Dense => truncate(&dense, k),
            Step::Mmr => mmr(&pool, id, &inputs.headlines, &inputs.paragraphs, rerank.mmr_lambda, k)?,
            Step::Dkmips => {
                dkmips(&pool, id, &inputs.headlines, &inputs.paragraphs, rerank.dkmips_lambda, rerank.dkmips_mu, k)?
            }
            Step::Scs => {
                let (list, trace) = greedy_scs(&pool, &clusters, &rerank);
                traces.push((v.label.clone(), trace));
                list
            }
            Step::Plus(lambda) => {
                let objective = Objective::Full { lambda };
                let cfg = rerank.with_lambda(lambda);
                let (list, trace) = greedy_plus_scored(&pool, &clusters, &cluster_scores, &relevance, objective, &cfg);
                traces.push((v.label.clone(), trace));
                list
            }
            Step::NoRel => {
                let (list, trace) = greedy_plus_scored(
                    &pool,
                    &clusters,
                    &cluster_scores,
                    &relevance,
                    Objective::DiversityOnly,
                    &rerank,
                );
                traces.push((v.label.clone(), trace));
                list
            }
            Step::NoDiv => {
                let list = relevance_only(&pool, &relevance, k);
                check_relevance_order(&pool, &scorer, &list)?;
                list
            }
        };
        lists.push(list.with_query(id));
    }
    let reranking_s = t.elapsed().as_secs_f64();

    let gold = gold_assignment(event, inputs, config)?;
    Ok(EventOutput { lists, traces, timing: [retrieval_s, clustering_s, reranking_s], gold })
}

/// Everything one experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    /// Per variant label, one list per event in event-id order.
    pub runs: Vec<(String, Vec<RankedList>)>,
    /// Per event, the selection traces of the greedy variants.
    pub traces: BTreeMap<String, Vec<(String, SelectionTrace)>>,
    /// Mean seconds per event.
    pub timing: StageTiming,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every planned variant on every event of an already loaded input set.
pub fn run_with_inputs(config: &ExperimentConfig, inputs: &Inputs) -> Result<ExperimentOutput> {
    config.validate()?;
    let plan = config.plan()?;
    let bm25 = if plan.iter().any(|v| v.step == Step::Bm25) {
        Some(Bm25Index::from_corpus(&inputs.corpus, config.bm25)?)
    } else {
        None
    };
    let event_ids = inputs.corpus.sorted_event_ids();
    let events: Vec<&EventRecord> =
        event_ids.iter().map(|id| inputs.corpus.event(id).expect("listed event exists")).collect();

    let outputs: Vec<EventOutput> = worker_pool(config.workers)?.install(|| {
        events
            .par_iter()
            .map(|e| run_event(e, inputs, config, &plan, bm25.as_ref()).map_err(|err| err.in_event(&e.event_id)))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut runs: Vec<(String, Vec<RankedList>)> = plan.iter().map(|v| (v.label.clone(), Vec::new())).collect();
    let mut traces = BTreeMap::new();
    let mut gold = HashMap::new();
    let mut timing = StageTiming::default();
    for (event, out) in events.iter().zip(outputs) {
        for ((_, lists), list) in runs.iter_mut().zip(out.lists) {
            lists.push(list);
        }
        traces.insert(event.event_id.clone(), out.traces);
        gold.insert(event.event_id.clone(), out.gold);
        timing.retrieval_s += out.timing[0];
        timing.clustering_s += out.timing[1];
        timing.reranking_s += out.timing[2];
    }
    let n = events.len();
    if n > 0 {
        timing.retrieval_s /= n as f64;
        timing.clustering_s /= n as f64;
        timing.reranking_s /= n as f64;
    }
    timing.events = n;

    let ctx = EvalContext { corpus: &inputs.corpus, paragraphs: &inputs.paragraphs, gold_assignments: &gold };
    let mut rows = Vec::new();
    for (label, lists) in &runs {
        for list in lists {
            rows.extend(evaluate_list(list, label, &ctx, &config.ks).map_err(|e| e.in_event(&list.query_id))?);
        }
    }
    Ok(ExperimentOutput { report: EvalReport::from_rows(rows), runs, traces, timing })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let inputs = Inputs::load(config)?;
    run_with_inputs(config, &inputs)
}

/// Full GreedyPlus (at `rerank.lambda`) and both ablations in one report.
pub fn run_ablations(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let config = ExperimentConfig { methods: vec![ABLATIONS.to_string()], ..config.clone() };
    run_experiment(&config)
}

fn json_line(label: &str, step: &TraceStep) -> String {
    let mut value = serde_json::to_value(step).expect("trace steps serialize");
    value["method"] = serde_json::Value::String(label.to_string());
    value.to_string()
}

impl ExperimentOutput {
    /// Writes `report.csv`, `report.md`, `diagnostics.json`, `runs/<label>.tsv`,
    /// `traces/<event>.jsonl` and `timing.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let write = |path: PathBuf, text: &str| std::fs::write(&path, text).map_err(|e| Error::io(path, e));
        for sub in ["runs", "traces"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(d, e))?;
        }
        write(dir.join("report.csv"), &self.report.to_csv())?;
        write(dir.join("report.md"), &self.report.to_markdown())?;
        write(dir.join("diagnostics.json"), &self.report.diagnostics_json())?;
        for (label, lists) in &self.runs {
            write_run(dir.join("runs").join(format!("{label}.tsv")), lists)?;
        }
        for (event, traces) in &self.traces {
            let text: String =
                traces.iter().flat_map(|(label, t)| t.steps.iter().map(move |s| json_line(label, s) + "\n")).collect();
            write(dir.join("traces").join(format!("{event}.jsonl")), &text)?;
        }
        let timing = serde_json::json!({
            "retrieval_s": self.timing.retrieval_s,
            "clustering_s": self.timing.clustering_s,
            "reranking_s": self.timing.reranking_s,
            "total_s": self.timing.total_s(),
            "events": self.timing.events,
        });
        write(dir.join("timing.json"), &(serde_json::to_string_pretty(&timing).expect("json") + "\n"))
    }
}

/// A GreedyPlus step with a representative sentence per newly covered cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainStep {
    pub step: TraceStep,
    pub clusters: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub event_id: String,
    pub headline: String,
    pub lambda: f64,
    pub pool_size: usize,
    pub num_clusters: usize,
    pub steps: Vec<ExplainStep>,
}

/// Replays GreedyPlus at `rerank.lambda` on one event and records why each
/// paragraph was chosen.
pub fn explain_with_inputs(event_id: &str, config: &ExperimentConfig, inputs: &Inputs) -> Result<Explanation> {
    let event = inputs.corpus.event(event_id).ok_or_else(|| Error::UnknownEvent(event_id.to_string()))?;
    let run = || -> Result<Explanation> {
        let k = config.max_k();
        let lambda = config.rerank.lambda;
        let scorer = inputs.scorer();
        let pool = stage_one(event_id, inputs, config.pool_size)?;
        let ids = pool.ids();
        let clusters =
            promote(cluster_sentences(&ids, &inputs.corpus, &inputs.sentences, &config.optics)?, config.promote_noise);
        let scores = ClusterScores::compute(&clusters, &scorer, event_id)?;
        let relevance = candidate_relevance(&pool, &scorer)?;
        let cfg = config.rerank.with_k(k);
        let (_, trace) = greedy_plus_scored(&pool, &clusters, &scores, &relevance, Objective::Full { lambda }, &cfg);
        let steps = trace
            .steps
            .into_iter()
            .map(|step| {
                let clusters = step
                    .new_clusters
                    .iter()
                    .map(|&c| {
                        let text = clusters
                            .members(c)
                            .first()
                            .and_then(|s| inputs.corpus.sentence(s))
                            .unwrap_or_default()
                            .to_string();
                        (c, text)
                    })
                    .collect();
                ExplainStep { step, clusters }
            })
            .collect();
        Ok(Explanation {
            event_id: event_id.to_string(),
            headline: event.headline.clone(),
            lambda,
            pool_size: pool.len(),
            num_clusters: clusters.num_clusters(),
            steps,
        })
    };
    run().map_err(|e| e.in_event(event_id))
}

pub fn explain(event_id: &str, config: &ExperimentConfig) -> Result<Explanation> {
    config.validate()?;
    let inputs = Inputs::load(config)?;
    explain_with_inputs(event_id, config, &inputs)
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "event {}: {}", self.event_id, self.headline)?;
        writeln!(f, "lambda={} pool={} clusters={}", self.lambda, self.pool_size, self.num_clusters)?;
        writeln!(
            f,
            "{:>4}  {:<24} {:>10} {:>10} {:>10}  new clusters",
            "step", "paragraph", "diversity", "lambda*sim", "score"
        )?;
        for s in &self.steps {
            let t = &s.step;
            let mut line = String::new();
            let _ = write!(
                line,
                "{:>4}  {:<24} {:>10.6} {:>10.6} {:>10.6}  ",
                t.step,
                t.paragraph_id,
                t.diversity.unwrap_or(0.0),
                t.relevance.unwrap_or(0.0),
                t.score
            );
            if t.filled {
                line.push_str("(fill)");
            } else {
                line.push_str(&format!("{:?}", t.new_clusters));
            }
            writeln!(f, "{line}")?;
            for (c, text) in &s.clusters {
                writeln!(f, "        c{c}: {text}")?;
            }
        }
        Ok(())
    }
}
