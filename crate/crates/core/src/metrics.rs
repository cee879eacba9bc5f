//! Relevance metrics (P/R/F1@k) and the diversity metrics D, C and I.
//!
//! * D: mean pairwise cosine distance between retrieved paragraph embeddings.
//! * C: fraction of gold-side sentence clusters touched by retrieved relevant
//!   paragraphs.
//! * I: the same covered-cluster count divided by the number of sentences in all
//!   retrieved paragraphs.
//!
//! The gold-side clustering groups sentences of the event's gold paragraphs only,
//! so C and I do not depend on which system is being evaluated.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::corpus::Corpus;
use crate::embed::{cosine_similarity, EmbeddingStore};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// P, R and F1 of a retrieved prefix; `None` when `gold` is empty (recall undefined).
pub fn precision_recall_f1<S: AsRef<str>>(retrieved: &[S], gold: &BTreeSet<String>) -> Option<Prf> {
    if gold.is_empty() {
        return None;
    }
    let unique: BTreeSet<&str> = retrieved.iter().map(AsRef::as_ref).collect();
    let hits = unique.iter().filter(|id| gold.contains(**id)).count() as f64;
    let precision = if unique.is_empty() { 0.0 } else { hits / unique.len() as f64 };
    let recall = hits / gold.len() as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Some(Prf { precision, recall, f1 })
}

/// `D = 2/(k(k−1)) Σ_{i<j} (1 − cos(p_i, p_j))` over all retrieved paragraphs;
/// 0 for fewer than two.
pub fn avg_pairwise_distance<S: AsRef<str>>(retrieved: &[S], paragraphs: &EmbeddingStore) -> Result<f64> {
    let vectors = retrieved.iter().map(|id| paragraphs.require(id.as_ref())).collect::<Result<Vec<_>>>()?;
    let k = vectors.len();
    if k < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            total += 1.0 - cosine_similarity(vectors[i], vectors[j])?;
        }
    }
    Ok(2.0 * total / (k * (k - 1)) as f64)
}

/// Gold-side clusters having a sentence in a retrieved gold paragraph.
pub fn covered_clusters<S: AsRef<str>>(
    retrieved: &[S],
    gold_assignment: &ClusterAssignment,
    gold: &BTreeSet<String>,
) -> BTreeSet<usize> {
    let by_paragraph = gold_assignment.paragraph_clusters();
    retrieved
        .iter()
        .map(AsRef::as_ref)
        .filter(|id| gold.contains(*id))
        .filter_map(|id| by_paragraph.get(id))
        .flatten()
        .copied()
        .collect()
}

/// `C = covered / total gold clusters`; `None` when the gold clustering is empty.
pub fn positive_cluster_coverage<S: AsRef<str>>(
    retrieved: &[S],
    gold_assignment: &ClusterAssignment,
    gold: &BTreeSet<String>,
) -> Option<f64> {
    let total = gold_assignment.num_clusters();
    (total > 0).then(|| covered_clusters(retrieved, gold_assignment, gold).len() as f64 / total as f64)
}

/// `I = covered / sentences in all retrieved paragraphs` (irrelevant ones included);
/// `None` when the gold clustering is empty.
pub fn information_density<S: AsRef<str>>(
    retrieved: &[S],
    gold_assignment: &ClusterAssignment,
    gold: &BTreeSet<String>,
    corpus: &Corpus,
) -> Result<Option<f64>> {
    if gold_assignment.num_clusters() == 0 {
        return Ok(None);
    }
    let mut sentences = 0usize;
    for id in retrieved {
        let p = corpus.paragraph(id.as_ref()).ok_or_else(|| Error::UnknownDocument(id.as_ref().to_string()))?;
        sentences += p.sentences.len();
    }
    if sentences == 0 {
        return Ok(Some(0.0));
    }
    let covered = covered_clusters(retrieved, gold_assignment, gold).len();
    Ok(Some(covered as f64 / sentences as f64))
}

/// Metrics of one list prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub event_id: String,
    pub label: String,
    pub k: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub distance: f64,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
    /// The list held fewer than `k` items; metrics use what was available.
    pub truncated: bool,
}

/// Per-(method, k) means over events with defined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub k: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub distance: Option<f64>,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
    pub events: usize,
    /// Events left out of the C and I means.
    pub undefined_coverage: usize,
    /// Events with an empty gold set, left out of the P/R/F1 means.
    pub no_gold: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub no_gold_events: BTreeSet<String>,
    pub undefined_coverage_events: BTreeSet<String>,
    /// (label, event, k) cells whose list was shorter than k.
    pub truncated: Vec<(String, String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub retrieval_s: f64,
    pub clustering_s: f64,
    pub reranking_s: f64,
    pub events: usize,
}

impl StageTiming {
    pub fn total_s(&self) -> f64 {
        self.retrieval_s + self.clustering_s + self.reranking_s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<AggregateRow>,
    pub diagnostics: Diagnostics,
}

/// Inputs shared by every evaluated list.
pub struct EvalContext<'a> {
    pub corpus: &'a Corpus,
    pub paragraphs: &'a EmbeddingStore,
    /// Gold-side clustering per event id.
    pub gold_assignments: &'a HashMap<String, ClusterAssignment>,
}

/// Metrics of one list at each depth in `ks`, using list prefixes.
pub fn evaluate_list(list: &RankedList, label: &str, ctx: &EvalContext<'_>, ks: &[usize]) -> Result<Vec<MetricRow>> {
    let event = ctx.corpus.event(&list.query_id).ok_or_else(|| Error::UnknownEvent(list.query_id.clone()))?;
    let empty = ClusterAssignment::empty();
    let gold_assignment = ctx.gold_assignments.get(&event.event_id).unwrap_or(&empty);
    let ids = list.ids();
    ks.iter()
        .map(|&k| {
            let prefix = &ids[..k.min(ids.len())];
            let prf = precision_recall_f1(prefix, &event.gold_paragraph_ids);
            Ok(MetricRow {
                event_id: event.event_id.clone(),
                label: label.to_string(),
                k,
                precision: prf.map(|m| m.precision),
                recall: prf.map(|m| m.recall),
                f1: prf.map(|m| m.f1),
                distance: avg_pairwise_distance(prefix, ctx.paragraphs)?,
                density: information_density(prefix, gold_assignment, &event.gold_paragraph_ids, ctx.corpus)?,
                coverage: positive_cluster_coverage(prefix, gold_assignment, &event.gold_paragraph_ids),
                truncated: prefix.len() < k,
            })
        })
        .collect()
}

/// Evaluates one method's run (one list per event), rows ordered by event id then k.
pub fn evaluate_run(runs: &[RankedList], label: &str, ctx: &EvalContext<'_>, ks: &[usize]) -> Result<Vec<MetricRow>> {
    let mut sorted: Vec<&RankedList> = runs.iter().collect();
    sorted.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mut rows = Vec::new();
    for list in sorted {
        rows.extend(evaluate_list(list, label, ctx, ks)?);
    }
    Ok(rows)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// Aggregates rows into unweighted per-event means. Labels keep their first-seen
    /// order; depths ascend.
    pub fn from_rows(rows: Vec<MetricRow>) -> Self {
        let mut label_order: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<(usize, usize), Vec<&MetricRow>> = BTreeMap::new();
        for row in &rows {
            let li = match label_order.iter().position(|l| *l == row.label) {
                Some(i) => i,
                None => {
                    label_order.push(&row.label);
                    label_order.len() - 1
                }
            };
            groups.entry((li, row.k)).or_default().push(row);
        }
        let mut diagnostics = Diagnostics::default();
        let aggregates = groups
            .into_iter()
            .map(|((li, k), group)| {
                for r in &group {
                    if r.precision.is_none() {
                        diagnostics.no_gold_events.insert(r.event_id.clone());
                    }
                    if r.coverage.is_none() {
                        diagnostics.undefined_coverage_events.insert(r.event_id.clone());
                    }
                    if r.truncated {
                        diagnostics.truncated.push((r.label.clone(), r.event_id.clone(), r.k));
                    }
                }
                AggregateRow {
                    label: label_order[li].to_string(),
                    k,
                    precision: mean(group.iter().map(|r| r.precision)),
                    recall: mean(group.iter().map(|r| r.recall)),
                    f1: mean(group.iter().map(|r| r.f1)),
                    distance: mean(group.iter().map(|r| Some(r.distance))),
                    density: mean(group.iter().map(|r| r.density)),
                    coverage: mean(group.iter().map(|r| r.coverage)),
                    events: group.len(),
                    undefined_coverage: group.iter().filter(|r| r.coverage.is_none()).count(),
                    no_gold: group.iter().filter(|r| r.precision.is_none()).count(),
                }
            })
            .collect();
        EvalReport { rows, aggregates, diagnostics }
    }

    pub fn aggregate(&self, label: &str, k: usize) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.label == label && a.k == k)
    }

    /// CSV with per-event rows (`scope=event`) followed by means (`scope=mean`).
    /// Values are fractions with six decimals; undefined cells are empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from("scope,method,k,event_id,P,R,F1,D,I,C,events,undefined_C\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "event,{},{},{},{},{},{},{},{},{},1,{}",
                r.label,
                r.k,
                r.event_id,
                cell(r.precision),
                cell(r.recall),
                cell(r.f1),
                cell(Some(r.distance)),
                cell(r.density),
                cell(r.coverage),
                u8::from(r.coverage.is_none()),
            );
        }
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "mean,{},{},ALL,{},{},{},{},{},{},{},{}",
                a.label,
                a.k,
                cell(a.precision),
                cell(a.recall),
                cell(a.f1),
                cell(a.distance),
                cell(a.density),
                cell(a.coverage),
                a.events,
                a.undefined_coverage,
            );
        }
        out
    }

    /// Aligned markdown table: one row per method, P/R/F1/D/I/C for each depth,
    /// values ×100 to one decimal.
    pub fn to_markdown(&self) -> String {
        let mut ks: Vec<usize> = self.aggregates.iter().map(|a| a.k).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut labels: Vec<&str> = Vec::new();
        for a in &self.aggregates {
            if !labels.contains(&a.label.as_str()) {
                labels.push(&a.label);
            }
        }
        let mut header = vec!["Method".to_string()];
        for k in &ks {
            for m in ["P", "R", "F1", "D", "I", "C"] {
                header.push(format!("{m}@{k}"));
            }
        }
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", x * 100.0));
        let mut table: Vec<Vec<String>> = vec![header];
        for label in &labels {
            let mut row = vec![label.to_string()];
            for &k in &ks {
                match self.aggregate(label, k) {
                    Some(a) => row
                        .extend([a.precision, a.recall, a.f1, a.distance, a.density, a.coverage].into_iter().map(pct)),
                    None => row.extend(std::iter::repeat_n("-".to_string(), 6)),
                }
            }
            table.push(row);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let render = |row: &[String]| {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            format!("| {} |\n", cells.join(" | "))
        };
        let mut out = render(&table[0]);
        let rule: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(c, w)| {
                if c == 0 {
                    format!(":{}", "-".repeat(w.saturating_sub(1).max(1)))
                } else {
                    format!("{}:", "-".repeat(w.saturating_sub(1).max(1)))
                }
            })
            .collect();
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for row in &table[1..] {
            out.push_str(&render(row));
        }
        out
    }

    pub fn diagnostics_json(&self) -> String {
        serde_json::to_string_pretty(&self.diagnostics).expect("diagnostics serialize")
    }
}
