//! Stage-I relevance retrieval: dense cosine ranking and the BM25 baseline, plus
//! the [`RankedList`] type every method produces and its TSV run-file form.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::{score_desc_then_id, top_k_by_cosine, EmbeddingStore};
use crate::error::{Error, Result};

/// Default Stage-I candidate pool size.
pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bm25,
    Dense,
    Mmr,
    Dkmips,
    GreedyScs,
    GreedyPlus,
    AblationNoDiv,
    AblationNoRel,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Bm25,
        Method::Dense,
        Method::Mmr,
        Method::Dkmips,
        Method::GreedyScs,
        Method::GreedyPlus,
        Method::AblationNoDiv,
        Method::AblationNoRel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::Dense => "dense",
            Method::Mmr => "mmr",
            Method::Dkmips => "dkmips",
            Method::GreedyScs => "greedy_scs",
            Method::GreedyPlus => "greedy_plus",
            Method::AblationNoDiv => "ablation_no_div",
            Method::AblationNoRel => "ablation_no_rel",
        }
    }

    /// Whether list order is greedy selection order rather than descending score.
    pub fn is_selection_ordered(self) -> bool {
        matches!(self, Method::Mmr | Method::Dkmips | Method::GreedyScs | Method::GreedyPlus | Method::AblationNoRel)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Ordered (paragraph id, score) output of a retrieval or re-ranking method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub method: Method,
    pub items: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, method: Method, items: Vec<(String, f64)>) -> Self {
        RankedList { query_id: query_id.into(), method, items }
    }

    pub fn with_query(mut self, query_id: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self
    }

    pub fn ids(&self) -> Vec<&str> {
        self.items.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 0-based position of every id.
    pub fn ranks(&self) -> HashMap<&str, usize> {
        self.items.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect()
    }

    pub fn has_unique_ids(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.items.len());
        self.items.iter().all(|(id, _)| seen.insert(id.as_str()))
    }
}

/// Writes lists as TSV: `query_id<TAB>rank<TAB>paragraph_id<TAB>score<TAB>method`,
/// ranks starting at 1.
pub fn write_run<'a>(path: impl AsRef<Path>, lists: impl IntoIterator<Item = &'a RankedList>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for list in lists {
        for (rank, (id, score)) in list.items.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", list.query_id, rank + 1, id, score, list.method)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a TSV run file. Lists come back grouped by query in first-seen order,
/// items sorted by rank.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists: Vec<(RankedList, Vec<usize>)> = Vec::new();
    let mut index: HashMap<(String, Method), usize> = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query, rank, id, score, method] = fields[..] else {
            return Err(Error::parse(path, lineno, "expected 5 tab-separated fields"));
        };
        let rank: usize = rank.parse().map_err(|e| Error::parse(path, lineno, e))?;
        let score: f64 = score.parse().map_err(|e| Error::parse(path, lineno, e))?;
        let method: Method = method.parse().map_err(|e| Error::parse(path, lineno, e))?;
        let slot = *index.entry((query.to_string(), method)).or_insert_with(|| {
            lists.push((RankedList::new(query, method, Vec::new()), Vec::new()));
            lists.len() - 1
        });
        lists[slot].0.items.push((id.to_string(), score));
        lists[slot].1.push(rank);
    }
    Ok(lists
        .into_iter()
        .map(|(mut list, ranks)| {
            let mut paired: Vec<_> = ranks.into_iter().zip(list.items).collect();
            paired.sort_by_key(|(r, _)| *r);
            list.items = paired.into_iter().map(|(_, item)| item).collect();
            list
        })
        .collect())
}

/// Lower-cases and splits on every non-alphanumeric character. No stemming,
/// no stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Clamp idf at zero (the common variant) instead of allowing negative values.
    pub idf_floor: bool,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75, idf_floor: false }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, usize>,
    doc_len: Vec<usize>,
    avgdl: f64,
    /// term -> (doc index, term frequency), doc indices ascending.
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    /// Indexes `(id, text)` documents.
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if params.k1 <= 0.0 || !(0.0..=1.0).contains(&params.b) {
            return Err(Error::Config(format!(
                "bm25 requires k1 > 0 and 0 <= b <= 1 (got k1={}, b={})",
                params.k1, params.b
            )));
        }
        let mut doc_ids = Vec::new();
        let mut doc_lookup = HashMap::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let id = id.into();
            if doc_lookup.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "document", id });
            }
            let tokens = tokenize(text.as_ref());
            doc_len.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((i, f));
            }
            doc_ids.push(id);
        }
        let n = doc_ids.len();
        let avgdl = if n == 0 { 0.0 } else { doc_len.iter().sum::<usize>() as f64 / n as f64 };
        Ok(Bm25Index { params, doc_ids, doc_lookup, doc_len, avgdl, postings })
    }

    pub fn from_corpus(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        Bm25Index::build(corpus.paragraphs().iter().map(|p| (p.paragraph_id.as_str(), p.text.as_str())), params)
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    /// Number of documents containing `term` (already tokenized form).
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, doc_id: &str, term: &str) -> u32 {
        let Some(&doc) = self.doc_lookup.get(doc_id) else {
            return 0;
        };
        self.postings
            .get(term)
            .and_then(|p| p.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| p[i].1))
            .unwrap_or(0)
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<usize> {
        self.doc_lookup.get(doc_id).map(|&i| self.doc_len[i])
    }

    fn idf(&self, n_t: usize) -> f64 {
        let n = self.num_docs() as f64;
        let n_t = n_t as f64;
        let idf = ((n - n_t + 0.5) / (n_t + 0.5)).ln();
        if self.params.idf_floor {
            idf.max(0.0)
        } else {
            idf
        }
    }

    fn term_weight(&self, idf: f64, f: u32, len: usize) -> f64 {
        let Bm25Params { k1, b, .. } = self.params;
        let f = f64::from(f);
        let norm = if self.avgdl > 0.0 { len as f64 / self.avgdl } else { 0.0 };
        idf * ((k1 + 1.0) * f) / (k1 * (1.0 - b + b * norm) + f)
    }

    /// BM25 of `query` against one document, summing over query tokens (repeated
    /// tokens count repeatedly). Natural log; idf may be negative unless floored.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64> {
        let &doc = self.doc_lookup.get(doc_id).ok_or_else(|| Error::UnknownDocument(doc_id.to_string()))?;
        let mut total = 0.0;
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let f = postings.binary_search_by_key(&doc, |&(d, _)| d).map_or(0, |i| postings[i].1);
            total += self.term_weight(self.idf(postings.len()), f, self.doc_len[doc]);
        }
        Ok(total)
    }

    /// Scores every document; the vector is indexed like the build order.
    fn score_all(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_docs()];
        for term in tokenize(query) {
            let Some(postings) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(postings.len());
            for &(doc, f) in postings {
                scores[doc] += self.term_weight(idf, f, self.doc_len[doc]);
            }
        }
        scores
    }

    /// Top-k documents by BM25, ties by ascending id.
    pub fn retrieve(&self, query_id: &str, query: &str, k: usize) -> RankedList {
        let mut scored: Vec<(String, f64)> = self.doc_ids.iter().cloned().zip(self.score_all(query)).collect();
        scored.sort_by(score_desc_then_id);
        scored.truncate(k);
        RankedList::new(query_id, Method::Bm25, scored)
    }
}

pub fn build_bm25_index(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index> {
    Bm25Index::from_corpus(corpus, params)
}

pub fn bm25_score(index: &Bm25Index, query: &str, doc_id: &str) -> Result<f64> {
    index.score(query, doc_id)
}

pub fn bm25_retrieve(index: &Bm25Index, query_id: &str, query: &str, k: usize) -> RankedList {
    index.retrieve(query_id, query, k)
}

/// Ranks every corpus paragraph by cosine similarity to the event's headline vector.
pub fn dense_retrieve(
    headline_id: &str,
    headlines: &EmbeddingStore,
    paragraphs: &EmbeddingStore,
    corpus: &Corpus,
    k: usize,
) -> Result<RankedList> {
    let query = headlines.require(headline_id)?;
    let ids: Vec<&str> = corpus.paragraphs().iter().map(|p| p.paragraph_id.as_str()).collect();
    Ok(top_k_by_cosine(query, &ids, paragraphs, k)?.with_query(headline_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DOCS: [(&str, &str); 3] = [("d1", "a b"), ("d2", "b c"), ("d3", "b")];

    fn index(params: Bm25Params) -> Bm25Index {
        Bm25Index::build(DOCS, params).unwrap()
    }

    #[test]
    fn index_counts() {
        let idx = index(Bm25Params::default());
        assert_eq!(idx.num_docs(), 3);
        assert_eq!(idx.doc_freq("b"), 3);
        assert_eq!(idx.doc_freq("a"), 1);
        assert!((idx.avgdl() - 5.0 / 3.0).abs() < 1e-15);

        let idx = Bm25Index::build([("x", "a a a"), ("y", "")], Bm25Params::default()).unwrap();
        assert_eq!(idx.term_freq("x", "a"), 3);
        assert_eq!(idx.doc_len("y"), Some(0));
        assert_eq!(idx.avgdl(), 1.5);
    }

    #[test]
    fn hand_computed_scores() {
        // Frozen from an independent Python evaluation of the formula.
        let idx = index(Bm25Params::default());
        assert!((idx.score("a", "d1").unwrap() - 0.472_191_753_060_999_9).abs() < 1e-12);
        assert!((idx.score("a", "d1").unwrap() - 0.4722).abs() < 1e-4);
        // "b" occurs in every document: negative idf.
        assert!((idx.score("b", "d1").unwrap() + 1.798_740_473_916_676_6).abs() < 1e-12);
        assert!((idx.score("b", "d3").unwrap() + 2.326_631_699_957_440_3).abs() < 1e-12);
        assert!((idx.score("A, B!", "d1").unwrap() + 1.326_548_720_855_676_8).abs() < 1e-12);
        assert_eq!(idx.score("zzz qqq", "d1").unwrap(), 0.0);
        assert!(matches!(idx.score("a", "nope"), Err(Error::UnknownDocument(_))));
    }

    #[test]
    fn idf_floor_clamps_negative_terms() {
        let idx = index(Bm25Params { idf_floor: true, ..Bm25Params::default() });
        assert_eq!(idx.score("b", "d1").unwrap(), 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(Bm25Index::build(DOCS, Bm25Params { k1: 0.0, ..Default::default() }).is_err());
        assert!(Bm25Index::build(DOCS, Bm25Params { b: 1.5, ..Default::default() }).is_err());
    }

    #[test]
    fn retrieve_single_match_and_zero_ties() {
        let idx = Bm25Index::build([("p3", "x y"), ("p1", "rain storm"), ("p2", "z")], Bm25Params::default()).unwrap();
        let list = idx.retrieve("q", "storm", 5);
        assert_eq!(list.ids()[0], "p1");
        assert_eq!(list.len(), 3);
        let zero = idx.retrieve("q", "nothing", 2);
        assert_eq!(zero.ids(), vec!["p1", "p2"]);
    }

    #[test]
    fn b_zero_removes_length_dependence() {
        let idx = Bm25Index::build(
            [("s", "a x"), ("l", "a x y z w v u"), ("o", "q")],
            Bm25Params { b: 0.0, ..Default::default() },
        )
        .unwrap();
        assert_eq!(idx.score("a", "s").unwrap(), idx.score("a", "l").unwrap());
    }

    #[test]
    fn run_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        let lists = vec![
            RankedList::new("e1", Method::GreedyPlus, vec![("p2".into(), 1.25), ("p1".into(), 0.1)]),
            RankedList::new("e2", Method::GreedyPlus, vec![("p9".into(), -0.5)]),
        ];
        write_run(&path, &lists).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("e1\t1\tp2\t1.25\tgreedy_plus\n"));
        assert_eq!(read_run(&path).unwrap(), lists);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn bm25_is_additive_over_disjoint_terms(
            docs in proptest::collection::vec("[a-e ]{0,20}", 1..8),
            q1 in proptest::collection::vec("[a-c]", 0..4),
            q2 in proptest::collection::vec("[d-f]", 0..4),
        ) {
            let idx = Bm25Index::build(
                docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), d.as_str())),
                Bm25Params::default(),
            ).unwrap();
            let (q1, q2) = (q1.join(" "), q2.join(" "));
            for i in 0..docs.len() {
                let id = format!("d{i}");
                let joint = idx.score(&format!("{q1} {q2}"), &id).unwrap();
                let split = idx.score(&q1, &id).unwrap() + idx.score(&q2, &id).unwrap();
                prop_assert!((joint - split).abs() < 1e-9);
            }
        }
    }
}
