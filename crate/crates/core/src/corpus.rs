//! Events, paragraphs and sentence segmentation.
//!
//! A corpus file is UTF-8 JSON-lines with two record kinds, in any order:
//!
//! ```text
//! {"type":"event","event_id":"e1","headline":"...","gold_paragraph_ids":["p1"]}
//! {"type":"paragraph","paragraph_id":"p1","event_id":"e1","text":"...","sentences":["..."],"relevant":true}
//! ```
//!
//! `sentences` is optional. When present it is trusted verbatim (after checking it
//! still spells out `text`); otherwise [`segment_sentences`] is applied.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paragraphs above this many whitespace tokens trigger a warning at load time.
pub const PARAGRAPH_TOKEN_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    /// The query used for retrieval.
    pub headline: String,
    pub gold_paragraph_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub paragraph_id: String,
    pub event_id: String,
    pub text: String,
    pub sentences: Vec<String>,
    pub relevant: bool,
}

/// A sentence addressed by its paragraph and position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SentenceRef {
    pub paragraph_id: String,
    pub index: usize,
}

impl SentenceRef {
    pub fn new(paragraph_id: impl Into<String>, index: usize) -> Self {
        SentenceRef { paragraph_id: paragraph_id.into(), index }
    }

    /// Key under which the sentence's vector is stored: `<paragraph_id>#<index>`.
    pub fn embedding_key(&self) -> String {
        format!("{}#{}", self.paragraph_id, self.index)
    }
}

impl fmt::Display for SentenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.paragraph_id, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub num_events: usize,
    pub num_paragraphs: usize,
    pub avg_sentences_per_paragraph: f64,
    pub avg_words_per_paragraph: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Line {
    Event {
        event_id: String,
        headline: String,
        #[serde(default)]
        gold_paragraph_ids: Vec<String>,
    },
    Paragraph {
        paragraph_id: String,
        event_id: String,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sentences: Option<Vec<String>>,
        relevant: bool,
    },
}

/// Immutable, validated collection of events and paragraphs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    events: Vec<EventRecord>,
    paragraphs: Vec<ParagraphRecord>,
    event_index: HashMap<String, usize>,
    paragraph_index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, enforcing id uniqueness, gold-id resolution and sentence invariants.
    pub fn new(events: Vec<EventRecord>, paragraphs: Vec<ParagraphRecord>) -> Result<Self> {
        let mut paragraph_index = HashMap::with_capacity(paragraphs.len());
        for (i, p) in paragraphs.iter().enumerate() {
            validate_paragraph(p)?;
            if paragraph_index.insert(p.paragraph_id.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "paragraph", id: p.paragraph_id.clone() });
            }
        }
        let mut event_index = HashMap::with_capacity(events.len());
        for (i, e) in events.iter().enumerate() {
            if e.headline.trim().is_empty() {
                return Err(Error::InvalidRecord(format!("event `{}` has an empty headline", e.event_id)));
            }
            if event_index.insert(e.event_id.clone(), i).is_some() {
                return Err(Error::DuplicateId { kind: "event", id: e.event_id.clone() });
            }
            if let Some(missing) = e.gold_paragraph_ids.iter().find(|id| !paragraph_index.contains_key(*id)) {
                return Err(Error::DanglingReference { event_id: e.event_id.clone(), paragraph_id: missing.clone() });
            }
        }
        Ok(Corpus { events, paragraphs, event_index, paragraph_index })
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn paragraphs(&self) -> &[ParagraphRecord] {
        &self.paragraphs
    }

    pub fn event(&self, event_id: &str) -> Option<&EventRecord> {
        self.event_index.get(event_id).map(|&i| &self.events[i])
    }

    pub fn paragraph(&self, paragraph_id: &str) -> Option<&ParagraphRecord> {
        self.paragraph_index.get(paragraph_id).map(|&i| &self.paragraphs[i])
    }

    /// Event ids in ascending order; the iteration order used by every experiment.
    pub fn sorted_event_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.events.iter().map(|e| e.event_id.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    /// Paragraphs not labelled relevant for `event`; together with the gold set they
    /// partition the corpus.
    pub fn negatives<'a>(&'a self, event: &'a EventRecord) -> impl Iterator<Item = &'a str> + 'a {
        self.paragraphs
            .iter()
            .map(|p| p.paragraph_id.as_str())
            .filter(move |id| !event.gold_paragraph_ids.contains(*id))
    }

    /// Every sentence of `paragraph_id`, in order.
    pub fn sentence_refs(&self, paragraph_id: &str) -> Result<Vec<SentenceRef>> {
        let p = self.paragraph(paragraph_id).ok_or_else(|| Error::UnknownDocument(paragraph_id.to_string()))?;
        Ok((0..p.sentences.len()).map(|i| SentenceRef::new(paragraph_id, i)).collect())
    }

    pub fn sentence(&self, sentence: &SentenceRef) -> Option<&str> {
        self.paragraph(&sentence.paragraph_id).and_then(|p| p.sentences.get(sentence.index)).map(String::as_str)
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    /// Writes the corpus in the JSON-lines format accepted by [`load_corpus`]:
    /// events first, then paragraphs, with explicit sentences.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let lines = self
            .events
            .iter()
            .map(|e| Line::Event {
                event_id: e.event_id.clone(),
                headline: e.headline.clone(),
                gold_paragraph_ids: e.gold_paragraph_ids.iter().cloned().collect(),
            })
            .chain(self.paragraphs.iter().map(|p| Line::Paragraph {
                paragraph_id: p.paragraph_id.clone(),
                event_id: p.event_id.clone(),
                text: p.text.clone(),
                sentences: Some(p.sentences.clone()),
                relevant: p.relevant,
            }));
        for line in lines {
            let json = serde_json::to_string(&line).expect("corpus records serialize");
            writeln!(out, "{json}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn strip_ws(s: &str) -> impl Iterator<Item = char> + '_ {
    s.chars().filter(|c| !c.is_whitespace())
}

fn validate_paragraph(p: &ParagraphRecord) -> Result<()> {
    if p.sentences.is_empty() {
        return Err(Error::InvalidRecord(format!("paragraph `{}` has no sentences", p.paragraph_id)));
    }
    if p.sentences.iter().any(|s| s.trim().is_empty()) {
        return Err(Error::InvalidRecord(format!("paragraph `{}` contains an empty sentence", p.paragraph_id)));
    }
    let joined = p.sentences.iter().flat_map(|s| strip_ws(s));
    if !joined.eq(strip_ws(&p.text)) {
        return Err(Error::InvalidRecord(format!(
            "paragraph `{}`: sentences do not reproduce the paragraph text",
            p.paragraph_id
        )));
    }
    Ok(())
}

/// Loads and validates a JSON-lines corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    let mut paragraphs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Line = serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e))?;
        match record {
            Line::Event { event_id, headline, gold_paragraph_ids } => {
                let count = gold_paragraph_ids.len();
                let gold: BTreeSet<String> = gold_paragraph_ids.into_iter().collect();
                if gold.len() != count {
                    log::warn!("event `{event_id}` lists a gold paragraph more than once");
                }
                events.push(EventRecord { event_id, headline, gold_paragraph_ids: gold });
            }
            Line::Paragraph { paragraph_id, event_id, text, sentences, relevant } => {
                let tokens = text.split_whitespace().count();
                if tokens > PARAGRAPH_TOKEN_CAP {
                    log::warn!("paragraph `{paragraph_id}` has {tokens} tokens (cap {PARAGRAPH_TOKEN_CAP})");
                }
                let sentences = sentences.unwrap_or_else(|| segment_sentences(&text));
                paragraphs.push(ParagraphRecord { paragraph_id, event_id, text, sentences, relevant });
            }
        }
    }
    Corpus::new(events, paragraphs)
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let n = corpus.paragraphs.len();
    let (sentences, words) = corpus
        .paragraphs
        .iter()
        .fold((0usize, 0usize), |(s, w), p| (s + p.sentences.len(), w + p.text.split_whitespace().count()));
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    CorpusStats {
        num_events: corpus.events.len(),
        num_paragraphs: n,
        avg_sentences_per_paragraph: mean(sentences),
        avg_words_per_paragraph: mean(words),
    }
}

/// Lower-cased tokens (without the trailing period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "vs", "etc", "inc", "ltd", "co", "corp", "gen",
    "gov", "sen", "rep", "lt", "col", "capt", "sgt", "jan", "feb", "apr", "jun", "jul", "aug", "sep", "sept", "oct",
    "nov", "dec", "e.g", "i.e", "u.s", "u.k", "a.m", "p.m", "approx", "dept", "est", "fig", "no",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closing(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201D}' | '\u{2019}' | ')' | ']')
}

fn is_opening_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201C}' | '\u{2018}')
}

fn ends_with_abbreviation(before: &str) -> bool {
    let word =
        before.rsplit(char::is_whitespace).next().unwrap_or("").trim_start_matches(|c: char| !c.is_alphanumeric());
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Rule-based sentence splitter.
///
/// A boundary is a run of `.`, `!` or `?` (plus any closing quotes or brackets),
/// followed by whitespace and then an uppercase letter or an opening quote. A period
/// ending a known abbreviation (`Dr.`, `U.S.`, ...) is not a boundary.
pub fn segment_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    let push = |from: usize, to: usize, out: &mut Vec<String>| {
        let s = text[from..to].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    };
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && (is_terminator(chars[j].1) || is_closing(chars[j].1)) {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
        if j == chars.len() {
            push(start, end, &mut sentences);
            start = end;
            break;
        }
        if !chars[j].1.is_whitespace() {
            i = j;
            continue;
        }
        let mut m = j;
        while m < chars.len() && chars[m].1.is_whitespace() {
            m += 1;
        }
        let opens_sentence = chars.get(m).is_some_and(|&(_, n)| n.is_uppercase() || is_opening_quote(n));
        let abbreviation = c == '.' && j == i + 1 && ends_with_abbreviation(&text[start..pos]);
        if opens_sentence && !abbreviation {
            push(start, end, &mut sentences);
            start = chars[m].0;
        }
        i = m;
    }
    if start < text.len() {
        push(start, text.len(), &mut sentences);
    }
    sentences
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paragraph(id: &str, event: &str, text: &str) -> ParagraphRecord {
        ParagraphRecord {
            paragraph_id: id.into(),
            event_id: event.into(),
            text: text.into(),
            sentences: segment_sentences(text),
            relevant: true,
        }
    }

    fn event(id: &str, gold: &[&str]) -> EventRecord {
        EventRecord {
            event_id: id.into(),
            headline: "Something happened".into(),
            gold_paragraph_ids: gold.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(segment_sentences("A. B? C!"), vec!["A.", "B?", "C!"]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(segment_sentences("Dr. Smith arrived. He left."), vec!["Dr. Smith arrived.", "He left."]);
        assert_eq!(
            segment_sentences("Officials in the U.S. Senate agreed. Talks resume Monday."),
            vec!["Officials in the U.S. Senate agreed.", "Talks resume Monday."]
        );
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(segment_sentences("one sentence no period"), vec!["one sentence no period"]);
    }

    #[test]
    fn whitespace_only_yields_nothing() {
        assert!(segment_sentences("  \n\t ").is_empty());
    }

    #[test]
    fn lowercase_continuation_and_quotes() {
        assert_eq!(
            segment_sentences("It cost 3.5 million. officials said so."),
            vec!["It cost 3.5 million. officials said so."]
        );
        assert_eq!(
            segment_sentences("He said \"stop.\" \"Why?\" she asked."),
            vec!["He said \"stop.\"", "\"Why?\" she asked."]
        );
        assert_eq!(segment_sentences("Wait... What?!"), vec!["Wait...", "What?!"]);
    }

    #[test]
    fn stats_average_over_paragraphs() {
        let corpus = Corpus::new(
            vec![event("e1", &["p1"])],
            vec![paragraph("p1", "e1", "One. Two. Three."), paragraph("p2", "e1", "A b. C d. E f. G h. I j.")],
        )
        .unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.num_events, 1);
        assert_eq!(stats.num_paragraphs, 2);
        assert_eq!(stats.avg_sentences_per_paragraph, 4.0);
        assert_eq!(stats.avg_words_per_paragraph, 6.5);
    }

    #[test]
    fn empty_corpus_stats_are_zero() {
        let stats = corpus_stats(&Corpus::new(vec![], vec![]).unwrap());
        assert_eq!(stats.num_events, 0);
        assert_eq!(stats.num_paragraphs, 0);
        assert_eq!(stats.avg_sentences_per_paragraph, 0.0);
        assert_eq!(stats.avg_words_per_paragraph, 0.0);
    }

    #[test]
    fn rejects_dangling_gold_and_duplicates() {
        let err = Corpus::new(vec![event("e1", &["p9"])], vec![paragraph("p1", "e1", "x")]).unwrap_err();
        assert!(matches!(err, Error::DanglingReference { .. }), "{err}");

        let err = Corpus::new(vec![], vec![paragraph("p1", "e1", "x"), paragraph("p1", "e1", "y")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "paragraph", .. }));

        let err = Corpus::new(vec![event("e1", &[]), event("e1", &[])], vec![]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "event", .. }));
    }

    #[test]
    fn rejects_sentences_that_do_not_spell_text() {
        let mut p = paragraph("p1", "e1", "Alpha. Beta.");
        p.sentences = vec!["Alpha.".into(), "Gamma.".into()];
        assert!(Corpus::new(vec![], vec![p]).is_err());
        let mut p = paragraph("p1", "e1", "Alpha.");
        p.sentences.clear();
        assert!(Corpus::new(vec![], vec![p]).is_err());
    }

    #[test]
    fn negatives_and_gold_partition_paragraphs() {
        let corpus = Corpus::new(
            vec![event("e1", &["p1", "p3"])],
            vec![paragraph("p1", "e1", "a"), paragraph("p2", "e2", "b"), paragraph("p3", "e1", "c")],
        )
        .unwrap();
        let e = corpus.event("e1").unwrap();
        let mut all: Vec<&str> = corpus.negatives(e).collect();
        assert_eq!(all, vec!["p2"]);
        all.extend(e.gold_paragraph_ids.iter().map(String::as_str));
        all.sort_unstable();
        assert_eq!(all, vec!["p1", "p2", "p3"]);
    }

    proptest! {
        #[test]
        fn segmentation_covers_input(text in "[A-Za-z .!?\"]{0,80}") {
            let sentences = segment_sentences(&text);
            prop_assert!(sentences.iter().all(|s| !s.is_empty()));
            let joined: String = sentences.iter().flat_map(|s| strip_ws(s)).collect();
            let original: String = strip_ws(&text).collect();
            prop_assert_eq!(joined, original);
        }

        #[test]
        fn segmentation_is_idempotent(text in "[A-Za-z .!?\"]{1,80}") {
            for s in segment_sentences(&text) {
                prop_assert_eq!(segment_sentences(&s), vec![s.clone()]);
            }
        }
    }
}
