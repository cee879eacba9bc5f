//! Seeded synthetic benchmark: events with latent aspects, paragraphs built from
//! aspect sentences, and background paragraphs that belong to no event.
//!
//! Sentence vectors are noisy copies of their aspect direction, so sentences of
//! one aspect sit well inside the default extraction eps of each other while
//! distinct aspects are nearly orthogonal. Aspect popularity is Zipf-like, which
//! makes relevance-only rankings redundant in the way real news pools are.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus::{Corpus, EventRecord, ParagraphRecord, SentenceRef};
use crate::embed::{EmbeddingKind, EmbeddingStore, Vector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub events: usize,
    pub relevant_per_event: usize,
    pub background_paragraphs: usize,
    pub aspects_per_event: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub dim: usize,
    /// Scale of the per-sentence perturbation around its aspect direction.
    pub sentence_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            events: 5,
            relevant_per_event: 30,
            background_paragraphs: 100,
            aspects_per_event: 12,
            min_sentences: 4,
            max_sentences: 10,
            dim: 64,
            sentence_noise: 0.5,
            seed: 7,
        }
    }
}

pub struct SyntheticData {
    pub corpus: Corpus,
    pub headlines: EmbeddingStore,
    pub paragraphs: EmbeddingStore,
    pub sentences: EmbeddingStore,
}

const FILLER: &[&str] = &[
    "officials",
    "residents",
    "council",
    "river",
    "crowd",
    "police",
    "budget",
    "school",
    "storm",
    "market",
    "hospital",
    "bridge",
    "mayor",
    "court",
    "festival",
    "traffic",
];

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    normalize(v)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / norm).collect()
}

fn combine(parts: &[(f64, &[f64])]) -> Vec<f64> {
    let dim = parts[0].1.len();
    let mut out = vec![0.0; dim];
    for (w, v) in parts {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    normalize(out)
}

fn to_vector(v: &[f64]) -> Vector {
    Vector::new(v.iter().map(|&x| x as f32).collect()).expect("synthetic vectors are finite")
}

fn filler(rng: &mut ChaCha8Rng) -> &'static str {
    FILLER[rng.random_range(0..FILLER.len())]
}

struct Builder {
    rng: ChaCha8Rng,
    spec: SyntheticSpec,
    paragraphs: Vec<ParagraphRecord>,
    paragraph_store: EmbeddingStore,
    sentence_store: EmbeddingStore,
}

impl Builder {
    /// Adds one paragraph whose sentences are drawn from `pick` (aspect index and
    /// direction) and phrased with `phrase`.
    fn paragraph(
        &mut self,
        id: String,
        event_id: String,
        relevant: bool,
        directions: &[Vec<f64>],
        weights: &WeightedIndex<f64>,
        phrase: impl Fn(usize, usize, &mut ChaCha8Rng) -> String,
    ) -> Result<()> {
        let n = self.rng.random_range(self.spec.min_sentences..=self.spec.max_sentences);
        let mut sentences = Vec::with_capacity(n);
        let mut sum = vec![0.0; self.spec.dim];
        for i in 0..n {
            let aspect = weights.sample(&mut self.rng);
            let noise = gaussian_unit(&mut self.rng, self.spec.dim);
            let v = combine(&[(1.0, &directions[aspect]), (self.spec.sentence_noise, &noise)]);
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
            self.sentence_store.insert(SentenceRef::new(id.clone(), i).embedding_key(), to_vector(&v))?;
            sentences.push(phrase(aspect, i, &mut self.rng));
        }
        self.paragraph_store.insert(id.clone(), to_vector(&normalize(sum)))?;
        self.paragraphs.push(ParagraphRecord {
            paragraph_id: id,
            event_id,
            text: sentences.join(" "),
            sentences,
            relevant,
        });
        Ok(())
    }
}

/// Generates a benchmark; identical specs give identical data.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.dim == 0
        || spec.aspects_per_event == 0
        || spec.min_sentences == 0
        || spec.min_sentences > spec.max_sentences
    {
        return Err(Error::Config("invalid synthetic spec".into()));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        spec: spec.clone(),
        paragraphs: Vec::new(),
        paragraph_store: EmbeddingStore::new(EmbeddingKind::Paragraph, spec.dim),
        sentence_store: EmbeddingStore::new(EmbeddingKind::Sentence, spec.dim),
    };
    let mut headlines = EmbeddingStore::new(EmbeddingKind::Headline, spec.dim);
    let mut events = Vec::with_capacity(spec.events);
    let zipf =
        WeightedIndex::new((0..spec.aspects_per_event).map(|j| 1.0 / (j as f64 + 1.0))).expect("positive weights");

    for e in 0..spec.events {
        let event_id = format!("e{e:03}");
        let topic = gaussian_unit(&mut b.rng, spec.dim);
        let aspects: Vec<Vec<f64>> = (0..spec.aspects_per_event)
            .map(|_| {
                let own = gaussian_unit(&mut b.rng, spec.dim);
                combine(&[(0.5, &topic), (1.0, &own)])
            })
            .collect();
        let mut head_parts: Vec<(f64, &[f64])> = vec![(1.0, &topic)];
        head_parts.extend(aspects.iter().take(2).zip([0.5, 0.3]).map(|(a, w)| (w, a.as_slice())));
        headlines.insert(event_id.clone(), to_vector(&combine(&head_parts)))?;

        let mut gold = std::collections::BTreeSet::new();
        for p in 0..spec.relevant_per_event {
            let id = format!("{event_id}-p{p:03}");
            gold.insert(id.clone());
            b.paragraph(id, event_id.clone(), true, &aspects, &zipf, |aspect, i, rng| {
                format!("Report {i} says ev{e} asp{e}x{aspect} {} {}.", filler(rng), filler(rng))
            })?;
        }
        events.push(EventRecord {
            event_id,
            headline: format!("Ev{e} headline on asp{e}x0 and asp{e}x1"),
            gold_paragraph_ids: gold,
        });
    }

    let background: Vec<Vec<f64>> =
        (0..spec.aspects_per_event.max(8) * 4).map(|_| gaussian_unit(&mut b.rng, spec.dim)).collect();
    let uniform = WeightedIndex::new(vec![1.0; background.len()]).expect("positive weights");
    for p in 0..spec.background_paragraphs {
        b.paragraph(format!("bg-p{p:05}"), "background".into(), false, &background, &uniform, |topic, i, rng| {
            format!("Notice {i} about bg{topic} {} {}.", filler(rng), filler(rng))
        })?;
    }

    Ok(SyntheticData {
        corpus: Corpus::new(events, b.paragraphs)?,
        headlines,
        paragraphs: b.paragraph_store,
        sentences: b.sentence_store,
    })
}

/// File names used by [`SyntheticData::write`].
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const HEADLINES_FILE: &str = "headlines.bin";
pub const PARAGRAPHS_FILE: &str = "paragraphs.bin";
pub const SENTENCES_FILE: &str = "sentences.bin";

impl SyntheticData {
    /// Writes the corpus and the three binary embedding files into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.corpus.write_jsonl(dir.join(CORPUS_FILE))?;
        self.headlines.write_binary(dir.join(HEADLINES_FILE))?;
        self.paragraphs.write_binary(dir.join(PARAGRAPHS_FILE))?;
        self.sentences.write_binary(dir.join(SENTENCES_FILE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine_similarity;

    #[test]
    fn deterministic_and_consistent() {
        let spec = SyntheticSpec { events: 2, relevant_per_event: 5, background_paragraphs: 4, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.sentences, b.sentences);
        assert_eq!(a.corpus.paragraphs().len(), 14);
        assert_eq!(a.paragraphs.len(), 14);
        let sentences: usize = a.corpus.paragraphs().iter().map(|p| p.sentences.len()).sum();
        assert_eq!(a.sentences.len(), sentences);
        assert_eq!(a.headlines.len(), 2);
    }

    #[test]
    fn relevant_paragraphs_are_closer_to_their_headline() {
        let data = generate(&SyntheticSpec::default()).unwrap();
        let h = data.headlines.require("e000").unwrap();
        let rel = cosine_similarity(h, data.paragraphs.require("e000-p000").unwrap()).unwrap();
        let bg = cosine_similarity(h, data.paragraphs.require("bg-p00000").unwrap()).unwrap();
        assert!(rel > bg + 0.2, "relevant {rel} vs background {bg}");
    }
}
