use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::stopwords::is_stopword;
use super::{ReviewCorpus, ReviewRecord};
use crate::error::{CarpError, Result};

pub const PAD_INDEX: u32 = 0;
pub const OOV_INDEX: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const OOV_TOKEN: &str = "<oov>";
const MIN_VOCAB: usize = 100;

/// Linear rescaling of raw ratings, e.g. `[4, 20] -> [1, 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRatingMap {
    pub from: (f64, f64),
    pub to: (f64, f64),
}

impl LinearRatingMap {
    pub fn apply(&self, r: f64) -> f64 {
        let (a, b) = self.from;
        let (c, d) = self.to;
        c + (r - a) * (d - c) / (b - a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Number of real words kept (padding and OOV come on top).
    pub vocab_size: usize,
    pub doc_cap: usize,
    pub remove_stopwords: bool,
    /// Words appearing in more than this fraction of reviews are removed.
    pub max_doc_freq: f64,
    /// Rating ceiling `C`.
    pub rating_max: f64,
    pub rating_map: Option<LinearRatingMap>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            vocab_size: 8000,
            doc_cap: 300,
            remove_stopwords: true,
            max_doc_freq: 0.5,
            rating_max: 5.0,
            rating_map: None,
        }
    }
}

/// Word ↔ index map. Index 0 is padding, index 1 is the shared OOV slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from real words in rank order.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        all.extend(words.into_iter().map(Into::into));
        let index = all
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocabulary { words: all, index }
    }

    /// Total size including the two reserved slots.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn index_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(OOV_INDEX)
    }

    pub fn word(&self, index: u32) -> &str {
        self.words
            .get(index as usize)
            .map(String::as_str)
            .unwrap_or(OOV_TOKEN)
    }

    /// `word<TAB>index` per line, in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            writeln!(out, "{w}\t{i}").expect("write to vec");
        }
        String::from_utf8(out).expect("utf8")
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let (word, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| CarpError::format("vocabulary", format!("line {}", lineno + 1)))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| CarpError::format("vocabulary", format!("bad index on line {}", lineno + 1)))?;
            if idx != lineno {
                return Err(CarpError::format("vocabulary", "indices are not dense"));
            }
            words.push(word.to_string());
        }
        if words.len() < 2 || words[0] != PAD_TOKEN || words[1] != OOV_TOKEN {
            return Err(CarpError::format("vocabulary", "missing reserved entries"));
        }
        Ok(Vocabulary::from_words(words.into_iter().skip(2)))
    }

    /// SHA-256 of the TSV serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_tsv().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedReview {
    pub record: ReviewRecord,
    /// Vocabulary indices of the kept tokens.
    pub tokens: Vec<u32>,
    /// Sentence index of each token.
    pub token_sentence: Vec<u32>,
    /// Raw sentences of the original review text.
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ProcessedCorpus {
    pub reviews: Vec<ProcessedReview>,
    /// Records dropped because nothing survived preprocessing.
    pub dropped_empty: usize,
}

impl ProcessedCorpus {
    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }
}

/// Lowercases and splits on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    segment(text).tokens.into_iter().map(|(t, _)| t).collect()
}

struct Segmented {
    tokens: Vec<(String, u32)>,
    sentences: Vec<String>,
}

fn segment(text: &str) -> Segmented {
    let mut tokens = Vec::new();
    let mut sentences = Vec::new();
    let mut sentence = String::new();
    let mut token = String::new();

    fn flush(token: &mut String, tokens: &mut Vec<(String, u32)>, sentence_idx: usize) {
        if !token.is_empty() {
            tokens.push((std::mem::take(token), sentence_idx as u32));
        }
    }

    for ch in text.chars() {
        if ch.is_alphanumeric() {
            token.extend(ch.to_lowercase());
        } else {
            flush(&mut token, &mut tokens, sentences.len());
        }
        sentence.push(ch);
        if matches!(ch, '.' | '!' | '?' | '\n') {
            flush(&mut token, &mut tokens, sentences.len());
            let trimmed = sentence.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            sentence.clear();
        }
    }
    flush(&mut token, &mut tokens, sentences.len());
    let trimmed = sentence.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    Segmented { tokens, sentences }
}

/// Tokenizes, filters and indexes a corpus.
///
/// Stopwords (optional) and words whose review frequency exceeds
/// `max_doc_freq` are removed; records left without tokens are dropped. The
/// vocabulary keeps the `vocab_size` most frequent remaining words (ties by
/// word); other surviving words map to [`OOV_INDEX`].
pub fn preprocess(
    corpus: &ReviewCorpus,
    cfg: &PreprocessConfig,
) -> Result<(ProcessedCorpus, Vocabulary)> {
    if cfg.vocab_size < MIN_VOCAB {
        return Err(CarpError::Config(format!(
            "vocabulary cap {} is below the minimum of {MIN_VOCAB}",
            cfg.vocab_size
        )));
    }
    if cfg.doc_cap == 0 {
        return Err(CarpError::Config("document cap must be positive".into()));
    }

    let mut segmented = Vec::with_capacity(corpus.len());
    for record in &corpus.records {
        let mut record = record.clone();
        if let Some(map) = cfg.rating_map {
            record.rating = map.apply(record.rating);
        }
        if !(1.0..=cfg.rating_max).contains(&record.rating) {
            return Err(CarpError::RatingOutOfRange {
                user: record.user_id,
                item: record.item_id,
                rating: record.rating,
                max: cfg.rating_max,
            });
        }
        let mut seg = segment(&record.text);
        if cfg.remove_stopwords {
            seg.tokens.retain(|(t, _)| !is_stopword(t));
        }
        segmented.push((record, seg));
    }

    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for (_, seg) in &segmented {
        let mut seen: Vec<&str> = seg.tokens.iter().map(|(t, _)| t.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *doc_freq.entry(w).or_default() += 1;
        }
    }
    let n_docs = segmented.len() as f64;
    let too_common: std::collections::HashSet<String> = doc_freq
        .iter()
        .filter(|(_, &df)| df as f64 > cfg.max_doc_freq * n_docs)
        .map(|(w, _)| w.to_string())
        .collect();
    drop(doc_freq);

    let mut dropped_empty = 0;
    let mut kept = Vec::with_capacity(segmented.len());
    for (record, mut seg) in segmented {
        seg.tokens.retain(|(t, _)| !too_common.contains(t));
        if seg.tokens.is_empty() {
            dropped_empty += 1;
        } else {
            kept.push((record, seg));
        }
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (_, seg) in &kept {
        for (t, _) in &seg.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(cfg.vocab_size);
    let vocab = Vocabulary::from_words(ranked.iter().map(|(w, _)| w.to_string()));

    let reviews = kept
        .into_iter()
        .map(|(record, seg)| {
            let (tokens, token_sentence) = seg
                .tokens
                .iter()
                .map(|(t, s)| (vocab.index_of(t), *s))
                .unzip();
            ProcessedReview {
                record,
                tokens,
                token_sentence,
                sentences: seg.sentences,
            }
        })
        .collect();
    if dropped_empty > 0 {
        log::info!("dropped {dropped_empty} record(s) with empty preprocessed review");
    }
    Ok((
        ProcessedCorpus {
            reviews,
            dropped_empty,
        },
        vocab,
    ))
}
