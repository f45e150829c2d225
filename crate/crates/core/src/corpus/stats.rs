use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DocumentBank, ProcessedCorpus, SplitCorpus};
use crate::sentiment::Sentiment;

/// Dataset summary in the shape of a standard recommender statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub words_per_review: f64,
    pub words_per_user: f64,
    pub words_per_item: f64,
    /// `|pos| / |neg|`; infinite when there are no negative ratings
    /// (serialized as `null`).
    pub pos_neg_ratio: f64,
    /// `ratings / (users * items)` as a fraction (not a percentage).
    pub density: f64,
    /// Mean true length of the truncated user documents.
    pub user_document_len: f64,
    pub item_document_len: f64,
}

/// Word counts are over all preprocessed reviews; document lengths come from
/// the bank.
pub fn corpus_stats(split: &SplitCorpus, corpus: &ProcessedCorpus, bank: &DocumentBank) -> StatsReport {
    let users = split.users.len();
    let items = split.items.len();
    let ratings = split.entries.len();
    let mut user_words: HashMap<u32, usize> = HashMap::new();
    let mut item_words: HashMap<u32, usize> = HashMap::new();
    let mut total_words = 0usize;
    for (entry, review) in split.entries.iter().zip(&corpus.reviews) {
        let n = review.tokens.len();
        total_words += n;
        *user_words.entry(entry.user).or_default() += n;
        *item_words.entry(entry.item).or_default() += n;
    }
    let pos = split.entries.iter().filter(|e| e.label == Sentiment::Pos).count();
    let neg = ratings - pos;
    let mean = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let doc_mean = |docs: &[super::Document]| mean(docs.iter().map(|d| d.len).sum(), docs.len());
    StatsReport {
        users,
        items,
        ratings,
        words_per_review: mean(total_words, ratings),
        words_per_user: mean(total_words, users),
        words_per_item: mean(total_words, items),
        pos_neg_ratio: if neg == 0 { f64::INFINITY } else { pos as f64 / neg as f64 },
        density: mean(ratings, users * items),
        user_document_len: doc_mean(&bank.users),
        item_document_len: doc_mean(&bank.items),
    }
}
