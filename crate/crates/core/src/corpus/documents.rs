use serde::{Deserialize, Serialize};

use super::{ProcessedCorpus, SplitCorpus, SplitKind, PAD_INDEX};

/// Where a document position came from: review index and sentence index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub review: u32,
    pub sentence: u32,
}

/// A fixed-length, padded token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Exactly `cap` indices; positions `len..` hold [`PAD_INDEX`].
    pub tokens: Vec<u32>,
    pub len: usize,
    /// Origin of each of the first `len` positions.
    pub origins: Vec<TokenOrigin>,
}

impl Document {
    pub fn from_tokens(tokens: &[u32], cap: usize) -> Self {
        let len = tokens.len().min(cap);
        let mut padded = tokens[..len].to_vec();
        padded.resize(cap, PAD_INDEX);
        Document {
            tokens: padded,
            len,
            origins: vec![TokenOrigin { review: 0, sentence: 0 }; len],
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.tokens.len()).map(|j| j < self.len).collect()
    }

    /// The unpadded prefix.
    pub fn active(&self) -> &[u32] {
        &self.tokens[..self.len]
    }
}

/// Per-user and per-item documents built from training reviews only.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentBank {
    pub cap: usize,
    pub users: Vec<Document>,
    pub items: Vec<Document>,
}

/// Concatenates each user's (item's) training reviews in timestamp order,
/// ties broken by corpus order, truncated to `cap` tokens.
pub fn build_documents(split: &SplitCorpus, corpus: &ProcessedCorpus, cap: usize) -> DocumentBank {
    assert_eq!(split.entries.len(), corpus.len(), "split and corpus disagree");
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); split.users.len()];
    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); split.items.len()];
    for (r, e) in split.entries.iter().enumerate() {
        if e.split == SplitKind::Train {
            by_user[e.user as usize].push(r);
            by_item[e.item as usize].push(r);
        }
    }
    let assemble = |reviews: &mut Vec<usize>, what: &str, idx: usize| -> Document {
        assert!(!reviews.is_empty(), "{what} {idx} has no training reviews");
        reviews.sort_by_key(|&r| (corpus.reviews[r].record.timestamp.unwrap_or(i64::MIN), r));
        let mut tokens = Vec::with_capacity(cap);
        let mut origins = Vec::with_capacity(cap);
        'outer: for &r in reviews.iter() {
            let review = &corpus.reviews[r];
            for (&t, &s) in review.tokens.iter().zip(&review.token_sentence) {
                if tokens.len() == cap {
                    break 'outer;
                }
                tokens.push(t);
                origins.push(TokenOrigin {
                    review: r as u32,
                    sentence: s,
                });
            }
        }
        let len = tokens.len();
        tokens.resize(cap, PAD_INDEX);
        Document { tokens, len, origins }
    };
    let users = by_user
        .iter_mut()
        .enumerate()
        .map(|(u, rs)| assemble(rs, "user", u))
        .collect();
    let items = by_item
        .iter_mut()
        .enumerate()
        .map(|(i, rs)| assemble(rs, "item", i))
        .collect();
    DocumentBank { cap, users, items }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ProcessedReview, ReviewRecord, SplitEntry};
    use crate::sentiment::Sentiment;

    fn review(user: &str, item: &str, tokens: Vec<u32>, ts: Option<i64>) -> ProcessedReview {
        let n = tokens.len();
        ProcessedReview {
            record: ReviewRecord {
                user_id: user.into(),
                item_id: item.into(),
                rating: 4.0,
                text: String::new(),
                timestamp: ts,
            },
            tokens,
            token_sentence: vec![0; n],
            sentences: vec![String::new()],
        }
    }

    fn fixture(reviews: Vec<ProcessedReview>, splits: &[SplitKind], users: usize, items: usize) -> (ProcessedCorpus, SplitCorpus) {
        let mut user_names = Vec::new();
        let mut item_names = Vec::new();
        let entries = reviews
            .iter()
            .zip(splits)
            .map(|(r, &split)| {
                let pos = |names: &mut Vec<String>, id: &str| match names.iter().position(|n| n == id) {
                    Some(p) => p as u32,
                    None => {
                        names.push(id.into());
                        (names.len() - 1) as u32
                    }
                };
                SplitEntry {
                    user: pos(&mut user_names, &r.record.user_id),
                    item: pos(&mut item_names, &r.record.item_id),
                    rating: r.record.rating,
                    label: Sentiment::Pos,
                    split,
                }
            })
            .collect();
        assert_eq!(user_names.len(), users);
        assert_eq!(item_names.len(), items);
        (
            ProcessedCorpus {
                reviews,
                dropped_empty: 0,
            },
            SplitCorpus {
                users: user_names,
                items: item_names,
                entries,
                pi: 3.0,
            },
        )
    }

    #[test]
    fn long_reviews_are_truncated_at_cap() {
        let (corpus, split) = fixture(
            vec![review("u", "a", vec![2; 200], Some(1)), review("u", "b", vec![3; 250], Some(2))],
            &[SplitKind::Train, SplitKind::Train],
            1,
            2,
        );
        let bank = build_documents(&split, &corpus, 300);
        let doc = &bank.users[0];
        assert_eq!(doc.tokens.len(), 300);
        assert_eq!(doc.len, 300);
        assert!(doc.mask().iter().all(|&m| m));
        assert_eq!(doc.tokens[199], 2);
        assert_eq!(doc.tokens[200], 3);
    }

    #[test]
    fn short_document_is_padded() {
        let (corpus, split) = fixture(vec![review("u", "a", (2..12).collect(), None)], &[SplitKind::Train], 1, 1);
        let bank = build_documents(&split, &corpus, 300);
        let doc = &bank.users[0];
        assert_eq!(doc.tokens.len(), 300);
        let mask = doc.mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 10);
        assert!(mask[..10].iter().all(|&m| m));
        assert!(doc.tokens[10..].iter().all(|&t| t == PAD_INDEX));
    }

    #[test]
    fn timestamp_order_then_input_order() {
        let (corpus, split) = fixture(
            vec![
                review("u", "a", vec![5], Some(9)),
                review("u", "b", vec![6], Some(3)),
                review("u", "c", vec![7], Some(3)),
            ],
            &[SplitKind::Train; 3],
            1,
            3,
        );
        let bank = build_documents(&split, &corpus, 10);
        assert_eq!(bank.users[0].active(), [6, 7, 5]);
        assert_eq!(bank.users[0].origins[0].review, 1);
    }

    #[test]
    fn held_out_reviews_are_excluded() {
        let (corpus, split) = fixture(
            vec![
                review("u", "a", vec![2, 3], None),
                review("u", "b", vec![99], None),
                review("v", "b", vec![4], None),
            ],
            &[SplitKind::Train, SplitKind::Test, SplitKind::Train],
            2,
            2,
        );
        let bank = build_documents(&split, &corpus, 10);
        for doc in bank.users.iter().chain(&bank.items) {
            assert!(!doc.active().contains(&99));
        }
    }
}
