#![allow(dead_code)]

use carp_core::corpus::{Document, DocumentBank, Example};
use carp_core::{ModelConfig, ReviewCorpus, ReviewRecord, RoutingKind, Sentiment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// l ≤ 8, M = 2, k = 3, τ = 2.
pub fn tiny_config(routing: RoutingKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 14,
        users: 3,
        items: 3,
        embed_dim: 4,
        filters: 3,
        window: 3,
        latent: 3,
        slots: 2,
        iterations: 2,
        routing,
        keep_prob: 0.9,
        rating_max: 5.0,
    }
}

pub fn tiny_bank() -> DocumentBank {
    DocumentBank {
        cap: 8,
        users: vec![
            Document::from_tokens(&[2, 3, 4, 5, 1, 6], 8),
            Document::from_tokens(&[7, 8, 9], 8),
            Document::from_tokens(&[10, 11, 12, 13, 2, 3, 4, 5], 8),
        ],
        items: vec![
            Document::from_tokens(&[13, 12, 11, 10, 9], 8),
            Document::from_tokens(&[1, 4, 6, 8], 8),
            Document::from_tokens(&[2, 5, 7, 9, 11, 13, 3], 8),
        ],
    }
}

pub fn example(user: u32, item: u32, rating: f64) -> Example {
    Example {
        user,
        item,
        rating,
        label: Sentiment::from_rating(rating, 3.0),
    }
}

pub fn tiny_batch() -> Vec<Example> {
    vec![
        example(0, 0, 5.0),
        example(1, 0, 2.0),
        example(2, 1, 4.0),
        example(0, 2, 1.0),
        example(2, 2, 3.0),
    ]
}

const POSITIVE: &[&str] = &["superb", "sturdy", "crisp", "reliable", "warm", "bright"];
const NEGATIVE: &[&str] = &["flimsy", "noisy", "broken", "dull", "buzzing", "cheap"];

/// A corpus of `records` reviews over a handful of users and items. Ratings
/// follow a hidden user-item affinity and the review text leans on
/// sentiment words matching the rating.
pub fn synthetic_corpus(records: usize, users: usize, items: usize, seed: u64) -> ReviewCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taste: Vec<f64> = (0..users).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let quality: Vec<f64> = (0..items).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut t = 0i64;
    while out.len() < records {
        let u = rng.gen_range(0..users);
        let i = rng.gen_range(0..items);
        if !seen.insert((u, i)) {
            continue;
        }
        let score = 3.4 + 1.2 * (taste[u] + quality[i]) + rng.gen_range(-0.5..0.5);
        let rating = score.round().clamp(1.0, 5.0);
        let pool = if rating > 3.0 { POSITIVE } else { NEGATIVE };
        let mut words = Vec::new();
        for s in 0..rng.gen_range(2..4) {
            for _ in 0..rng.gen_range(3..7) {
                words.push(format!("filler{}", rng.gen_range(0..150)));
            }
            words.push(pool[rng.gen_range(0..pool.len())].to_string());
            words.push(format!("item{i}part{}", s % 2));
            words.push(".".to_string());
        }
        t += 1;
        out.push(ReviewRecord {
            user_id: format!("U{u:03}"),
            item_id: format!("I{i:03}"),
            rating,
            text: words.join(" ").replace(" .", "."),
            timestamp: Some(1_400_000_000 + t),
        });
    }
    ReviewCorpus::new(out)
}

/// Smallest `|pre-activation|` of any convolution output over the bank.
/// Finite differences with step `h` are only meaningful when this exceeds
/// `h` by a wide margin (ReLU kink).
pub fn relu_margin(model: &carp_core::Model, bank: &DocumentBank) -> f64 {
    use carp_core::encoder::{convolve, embed};
    let mut margin = f64::INFINITY;
    let sides = [(&model.params.user, &bank.users), (&model.params.item, &bank.items)];
    for (p, docs) in sides {
        for doc in docs {
            let e = embed(&p.embedding, doc.active());
            let shifted = &p.conv_bias + 1000.0;
            let mask = vec![true; doc.len];
            let out = convolve(e.view(), &mask, p.conv_weight.view(), shifted.view(), model.config.window);
            margin = out.iter().fold(margin, |m, x| m.min((x - 1000.0).abs()));
        }
    }
    margin
}
