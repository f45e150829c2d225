use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProcessedCorpus;
use crate::error::{CarpError, Result};
use crate::sentiment::Sentiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = CarpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(CarpError::format("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    /// Sentiment threshold `π`.
    pub pi: f64,
    pub test_fraction: f64,
    /// Fraction of the training portion moved to validation.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 0,
            pi: 3.0,
            test_fraction: 0.2,
            validation_fraction: 0.1,
        }
    }
}

/// One review's split assignment. Entries are stored in corpus order, so
/// `entries[r]` describes review `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub label: Sentiment,
    pub split: SplitKind,
}

/// A labelled (user, item) training or evaluation example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub label: Sentiment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    /// Raw user ids by dense index.
    pub users: Vec<String>,
    /// Raw item ids by dense index.
    pub items: Vec<String>,
    pub entries: Vec<SplitEntry>,
    pub pi: f64,
}

impl SplitCorpus {
    pub fn examples(&self, kind: SplitKind) -> Vec<Example> {
        self.entries
            .iter()
            .filter(|e| e.split == kind)
            .map(|e| Example {
                user: e.user,
                item: e.item,
                rating: e.rating,
                label: e.label,
            })
            .collect()
    }

    pub fn count(&self, kind: SplitKind) -> usize {
        self.entries.iter().filter(|e| e.split == kind).count()
    }

    pub fn user_index(&self, id: &str) -> Option<u32> {
        self.users.iter().position(|u| u == id).map(|i| i as u32)
    }

    pub fn item_index(&self, id: &str) -> Option<u32> {
        self.items.iter().position(|u| u == id).map(|i| i as u32)
    }

    /// `user_index,item_index,rating,label,split` with a header row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["user_index", "item_index", "rating", "label", "split"])?;
        for e in &self.entries {
            w.write_record([
                e.user.to_string(),
                e.item.to_string(),
                e.rating.to_string(),
                e.label.as_str().to_string(),
                e.split.as_str().to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CarpError::format("split csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf8"))
    }

    pub fn entries_from_csv(text: &str) -> Result<Vec<SplitEntry>> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).ok_or_else(|| CarpError::format("split csv", "short row"));
            let parse_err = |what: &str| CarpError::format("split csv", format!("bad {what}"));
            out.push(SplitEntry {
                user: field(0)?.parse().map_err(|_| parse_err("user"))?,
                item: field(1)?.parse().map_err(|_| parse_err("item"))?,
                rating: field(2)?.parse().map_err(|_| parse_err("rating"))?,
                label: field(3)?.parse().map_err(|_| parse_err("label"))?,
                split: field(4)?.parse()?,
            });
        }
        Ok(out)
    }
}

/// Random 80:20 train/test split with 10% of train held out for validation.
///
/// Reviews of the same (user, item) pair always land in the same split. The
/// first group (in shuffled order) of every user and every item is forced
/// into train, so every user and item has training data.
pub fn split(corpus: &ProcessedCorpus, cfg: &SplitConfig) -> SplitCorpus {
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_ix: HashMap<&str, u32> = HashMap::new();
    let mut item_ix: HashMap<&str, u32> = HashMap::new();
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(corpus.len());
    for review in &corpus.reviews {
        let r = &review.record;
        let u = *user_ix.entry(r.user_id.as_str()).or_insert_with(|| {
            users.push(r.user_id.clone());
            (users.len() - 1) as u32
        });
        let i = *item_ix.entry(r.item_id.as_str()).or_insert_with(|| {
            items.push(r.item_id.clone());
            (items.len() - 1) as u32
        });
        pairs.push((u, i));
    }

    // Group reviews by pair, in first-appearance order.
    let mut group_of: HashMap<(u32, u32), usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (r, pair) in pairs.iter().enumerate() {
        let g = *group_of.entry(*pair).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }

    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);

    let mut assignment = vec![SplitKind::Train; groups.len()];
    let mut forced = vec![false; groups.len()];
    let mut user_covered = vec![false; users.len()];
    let mut item_covered = vec![false; items.len()];
    for &g in &order {
        let (u, i) = pairs[groups[g][0]];
        if !user_covered[u as usize] || !item_covered[i as usize] {
            forced[g] = true;
            user_covered[u as usize] = true;
            item_covered[i as usize] = true;
        }
    }

    let total = corpus.len();
    let test_target = (cfg.test_fraction * total as f64).round() as usize;
    let mut test_count = 0;
    for &g in &order {
        if test_count >= test_target {
            break;
        }
        if !forced[g] {
            assignment[g] = SplitKind::Test;
            test_count += groups[g].len();
        }
    }
    let train_total = total - test_count;
    let val_target = (cfg.validation_fraction * train_total as f64).round() as usize;
    let mut val_count = 0;
    for &g in &order {
        if val_count >= val_target {
            break;
        }
        if !forced[g] && assignment[g] == SplitKind::Train {
            assignment[g] = SplitKind::Validation;
            val_count += groups[g].len();
        }
    }
    if test_count < test_target || val_count < val_target {
        log::warn!(
            "split ratio deviates: test {test_count}/{test_target}, validation {val_count}/{val_target} \
             (records kept in train to cover every user and item)"
        );
    }

    let mut entries = Vec::with_capacity(total);
    let mut split_of_review = vec![SplitKind::Train; total];
    for (g, members) in groups.iter().enumerate() {
        for &r in members {
            split_of_review[r] = assignment[g];
        }
    }
    for (r, review) in corpus.reviews.iter().enumerate() {
        let (user, item) = pairs[r];
        let rating = review.record.rating;
        entries.push(SplitEntry {
            user,
            item,
            rating,
            label: Sentiment::from_rating(rating, cfg.pi),
            split: split_of_review[r],
        });
    }
    SplitCorpus {
        users,
        items,
        entries,
        pi: cfg.pi,
    }
}
