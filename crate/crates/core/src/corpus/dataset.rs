//! On-disk dataset directory.
//!
//! ```text
//! meta.json        preprocessing + split settings, vocabulary hash
//! vocab.tsv        word<TAB>index, one per line
//! users.tsv        index<TAB>raw user id
//! items.tsv        index<TAB>raw item id
//! splits.csv       user_index,item_index,rating,label,split (one row per review)
//! documents.bin    little-endian u32 arrays, described by documents.json
//! documents.json   {"dtype": "u32le", "arrays": [{"name", "shape", "offset"}]}
//! reviews.jsonl    sentences of each review, used by explanation reports
//! stats.json       dataset statistics
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    build_documents, corpus_stats, preprocess, split, Document, DocumentBank, PreprocessConfig,
    ReviewCorpus, SplitConfig, SplitCorpus, StatsReport, TokenOrigin, Vocabulary,
};
use crate::error::{CarpError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSentences {
    pub user: u32,
    pub item: u32,
    pub sentences: Vec<String>,
}

/// Everything training, evaluation and explanation need from the corpus.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub meta: DatasetMeta,
    pub vocab: Vocabulary,
    pub split: SplitCorpus,
    pub bank: DocumentBank,
    pub reviews: Vec<ReviewSentences>,
    pub stats: StatsReport,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct DocumentsManifest {
    dtype: String,
    cap: usize,
    arrays: Vec<ArrayEntry>,
}

impl PreparedDataset {
    pub fn prepare(corpus: &ReviewCorpus, pre: &PreprocessConfig, split_cfg: &SplitConfig) -> Result<Self> {
        let (processed, vocab) = preprocess(corpus, pre)?;
        let split = split(&processed, split_cfg);
        let bank = build_documents(&split, &processed, pre.doc_cap);
        let stats = corpus_stats(&split, &processed, &bank);
        let reviews = processed
            .reviews
            .iter()
            .zip(&split.entries)
            .map(|(r, e)| ReviewSentences {
                user: e.user,
                item: e.item,
                sentences: r.sentences.clone(),
            })
            .collect();
        let meta = DatasetMeta {
            preprocess: pre.clone(),
            split: *split_cfg,
            vocab_hash: vocab.hash(),
            vocab_size: vocab.len(),
            users: split.users.len(),
            items: split.items.len(),
        };
        Ok(PreparedDataset {
            meta,
            vocab,
            split,
            bank,
            reviews,
            stats,
        })
    }

    /// Source sentence for a document position, if the position is real.
    pub fn sentence_at(&self, origin: TokenOrigin) -> Option<&str> {
        self.reviews
            .get(origin.review as usize)
            .and_then(|r| r.sentences.get(origin.sentence as usize))
            .map(String::as_str)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CarpError::io(dir, e))?;
        let write = |name: &str, contents: &[u8]| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, contents).map_err(|e| CarpError::io(p, e))
        };
        write("meta.json", serde_json::to_string_pretty(&self.meta)?.as_bytes())?;
        write("stats.json", serde_json::to_string_pretty(&self.stats)?.as_bytes())?;
        write("vocab.tsv", self.vocab.to_tsv().as_bytes())?;
        write("users.tsv", index_tsv(&self.split.users).as_bytes())?;
        write("items.tsv", index_tsv(&self.split.items).as_bytes())?;
        write("splits.csv", self.split.to_csv()?.as_bytes())?;

        let mut lines = String::new();
        for r in &self.reviews {
            lines.push_str(&serde_json::to_string(r)?);
            lines.push('\n');
        }
        write("reviews.jsonl", lines.as_bytes())?;

        let (manifest, blob) = encode_bank(&self.bank);
        write("documents.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        write("documents.bin", &blob)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| CarpError::io(p, e))
        };
        let meta: DatasetMeta = serde_json::from_str(&read("meta.json")?)?;
        let stats: StatsReport = serde_json::from_str(&read("stats.json")?)?;
        let vocab = Vocabulary::from_tsv(&read("vocab.tsv")?)?;
        if vocab.hash() != meta.vocab_hash {
            return Err(CarpError::VocabularyMismatch {
                expected: meta.vocab_hash,
                found: vocab.hash(),
            });
        }
        let users = parse_index_tsv(&read("users.tsv")?)?;
        let items = parse_index_tsv(&read("items.tsv")?)?;
        let entries = SplitCorpus::entries_from_csv(&read("splits.csv")?)?;
        let split = SplitCorpus {
            users,
            items,
            entries,
            pi: meta.split.pi,
        };
        let reviews = read("reviews.jsonl")?
            .lines()
            .filter(|l| !l.is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<ReviewSentences>, _>>()?;
        let manifest: DocumentsManifest = serde_json::from_str(&read("documents.json")?)?;
        let blob_path = dir.join("documents.bin");
        let blob = fs::read(&blob_path).map_err(|e| CarpError::io(blob_path, e))?;
        let bank = decode_bank(&manifest, &blob)?;
        Ok(PreparedDataset {
            meta,
            vocab,
            split,
            bank,
            reviews,
            stats,
        })
    }
}

fn index_tsv(ids: &[String]) -> String {
    ids.iter()
        .enumerate()
        .map(|(i, id)| format!("{i}\t{id}\n"))
        .collect()
}

fn parse_index_tsv(text: &str) -> Result<Vec<String>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| match line.split_once('\t') {
            Some((i, id)) if i.parse::<usize>().ok() == Some(n) => Ok(id.to_string()),
            _ => Err(CarpError::format("index tsv", format!("line {}", n + 1))),
        })
        .collect()
}

const BANK_ARRAYS: [&str; 4] = ["tokens", "lengths", "origin_review", "origin_sentence"];

fn encode_bank(bank: &DocumentBank) -> (DocumentsManifest, Vec<u8>) {
    let mut blob = Vec::new();
    let mut arrays = Vec::new();
    for (side, docs) in [("user", &bank.users), ("item", &bank.items)] {
        for name in BANK_ARRAYS {
            let offset = blob.len();
            let shape = if name == "lengths" {
                vec![docs.len()]
            } else {
                vec![docs.len(), bank.cap]
            };
            for doc in docs.iter() {
                let values: Vec<u32> = match name {
                    "tokens" => doc.tokens.clone(),
                    "lengths" => vec![doc.len as u32],
                    "origin_review" => padded(doc.origins.iter().map(|o| o.review), bank.cap),
                    _ => padded(doc.origins.iter().map(|o| o.sentence), bank.cap),
                };
                for v in values {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
            arrays.push(ArrayEntry {
                name: format!("{side}_{name}"),
                shape,
                offset,
            });
        }
    }
    (
        DocumentsManifest {
            dtype: "u32le".into(),
            cap: bank.cap,
            arrays,
        },
        blob,
    )
}

fn padded(values: impl Iterator<Item = u32>, cap: usize) -> Vec<u32> {
    let mut v: Vec<u32> = values.collect();
    v.resize(cap, 0);
    v
}

fn decode_bank(manifest: &DocumentsManifest, blob: &[u8]) -> Result<DocumentBank> {
    if manifest.dtype != "u32le" {
        return Err(CarpError::format("documents manifest", format!("dtype {}", manifest.dtype)));
    }
    let cap = manifest.cap;
    let array = |name: &str| -> Result<(&[usize], Vec<u32>)> {
        let entry = manifest
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| CarpError::format("documents manifest", format!("missing {name}")))?;
        let count: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * count;
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| CarpError::format("documents.bin", format!("{name} out of bounds")))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((&entry.shape, values))
    };
    let side = |prefix: &str| -> Result<Vec<Document>> {
        let (shape, tokens) = array(&format!("{prefix}_tokens"))?;
        let (_, lengths) = array(&format!("{prefix}_lengths"))?;
        let (_, reviews) = array(&format!("{prefix}_origin_review"))?;
        let (_, sentences) = array(&format!("{prefix}_origin_sentence"))?;
        if shape.len() != 2 || shape[1] != cap || lengths.len() != shape[0] {
            return Err(CarpError::format("documents manifest", format!("{prefix} shapes")));
        }
        Ok((0..shape[0])
            .map(|d| {
                let row = d * cap..(d + 1) * cap;
                let len = lengths[d] as usize;
                Document {
                    tokens: tokens[row.clone()].to_vec(),
                    len,
                    origins: reviews[row.start..row.start + len]
                        .iter()
                        .zip(&sentences[row.start..row.start + len])
                        .map(|(&review, &sentence)| TokenOrigin { review, sentence })
                        .collect(),
                }
            })
            .collect())
    };
    Ok(DocumentBank {
        cap,
        users: side("user")?,
        items: side("item")?,
    })
}
