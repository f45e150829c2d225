//! Explanation reports: ranked logic units per sentiment capsule with the
//! phrases and sentences behind each viewpoint and aspect, plus the
//! coupling-sharpness ratio table.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PreparedDataset, SplitKind};
use crate::error::Result;
use crate::model::{Model, PairTrace};
use crate::prediction::PredictionBreakdown;
use crate::sentiment::Sentiment;

/// Ratio reported when `c_neg` is zero.
pub const RATIO_CAP: f64 = 1e6;

/// A scored window of document positions `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub start: usize,
    pub end: usize,
    pub weight: f64,
}

/// Ranks `window`-word phrases by summed attention, ties broken by the
/// earlier start. Only windows lying fully inside the document are
/// candidates; a document shorter than `window` yields one phrase covering
/// all of it.
pub fn top_phrases(attention: &[f64], window: usize, k: usize) -> Vec<PhraseSpan> {
    assert!(k >= 1, "K must be at least 1");
    let len = attention.len();
    if len == 0 {
        return Vec::new();
    }
    if len < window {
        return vec![PhraseSpan {
            start: 0,
            end: len,
            weight: attention.iter().sum(),
        }];
    }
    let mut spans: Vec<PhraseSpan> = (0..=len - window)
        .map(|start| PhraseSpan {
            start,
            end: start + window,
            weight: attention[start..start + window].iter().sum(),
        })
        .collect();
    spans.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.start.cmp(&b.start)));
    spans.truncate(k);
    spans
}

/// `r / max|r|`; returns the normalized values and the normalizer (0 when
/// every value is 0).
pub fn max_normalize(values: &[f64]) -> (Vec<f64>, f64) {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return (vec![0.0; values.len()], 0.0);
    }
    (values.iter().map(|v| v / max).collect(), max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub start: usize,
    pub end: usize,
    pub weight: f64,
    pub words: Vec<String>,
    /// Distinct source sentences touched by the window, in order.
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitExplanation {
    pub rank: usize,
    pub viewpoint: usize,
    pub aspect: usize,
    pub coupling_pos: f64,
    pub coupling_neg: f64,
    pub viewpoint_phrases: Vec<Phrase>,
    pub aspect_phrases: Vec<Phrase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub user_id: String,
    pub item_id: String,
    pub predicted: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_rating: Option<f64>,
    pub cold: bool,
    pub len_pos: f64,
    pub len_neg: f64,
    pub r_pos: f64,
    pub r_neg: f64,
    /// `r_pos / normalizer_pos`.
    pub r_pos_normalized: f64,
    pub r_neg_normalized: f64,
    /// Largest `|r_pos|` over the reference batch.
    pub normalizer_pos: f64,
    pub normalizer_neg: f64,
    pub breakdown: PredictionBreakdown,
    pub positive_units: Vec<UnitExplanation>,
    pub negative_units: Vec<UnitExplanation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainOptions {
    /// Phrases per viewpoint/aspect.
    pub top_k: usize,
    /// Logic units listed per capsule.
    pub top_units: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { top_k: 30, top_units: 3 }
    }
}

/// Unit indices of capsule `s` ordered by coupling (descending), ties by
/// index.
pub fn rank_units(coupling: ArrayView2<f64>, s: Sentiment) -> Vec<usize> {
    let row = coupling.row(s.index());
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

fn phrases(data: &PreparedDataset, doc: &Document, attention: &[f64], window: usize, k: usize) -> Vec<Phrase> {
    top_phrases(&attention[..doc.len], window, k)
        .into_iter()
        .map(|span| {
            let words = doc.tokens[span.start..span.end]
                .iter()
                .map(|&t| data.vocab.word(t).to_string())
                .collect();
            let mut seen = HashSet::new();
            let sentences = doc.origins[span.start..span.end]
                .iter()
                .filter(|o| seen.insert(**o))
                .filter_map(|o| data.sentence_at(*o).map(str::to_string))
                .collect();
            Phrase {
                start: span.start,
                end: span.end,
                weight: span.weight,
                words,
                sentences,
            }
        })
        .collect()
}

fn units(
    model: &Model,
    data: &PreparedDataset,
    trace: &PairTrace,
    s: Sentiment,
    opts: &ExplainOptions,
) -> Vec<UnitExplanation> {
    let m = model.config.slots;
    let c = &trace.routing.coupling;
    let user_doc = &data.bank.users[trace.user as usize];
    let item_doc = &data.bank.items[trace.item as usize];
    rank_units(c.view(), s)
        .into_iter()
        .take(opts.top_units)
        .enumerate()
        .map(|(rank, u)| {
            let (x, y) = (u / m, u % m);
            let vp = trace.viewpoints.attention.row(x).to_vec();
            let asp = trace.aspects.attention.row(y).to_vec();
            UnitExplanation {
                rank: rank + 1,
                viewpoint: x,
                aspect: y,
                coupling_pos: c[[0, u]],
                coupling_neg: c[[1, u]],
                viewpoint_phrases: phrases(data, user_doc, &vp, model.config.window, opts.top_k),
                aspect_phrases: phrases(data, item_doc, &asp, model.config.window, opts.top_k),
            }
        })
        .collect()
}

fn true_rating(data: &PreparedDataset, user: Option<u32>, item: Option<u32>) -> Option<f64> {
    let (u, i) = (user?, item?);
    data.split
        .entries
        .iter()
        .find(|e| e.user == u && e.item == i)
        .map(|e| e.rating)
}

/// Explains each `(user_id, item_id)` pair. The max-normalization of
/// `r_pos` and `r_neg` runs over the union of the requested pairs and the
/// `reference` index pairs, and the normalizers are stored in the report.
pub fn explain(
    model: &Model,
    data: &PreparedDataset,
    requests: &[(String, String)],
    reference: &[(u32, u32)],
    opts: &ExplainOptions,
) -> Result<Vec<ExplanationReport>> {
    let resolved: Vec<(Option<u32>, Option<u32>)> = requests
        .iter()
        .map(|(u, i)| (data.split.user_index(u), data.split.item_index(i)))
        .collect();
    let mut traces: HashMap<(u32, u32), PairTrace> = HashMap::new();
    for &(u, i) in &resolved {
        if let (Some(u), Some(i)) = (u, i) {
            if let std::collections::hash_map::Entry::Vacant(slot) = traces.entry((u, i)) {
                slot.insert(model.trace(&data.bank, u, i)?);
            }
        }
    }
    let mut r_pos: Vec<f64> = traces.values().map(|t| t.breakdown.r_pos).collect();
    let mut r_neg: Vec<f64> = traces.values().map(|t| t.breakdown.r_neg).collect();
    for b in model.predict_batch(&data.bank, reference)? {
        r_pos.push(b.r_pos);
        r_neg.push(b.r_neg);
    }
    let (_, norm_pos) = max_normalize(&r_pos);
    let (_, norm_neg) = max_normalize(&r_neg);
    let scale = |v: f64, n: f64| if n == 0.0 { 0.0 } else { v / n };

    let mut reports = Vec::with_capacity(requests.len());
    for ((user_id, item_id), &(u, i)) in requests.iter().zip(&resolved) {
        let (breakdown, pos, neg) = match (u, i) {
            (Some(u), Some(i)) => {
                let trace = &traces[&(u, i)];
                (
                    trace.breakdown.clone(),
                    units(model, data, trace, Sentiment::Pos, opts),
                    units(model, data, trace, Sentiment::Neg, opts),
                )
            }
            _ => (model.cold_breakdown(u, i), Vec::new(), Vec::new()),
        };
        reports.push(ExplanationReport {
            user_id: user_id.clone(),
            item_id: item_id.clone(),
            predicted: breakdown.rating,
            true_rating: true_rating(data, u, i),
            cold: breakdown.cold,
            len_pos: breakdown.len_pos,
            len_neg: breakdown.len_neg,
            r_pos: breakdown.r_pos,
            r_neg: breakdown.r_neg,
            r_pos_normalized: scale(breakdown.r_pos, norm_pos),
            r_neg_normalized: scale(breakdown.r_neg, norm_neg),
            normalizer_pos: norm_pos,
            normalizer_neg: norm_neg,
            breakdown,
            positive_units: pos,
            negative_units: neg,
        });
    }
    Ok(reports)
}

fn render_phrases(out: &mut String, label: &str, index: usize, phrases: &[Phrase], shown: usize) {
    let _ = writeln!(out, "    {label} {index}:");
    for p in phrases.iter().take(shown) {
        let _ = writeln!(out, "      [{:.3}] {}", p.weight, p.words.join(" "));
    }
    let mut seen = HashSet::new();
    for s in phrases.iter().flat_map(|p| &p.sentences).filter(|s| seen.insert(*s)).take(2) {
        let _ = writeln!(out, "      > {s}");
    }
}

/// Plain-text layout: pair header, capsule lengths and normalized ratings,
/// then the ranked units of each capsule with their phrases and sentences.
pub fn render_text(report: &ExplanationReport) -> String {
    let mut out = String::new();
    let truth = report.true_rating.map_or("unknown".to_string(), |r| format!("{r}"));
    let _ = writeln!(out, "user {}  item {}", report.user_id, report.item_id);
    let _ = writeln!(out, "rating {truth}  predicted {:.3}{}", report.predicted, if report.cold { "  (cold)" } else { "" });
    let _ = writeln!(
        out,
        "|o_pos| = {:.3}  |o_neg| = {:.3}  r_pos = {:.3}  r_neg = {:.3}",
        report.len_pos, report.len_neg, report.r_pos_normalized, report.r_neg_normalized
    );
    let _ = writeln!(
        out,
        "b_u = {:.3}  b_i = {:.3}",
        report.breakdown.user_bias, report.breakdown.item_bias
    );
    for (title, units) in [("positive", &report.positive_units), ("negative", &report.negative_units)] {
        let _ = writeln!(out, "\n{title} capsule");
        if units.is_empty() {
            let _ = writeln!(out, "  (no logic units)");
        }
        for u in units.iter() {
            let _ = writeln!(
                out,
                "  #{} viewpoint {} x aspect {}  c_pos = {:.4}  c_neg = {:.4}",
                u.rank, u.viewpoint, u.aspect, u.coupling_pos, u.coupling_neg
            );
            render_phrases(&mut out, "viewpoint", u.viewpoint, &u.viewpoint_phrases, 5);
            render_phrases(&mut out, "aspect", u.aspect, &u.aspect_phrases, 5);
        }
    }
    out
}

/// `c_pos / c_neg` for units ordered by descending `c_pos`.
pub fn coupling_ratios(coupling: ArrayView2<f64>) -> Vec<f64> {
    rank_units(coupling, Sentiment::Pos)
        .into_iter()
        .map(|u| {
            let (p, n) = (coupling[[0, u]], coupling[[1, u]]);
            if n == 0.0 {
                RATIO_CAP
            } else {
                (p / n).min(RATIO_CAP)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub rank: usize,
    pub mean_ratio: f64,
    pub pairs: usize,
}

/// Averages [`coupling_ratios`] per rank over many pairs.
pub fn ratio_table<'a>(couplings: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Vec<RatioRow> {
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for c in couplings {
        let ratios = coupling_ratios(c);
        if sums.len() < ratios.len() {
            sums.resize(ratios.len(), 0.0);
            counts.resize(ratios.len(), 0);
        }
        for (r, v) in ratios.into_iter().enumerate() {
            sums[r] += v;
            counts[r] += 1;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(r, (s, n))| RatioRow {
            rank: r + 1,
            mean_ratio: s / n as f64,
            pairs: n,
        })
        .collect()
}

/// Ratio table over one split of `data`.
pub fn ratio_report(model: &Model, data: &PreparedDataset, kind: SplitKind) -> Result<Vec<RatioRow>> {
    let pairs: Vec<(u32, u32)> = data.split.examples(kind).iter().map(|e| (e.user, e.item)).collect();
    let breakdowns = model.predict_batch(&data.bank, &pairs)?;
    Ok(ratio_table(
        breakdowns.iter().filter_map(|b| b.coupling.as_ref()).map(|c| c.view()),
    ))
}

pub fn ratio_csv(rows: &[RatioRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::CarpError::format("ratio table", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
