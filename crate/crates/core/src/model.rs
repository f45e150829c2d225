//! The full network: parameters, batched forward pass and hand-written
//! backward pass.
//!
//! Each distinct user and item document of a batch is encoded once. The
//! convolution and extraction caches of a document are rebuilt during the
//! backward pass instead of being held for the whole batch, which keeps
//! memory at one document's worth of activations.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capsules::{
    compose_all, route_backward, route_traced, transform_all, units_backward, CapsuleTransforms, RoutingKind,
    RoutingState, RoutingTrace,
};
use crate::corpus::{Document, DocumentBank, Example, PAD_INDEX};
use crate::encoder::{convolve_backward, convolve_forward, embed};
use crate::error::{CarpError, Result};
use crate::extraction::{extract_backward, extract_forward, GateParams, ViewpointSet};
use crate::math::{glorot_bound, uniform};
use crate::prediction::{
    head_backward, highway_forward, overall_rating, rating_sigmoid_grad, sentiment_rating, HeadParams, HighwayCache,
    PredictionBreakdown, RatingInputs,
};
use crate::sentiment::Sentiment;
use crate::training::{loss::margin_term, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub users: usize,
    pub items: usize,
    pub embed_dim: usize,
    pub filters: usize,
    pub window: usize,
    pub latent: usize,
    pub slots: usize,
    pub iterations: usize,
    pub routing: RoutingKind,
    pub keep_prob: f64,
    pub rating_max: f64,
}

/// Encoder and extraction parameters of one side (users or items).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideParams {
    /// `V × d`; row 0 is padding and stays zero.
    pub embedding: Array2<f64>,
    /// `n × (c·d)`
    pub conv_weight: Array2<f64>,
    pub conv_bias: Array1<f64>,
    pub gate: GateParams,
}

impl SideParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        SideParams {
            embedding: Array2::zeros((cfg.vocab_size, cfg.embed_dim)),
            conv_weight: Array2::zeros((cfg.filters, cfg.window * cfg.embed_dim)),
            conv_bias: Array1::zeros(cfg.filters),
            gate: GateParams::zeros(cfg.slots, cfg.filters, cfg.latent),
        }
    }

    fn init<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        let mut embedding = uniform(rng, (cfg.vocab_size, cfg.embed_dim), 0.1);
        embedding.row_mut(PAD_INDEX as usize).fill(0.0);
        let fan_in = cfg.window * cfg.embed_dim;
        SideParams {
            embedding,
            conv_weight: uniform(rng, (cfg.filters, fan_in), glorot_bound(fan_in, cfg.filters)),
            conv_bias: Array1::zeros(cfg.filters),
            gate: GateParams::init(rng, cfg.slots, cfg.filters, cfg.latent),
        }
    }

    fn arrays<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        let g = &self.gate;
        out.push((format!("{prefix}.embedding"), self.embedding.view().into_dyn()));
        out.push((format!("{prefix}.conv_weight"), self.conv_weight.view().into_dyn()));
        out.push((format!("{prefix}.conv_bias"), self.conv_bias.view().into_dyn()));
        out.push((format!("{prefix}.gate_w1"), g.w1.view().into_dyn()));
        out.push((format!("{prefix}.gate_w2"), g.w2.view().into_dyn()));
        out.push((format!("{prefix}.gate_bias"), g.bias.view().into_dyn()));
        out.push((format!("{prefix}.query"), g.query.view().into_dyn()));
        out.push((format!("{prefix}.projection"), g.projection.view().into_dyn()));
    }

    fn arrays_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        let g = &mut self.gate;
        out.push((format!("{prefix}.embedding"), self.embedding.view_mut().into_dyn()));
        out.push((format!("{prefix}.conv_weight"), self.conv_weight.view_mut().into_dyn()));
        out.push((format!("{prefix}.conv_bias"), self.conv_bias.view_mut().into_dyn()));
        out.push((format!("{prefix}.gate_w1"), g.w1.view_mut().into_dyn()));
        out.push((format!("{prefix}.gate_w2"), g.w2.view_mut().into_dyn()));
        out.push((format!("{prefix}.gate_bias"), g.bias.view_mut().into_dyn()));
        out.push((format!("{prefix}.query"), g.query.view_mut().into_dyn()));
        out.push((format!("{prefix}.projection"), g.projection.view_mut().into_dyn()));
    }
}

/// Every learnable array. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub user: SideParams,
    pub item: SideParams,
    pub capsules: CapsuleTransforms,
    pub head: HeadParams,
    pub user_bias: Array1<f64>,
    pub item_bias: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            user: SideParams::zeros(cfg),
            item: SideParams::zeros(cfg),
            capsules: CapsuleTransforms::zeros(cfg.slots, cfg.latent),
            head: HeadParams::zeros(cfg.latent),
            user_bias: Array1::zeros(cfg.users),
            item_bias: Array1::zeros(cfg.items),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Self {
        ModelParams {
            user: SideParams::init(rng, cfg),
            item: SideParams::init(rng, cfg),
            capsules: CapsuleTransforms::init(rng, cfg.slots, cfg.latent),
            head: HeadParams::init(rng, cfg.latent),
            user_bias: Array1::zeros(cfg.users),
            item_bias: Array1::zeros(cfg.items),
        }
    }

    /// Named views of every array, in a fixed order.
    pub fn arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::with_capacity(22);
        self.user.arrays("user", &mut out);
        self.item.arrays("item", &mut out);
        out.push(("capsules.transforms".into(), self.capsules.0.view().into_dyn()));
        let h = &self.head;
        out.push(("head.gate_weight".into(), h.gate_weight.view().into_dyn()));
        out.push(("head.gate_bias".into(), h.gate_bias.view().into_dyn()));
        out.push(("head.hidden_weight".into(), h.hidden_weight.view().into_dyn()));
        out.push(("head.hidden_bias".into(), h.hidden_bias.view().into_dyn()));
        out.push(("head.out_weight".into(), h.out_weight.view().into_dyn()));
        out.push(("head.out_bias".into(), h.out_bias.view().into_dyn()));
        out.push(("bias.user".into(), self.user_bias.view().into_dyn()));
        out.push(("bias.item".into(), self.item_bias.view().into_dyn()));
        out
    }

    /// Same order as [`ModelParams::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::with_capacity(22);
        self.user.arrays_mut("user", &mut out);
        self.item.arrays_mut("item", &mut out);
        out.push(("capsules.transforms".into(), self.capsules.0.view_mut().into_dyn()));
        let h = &mut self.head;
        out.push(("head.gate_weight".into(), h.gate_weight.view_mut().into_dyn()));
        out.push(("head.gate_bias".into(), h.gate_bias.view_mut().into_dyn()));
        out.push(("head.hidden_weight".into(), h.hidden_weight.view_mut().into_dyn()));
        out.push(("head.hidden_bias".into(), h.hidden_bias.view_mut().into_dyn()));
        out.push(("head.out_weight".into(), h.out_weight.view_mut().into_dyn()));
        out.push(("head.out_bias".into(), h.out_bias.view_mut().into_dyn()));
        out.push(("bias.user".into(), self.user_bias.view_mut().into_dyn()));
        out.push(("bias.item".into(), self.item_bias.view_mut().into_dyn()));
        out
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss values and predictions of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub sqr: f64,
    pub stm: f64,
    pub predictions: Vec<f64>,
}

/// Everything the explanation layer needs about one scored pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTrace {
    pub user: u32,
    pub item: u32,
    pub viewpoints: ViewpointSet,
    pub aspects: ViewpointSet,
    pub routing: RoutingState,
    pub breakdown: PredictionBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    User,
    Item,
}

/// Encoded document plus the dropout mask drawn for it.
struct Encoded {
    set: ViewpointSet,
    drop: Option<Array2<f64>>,
}

/// Users and items in first-appearance order plus their encodings.
type EncodedBatch = (Vec<u32>, Vec<u32>, HashMap<u32, Encoded>, HashMap<u32, Encoded>);

struct PairForward {
    units: Array2<f64>,
    t: Array3<f64>,
    trace: RoutingTrace,
    state: RoutingState,
    highway: [HighwayCache; 2],
    h_dropped: [Array1<f64>; 2],
    h_scale: [Array1<f64>; 2],
    breakdown: PredictionBreakdown,
}

/// Inverted-dropout scale mask: `1/keep` with probability `keep`, else 0.
fn dropout_mask(rng: &mut dyn RngCore, shape: (usize, usize), keep: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&mut rng, &config);
        Model { config, params }
    }

    fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::User => &self.params.user,
            Side::Item => &self.params.item,
        }
    }

    fn document<'a>(&self, bank: &'a DocumentBank, side: Side, index: u32) -> Result<&'a Document> {
        let docs = match side {
            Side::User => &bank.users,
            Side::Item => &bank.items,
        };
        let doc = docs
            .get(index as usize)
            .ok_or_else(|| CarpError::Config(format!("{side:?} index {index} has no document")))?;
        if doc.len == 0 {
            return Err(CarpError::EmptyDocument);
        }
        Ok(doc)
    }

    fn encode(&self, doc: &Document, side: Side, rng: Option<&mut (dyn RngCore + 'static)>) -> Result<Encoded> {
        let p = self.side(side);
        let tokens = doc.active();
        let mask = vec![true; tokens.len()];
        let embedded = embed(&p.embedding, tokens);
        let (mut features, _) = convolve_forward(
            embedded.view(),
            &mask,
            p.conv_weight.view(),
            p.conv_bias.view(),
            self.config.window,
        );
        let drop = rng.map(|r| dropout_mask(r, features.dim(), self.config.keep_prob));
        if let Some(d) = &drop {
            features *= d;
        }
        let (set, _) = extract_forward(features.view(), &mask, &p.gate)?;
        Ok(Encoded { set, drop })
    }

    /// Rebuilds the caches of one document and back-propagates `d_vectors`.
    fn encode_backward(
        &self,
        doc: &Document,
        side: Side,
        enc: &Encoded,
        d_vectors: &Array2<f64>,
        grads: &mut SideParams,
    ) -> Result<()> {
        let p = self.side(side);
        let tokens = doc.active();
        let mask = vec![true; tokens.len()];
        let embedded = embed(&p.embedding, tokens);
        let (mut features, conv) = convolve_forward(
            embedded.view(),
            &mask,
            p.conv_weight.view(),
            p.conv_bias.view(),
            self.config.window,
        );
        if let Some(d) = &enc.drop {
            features *= d;
        }
        let (set, slots) = extract_forward(features.view(), &mask, &p.gate)?;
        let mut d_features =
            extract_backward(features.view(), &mask, &p.gate, &set, &slots, d_vectors.view(), &mut grads.gate);
        if let Some(d) = &enc.drop {
            d_features *= d;
        }
        let g = convolve_backward(&conv, d_features.view(), p.conv_weight.view(), self.config.window);
        grads.conv_weight += &g.weight;
        grads.conv_bias += &g.bias;
        for (j, &t) in tokens.iter().enumerate() {
            if t != PAD_INDEX {
                let mut row = grads.embedding.row_mut(t as usize);
                row += &g.embedded.row(j);
            }
        }
        Ok(())
    }

    fn pair_forward(
        &self,
        user: u32,
        item: u32,
        viewpoints: &ViewpointSet,
        aspects: &ViewpointSet,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> PairForward {
        let cfg = &self.config;
        let head = &self.params.head;
        let units = compose_all(viewpoints.vectors.view(), aspects.vectors.view());
        let t = transform_all(units.view(), &self.params.capsules);
        let (state, trace) = route_traced(cfg.routing, t.view(), cfg.iterations);
        let mut r = [0.0; 2];
        let mut caches = Vec::with_capacity(2);
        let mut dropped = Vec::with_capacity(2);
        let mut scales = Vec::with_capacity(2);
        for s in Sentiment::BOTH {
            let i = s.index();
            let (h, cache) = highway_forward(
                state.output(s),
                head.gate_weight.index_axis(Axis(0), i),
                head.gate_bias.row(i),
                head.hidden_weight.index_axis(Axis(0), i),
                head.hidden_bias.row(i),
            );
            let scale = match rng.as_deref_mut() {
                Some(r) => dropout_mask(r, (1, cfg.latent), cfg.keep_prob).row(0).to_owned(),
                None => Array1::ones(cfg.latent),
            };
            let hd = &h * &scale;
            r[i] = sentiment_rating(hd.view(), head.out_weight.row(i), head.out_bias[i]);
            caches.push(cache);
            dropped.push(hd);
            scales.push(scale);
        }
        let mut breakdown = overall_rating(&RatingInputs {
            r_pos: r[0],
            r_neg: r[1],
            len_pos: state.output_len(Sentiment::Pos),
            len_neg: state.output_len(Sentiment::Neg),
            user_bias: self.params.user_bias.get(user as usize).copied(),
            item_bias: self.params.item_bias.get(item as usize).copied(),
            rating_max: cfg.rating_max,
        });
        breakdown.coupling = Some(state.coupling.clone());
        let [c0, c1]: [HighwayCache; 2] = caches.try_into().ok().expect("two sentiments");
        let [d0, d1]: [Array1<f64>; 2] = dropped.try_into().expect("two sentiments");
        let [s0, s1]: [Array1<f64>; 2] = scales.try_into().expect("two sentiments");
        PairForward {
            units,
            t,
            trace,
            state,
            highway: [c0, c1],
            h_dropped: [d0, d1],
            h_scale: [s0, s1],
            breakdown,
        }
    }

    /// Back-propagates `d_rating` (on the fused rating) and `d_len` (on the
    /// capsule lengths) through one pair; returns `(d viewpoints, d aspects)`.
    fn pair_backward(
        &self,
        pair: &PairForward,
        viewpoints: &ViewpointSet,
        aspects: &ViewpointSet,
        d_rating: f64,
        d_len: [f64; 2],
        grads: &mut ModelParams,
    ) -> (Array2<f64>, Array2<f64>) {
        let b = &pair.breakdown;
        let d_logit = d_rating * rating_sigmoid_grad(b.logit(), b.rating_max);
        let d_r = [d_logit * b.len_pos, -d_logit * b.len_neg];
        let d_len = [d_len[0] + d_logit * b.r_pos, d_len[1] - d_logit * b.r_neg];
        let mut d_outputs = Array2::zeros(pair.state.outputs.raw_dim());
        for s in Sentiment::BOTH {
            let i = s.index();
            let o = pair.state.output(s);
            let mut d_o = head_backward(
                &self.params.head,
                &mut grads.head,
                i,
                o,
                &pair.highway[i],
                pair.h_dropped[i].view(),
                pair.h_scale[i].view(),
                d_r[i],
            );
            let len = pair.state.output_len(s);
            if len > 0.0 {
                d_o.scaled_add(d_len[i] / len, &o);
            }
            d_outputs.row_mut(i).assign(&d_o);
        }
        let d_t = route_backward(&pair.trace, pair.t.view(), d_outputs.view());
        units_backward(
            viewpoints.vectors.view(),
            aspects.vectors.view(),
            pair.units.view(),
            &self.params.capsules,
            d_t.view(),
            &mut grads.capsules,
        )
    }

    fn encode_batch(
        &self,
        bank: &DocumentBank,
        batch: &[Example],
        mut rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<EncodedBatch> {
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut user_enc = HashMap::new();
        let mut item_enc = HashMap::new();
        for ex in batch {
            if let Entry::Vacant(slot) = user_enc.entry(ex.user) {
                let doc = self.document(bank, Side::User, ex.user)?;
                slot.insert(self.encode(doc, Side::User, rng.as_deref_mut())?);
                users.push(ex.user);
            }
        }
        for ex in batch {
            if let Entry::Vacant(slot) = item_enc.entry(ex.item) {
                let doc = self.document(bank, Side::Item, ex.item)?;
                slot.insert(self.encode(doc, Side::Item, rng.as_deref_mut())?);
                items.push(ex.item);
            }
        }
        Ok((users, items, user_enc, item_enc))
    }

    /// Loss and parameter gradients of one batch. Passing `rng` enables
    /// dropout; `None` evaluates deterministically.
    pub fn loss_and_grad(
        &self,
        bank: &DocumentBank,
        batch: &[Example],
        loss: &LossConfig,
        rng: Option<&mut (dyn RngCore + 'static)>,
    ) -> Result<(BatchLoss, ModelParams)> {
        let (l, g) = self.run(bank, batch, loss, rng, true)?;
        Ok((l, g.expect("gradients requested")))
    }

    /// Deterministic loss of one batch without gradients.
    pub fn loss(&self, bank: &DocumentBank, batch: &[Example], loss: &LossConfig) -> Result<BatchLoss> {
        Ok(self.run(bank, batch, loss, None, false)?.0)
    }

    fn run(
        &self,
        bank: &DocumentBank,
        batch: &[Example],
        loss: &LossConfig,
        mut rng: Option<&mut (dyn RngCore + 'static)>,
        want_grad: bool,
    ) -> Result<(BatchLoss, Option<ModelParams>)> {
        if batch.is_empty() {
            return Err(CarpError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let (users, items, user_enc, item_enc) = self.encode_batch(bank, batch, rng.as_deref_mut())?;
        let mut grads = want_grad.then(|| ModelParams::zeros(&self.config));
        let mut d_user: HashMap<u32, Array2<f64>> = HashMap::new();
        let mut d_item: HashMap<u32, Array2<f64>> = HashMap::new();
        let (mut sqr, mut stm) = (0.0, 0.0);
        let mut predictions = Vec::with_capacity(batch.len());
        for ex in batch {
            let (v, a) = (&user_enc[&ex.user].set, &item_enc[&ex.item].set);
            let pair = self.pair_forward(ex.user, ex.item, v, a, rng.as_deref_mut());
            let b = &pair.breakdown;
            let resid = b.rating - ex.rating;
            let (margin, d_margin) = margin_term(b.len_pos, b.len_neg, ex.label, loss.epsilon, loss.mutual_exclusion);
            sqr += resid * resid;
            stm += margin;
            predictions.push(b.rating);
            if let Some(g) = grads.as_mut() {
                let d_rating = loss.lambda * 2.0 * resid / n;
                let w = (1.0 - loss.lambda) / n;
                g.user_bias[ex.user as usize] += d_rating;
                g.item_bias[ex.item as usize] += d_rating;
                let (dv, da) = self.pair_backward(&pair, v, a, d_rating, [w * d_margin[0], w * d_margin[1]], g);
                *d_user.entry(ex.user).or_insert_with(|| Array2::zeros(dv.raw_dim())) += &dv;
                *d_item.entry(ex.item).or_insert_with(|| Array2::zeros(da.raw_dim())) += &da;
            }
        }
        if let Some(g) = grads.as_mut() {
            for u in &users {
                let doc = self.document(bank, Side::User, *u)?;
                self.encode_backward(doc, Side::User, &user_enc[u], &d_user[u], &mut g.user)?;
            }
            for i in &items {
                let doc = self.document(bank, Side::Item, *i)?;
                self.encode_backward(doc, Side::Item, &item_enc[i], &d_item[i], &mut g.item)?;
            }
        }
        let (sqr, stm) = (sqr / n, stm / n);
        let total = loss.lambda * sqr + (1.0 - loss.lambda) * stm;
        Ok((BatchLoss { total, sqr, stm, predictions }, grads))
    }

    /// Deterministic predictions, encoding each distinct document once.
    pub fn predict_batch(&self, bank: &DocumentBank, pairs: &[(u32, u32)]) -> Result<Vec<PredictionBreakdown>> {
        let mut users: HashMap<u32, ViewpointSet> = HashMap::new();
        let mut items: HashMap<u32, ViewpointSet> = HashMap::new();
        let mut out = Vec::with_capacity(pairs.len());
        for &(u, i) in pairs {
            if let Entry::Vacant(slot) = users.entry(u) {
                let doc = self.document(bank, Side::User, u)?;
                slot.insert(self.encode(doc, Side::User, None)?.set);
            }
            if let Entry::Vacant(slot) = items.entry(i) {
                let doc = self.document(bank, Side::Item, i)?;
                slot.insert(self.encode(doc, Side::Item, None)?.set);
            }
            out.push(self.pair_forward(u, i, &users[&u], &items[&i], None).breakdown);
        }
        Ok(out)
    }

    pub fn predict(&self, bank: &DocumentBank, user: u32, item: u32) -> Result<PredictionBreakdown> {
        Ok(self.trace(bank, user, item)?.breakdown)
    }

    /// Deterministic forward pass of one pair with every intermediate kept.
    pub fn trace(&self, bank: &DocumentBank, user: u32, item: u32) -> Result<PairTrace> {
        let viewpoints = self.encode(self.document(bank, Side::User, user)?, Side::User, None)?.set;
        let aspects = self.encode(self.document(bank, Side::Item, item)?, Side::Item, None)?.set;
        let pair = self.pair_forward(user, item, &viewpoints, &aspects, None);
        Ok(PairTrace {
            user,
            item,
            viewpoints,
            aspects,
            routing: pair.state,
            breakdown: pair.breakdown,
        })
    }

    /// Rating for a pair where the user or item has no document: the
    /// capsule term is zero and only known biases apply.
    pub fn cold_breakdown(&self, user: Option<u32>, item: Option<u32>) -> PredictionBreakdown {
        overall_rating(&RatingInputs {
            r_pos: 0.0,
            r_neg: 0.0,
            len_pos: 0.0,
            len_neg: 0.0,
            user_bias: user.and_then(|u| self.params.user_bias.get(u as usize).copied()),
            item_bias: item.and_then(|i| self.params.item_bias.get(i as usize).copied()),
            rating_max: self.config.rating_max,
        })
    }
}
