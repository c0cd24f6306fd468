//! The scoring pipeline, recorded on a [`Tape`] so one backward sweep
//! yields gradients for every parameter.
//!
//! Per target timestamp:
//!
//! 1. **History encoding** — starting from the (row-normalized) entity
//!    table, each history snapshot passes through `layers` relation-aware
//!    graph convolutions and a GRU step, renormalizing after each stage.
//! 2. **Transforms** — candidates and queries get a Euclidean embedding
//!    (linear) and a tangent-space embedding (gated transform through the
//!    shared matrix `w_g`).
//! 3. **Scoring** — the Euclidean head is a dot product; the hyperbolic
//!    head maps tangent embeddings onto a Poincaré ball of per-relation
//!    curvature `softplus(curvature_raw[r])`, translates the query by the
//!    relation's ball embedding (Möbius addition), and scores by negative
//!    squared geodesic distance plus entity biases. A per-query mixing
//!    coefficient β blends the two heads.
//!
//! The hyperbolic head uses the closed-form gyrodistance
//! `‖(−u) ⊕_c y‖² = ‖u−y‖² / (1 − 2c⟨u,y⟩ + c²‖u‖²‖y‖²)`, which batches
//! as matrix products; both the numerator clamp and the arctanh clamp are
//! handled by dedicated tape ops.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::data::{Snapshot, Vocab};
use crate::diff::{Gradients, NodeId, Tape, Tensor};
use crate::error::{EthError, Result};

use super::config::{BetaMode, EthConfig, GammaKind};
use super::params::EthParams;

/// RReLU negative-slope bounds: slopes are drawn uniformly from this range
/// during training and fixed at the midpoint during evaluation.
pub const RRELU_LOWER: f64 = 1.0 / 8.0;
pub const RRELU_UPPER: f64 = 1.0 / 3.0;

/// Queries of one target timestamp: `(subject, relation)` pairs with their
/// gold objects.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    pub queries: Vec<(usize, usize)>,
    pub targets: Vec<usize>,
    pub time: usize,
}

impl QueryBatch {
    /// One query per fact of the snapshot (inverses included, since the
    /// snapshot is built from augmented quadruples).
    pub fn from_snapshot(snap: &Snapshot, vocab: &Vocab) -> Result<Self> {
        let mut queries = Vec::with_capacity(snap.triples.len());
        let mut targets = Vec::with_capacity(snap.triples.len());
        for &(s, r, o) in &snap.triples {
            if s >= vocab.num_entities || o >= vocab.num_entities {
                return Err(EthError::invalid(format!(
                    "entity id out of bounds in snapshot at time {}",
                    snap.time
                )));
            }
            if r >= vocab.num_relations_augmented() {
                return Err(EthError::invalid(format!(
                    "relation id {r} out of bounds in snapshot at time {}",
                    snap.time
                )));
            }
            queries.push((s, r));
            targets.push(o);
        }
        Ok(QueryBatch {
            queries,
            targets,
            time: snap.time,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// How a forward pass treats parameters and stochastic activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Differentiable parameters, stochastic RReLU slopes.
    Train,
    /// Frozen parameters, deterministic midpoint slopes.
    Eval,
    /// Differentiable parameters with deterministic slopes — a smooth
    /// function of the parameters, for finite-difference checks.
    Check,
}

/// Tape handles for every parameter, in the canonical visitor order.
pub struct ParamNodes {
    pub entity_emb: NodeId,
    pub rel_emb_euclid: NodeId,
    pub rel_emb_hyp_raw: NodeId,
    pub rgcn_w1: Vec<NodeId>,
    pub rgcn_w2: Vec<NodeId>,
    pub gru_w_xr: NodeId,
    pub gru_w_hr: NodeId,
    pub gru_b_r: NodeId,
    pub gru_w_xz: NodeId,
    pub gru_w_hz: NodeId,
    pub gru_b_z: NodeId,
    pub gru_w_xn: NodeId,
    pub gru_w_hn: NodeId,
    pub gru_b_n: NodeId,
    pub w1_e: NodeId,
    pub b1_e: NodeId,
    pub w2_e: NodeId,
    pub b2_e: NodeId,
    pub w_g: NodeId,
    pub w1_g: NodeId,
    pub w2_g: NodeId,
    pub curvature_raw: NodeId,
    pub bias_q: NodeId,
    pub bias_a: NodeId,
    pub s_q: NodeId,
    pub s_r: NodeId,
    pub beta_raw: NodeId,
    /// Same nodes in [`EthParams::for_each`] order, for gradient extraction.
    pub ordered: Vec<NodeId>,
}

impl ParamNodes {
    fn register(tape: &mut Tape, params: &EthParams, trainable: bool) -> Result<Self> {
        let mut named: Vec<(String, Tensor)> = Vec::new();
        params.for_each(&mut |name, t| named.push((name.to_string(), t.clone())));
        let mut ordered = Vec::with_capacity(named.len());
        let mut by_name: BTreeMap<String, NodeId> = BTreeMap::new();
        for (name, t) in named {
            let id = if trainable {
                tape.leaf(t)?
            } else {
                tape.constant(t)?
            };
            ordered.push(id);
            by_name.insert(name, id);
        }
        let g = |n: &str| by_name[n];
        let layers = params.rgcn_w1.len();
        Ok(ParamNodes {
            entity_emb: g("entity_emb"),
            rel_emb_euclid: g("rel_emb_euclid"),
            rel_emb_hyp_raw: g("rel_emb_hyp_raw"),
            rgcn_w1: (0..layers).map(|i| g(&format!("rgcn_w1.{i}"))).collect(),
            rgcn_w2: (0..layers).map(|i| g(&format!("rgcn_w2.{i}"))).collect(),
            gru_w_xr: g("gru.w_xr"),
            gru_w_hr: g("gru.w_hr"),
            gru_b_r: g("gru.b_r"),
            gru_w_xz: g("gru.w_xz"),
            gru_w_hz: g("gru.w_hz"),
            gru_b_z: g("gru.b_z"),
            gru_w_xn: g("gru.w_xn"),
            gru_w_hn: g("gru.w_hn"),
            gru_b_n: g("gru.b_n"),
            w1_e: g("w1_e"),
            b1_e: g("b1_e"),
            w2_e: g("w2_e"),
            b2_e: g("b2_e"),
            w_g: g("w_g"),
            w1_g: g("w1_g"),
            w2_g: g("w2_g"),
            curvature_raw: g("curvature_raw"),
            bias_q: g("bias_q"),
            bias_a: g("bias_a"),
            s_q: g("s_q"),
            s_r: g("s_r"),
            beta_raw: g("beta_raw"),
            ordered,
        })
    }

    /// Extracts parameter gradients in canonical order, aligned with
    /// [`EthParams::tensors_mut`].
    pub fn gradients_in_order(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.ordered.iter().map(|&id| grads.take(id)).collect()
    }
}

/// Query-side embeddings produced by [`Forward::query_transform`].
pub struct QueryEmbeds {
    pub h_q_e: NodeId,
    pub h_q_g: NodeId,
    /// The gathered per-query rows of the encoder output.
    pub h_tq: NodeId,
}

/// Every interesting node of one scored batch.
pub struct BatchNodes {
    pub h_t: NodeId,
    pub h_a_e: NodeId,
    pub h_a_g: NodeId,
    pub h_q_e: NodeId,
    pub h_q_g: NodeId,
    pub s_e: NodeId,
    pub s_b: NodeId,
    pub beta: NodeId,
    /// Pre-sigmoid hybrid scores; ranking and loss consume these.
    pub logits: NodeId,
    /// `σ(logits)`, the reported score.
    pub scores: NodeId,
}

/// One recorded forward computation over a parameter snapshot.
pub struct Forward<'a> {
    pub tape: Tape,
    pub nodes: ParamNodes,
    config: &'a EthConfig,
    vocab: &'a Vocab,
    mode: ForwardMode,
}

impl<'a> Forward<'a> {
    pub fn new(
        params: &EthParams,
        config: &'a EthConfig,
        vocab: &'a Vocab,
        mode: ForwardMode,
    ) -> Result<Self> {
        config.validate()?;
        let mut tape = Tape::new();
        let nodes = ParamNodes::register(&mut tape, params, mode != ForwardMode::Eval)?;
        Ok(Forward {
            tape,
            nodes,
            config,
            vocab,
            mode,
        })
    }

    pub fn mode(&self) -> ForwardMode {
        self.mode
    }

    /// Row normalization to unit L2 norm: layer-norm then scale by `1/√d`.
    pub fn normalize(&mut self, x: NodeId) -> Result<NodeId> {
        let ln = self.tape.layer_norm(x)?;
        self.tape.scale(ln, 1.0 / (self.config.d as f64).sqrt())
    }

    fn gamma(&mut self, x: NodeId) -> Result<NodeId> {
        match self.config.gamma_kind {
            GammaKind::Relu => self.tape.relu(x),
            GammaKind::Identity => Ok(x),
        }
    }

    fn rrelu(&mut self, x: NodeId, rng: &mut dyn RngCore) -> Result<NodeId> {
        self.tape.rrelu(
            x,
            RRELU_LOWER,
            RRELU_UPPER,
            self.mode == ForwardMode::Train,
            rng,
        )
    }

    /// One graph-convolution layer over a snapshot: each entity `o`
    /// receives the mean of `W1·(h_s + v_r)` over incoming edges plus its
    /// self term `W2·h_o`, through an RReLU. Entities with no incoming
    /// edges keep only the self term.
    pub fn rgcn_layer(
        &mut self,
        h: NodeId,
        snap: &Snapshot,
        v_e: NodeId,
        layer: usize,
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        if layer >= self.nodes.rgcn_w1.len() {
            return Err(EthError::invalid(format!(
                "layer index {layer} out of range for {} layers",
                self.nodes.rgcn_w1.len()
            )));
        }
        let (w1, w2) = (self.nodes.rgcn_w1[layer], self.nodes.rgcn_w2[layer]);
        let self_term = self.tape.matmul(h, w2)?;
        let pre = if snap.triples.is_empty() {
            self_term
        } else {
            let subs: Vec<usize> = snap.triples.iter().map(|t| t.0).collect();
            let rels: Vec<usize> = snap.triples.iter().map(|t| t.1).collect();
            let objs: Vec<usize> = snap.triples.iter().map(|t| t.2).collect();
            let h_s = self.tape.gather_rows(h, &subs)?;
            let v_r = self.tape.gather_rows(v_e, &rels)?;
            let msg = self.tape.add(h_s, v_r)?;
            // Mean before the (linear) W1 product: same result, one matmul.
            let mean = self
                .tape
                .scatter_mean_rows(msg, &objs, self.vocab.num_entities)?;
            let agg = self.tape.matmul(mean, w1)?;
            self.tape.add(agg, self_term)?
        };
        self.rrelu(pre, rng)
    }

    /// Standard GRU cell in row convention, gating how much of the previous
    /// state survives the new snapshot's encoding.
    fn gru_step(&mut self, h_prev: NodeId, x: NodeId) -> Result<NodeId> {
        let n = &self.nodes;
        let (w_xr, w_hr, b_r) = (n.gru_w_xr, n.gru_w_hr, n.gru_b_r);
        let (w_xz, w_hz, b_z) = (n.gru_w_xz, n.gru_w_hz, n.gru_b_z);
        let (w_xn, w_hn, b_n) = (n.gru_w_xn, n.gru_w_hn, n.gru_b_n);

        let xr = self.tape.matmul(x, w_xr)?;
        let hr = self.tape.matmul(h_prev, w_hr)?;
        let r_pre = self.tape.add(xr, hr)?;
        let r_pre = self.tape.add_row_vec(r_pre, b_r)?;
        let r = self.tape.sigmoid(r_pre)?;

        let xz = self.tape.matmul(x, w_xz)?;
        let hz = self.tape.matmul(h_prev, w_hz)?;
        let z_pre = self.tape.add(xz, hz)?;
        let z_pre = self.tape.add_row_vec(z_pre, b_z)?;
        let z = self.tape.sigmoid(z_pre)?;

        let xn = self.tape.matmul(x, w_xn)?;
        let xn = self.tape.add_row_vec(xn, b_n)?;
        let hn = self.tape.matmul(h_prev, w_hn)?;
        let gated = self.tape.hadamard(r, hn)?;
        let n_pre = self.tape.add(xn, gated)?;
        let n_new = self.tape.tanh(n_pre)?;

        let one_minus_z = {
            let neg = self.tape.scale(z, -1.0)?;
            self.tape.add_const(neg, 1.0)?
        };
        let keep_new = self.tape.hadamard(one_minus_z, n_new)?;
        let keep_old = self.tape.hadamard(z, h_prev)?;
        self.tape.add(keep_new, keep_old)
    }

    /// Encodes a history window into per-entity embeddings `H_t` (`|V|×d`).
    ///
    /// With the semantic encoder disabled, returns the raw entity table.
    /// An empty history returns the normalized entity table. Only the last
    /// `m` snapshots are used.
    pub fn encode_history(
        &mut self,
        history: &[&Snapshot],
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        if !self.config.enable_semantic_encoder {
            return Ok(self.nodes.entity_emb);
        }
        let start = history.len().saturating_sub(self.config.m);
        let mut h = self.normalize(self.nodes.entity_emb)?;
        for snap in &history[start..] {
            // Relation embeddings are renormalized at every use.
            let v_e = self.normalize(self.nodes.rel_emb_euclid)?;
            let mut hl = h;
            for layer in 0..self.config.layers {
                hl = self.rgcn_layer(hl, snap, v_e, layer, rng)?;
            }
            let hk = self.normalize(hl)?;
            let stepped = self.gru_step(h, hk)?;
            h = self.normalize(stepped)?;
        }
        Ok(h)
    }

    /// Euclidean and tangent embeddings for every candidate entity.
    ///
    /// With the tangent transform disabled, the hyperbolic head receives
    /// the encoder output unchanged.
    pub fn candidate_transform(&mut self, h_t: NodeId) -> Result<(NodeId, NodeId)> {
        let lin = self.tape.matmul(h_t, self.nodes.w1_e)?;
        let h_a_e = self.tape.add_row_vec(lin, self.nodes.b1_e)?;
        let h_a_g = if !self.config.enable_tangent_transform {
            h_t
        } else {
            let gate = self.tape.tanh(h_a_e)?;
            let gated = self.tape.hadamard(gate, h_t)?;
            let core = self.tape.matmul(gated, self.nodes.w_g)?;
            let act = self.gamma(core)?;
            self.tape.matmul(act, self.nodes.w1_g)?
        };
        Ok((h_a_e, h_a_g))
    }

    fn check_queries(&self, queries: &[(usize, usize)]) -> Result<()> {
        if queries.is_empty() {
            return Err(EthError::invalid("empty query batch"));
        }
        for &(q, r) in queries {
            if q >= self.vocab.num_entities {
                return Err(EthError::invalid(format!(
                    "unknown entity id {q} (vocabulary has {})",
                    self.vocab.num_entities
                )));
            }
            if r >= self.vocab.num_relations_augmented() {
                return Err(EthError::invalid(format!(
                    "unknown relation id {r} (augmented vocabulary has {})",
                    self.vocab.num_relations_augmented()
                )));
            }
        }
        Ok(())
    }

    /// Euclidean and tangent embeddings per query.
    ///
    /// With the query transform disabled, both embeddings degrade to the
    /// plain sum `h_q + v_r`.
    pub fn query_transform(
        &mut self,
        h_t: NodeId,
        queries: &[(usize, usize)],
    ) -> Result<QueryEmbeds> {
        self.check_queries(queries)?;
        let subs: Vec<usize> = queries.iter().map(|q| q.0).collect();
        let rels: Vec<usize> = queries.iter().map(|q| q.1).collect();
        let h_tq = self.tape.gather_rows(h_t, &subs)?;
        let v_e = self.normalize(self.nodes.rel_emb_euclid)?;
        let v_r = self.tape.gather_rows(v_e, &rels)?;
        if !self.config.enable_query_transform {
            let sum = self.tape.add(h_tq, v_r)?;
            return Ok(QueryEmbeds {
                h_q_e: sum,
                h_q_g: sum,
                h_tq,
            });
        }
        let cat = self.tape.concat_rows(h_tq, v_r)?;
        let lin = self.tape.matmul(cat, self.nodes.w2_e)?;
        let h_q_e = self.tape.add_row_vec(lin, self.nodes.b2_e)?;
        let gate = self.tape.tanh(h_q_e)?;
        let gated = self.tape.hadamard(gate, h_tq)?;
        let core = self.tape.matmul(gated, self.nodes.w_g)?;
        let act = self.gamma(core)?;
        let h_q_g = self.tape.matmul(act, self.nodes.w2_g)?;
        Ok(QueryEmbeds { h_q_e, h_q_g, h_tq })
    }

    /// Dot-product similarity: `S^e[q, a] = ⟨h_q^e, h_a^e⟩`.
    pub fn score_euclidean(&mut self, h_q_e: NodeId, h_a_e: NodeId) -> Result<NodeId> {
        let at = self.tape.transpose(h_a_e)?;
        self.tape.matmul(h_q_e, at)
    }

    /// Maps rows of `x` onto the ball of curvature `c` (both tape nodes):
    /// each row is scaled by `tanh(√c‖row‖)/(√c‖row‖)`.
    fn exp_map_rows(&mut self, x: NodeId, sqrt_c: NodeId) -> Result<NodeId> {
        let norms = self.tape.sqrt_norm(x)?;
        let args = self.tape.mul_scalar(norms, sqrt_c)?;
        let scales = self.tape.exp_map_scale(args)?;
        self.tape.mul_col_vec(x, scales)
    }

    /// Distance-based score on the per-relation Poincaré ball:
    /// `S^b[q, a] = −d_c(h_q^b ⊕ v_r^b, h_a^b)² + b_q[q] + b_a[a]`.
    ///
    /// Queries sharing a relation share a curvature, so they are scored in
    /// one batch per relation and reassembled in query order.
    pub fn score_hyperbolic(
        &mut self,
        h_q_g: NodeId,
        h_a_g: NodeId,
        queries: &[(usize, usize)],
    ) -> Result<NodeId> {
        self.check_queries(queries)?;
        let nv = self.vocab.num_entities;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &(_, r)) in queries.iter().enumerate() {
            groups.entry(r).or_default().push(i);
        }

        let mut parts = Vec::with_capacity(groups.len());
        for (&r, idxs) in &groups {
            let qg = idxs.len();
            let raw_c = self.tape.gather_rows(self.nodes.curvature_raw, &[r])?;
            let c = self.tape.softplus(raw_c)?;
            let c2 = self.tape.hadamard(c, c)?;
            let sqrt_c = self.tape.sqrt_elem(c)?;

            // All candidates and the group's queries onto this ball.
            let y = self.exp_map_rows(h_a_g, sqrt_c)?;
            let hq = self.tape.gather_rows(h_q_g, idxs)?;
            let x = self.exp_map_rows(hq, sqrt_c)?;
            let v_raw = self.tape.gather_rows(self.nodes.rel_emb_hyp_raw, &[r])?;
            let v1 = self.exp_map_rows(v_raw, sqrt_c)?;
            let vb = self.tape.broadcast_row(v1, qg)?;

            // u = x ⊕_c v, elementwise over group rows.
            let x2 = self.tape.row_dot(x, x)?;
            let v2 = self.tape.row_dot(vb, vb)?;
            let xv = self.tape.row_dot(x, vb)?;
            let c_xv = self.tape.mul_scalar(xv, c)?;
            let two_c_xv = self.tape.scale(c_xv, 2.0)?;
            let c_v2 = self.tape.mul_scalar(v2, c)?;
            let c_x2 = self.tape.mul_scalar(x2, c)?;
            let x2v2 = self.tape.hadamard(x2, v2)?;
            let c2_x2v2 = self.tape.mul_scalar(x2v2, c2)?;
            let denom = {
                let s = self.tape.add(two_c_xv, c2_x2v2)?;
                self.tape.add_const(s, 1.0)?
            };
            let coef_x = {
                let s = self.tape.add(two_c_xv, c_v2)?;
                self.tape.add_const(s, 1.0)?
            };
            let coef_v = {
                let s = self.tape.scale(c_x2, -1.0)?;
                self.tape.add_const(s, 1.0)?
            };
            let num = {
                let a = self.tape.mul_col_vec(x, coef_x)?;
                let b = self.tape.mul_col_vec(vb, coef_v)?;
                self.tape.add(a, b)?
            };
            let inv_denom = self.tape.recip(denom)?;
            let u = self.tape.mul_col_vec(num, inv_denom)?;

            // Pairwise squared gyrodistance via the closed form.
            let yt = self.tape.transpose(y)?;
            let uy = self.tape.matmul(u, yt)?;
            let u2 = self.tape.row_dot(u, u)?;
            let y2 = self.tape.row_dot(y, y)?;
            let u2b = self.tape.broadcast_col(u2, nv)?;
            let y2row = self.tape.transpose(y2)?;
            let y2b = self.tape.broadcast_row(y2row, qg)?;
            let sqdiff = {
                let two_uy = self.tape.scale(uy, 2.0)?;
                let diff = self.tape.sub(u2b, two_uy)?;
                self.tape.add(diff, y2b)?
            };
            let den2 = {
                let c_uy = self.tape.mul_scalar(uy, c)?;
                let neg2 = self.tape.scale(c_uy, -2.0)?;
                let u2y2 = self.tape.hadamard(u2b, y2b)?;
                let c2_u2y2 = self.tape.mul_scalar(u2y2, c2)?;
                let s = self.tape.add(neg2, c2_u2y2)?;
                self.tape.add_const(s, 1.0)?
            };
            let inv_den2 = self.tape.recip(den2)?;
            let ratio = self.tape.hadamard(sqdiff, inv_den2)?;
            let mobnorm = self.tape.sqrt_elem(ratio)?;
            let arg = self.tape.mul_scalar(mobnorm, sqrt_c)?;
            let at = self.tape.arctanh_clamped(arg)?;
            let atsq = self.tape.hadamard(at, at)?;
            let four_over_c = {
                let inv_c = self.tape.recip(c)?;
                self.tape.scale(inv_c, 4.0)?
            };
            let dist2 = self.tape.mul_scalar(atsq, four_over_c)?;
            let neg = self.tape.scale(dist2, -1.0)?;

            let group_subs: Vec<usize> = idxs.iter().map(|&i| queries[i].0).collect();
            let bq = self.tape.gather_rows(self.nodes.bias_q, &group_subs)?;
            let bqb = self.tape.broadcast_col(bq, nv)?;
            let ba_row = self.tape.transpose(self.nodes.bias_a)?;
            let bab = self.tape.broadcast_row(ba_row, qg)?;
            let with_bq = self.tape.add(neg, bqb)?;
            let s_b = self.tape.add(with_bq, bab)?;
            parts.push(s_b);
        }

        // Restore original query order.
        let stacked = self.tape.stack_rows(&parts)?;
        let mut inverse = vec![0usize; queries.len()];
        let mut pos = 0;
        for idxs in groups.values() {
            for &qi in idxs {
                inverse[qi] = pos;
                pos += 1;
            }
        }
        self.tape.gather_rows(stacked, &inverse)
    }

    /// Per-query mixing coefficient β (`|Q|×1`).
    pub fn mixing_coefficient(&mut self, queries: &[(usize, usize)]) -> Result<NodeId> {
        self.check_queries(queries)?;
        let n = queries.len();
        match self.config.beta_mode {
            BetaMode::QuerySpecific => {
                let subs: Vec<usize> = queries.iter().map(|q| q.0).collect();
                let rels: Vec<usize> = queries.iter().map(|q| q.1).collect();
                let sq = self.tape.gather_rows(self.nodes.s_q, &subs)?;
                let sr = self.tape.gather_rows(self.nodes.s_r, &rels)?;
                let dots = self.tape.row_dot(sq, sr)?;
                let scaled = self.tape.scale(dots, 1.0 / self.config.w as f64)?;
                self.tape.sigmoid(scaled)
            }
            BetaMode::FixedZero => self.tape.constant(Tensor::zeros(n, 1)),
            BetaMode::FixedOne => self.tape.constant(Tensor::filled(n, 1, 1.0)),
            BetaMode::PerRelationLearned => {
                let rels: Vec<usize> = queries.iter().map(|q| q.1).collect();
                let raw = self.tape.gather_rows(self.nodes.beta_raw, &rels)?;
                self.tape.sigmoid(raw)
            }
        }
    }

    /// Blends the two heads: `z = β·S^b + (1−β)·S^e`, `S = σ(z)`.
    /// Returns `(logits, scores)`.
    pub fn score_hybrid(
        &mut self,
        s_b: NodeId,
        s_e: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        if self.tape.value(s_b).shape() != self.tape.value(s_e).shape() {
            return Err(EthError::invalid(format!(
                "score shape mismatch: {:?} vs {:?}",
                self.tape.value(s_b).shape(),
                self.tape.value(s_e).shape()
            )));
        }
        let hyp = self.tape.mul_col_vec(s_b, beta)?;
        let one_minus = {
            let neg = self.tape.scale(beta, -1.0)?;
            self.tape.add_const(neg, 1.0)?
        };
        let euc = self.tape.mul_col_vec(s_e, one_minus)?;
        let logits = self.tape.add(hyp, euc)?;
        let scores = self.tape.sigmoid(logits)?;
        Ok((logits, scores))
    }

    /// Full pipeline for one target: history → transforms → both heads →
    /// hybrid blend.
    pub fn score_batch(
        &mut self,
        history: &[&Snapshot],
        queries: &[(usize, usize)],
        rng: &mut dyn RngCore,
    ) -> Result<BatchNodes> {
        let h_t = self.encode_history(history, rng)?;
        let (h_a_e, h_a_g) = self.candidate_transform(h_t)?;
        let q = self.query_transform(h_t, queries)?;
        let s_e = self.score_euclidean(q.h_q_e, h_a_e)?;
        let s_b = self.score_hyperbolic(q.h_q_g, h_a_g, queries)?;
        let beta = self.mixing_coefficient(queries)?;
        let (logits, scores) = self.score_hybrid(s_b, s_e, beta)?;
        Ok(BatchNodes {
            h_t,
            h_a_e,
            h_a_g,
            h_q_e: q.h_q_e,
            h_q_g: q.h_q_g,
            s_e,
            s_b,
            beta,
            logits,
            scores,
        })
    }
}
