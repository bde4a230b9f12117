//! The hybrid ensemble surrogate router.
//!
//! A trainable low-rank lightweight router runs next to K frozen member
//! routers. Member logits are zero-padded onto the union of all member
//! pools, linearly projected onto the target pool, and combined with the
//! lightweight logits under learned simplex weights; the normalized
//! exponential of that sum is the surrogate's routing distribution.
//! Training minimizes cross-entropy against hard target decisions bought
//! from the budgeted oracle, one call per proxy query, labels cached across
//! epochs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::encoder::{EmbeddingTable, MeanPoolEncoder};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pool::{argmax_index, ModelId, ModelPool, RoutingDecision};
use crate::rng::rng_from;
use crate::target::{BudgetedOracle, SyntheticRouter};
use crate::tokens::TokenSequence;
use crate::vocab::Vocabulary;

/// A routing function over its own model pool, pluggable into the ensemble.
///
/// Synthetic routers implement this; adapters to external published routers
/// plug in behind the same surface.
pub trait MemberRouter: Send + Sync {
    fn pool(&self) -> &ModelPool;

    /// Logits over the member's own pool.
    fn logits(&self, query: &TokenSequence) -> Vec<f64>;

    /// Pullback of `dL/d(logits)` onto the member's encoder output, when the
    /// member is differentiable.
    fn embedding_pullback(&self, query: &TokenSequence, upstream: &[f64]) -> Option<Vec<f64>>;

    /// The member's encoder, when gradients can flow through it.
    fn encoder(&self) -> Option<&MeanPoolEncoder>;

    fn is_differentiable(&self) -> bool {
        self.encoder().is_some()
    }
}

impl MemberRouter for SyntheticRouter {
    fn pool(&self) -> &ModelPool {
        SyntheticRouter::pool(self)
    }

    fn logits(&self, query: &TokenSequence) -> Vec<f64> {
        self.scores(query)
    }

    fn embedding_pullback(&self, query: &TokenSequence, upstream: &[f64]) -> Option<Vec<f64>> {
        SyntheticRouter::embedding_pullback(self, query, upstream)
    }

    fn encoder(&self) -> Option<&MeanPoolEncoder> {
        if self.is_differentiable() {
            Some(SyntheticRouter::encoder(self))
        } else {
            None
        }
    }

    fn is_differentiable(&self) -> bool {
        SyntheticRouter::is_differentiable(self)
    }
}

/// Exact-name mapping between the optimizer's canonical vocabulary and a
/// member's private vocabulary. Unmappable tokens are counted and their
/// gradient columns stay zero.
#[derive(Debug, Clone)]
pub struct VocabMap {
    to_member: Vec<Option<u32>>,
    member_unknown: u32,
    unmapped: usize,
}

impl VocabMap {
    pub fn exact(canonical: &Vocabulary, member: &Vocabulary) -> Self {
        let mut unmapped = 0;
        let to_member: Vec<Option<u32>> = canonical
            .tokens()
            .iter()
            .map(|t| {
                let hit = member.lookup(t);
                if hit.is_none() {
                    unmapped += 1;
                }
                hit
            })
            .collect();
        VocabMap {
            to_member,
            member_unknown: member.unknown_id(),
            unmapped,
        }
    }

    pub fn unmapped(&self) -> usize {
        self.unmapped
    }

    pub fn translate(&self, seq: &TokenSequence) -> TokenSequence {
        TokenSequence::from_raw(
            seq.ids()
                .iter()
                .map(|&id| self.to_member[id as usize].unwrap_or(self.member_unknown))
                .collect(),
        )
    }

    /// Rewrites an L x V_member gradient into L x V_canonical columns.
    pub fn pull_back_columns(&self, member_grads: &Matrix) -> Matrix {
        Matrix::from_fn(member_grads.rows(), self.to_member.len(), |r, v| {
            self.to_member[v]
                .map(|mv| member_grads.get(r, mv as usize))
                .unwrap_or(0.0)
        })
    }
}

/// One ensemble member wired into the union pool.
pub struct MemberAdapter {
    router: Box<dyn MemberRouter>,
    union_index: Vec<usize>,
    vocab_map: Option<VocabMap>,
}

impl MemberAdapter {
    fn new(router: Box<dyn MemberRouter>, union: &[ModelId], vocab_map: Option<VocabMap>) -> Result<Self> {
        let union_index = router
            .pool()
            .ids()
            .iter()
            .map(|id| {
                union.iter().position(|u| u == id).ok_or_else(|| {
                    Error::Config(vec![format!("member model `{id}` missing from union pool")])
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MemberAdapter {
            router,
            union_index,
            vocab_map,
        })
    }

    pub fn router(&self) -> &dyn MemberRouter {
        self.router.as_ref()
    }

    pub fn union_index(&self) -> &[usize] {
        &self.union_index
    }

    pub fn vocab_map(&self) -> Option<&VocabMap> {
        self.vocab_map.as_ref()
    }

    fn member_query(&self, query: &TokenSequence) -> TokenSequence {
        match &self.vocab_map {
            Some(map) => map.translate(query),
            None => query.clone(),
        }
    }

    pub fn logits(&self, query: &TokenSequence) -> Vec<f64> {
        self.router.logits(&self.member_query(query))
    }

    /// Member logits padded onto the union pool.
    pub fn union_logits(&self, query: &TokenSequence, union_len: usize) -> Result<Vec<f64>> {
        pad_to_union(&self.logits(query), &self.union_index, union_len)
    }
}

/// Zero-padding of member logits onto the union pool: position `i` keeps the
/// member's logit when union model `i` belongs to the member pool, else 0.
pub fn pad_to_union(member_logits: &[f64], union_index: &[usize], union_len: usize) -> Result<Vec<f64>> {
    if member_logits.len() != union_index.len() {
        return Err(Error::contract(format!(
            "member logits length {} does not match member pool of {}",
            member_logits.len(),
            union_index.len()
        )));
    }
    let mut out = vec![0.0; union_len];
    for (&z, &u) in member_logits.iter().zip(union_index) {
        if u >= union_len {
            return Err(Error::Config(vec![format!(
                "union index {u} out of range for union of {union_len}"
            )]));
        }
        out[u] = z;
    }
    Ok(out)
}

/// Trainable low-rank factors of the lightweight router.
#[derive(Debug, Clone)]
pub struct LightweightParams {
    w1: Matrix,
    w2: Matrix,
}

impl LightweightParams {
    pub fn new(w1: Matrix, w2: Matrix) -> Result<Self> {
        let rank = w1.cols();
        if rank != w2.rows() {
            return Err(Error::contract(format!(
                "factor shapes disagree: {}x{} . {}x{}",
                w1.rows(),
                w1.cols(),
                w2.rows(),
                w2.cols()
            )));
        }
        if rank >= w1.rows() {
            return Err(Error::contract(format!(
                "rank {rank} must stay below the encoder dimension {}",
                w1.rows()
            )));
        }
        Ok(LightweightParams { w1, w2 })
    }

    pub fn rank(&self) -> usize {
        self.w1.cols()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }
}

/// Simplex ensemble weights (stored as unconstrained pre-weights) and the
/// union-to-target projection.
#[derive(Debug, Clone)]
pub struct EnsembleParams {
    pre_alpha: Vec<f64>,
    w_out: Matrix,
}

impl EnsembleParams {
    pub fn new(pre_alpha: Vec<f64>, w_out: Matrix) -> Self {
        EnsembleParams { pre_alpha, w_out }
    }

    /// The simplex weights: nonnegative, summing to one by construction.
    pub fn alpha(&self) -> Vec<f64> {
        softmax(&self.pre_alpha)
    }

    pub fn pre_alpha(&self) -> &[f64] {
        &self.pre_alpha
    }

    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }
}

/// Linear alignment of union-pool logits onto the target pool.
pub fn project_to_target(z_uni: &[f64], ens: &EnsembleParams) -> Result<Vec<f64>> {
    if z_uni.len() != ens.w_out.rows() {
        return Err(Error::contract(format!(
            "union logits length {} does not match projection of {} rows",
            z_uni.len(),
            ens.w_out.rows()
        )));
    }
    ens.w_out.vec_mul(z_uni)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Everything one forward pass produces, kept for gradient work.
pub struct Forward {
    pub embedding: Vec<f64>,
    pub hidden: Vec<f64>,
    pub light_logits: Vec<f64>,
    pub union_logits: Vec<Vec<f64>>,
    pub projected: Vec<Vec<f64>>,
    pub total_logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// The trained attack-side imitation of the target router.
pub struct SurrogateRouter {
    encoder: MeanPoolEncoder,
    light: LightweightParams,
    members: Vec<MemberAdapter>,
    ens: EnsembleParams,
    target_pool: ModelPool,
    union_pool: Vec<ModelId>,
}

impl SurrogateRouter {
    pub fn new(
        encoder: MeanPoolEncoder,
        light: LightweightParams,
        members: Vec<MemberAdapter>,
        ens: EnsembleParams,
        target_pool: ModelPool,
        union_pool: Vec<ModelId>,
    ) -> Result<Self> {
        if ens.pre_alpha.len() != members.len() + 1 {
            return Err(Error::contract(format!(
                "{} ensemble weights for {} members + lightweight",
                ens.pre_alpha.len(),
                members.len()
            )));
        }
        if ens.w_out.rows() != union_pool.len() || ens.w_out.cols() != target_pool.len() {
            return Err(Error::contract(format!(
                "projection is {}x{}, union {} target {}",
                ens.w_out.rows(),
                ens.w_out.cols(),
                union_pool.len(),
                target_pool.len()
            )));
        }
        if light.w1.rows() != encoder.dim() || light.w2.cols() != target_pool.len() {
            return Err(Error::contract("lightweight factor shapes do not fit"));
        }
        Ok(SurrogateRouter {
            encoder,
            light,
            members,
            ens,
            target_pool,
            union_pool,
        })
    }

    pub fn encoder(&self) -> &MeanPoolEncoder {
        &self.encoder
    }

    pub fn light(&self) -> &LightweightParams {
        &self.light
    }

    pub fn members(&self) -> &[MemberAdapter] {
        &self.members
    }

    pub fn ens(&self) -> &EnsembleParams {
        &self.ens
    }

    pub fn target_pool(&self) -> &ModelPool {
        &self.target_pool
    }

    pub fn union_pool(&self) -> &[ModelId] {
        &self.union_pool
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.ens.alpha()
    }

    /// `E(q) . W1 . W2`
    pub fn lightweight_logits(&self, query: &TokenSequence) -> Result<Vec<f64>> {
        let e = self.encoder.encode(query)?;
        let h = self.light.w1.vec_mul(&e)?;
        self.light.w2.vec_mul(&h)
    }

    pub fn forward(&self, query: &TokenSequence) -> Result<Forward> {
        let embedding = self.encoder.encode(query)?;
        self.forward_from_parts(embedding, self.member_union_logits(query)?)
    }

    /// Member logits on the union pool, independent of trainable state.
    pub fn member_union_logits(&self, query: &TokenSequence) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| m.union_logits(query, self.union_pool.len()))
            .collect()
    }

    /// Forward pass from cached inputs (embedding + member union logits).
    pub fn forward_from_parts(&self, embedding: Vec<f64>, union_logits: Vec<Vec<f64>>) -> Result<Forward> {
        let hidden = self.light.w1.vec_mul(&embedding)?;
        let light_logits = self.light.w2.vec_mul(&hidden)?;
        let alpha = self.ens.alpha();
        let projected: Vec<Vec<f64>> = union_logits
            .iter()
            .map(|z| project_to_target(z, &self.ens))
            .collect::<Result<_>>()?;
        let mut total = light_logits.iter().map(|z| alpha[0] * z).collect::<Vec<_>>();
        for (k, zo) in projected.iter().enumerate() {
            for (t, z) in total.iter_mut().zip(zo) {
                *t += alpha[k + 1] * z;
            }
        }
        if total.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("ensemble logits are not finite"));
        }
        let probs = softmax(&total);
        Ok(Forward {
            embedding,
            hidden,
            light_logits,
            union_logits,
            projected,
            total_logits: total,
            probs,
        })
    }

    /// Full routing distribution over the target pool.
    pub fn predict(&self, query: &TokenSequence) -> Result<Vec<f64>> {
        Ok(self.forward(query)?.probs)
    }

    /// Surrogate decision: argmax of the distribution, ties to lowest index.
    pub fn decision(&self, query: &TokenSequence) -> Result<RoutingDecision> {
        let probs = self.predict(query)?;
        let idx = argmax_index(&probs);
        Ok(RoutingDecision {
            chosen: self.target_pool.id(idx).clone(),
            logits: Some(probs),
        })
    }

    /// Probability mass the surrogate puts on the strong tier.
    pub fn strong_mass(&self, probs: &[f64]) -> f64 {
        self.target_pool.strong_indices().map(|i| probs[i]).sum()
    }
}

/// Builds the union pool (first-appearance order) and wires adapters.
pub fn assemble_members(
    routers: Vec<Box<dyn MemberRouter>>,
    vocab_maps: Vec<Option<VocabMap>>,
) -> Result<(Vec<MemberAdapter>, Vec<ModelId>)> {
    if routers.is_empty() {
        return Err(Error::Config(vec!["ensemble needs at least one member".into()]));
    }
    if routers.len() != vocab_maps.len() {
        return Err(Error::contract("one vocab map slot per member"));
    }
    let mut union: Vec<ModelId> = Vec::new();
    for r in &routers {
        for id in r.pool().ids() {
            if !union.contains(id) {
                union.push(id.clone());
            }
        }
    }
    let members = routers
        .into_iter()
        .zip(vocab_maps)
        .map(|(r, map)| MemberAdapter::new(r, &union, map))
        .collect::<Result<Vec<_>>>()?;
    Ok((members, union))
}

/// Training hyperparameters. Defaults carry the reference values
/// (rank 16, 20 epochs, learning rate 0.03, batch 32, adaptive moments with
/// decoupled weight decay); desk-scale runs shrink the rank below the
/// encoder dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rank: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for SurrogateHyper {
    fn default() -> Self {
        SurrogateHyper {
            epochs: 20,
            learning_rate: 0.03,
            batch_size: 32,
            rank: 16,
            seed: 0,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// All oracle labels were one model: training proceeded, run is flagged.
    pub degenerate_labels: bool,
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn new(len: usize) -> Self {
        AdamSlot {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One decoupled-weight-decay adaptive step.
    fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        wd: f64,
        t: usize,
    ) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let bc1 = 1.0 - B1.powi(t as i32);
        let bc2 = 1.0 - B2.powi(t as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * (mh / (vh.sqrt() + EPS) + wd * *p);
        }
    }
}

/// Trains the surrogate against oracle labels bought within the budget.
///
/// Queries the oracle exactly once per proxy record; labels are cached for
/// all epochs. Ensemble weights live on the simplex at every step by
/// construction of the parameterization.
pub fn train_surrogate(
    proxy: &[&QueryRecord],
    oracle: &mut BudgetedOracle,
    vocab: &Vocabulary,
    encoder: MeanPoolEncoder,
    routers: Vec<Box<dyn MemberRouter>>,
    hyper: &SurrogateHyper,
) -> Result<(SurrogateRouter, TrainingLog)> {
    if proxy.is_empty() {
        return Err(Error::contract("proxy set must be nonempty"));
    }
    if proxy.len() as u64 > oracle.q_max() {
        return Err(Error::contract(format!(
            "proxy set of {} exceeds the query budget {}",
            proxy.len(),
            oracle.q_max()
        )));
    }
    if hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(Error::contract("epochs and batch size must be positive"));
    }
    let target_pool = oracle.pool().clone();
    let n_t = target_pool.len();
    let d = encoder.dim();
    if hyper.rank >= d {
        return Err(Error::contract(format!(
            "rank {} must stay below the encoder dimension {d}",
            hyper.rank
        )));
    }

    let (members, union_pool) = {
        let maps = routers.iter().map(|_| None).collect();
        assemble_members(routers, maps)?
    };

    // Buy labels: one training-mode oracle call per proxy record.
    let mut sequences = Vec::with_capacity(proxy.len());
    let mut labels = Vec::with_capacity(proxy.len());
    for rec in proxy {
        let seq = vocab.tokenize(&rec.text);
        if seq.is_empty() {
            return Err(Error::contract(format!(
                "proxy query `{}` tokenizes to nothing",
                rec.id
            )));
        }
        let decision = oracle.query(&seq)?;
        let label = target_pool.index_of(&decision.chosen).ok_or_else(|| {
            Error::contract(format!("oracle answered with `{}`, not in pool", decision.chosen))
        })?;
        sequences.push(seq);
        labels.push(label);
    }
    let degenerate_labels = labels.windows(2).all(|w| w[0] == w[1]);

    // theta-independent caches
    let embeddings: Vec<Vec<f64>> = sequences
        .iter()
        .map(|s| encoder.encode(s))
        .collect::<Result<_>>()?;
    let union_len = union_pool.len();
    let member_logits: Vec<Vec<Vec<f64>>> = sequences
        .iter()
        .map(|s| {
            members
                .iter()
                .map(|m| m.union_logits(s, union_len))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    // init
    let mut rng = rng_from(hyper.seed);
    let w1 = Matrix::seeded_normal(d, hyper.rank, 1.0 / (d as f64).sqrt(), &mut rng);
    let w2 = Matrix::seeded_normal(hyper.rank, n_t, 1.0 / (hyper.rank as f64).sqrt(), &mut rng);
    let noise = Matrix::seeded_normal(union_len, n_t, 0.01, &mut rng);
    // exact-name matches across pools start as an identity-like alignment
    let w_out = Matrix::from_fn(union_len, n_t, |u, t| {
        let base = if union_pool[u] == *target_pool.id(t) { 1.0 } else { 0.0 };
        base + noise.get(u, t)
    });
    let mut light = LightweightParams::new(w1, w2)?;
    let mut ens = EnsembleParams::new(vec![0.0; members.len() + 1], w_out);

    let mut slot_w1 = AdamSlot::new(d * hyper.rank);
    let mut slot_w2 = AdamSlot::new(hyper.rank * n_t);
    let mut slot_wo = AdamSlot::new(union_len * n_t);
    let mut slot_alpha = AdamSlot::new(members.len() + 1);

    let mut log = TrainingLog {
        epochs: Vec::with_capacity(hyper.epochs),
        degenerate_labels,
    };
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=hyper.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            step += 1;
            let alpha = ens.alpha();
            let scale = 1.0 / chunk.len() as f64;

            let mut g_w1 = vec![0.0; d * hyper.rank];
            let mut g_w2 = vec![0.0; hyper.rank * n_t];
            let mut g_wo = vec![0.0; union_len * n_t];
            let mut g_pre = vec![0.0; members.len() + 1];
            let mut batch_loss = 0.0;
            let mut g_alpha = vec![0.0; members.len() + 1];

            for &i in chunk {
                let e = &embeddings[i];
                let h = light.w1.vec_mul(e)?;
                let z_l = light.w2.vec_mul(&h)?;
                let projected: Vec<Vec<f64>> = member_logits[i]
                    .iter()
                    .map(|z| ens.w_out.vec_mul(z))
                    .collect::<Result<_>>()?;
                let mut z_total: Vec<f64> = z_l.iter().map(|z| alpha[0] * z).collect();
                for (k, zo) in projected.iter().enumerate() {
                    for (t, z) in z_total.iter_mut().zip(zo) {
                        *t += alpha[k + 1] * z;
                    }
                }
                let probs = softmax(&z_total);
                let y = labels[i];
                let p_y = probs[y].max(1e-300);
                batch_loss += -p_y.ln();

                // dL/dz_total = probs - onehot(y)
                let mut gz = probs;
                gz[y] -= 1.0;

                // alpha gradients (through the softmax parameterization later)
                g_alpha[0] += scale * z_l.iter().zip(&gz).map(|(a, b)| a * b).sum::<f64>();
                for (k, zo) in projected.iter().enumerate() {
                    g_alpha[k + 1] += scale * zo.iter().zip(&gz).map(|(a, b)| a * b).sum::<f64>();
                }

                // lightweight factors
                // dW2[rho][j] += alpha0 * h[rho] * gz[j]
                for rho in 0..hyper.rank {
                    let hr = alpha[0] * h[rho] * scale;
                    if hr != 0.0 {
                        for j in 0..n_t {
                            g_w2[rho * n_t + j] += hr * gz[j];
                        }
                    }
                }
                // dh = alpha0 * W2 . gz ; dW1[a][rho] += e[a] * dh[rho]
                let dh = light.w2.mul_vec(&gz)?;
                for a in 0..d {
                    let ea = e[a] * alpha[0] * scale;
                    if ea != 0.0 {
                        for rho in 0..hyper.rank {
                            g_w1[a * hyper.rank + rho] += ea * dh[rho];
                        }
                    }
                }

                // projection: dWo[u][j] += sum_k alpha_k z_uni_k[u] gz[j]
                for (k, z_uni) in member_logits[i].iter().enumerate() {
                    let ak = alpha[k + 1] * scale;
                    if ak == 0.0 {
                        continue;
                    }
                    for (u, &zu) in z_uni.iter().enumerate() {
                        if zu == 0.0 {
                            continue;
                        }
                        let f = ak * zu;
                        for j in 0..n_t {
                            g_wo[u * n_t + j] += f * gz[j];
                        }
                    }
                }
            }

            if !batch_loss.is_finite() {
                return Err(Error::numeric(format!(
                    "training loss diverged at epoch {epoch}"
                )));
            }
            epoch_loss += batch_loss;

            // softmax jacobian onto the pre-weights
            let inner: f64 = alpha.iter().zip(&g_alpha).map(|(a, g)| a * g).sum();
            for (i, gp) in g_pre.iter_mut().enumerate() {
                *gp = alpha[i] * (g_alpha[i] - inner);
            }

            slot_w1.step(light.w1.data_mut(), &g_w1, hyper.learning_rate, hyper.weight_decay, step);
            slot_w2.step(light.w2.data_mut(), &g_w2, hyper.learning_rate, hyper.weight_decay, step);
            slot_wo.step(ens.w_out.data_mut(), &g_wo, hyper.learning_rate, hyper.weight_decay, step);
            // no decay on the simplex pre-weights
            slot_alpha.step(&mut ens.pre_alpha, &g_pre, hyper.learning_rate, 0.0, step);
        }
        log.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / sequences.len() as f64,
            alpha: ens.alpha(),
        });
    }

    let sr = SurrogateRouter::new(encoder, light, members, ens, target_pool, union_pool)?;
    Ok((sr, log))
}

/// Fraction of labeled queries where the surrogate argmax matches the label.
pub fn surrogate_accuracy(sr: &SurrogateRouter, labeled: &[(TokenSequence, ModelId)]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::contract("accuracy needs a nonempty labeled set"));
    }
    let mut hits = 0usize;
    for (q, want) in labeled {
        if sr.decision(q)?.chosen == *want {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled.len() as f64)
}

/// On-disk layout of a surrogate checkpoint inside a run directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub rank: usize,
    pub dim: usize,
    pub pre_alpha: Vec<f64>,
    pub alpha: Vec<f64>,
    pub target_pool: Vec<(String, String)>,
    pub union_pool: Vec<String>,
    pub member_count: usize,
    pub encoder_seed: u64,
    /// Every oracle label was the same model; the run is flagged rather
    /// than failed.
    #[serde(default)]
    pub degenerate_labels: bool,
}

pub const CKPT_META: &str = "surrogate.json";
pub const CKPT_W1: &str = "light_w1.mat";
pub const CKPT_W2: &str = "light_w2.mat";
pub const CKPT_WOUT: &str = "ensemble_wout.mat";
pub const CKPT_ALPHA: &str = "alpha.txt";
pub const CKPT_ENC_TABLE: &str = "encoder_table.mat";
pub const CKPT_ENC_POST: &str = "encoder_post.mat";
pub const CKPT_TRAIN_LOG: &str = "training_log.csv";
pub const CKPT_ALPHA_LOG: &str = "alpha_log.csv";

pub fn save_checkpoint(sr: &SurrogateRouter, log: &TrainingLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    sr.light.w1.write_file(&dir.join(CKPT_W1))?;
    sr.light.w2.write_file(&dir.join(CKPT_W2))?;
    sr.ens.w_out.write_file(&dir.join(CKPT_WOUT))?;
    sr.encoder.table().matrix().write_file(&dir.join(CKPT_ENC_TABLE))?;
    sr.encoder.post_map().write_file(&dir.join(CKPT_ENC_POST))?;

    let alpha_text = sr
        .ens
        .pre_alpha
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(dir.join(CKPT_ALPHA), alpha_text + "\n")
        .map_err(|e| Error::io(dir.join(CKPT_ALPHA).display().to_string(), e))?;

    let meta = CheckpointMeta {
        rank: sr.light.rank(),
        dim: sr.encoder.dim(),
        pre_alpha: sr.ens.pre_alpha.clone(),
        alpha: sr.alpha(),
        target_pool: sr
            .target_pool
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.0.clone(), sr.target_pool.tier(i).as_str().to_string()))
            .collect(),
        union_pool: sr.union_pool.iter().map(|m| m.0.clone()).collect(),
        member_count: sr.members.len(),
        encoder_seed: sr.encoder.seed(),
        degenerate_labels: log.degenerate_labels,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::numeric(format!("checkpoint meta serialization: {e}")))?;
    std::fs::write(dir.join(CKPT_META), json)
        .map_err(|e| Error::io(dir.join(CKPT_META).display().to_string(), e))?;

    let mut train_csv = String::from("epoch,loss\n");
    for ep in &log.epochs {
        train_csv.push_str(&format!("{},{}\n", ep.epoch, ep.mean_loss));
    }
    std::fs::write(dir.join(CKPT_TRAIN_LOG), train_csv)
        .map_err(|e| Error::io(dir.join(CKPT_TRAIN_LOG).display().to_string(), e))?;
    let mut alpha_csv = String::from("epoch,weights\n");
    for ep in &log.epochs {
        let ws = ep.alpha.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        alpha_csv.push_str(&format!("{},{}\n", ep.epoch, ws));
    }
    std::fs::write(dir.join(CKPT_ALPHA_LOG), alpha_csv)
        .map_err(|e| Error::io(dir.join(CKPT_ALPHA_LOG).display().to_string(), e))?;
    Ok(())
}

/// Rebuilds a surrogate from checkpoint files plus freshly constructed
/// members (members are deterministic functions of the run configuration).
pub fn load_checkpoint(dir: &Path, routers: Vec<Box<dyn MemberRouter>>) -> Result<SurrogateRouter> {
    let meta_path = dir.join(CKPT_META);
    if !meta_path.exists() {
        return Err(Error::Dependency {
            stage: "train-surrogate".into(),
            path: meta_path.display().to_string(),
        });
    }
    let meta: CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?,
    )
    .map_err(|e| Error::Parse {
        path: meta_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if routers.len() != meta.member_count {
        return Err(Error::Config(vec![format!(
            "checkpoint was trained with {} members, configuration rebuilds {}",
            meta.member_count,
            routers.len()
        )]));
    }
    let w1 = Matrix::read_file(&dir.join(CKPT_W1))?;
    let w2 = Matrix::read_file(&dir.join(CKPT_W2))?;
    let w_out = Matrix::read_file(&dir.join(CKPT_WOUT))?;
    let table = Matrix::read_file(&dir.join(CKPT_ENC_TABLE))?;
    let post = Matrix::read_file(&dir.join(CKPT_ENC_POST))?;
    let encoder = MeanPoolEncoder::new(EmbeddingTable::new(table)?, post, meta.encoder_seed)?;

    let target_pool = ModelPool::new(
        meta.target_pool
            .iter()
            .map(|(id, tier)| {
                let t = match tier.as_str() {
                    "strong" => crate::pool::Tier::Strong,
                    _ => crate::pool::Tier::Weak,
                };
                (ModelId(id.clone()), t)
            })
            .collect(),
    )?;
    let union_pool: Vec<ModelId> = meta.union_pool.iter().map(|s| ModelId(s.clone())).collect();
    let members = routers
        .into_iter()
        .map(|r| MemberAdapter::new(r, &union_pool, None))
        .collect::<Result<Vec<_>>>()?;
    SurrogateRouter::new(
        encoder,
        LightweightParams::new(w1, w2)?,
        members,
        EnsembleParams::new(meta.pre_alpha, w_out),
        target_pool,
        union_pool,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{CostTable, Tier};
    use crate::rng::derive_seed;
    use crate::synth::{generate_dataset, SplitSizes, World};
    use crate::target::{make_target, OracleMode, TargetKind};
    use rand::Rng;

    fn pool4() -> ModelPool {
        ModelPool::new(vec![
            (ModelId::from("pebble-3b"), Tier::Weak),
            (ModelId::from("swift-7b"), Tier::Weak),
            (ModelId::from("orion-32b"), Tier::Strong),
            (ModelId::from("atlas-70b"), Tier::Strong),
        ])
        .unwrap()
    }

    fn member_pool_a() -> ModelPool {
        ModelPool::new(vec![
            (ModelId::from("atlas-70b"), Tier::Strong),
            (ModelId::from("pebble-3b"), Tier::Weak),
            (ModelId::from("nimbus-13b"), Tier::Weak),
        ])
        .unwrap()
    }

    fn member_pool_b() -> ModelPool {
        ModelPool::new(vec![
            (ModelId::from("orion-32b"), Tier::Strong),
            (ModelId::from("swift-7b"), Tier::Weak),
            (ModelId::from("nimbus-13b"), Tier::Weak),
        ])
        .unwrap()
    }

    fn costs() -> CostTable {
        CostTable::new(vec![
            (ModelId::from("pebble-3b"), 0.4),
            (ModelId::from("swift-7b"), 0.9),
            (ModelId::from("orion-32b"), 9.0),
            (ModelId::from("atlas-70b"), 15.0),
            (ModelId::from("nimbus-13b"), 1.5),
        ])
    }

    fn world() -> World {
        World::generate(33, 200, 16, 0.97, 1.0).unwrap()
    }

    fn desk_members(w: &World) -> Vec<Box<dyn MemberRouter>> {
        vec![
            Box::new(
                SyntheticRouter::build(TargetKind::CentroidClassifier, member_pool_a(), 101, 0.25, &costs(), w)
                    .unwrap(),
            ),
            Box::new(
                SyntheticRouter::build(TargetKind::KeywordHeuristic, member_pool_b(), 102, 0.25, &costs(), w)
                    .unwrap(),
            ),
            Box::new(
                SyntheticRouter::build(TargetKind::LinearScorer, pool4(), 103, 0.25, &costs(), w)
                    .unwrap(),
            ),
        ]
    }

    fn quick_hyper(seed: u64) -> SurrogateHyper {
        SurrogateHyper {
            epochs: 20,
            learning_rate: 0.03,
            batch_size: 32,
            rank: 8,
            seed,
            weight_decay: 1e-4,
        }
    }

    fn trained(w: &World, kind: TargetKind, seed: u64) -> (SurrogateRouter, TrainingLog, BudgetedOracle) {
        let ds = generate_dataset(w, seed, SplitSizes::default()).unwrap();
        let target = make_target(kind, pool4(), derive_seed(seed, "target"), 0.25, &costs(), w).unwrap();
        let mut oracle = BudgetedOracle::new(target, 120, OracleMode::Training).unwrap();
        let proxy: Vec<&QueryRecord> = ds.split(crate::dataset::Split::Proxy).into_iter().take(120).collect();
        let encoder = w.encoder(derive_seed(seed, "surrogate-encoder"));
        let (sr, log) = train_surrogate(
            &proxy,
            &mut oracle,
            w.vocab(),
            encoder,
            desk_members(w),
            &quick_hyper(seed),
        )
        .unwrap();
        (sr, log, oracle)
    }

    #[test]
    fn padding_is_definitional() {
        // member pool {A,B}, logits (1.2, -0.5), union (A,B,C) -> (1.2, -0.5, 0)
        let out = pad_to_union(&[1.2, -0.5], &[0, 1], 3).unwrap();
        assert_eq!(out, vec![1.2, -0.5, 0.0]);
        // union (C,A,B): member {A,B} sits at indices 1,2
        let out = pad_to_union(&[1.2, -0.5], &[1, 2], 3).unwrap();
        assert_eq!(out, vec![0.0, 1.2, -0.5]);
        // member pool == union: identity up to the recorded permutation
        let out = pad_to_union(&[3.0, 4.0], &[1, 0], 2).unwrap();
        assert_eq!(out, vec![4.0, 3.0]);
    }

    #[test]
    fn padding_round_trip_holds_for_every_member() {
        let w = world();
        let maps = vec![None, None, None];
        let (members, union) = assemble_members(desk_members(&w), maps).unwrap();
        let mut rng = rng_from(5);
        for m in &members {
            let logits: Vec<f64> = (0..m.router().pool().len()).map(|_| rng.random::<f64>() - 0.5).collect();
            let padded = pad_to_union(&logits, m.union_index(), union.len()).unwrap();
            for (u, slot) in padded.iter().enumerate() {
                match m.union_index().iter().position(|&ui| ui == u) {
                    Some(p) => assert_eq!(*slot, logits[p]),
                    None => assert_eq!(*slot, 0.0),
                }
            }
        }
    }

    #[test]
    fn projection_edge_cases() {
        let ens = EnsembleParams::new(vec![0.0], Matrix::zeros(3, 2));
        assert_eq!(project_to_target(&[1.0, 2.0, 3.0], &ens).unwrap(), vec![0.0, 0.0]);
        let ens = EnsembleParams::new(vec![0.0], Matrix::identity(3));
        assert_eq!(
            project_to_target(&[1.0, 2.0, 3.0], &ens).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert!(project_to_target(&[1.0], &ens).is_err());
    }

    #[test]
    fn projection_matches_matrix_vector_oracle() {
        let mut rng = rng_from(6);
        for _ in 0..100 {
            let u = 2 + rng.random_range(0..6);
            let t = 2 + rng.random_range(0..4);
            let w = Matrix::seeded_normal(u, t, 1.0, &mut rng);
            let z: Vec<f64> = (0..u).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let ens = EnsembleParams::new(vec![0.0], w.clone());
            let got = project_to_target(&z, &ens).unwrap();
            for j in 0..t {
                let want: f64 = (0..u).map(|i| z[i] * w.get(i, j)).sum();
                assert!((got[j] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lightweight_logits_match_two_step_oracle() {
        let w = world();
        let (sr, _, _) = trained(&w, TargetKind::LinearScorer, 1);
        let mut rng = rng_from(7);
        let v = w.vocab().size() as u32;
        for _ in 0..20 {
            let ids: Vec<u32> = (0..8).map(|_| rng.random_range(0..v)).collect();
            let q = TokenSequence::from_raw(ids);
            let got = sr.lightweight_logits(&q).unwrap();
            let e = sr.encoder().encode(&q).unwrap();
            // independent two-step multiply
            let mut h = vec![0.0; sr.light().rank()];
            for (rho, hv) in h.iter_mut().enumerate() {
                *hv = (0..e.len()).map(|a| e[a] * sr.light().w1().get(a, rho)).sum();
            }
            for (j, g) in got.iter().enumerate() {
                let want: f64 = (0..h.len()).map(|rho| h[rho] * sr.light().w2().get(rho, j)).sum();
                assert!((g - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_factors_annihilate() {
        let w = world();
        let encoder = w.encoder(9);
        let light = LightweightParams::new(Matrix::zeros(16, 4), Matrix::zeros(4, 4)).unwrap();
        let members = Vec::new();
        let err = SurrogateRouter::new(
            encoder,
            light,
            members,
            EnsembleParams::new(vec![0.0], Matrix::zeros(0, 4)),
            pool4(),
            Vec::new(),
        );
        // no members is fine structurally; logits come from the lightweight path
        let sr = err.unwrap();
        let q = TokenSequence::from_raw(vec![5, 6]);
        assert_eq!(sr.lightweight_logits(&q).unwrap(), vec![0.0; 4]);
        // all-equal logits -> uniform distribution
        let probs = sr.predict(&q).unwrap();
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_alpha_collapses_to_lightweight() {
        let w = world();
        let (sr, _, _) = trained(&w, TargetKind::CentroidClassifier, 2);
        // rebuild with pre-weights hugely favouring the lightweight member
        let mut pre = vec![-60.0; sr.members().len() + 1];
        pre[0] = 60.0;
        let sr2 = SurrogateRouter::new(
            sr.encoder().clone(),
            LightweightParams::new(sr.light().w1().clone(), sr.light().w2().clone()).unwrap(),
            desk_members(&w)
                .into_iter()
                .map(|r| MemberAdapter::new(r, sr.union_pool(), None).unwrap())
                .collect(),
            EnsembleParams::new(pre, sr.ens().w_out().clone()),
            sr.target_pool().clone(),
            sr.union_pool().to_vec(),
        )
        .unwrap();
        let q = TokenSequence::from_raw(vec![10, 20, 30]);
        let direct = softmax(&sr2.lightweight_logits(&q).unwrap());
        let probs = sr2.predict(&q).unwrap();
        for (a, b) in probs.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ensemble_predict_matches_brute_force_composition() {
        let w = world();
        let (sr, _, _) = trained(&w, TargetKind::KeywordHeuristic, 3);
        let alpha = sr.alpha();
        let mut rng = rng_from(8);
        let v = w.vocab().size() as u32;
        for _ in 0..100 {
            let ids: Vec<u32> = (0..6).map(|_| rng.random_range(0..v)).collect();
            let q = TokenSequence::from_raw(ids);
            let probs = sr.predict(&q).unwrap();

            // brute force: pad -> project -> weight -> normalize, all by loops
            let mut total = vec![0.0; sr.target_pool().len()];
            let zl = sr.lightweight_logits(&q).unwrap();
            for (t, z) in total.iter_mut().zip(&zl) {
                *t += alpha[0] * z;
            }
            for (k, m) in sr.members().iter().enumerate() {
                let raw = m.logits(&q);
                let mut padded = vec![0.0; sr.union_pool().len()];
                for (p, &u) in m.union_index().iter().enumerate() {
                    padded[u] = raw[p];
                }
                for j in 0..sr.target_pool().len() {
                    let zo: f64 = (0..padded.len())
                        .map(|u| padded[u] * sr.ens().w_out().get(u, j))
                        .sum();
                    total[j] += alpha[k + 1] * zo;
                }
            }
            let max = total.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = total.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (got, want) in probs.iter().zip(exps.iter().map(|e| e / sum)) {
                assert!((got - want).abs() < 1e-10);
            }
            let s: f64 = probs.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn alpha_stays_on_the_simplex_through_training() {
        let w = world();
        for kind in TargetKind::ALL {
            let (_, log, _) = trained(&w, kind, 4);
            assert_eq!(log.epochs.len(), 20);
            for ep in &log.epochs {
                let sum: f64 = ep.alpha.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9, "epoch {}: sum {}", ep.epoch, sum);
                assert!(ep.alpha.iter().all(|&a| a >= 0.0));
            }
        }
    }

    #[test]
    fn training_loss_decreases_for_every_kind() {
        let w = world();
        for kind in TargetKind::ALL {
            let (_, log, _) = trained(&w, kind, 12);
            let first = log.epochs.first().unwrap().mean_loss;
            let last = log.epochs.last().unwrap().mean_loss;
            assert!(
                last < first,
                "{kind:?}: loss went {first} -> {last}"
            );
        }
    }

    #[test]
    fn proxy_set_larger_than_the_budget_is_rejected() {
        let w = world();
        let ds = generate_dataset(&w, 9, SplitSizes::default()).unwrap();
        let target = make_target(TargetKind::LinearScorer, pool4(), 5, 0.25, &costs(), &w).unwrap();
        let mut oracle = BudgetedOracle::new(target, 10, OracleMode::Training).unwrap();
        let proxy: Vec<&QueryRecord> = ds.split(crate::dataset::Split::Proxy).into_iter().take(11).collect();
        let err = train_surrogate(
            &proxy,
            &mut oracle,
            w.vocab(),
            w.encoder(700),
            desk_members(&w),
            &quick_hyper(9),
        );
        assert!(matches!(err, Err(Error::Contract(_))));
        assert_eq!(oracle.q_used(), 0, "no budget may be spent on a rejected call");
    }

    #[test]
    fn training_spends_exactly_one_call_per_proxy_record() {
        let w = world();
        let (_, _, oracle) = trained(&w, TargetKind::CentroidClassifier, 5);
        assert_eq!(oracle.q_used(), 120);
        assert_eq!(oracle.training_calls(), 120);
    }

    #[test]
    fn single_proxy_record_is_memorized() {
        let w = world();
        let ds = generate_dataset(&w, 6, SplitSizes::default()).unwrap();
        let target = make_target(TargetKind::LinearScorer, pool4(), 77, 0.25, &costs(), &w).unwrap();
        let mut oracle = BudgetedOracle::new(target, 10, OracleMode::Training).unwrap();
        let proxy: Vec<&QueryRecord> = ds.split(crate::dataset::Split::Proxy).into_iter().take(1).collect();
        let mut hyper = quick_hyper(6);
        hyper.epochs = 200;
        let (sr, log) = train_surrogate(
            &proxy,
            &mut oracle,
            w.vocab(),
            w.encoder(600),
            desk_members(&w),
            &hyper,
        )
        .unwrap();
        assert!(log.degenerate_labels);
        let q = w.vocab().tokenize(&proxy[0].text);
        let want = oracle.route_eval(&q).chosen;
        assert_eq!(sr.decision(&q).unwrap().chosen, want);
    }

    #[test]
    fn constant_surrogate_accuracy_is_an_exact_count() {
        let w = world();
        let encoder = w.encoder(9);
        let light = LightweightParams::new(Matrix::zeros(16, 4), Matrix::zeros(4, 4)).unwrap();
        let sr = SurrogateRouter::new(
            encoder,
            light,
            Vec::new(),
            EnsembleParams::new(vec![0.0], Matrix::zeros(0, 4)),
            pool4(),
            Vec::new(),
        )
        .unwrap();
        // constant output: uniform probs -> argmax at index 0 = pebble-3b
        let mut rng = rng_from(10);
        let labeled: Vec<(TokenSequence, ModelId)> = (0..200)
            .map(|_| {
                let ids: Vec<u32> = (0..5).map(|_| rng.random_range(0..200)).collect();
                let label = pool4().id(rng.random_range(0..4)).clone();
                (TokenSequence::from_raw(ids), label)
            })
            .collect();
        let got = surrogate_accuracy(&sr, &labeled).unwrap();
        let want = labeled
            .iter()
            .filter(|(_, l)| *l == ModelId::from("pebble-3b"))
            .count() as f64
            / labeled.len() as f64;
        assert_eq!(got, want);
        assert!((got - 0.25).abs() < 0.1);

        // labels that all equal the argmax score a perfect 1.0
        let all_match: Vec<(TokenSequence, ModelId)> = labeled
            .iter()
            .map(|(q, _)| (q.clone(), ModelId::from("pebble-3b")))
            .collect();
        assert_eq!(surrogate_accuracy(&sr, &all_match).unwrap(), 1.0);
    }

    #[test]
    fn held_out_agreement_reaches_desk_bar() {
        let w = world();
        let ds = generate_dataset(&w, 7, SplitSizes::default()).unwrap();
        let (sr, _, oracle) = trained(&w, TargetKind::CentroidClassifier, 7);
        let labeled: Vec<(TokenSequence, ModelId)> = ds
            .split(crate::dataset::Split::EvalIn)
            .iter()
            .map(|r| {
                let q = w.vocab().tokenize(&r.text);
                let want = oracle.route_eval(&q).chosen;
                (q, want)
            })
            .collect();
        let acc = surrogate_accuracy(&sr, &labeled).unwrap();
        assert!(acc >= 0.8, "held-out agreement {acc}");
        // frozen regression value from the pinned-seed run
        assert!((acc - HELD_OUT_AGREEMENT).abs() < 1e-9, "agreement drifted: {acc}");
    }

    /// Measured once at the pinned seeds and frozen.
    const HELD_OUT_AGREEMENT: f64 = 0.84;

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let w = world();
        let (sr, log, _) = trained(&w, TargetKind::KeywordHeuristic, 8);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&sr, &log, dir.path()).unwrap();
        let back = load_checkpoint(dir.path(), desk_members(&w)).unwrap();
        let mut rng = rng_from(11);
        for _ in 0..20 {
            let ids: Vec<u32> = (0..7).map(|_| rng.random_range(0..200)).collect();
            let q = TokenSequence::from_raw(ids);
            assert_eq!(sr.predict(&q).unwrap(), back.predict(&q).unwrap());
        }
    }

    #[test]
    fn vocab_map_translates_and_flags() {
        let canon = Vocabulary::new(vec!["a".into(), "b".into(), "only".into(), "<unk>".into()]).unwrap();
        let member = Vocabulary::new(vec!["b".into(), "a".into(), "<unk>".into()]).unwrap();
        let map = VocabMap::exact(&canon, &member);
        assert_eq!(map.unmapped(), 1);
        let q = TokenSequence::from_raw(vec![0, 1, 2]);
        assert_eq!(map.translate(&q).ids(), &[1, 0, 2]);
        let grads = Matrix::from_rows(vec![vec![0.1, 0.2, 0.3]]).unwrap();
        let pulled = map.pull_back_columns(&grads);
        // canonical a -> member col 1, b -> col 0, only -> zero, <unk> -> col 2
        assert_eq!(pulled.row(0), &[0.2, 0.1, 0.0, 0.3]);
    }
}
