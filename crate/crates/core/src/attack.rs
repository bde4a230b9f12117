//! Universal adversarial suffix optimization against the trained surrogate.
//!
//! The attack loss is the negated mean strong-tier probability mass the
//! surrogate assigns to suffixed queries. Each iteration pulls exact one-hot
//! token gradients through every differentiable ensemble path, min-max
//! normalizes each member's magnitudes (signs reattached so descent
//! direction survives), aggregates them under the ensemble weights, takes
//! per-position top-k candidate tokens, and verifies a batch of sampled
//! single-token replacements by forward evaluation. Queries activate
//! incrementally: the optimizer works on a growing prefix of the query set
//! and admits the next query only once the incumbent suffix succeeds on all
//! active ones.

use rand::Rng;

use crate::encoder::GradientTensor;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pool::argmax_index;
use crate::rng::rng_from;
use crate::surrogate::SurrogateRouter;
use crate::tokens::{Suffix, TokenSequence};
use crate::vocab::Vocabulary;

/// How the optimizer decides a suffix "succeeds" on an active query:
/// the surrogate's argmax lands in the strong tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActivationRule {
    #[default]
    ArgmaxStrong,
}

/// Suffix search hyperparameters. Defaults are the reference operating
/// point: 3000 iterations, batch 64, top-k 256, 30-token budget, and a
/// ten-bang initial suffix.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub iterations: usize,
    pub batch: usize,
    pub top_k: usize,
    pub max_suffix_len: usize,
    pub init_suffix: String,
    pub seed: u64,
    pub activation: ActivationRule,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 3000,
            batch: 64,
            top_k: 256,
            max_suffix_len: 30,
            init_suffix: "! ! ! ! ! ! ! ! ! !".to_string(),
            seed: 0,
            activation: ActivationRule::ArgmaxStrong,
        }
    }
}

/// Progress of the incremental query curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationState {
    pub active: usize,
    pub total: usize,
}

/// Aggregated per-position, per-token gradient over the canonical
/// vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedGradient {
    values: Matrix,
}

impl AggregatedGradient {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn suffix_len(&self) -> usize {
        self.values.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.cols()
    }
}

/// One optimizer trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub active_queries: usize,
    pub best_loss: f64,
    pub suffix_text: String,
}

/// Negated mean strong-tier mass over the query set: always in [-1, 0].
pub fn attack_loss(queries: &[TokenSequence], suffix: &Suffix, sr: &SurrogateRouter) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::contract("attack loss needs at least one query"));
    }
    let mut total = 0.0;
    for q in queries {
        let probs = sr.predict(&q.concat_suffix(suffix))?;
        total += sr.strong_mass(&probs);
    }
    let loss = -total / queries.len() as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("attack loss is not finite"));
    }
    Ok(loss)
}

/// Exact token gradients of the single-query attack loss through ensemble
/// path `k` (0 = the lightweight router, `k >= 1` = member `k`).
///
/// Returns `None` when the member is rule-based: it still shapes the loss
/// through the forward pass, but no gradient flows through it and the
/// aggregation step renormalizes around it.
pub fn member_token_grads(
    query: &TokenSequence,
    suffix: &Suffix,
    sr: &SurrogateRouter,
    k: usize,
) -> Result<Option<GradientTensor>> {
    if suffix.is_empty() {
        return Err(Error::contract("suffix must have at least one token"));
    }
    if k > sr.members().len() {
        return Err(Error::contract(format!(
            "ensemble path {k} out of range for {} members",
            sr.members().len()
        )));
    }
    let full = query.concat_suffix(suffix);
    let fwd = sr.forward(&full)?;
    let strong_mass = sr.strong_mass(&fwd.probs);
    // d(-strong mass)/dz_total
    let gz: Vec<f64> = fwd
        .probs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let indicator = if sr.target_pool().is_strong(j) { 1.0 } else { 0.0 };
            p * (strong_mass - indicator)
        })
        .collect();
    let alpha = sr.alpha();

    if k == 0 {
        let upstream: Vec<f64> = gz.iter().map(|g| alpha[0] * g).collect();
        let dh = sr.light().w2().mul_vec(&upstream)?;
        let de = sr.light().w1().mul_vec(&dh)?;
        let tensor = sr.encoder().onehot_grads(full.len(), suffix.len(), &de, 0)?;
        return Ok(Some(tensor));
    }

    let member = &sr.members()[k - 1];
    if !member.router().is_differentiable() {
        return Ok(None);
    }
    // through the projection: dL/dz_uni = W_o . (alpha_k dL/dz_total)
    let upstream: Vec<f64> = gz.iter().map(|g| alpha[k] * g).collect();
    let d_uni = sr.ens().w_out().mul_vec(&upstream)?;
    let d_member: Vec<f64> = member.union_index().iter().map(|&u| d_uni[u]).collect();

    let member_full = match member.vocab_map() {
        Some(map) => map.translate(&full),
        None => full.clone(),
    };
    let Some(de) = member.router().embedding_pullback(&member_full, &d_member) else {
        return Ok(None);
    };
    let encoder = member
        .router()
        .encoder()
        .ok_or_else(|| Error::contract("differentiable member without encoder"))?;
    let tensor = encoder.onehot_grads(member_full.len(), suffix.len(), &de, k)?;
    match member.vocab_map() {
        Some(map) => Ok(Some(GradientTensor::new(
            map.pull_back_columns(tensor.values()),
            k,
        )?)),
        None => Ok(Some(tensor)),
    }
}

/// Min-max rescale of all entries to [0, 1]; a constant tensor maps to
/// zeros (a flat gradient carries no ranking information).
pub fn normalize_grads(tensor: &GradientTensor) -> GradientTensor {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in tensor.values().iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let values = if span == 0.0 {
        Matrix::zeros(tensor.suffix_len(), tensor.vocab_size())
    } else {
        Matrix::from_fn(tensor.suffix_len(), tensor.vocab_size(), |i, v| {
            (tensor.values().get(i, v) - lo) / span
        })
    };
    GradientTensor::new(values, tensor.member_index()).expect("finite by construction")
}

/// Magnitude min-max rescale with the original sign of every entry
/// reattached, so aggregation keeps pointing downhill.
pub fn signed_normalize_grads(tensor: &GradientTensor) -> GradientTensor {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in tensor.values().iter() {
        let m = v.abs();
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let span = hi - lo;
    let values = if span == 0.0 {
        Matrix::zeros(tensor.suffix_len(), tensor.vocab_size())
    } else {
        Matrix::from_fn(tensor.suffix_len(), tensor.vocab_size(), |i, v| {
            let raw = tensor.values().get(i, v);
            raw.signum() * ((raw.abs() - lo) / span)
        })
    };
    GradientTensor::new(values, tensor.member_index()).expect("finite by construction")
}

/// Weighted sum of already-normalized member tensors.
pub fn aggregate_grads(normalized: &[GradientTensor], alpha: &[f64]) -> Result<AggregatedGradient> {
    if normalized.is_empty() {
        return Err(Error::contract("nothing to aggregate"));
    }
    if normalized.len() != alpha.len() {
        return Err(Error::contract(format!(
            "{} tensors but {} weights",
            normalized.len(),
            alpha.len()
        )));
    }
    let rows = normalized[0].suffix_len();
    let cols = normalized[0].vocab_size();
    if normalized
        .iter()
        .any(|t| t.suffix_len() != rows || t.vocab_size() != cols)
    {
        return Err(Error::contract("gradient tensors disagree on shape"));
    }
    let mut values = Matrix::zeros(rows, cols);
    for (t, &a) in normalized.iter().zip(alpha) {
        if a == 0.0 {
            continue;
        }
        for i in 0..rows {
            for v in 0..cols {
                let cur = values.get(i, v);
                values.set(i, v, cur + a * t.values().get(i, v));
            }
        }
    }
    Ok(AggregatedGradient { values })
}

/// Per-position candidate sets: the `k` token ids with the most negative
/// aggregated gradient (largest first-order loss decrease), ties broken
/// toward the lowest id.
pub fn top_k_candidates(grad: &AggregatedGradient, k: usize) -> Result<Vec<Vec<u32>>> {
    if k == 0 || k > grad.vocab_size() {
        return Err(Error::contract(format!(
            "top-k {k} out of range for vocabulary of {}",
            grad.vocab_size()
        )));
    }
    let mut out = Vec::with_capacity(grad.suffix_len());
    for i in 0..grad.suffix_len() {
        let mut ids: Vec<u32> = (0..grad.vocab_size() as u32).collect();
        ids.sort_by(|&a, &b| {
            grad.values()
                .get(i, a as usize)
                .total_cmp(&grad.values().get(i, b as usize))
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        out.push(ids);
    }
    Ok(out)
}

/// Gradient signal over the active queries: per differentiable ensemble
/// path, the mean member tensor, signed-normalized; weights renormalized
/// over the paths that actually produced gradients.
fn aggregated_candidates(
    active: &[TokenSequence],
    suffix: &Suffix,
    sr: &SurrogateRouter,
    top_k: usize,
) -> Result<Vec<Vec<u32>>> {
    let alpha = sr.alpha();
    let mut tensors = Vec::new();
    let mut weights = Vec::new();
    for k in 0..=sr.members().len() {
        let mut acc: Option<Matrix> = None;
        let mut skipped = false;
        for q in active {
            match member_token_grads(q, suffix, sr, k)? {
                Some(t) => {
                    let scaled = t.values();
                    match &mut acc {
                        None => acc = Some(scaled.clone()),
                        Some(m) => {
                            for (slot, v) in m.data_mut().iter_mut().zip(scaled.iter()) {
                                *slot += v;
                            }
                        }
                    }
                }
                None => {
                    skipped = true;
                    break;
                }
            }
        }
        if skipped {
            continue;
        }
        let mut mean = acc.expect("active set is nonempty");
        let scale = 1.0 / active.len() as f64;
        for v in mean.data_mut() {
            *v *= scale;
        }
        tensors.push(signed_normalize_grads(&GradientTensor::new(mean, k)?));
        weights.push(alpha[k]);
    }
    if tensors.is_empty() {
        return Err(Error::contract(
            "no differentiable ensemble path: cannot rank candidates",
        ));
    }
    let total: f64 = weights.iter().sum();
    if total > 1e-12 {
        for w in &mut weights {
            *w /= total;
        }
    } else {
        let uniform = 1.0 / weights.len() as f64;
        weights.fill(uniform);
    }
    let agg = aggregate_grads(&tensors, &weights)?;
    top_k_candidates(&agg, top_k)
}

/// Whether the suffix succeeds on a query: surrogate argmax in the strong
/// tier.
fn succeeds(query: &TokenSequence, suffix: &Suffix, sr: &SurrogateRouter) -> Result<bool> {
    let probs = sr.predict(&query.concat_suffix(suffix))?;
    Ok(sr.target_pool().is_strong(argmax_index(&probs)))
}

/// Outcome of a suffix search.
pub struct AttackOutcome {
    pub suffix: Suffix,
    pub trace: Vec<TraceRow>,
    pub activation: ActivationState,
}

/// Greedy coordinate search with incremental query activation.
///
/// Each iteration evaluates the incumbent alongside `batch` sampled
/// single-token replacements on the active queries and keeps the lowest-
/// index minimizer, so the recorded loss never increases while the active
/// set is fixed. `sink` sees every trace row as it is produced, letting
/// callers persist the trace even if a later iteration fails.
pub fn optimize_suffix(
    queries: &[TokenSequence],
    sr: &SurrogateRouter,
    cfg: &AttackConfig,
    vocab: &Vocabulary,
    mut sink: Option<&mut dyn FnMut(&TraceRow) -> Result<()>>,
) -> Result<AttackOutcome> {
    if queries.is_empty() {
        return Err(Error::contract("suffix optimization needs at least one query"));
    }
    if queries.iter().any(TokenSequence::is_empty) {
        return Err(Error::EmptyQuery);
    }
    if cfg.iterations == 0 || cfg.batch == 0 {
        return Err(Error::contract("iterations and batch size must be positive"));
    }
    if cfg.top_k > vocab.size() {
        return Err(Error::contract(format!(
            "top-k {} exceeds vocabulary size {}",
            cfg.top_k,
            vocab.size()
        )));
    }
    let init = vocab.tokenize(&cfg.init_suffix);
    if init.is_empty() {
        return Err(Error::contract("initial suffix tokenizes to nothing"));
    }
    let mut suffix = Suffix::new(init, cfg.max_suffix_len)?;
    let total = queries.len();
    let mut active_count = 1usize;
    let mut rng = rng_from(cfg.seed);
    let mut trace: Vec<TraceRow> = Vec::new();

    for iteration in 0..cfg.iterations {
        let active = &queries[..active_count];
        let candidates = aggregated_candidates(active, &suffix, sr, cfg.top_k)?;

        let mut best_loss = attack_loss(active, &suffix, sr)?;
        let mut best = suffix.clone();
        for _ in 0..cfg.batch {
            let pos = rng.random_range(0..suffix.len());
            let set = &candidates[pos];
            let token = set[rng.random_range(0..set.len())];
            let variant = suffix.with_replacement(pos, token)?;
            let loss = attack_loss(active, &variant, sr)?;
            if loss < best_loss {
                best_loss = loss;
                best = variant;
            }
        }
        suffix = best;

        let row = TraceRow {
            iteration,
            active_queries: active_count,
            best_loss,
            suffix_text: suffix.text(vocab),
        };
        if let Some(s) = sink.as_deref_mut() {
            s(&row)?;
        }
        trace.push(row);

        let mut all_succeed = true;
        for q in active {
            if !succeeds(q, &suffix, sr)? {
                all_succeed = false;
                break;
            }
        }
        if all_succeed {
            if active_count < total {
                active_count += 1;
            } else {
                break;
            }
        }
    }

    Ok(AttackOutcome {
        suffix,
        trace,
        activation: ActivationState {
            active: active_count,
            total,
        },
    })
}
