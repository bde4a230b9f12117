//! Seeded synthetic experiment worlds: vocabulary, correlated encoders,
//! query datasets, and styled response corpora.
//!
//! Real sentence encoders agree with each other because they are trained on
//! the same language; that shared structure is what lets a surrogate built
//! on one encoder imitate a router built on another. The desk-scale stand-in
//! for it is a per-world base embedding table that every router's encoder
//! mixes with its own seeded view, plus a small "complexity lexicon" whose
//! tokens share a distinctive embedding direction. Keyword routers draw
//! their markers from that lexicon, the way real complexity heuristics key
//! on words every encoder already singles out.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{Dataset, QueryRecord, Split};
use crate::encoder::{EmbeddingTable, MeanPoolEncoder};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from};
use crate::vocab::{Vocabulary, UNKNOWN_TOKEN};

/// Size of the complexity lexicon: the canonical marker words every
/// keyword router keys on (with its own weights and threshold).
const LEXICON_SIZE: usize = 8;

/// Scale of the view-specific perturbation of the post map.
const POST_MAP_NOISE: f64 = 0.2;

const CONSONANTS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Everything routers and datasets share within one experiment.
#[derive(Debug, Clone)]
pub struct World {
    vocab: Vocabulary,
    lexicon: Vec<u32>,
    dim: usize,
    seed: u64,
    correlation: f64,
    lexicon_boost: f64,
    base: Matrix,
    lexicon_direction: Vec<f64>,
}

impl World {
    /// Builds the world from an existing vocabulary. The base table, lexicon
    /// membership, and lexicon direction all derive from `seed`, so a world
    /// can be reconstructed from (vocabulary file, seed, dim) alone.
    pub fn from_vocab(
        vocab: Vocabulary,
        seed: u64,
        dim: usize,
        correlation: f64,
        lexicon_boost: f64,
    ) -> Result<Self> {
        let v = vocab.size();
        let mut rng = rng_from(derive_seed(seed, "world-base"));
        let mut base = Matrix::seeded_normal(v, dim, 1.0, &mut rng);

        let mut dir_rng = rng_from(derive_seed(seed, "world-lexicon-direction"));
        let mut direction: Vec<f64> = (0..dim)
            .map(|_| dir_rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        for x in &mut direction {
            *x /= norm;
        }

        let lexicon = pick_lexicon(&vocab, seed);
        let strength = lexicon_boost * (dim as f64).sqrt();
        for &id in &lexicon {
            for (c, &g) in direction.iter().enumerate() {
                let cur = base.get(id as usize, c);
                base.set(id as usize, c, cur + strength * g);
            }
        }

        Ok(World {
            vocab,
            lexicon,
            dim,
            seed,
            correlation,
            lexicon_boost,
            base,
            lexicon_direction: direction,
        })
    }

    /// Generates the vocabulary and the world together.
    pub fn generate(seed: u64, vocab_size: usize, dim: usize, correlation: f64, lexicon_boost: f64) -> Result<Self> {
        let vocab = generate_vocabulary(seed, vocab_size)?;
        World::from_vocab(vocab, seed, dim, correlation, lexicon_boost)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lexicon(&self) -> &[u32] {
        &self.lexicon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn lexicon_boost(&self) -> f64 {
        self.lexicon_boost
    }

    /// A router's private encoder: its table is `rho * base + sqrt(1-rho^2) * view`
    /// (entries rescaled to the 1/sqrt(d) family), its post map a perturbed
    /// identity. Distinct view seeds give distinct but correlated encoders.
    pub fn encoder(&self, view_seed: u64) -> MeanPoolEncoder {
        let v = self.vocab.size();
        let d = self.dim;
        let rho = self.correlation.clamp(0.0, 1.0);
        let noise_scale = (1.0 - rho * rho).sqrt();
        let mut rng = rng_from(derive_seed(view_seed, "encoder-view"));
        let view = Matrix::seeded_normal(v, d, 1.0, &mut rng);
        let sigma = 1.0 / (d as f64).sqrt();
        let table = Matrix::from_fn(v, d, |r, c| {
            sigma * (rho * self.base.get(r, c) + noise_scale * view.get(r, c))
        });
        let mut post_rng = rng_from(derive_seed(view_seed, "encoder-post"));
        let noise = Matrix::seeded_normal(d, d, POST_MAP_NOISE / (d as f64).sqrt(), &mut post_rng);
        let post = Matrix::from_fn(d, d, |r, c| {
            let eye = if r == c { 1.0 } else { 0.0 };
            eye + noise.get(r, c)
        });
        MeanPoolEncoder::new(
            EmbeddingTable::new(table).expect("finite by construction"),
            post,
            view_seed,
        )
        .expect("square post map")
    }

    pub fn lexicon_direction(&self) -> &[f64] {
        &self.lexicon_direction
    }
}

fn pick_lexicon(vocab: &Vocabulary, seed: u64) -> Vec<u32> {
    let mut rng = rng_from(derive_seed(seed, "world-lexicon"));
    // word tokens only: skip <unk> and single-char punctuation
    let candidates: Vec<u32> = (0..vocab.size() as u32)
        .filter(|&id| {
            let t = vocab.token(id);
            t != UNKNOWN_TOKEN && t.chars().count() > 1
        })
        .collect();
    let want = LEXICON_SIZE.min(candidates.len());
    let mut pool = candidates;
    pool.shuffle(&mut rng);
    let mut picked: Vec<u32> = pool.into_iter().take(want).collect();
    picked.sort_unstable();
    picked
}

/// Deterministic pseudo-word vocabulary: `<unk>`, `!`, a few punctuation
/// marks, then distinct CVCV syllable words.
pub fn generate_vocabulary(seed: u64, size: usize) -> Result<Vocabulary> {
    let mut tokens: Vec<String> = vec![
        UNKNOWN_TOKEN.to_string(),
        "!".to_string(),
        "?".to_string(),
        ",".to_string(),
        ".".to_string(),
    ];
    let mut rng = rng_from(derive_seed(seed, "vocab-words"));
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    while tokens.len() < size {
        let syllables = 2 + rng.random_range(0..2);
        let mut word = String::new();
        for _ in 0..syllables {
            word.push_str(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
            word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if seen.insert(word.clone()) {
            tokens.push(word);
        }
    }
    Vocabulary::new(tokens)
}

/// How queries for one split are drawn.
#[derive(Debug, Clone)]
pub struct QueryProfile {
    /// Probability that a drawn token comes from the lexicon.
    pub lexicon_rate: f64,
    /// Inclusive token-count range.
    pub len_range: (usize, usize),
    /// Seed of the frequency tilt over common tokens.
    pub tilt_seed: u64,
}

impl QueryProfile {
    pub fn in_distribution(seed: u64) -> Self {
        QueryProfile {
            lexicon_rate: 0.18,
            len_range: (6, 14),
            tilt_seed: derive_seed(seed, "profile-in"),
        }
    }

    /// Shifted token frequencies, longer queries, rarer lexicon words.
    pub fn out_of_distribution(seed: u64) -> Self {
        QueryProfile {
            lexicon_rate: 0.10,
            len_range: (9, 18),
            tilt_seed: derive_seed(seed, "profile-ood"),
        }
    }
}

/// Sizes of the four splits.
#[derive(Debug, Clone, Copy)]
pub struct SplitSizes {
    pub proxy: usize,
    pub suffix_train: usize,
    pub eval_in: usize,
    pub eval_ood: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            proxy: 150,
            suffix_train: 60,
            eval_in: 100,
            eval_ood: 100,
        }
    }
}

/// Draws all four splits. In-distribution splits share one profile seeded
/// from `seed`; the out-of-distribution split uses a disjoint generation
/// seed and a shifted profile.
pub fn generate_dataset(world: &World, seed: u64, sizes: SplitSizes) -> Result<Dataset> {
    let mut records = Vec::new();
    let in_profile = QueryProfile::in_distribution(seed);
    let ood_profile = QueryProfile::out_of_distribution(derive_seed(seed, "ood-generation"));
    let plan = [
        (Split::Proxy, sizes.proxy, &in_profile, "proxy"),
        (Split::SuffixTrain, sizes.suffix_train, &in_profile, "sfx"),
        (Split::EvalIn, sizes.eval_in, &in_profile, "evin"),
        (Split::EvalOod, sizes.eval_ood, &ood_profile, "ood"),
    ];
    for (split, count, profile, tag) in plan {
        let mut rng = rng_from(derive_seed(seed, &format!("split-{tag}")));
        let weights = tilted_weights(world, profile);
        for i in 0..count {
            let text = sample_query(world, profile, &weights, &mut rng);
            records.push(QueryRecord {
                id: format!("{tag}-{i:04}"),
                text,
                split,
            });
        }
    }
    Dataset::new(records)
}

/// Seeded in-distribution probe queries, already tokenized. Routers use
/// these to calibrate their operating point the way deployed routers
/// calibrate cost thresholds on sample traffic.
pub fn probe_queries(world: &World, seed: u64, count: usize) -> Vec<crate::tokens::TokenSequence> {
    let profile = QueryProfile::in_distribution(seed);
    let weights = tilted_weights(world, &profile);
    let mut rng = rng_from(derive_seed(seed, "probe-queries"));
    (0..count)
        .map(|_| {
            let text = sample_query(world, &profile, &weights, &mut rng);
            world.vocab().tokenize(&text)
        })
        .collect()
}

/// Zipf-flavoured weights over non-lexicon word tokens, in an order tilted
/// by the profile seed.
fn tilted_weights(world: &World, profile: &QueryProfile) -> Vec<(u32, f64)> {
    let lexicon: std::collections::HashSet<u32> = world.lexicon().iter().copied().collect();
    let mut common: Vec<u32> = (0..world.vocab().size() as u32)
        .filter(|&id| {
            let t = world.vocab().token(id);
            t != UNKNOWN_TOKEN && t.chars().count() > 1 && !lexicon.contains(&id)
        })
        .collect();
    let mut rng = rng_from(profile.tilt_seed);
    common.shuffle(&mut rng);
    common
        .into_iter()
        .enumerate()
        .map(|(rank, id)| (id, 1.0 / (rank as f64 + 2.0)))
        .collect()
}

fn sample_query(
    world: &World,
    profile: &QueryProfile,
    weights: &[(u32, f64)],
    rng: &mut impl Rng,
) -> String {
    let len = rng.random_range(profile.len_range.0..=profile.len_range.1);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let id = if rng.random::<f64>() < profile.lexicon_rate && !world.lexicon().is_empty() {
            world.lexicon()[rng.random_range(0..world.lexicon().len())]
        } else {
            pick_weighted(weights, rng)
        };
        words.push(world.vocab().token(id).to_string());
    }
    words.join(" ")
}

fn pick_weighted(weights: &[(u32, f64)], rng: &mut impl Rng) -> u32 {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut roll = rng.random::<f64>() * total;
    for (id, w) in weights {
        roll -= w;
        if roll <= 0.0 {
            return *id;
        }
    }
    weights.last().map(|(id, _)| *id).unwrap_or(0)
}

const STRONG_OPENERS: &[&str] = &[
    "let us work through this carefully",
    "first, restate the problem precisely",
    "we proceed in explicit numbered steps",
    "begin by writing the governing relation",
];
const STRONG_MOVES: &[&str] = &[
    "therefore the intermediate quantity becomes",
    "we verify the expression by substitution",
    "derive the bound and simplify each term",
    "hence the recurrence resolves to",
    "checking units confirms the derivation",
    "rewriting yields an equivalent formulation",
];
const WEAK_OPENERS: &[&str] = &["sure", "ok", "short answer", "roughly", "basically"];
const WEAK_MOVES: &[&str] = &[
    "it is about",
    "just use",
    "that one is",
    "the answer is",
    "should be fine",
];

/// Styled synthetic response corpora: verbose multi-step "strong" replies and
/// terse "weak" replies, for fingerprint-classifier experiments.
pub fn generate_style_corpora(seed: u64, strong_count: usize, weak_count: usize) -> (Vec<String>, Vec<String>) {
    let mut rng = rng_from(derive_seed(seed, "style-corpora"));
    let noise_word = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut w = String::new();
        for _ in 0..2 {
            w.push_str(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
            w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        w
    };
    let mut strong = Vec::with_capacity(strong_count);
    for _ in 0..strong_count {
        let mut doc = String::new();
        doc.push_str(STRONG_OPENERS[rng.random_range(0..STRONG_OPENERS.len())]);
        let steps = 3 + rng.random_range(0..4);
        for s in 1..=steps {
            doc.push_str(&format!(". step {s}: "));
            doc.push_str(STRONG_MOVES[rng.random_range(0..STRONG_MOVES.len())]);
            doc.push(' ');
            doc.push_str(&noise_word(&mut rng));
        }
        doc.push_str(". thus the final result follows.");
        strong.push(doc);
    }
    let mut weak = Vec::with_capacity(weak_count);
    for _ in 0..weak_count {
        let mut doc = String::new();
        doc.push_str(WEAK_OPENERS[rng.random_range(0..WEAK_OPENERS.len())]);
        doc.push_str(", ");
        doc.push_str(WEAK_MOVES[rng.random_range(0..WEAK_MOVES.len())]);
        doc.push(' ');
        doc.push_str(&noise_word(&mut rng));
        if rng.random::<f64>() < 0.4 {
            doc.push(' ');
            doc.push_str(&noise_word(&mut rng));
        }
        doc.push('.');
        weak.push(doc);
    }
    (strong, weak)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_generation_is_deterministic_and_distinct() {
        let a = generate_vocabulary(9, 200).unwrap();
        let b = generate_vocabulary(9, 200).unwrap();
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(a.size(), 200);
        let uniq: std::collections::HashSet<_> = a.tokens().iter().collect();
        assert_eq!(uniq.len(), 200);
        assert!(a.tokens().contains(&"!".to_string()));
    }

    #[test]
    fn world_reconstruction_matches() {
        let w1 = World::generate(5, 120, 16, 0.9, 0.8).unwrap();
        let w2 = World::from_vocab(w1.vocab().clone(), 5, 16, 0.9, 0.8).unwrap();
        assert_eq!(w1.lexicon(), w2.lexicon());
        let e1 = w1.encoder(77);
        let e2 = w2.encoder(77);
        assert_eq!(e1.table().matrix(), e2.table().matrix());
        assert_eq!(e1.post_map(), e2.post_map());
    }

    #[test]
    fn encoders_with_distinct_views_differ_but_correlate() {
        let w = World::generate(6, 150, 16, 0.9, 0.6).unwrap();
        let a = w.encoder(1);
        let b = w.encoder(2);
        assert_ne!(a.table().matrix(), b.table().matrix());
        // correlation across the shared base: cosine of the flattened tables
        let av: Vec<f64> = a.table().matrix().iter().collect();
        let bv: Vec<f64> = b.table().matrix().iter().collect();
        let dot: f64 = av.iter().zip(&bv).map(|(x, y)| x * y).sum();
        let na: f64 = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = dot / (na * nb);
        assert!(cos > 0.6, "tables should share the base structure, cos={cos}");
    }

    #[test]
    fn dataset_splits_have_requested_sizes_and_distinct_ids() {
        let w = World::generate(7, 200, 16, 0.9, 0.8).unwrap();
        let ds = generate_dataset(&w, 7, SplitSizes::default()).unwrap();
        assert_eq!(ds.split(Split::Proxy).len(), 150);
        assert_eq!(ds.split(Split::SuffixTrain).len(), 60);
        assert_eq!(ds.split(Split::EvalIn).len(), 100);
        assert_eq!(ds.split(Split::EvalOod).len(), 100);
    }

    #[test]
    fn ood_split_uses_disjoint_generation() {
        let w = World::generate(8, 200, 16, 0.9, 0.8).unwrap();
        let ds = generate_dataset(&w, 8, SplitSizes::default()).unwrap();
        let texts_in: std::collections::HashSet<_> =
            ds.split(Split::EvalIn).iter().map(|r| r.text.clone()).collect();
        let overlap = ds
            .split(Split::EvalOod)
            .iter()
            .filter(|r| texts_in.contains(&r.text))
            .count();
        assert!(overlap <= 2, "ood split should not replay eval-in queries");
    }

    #[test]
    fn style_corpora_are_reproducible_and_styled() {
        let (s1, w1) = generate_style_corpora(3, 10, 10);
        let (s2, w2) = generate_style_corpora(3, 10, 10);
        assert_eq!(s1, s2);
        assert_eq!(w1, w2);
        let mean_len =
            |docs: &[String]| docs.iter().map(String::len).sum::<usize>() as f64 / docs.len() as f64;
        assert!(mean_len(&s1) > 2.0 * mean_len(&w1));
    }
}
