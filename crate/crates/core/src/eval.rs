//! Attack evaluation: ASR, simulated cost impact, the whitespace defense,
//! and budget sweeps.
//!
//! Everything here reads the oracle in evaluation mode only — measurement
//! never spends attack budget.

use serde::{Deserialize, Serialize};

use crate::dataset::QueryRecord;
use crate::error::{Error, Result};
use crate::pool::{CostTable, ModelId};
use crate::target::{BudgetedOracle, OracleMode};
use crate::tokens::Suffix;
use crate::vocab::Vocabulary;

/// Routing outcome of one query with and without the suffix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub id: String,
    pub clean: ModelId,
    pub attacked: ModelId,
    pub clean_strong: bool,
    pub attacked_strong: bool,
}

/// Attack success rate over one dataset: the exact fraction of queries the
/// target routes to the strong tier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsrReport {
    pub dataset: String,
    pub suffix_text: String,
    pub outcomes: Vec<QueryOutcome>,
    pub asr: f64,
    pub clean_asr: f64,
    pub delta: f64,
}

/// Routes every query with and without the suffix and counts strong-tier
/// decisions exactly.
pub fn compute_asr(
    dataset: &[&QueryRecord],
    suffix: &Suffix,
    oracle: &BudgetedOracle,
    vocab: &Vocabulary,
    dataset_id: &str,
) -> Result<AsrReport> {
    if dataset.is_empty() {
        return Err(Error::contract("asr needs a nonempty dataset"));
    }
    if oracle.mode() != OracleMode::Evaluation {
        return Err(Error::contract("asr evaluation requires an evaluation-mode oracle"));
    }
    let pool = oracle.pool();
    let mut outcomes = Vec::with_capacity(dataset.len());
    let mut strong = 0usize;
    let mut clean_strong_count = 0usize;
    for rec in dataset {
        let q = vocab.tokenize(&rec.text);
        let clean = oracle.route_eval(&q).chosen;
        let attacked = oracle.route_eval(&q.concat_suffix(suffix)).chosen;
        let clean_is_strong = pool.is_strong_id(&clean).ok_or_else(|| {
            Error::contract(format!("decision `{clean}` outside the target pool"))
        })?;
        let attacked_is_strong = pool.is_strong_id(&attacked).ok_or_else(|| {
            Error::contract(format!("decision `{attacked}` outside the target pool"))
        })?;
        if attacked_is_strong {
            strong += 1;
        }
        if clean_is_strong {
            clean_strong_count += 1;
        }
        outcomes.push(QueryOutcome {
            id: rec.id.clone(),
            clean,
            attacked,
            clean_strong: clean_is_strong,
            attacked_strong: attacked_is_strong,
        });
    }
    let asr = strong as f64 / dataset.len() as f64;
    let clean_asr = clean_strong_count as f64 / dataset.len() as f64;
    Ok(AsrReport {
        dataset: dataset_id.to_string(),
        suffix_text: suffix.text(vocab),
        outcomes,
        asr,
        clean_asr,
        delta: asr - clean_asr,
    })
}

/// Simulated input-token cost per query, clean versus attacked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    pub clean_mean: f64,
    pub attacked_mean: f64,
    /// `attacked / clean`; absent when the clean mean is zero.
    pub ratio: Option<f64>,
}

/// Cost of a routed query: token count times the chosen model's price per
/// million tokens.
pub fn cost_report(
    dataset: &[&QueryRecord],
    suffix: &Suffix,
    oracle: &BudgetedOracle,
    costs: &CostTable,
    vocab: &Vocabulary,
) -> Result<CostReport> {
    if dataset.is_empty() {
        return Err(Error::contract("cost report needs a nonempty dataset"));
    }
    if !costs.covers(oracle.pool()) {
        return Err(Error::Config(vec![
            "cost table does not cover every pool model".into(),
        ]));
    }
    let mut clean_total = 0.0;
    let mut attacked_total = 0.0;
    for rec in dataset {
        let q = vocab.tokenize(&rec.text);
        let clean_choice = oracle.route_eval(&q).chosen;
        clean_total += q.len() as f64 * costs.price(&clean_choice)? / 1e6;
        let full = q.concat_suffix(suffix);
        let attacked_choice = oracle.route_eval(&full).chosen;
        attacked_total += full.len() as f64 * costs.price(&attacked_choice)? / 1e6;
    }
    let n = dataset.len() as f64;
    let clean_mean = clean_total / n;
    let attacked_mean = attacked_total / n;
    let ratio = if clean_mean > 0.0 {
        Some(attacked_mean / clean_mean)
    } else {
        None
    };
    Ok(CostReport {
        clean_mean,
        attacked_mean,
        ratio,
    })
}

/// The whitespace defense: every adjacent character pair in the suffix
/// region is split by a space (existing spaces are preserved); the query
/// region is untouched.
pub fn whitespace_defense(query_text: &str, suffix_text: &str) -> String {
    let spaced = space_out(suffix_text);
    if spaced.is_empty() {
        return query_text.to_string();
    }
    if query_text.is_empty() {
        return spaced;
    }
    format!("{query_text} {spaced}")
}

/// Join all characters of `text` with single spaces.
pub fn space_out(text: &str) -> String {
    let chars: Vec<String> = text.chars().map(|c| c.to_string()).collect();
    chars.join(" ")
}

/// One point of a query-budget sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: u64,
    pub agreement: f64,
    pub asr: f64,
}

/// Runs a fresh pipeline per budget through `runner` (surrogate training +
/// suffix optimization + evaluation at pinned seeds) and collects the
/// (budget, surrogate agreement, ASR) curve.
pub fn budget_sweep(
    budgets: &[u64],
    mut runner: impl FnMut(u64) -> Result<(f64, f64)>,
) -> Result<Vec<SweepPoint>> {
    if budgets.is_empty() {
        return Err(Error::contract("budget sweep needs at least one budget"));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("budgets must be sorted strictly ascending"));
    }
    budgets
        .iter()
        .map(|&b| {
            let (agreement, asr) = runner(b)?;
            Ok(SweepPoint {
                budget: b,
                agreement,
                asr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::pool::{ModelPool, Tier};
    use crate::rng::derive_seed;
    use crate::synth::{generate_dataset, SplitSizes, World};
    use crate::target::{make_target, TargetKind};
    use crate::tokens::TokenSequence;

    fn pool4() -> ModelPool {
        ModelPool::new(vec![
            (ModelId::from("pebble-3b"), Tier::Weak),
            (ModelId::from("swift-7b"), Tier::Weak),
            (ModelId::from("orion-32b"), Tier::Strong),
            (ModelId::from("atlas-70b"), Tier::Strong),
        ])
        .unwrap()
    }

    fn costs() -> CostTable {
        CostTable::new(vec![
            (ModelId::from("pebble-3b"), 0.4),
            (ModelId::from("swift-7b"), 0.9),
            (ModelId::from("orion-32b"), 9.0),
            (ModelId::from("atlas-70b"), 15.0),
        ])
    }

    fn fixture() -> (World, crate::dataset::Dataset, BudgetedOracle) {
        let w = World::generate(55, 200, 16, 0.97, 1.0).unwrap();
        let ds = generate_dataset(&w, 55, SplitSizes::default()).unwrap();
        let target = make_target(
            TargetKind::KeywordHeuristic,
            pool4(),
            derive_seed(55, "target"),
            0.25,
            &costs(),
            &w,
        )
        .unwrap();
        let oracle = BudgetedOracle::new(target, 120, OracleMode::Evaluation).unwrap();
        (w, ds, oracle)
    }

    #[test]
    fn asr_matches_independent_recount() {
        let (w, ds, oracle) = fixture();
        let eval = ds.split(Split::EvalIn);
        let slice = &eval[..50];
        let lexicon_suffix = {
            let ids: Vec<u32> = w.lexicon().iter().take(4).copied().collect();
            Suffix::new(TokenSequence::from_ids(ids, w.vocab()).unwrap(), 10).unwrap()
        };
        let report = compute_asr(slice, &lexicon_suffix, &oracle, w.vocab(), "eval-in").unwrap();

        // independent recount straight off the oracle
        let pool = oracle.pool();
        let mut strong = 0usize;
        let mut clean_strong = 0usize;
        for rec in slice {
            let q = w.vocab().tokenize(&rec.text);
            if pool
                .is_strong_id(&oracle.route_eval(&q.concat_suffix(&lexicon_suffix)).chosen)
                .unwrap()
            {
                strong += 1;
            }
            if pool.is_strong_id(&oracle.route_eval(&q).chosen).unwrap() {
                clean_strong += 1;
            }
        }
        assert_eq!(report.asr, strong as f64 / 50.0);
        assert_eq!(report.clean_asr, clean_strong as f64 / 50.0);
        assert_eq!(report.delta, report.asr - report.clean_asr);
        assert_eq!(report.outcomes.len(), 50);
    }

    #[test]
    fn empty_suffix_has_zero_delta() {
        let (w, ds, oracle) = fixture();
        let eval = ds.split(Split::EvalIn);
        let report = compute_asr(&eval[..20], &Suffix::empty(10), &oracle, w.vocab(), "x").unwrap();
        assert_eq!(report.asr, report.clean_asr);
        assert_eq!(report.delta, 0.0);
    }

    #[test]
    fn evaluation_leaves_the_budget_untouched() {
        let (w, ds, oracle) = fixture();
        let before = oracle.q_used();
        let eval = ds.split(Split::EvalIn);
        compute_asr(&eval[..20], &Suffix::empty(10), &oracle, w.vocab(), "x").unwrap();
        cost_report(&eval[..20], &Suffix::empty(10), &oracle, &costs(), w.vocab()).unwrap();
        assert_eq!(oracle.q_used(), before);
        assert_eq!(oracle.training_calls(), 0);
    }

    #[test]
    fn training_mode_oracle_is_rejected() {
        let (w, ds, mut oracle) = fixture();
        oracle.set_mode(OracleMode::Training);
        let eval = ds.split(Split::EvalIn);
        assert!(compute_asr(&eval[..5], &Suffix::empty(10), &oracle, w.vocab(), "x").is_err());
    }

    #[test]
    fn cost_ratio_is_exact_arithmetic() {
        // uniform price, suffix adds 1 token to 10-token queries, decisions
        // unchanged -> ratio is exactly 11/10
        let (w, _, oracle) = fixture();
        let uniform = CostTable::new(
            pool4()
                .ids()
                .iter()
                .map(|id| (id.clone(), 2.0))
                .collect::<Vec<_>>(),
        );
        let toks: Vec<String> = (20..30u32).map(|i| w.vocab().token(i).to_string()).collect();
        let recs: Vec<QueryRecord> = (0..20)
            .map(|i| QueryRecord {
                id: format!("c{i}"),
                text: toks.join(" "),
                split: Split::EvalIn,
            })
            .collect();
        let refs: Vec<&QueryRecord> = recs.iter().collect();
        let one_token =
            Suffix::new(TokenSequence::from_ids(vec![25], w.vocab()).unwrap(), 4).unwrap();
        let report = cost_report(&refs, &one_token, &oracle, &uniform, w.vocab()).unwrap();
        let ratio = report.ratio.unwrap();
        assert!((ratio - 1.1).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn flipping_every_query_strong_scales_cost_by_the_price_gap() {
        // strong tier priced 5x the weak tier; pick 20 seeded queries the
        // target routes weak cleanly and strong once the marker suffix is
        // appended, then hand-compute the expected ratio from token counts
        let (w, ds, oracle) = fixture();
        let five_to_one = CostTable::new(vec![
            (ModelId::from("pebble-3b"), 1.0),
            (ModelId::from("swift-7b"), 1.0),
            (ModelId::from("orion-32b"), 5.0),
            (ModelId::from("atlas-70b"), 5.0),
        ]);
        let suffix = Suffix::new(
            TokenSequence::from_ids(w.lexicon().to_vec(), w.vocab()).unwrap(),
            10,
        )
        .unwrap();
        let pool = oracle.pool();
        let picked: Vec<&QueryRecord> = ds
            .records()
            .iter()
            .filter(|r| {
                let q = w.vocab().tokenize(&r.text);
                let clean_weak = !pool.is_strong_id(&oracle.route_eval(&q).chosen).unwrap();
                let attacked_strong = pool
                    .is_strong_id(&oracle.route_eval(&q.concat_suffix(&suffix)).chosen)
                    .unwrap();
                clean_weak && attacked_strong
            })
            .take(20)
            .collect();
        assert_eq!(picked.len(), 20, "need 20 flipped queries");

        let report = cost_report(&picked, &suffix, &oracle, &five_to_one, w.vocab()).unwrap();
        // independent hand computation in the same accumulation order
        let mut clean_hand = 0.0;
        let mut attacked_hand = 0.0;
        for rec in &picked {
            let q = w.vocab().tokenize(&rec.text);
            clean_hand += q.len() as f64 * 1.0 / 1e6;
            attacked_hand += (q.len() + suffix.len()) as f64 * 5.0 / 1e6;
        }
        clean_hand /= 20.0;
        attacked_hand /= 20.0;
        assert_eq!(report.clean_mean, clean_hand);
        assert_eq!(report.attacked_mean, attacked_hand);
        let ratio = report.ratio.unwrap();
        assert_eq!(ratio, attacked_hand / clean_hand);
        // five times the price, corrected by the suffix token overhead
        assert!(ratio > 5.0 && ratio < 5.0 * 2.5, "ratio {ratio}");
    }

    #[test]
    fn zero_price_clean_cost_reports_no_ratio() {
        let (w, ds, oracle) = fixture();
        let free = CostTable::new(
            pool4()
                .ids()
                .iter()
                .map(|id| (id.clone(), 0.0))
                .collect::<Vec<_>>(),
        );
        let eval = ds.split(Split::EvalIn);
        let report = cost_report(&eval[..10], &Suffix::empty(4), &oracle, &free, w.vocab()).unwrap();
        assert_eq!(report.ratio, None);
    }

    #[test]
    fn missing_price_is_a_configuration_error() {
        let (w, ds, oracle) = fixture();
        let partial = CostTable::new(vec![(ModelId::from("pebble-3b"), 1.0)]);
        let eval = ds.split(Split::EvalIn);
        assert!(matches!(
            cost_report(&eval[..5], &Suffix::empty(4), &oracle, &partial, w.vocab()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn whitespace_defense_is_definitional() {
        assert_eq!(space_out("abc"), "a b c");
        assert_eq!(space_out("a b"), "a   b");
        assert_eq!(whitespace_defense("ask me", "abc"), "ask me a b c");
        assert_eq!(whitespace_defense("ask me", ""), "ask me");
    }

    #[test]
    fn whitespace_defense_is_stable_after_renormalization() {
        // collapsing the defended suffix back to single-spaced characters and
        // defending again reproduces the same normal form
        let s = "miro tabu!";
        let defended = space_out(s);
        let renorm: String = defended.split_whitespace().collect::<Vec<_>>().join(" ");
        let again: String = space_out(&renorm)
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(renorm, again);
    }

    #[test]
    fn sweep_requires_ascending_budgets_and_maps_runner_output() {
        let err = budget_sweep(&[80, 50], |_| Ok((0.0, 0.0)));
        assert!(err.is_err());
        let curve = budget_sweep(&[50, 80, 120, 150], |b| Ok((b as f64 / 200.0, 0.5))).unwrap();
        assert_eq!(curve.len(), 4);
        assert_eq!(curve[2].budget, 120);
        assert!((curve[3].agreement - 0.75).abs() < 1e-12);
    }
}
