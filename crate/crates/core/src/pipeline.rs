//! Pipeline orchestration: stage execution, run-directory artifacts, and the
//! run manifest.
//!
//! Stages run in a fixed order, each consuming the artifacts of the previous
//! one from the run directory. The manifest is rewritten after every stage
//! transition, so an aborted run names its last completed stage and a
//! resumed run skips completed stages without touching their artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attack::{optimize_suffix, TraceRow};
use crate::config::RunConfig;
use crate::dataset::{Dataset, QueryRecord, Split};
use crate::error::{Error, Result};
use crate::eval::{budget_sweep, compute_asr, cost_report, whitespace_defense, AsrReport};
use crate::fingerprint::{fingerprint_score, fit_fingerprint};
use crate::pool::{CostTable, ModelPool};
use crate::rng::derive_seed;
use crate::surrogate::{
    load_checkpoint, save_checkpoint, surrogate_accuracy, train_surrogate, MemberRouter,
    SurrogateRouter,
};
use crate::synth::{generate_style_corpora, World};
use crate::target::{make_target, BudgetedOracle, OracleMode, SyntheticRouter, TargetKind};
use crate::tokens::{Suffix, TokenSequence};
use crate::vocab::Vocabulary;

/// Stage names in execution order.
pub const STAGE_ORDER: [&str; 7] = [
    "train-surrogate",
    "optimize-suffix",
    "evaluate",
    "defense",
    "sweep-budget",
    "fingerprint",
    "report",
];

/// Environment variable overriding the root for relative output paths.
pub const OUT_ROOT_ENV: &str = "REROUTE_OUT_ROOT";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUFFIX_TEXT_FILE: &str = "suffix.txt";
pub const SUFFIX_IDS_FILE: &str = "suffix_ids.txt";
pub const TRACE_FILE: &str = "attack_trace.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub state: String,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub created_unix: u64,
    pub stages: BTreeMap<String, StageStatus>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            config_hash,
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            stages: BTreeMap::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::numeric(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn stage_completed(&self, stage: &str) -> bool {
        self.stages
            .get(stage)
            .map(|s| s.state == "completed")
            .unwrap_or(false)
    }

    pub fn last_completed(&self) -> Option<&str> {
        STAGE_ORDER
            .iter()
            .rev()
            .find(|s| self.stage_completed(s))
            .copied()
    }
}

/// Everything a stage needs, rebuilt deterministically from the config.
pub struct Materials {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub world: World,
    pub dataset: Dataset,
    pub target_pool: ModelPool,
    pub costs: CostTable,
}

impl Materials {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let vocab = Vocabulary::read_file(&config.vocab_path)?;
        let world = World::from_vocab(
            vocab.clone(),
            config.world_seed,
            config.dim,
            config.correlation,
            config.lexicon_boost,
        )?;
        let dataset = Dataset::read_file(&config.queries_path)?;
        let target_pool = ModelPool::read_file(&config.target_pool_path)?;
        let costs = CostTable::read_file(&config.cost_path)?;
        if !costs.covers(&target_pool) {
            return Err(Error::Config(vec![
                "cost table does not cover the target pool".into(),
            ]));
        }
        Ok(Materials {
            config: config.clone(),
            vocab,
            world,
            dataset,
            target_pool,
            costs,
        })
    }

    pub fn build_oracle(&self, mode: OracleMode) -> Result<BudgetedOracle> {
        let kind = TargetKind::from_str(&self.config.target_kind)?;
        let target = make_target(
            kind,
            self.target_pool.clone(),
            self.config.target_seed,
            self.config.lambda,
            &self.costs,
            &self.world,
        )?;
        BudgetedOracle::new(target, self.config.budget, mode)
    }

    pub fn build_members(&self) -> Result<Vec<Box<dyn MemberRouter>>> {
        self.config
            .members
            .iter()
            .map(|spec| {
                let kind = TargetKind::from_str(&spec.kind)?;
                let pool = ModelPool::read_file(&spec.pool_path)?;
                let router = SyntheticRouter::build(
                    kind,
                    pool,
                    spec.seed,
                    self.config.lambda,
                    &self.costs,
                    &self.world,
                )?;
                Ok(Box::new(router) as Box<dyn MemberRouter>)
            })
            .collect()
    }

    fn tokenized_split(&self, split: Split) -> Vec<(String, TokenSequence)> {
        self.dataset
            .split(split)
            .into_iter()
            .map(|r| (r.id.clone(), self.vocab.tokenize(&r.text)))
            .collect()
    }
}

/// Resolves the run directory: relative paths hang off `REROUTE_OUT_ROOT`
/// when it is set.
pub fn resolve_run_dir(out_dir: &Path) -> PathBuf {
    if out_dir.is_absolute() {
        return out_dir.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(out_dir),
        None => out_dir.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::numeric(format!("serialization: {e}")))?;
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

fn require_artifact(run_dir: &Path, file: &str, produced_by: &str) -> Result<PathBuf> {
    let path = run_dir.join(file);
    if !path.exists() {
        return Err(Error::Dependency {
            stage: produced_by.to_string(),
            path: path.display().to_string(),
        });
    }
    Ok(path)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OracleAudit {
    pub budget: u64,
    pub q_used: u64,
    pub training_calls: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttackSummary {
    pub iterations_run: usize,
    pub activated_queries: usize,
    pub total_queries: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub asr: f64,
    pub clean_asr: f64,
    pub delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub suffix_text: String,
    pub eval_in: SplitMetrics,
    pub eval_ood: SplitMetrics,
    pub cost_clean_mean: f64,
    pub cost_attacked_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DefenseSummary {
    pub eval_in_attacked: f64,
    pub eval_in_defended: f64,
    pub eval_ood_attacked: f64,
    pub eval_ood_defended: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FingerprintSummary {
    pub features: usize,
    pub holdout_accuracy: f64,
    pub strong_mean_score: f64,
    pub weak_mean_score: f64,
    pub score_gap: f64,
}

/// The merged metric summary the report stage emits.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub suffix_text: String,
    pub eval_in: SplitMetrics,
    pub eval_ood: SplitMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<FingerprintSummary>,
}

fn asr_csv(report: &AsrReport) -> String {
    let mut csv = String::from("id,clean,attacked,attacked_strong\n");
    for o in &report.outcomes {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            o.id, o.clean, o.attacked, o.attacked_strong
        ));
    }
    csv
}

fn load_suffix(run_dir: &Path, materials: &Materials) -> Result<Suffix> {
    let ids_path = require_artifact(run_dir, SUFFIX_IDS_FILE, "optimize-suffix")?;
    let text = std::fs::read_to_string(&ids_path)
        .map_err(|e| Error::io(ids_path.display().to_string(), e))?;
    let ids: Vec<u32> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<u32>().map_err(|e| Error::Parse {
                path: ids_path.display().to_string(),
                line: 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    Suffix::new(
        TokenSequence::from_ids(ids, &materials.vocab)?,
        materials.config.max_suffix_len,
    )
}

fn load_surrogate(run_dir: &Path, materials: &Materials) -> Result<SurrogateRouter> {
    let ckpt = run_dir.join("surrogate");
    if !ckpt.join(crate::surrogate::CKPT_META).exists() {
        return Err(Error::Dependency {
            stage: "train-surrogate".to_string(),
            path: ckpt.join(crate::surrogate::CKPT_META).display().to_string(),
        });
    }
    load_checkpoint(&ckpt, materials.build_members()?)
}

/// Runs one named stage against a run directory, returning the artifact
/// files it produced.
pub fn run_stage(materials: &Materials, run_dir: &Path, stage: &str) -> Result<Vec<String>> {
    match stage {
        "train-surrogate" => stage_train(materials, run_dir),
        "optimize-suffix" => stage_attack(materials, run_dir),
        "evaluate" => stage_evaluate(materials, run_dir),
        "defense" => stage_defense(materials, run_dir),
        "sweep-budget" => stage_sweep(materials, run_dir, &materials.config.sweep_budgets),
        "fingerprint" => stage_fingerprint(materials, run_dir),
        "report" => stage_report(materials, run_dir),
        other => Err(Error::contract(format!("unknown stage `{other}`"))),
    }
}

fn stage_train(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let cfg = &materials.config;
    let mut oracle = materials.build_oracle(OracleMode::Training)?;
    let proxy_all = materials.dataset.split(Split::Proxy);
    if proxy_all.is_empty() {
        return Err(Error::Config(vec!["dataset has no proxy split".into()]));
    }
    let take = proxy_all.len().min(cfg.budget as usize);
    let proxy: Vec<&QueryRecord> = proxy_all.into_iter().take(take).collect();
    let encoder = materials
        .world
        .encoder(derive_seed(cfg.seed, "surrogate-encoder"));
    let (sr, log) = train_surrogate(
        &proxy,
        &mut oracle,
        &materials.vocab,
        encoder,
        materials.build_members()?,
        &cfg.hyper(),
    )?;
    let ckpt = run_dir.join("surrogate");
    save_checkpoint(&sr, &log, &ckpt)?;
    let audit = OracleAudit {
        budget: oracle.q_max(),
        q_used: oracle.q_used(),
        training_calls: oracle.training_calls(),
    };
    write_json(&run_dir.join("oracle_audit.json"), &audit)?;
    Ok(vec![
        "surrogate/".into(),
        "oracle_audit.json".into(),
    ])
}

fn stage_attack(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let sr = load_surrogate(run_dir, materials)?;
    let queries: Vec<TokenSequence> = materials
        .tokenized_split(Split::SuffixTrain)
        .into_iter()
        .map(|(_, q)| q)
        .collect();
    if queries.is_empty() {
        return Err(Error::Config(vec!["dataset has no suffix-train split".into()]));
    }
    let trace_path = run_dir.join(TRACE_FILE);
    write_text(&trace_path, "iteration,active_queries,best_loss,suffix_text\n")?;
    let mut sink = |row: &TraceRow| -> Result<()> {
        let line = format!(
            "{},{},{},{}\n",
            row.iteration, row.active_queries, row.best_loss, row.suffix_text
        );
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new()
            .append(true)
            .open(&trace_path)
            .map_err(|e| Error::io(trace_path.display().to_string(), e))?;
        file.write_all(line.as_bytes())
            .map_err(|e| Error::io(trace_path.display().to_string(), e))
    };
    let outcome = optimize_suffix(
        &queries,
        &sr,
        &materials.config.attack(),
        &materials.vocab,
        Some(&mut sink),
    )?;
    let ids = outcome
        .suffix
        .ids()
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    write_text(&run_dir.join(SUFFIX_IDS_FILE), &(ids + "\n"))?;
    write_text(
        &run_dir.join(SUFFIX_TEXT_FILE),
        &(outcome.suffix.text(&materials.vocab) + "\n"),
    )?;
    let summary = AttackSummary {
        iterations_run: outcome.trace.len(),
        activated_queries: outcome.activation.active,
        total_queries: outcome.activation.total,
        final_loss: outcome.trace.last().map(|r| r.best_loss).unwrap_or(0.0),
    };
    write_json(&run_dir.join("attack_summary.json"), &summary)?;
    Ok(vec![
        TRACE_FILE.into(),
        SUFFIX_IDS_FILE.into(),
        SUFFIX_TEXT_FILE.into(),
        "attack_summary.json".into(),
    ])
}

fn stage_evaluate(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let suffix = load_suffix(run_dir, materials)?;
    let oracle = materials.build_oracle(OracleMode::Evaluation)?;
    let eval_in = materials.dataset.split(Split::EvalIn);
    let eval_ood = materials.dataset.split(Split::EvalOod);
    if eval_in.is_empty() || eval_ood.is_empty() {
        return Err(Error::Config(vec!["dataset needs eval-in and eval-ood splits".into()]));
    }
    let report_in = compute_asr(&eval_in, &suffix, &oracle, &materials.vocab, "eval-in")?;
    let report_ood = compute_asr(&eval_ood, &suffix, &oracle, &materials.vocab, "eval-ood")?;
    let cost = cost_report(&eval_in, &suffix, &oracle, &materials.costs, &materials.vocab)?;
    write_text(&run_dir.join("asr_eval_in.csv"), &asr_csv(&report_in))?;
    write_text(&run_dir.join("asr_eval_ood.csv"), &asr_csv(&report_ood))?;
    let summary = EvalSummary {
        suffix_text: suffix.text(&materials.vocab),
        eval_in: SplitMetrics {
            asr: report_in.asr,
            clean_asr: report_in.clean_asr,
            delta: report_in.delta,
        },
        eval_ood: SplitMetrics {
            asr: report_ood.asr,
            clean_asr: report_ood.clean_asr,
            delta: report_ood.delta,
        },
        cost_clean_mean: cost.clean_mean,
        cost_attacked_mean: cost.attacked_mean,
        cost_ratio: cost.ratio,
    };
    write_json(&run_dir.join(EVAL_SUMMARY_FILE), &summary)?;
    Ok(vec![
        "asr_eval_in.csv".into(),
        "asr_eval_ood.csv".into(),
        EVAL_SUMMARY_FILE.into(),
    ])
}

fn stage_defense(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let suffix = load_suffix(run_dir, materials)?;
    let suffix_text = suffix.text(&materials.vocab);
    let oracle = materials.build_oracle(OracleMode::Evaluation)?;
    let pool = oracle.pool().clone();
    let mut csv = String::from("split,id,attacked_strong,defended_strong\n");
    let mut rates = Vec::new();
    for (split, name) in [(Split::EvalIn, "eval-in"), (Split::EvalOod, "eval-ood")] {
        let records = materials.dataset.split(split);
        let mut attacked_strong = 0usize;
        let mut defended_strong = 0usize;
        for rec in &records {
            let q = materials.vocab.tokenize(&rec.text);
            let attacked = pool
                .is_strong_id(&oracle.route_eval(&q.concat_suffix(&suffix)).chosen)
                .unwrap_or(false);
            let defended_text = whitespace_defense(&rec.text, &suffix_text);
            let defended_q = materials.vocab.tokenize(&defended_text);
            let defended = pool
                .is_strong_id(&oracle.route_eval(&defended_q).chosen)
                .unwrap_or(false);
            if attacked {
                attacked_strong += 1;
            }
            if defended {
                defended_strong += 1;
            }
            csv.push_str(&format!("{name},{},{attacked},{defended}\n", rec.id));
        }
        let n = records.len().max(1) as f64;
        rates.push((attacked_strong as f64 / n, defended_strong as f64 / n));
    }
    write_text(&run_dir.join("defense.csv"), &csv)?;
    let summary = DefenseSummary {
        eval_in_attacked: rates[0].0,
        eval_in_defended: rates[0].1,
        eval_ood_attacked: rates[1].0,
        eval_ood_defended: rates[1].1,
    };
    write_json(&run_dir.join("defense_summary.json"), &summary)?;
    Ok(vec!["defense.csv".into(), "defense_summary.json".into()])
}

fn stage_sweep(materials: &Materials, run_dir: &Path, budgets: &[u64]) -> Result<Vec<String>> {
    let cfg = &materials.config;
    let proxy_all = materials.dataset.split(Split::Proxy);
    let max_budget = budgets.iter().copied().max().unwrap_or(0) as usize;
    if proxy_all.len() < max_budget {
        return Err(Error::Config(vec![format!(
            "proxy split has {} queries, sweep needs {max_budget}",
            proxy_all.len()
        )]));
    }
    let eval_in = materials.dataset.split(Split::EvalIn);
    let suffix_queries: Vec<TokenSequence> = materials
        .tokenized_split(Split::SuffixTrain)
        .into_iter()
        .map(|(_, q)| q)
        .collect();

    let curve = budget_sweep(budgets, |budget| {
        let mut oracle = materials.build_oracle(OracleMode::Training)?;
        // the oracle allows the configured budget; the sweep restricts itself
        // to the first `budget` proxy queries
        let proxy: Vec<&QueryRecord> = proxy_all.iter().take(budget as usize).copied().collect();
        let encoder = materials
            .world
            .encoder(derive_seed(cfg.seed, "surrogate-encoder"));
        let mut hyper = cfg.hyper();
        hyper.seed = derive_seed(cfg.seed, "surrogate");
        let (sr, _log) = train_surrogate(
            &proxy,
            &mut oracle,
            &materials.vocab,
            encoder,
            materials.build_members()?,
            &hyper,
        )?;
        oracle.set_mode(OracleMode::Evaluation);
        let labeled: Vec<(TokenSequence, crate::pool::ModelId)> = eval_in
            .iter()
            .map(|r| {
                let q = materials.vocab.tokenize(&r.text);
                let want = oracle.route_eval(&q).chosen;
                (q, want)
            })
            .collect();
        let agreement = surrogate_accuracy(&sr, &labeled)?;
        let outcome = optimize_suffix(
            &suffix_queries,
            &sr,
            &cfg.attack(),
            &materials.vocab,
            None,
        )?;
        let report = compute_asr(&eval_in, &outcome.suffix, &oracle, &materials.vocab, "eval-in")?;
        Ok((agreement, report.asr))
    })?;

    let mut csv = String::from("budget,agreement,asr\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{}\n", p.budget, p.agreement, p.asr));
    }
    write_text(&run_dir.join("sweep.csv"), &csv)?;
    Ok(vec!["sweep.csv".into()])
}

fn stage_fingerprint(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let cfg = &materials.config;
    let docs = cfg.fingerprint_docs;
    let (strong, weak) = generate_style_corpora(derive_seed(cfg.seed, "fingerprint"), docs, docs);
    let hold = (docs / 4).max(1);
    let model = fit_fingerprint(&strong[..docs - hold], &weak[..docs - hold])?;
    let mut correct = 0usize;
    let mut strong_mean = 0.0;
    let mut weak_mean = 0.0;
    for d in &strong[docs - hold..] {
        let s = fingerprint_score(&model, d);
        strong_mean += s;
        if s >= 0.5 {
            correct += 1;
        }
    }
    for d in &weak[docs - hold..] {
        let s = fingerprint_score(&model, d);
        weak_mean += s;
        if s < 0.5 {
            correct += 1;
        }
    }
    strong_mean /= hold as f64;
    weak_mean /= hold as f64;
    let fp_dir = run_dir.join("fingerprint");
    model.save(&fp_dir)?;
    let summary = FingerprintSummary {
        features: model.feature_count(),
        holdout_accuracy: correct as f64 / (2 * hold) as f64,
        strong_mean_score: strong_mean,
        weak_mean_score: weak_mean,
        score_gap: strong_mean - weak_mean,
    };
    write_json(&run_dir.join("fingerprint_summary.json"), &summary)?;
    Ok(vec!["fingerprint/".into(), "fingerprint_summary.json".into()])
}

fn stage_report(materials: &Materials, run_dir: &Path) -> Result<Vec<String>> {
    let eval_path = require_artifact(run_dir, EVAL_SUMMARY_FILE, "evaluate")?;
    let eval: EvalSummary = read_json(&eval_path)?;
    let defense: Option<DefenseSummary> = run_dir
        .join("defense_summary.json")
        .exists()
        .then(|| read_json(&run_dir.join("defense_summary.json")))
        .transpose()?;
    let fingerprint: Option<FingerprintSummary> = run_dir
        .join("fingerprint_summary.json")
        .exists()
        .then(|| read_json(&run_dir.join("fingerprint_summary.json")))
        .transpose()?;

    let mut table = String::new();
    table.push_str(&format!("target: {}\n", materials.config.target_kind));
    table.push_str(&format!("suffix: {}\n\n", eval.suffix_text));
    table.push_str("dataset    clean-asr  attacked-asr  delta\n");
    for (name, m) in [("eval-in", &eval.eval_in), ("eval-ood", &eval.eval_ood)] {
        table.push_str(&format!(
            "{name:<10} {:>9.3} {:>13.3} {:>+7.3}\n",
            m.clean_asr, m.asr, m.delta
        ));
    }
    if let Some(ratio) = eval.cost_ratio {
        table.push_str(&format!("\ncost per query: {:.6} -> {:.6} ({ratio:.2}x)\n",
            eval.cost_clean_mean, eval.cost_attacked_mean));
    }
    if let Some(d) = &defense {
        table.push_str(&format!(
            "\nwhitespace defense: eval-in {:.3} -> {:.3}, eval-ood {:.3} -> {:.3}\n",
            d.eval_in_attacked, d.eval_in_defended, d.eval_ood_attacked, d.eval_ood_defended
        ));
    }
    if let Some(f) = &fingerprint {
        table.push_str(&format!(
            "\nfingerprint: holdout accuracy {:.3}, score gap {:.3} ({} features)\n",
            f.holdout_accuracy, f.score_gap, f.features
        ));
    }
    write_text(&run_dir.join("report.txt"), &table)?;

    let summary = RunSummary {
        suffix_text: eval.suffix_text.clone(),
        eval_in: eval.eval_in.clone(),
        eval_ood: eval.eval_ood.clone(),
        cost_ratio: eval.cost_ratio,
        defense,
        fingerprint,
    };
    write_json(&run_dir.join(SUMMARY_FILE), &summary)?;
    Ok(vec!["report.txt".into(), SUMMARY_FILE.into()])
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub resume: bool,
    pub through_stage: Option<String>,
}

/// Stages this configuration wants, in order.
fn planned_stages(cfg: &RunConfig) -> Vec<&'static str> {
    let mut stages = vec!["train-surrogate", "optimize-suffix", "evaluate"];
    if cfg.run_defense {
        stages.push("defense");
    }
    if cfg.run_sweep {
        stages.push("sweep-budget");
    }
    if cfg.run_fingerprint {
        stages.push("fingerprint");
    }
    stages.push("report");
    stages
}

/// Executes the pipeline into the config's run directory.
///
/// The manifest is persisted after every stage; on failure the failing stage
/// is recorded and partial artifacts stay in place. With `resume`, stages
/// already marked completed are skipped and their artifacts left untouched.
pub fn run_pipeline(cfg: &RunConfig, opts: &PipelineOptions) -> Result<RunManifest> {
    let run_dir = resolve_run_dir(&cfg.out_dir);
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    let materials = Materials::load(cfg)?;

    let mut manifest = if opts.resume && run_dir.join(MANIFEST_FILE).exists() {
        let existing = RunManifest::load(&run_dir)?;
        if existing.config_hash != cfg.content_hash() {
            return Err(Error::Config(vec![
                "resume requested but the configuration differs from the original run".into(),
            ]));
        }
        existing
    } else {
        RunManifest::new(cfg.content_hash())
    };
    // config snapshot for later stages and audits
    write_json(&run_dir.join("config.json"), cfg)?;

    for stage in planned_stages(cfg) {
        if opts.resume && manifest.stage_completed(stage) {
            continue;
        }
        match run_stage(&materials, &run_dir, stage) {
            Ok(artifacts) => {
                manifest.stages.insert(
                    stage.to_string(),
                    StageStatus {
                        state: "completed".into(),
                        artifacts,
                        error: None,
                    },
                );
                manifest.save(&run_dir)?;
            }
            Err(e) => {
                manifest.stages.insert(
                    stage.to_string(),
                    StageStatus {
                        state: "failed".into(),
                        artifacts: Vec::new(),
                        error: Some(e.to_string()),
                    },
                );
                manifest.save(&run_dir)?;
                return Err(e);
            }
        }
        if let Some(last) = &opts.through_stage {
            if stage == last {
                break;
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{ModelId, Tier};
    use crate::synth;

    /// Writes a full desk-scale experiment (data + config) into a directory.
    pub(crate) fn write_experiment(dir: &Path, seed: u64, extra: &str) -> PathBuf {
        let world = synth::World::generate(seed, 200, 16, 0.97, 1.0).unwrap();
        world.vocab().write_file(&dir.join("vocab.txt")).unwrap();
        let ds = synth::generate_dataset(
            &world,
            seed,
            synth::SplitSizes {
                proxy: 150,
                suffix_train: 40,
                eval_in: 60,
                eval_ood: 60,
            },
        )
        .unwrap();
        ds.write_file(&dir.join("queries.tsv")).unwrap();
        let target_pool = ModelPool::new(vec![
            (ModelId::from("pebble-3b"), Tier::Weak),
            (ModelId::from("swift-7b"), Tier::Weak),
            (ModelId::from("orion-32b"), Tier::Strong),
            (ModelId::from("atlas-70b"), Tier::Strong),
        ])
        .unwrap();
        target_pool.write_file(&dir.join("target_pool.tsv")).unwrap();
        let member_a = ModelPool::new(vec![
            (ModelId::from("atlas-70b"), Tier::Strong),
            (ModelId::from("pebble-3b"), Tier::Weak),
            (ModelId::from("nimbus-13b"), Tier::Weak),
        ])
        .unwrap();
        member_a.write_file(&dir.join("member_a.tsv")).unwrap();
        let member_b = ModelPool::new(vec![
            (ModelId::from("orion-32b"), Tier::Strong),
            (ModelId::from("swift-7b"), Tier::Weak),
            (ModelId::from("nimbus-13b"), Tier::Weak),
        ])
        .unwrap();
        member_b.write_file(&dir.join("member_b.tsv")).unwrap();
        let costs = CostTable::new(vec![
            (ModelId::from("pebble-3b"), 0.4),
            (ModelId::from("swift-7b"), 0.9),
            (ModelId::from("orion-32b"), 9.0),
            (ModelId::from("atlas-70b"), 15.0),
            (ModelId::from("nimbus-13b"), 1.5),
        ]);
        costs.write_file(&dir.join("costs.txt")).unwrap();

        let body = format!(
            "[run]\nseed = {seed}\nout = {}\n\n\
             [data]\nvocab = vocab.txt\nqueries = queries.tsv\nworld_seed = {seed}\n\n\
             [target]\nkind = keyword-heuristic\nseed = 900\nlambda = 0.25\npool = target_pool.tsv\ncosts = costs.txt\n\n\
             [members]\nspec = centroid-classifier:101,keyword-heuristic:102,linear-scorer:103\npools = member_a.tsv,member_b.tsv,target_pool.tsv\n\n\
             [surrogate]\nbudget = 120\nrank = 8\n\n\
             [attack]\niterations = 150\nbatch = 16\ntop_k = 32\nmax_suffix_tokens = 10\n\n\
             [stages]\n{extra}",
            dir.join("run").display()
        );
        let path = dir.join("run.ini");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn pipeline_produces_manifest_and_improving_asr() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 71, "defense = true\n");
        let cfg = crate::config::validate_config(&cfg_path).unwrap();
        let manifest = run_pipeline(&cfg, &PipelineOptions::default()).unwrap();
        assert!(manifest.stage_completed("train-surrogate"));
        assert!(manifest.stage_completed("evaluate"));
        assert!(manifest.stage_completed("defense"));
        assert!(manifest.stage_completed("report"));
        assert!(!manifest.stages.contains_key("sweep-budget"));

        let run_dir = resolve_run_dir(&cfg.out_dir);
        let eval: EvalSummary = read_json(&run_dir.join(EVAL_SUMMARY_FILE)).unwrap();
        assert!(eval.eval_in.delta > 0.0, "attack should lift ASR, got {:?}", eval.eval_in);
        let audit: OracleAudit = read_json(&run_dir.join("oracle_audit.json")).unwrap();
        assert_eq!(audit.q_used, 120);
        assert_eq!(audit.training_calls, 120);
    }

    #[test]
    fn evaluate_without_suffix_is_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 72, "");
        let cfg = crate::config::validate_config(&cfg_path).unwrap();
        let run_dir = resolve_run_dir(&cfg.out_dir);
        std::fs::create_dir_all(&run_dir).unwrap();
        let materials = Materials::load(&cfg).unwrap();
        let err = run_stage(&materials, &run_dir, "evaluate");
        match err {
            Err(Error::Dependency { stage, .. }) => assert_eq!(stage, "optimize-suffix"),
            other => panic!("expected dependency error, got {other:?}"),
        }
    }

    #[test]
    fn resume_skips_completed_stages_and_keeps_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 73, "");
        let cfg = crate::config::validate_config(&cfg_path).unwrap();
        let opts = PipelineOptions {
            resume: false,
            through_stage: Some("train-surrogate".into()),
        };
        let manifest = run_pipeline(&cfg, &opts).unwrap();
        assert_eq!(manifest.last_completed(), Some("train-surrogate"));
        assert!(!manifest.stages.contains_key("optimize-suffix"));

        let run_dir = resolve_run_dir(&cfg.out_dir);
        let ckpt = run_dir.join("surrogate").join(crate::surrogate::CKPT_W1);
        let before = std::fs::read_to_string(&ckpt).unwrap();
        let mtime_before = std::fs::metadata(&ckpt).unwrap().modified().unwrap();

        std::thread::sleep(std::time::Duration::from_millis(20));
        let manifest = run_pipeline(
            &cfg,
            &PipelineOptions {
                resume: true,
                through_stage: None,
            },
        )
        .unwrap();
        assert!(manifest.stage_completed("report"));
        let after = std::fs::read_to_string(&ckpt).unwrap();
        let mtime_after = std::fs::metadata(&ckpt).unwrap().modified().unwrap();
        assert_eq!(before, after);
        assert_eq!(mtime_before, mtime_after, "resume must not rewrite completed artifacts");
    }

    #[test]
    fn identical_configs_reproduce_identical_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 74, "");
        let cfg = crate::config::validate_config(&cfg_path).unwrap();

        let mut cfg_a = cfg.clone();
        cfg_a.out_dir = dir.path().join("run_a");
        run_pipeline(&cfg_a, &PipelineOptions::default()).unwrap();
        let mut cfg_b = cfg.clone();
        cfg_b.out_dir = dir.path().join("run_b");
        run_pipeline(&cfg_b, &PipelineOptions::default()).unwrap();

        for file in [SUFFIX_IDS_FILE, EVAL_SUMMARY_FILE, SUMMARY_FILE] {
            let a = std::fs::read_to_string(dir.path().join("run_a").join(file)).unwrap();
            let b = std::fs::read_to_string(dir.path().join("run_b").join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn sweep_at_the_configured_budget_matches_the_trained_surrogate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 76, "sweep = true\nsweep_budgets = 60,120\n");
        let cfg = crate::config::validate_config(&cfg_path).unwrap();
        run_pipeline(&cfg, &PipelineOptions::default()).unwrap();
        let run_dir = resolve_run_dir(&cfg.out_dir);

        // agreement of the checkpointed (budget-120) surrogate on eval-in
        let materials = Materials::load(&cfg).unwrap();
        let sr = load_surrogate(&run_dir, &materials).unwrap();
        let oracle = materials.build_oracle(OracleMode::Evaluation).unwrap();
        let labeled: Vec<(TokenSequence, crate::pool::ModelId)> = materials
            .dataset
            .split(Split::EvalIn)
            .iter()
            .map(|r| {
                let q = materials.vocab.tokenize(&r.text);
                let want = oracle.route_eval(&q).chosen;
                (q, want)
            })
            .collect();
        let trained_agreement = surrogate_accuracy(&sr, &labeled).unwrap();

        let sweep = std::fs::read_to_string(run_dir.join("sweep.csv")).unwrap();
        let at_budget: f64 = sweep
            .lines()
            .find(|l| l.starts_with("120,"))
            .and_then(|l| l.split(',').nth(1))
            .and_then(|v| v.parse().ok())
            .expect("sweep row for the configured budget");
        assert!(
            (at_budget - trained_agreement).abs() < 1e-12,
            "sweep at the full budget ({at_budget}) should reproduce the trained surrogate ({trained_agreement})"
        );
    }

    #[test]
    fn failed_stage_is_recorded_in_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_experiment(dir.path(), 75, "");
        let mut cfg = crate::config::validate_config(&cfg_path).unwrap();
        // sabotage: an out-of-range sweep (proxy split too small) with sweep enabled
        cfg.run_sweep = true;
        cfg.sweep_budgets = vec![10_000];
        let err = run_pipeline(&cfg, &PipelineOptions::default());
        assert!(err.is_err());
        let run_dir = resolve_run_dir(&cfg.out_dir);
        let manifest = RunManifest::load(&run_dir).unwrap();
        assert_eq!(manifest.stages.get("sweep-budget").unwrap().state, "failed");
        assert!(manifest.stage_completed("evaluate"));
        assert_eq!(manifest.last_completed(), Some("evaluate"));
    }
}
