//! Run configuration: a flat, human-editable sections-of-key/values file.
//!
//! Validation is eager and complete: a bad config reports every violation it
//! can find, not just the first.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::surrogate::SurrogateHyper;
use crate::target::TargetKind;

/// One member router specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberSpec {
    pub kind: String,
    pub seed: u64,
    pub pool_path: PathBuf,
}

/// The fully resolved run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub vocab_path: PathBuf,
    pub queries_path: PathBuf,
    pub world_seed: u64,

    pub target_kind: String,
    pub target_seed: u64,
    pub lambda: f64,
    pub target_pool_path: PathBuf,
    pub cost_path: PathBuf,

    pub members: Vec<MemberSpec>,

    pub dim: usize,
    pub correlation: f64,
    pub lexicon_boost: f64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rank: usize,
    pub budget: u64,

    pub attack_iterations: usize,
    pub attack_batch: usize,
    pub top_k: usize,
    pub max_suffix_len: usize,
    pub init_suffix: String,

    pub run_defense: bool,
    pub run_sweep: bool,
    pub sweep_budgets: Vec<u64>,
    pub run_fingerprint: bool,
    pub fingerprint_docs: usize,
}

impl RunConfig {
    pub fn hyper(&self) -> SurrogateHyper {
        SurrogateHyper {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            rank: self.rank,
            seed: crate::rng::derive_seed(self.seed, "surrogate"),
            weight_decay: 1e-4,
        }
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            iterations: self.attack_iterations,
            batch: self.attack_batch,
            top_k: self.top_k,
            max_suffix_len: self.max_suffix_len,
            init_suffix: self.init_suffix.clone(),
            seed: crate::rng::derive_seed(self.seed, "attack"),
            activation: Default::default(),
        }
    }

    /// Stable content hash of the canonicalized configuration.
    pub fn content_hash(&self) -> String {
        let canon = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", crate::rng::derive_seed(0, &canon))
    }
}

/// Raw sections of `key = value` pairs.
struct Sections(BTreeMap<String, BTreeMap<String, String>>);

impl Sections {
    fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::from("");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: n + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Sections(sections))
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.0.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }
}

struct Checker<'a> {
    sections: Sections,
    base: &'a Path,
    problems: Vec<String>,
}

impl<'a> Checker<'a> {
    fn require(&mut self, section: &str, key: &str) -> Option<String> {
        match self.sections.get(section, key) {
            Some(v) => Some(v.to_string()),
            None => {
                self.problems.push(format!("[{section}] {key} is required"));
                None
            }
        }
    }

    fn optional(&self, section: &str, key: &str) -> Option<String> {
        self.sections.get(section, key).map(str::to_string)
    }

    fn parse<T: FromStr>(&mut self, section: &str, key: &str, value: Option<String>) -> Option<T> {
        let v = value?;
        match v.parse::<T>() {
            Ok(t) => Some(t),
            Err(_) => {
                self.problems
                    .push(format!("[{section}] {key}: cannot parse `{v}`"));
                None
            }
        }
    }

    fn path(&mut self, section: &str, key: &str, value: Option<String>) -> PathBuf {
        let Some(v) = value else {
            return PathBuf::new();
        };
        let p = self.base.join(v);
        if !p.exists() {
            self.problems
                .push(format!("[{section}] {key}: file `{}` does not exist", p.display()));
        }
        p
    }
}

/// Parses and fully validates a configuration file. Relative paths resolve
/// against the config file's directory.
pub fn validate_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let sections = Sections::parse(&text, &path.display().to_string())?;
    let mut c = Checker {
        sections,
        base,
        problems: Vec::new(),
    };

    let seed: u64 = {
        let v = c.require("run", "seed");
        c.parse("run", "seed", v).unwrap_or(0)
    };
    let out_dir = PathBuf::from(c.optional("run", "out").unwrap_or_else(|| "runs/out".into()));

    let vocab_value = c.require("data", "vocab");
    let vocab_path = c.path("data", "vocab", vocab_value);
    let queries_value = c.require("data", "queries");
    let queries_path = c.path("data", "queries", queries_value);
    let world_seed: u64 = {
        let v = c.require("data", "world_seed");
        c.parse("data", "world_seed", v).unwrap_or(0)
    };

    let target_kind = c.require("target", "kind").unwrap_or_default();
    if !target_kind.is_empty() && TargetKind::from_str(&target_kind).is_err() {
        c.problems
            .push(format!("[target] kind: unknown router kind `{target_kind}`"));
    }
    let target_seed: u64 = {
        let v = c.require("target", "seed");
        c.parse("target", "seed", v).unwrap_or(0)
    };
    let lambda: f64 = {
        let v = c.require("target", "lambda");
        c.parse("target", "lambda", v).unwrap_or(0.0)
    };
    if lambda < 0.0 {
        c.problems.push("[target] lambda must be nonnegative".into());
    }
    let target_pool_value = c.require("target", "pool");
    let target_pool_path = c.path("target", "pool", target_pool_value);
    let cost_value = c.require("target", "costs");
    let cost_path = c.path("target", "costs", cost_value);

    // members: spec = kind:seed comma list, pools = matching path list
    let mut members = Vec::new();
    let spec_value = c.require("members", "spec").unwrap_or_default();
    let pools_value = c.require("members", "pools").unwrap_or_default();
    if !spec_value.is_empty() && !pools_value.is_empty() {
        let specs: Vec<&str> = spec_value.split(',').map(str::trim).collect();
        let pools: Vec<&str> = pools_value.split(',').map(str::trim).collect();
        if specs.len() != pools.len() {
            c.problems.push(format!(
                "[members] spec lists {} members but pools lists {}",
                specs.len(),
                pools.len()
            ));
        } else {
            for (i, (spec, pool)) in specs.iter().zip(&pools).enumerate() {
                let Some((kind, seed_text)) = spec.split_once(':') else {
                    c.problems
                        .push(format!("[members] spec entry {i}: expected `kind:seed`"));
                    continue;
                };
                if TargetKind::from_str(kind.trim()).is_err() {
                    c.problems
                        .push(format!("[members] spec entry {i}: unknown kind `{kind}`"));
                }
                let Ok(seed) = seed_text.trim().parse::<u64>() else {
                    c.problems
                        .push(format!("[members] spec entry {i}: bad seed `{seed_text}`"));
                    continue;
                };
                let pool_path = c.path("members", "pools", Some(pool.to_string()));
                members.push(MemberSpec {
                    kind: kind.trim().to_string(),
                    seed,
                    pool_path,
                });
            }
            if members.is_empty() {
                c.problems.push("[members] at least one member is required".into());
            }
        }
    }

    let dim: usize = {
        let v = c.optional("encoder", "dim").or(Some("16".into()));
        c.parse("encoder", "dim", v).unwrap_or(16)
    };
    let correlation: f64 = {
        let v = c.optional("encoder", "correlation").or(Some("0.97".into()));
        c.parse("encoder", "correlation", v).unwrap_or(0.97)
    };
    let lexicon_boost: f64 = {
        let v = c.optional("encoder", "lexicon_boost").or(Some("1.0".into()));
        c.parse("encoder", "lexicon_boost", v).unwrap_or(1.0)
    };
    if !(0.0..=1.0).contains(&correlation) {
        c.problems.push("[encoder] correlation must lie in [0, 1]".into());
    }

    let epochs: usize = {
        let v = c.optional("surrogate", "epochs").or(Some("20".into()));
        c.parse("surrogate", "epochs", v).unwrap_or(20)
    };
    let learning_rate: f64 = {
        let v = c.optional("surrogate", "learning_rate").or(Some("0.03".into()));
        c.parse("surrogate", "learning_rate", v).unwrap_or(0.03)
    };
    let batch_size: usize = {
        let v = c.optional("surrogate", "batch_size").or(Some("32".into()));
        c.parse("surrogate", "batch_size", v).unwrap_or(32)
    };
    let rank: usize = {
        let v = c.optional("surrogate", "rank").or(Some("8".into()));
        c.parse("surrogate", "rank", v).unwrap_or(8)
    };
    let budget: u64 = {
        let v = c.require("surrogate", "budget");
        c.parse("surrogate", "budget", v).unwrap_or(120)
    };
    if rank >= dim {
        c.problems.push(format!(
            "[surrogate] rank {rank} must stay below the encoder dimension {dim}"
        ));
    }
    if budget == 0 {
        c.problems.push("[surrogate] budget must be positive".into());
    }
    if epochs == 0 || batch_size == 0 {
        c.problems
            .push("[surrogate] epochs and batch_size must be positive".into());
    }

    let attack_iterations: usize = {
        let v = c.optional("attack", "iterations").or(Some("3000".into()));
        c.parse("attack", "iterations", v).unwrap_or(3000)
    };
    let attack_batch: usize = {
        let v = c.optional("attack", "batch").or(Some("64".into()));
        c.parse("attack", "batch", v).unwrap_or(64)
    };
    let top_k: usize = {
        let v = c.optional("attack", "top_k").or(Some("256".into()));
        c.parse("attack", "top_k", v).unwrap_or(256)
    };
    let max_suffix_len: usize = {
        let v = c.optional("attack", "max_suffix_tokens").or(Some("30".into()));
        c.parse("attack", "max_suffix_tokens", v).unwrap_or(30)
    };
    let init_suffix = c
        .optional("attack", "init_suffix")
        .unwrap_or_else(|| "! ! ! ! ! ! ! ! ! !".into());
    if max_suffix_len == 0 {
        c.problems
            .push("[attack] max_suffix_tokens must be positive".into());
    }
    if attack_iterations == 0 || attack_batch == 0 {
        c.problems
            .push("[attack] iterations and batch must be positive".into());
    }

    let run_defense = c
        .optional("stages", "defense")
        .map(|v| v == "true")
        .unwrap_or(false);
    let run_sweep = c
        .optional("stages", "sweep")
        .map(|v| v == "true")
        .unwrap_or(false);
    let run_fingerprint = c
        .optional("stages", "fingerprint")
        .map(|v| v == "true")
        .unwrap_or(false);
    let sweep_budgets: Vec<u64> = match c.optional("stages", "sweep_budgets") {
        Some(text) => {
            let mut budgets = Vec::new();
            for part in text.split(',') {
                match part.trim().parse::<u64>() {
                    Ok(b) => budgets.push(b),
                    Err(_) => c
                        .problems
                        .push(format!("[stages] sweep_budgets: bad entry `{}`", part.trim())),
                }
            }
            budgets
        }
        None => vec![50, 80, 120, 150],
    };
    if run_sweep && sweep_budgets.windows(2).any(|w| w[0] >= w[1]) {
        c.problems
            .push("[stages] sweep_budgets must be strictly ascending".into());
    }
    let fingerprint_docs: usize = {
        let v = c.optional("stages", "fingerprint_docs").or(Some("200".into()));
        c.parse("stages", "fingerprint_docs", v).unwrap_or(200)
    };

    // cross-file checks that need the artifacts themselves
    if vocab_path.exists() {
        match crate::vocab::Vocabulary::read_file(&vocab_path) {
            Ok(vocab) => {
                if top_k > vocab.size() {
                    c.problems.push(format!(
                        "[attack] top_k {top_k} exceeds vocabulary size {}",
                        vocab.size()
                    ));
                }
                if max_suffix_len > 0 {
                    let toks = vocab.tokenize(&init_suffix);
                    if toks.is_empty() {
                        c.problems
                            .push("[attack] init_suffix tokenizes to nothing".into());
                    } else if toks.len() > max_suffix_len {
                        c.problems.push(format!(
                            "[attack] init_suffix has {} tokens, budget is {max_suffix_len}",
                            toks.len()
                        ));
                    }
                }
            }
            Err(e) => c.problems.push(format!("[data] vocab: {e}")),
        }
    }
    if queries_path.exists() {
        if let Err(e) = crate::dataset::Dataset::read_file(&queries_path) {
            c.problems.push(format!("[data] queries: {e}"));
        }
    }

    if !c.problems.is_empty() {
        return Err(Error::Config(c.problems));
    }

    Ok(RunConfig {
        seed,
        out_dir,
        vocab_path,
        queries_path,
        world_seed,
        target_kind,
        target_seed,
        lambda,
        target_pool_path,
        cost_path,
        members,
        dim,
        correlation,
        lexicon_boost,
        epochs,
        learning_rate,
        batch_size,
        rank,
        budget,
        attack_iterations,
        attack_batch,
        top_k,
        max_suffix_len,
        init_suffix,
        run_defense,
        run_sweep,
        sweep_budgets,
        run_fingerprint,
        fingerprint_docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn write_fixture_files(dir: &Path) {
        let world = synth::World::generate(42, 60, 16, 0.97, 1.0).unwrap();
        world.vocab().write_file(&dir.join("vocab.txt")).unwrap();
        let ds = synth::generate_dataset(
            &world,
            42,
            synth::SplitSizes {
                proxy: 10,
                suffix_train: 5,
                eval_in: 5,
                eval_ood: 5,
            },
        )
        .unwrap();
        ds.write_file(&dir.join("queries.tsv")).unwrap();
        let pool = crate::pool::ModelPool::new(vec![
            (crate::pool::ModelId::from("a"), crate::pool::Tier::Weak),
            (crate::pool::ModelId::from("b"), crate::pool::Tier::Strong),
        ])
        .unwrap();
        pool.write_file(&dir.join("pool.tsv")).unwrap();
        let costs = crate::pool::CostTable::new(vec![
            (crate::pool::ModelId::from("a"), 1.0),
            (crate::pool::ModelId::from("b"), 5.0),
        ]);
        costs.write_file(&dir.join("costs.txt")).unwrap();
    }

    fn minimal_config(dir: &Path, extra: &str) -> PathBuf {
        let body = format!(
            "[run]\nseed = 7\nout = runs/demo\n\n[data]\nvocab = vocab.txt\nqueries = queries.tsv\nworld_seed = 42\n\n\
             [target]\nkind = centroid-classifier\nseed = 3\nlambda = 0.25\npool = pool.tsv\ncosts = costs.txt\n\n\
             [members]\nspec = linear-scorer:101\npools = pool.tsv\n\n\
             [surrogate]\nbudget = 10\n\n[attack]\ntop_k = 16\nmax_suffix_tokens = 10\n{extra}"
        );
        let path = dir.join("run.ini");
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn minimal_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        let path = minimal_config(dir.path(), "");
        let cfg = validate_config(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.budget, 10);
        assert_eq!(cfg.members.len(), 1);
        assert_eq!(cfg.sweep_budgets, vec![50, 80, 120, 150]);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.top_k, 16);
    }

    #[test]
    fn zero_suffix_budget_is_named_in_the_error() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        let path = minimal_config(dir.path(), "");
        let body = std::fs::read_to_string(&path)
            .unwrap()
            .replace("max_suffix_tokens = 10", "max_suffix_tokens = 0");
        std::fs::write(&path, body).unwrap();
        let Err(Error::Config(problems)) = validate_config(&path) else {
            panic!("expected validation failure")
        };
        assert!(problems.iter().any(|p| p.contains("max_suffix_tokens")));
    }

    #[test]
    fn every_violation_is_reported_not_just_the_first() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        let path = minimal_config(dir.path(), "");
        let body = std::fs::read_to_string(&path)
            .unwrap()
            .replace("max_suffix_tokens = 10", "max_suffix_tokens = 0")
            .replace("lambda = 0.25", "lambda = -1")
            .replace("top_k = 16", "top_k = 4000");
        std::fs::write(&path, body).unwrap();
        let Err(Error::Config(problems)) = validate_config(&path) else {
            panic!("expected validation failure")
        };
        assert!(problems.len() >= 3, "got {problems:?}");
        assert!(problems.iter().any(|p| p.contains("lambda")));
        assert!(problems.iter().any(|p| p.contains("top_k")));
    }

    #[test]
    fn missing_files_are_violations() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        let path = minimal_config(dir.path(), "");
        let body = std::fs::read_to_string(&path)
            .unwrap()
            .replace("queries = queries.tsv", "queries = nowhere.tsv");
        std::fs::write(&path, body).unwrap();
        let Err(Error::Config(problems)) = validate_config(&path) else {
            panic!("expected validation failure")
        };
        assert!(problems.iter().any(|p| p.contains("nowhere.tsv")));
    }

    #[test]
    fn overlapping_split_ids_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        // duplicate an id across splits
        let q = dir.path().join("queries.tsv");
        let mut body = std::fs::read_to_string(&q).unwrap();
        let first = body.lines().next().unwrap().to_string();
        let mut fields: Vec<&str> = first.splitn(3, '\t').collect();
        fields[1] = "eval-in";
        body.push_str(&fields.join("\t"));
        body.push('\n');
        std::fs::write(&q, body).unwrap();
        let path = minimal_config(dir.path(), "");
        let Err(Error::Config(problems)) = validate_config(&path) else {
            panic!("expected validation failure")
        };
        assert!(problems.iter().any(|p| p.contains("duplicate query id")));
    }

    #[test]
    fn config_hash_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture_files(dir.path());
        let path = minimal_config(dir.path(), "");
        let a = validate_config(&path).unwrap();
        let b = validate_config(&path).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
