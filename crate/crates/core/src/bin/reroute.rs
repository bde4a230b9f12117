//! Command-line front end for the rerouting attack workbench.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use reroute_core::config::{validate_config, RunConfig};
use reroute_core::error::{Error, Result};
use reroute_core::pipeline::{
    resolve_run_dir, run_pipeline, run_stage, Materials, PipelineOptions, RunManifest, StageStatus,
    MANIFEST_FILE, STAGE_ORDER,
};
use reroute_core::pool::{CostTable, ModelId, ModelPool, Tier};
use reroute_core::synth::{generate_dataset, SplitSizes, World};

#[derive(Parser)]
#[command(
    name = "reroute",
    version,
    about = "Black-box rerouting attacks on cost-aware routers: surrogate training, adversarial suffix search, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded desk-scale experiment: vocabulary, query splits,
    /// pools, cost table, and a ready-to-run configuration
    GenData {
        /// Directory for the generated files
        #[arg(long)]
        out: PathBuf,
        /// Generation seed (also the world seed in the emitted config)
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Vocabulary size
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        /// Encoder dimension
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
    /// Run the pipeline end to end from a configuration file
    Run {
        /// Configuration file
        #[arg(long)]
        config: PathBuf,
        /// Override the run directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the global seed
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this stage
        #[arg(long)]
        stage: Option<String>,
        /// Skip stages the manifest already marks completed
        #[arg(long)]
        resume: bool,
    },
    /// Train the surrogate router (creates the run directory)
    TrainSurrogate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize the adversarial suffix against the trained surrogate
    OptimizeSuffix {
        /// Run directory holding the surrogate checkpoint
        #[arg(long)]
        run: PathBuf,
    },
    /// Evaluate ASR and cost impact on the held-out splits
    Evaluate {
        #[arg(long)]
        run: PathBuf,
    },
    /// Re-evaluate under the whitespace defense
    Defense {
        #[arg(long)]
        run: PathBuf,
    },
    /// Sweep the query budget: fresh surrogate + suffix per budget
    SweepBudget {
        #[arg(long)]
        run: PathBuf,
        /// Budgets, ascending (defaults to the configured sweep list)
        budgets: Vec<u64>,
    },
    /// Fit and score the response-style fingerprint classifier
    Fingerprint {
        #[arg(long)]
        run: PathBuf,
    },
    /// Render the summary tables for a finished run
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            out,
            seed,
            vocab_size,
            dim,
        } => gen_data(&out, seed, vocab_size, dim),
        Command::Run {
            config,
            out,
            seed,
            stage,
            resume,
        } => {
            if let Some(stage) = &stage {
                if !STAGE_ORDER.contains(&stage.as_str()) {
                    return Err(Error::Config(vec![format!(
                        "unknown stage `{stage}` (expected one of {})",
                        STAGE_ORDER.join(", ")
                    )]));
                }
            }
            let cfg = load_config(&config, out, seed)?;
            let manifest = run_pipeline(
                &cfg,
                &PipelineOptions {
                    resume,
                    through_stage: stage,
                },
            )?;
            let run_dir = resolve_run_dir(&cfg.out_dir);
            println!("run directory: {}", run_dir.display());
            for stage in STAGE_ORDER {
                if let Some(status) = manifest.stages.get(stage) {
                    println!("  {stage}: {}", status.state);
                }
            }
            Ok(())
        }
        Command::TrainSurrogate { config, out, seed } => {
            let cfg = load_config(&config, out, seed)?;
            let run_dir = resolve_run_dir(&cfg.out_dir);
            std::fs::create_dir_all(&run_dir)
                .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
            let snapshot = serde_json::to_string_pretty(&cfg)
                .map_err(|e| Error::numeric(format!("config serialization: {e}")))?;
            std::fs::write(run_dir.join("config.json"), snapshot)
                .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
            stage_in_run_dir(&run_dir, "train-surrogate", None)
        }
        Command::OptimizeSuffix { run } => stage_in_run_dir(&run, "optimize-suffix", None),
        Command::Evaluate { run } => stage_in_run_dir(&run, "evaluate", None),
        Command::Defense { run } => stage_in_run_dir(&run, "defense", None),
        Command::SweepBudget { run, budgets } => {
            let override_budgets = if budgets.is_empty() { None } else { Some(budgets) };
            stage_in_run_dir(&run, "sweep-budget", override_budgets)
        }
        Command::Fingerprint { run } => stage_in_run_dir(&run, "fingerprint", None),
        Command::Report { run } => {
            stage_in_run_dir(&run, "report", None)?;
            let text = std::fs::read_to_string(run.join("report.txt"))
                .map_err(|e| Error::io(run.join("report.txt").display().to_string(), e))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = validate_config(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs one stage against an existing run directory, updating its manifest.
fn stage_in_run_dir(run_dir: &Path, stage: &str, budgets: Option<Vec<u64>>) -> Result<()> {
    let config_path = run_dir.join("config.json");
    if !config_path.exists() {
        return Err(Error::Dependency {
            stage: "train-surrogate".into(),
            path: config_path.display().to_string(),
        });
    }
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| Error::io(config_path.display().to_string(), e))?;
    let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: config_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    if let Some(budgets) = budgets {
        cfg.sweep_budgets = budgets;
    }
    let materials = Materials::load(&cfg)?;
    let mut manifest = if run_dir.join(MANIFEST_FILE).exists() {
        RunManifest::load(run_dir)?
    } else {
        RunManifest::new(cfg.content_hash())
    };
    match run_stage(&materials, run_dir, stage) {
        Ok(artifacts) => {
            manifest.stages.insert(
                stage.to_string(),
                StageStatus {
                    state: "completed".into(),
                    artifacts,
                    error: None,
                },
            );
            manifest.save(run_dir)?;
            println!("{stage}: completed");
            Ok(())
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
            manifest.save(run_dir)?;
            Err(e)
        }
    }
}

/// Writes a complete seeded experiment and a matching configuration file.
fn gen_data(out: &Path, seed: u64, vocab_size: usize, dim: usize) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let world = World::generate(seed, vocab_size, dim, 0.97, 1.0)?;
    world.vocab().write_file(&out.join("vocab.txt"))?;
    let dataset = generate_dataset(&world, seed, SplitSizes::default())?;
    dataset.write_file(&out.join("queries.tsv"))?;

    let target_pool = ModelPool::new(vec![
        (ModelId::from("pebble-3b"), Tier::Weak),
        (ModelId::from("swift-7b"), Tier::Weak),
        (ModelId::from("orion-32b"), Tier::Strong),
        (ModelId::from("atlas-70b"), Tier::Strong),
    ])?;
    target_pool.write_file(&out.join("target_pool.tsv"))?;
    let member_a = ModelPool::new(vec![
        (ModelId::from("atlas-70b"), Tier::Strong),
        (ModelId::from("pebble-3b"), Tier::Weak),
        (ModelId::from("nimbus-13b"), Tier::Weak),
    ])?;
    member_a.write_file(&out.join("member_a.tsv"))?;
    let member_b = ModelPool::new(vec![
        (ModelId::from("orion-32b"), Tier::Strong),
        (ModelId::from("swift-7b"), Tier::Weak),
        (ModelId::from("nimbus-13b"), Tier::Weak),
    ])?;
    member_b.write_file(&out.join("member_b.tsv"))?;
    let costs = CostTable::new(vec![
        (ModelId::from("pebble-3b"), 0.4),
        (ModelId::from("swift-7b"), 0.9),
        (ModelId::from("orion-32b"), 9.0),
        (ModelId::from("atlas-70b"), 15.0),
        (ModelId::from("nimbus-13b"), 1.5),
    ]);
    costs.write_file(&out.join("costs.txt"))?;

    let config = format!(
        "# generated experiment (seed {seed})\n\
         [run]\nseed = {seed}\nout = runs/desk\n\n\
         [data]\nvocab = vocab.txt\nqueries = queries.tsv\nworld_seed = {seed}\n\n\
         [encoder]\ndim = {dim}\ncorrelation = 0.97\nlexicon_boost = 1.0\n\n\
         [target]\nkind = keyword-heuristic\nseed = 900\nlambda = 0.25\npool = target_pool.tsv\ncosts = costs.txt\n\n\
         [members]\nspec = centroid-classifier:101,keyword-heuristic:102,linear-scorer:103\npools = member_a.tsv,member_b.tsv,target_pool.tsv\n\n\
         [surrogate]\nbudget = 120\nrank = 8\nepochs = 20\nlearning_rate = 0.03\nbatch_size = 32\n\n\
         [attack]\niterations = 300\nbatch = 16\ntop_k = 32\nmax_suffix_tokens = 10\ninit_suffix = ! ! ! ! ! ! ! ! ! !\n\n\
         [stages]\ndefense = true\nsweep = false\nsweep_budgets = 50,80,120,150\nfingerprint = true\nfingerprint_docs = 200\n"
    );
    std::fs::write(out.join("desk.ini"), config)
        .map_err(|e| Error::io(out.join("desk.ini").display().to_string(), e))?;
    println!("experiment written to {}", out.display());
    println!("next: reroute run --config {}", out.join("desk.ini").display());
    Ok(())
}
