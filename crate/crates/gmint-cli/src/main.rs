//! `gmint` — membership-inference auditing pipeline driver.
//!
//! Stages: gen-data -> train-target -> extract-features -> train-auditor ->
//! evaluate, plus `sweep` (size-pair grid in one shot) and `verify`
//! (artifact hash check). Every stage reads the same JSON config and writes
//! into one output directory guarded by a lock file.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 missing or corrupt
//! dependency, 4 numeric failure.

mod artifacts;
mod config;
mod log;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable/invalid config, locked output dir. Exit 2.
    Usage(String),
    /// Missing upstream artifact or hash mismatch. Exit 3.
    Dependency(String),
    /// Non-finite loss/gradient/score. Exit 4.
    Numeric(String),
    /// Everything else. Exit 1.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Dependency(m)
            | CliError::Numeric(m)
            | CliError::Internal(m) => m,
        }
    }
}

/// Map library errors onto CLI exit classes.
pub mod classify {
    use super::CliError;
    use gmint::auditor::AuditorError;
    use gmint::autodiff::AutodiffError;
    use gmint::eval::EvalError;
    use gmint::models::ModelError;
    use gmint::probe::ProbeError;
    use gmint::text::TextError;

    pub fn text(e: TextError) -> CliError {
        match e {
            TextError::Io(_) => CliError::Dependency(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }

    pub fn autodiff(e: AutodiffError) -> CliError {
        match e {
            AutodiffError::NonFiniteGradient { .. } | AutodiffError::NonFiniteValue { .. } => {
                CliError::Numeric(e.to_string())
            }
            AutodiffError::Io(_) | AutodiffError::ParamFormat(_) => {
                CliError::Dependency(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }

    pub fn model(e: ModelError) -> CliError {
        match e {
            ModelError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            ModelError::Autodiff(inner) => autodiff(inner),
            _ => CliError::Usage(e.to_string()),
        }
    }

    pub fn probe(e: ProbeError) -> CliError {
        match e {
            ProbeError::NonFiniteFeature(_) => CliError::Numeric(e.to_string()),
            ProbeError::FeatureFormat(_) | ProbeError::Io(_) | ProbeError::Json(_) => {
                CliError::Dependency(e.to_string())
            }
            ProbeError::Model(inner) => model(inner),
            _ => CliError::Usage(e.to_string()),
        }
    }

    pub fn auditor(e: AuditorError) -> CliError {
        match e {
            AuditorError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            AuditorError::Autodiff(inner) => autodiff(inner),
            _ => CliError::Usage(e.to_string()),
        }
    }

    pub fn eval(e: EvalError) -> CliError {
        match e {
            EvalError::NonFiniteScore => CliError::Numeric(e.to_string()),
            EvalError::Io(_) => CliError::Dependency(e.to_string()),
            EvalError::Text(inner) => text(inner),
            EvalError::Model(inner) => model(inner),
            EvalError::Probe(inner) => probe(inner),
            EvalError::Auditor(inner) => auditor(inner),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "gmint",
    about = "Gradient-based membership-inference auditing for text classifiers",
    version
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "gmint-out")]
    output: PathBuf,

    /// Override the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the protocol (intra | mixed).
    #[arg(long, global = true)]
    protocol: Option<String>,

    /// Override the feature kind (gradient | embedding).
    #[arg(long, global = true, value_name = "KIND")]
    feature_kind: Option<String>,

    /// Override the layer selector (first:K | last:K | names:a,b).
    #[arg(long, global = true)]
    selector: Option<String>,

    /// Worker thread cap for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpora declared in the config.
    GenData,
    /// Train the audited classifier on the corpus's training split.
    TrainTarget,
    /// Probe the frozen model and write the MINT feature file.
    ExtractFeatures,
    /// Train the MINT auditor on the extracted features.
    TrainAuditor,
    /// Score the MINT test rows and write the audit report.
    Evaluate,
    /// Run the full size-pair sweep (self-contained; resumes finished cells).
    Sweep,
    /// Re-check every artifact in the output directory against its hash.
    Verify,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".to_string()));
        }
        gmint::set_jobs(jobs);
    }

    let _lock = artifacts::DirLock::acquire(&cli.output)?;

    if matches!(cli.command, Command::Verify) && cli.config.is_none() {
        // verify can run without a config: check files against the index.
        return verify_without_config(&cli.output);
    }

    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".to_string()))?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(protocol) = cli.protocol {
        config.protocol = protocol;
    }
    if let Some(kind) = cli.feature_kind {
        config.feature_kind = kind;
    }
    if let Some(selector) = cli.selector {
        config.selector = selector;
    }
    config.validate()?;

    let config_dir = config_path.parent().unwrap_or_else(|| std::path::Path::new("."));
    let ctx = stages::Ctx {
        config: &config,
        config_dir,
        output_dir: &cli.output,
        config_hash: config.hash(),
    };
    log::debug(&format!("config hash {}", ctx.config_hash));

    match cli.command {
        Command::GenData => stages::cmd_gen_data(&ctx),
        Command::TrainTarget => stages::cmd_train_target(&ctx),
        Command::ExtractFeatures => stages::cmd_extract_features(&ctx),
        Command::TrainAuditor => stages::cmd_train_auditor(&ctx),
        Command::Evaluate => stages::cmd_evaluate(&ctx),
        Command::Sweep => stages::cmd_sweep(&ctx),
        Command::Verify => stages::cmd_verify(&ctx),
    }
}

fn verify_without_config(output_dir: &std::path::Path) -> Result<(), CliError> {
    let index_path = output_dir.join(artifacts::INDEX_FILE);
    if !index_path.exists() {
        return Err(CliError::Dependency(format!(
            "no artifact index at {}; nothing to verify",
            index_path.display()
        )));
    }
    let bytes = std::fs::read(&index_path)
        .map_err(|e| CliError::Dependency(format!("read {}: {e}", index_path.display())))?;
    let index: artifacts::ArtifactIndex = serde_json::from_slice(&bytes).map_err(|e| {
        CliError::Dependency(format!("corrupt artifact index {}: {e}", index_path.display()))
    })?;
    let n = index.verify_all(output_dir)?;
    println!("verify: {n} artifacts match their recorded hashes");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error(e.message());
            eprintln!("gmint: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
