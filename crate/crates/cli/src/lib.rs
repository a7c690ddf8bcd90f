//! Command-line pipeline: ingest a dated corpus, embed it, find the embedding
//! dimensions that lead a case series, and forecast from them.

pub mod config;
pub mod error;
pub mod run;
pub mod stages;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::run::Run;

#[derive(Debug, Parser)]
#[command(name = "sigdim", version, about = "Find embedding dimensions that lead a case series")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set predict.leads=[15]`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,

    /// Fail on malformed input records instead of skipping them.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Accept negative daily case increments.
    #[arg(long, global = true)]
    pub allow_corrections: bool,

    /// Restrict embedding training and selection to the training period.
    #[arg(long, global = true, value_name = "BOOL")]
    pub strict_prospective: Option<bool>,

    /// Log one JSON object per line.
    #[arg(long, global = true)]
    pub json_logs: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Load documents and counts and align them on a common calendar.
    Ingest,
    /// Clean, tokenize and lemmatize the documents.
    Preprocess,
    /// Train word embeddings and build the day matrix.
    Embed,
    /// Build the stationary series used for selection and regression.
    Transform,
    /// Select significant dimensions by cross-correlation and Boruta.
    Select,
    /// Fit and evaluate random-forest forecasts for each lead and set.
    Train,
    /// Describe each selected dimension by its top documents and keywords.
    Explain,
    /// Render the run report.
    Report,
    /// Run every stage in order.
    Pipeline,
    /// Write a synthetic corpus, counts, day matrix and ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the effective configuration.
    Config,
}

impl Cli {
    pub fn load_config(&self) -> CliResult<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.run_dir {
            overrides.push(format!("paths.run_dir={:?}", d.display().to_string()));
        }
        if self.strict {
            overrides.push("ingest.strict=true".into());
        }
        if self.allow_corrections {
            overrides.push("ingest.allow_corrections=true".into());
        }
        if let Some(b) = self.strict_prospective {
            overrides.push(format!("strict_prospective={b}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

pub fn init_logging(json: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "ts": chrono::Utc::now().to_rfc3339(),
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = b.try_init();
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = cli.load_config()?;
    match &cli.command {
        Command::Config => {
            cfg.validate_params_only()?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::Synth { out } => {
            cfg.synth.validate()?;
            let o = sigdim::synth::write_outputs(&cfg.synth, out)?;
            log::info!("wrote {} and ground truth {}", o.documents.display(), o.truth.display());
            Ok(())
        }
        Command::Ingest | Command::Pipeline => {
            cfg.validate()?;
            let mut run = Run::open(cfg)?;
            match cli.command {
                Command::Ingest => stages::ingest(&mut run),
                _ => stages::pipeline(&mut run),
            }
        }
        cmd => {
            cfg.validate_params_only()?;
            let mut run = Run::open(cfg)?;
            let name = format!("{cmd:?}").to_lowercase();
            stages::run_stage(&mut run, &name)
        }
    }
}

pub fn main_with_exit(cli: Cli) -> i32 {
    init_logging(cli.json_logs);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
