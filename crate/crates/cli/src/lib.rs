//! Command-line front end: synthetic data, alignment diagnostics,
//! super-resolution, toy training, gradient checks and evaluation.
//!
//! Exit codes: 0 on success, 1 on invalid usage or configuration, 2 when a
//! run fails.

pub mod commands;
pub mod config;
pub mod run;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{parse_config, ConfigError, RunConfig, Scenario};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or arguments: exit 1.
    Invalid(String),
    /// Failure while running: exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    /// Library error raised while checking inputs.
    pub(crate) fn invalid(e: refsr_core::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<refsr_core::Error> for CliError {
    fn from(e: refsr_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "refsr", version, about = "Reference-guided MRI super-resolution at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only write files; print nothing on success.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic T2/PD pair with ground-truth correspondences.
    Synth {
        #[command(flatten)]
        common: Common,
        /// `aligned` or `scale-mismatch`.
        #[arg(long)]
        scenario: Option<Scenario>,
    },
    /// Super-resolve a low-resolution image with a high-resolution reference.
    Superres {
        #[command(flatten)]
        common: Common,
        /// Low-resolution target-contrast graymap.
        #[arg(long = "lr")]
        lr_image: PathBuf,
        /// Reference-contrast graymap at 4x the LR size.
        #[arg(long = "ref")]
        ref_image: PathBuf,
        /// Trained parameters; a seeded untrained model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score patch matching methods on synthetic scenes.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Number of scenes, seeded consecutively from the run seed.
        #[arg(long, default_value_t = 1)]
        scenes: usize,
    },
    /// Fit the model to one synthetic pair.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Check analytic gradients of every kernel and loss term.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Measure PSNR, SSIM and losses of the model and of bicubic upsampling.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameters to evaluate; defaults to `<out>/checkpoint.ftck` when present.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of synthetic images, seeded consecutively from the run seed.
        #[arg(long, default_value_t = 1)]
        images: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Superres { common, .. }
            | Command::Align { common, .. }
            | Command::Train { common, .. }
            | Command::Gradcheck { common }
            | Command::Eval { common, .. } => common,
        }
    }
}

/// Loads the config file (if any) and applies flag overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.display().to_string();
    }
    Ok(cfg)
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let mut cfg = resolve_config(command.common())?;
    let quiet = command.common().quiet;
    match command {
        Command::Synth { scenario, .. } => {
            if let Some(s) = scenario {
                cfg.scenario = *s;
            }
            commands::synth(&cfg, quiet)
        }
        Command::Superres { lr_image, ref_image, checkpoint, .. } => {
            commands::superres(&cfg, lr_image, ref_image, checkpoint.as_deref(), quiet)
        }
        Command::Align { scenario, scenes, .. } => {
            if let Some(s) = scenario {
                cfg.scenario = *s;
            }
            commands::align(&cfg, *scenes, quiet).map(drop)
        }
        Command::Train { steps, .. } => {
            if let Some(n) = steps {
                cfg.steps = *n;
            }
            commands::train(&cfg, quiet).map(drop)
        }
        Command::Gradcheck { .. } => commands::gradcheck(&cfg, quiet).map(drop),
        Command::Eval { checkpoint, images, .. } => commands::eval(&cfg, checkpoint.as_deref(), *images, quiet).map(drop),
    }
}
