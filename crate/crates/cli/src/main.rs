use std::path::PathBuf;
use std::process::ExitCode;

use arraycal_cli::config::parse_seed_list;
use arraycal_cli::{load_config, output, CliError, Overrides};
use arraycal_core::DenominatorMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "arraycal", version, about = "GP-based phased-array calibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (seed, fraction) pair and write reports.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the fitted models.
        #[arg(long)]
        save_models: bool,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit and save calibration models.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Apply saved models and write reports.
    Apply {
        #[command(flatten)]
        common: Common,
        /// Directory of saved models; defaults to `<out>/models`.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Write azimuth and elevation cut tables.
    PatternDump {
        #[command(flatten)]
        common: Common,
        /// Use saved models instead of fitting.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Denominator {
    #[value(name = "paper_sum")]
    PaperSum,
    #[value(name = "cell_count")]
    CellCount,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Seed list such as `0-4,7`; replaces the config's seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory; replaces the config's `output_dir`.
    #[arg(long, env = "ARRAYCAL_OUT_DIR")]
    out: Option<PathBuf>,
    /// Worker threads; seeds run in parallel.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    denominator: Option<Denominator>,
}

impl Common {
    fn load(&self) -> Result<(arraycal_cli::config::ExperimentConfig, Option<usize>), CliError> {
        let seeds = self.seeds.as_deref().map(parse_seed_list).transpose().map_err(CliError::Usage)?;
        let overrides = Overrides {
            seeds,
            output_dir: self.out.clone(),
            denominator: self.denominator.map(|d| match d {
                Denominator::PaperSum => DenominatorMode::PaperSum,
                Denominator::CellCount => DenominatorMode::CellCount,
            }),
        };
        Ok((load_config(&self.config, &overrides)?, self.jobs))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { config } => {
            let c = load_config(&config, &Overrides::default())?;
            println!("{}: ok (digest {}, grid {:?})", config.display(), c.digest(), c.grid_shape());
        }
        Command::Run { common, save_models } => {
            let (config, jobs) = common.load()?;
            let summary = arraycal_cli::run(&config, jobs, save_models)?;
            for f in &summary.fractions {
                println!(
                    "fraction {:.4}: median ratio {:.4}, median GP NRMSE {:.4e}, improved {:.0}%",
                    f.fraction,
                    f.summary.improvement_ratio.median,
                    f.summary.gp_nrmse.median,
                    100.0 * f.summary.improved_fraction
                );
            }
            println!("wrote {}", config.output_dir.display());
        }
        Command::Fit { common } => {
            let (config, jobs) = common.load()?;
            println!("wrote {}", arraycal_cli::fit(&config, jobs)?.display());
        }
        Command::Apply { common, models } => {
            let (config, jobs) = common.load()?;
            let dir = models.unwrap_or_else(|| config.output_dir.join(output::MODELS_DIR));
            arraycal_cli::apply(&config, jobs, &dir)?;
            println!("wrote {}", config.output_dir.display());
        }
        Command::PatternDump { common, models } => {
            let (config, jobs) = common.load()?;
            println!("wrote {}", arraycal_cli::pattern_dump(&config, jobs, models.as_deref())?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
