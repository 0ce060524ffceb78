use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use diffusion_accel::cli::{cmd_analyze, cmd_compare, cmd_sample, cmd_train};
use diffusion_accel::config::RunConfig;
use diffusion_accel::sde::SdeKind;
use diffusion_accel::Result;

#[derive(Parser)]
#[command(
    name = "diffusion-accel",
    about = "Analyze diffusion time steps and train toy models with asymmetric sampling and change-aware weighting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SdeArg {
    Vp,
    Ve,
    Edm,
}

impl From<SdeArg> for SdeKind {
    fn from(value: SdeArg) -> Self {
        match value {
            SdeArg::Vp => SdeKind::Vp,
            SdeArg::Ve => SdeKind::Ve,
            SdeArg::Edm => SdeKind::Edm,
        }
    }
}

#[derive(clap::Args, Clone, Debug, Default)]
struct Overrides {
    /// Master seed; fully determines all outputs.
    #[arg(long)]
    seed: Option<u64>,
    /// Magnitude used for the convergence boundary and tau derivation.
    #[arg(long)]
    r: Option<f64>,
    /// Explicit sampler threshold step.
    #[arg(long)]
    tau: Option<usize>,
    /// Suppression intensity of the asymmetric sampler.
    #[arg(long)]
    k: Option<f64>,
    /// Symmetry ceiling of the change-aware weights.
    #[arg(long)]
    lambda: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.r {
            cfg.sampler.r = r;
        }
        if let Some(tau) = self.tau {
            cfg.sampler.tau = Some(tau);
        }
        if let Some(k) = self.k {
            cfg.sampler.k = k;
        }
        if let Some(lambda) = self.lambda {
            cfg.weighting.lambda = lambda;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Dump schedule, bound curves, sampler/weight tables and a boundary summary as CSV/JSON.
    Analyze {
        /// JSON config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump one continuous schedule grid.
        #[arg(long, value_enum)]
        sde: Option<SdeArg>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one model and write metrics plus a checkpoint into a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train two configs and report how much earlier the second reaches the metric threshold.
    Compare {
        #[arg(long)]
        config_a: PathBuf,
        #[arg(long)]
        config_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metric threshold; defaults to run A's value at 60% of its iterations.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw points from a trained checkpoint's EMA model.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of points.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze {
            config,
            out,
            sde,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            overrides.apply(&mut cfg);
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let out_dir = cfg.out_dir.clone();
            let files = cmd_analyze(&cfg, sde.map(SdeKind::from), &out_dir)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Train {
            config,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            overrides.apply(&mut cfg);
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            let dir = cmd_train(&cfg)?;
            println!("{}", dir.display());
        }
        Command::Compare {
            config_a,
            config_b,
            out,
            threshold,
            overrides,
        } => {
            let mut cfg_a = RunConfig::from_file(&config_a)?;
            let mut cfg_b = RunConfig::from_file(&config_b)?;
            overrides.apply(&mut cfg_a);
            overrides.apply(&mut cfg_b);
            let out_dir = out.unwrap_or_else(|| cfg_a.out_dir.clone());
            let verdict = cmd_compare(&cfg_a, &cfg_b, &out_dir, threshold)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&verdict).expect("verdict serializes")
            );
        }
        Command::Sample {
            checkpoint,
            n,
            seed,
            out,
        } => {
            let path = cmd_sample(&checkpoint, n, seed, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
