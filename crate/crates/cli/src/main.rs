use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use game_lab::{GameError, GameParams};
use serde_json::json;
use sha2::{Digest, Sha256};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "game-lab", version, about = "Experiments for the delayed inter-bank lending game")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check parameters and print derived constants.
    Validate(Common),
    /// No-delay Riccati benchmark.
    Riccati(Common),
    /// Closed-loop kernels for the delayed game.
    Kernels {
        #[command(flatten)]
        common: Common,
        /// Also write the full kernel tensors to kernels.bin.
        #[arg(long)]
        dump: bool,
    },
    /// Monte Carlo of the closed-loop equilibrium.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write every path to trajectories.csv.
        #[arg(long)]
        trajectories: bool,
    },
    /// Systemic default probability: closed form against Monte Carlo.
    Systemic(Common),
    /// Liquidity rate over a sweep of delays.
    Liquidity(Common),
    /// Open-loop equilibrium by regression Monte Carlo.
    Fabsde {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        picard_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        picard_tol: f64,
        #[arg(long, default_value_t = 1)]
        homotopy_steps: usize,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        /// Window lengths of past-control averages added to the basis.
        #[arg(long, value_delimiter = ',')]
        history_windows: Vec<f64>,
    },
    /// Deviation test of the closed-loop equilibrium.
    Nashgap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        player: usize,
        /// constant_shift, scaled_feedback or custom_table.
        #[arg(long, default_value = "constant_shift")]
        kind: String,
        #[arg(long, default_value_t = 0.2)]
        magnitude: f64,
        /// Control values for custom_table, one per line, uniform over [0, T].
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "n-paths")]
    n_paths: Option<usize>,
    /// Worker threads, 0 for one per core.
    #[arg(long, env = "GAME_LAB_THREADS", default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
    #[arg(long = "tau-sweep", value_delimiter = ',')]
    tau_sweep: Vec<f64>,
    /// Default level for the systemic event, <= 0.
    #[arg(long = "D", allow_hyphen_values = true)]
    default_level: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Parameter overrides such as `delay=0.5`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Everything a command produces besides its exit status.
pub struct Outcome {
    pub dt: Option<f64>,
    pub n_paths: Option<usize>,
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: serde_json::Value,
}

fn load_params(common: &Common) -> Result<GameParams> {
    let mut p = GameParams::from_file(&common.params)?;
    for ov in &common.overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| GameError::InvalidParam(format!("override '{ov}' is not KEY=VALUE")))?;
        p.apply_override(k.trim(), v.trim())?;
    }
    Ok(p)
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Riccati(c) => ("riccati", c),
        Command::Kernels { common, .. } => ("kernels", common),
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Systemic(c) => ("systemic", c),
        Command::Liquidity(c) => ("liquidity", c),
        Command::Fabsde { common, .. } => ("fabsde", common),
        Command::Nashgap { common, .. } => ("nashgap", common),
    };
    if common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
            .context("thread pool")?;
    }
    let p = load_params(common)?;
    let started = Instant::now();
    let out = match &cli.command {
        Command::Validate(c) => commands::validate(&p, c)?,
        Command::Riccati(c) => commands::riccati(&p, c)?,
        Command::Kernels { common, dump } => commands::kernels(&p, common, *dump)?,
        Command::Simulate { common, trajectories } => commands::simulate(&p, common, *trajectories)?,
        Command::Systemic(c) => commands::systemic(&p, c)?,
        Command::Liquidity(c) => commands::liquidity(&p, c)?,
        Command::Fabsde { common, picard_iters, picard_tol, homotopy_steps, damping, history_windows } => {
            let cfg = commands::FabsdeKnobs {
                n_picard: *picard_iters,
                picard_tol: *picard_tol,
                homotopy_steps: *homotopy_steps,
                damping: *damping,
                windows: history_windows.clone(),
            };
            commands::fabsde(&p, common, &cfg)?
        }
        Command::Nashgap { common, player, kind, magnitude, table } => {
            commands::nashgap(&p, common, *player, kind, *magnitude, table.as_deref())?
        }
    };
    let wall = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(&common.output).map_err(GameError::from)?;
    let mut checksums = serde_json::Map::new();
    for (file, body) in &out.artifacts {
        std::fs::write(common.output.join(file), body).map_err(GameError::from)?;
        checksums.insert(file.clone(), json!(hex::encode(Sha256::digest(body))));
    }
    let meta = json!({
        "schema_version": game_lab::report::SCHEMA_VERSION,
        "command": name,
        "params_file": common.params,
        "params": p.to_config(),
        "overrides": common.overrides,
        "seed": common.seed,
        "requested_dt": common.dt,
        "dt": out.dt,
        "n_paths": out.n_paths,
        "threads": common.threads,
        "deterministic": common.deterministic,
        "format": format!("{:?}", common.format).to_lowercase(),
        "tau_sweep": common.tau_sweep,
        "D": common.default_level,
        "wall_time_s": wall,
        "artifacts": checksums,
        "summary": out.summary,
    });
    let text = serde_json::to_string_pretty(&meta)? + "\n";
    std::fs::write(common.output.join("run.json"), text).map_err(GameError::from)?;
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<GameError>() {
        Some(GameError::Io(_)) => 3,
        Some(e) if e.is_numerical() => 2,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
