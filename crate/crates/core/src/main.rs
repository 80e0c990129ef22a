use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use glw::harness::{run_eval, run_pipeline, AtStage, ScenarioConfig, Stage, StageError, Suite, Until};
use glw::runtime::threads_from_env;

#[derive(Parser)]
#[command(name = "glw", version, about = "Global latent workspace scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Alignment,
    Grounding,
    Ignition,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the hidden world and write `world.csv`.
    GenWorld(Common),
    /// Also fit one autoencoder per domain (`modules.json`).
    TrainModules(Common),
    /// Also train the workspace translator (`translator.json`).
    TrainGlw(Common),
    /// Full pipeline plus the configured timeline, trace and metrics.
    Run(Common),
    /// Multi-seed evaluation suites (`eval.json`).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
    },
}

fn load(c: &Common) -> Result<(ScenarioConfig, u64, PathBuf), StageError> {
    let cfg = ScenarioConfig::load(&c.config).at(Stage::Config)?;
    let seed = c.seed.unwrap_or(cfg.seed);
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").to_path_buf());
    Ok((cfg, seed, out))
}

fn execute(cli: Cli) -> Result<(), StageError> {
    let threads = threads_from_env();
    let stage = |c: &Common, until| {
        let (cfg, seed, out) = load(c)?;
        run_pipeline(&cfg, seed, &out, until, threads)
    };
    match cli.command {
        Command::GenWorld(c) => stage(&c, Until::World),
        Command::TrainModules(c) => stage(&c, Until::Modules),
        Command::TrainGlw(c) => stage(&c, Until::Translator),
        Command::Run(c) => stage(&c, Until::Full),
        Command::Eval { common, suite } => {
            let (cfg, _, out) = load(&common)?;
            let seeds = common.seed.map_or_else(|| cfg.eval.seeds.clone(), |s| vec![s]);
            let suite = match suite {
                SuiteArg::Alignment => Suite::Alignment,
                SuiteArg::Grounding => Suite::Grounding,
                SuiteArg::Ignition => Suite::Ignition,
                SuiteArg::All => Suite::All,
            };
            run_eval(&cfg, &seeds, suite, &out, threads).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
