use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tdmf_cli::presets::figure_preset;
use tdmf_cli::{run_experiment, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "tdmf", version, about = "TD learning curves: simulation, mean-field theory and spectral diagnostics")]
struct Args {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set learner.batch=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seeds: Option<usize>,
    #[arg(long, global = true)]
    master_seed: Option<u64>,
    /// Worker threads for seeds and sweep points.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: `output.dir` from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Inner {
    Simulate,
    Theory,
    Compare,
    Spectral,
    FixedPoint,
}

impl From<Inner> for Command {
    fn from(i: Inner) -> Self {
        match i {
            Inner::Simulate => Command::Simulate,
            Inner::Theory => Command::Theory,
            Inner::Compare => Command::Compare,
            Inner::Spectral => Command::Spectral,
            Inner::FixedPoint => Command::FixedPoint,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulation variants only.
    Simulate,
    /// Theory variants only.
    Theory,
    /// Every configured variant.
    Compare,
    /// Eigenmodes of A and the cumulative power of w_TD.
    Spectral,
    /// Plateau loss at constant learning rate.
    FixedPoint,
    /// One run per value of the `[sweep]` block.
    Sweep {
        #[arg(long, value_enum, default_value = "compare")]
        inner: Inner,
    },
    /// Run every part of a figure preset into `<out>/<label>`.
    Preset {
        name: String,
        /// Print the resolved configurations instead of running them.
        #[arg(long)]
        dump: bool,
    },
}

fn overrides(args: &Args) -> Vec<String> {
    let mut o = args.set.clone();
    if let Some(s) = args.seeds {
        o.push(format!("learner.seeds={s}"));
    }
    if let Some(s) = args.master_seed {
        o.push(format!("master_seed={s}"));
    }
    o
}

fn load(args: &Args) -> Result<ExperimentConfig, CliError> {
    let path = args.config.as_ref().ok_or_else(|| CliError::config("--config is required for this command"))?;
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text, &overrides(args))
}

fn out_dir(args: &Args, cfg: &ExperimentConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn run(args: &Args) -> Result<(), CliError> {
    if let Some(j) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let single = |command: Command| -> Result<(), CliError> {
        let mut cfg = load(args)?;
        if cfg.sweep.is_some() {
            eprintln!("note: ignoring [sweep]; use the sweep subcommand to run it");
            cfg.sweep = None;
        }
        run_experiment(&cfg, command, &out_dir(args, &cfg))
    };
    match &args.command {
        Cmd::Simulate => single(Command::Simulate),
        Cmd::Theory => single(Command::Theory),
        Cmd::Compare => single(Command::Compare),
        Cmd::Spectral => single(Command::Spectral),
        Cmd::FixedPoint => single(Command::FixedPoint),
        Cmd::Sweep { inner } => {
            let cfg = load(args)?;
            if cfg.sweep.is_none() {
                return Err(CliError::config("sweep needs a [sweep] block in the configuration"));
            }
            run_experiment(&cfg, (*inner).into(), &out_dir(args, &cfg))
        }
        Cmd::Preset { name, dump } => {
            let runs = figure_preset(name, &overrides(args))?;
            if *dump {
                for r in &runs {
                    println!("# {} ({})\n{}", r.label, r.command.name(), r.config.to_toml());
                }
                return Ok(());
            }
            let root = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let mut partial = None;
            for r in &runs {
                eprintln!("running {}", r.label);
                match run_experiment(&r.config, r.command, &root.join(&r.label)) {
                    Err(e @ CliError::PartialSweep { .. }) => {
                        eprintln!("{}", e.to_json());
                        partial = Some(e);
                    }
                    other => other?,
                }
            }
            partial.map_or(Ok(()), Err)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
