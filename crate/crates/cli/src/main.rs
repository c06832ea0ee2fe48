use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use probsplat::config::RunConfig;
use probsplat::pipeline::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_refine, cmd_render, cmd_train, final_splats_path, latest_checkpoint,
};
use probsplat::{Error, Result};

/// Environment variable holding the default worker count.
const THREADS_ENV: &str = "PROBSPLAT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "probsplat", version, about = "Foreground-object splatting on synthetic multi-view data")]
struct Cli {
    /// Configuration file of `key = value` lines; `#` starts a comment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads. Defaults to $PROBSPLAT_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset to `data_dir`.
    Generate,
    /// Score points and views; write the filtered cloud below `run_dir/refine`.
    Refine,
    /// Optimize splats from the refined cloud.
    Train {
        /// Continue from a checkpoint directory, or from the latest one if no path is given.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<Option<PathBuf>>,
        /// Print a progress line every N iterations (0 disables).
        #[arg(long, default_value_t = 500)]
        log_every: usize,
    },
    /// Render a model from every camera of a camera file.
    Render {
        /// Splat file; defaults to the trained model of `run_dir`.
        #[arg(long)]
        splats: Option<PathBuf>,
        /// Camera file; defaults to `data_dir/cameras.txt`.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Output directory; defaults to `run_dir/render`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the trained model on held-out views.
    Eval,
    /// Train and score the four ablation rows.
    Ablate {
        #[arg(long, default_value_t = 0)]
        log_every: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate => {
            let ds = cmd_generate(&cfg)?;
            println!("wrote {} views to {}", ds.views.len(), cfg.data_dir.display());
        }
        Command::Refine => {
            let r = cmd_refine(&cfg)?;
            let invalid = r.report.view_valid.iter().filter(|v| !**v).count();
            println!(
                "kept {} points; {invalid} of {} views invalidated",
                r.cloud.len(),
                r.report.view_valid.len()
            );
        }
        Command::Train { resume, log_every } => {
            let from = match resume {
                None => None,
                Some(Some(p)) => Some(p),
                Some(None) => Some(latest_checkpoint(&cfg)?),
            };
            let state = cmd_train(&cfg, from.as_deref(), log_every)?;
            println!(
                "trained {} iterations; {} splats (peak {})",
                state.iteration,
                state.splats.len(),
                state.peak_splats()
            );
        }
        Command::Render { splats, cameras, out } => {
            let splats = splats.unwrap_or_else(|| final_splats_path(&cfg));
            let cameras = cameras.unwrap_or_else(|| cfg.data_dir.join("cameras.txt"));
            let out = out.unwrap_or_else(|| cfg.run_dir.join("render"));
            let n = cmd_render(&splats, &cameras, &out)?;
            println!("rendered {n} views to {}", out.display());
        }
        Command::Eval => {
            let r = cmd_eval(&cfg)?;
            print!("{}", r.to_table());
        }
        Command::Ablate { log_every } => {
            let rows = cmd_ablate(&cfg, log_every)?;
            print!("{}", probsplat::eval::ablation_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_long_help(format!("Configuration keys:\n{}", RunConfig::help_text()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
