use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpm_cli::{adjust, all_passed, config, dyna, minipacman, plan, scatter, sweep, Check, Error, Result};

#[derive(Parser)]
#[command(name = "cpm", about = "Causally correct partial models: experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Behaviour and model values of random policies on both bear MDPs.
    Scatter(Common),
    /// Optimal model values as the data policy's exploration varies.
    Sweep(Common),
    /// Closed-loop returns of a planner with an exact or learned model.
    Plan(Common),
    /// Policy learning inside learned models on AvoidFuzzyBear.
    Dyna(Common),
    /// Adjustment formulas against graph surgery on random SCMs.
    AdjustVerify(Common),
    /// Learned models and planners on MiniPacman.
    Minipacman(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted keys take their defaults, unknown keys are errors.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Exit with status 3 when any acceptance check fails.
    #[arg(long)]
    check: bool,
}

fn execute(command: Command) -> Result<(Common, Vec<Check>)> {
    let (common, checks) = match command {
        Command::Scatter(c) => {
            let o = scatter::run(&config::load(c.config.as_deref())?, c.seed)?;
            o.write(&c.out)?;
            (c, o.checks())
        }
        Command::Sweep(c) => {
            let o = sweep::run(&config::load(c.config.as_deref())?, c.seed)?;
            o.write(&c.out)?;
            (c, o.checks())
        }
        Command::Plan(c) => {
            let o = plan::run(&config::load(c.config.as_deref())?, c.seed)?;
            o.write(&c.out)?;
            println!("mean return {:.4} over {} episodes", o.summary.mean, o.summary.n);
            (c, o.checks())
        }
        Command::Dyna(c) => {
            let o = dyna::run(&config::load(c.config.as_deref())?, c.seed)?;
            o.write(&c.out)?;
            (c, o.checks())
        }
        Command::AdjustVerify(c) => {
            let o = adjust::run(&config::load(c.config.as_deref())?, c.seed)?;
            o.write(&c.out)?;
            print!("{}", o.report());
            (c, o.checks())
        }
        Command::Minipacman(c) => {
            let cfg = config::load(c.config.as_deref())?;
            let o = minipacman::run(&cfg, c.seed, Some(&c.out.join("checkpoints")))?;
            o.write(&c.out)?;
            (c, o.checks())
        }
    };
    Ok((common, checks))
}

fn print_checks(out: &Path, checks: &[Check]) {
    for c in checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("results in {}", out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok((common, checks)) => {
            print_checks(&common.out, &checks);
            if common.check && !all_passed(&checks) {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
