use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use super::arena::{cross_play, cross_play_policies, CrossPlayReport, Greedy, Scripted};
use super::config::{EnvironmentKind, RunConfig};
use super::gradsuite::gradient_suite;
use super::persist::{create_run_dir, write_run, Checkpoint};
use super::train::{squeeze_greedy, train};
use crate::error::{Error, Result};
use crate::squeeze::{self, SqueezeConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "fql", version, about = "Factorized multi-agent Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a TOML config and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Parent directory of the run directory.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rounds: Option<u64>,
    },
    /// Evaluate one checkpoint greedily.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Battle opponent.
        #[arg(long, value_enum, default_value = "aggressor")]
        opponent: Opponent,
        #[arg(long, default_value_t = 100)]
        battles: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Greedy battles between two checkpoints, alternating sides.
    CrossPlay {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 100)]
        battles: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run battles on one thread.
        #[arg(long)]
        serial: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Brute-force optimum of the Gaussian Squeeze reward.
    Oracle {
        /// Run config whose squeeze section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Finite-difference check of every layer kind and the composite loss.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Opponent {
    /// Scripted attacker.
    Aggressor,
    /// The checkpoint itself.
    Itself,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Input(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            }
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            out,
            seed,
            rounds,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            cfg.validate()?;
            let outcome = train(&cfg)?;
            let dir = create_run_dir(&out, cfg.seed)?;
            write_run(&dir, &cfg, &outcome)?;
            if let Some(last) = outcome.squeeze_curve().and_then(|c| c.last()) {
                println!("final smoothed reward {:.4}", last.smoothed_reward);
            }
            if let Some(last) = outcome.battle_curve().and_then(|c| c.last()) {
                let [a, b] = last.armies;
                println!("final round {} kills {}/{}", last.round, a.killing_index, b.killing_index);
            }
            println!("{}", dir.display());
            Ok(EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            opponent,
            battles,
            seed,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            match ck.environment {
                EnvironmentKind::Squeeze => {
                    let env = ck.squeeze.ok_or_else(|| Error::Config("checkpoint lacks its squeeze config".into()))?;
                    let outcome = squeeze_greedy(&ck.policy, &env, 2)?;
                    let (x, r) = squeeze::optimal_total(&env);
                    println!("greedy total {} reward {:.6}", outcome.total, outcome.reward);
                    println!("optimum total {x} reward {r:.6} ratio {:.4}", outcome.reward / r);
                }
                EnvironmentKind::Battle => {
                    let env = ck.battle.ok_or_else(|| Error::Config("checkpoint lacks its battle config".into()))?;
                    let report = match opponent {
                        Opponent::Itself => cross_play_policies(&ck.policy, &ck.policy, &env, ck.encoding, battles, seed, true)?,
                        Opponent::Aggressor => {
                            let me = Greedy {
                                policy: &ck.policy,
                                encoding: ck.encoding,
                            };
                            cross_play(&me, &Scripted::Aggressor, &env, battles, seed, true)?
                        }
                    };
                    print_report(&report, ck.algorithm.name(), "opponent");
                }
            }
            Ok(EXIT_OK)
        }
        Command::CrossPlay {
            a,
            b,
            battles,
            seed,
            serial,
            json,
        } => {
            let (ca, cb) = (Checkpoint::load(&a)?, Checkpoint::load(&b)?);
            let (Some(ea), Some(eb)) = (&ca.battle, &cb.battle) else {
                return Err(Error::Config("cross-play needs two battle checkpoints".into()));
            };
            if ea != eb || ca.encoding != cb.encoding {
                return Err(Error::Config("checkpoints were trained on different battle configs".into()));
            }
            let report = cross_play_policies(&ca.policy, &cb.policy, ea, ca.encoding, battles, seed, !serial)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print_report(&report, ca.algorithm.name(), cb.algorithm.name());
            }
            Ok(EXIT_OK)
        }
        Command::Oracle { config, agents } => {
            let mut env = match config {
                Some(path) => RunConfig::load(&path)?.squeeze,
                None => SqueezeConfig::default(),
            };
            if let Some(n) = agents {
                env.agents = n;
            }
            env.validate()?;
            let (x, r) = squeeze::optimal_total(&env);
            println!("x* = {x}");
            println!("r* = {r}");
            Ok(EXIT_OK)
        }
        Command::GradCheck { instances, seed } => {
            if instances == 0 {
                return Err(Error::Config("--instances must be positive".into()));
            }
            let report = gradient_suite(instances, seed)?;
            for case in &report.cases {
                println!(
                    "{:<14} {:>3} instances ({} redrawn near a kink)  max relative error {:.3e}",
                    case.kind, case.instances, case.redrawn, case.max_relative_error
                );
            }
            let worst = report.max_relative_error();
            println!("max relative error {worst:.3e}");
            Ok(if worst <= GRAD_TOLERANCE { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

fn print_report(report: &CrossPlayReport, a: &str, b: &str) {
    println!("battles {} draws {}", report.battles, report.draws);
    for (name, side) in [(a, &report.a), (b, &report.b)] {
        println!(
            "{name:<10} win_rate {:.3} wins {:>4} killing_index {:.2}±{:.2} mean_rewards {:.3}±{:.3} total_rewards {:.2}±{:.2}",
            side.win_rate,
            side.wins,
            side.killing_index.mean,
            side.killing_index.std,
            side.mean_rewards.mean,
            side.mean_rewards.std,
            side.total_rewards.mean,
            side.total_rewards.std,
        );
    }
}
