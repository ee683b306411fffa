mod commands;
mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recmatch::approx::ApproxConfig;
use recmatch::fusion::FusionKind;
use recmatch::market::FeedbackFormat;
use recmatch::recommend::RankKey;

use crate::config::FileConfig;

/// Capacity-aware reciprocal recommendation from two-sided feedback.
#[derive(Debug, Parser)]
#[command(name = "recmatch", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Root seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeedbackArgs {
    /// Feedback log (`sender,receiver,action,timestamp`), CSV or JSONL.
    #[arg(long)]
    pub feedback: PathBuf,
    /// Roster (`user_id,side`). Without it every row needs `sender_side`.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    /// Overrides the format implied by the extension.
    #[arg(long)]
    pub format: Option<FeedbackFormat>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Plain alternating updates without the singles-mass exchange.
    #[arg(long)]
    pub no_rebalance: bool,
    /// Sampled solver, e.g. `top_m=64,tail=256,tables=8,bits=10`; bare
    /// `--approx` uses the defaults.
    #[arg(long, value_name = "SPEC", num_args = 0..=1, default_missing_value = "")]
    pub approx: Option<ApproxConfig>,
    /// Dense solver even if the config file has an `[approx]` section.
    #[arg(long, conflicts_with = "approx")]
    pub exact: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a feedback log and report its shape.
    Ingest {
        #[command(flatten)]
        input: FeedbackArgs,
        /// Also write a normalized `feedback.csv` and `roster.csv` here.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Fit both direction models and save them to a models directory.
    Train {
        #[command(flatten)]
        input: FeedbackArgs,
        /// Output directory for `model_xy.bin`, `model_yx.bin`, `roster.csv`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
        /// Sampled unobserved pairs per positive.
        #[arg(long)]
        negative_rate: Option<f64>,
        /// Train on `nope`/`sorry` as zero labels.
        #[arg(long)]
        explicit_negatives: bool,
        /// Also write JSON copies of the models.
        #[arg(long)]
        json: bool,
    },
    /// Fuse the two directional scores with a fixed function.
    Fuse {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "harmonic")]
        fusion: FusionKind,
        /// Write `x_id,y_id,score` for every pair.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve for the matching equilibrium and transfers.
    Solve {
        #[arg(long)]
        models: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Binary equilibrium container.
        #[arg(long)]
        equilibrium: Option<PathBuf>,
        /// Write `x_id,y_id,mu,tau` for every pair.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Top-k candidate lists for every user, or for one.
    Recommend {
        #[arg(long)]
        models: PathBuf,
        /// `mu`, `transfer` or `fused:<kind>`.
        #[arg(long, conflicts_with = "fusion")]
        rank_key: Option<RankKey>,
        /// Shorthand for `--rank-key fused:<kind>`.
        #[arg(long)]
        fusion: Option<FusionKind>,
        #[arg(short, long)]
        k: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Only this user's list, included in the report.
        #[arg(long)]
        user: Option<String>,
        /// Write `user_id,rank,candidate_id,score`.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cross-check the solver against the tatonnement oracle.
    Verify {
        /// Small market to check; exclusive with `--random`.
        #[arg(long, required_unless_present = "random")]
        models: Option<PathBuf>,
        /// Random scores of this size, e.g. `5x7`.
        #[arg(long, value_parser = parse_size, conflicts_with = "models")]
        random: Option<(usize, usize)>,
        /// Tolerance for the equilibrium checks.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Generate a synthetic market with known preferences.
    Simulate {
        /// Output directory for `feedback`, `roster.csv`, `truth.bin`.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        n_x: Option<usize>,
        #[arg(long)]
        n_y: Option<usize>,
        #[arg(long)]
        d_true: Option<usize>,
        #[arg(long)]
        skew: Option<f64>,
        #[arg(long)]
        events_per_user: Option<f64>,
        #[arg(long, default_value = "csv")]
        format: FeedbackFormat,
    },
    /// Exposure concentration of the top-k lists under several rankings.
    Metrics {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "mu,fused:harmonic")]
        rank_keys: Vec<RankKey>,
        #[arg(short, long)]
        k: Option<usize>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Time score construction and solver sweeps over a size series.
    Bench {
        /// Comma-separated sizes, e.g. `250x250,500x500`.
        #[arg(long, value_delimiter = ',', value_parser = parse_size)]
        sizes: Option<Vec<(usize, usize)>>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Also time the sampled solver.
        #[arg(long, value_name = "SPEC", num_args = 0..=1, default_missing_value = "")]
        approx: Option<ApproxConfig>,
        #[arg(long)]
        skip_exact: bool,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected <n_x>x<n_y>, got `{s}`"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((n(a)?, n(b)?))
}

/// A command's failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<recmatch::Error> for Failure {
    fn from(e: recmatch::Error) -> Self {
        let code = match e {
            recmatch::Error::Config(_) => EXIT_USAGE,
            recmatch::Error::OracleDiverged { .. } => EXIT_NOT_CONVERGED,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// JSON report plus whether the run reached its tolerance.
pub struct Report {
    pub value: serde_json::Value,
    pub converged: bool,
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let file = FileConfig::load(cli.global.config.as_deref()).map_err(Failure::usage)?;
    let seed = cli.global.seed.or(file.seed).unwrap_or(0);
    let ctx = commands::Context { seed, file };
    let report = match cli.command {
        Command::Ingest { input, dir } => commands::ingest(&input, dir.as_deref())?,
        Command::Train {
            input,
            models,
            d,
            epochs,
            learning_rate,
            l2,
            negative_rate,
            explicit_negatives,
            json,
        } => {
            let train = commands::TrainOverrides {
                d,
                epochs,
                learning_rate,
                l2,
                negative_rate,
                explicit_negatives,
            };
            commands::train(&ctx, &input, &models, &train, json)?
        }
        Command::Fuse { models, fusion, csv } => commands::fuse_scores(&models, fusion, csv.as_deref())?,
        Command::Solve {
            models,
            solver,
            equilibrium,
            csv,
        } => commands::solve(&ctx, &models, &solver, equilibrium.as_deref(), csv.as_deref())?,
        Command::Recommend {
            models,
            rank_key,
            fusion,
            k,
            solver,
            user,
            csv,
        } => {
            let key = rank_key.or(fusion.map(RankKey::Fused));
            commands::recommend(&ctx, &models, key, k, &solver, user.as_deref(), csv.as_deref())?
        }
        Command::Verify { models, random, tol } => commands::verify(&ctx, models.as_deref(), random, tol)?,
        Command::Simulate {
            dir,
            n_x,
            n_y,
            d_true,
            skew,
            events_per_user,
            format,
        } => {
            let mut sim = ctx.file.sim.clone();
            sim.n_x = n_x.unwrap_or(sim.n_x);
            sim.n_y = n_y.unwrap_or(sim.n_y);
            sim.d_true = d_true.unwrap_or(sim.d_true);
            sim.popularity_skew = skew.unwrap_or(sim.popularity_skew);
            sim.events_per_user = events_per_user.unwrap_or(sim.events_per_user);
            sim.seed = seed;
            commands::simulate(&sim, &dir, format)?
        }
        Command::Metrics {
            models,
            rank_keys,
            k,
            solver,
        } => commands::metrics(&ctx, &models, &rank_keys, k, &solver)?,
        Command::Bench {
            sizes,
            d,
            sweeps,
            repeats,
            approx,
            skip_exact,
        } => {
            let mut config = ctx.file.bench.clone();
            config.sizes = sizes.unwrap_or(config.sizes);
            config.d = d.unwrap_or(config.d);
            config.sweeps = sweeps.unwrap_or(config.sweeps);
            config.repeats = repeats.unwrap_or(config.repeats);
            config.approx = approx.or(config.approx);
            config.skip_exact |= skip_exact;
            config.seed = seed;
            if let Some(a) = &mut config.approx {
                a.seed = seed;
            }
            commands::bench(&config)?
        }
    };
    let text = serde_json::to_string_pretty(&report.value).map_err(|e| Failure {
        code: EXIT_DATA,
        message: e.to_string(),
    })?;
    match &cli.global.out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", path.display()),
        })?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(Failure {
                        code: EXIT_DATA,
                        message: e.to_string(),
                    })
                }
                _ => {}
            }
        }
    }
    Ok(if report.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => {
            if code == EXIT_NOT_CONVERGED {
                eprintln!("error: did not converge");
            }
            ExitCode::from(code)
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("250x300"), Ok((250, 300)));
        assert!(parse_size("250").is_err());
        assert!(parse_size("ax3").is_err());
    }

    #[test]
    fn bare_approx_flag_means_defaults() {
        let cli = Cli::try_parse_from(["recmatch", "solve", "--models", "m", "--approx"]).unwrap();
        match cli.command {
            Command::Solve { solver, .. } => assert_eq!(solver.approx, Some(ApproxConfig::default())),
            other => panic!("{other:?}"),
        }
        let cli = Cli::try_parse_from(["recmatch", "solve", "--models", "m", "--approx", "top_m=5,tail=9"]).unwrap();
        match cli.command {
            Command::Solve { solver, .. } => {
                let a = solver.approx.unwrap();
                assert_eq!((a.top_m, a.tail_samples), (5, 9));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_is_accepted_after_the_subcommand() {
        let cli = Cli::try_parse_from(["recmatch", "bench", "--seed", "4"]).unwrap();
        assert_eq!(cli.global.seed, Some(4));
    }
}
