//! `canf` — joint multi-step probabilistic load forecasting.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for data errors,
//! 4 for numeric failures.

use std::path::PathBuf;
use std::process;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use canf::commands;
use canf::config::{Overrides, RunConfig};
use canf::forecaster::Strategy;

#[derive(Parser)]
#[command(
    name = "canf",
    version,
    about = "Joint multi-step probabilistic load forecasting and value-at-risk scheduling"
)]
struct Cli {
    /// TOML run configuration; individual flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed; collapses the configured seed list to this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (reports land beneath it).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Forecasting strategy: cg, cgmm, canf, jfnn, arma, or ifnn.
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Observed history length (hours before the forecast origin).
    #[arg(long = "L", global = true, value_name = "HOURS")]
    l: Option<usize>,

    /// Forecast horizon (hours).
    #[arg(long = "K", global = true, value_name = "HOURS")]
    k: Option<usize>,

    /// Number of hours to schedule.
    #[arg(long = "D", global = true, value_name = "HOURS")]
    d: Option<usize>,

    /// Value-at-risk level in (0, 1).
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Trajectories drawn per forecast.
    #[arg(long, global = true)]
    m: Option<usize>,

    /// Hourly load CSV (otherwise a synthetic series is generated).
    #[arg(long, global = true, value_name = "FILE")]
    csv: Option<PathBuf>,

    /// Timestamp column name in the CSV.
    #[arg(long, global = true, value_name = "NAME")]
    timestamp_column: Option<String>,

    /// Load column name in the CSV.
    #[arg(long, global = true, value_name = "NAME")]
    value_column: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the 2-D density-recovery study scored by Monte-Carlo KL.
    Toy,
    /// Fit the selected strategy on the configured dataset and save it.
    Fit,
    /// Forecast the next K hours from a saved bundle and an input window.
    Forecast {
        /// Bundle directory written by `fit`.
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        /// CSV holding the last L+1 observed hours.
        #[arg(long, value_name = "FILE")]
        window: PathBuf,
    },
    /// Evaluate saved bundles on the shared test split.
    Evaluate {
        /// Bundle directory; repeat the flag to compare several.
        #[arg(long, value_name = "DIR", required = true)]
        bundle: Vec<PathBuf>,
    },
    /// Choose the D cheapest hours of the horizon by α-value-at-risk.
    Schedule {
        /// Bundle directory written by `fit`.
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        /// CSV holding the last L+1 observed hours.
        #[arg(long, value_name = "FILE")]
        window: PathBuf,
    },
    /// Generate a synthetic hourly load CSV.
    Synth {
        /// Target CSV path (defaults to dumps/synthetic.csv under the
        /// output directory).
        #[arg(long, value_name = "FILE")]
        file: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> canf::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_path(path)?,
        None => RunConfig::default(),
    };
    let strategy = cli
        .strategy
        .as_deref()
        .map(Strategy::from_str)
        .transpose()?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out,
        strategy,
        l: cli.l,
        k: cli.k,
        d: cli.d,
        alpha: cli.alpha,
        m: cli.m,
        csv: cli.csv,
        timestamp_column: cli.timestamp_column,
        value_column: cli.value_column,
    });

    match cli.command {
        Command::Toy => {
            let summary = commands::cmd_toy(&cfg)?;
            for r in &summary.per_seed {
                match (r.kl_gmm, r.kl_flow, r.kl_anf) {
                    (Some(g), Some(f), Some(a)) => println!(
                        "seed {:>3}  KL  gmm {:.4}  flow {:.4}  anf {:.4}",
                        r.seed, g, f, a
                    ),
                    _ => println!("seed {:>3}  {}", r.seed, r.status),
                }
            }
            if let Some(agg) = &summary.aggregate {
                println!("aggregate over {} seeds (mean ± std):", agg.n_seeds);
                for (name, ms) in [("gmm", &agg.gmm), ("flow", &agg.flow), ("anf", &agg.anf)] {
                    println!("  {name:<5} {:.4} ± {:.4}", ms.mean, ms.std);
                }
            }
        }
        Command::Fit => {
            let dir = commands::cmd_fit(&cfg)?;
            println!("bundle written to {}", dir.display());
        }
        Command::Forecast { bundle, window } => {
            let summary = commands::cmd_forecast(&cfg, &bundle, &window)?;
            println!(
                "{}-step forecast from {} bundle ({} trajectories):",
                summary.horizon, summary.strategy, summary.m
            );
            println!("step      mean       std       p10       p50       p90");
            for s in &summary.steps {
                println!(
                    "{:>4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                    s.step, s.mean, s.std, s.p10, s.p50, s.p90
                );
            }
        }
        Command::Evaluate { bundle } => {
            let rows = commands::cmd_evaluate(&cfg, &bundle)?;
            println!("strategy      WAPE      RWSE   mean LL  decision");
            for r in &rows {
                let ll = r
                    .mean_ll
                    .map(|v| format!("{v:>9.4}"))
                    .unwrap_or_else(|| format!("{:>9}", "-"));
                println!(
                    "{:<8} {:>9.4} {:>9.4} {ll} {:>9.4}",
                    r.strategy, r.wape, r.rwse, r.decision_score
                );
            }
        }
        Command::Schedule { bundle, window } => {
            let outcome = commands::cmd_schedule(&cfg, &bundle, &window)?;
            let chosen = outcome
                .indices
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(", ");
            println!(
                "schedule {} of the next {} hours at α={}: hours {chosen}",
                outcome.d, outcome.forecast.horizon, outcome.alpha
            );
            println!("top candidate subsets by value-at-risk:");
            for row in &outcome.top {
                let idx = row
                    .indices
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                println!("  [{idx}]  VaR {:.4}", row.var);
            }
            println!("forecast mixture: see reports/schedule.json");
        }
        Command::Synth { file } => {
            let path = commands::cmd_synth(&cfg, file.as_deref())?;
            println!("synthetic series written to {}", path.display());
        }
    }
    Ok(())
}
