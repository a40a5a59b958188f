use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beliefsim::analytics::{
    closed_forms, ergodic_time_estimate, pareto_exponent, ErgodicSetup, ParetoMode, DEFAULT_EPSILON,
};
use beliefsim::belief_dynamics::{simulate_opinion_path, OpinionRule};
use beliefsim::market_finite_n::oracle_report;
use beliefsim::numeric::sort_ascending;
use beliefsim::sim_engine::run_scenario;
use beliefsim::snapshot_io::{
    analyze_sorted, read_snapshot_values, to_sorted_json, write_analysis, write_table,
    SNAPSHOTS_FILE,
};
use beliefsim::wealth_stats::TailFitOptions;
use beliefsim::{Error, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Simulator of an economy of adaptive learners betting on their own
/// opinions.
#[derive(Parser)]
#[command(name = "beliefsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulation and write its output files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's `outputs` directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every closed-form quantity for a config as JSON.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Which tail-exponent formula to report as `mu`.
        #[arg(long, value_enum, default_value = "delta0")]
        mode: MuMode,
        /// Per-period return variance for the iid, taxed and correlated
        /// tail formulas.
        #[arg(long, default_value_t = 0.01)]
        sigma2: f64,
    },
    /// Inequality and tail statistics of a run directory's snapshots.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the analysis files; defaults to `--in`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Belief paths of the opinion process without a market.
    Polya {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "least-squares")]
        rule: Rule,
        #[arg(long, default_value_t = 5)]
        runs: u32,
        #[arg(long, default_value_t = 520)]
        periods: usize,
        /// Common starting belief instead of uniform priors.
        #[arg(long)]
        initial_mean: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ergodic time of the scalar opinion recursion.
    Ergodic {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Optional CSV of the distance at each checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive finite-population pricing checks.
    FiniteCheck {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 0.99)]
        beta: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.8,0.4")]
        beliefs: Vec<f64>,
        /// Base wealth in units of H, one entry per base belief.
        #[arg(long, value_delimiter = ',', default_value = "1.5,0.5")]
        wealth: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MuMode {
    Delta0,
    Iid,
    Correlated,
    Taxed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    LeastSquares,
    ConstantGain,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line: Vec<&str> = text
                .lines()
                .map(str::trim)
                .skip_while(|l| l.is_empty())
                .take_while(|l| !l.is_empty())
                .collect();
            eprintln!("{}", line.join(" "));
            return ExitCode::from(2);
        }
    };
    let workers = match threads_from_env() {
        Ok(w) => w,
        Err(e) => return fail(&e),
    };
    if workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match run(cli.command, workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {}", e.to_string().replace('\n', " "));
    match e {
        Error::Config(_) | Error::Usage(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn threads_from_env() -> Result<usize, Error> {
    match std::env::var("QE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("QE_THREADS must be a count, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = to_sorted_json(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Error> {
    if !path.exists() {
        return Err(Error::Usage(format!(
            "--config {} does not exist",
            path.display()
        )));
    }
    RunConfig::from_file(path)
}

fn run(command: Command, workers: usize) -> Result<(), Error> {
    match command {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.params.seed = s;
            }
            if out.is_some() {
                cfg.outputs = out;
            }
            if cfg.outputs.is_none() {
                return Err(Error::Usage(
                    "simulate needs --out or an `outputs` key in the config".into(),
                ));
            }
            cfg.workers = workers;
            let record = run_scenario(&cfg)?;
            print_json(&record.summary)
        }
        Command::Oracle {
            config,
            mode,
            sigma2,
        } => {
            let cfg = load_config(&config)?;
            let p = &cfg.params;
            let mu_mode = match mode {
                MuMode::Delta0 => ParetoMode::Delta0 { lambda: p.lambda },
                MuMode::Iid => ParetoMode::Iid {
                    delta: p.delta,
                    sigma2,
                },
                MuMode::Correlated => ParetoMode::Correlated {
                    delta: p.delta,
                    lambda: p.lambda,
                    sigma_bar2: sigma2,
                },
                MuMode::Taxed => ParetoMode::Taxed {
                    phi: p.phi,
                    delta: p.delta,
                    sigma2,
                },
            };
            let mut report = serde_json::to_value(closed_forms(p)?).map_err(|e| Error::Format {
                section: "oracle".into(),
                detail: e.to_string(),
            })?;
            report["mu"] = pareto_exponent(mu_mode)?.into();
            report["mu_mode"] = format!("{:?}", mu_mode).into();
            print_json(&report)
        }
        Command::Analyze { input, out } => {
            let path = input.join(SNAPSHOTS_FILE);
            if !path.exists() {
                return Err(Error::Usage(format!("{} not found", path.display())));
            }
            let groups = read_snapshot_values(&path)?;
            let n_snapshots = groups.len();
            let mut pooled: Vec<f64> = groups.into_iter().flat_map(|(_, v)| v).collect();
            if pooled.len() < 2 {
                return Err(Error::Usage(format!(
                    "{} holds fewer than two wealth values",
                    path.display()
                )));
            }
            if let Some(bad) = pooled.iter().find(|w| w.is_nan() || **w < 0.0) {
                return Err(Error::Usage(format!(
                    "{} holds a negative or non-numeric wealth {bad}",
                    path.display()
                )));
            }
            sort_ascending(&mut pooled);
            let analysis = analyze_sorted(&pooled, n_snapshots, TailFitOptions::default());
            write_analysis(&analysis, out.as_deref().unwrap_or(&input))?;
            #[derive(Serialize)]
            struct Printed<'a> {
                inequality: &'a beliefsim::snapshot_io::InequalitySummary,
                tail_fit: &'a beliefsim::wealth_stats::TailFitReport,
            }
            print_json(&Printed {
                inequality: &analysis.inequality,
                tail_fit: &analysis.tail,
            })
        }
        Command::Polya {
            config,
            rule,
            runs,
            periods,
            initial_mean,
            out,
        } => {
            let cfg = load_config(&config)?;
            let rule = match rule {
                Rule::LeastSquares => OpinionRule::LeastSquares,
                Rule::ConstantGain => OpinionRule::ConstantGain,
            };
            let mut rows = Vec::new();
            for run in 0..runs {
                let mut params = cfg.params.clone();
                params.seed = cfg.params.seed.wrapping_add(run as u64);
                for row in simulate_opinion_path(&params, rule, periods, initial_mean)? {
                    rows.push((run, row.period, row.mean_belief, row.p20, row.p80));
                }
            }
            write_table(
                &out,
                &["run", "period", "mean_belief", "belief_p20", "belief_p80"],
                rows,
            )
        }
        Command::Ergodic {
            config,
            lambda,
            delta,
            epsilon,
            horizon,
            paths,
            seed,
            out,
        } => {
            let base = match &config {
                Some(path) => Some(load_config(path)?.params),
                None => None,
            };
            let delta = delta
                .or(base.as_ref().map(|p| p.delta))
                .ok_or_else(|| Error::Usage("ergodic needs --delta or --config".into()))?;
            let lambda = lambda
                .or(base.as_ref().map(|p| p.lambda))
                .ok_or_else(|| Error::Usage("ergodic needs --lambda or --config".into()))?;
            let setup = ErgodicSetup {
                paths_per_point: paths,
                seed,
                ..ErgodicSetup::default()
            };
            let report = ergodic_time_estimate(lambda, delta, epsilon, setup, horizon)?;
            if let Some(path) = out {
                write_table(
                    &path,
                    &["period", "tv_distance"],
                    report.tv_series.iter().copied(),
                )?;
            }
            print_json(&report)
        }
        Command::FiniteCheck {
            sizes,
            delta,
            beta,
            beliefs,
            wealth,
        } => {
            if beliefs.len() != wealth.len() {
                return Err(Error::Usage(format!(
                    "--beliefs has {} entries but --wealth has {}",
                    beliefs.len(),
                    wealth.len()
                )));
            }
            let report = oracle_report(&beliefs, &wealth, &sizes, beta, delta, 1.0)?;
            print_json(&report)
        }
    }
}
