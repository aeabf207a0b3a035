use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use itemcal::config::{load_config, parse_item_list, parse_strategies, render_config};
use itemcal::curves::{curves_csv, emit_curves, CURVES_METADATA};
use itemcal::error::{CalibError, Result};
use itemcal::harness::{run_calibration, run_monte_carlo, Strategy, StudyConfig};
use itemcal::irt_model::ItemParams;
use itemcal::report::{self, fmt_sig};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE_RATE: u8 = 3;

#[derive(Parser)]
#[command(name = "itemcal", version, about = "Sequential calibration of 3PL items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate one simulated item and print the result.
    Calibrate {
        #[arg(long, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, allow_hyphen_values = true)]
        b: f64,
        #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value = "TWO_STAGE")]
        strategy: Strategy,
        /// Target width of the confidence ellipsoid.
        #[arg(long, default_value_t = 0.5)]
        d: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Examinee cap.
        #[arg(long = "max-n", default_value_t = 50_000)]
        max_n: usize,
    },
    /// Monte Carlo study over an item grid.
    Mc {
        /// Study configuration file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        /// A strategy name, a comma list, or `all`. Overrides the config file.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides `seed` from the config file.
        #[arg(long = "master-seed")]
        master_seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// ICC and information curves as CSV.
    Curves {
        /// Items as `a:b:c, a:b:c, ...`.
        #[arg(long, default_value = "0.5:0:0.1, 1:0:0.1, 1.5:0:0.1, 2:0:0.1")]
        items: String,
        #[arg(long = "theta-min", default_value_t = -4.0, allow_hyphen_values = true)]
        theta_min: f64,
        #[arg(long = "theta-max", default_value_t = 4.0, allow_hyphen_values = true)]
        theta_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tables and CSVs from the summaries written by `mc`.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Study whose sample sizes the ratios are taken against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Calibrate { a, b, c, strategy, d, alpha, seed, max_n } => {
            calibrate(a, b, c, strategy, d, alpha, seed, max_n)
        }
        Command::Mc { config, reps, strategy, out, master_seed, threads } => {
            mc(config.as_deref(), reps, strategy.as_deref(), &out, master_seed, threads)
        }
        Command::Curves { items, theta_min, theta_max, step, out } => curves(&items, theta_min, theta_max, step, &out),
        Command::Report { input, baseline, out } => {
            report::generate_report(&input, baseline.as_deref(), &out).map(|files| {
                for f in files {
                    println!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            })
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CalibError::Config(_) | CalibError::Domain(_) => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn calibrate(a: f64, b: f64, c: f64, strategy: Strategy, d: f64, alpha: f64, seed: u64, max_n: usize) -> Result<ExitCode> {
    let item = ItemParams::new(a, b, c)?;
    let mut cfg = StudyConfig { strategy, max_examinees: max_n, ..StudyConfig::default() };
    cfg.stopping.d = d;
    cfg.stopping.alpha = alpha;
    let r = run_calibration(&item, &cfg, seed)?;
    println!("strategy   {strategy}");
    println!("true       a={} b={} c={}", fmt_sig(a), fmt_sig(b), fmt_sig(c));
    println!(
        "estimate   a={} b={} c={}",
        fmt_sig(r.estimates.a()),
        fmt_sig(r.estimates.b()),
        fmt_sig(r.estimates.c())
    );
    println!("n          {}", r.n_used);
    println!("stopped    {}", r.stopped);
    println!("converged  {}", r.converged);
    println!("lambda_min {} (threshold {})", fmt_sig(r.lambda_min), fmt_sig(cfg.stopping.threshold()));
    println!("covered    {}", r.joint_covered);
    println!("iterations {} ({} fallback)", r.iterations, r.fallback_iterations);
    Ok(ExitCode::SUCCESS)
}

fn mc(
    config: Option<&Path>,
    reps: Option<usize>,
    strategy: Option<&str>,
    out: &Path,
    master_seed: Option<u64>,
    threads: usize,
) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => StudyConfig::default(),
    };
    if let Some(r) = reps {
        cfg.replications = r;
    }
    let strategies = match strategy {
        Some(s) => parse_strategies(s)?,
        None => vec![cfg.strategy],
    };
    let seed = master_seed.unwrap_or(cfg.pool.seed);
    cfg.pool.seed = seed;
    cfg.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CalibError::Config(format!("thread pool: {e}")))?;

    let mut failed = Vec::new();
    for &s in &strategies {
        let study = StudyConfig { strategy: s, ..cfg.clone() };
        let run = pool.install(|| run_monte_carlo(&study, seed))?;
        for f in report::write_study(out, &study.grid, s, &run)? {
            println!("wrote {}", f.display());
        }
        let rate = run.failure_rate();
        if rate > cfg.failure_rate_threshold {
            failed.push(format!("{s}: failure rate {} above {}", fmt_sig(rate), fmt_sig(cfg.failure_rate_threshold)));
        }
    }
    let manifest = report::manifest(&render_config(&cfg), seed, &strategies, env!("CARGO_PKG_VERSION"));
    let path = out.join("manifest.txt");
    report::write_file(&path, &manifest)?;
    println!("wrote {}", path.display());

    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in failed {
            eprintln!("{f}");
        }
        Ok(ExitCode::from(EXIT_FAILURE_RATE))
    }
}

fn curves(items: &str, theta_min: f64, theta_max: f64, step: f64, out: &Path) -> Result<ExitCode> {
    let items = parse_item_list(items)?;
    let points = emit_curves(&items, theta_min, theta_max, step)?;
    std::fs::create_dir_all(out).map_err(|source| CalibError::Io { path: out.to_path_buf(), source })?;
    let data = out.join("curves.csv");
    report::write_file(&data, &curves_csv(&items, &points))?;
    let meta = out.join("curves_meta.txt");
    report::write_file(&meta, CURVES_METADATA)?;
    println!("wrote {}\nwrote {}", data.display(), meta.display());
    Ok(ExitCode::SUCCESS)
}
