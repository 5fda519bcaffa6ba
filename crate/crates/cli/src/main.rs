use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rbslam_cli::experiments::Method;
use rbslam_cli::manifest::ExperimentManifest;
use rbslam_cli::run::{box_stats, resolve_workers, run_experiment, RunOptions, RunSummary};
use rbslam_cli::simulate::simulate_to_dir;
use rbslam_cli::verify::{verify_suite, VerifyOptions};
use rbslam_core::io::{read_results, write_box_stats};

#[derive(Parser)]
#[command(name = "rbslam", version, about = "Rao-Blackwellized particle filtering and smoothing for SLAM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides the manifest's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo repetitions.
    #[arg(long, env = "RBSLAM_WORKERS")]
    workers: Option<usize>,
    /// Use the paper's repetition counts instead of the desk-scale ones.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write truth, odometry and measurements.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        run: u64,
        #[arg(long, default_value_t = 0.0)]
        level: f64,
    },
    /// Run every method listed in the manifest.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Filtering methods only (PF, EKF).
    Filter {
        #[command(flatten)]
        common: Common,
    },
    /// Smoothing methods only (PS, EKS).
    Smooth {
        #[command(flatten)]
        common: Common,
    },
    /// Known-map localization on a radio scenario.
    Localize {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute box statistics from a results CSV.
    Evaluate {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oracle checks of the numerical core.
    Verify {
        /// Scale applied to the spectral density in the kernel check.
        #[arg(long, default_value_t = 1.0)]
        spectral_scale: f64,
    },
    /// Desk-scale versions of the simulation studies (4, 5, 7 or 8).
    ReproduceFigure {
        figure: u32,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> anyhow::Result<ExperimentManifest> {
    let Some(path) = &common.manifest else {
        bail!("--manifest is required");
    };
    let mut m = ExperimentManifest::from_path(path)?;
    if let Some(seed) = common.seed {
        m.seed = seed;
    }
    Ok(m)
}

fn out_dir(common: &Common, m: &ExperimentManifest) -> anyhow::Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| m.out.clone())
        .context("no output directory: pass --out or set `out` in the manifest")
}

fn restrict(mut m: ExperimentManifest, keep: &[Method], fallback: Method) -> anyhow::Result<ExperimentManifest> {
    m.methods.retain(|x| keep.contains(x));
    if m.methods.is_empty() {
        m.methods.push(fallback);
    }
    m.validate()?;
    Ok(m)
}

fn execute(m: &ExperimentManifest, common: &Common) -> anyhow::Result<()> {
    let out = out_dir(common, m)?;
    let workers = resolve_workers(common.workers, m);
    let summary = run_experiment(
        m,
        &RunOptions {
            out,
            workers,
            paper_scale: common.paper_scale,
        },
    )?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!("{:<14} {:>6} {:<9} {:>4} {:>10} {:>10} {:>10}", "scenario", "level", "method", "n", "median", "q1", "q3");
    for b in &s.box_stats {
        println!(
            "{:<14} {:>6} {:<9} {:>4} {:>10.4} {:>10.4} {:>10.4}",
            b.scenario, b.level, b.method, b.n, b.median, b.q1, b.q3
        );
    }
    println!("wrote {} in {:.1} s", s.out.display(), s.seconds);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, run, level } => {
            let m = load(&common)?;
            let out = out_dir(&common, &m)?;
            simulate_to_dir(&m, run, level, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Run { common } => execute(&load(&common)?, &common)?,
        Command::Filter { common } => {
            let m = restrict(load(&common)?, &[Method::Pf, Method::Ekf], Method::Pf)?;
            execute(&m, &common)?;
        }
        Command::Smooth { common } => {
            let m = restrict(load(&common)?, &[Method::Ps, Method::Eks], Method::Ps)?;
            execute(&m, &common)?;
        }
        Command::Localize { common } => {
            let m = restrict(load(&common)?, &[Method::Localize], Method::Localize)?;
            execute(&m, &common)?;
        }
        Command::Evaluate { results, out } => {
            let rows = read_results(std::fs::File::open(&results).with_context(|| format!("opening {}", results.display()))?)?;
            if rows.is_empty() {
                bail!("{} has no rows", results.display());
            }
            let stats = box_stats(&rows)?;
            let path = out.unwrap_or_else(|| results.with_file_name("box_stats.csv"));
            write_box_stats(std::fs::File::create(&path)?, &stats)?;
            for b in &stats {
                println!("{} level={} {} n={} median={:.4}", b.scenario, b.level, b.method, b.n, b.median);
            }
            println!("wrote {}", path.display());
        }
        Command::Verify { spectral_scale } => {
            let report = verify_suite(&VerifyOptions {
                spectral_scale,
                ..Default::default()
            });
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::ReproduceFigure { figure, common } => {
            let mut m = match &common.manifest {
                Some(_) => load(&common)?,
                None => ExperimentManifest::figure(figure, common.seed.unwrap_or(1))?,
            };
            if m.out.is_none() && common.out.is_none() {
                m.out = Some(PathBuf::from(format!("results/figure{figure}")));
            }
            execute(&m, &common)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
