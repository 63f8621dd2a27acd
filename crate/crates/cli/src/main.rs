//! Command-line front end: data generation, plan runs, benchmarks, audits.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kprotect::audit::{breach_probability, verify_k_protection, InvocationTranscript};
use kprotect::harness::{self, ExperimentConfig};
use kprotect::mediator::{CompositionPlan, Mode};

#[derive(Parser)]
#[command(name = "kprotect", version, about = "k-protected federated query execution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Protected,
    Unprotected,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate DS1/DS2/DS3 event logs for every size.
    GenData {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated subject counts.
        #[arg(long, value_delimiter = ',', default_value = "5000,10000,20000,40000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        cities: usize,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Execute a plan once and write results, transcript and metrics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plan file; the DS1 -> DS2 -> DS3 chain when omitted.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Protected)]
        mode: ModeArg,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep sizes, protection widths and optimizations; write metrics CSV.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Recount a transcript against store snapshots. Exits non-zero on failure.
    Audit {
        #[arg(long)]
        transcript: PathBuf,
        /// Data directory holding `<service>.log` files and `meta.txt`.
        #[arg(long)]
        stores: PathBuf,
    },
    /// Print 1/(alpha k)^2.
    BreachProb {
        #[arg(long)]
        alpha: usize,
        #[arg(long)]
        k: usize,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::GenData {
            seed,
            sizes,
            cities,
            out,
        } => {
            for dir in harness::gen_data(seed, &sizes, cities, &out)? {
                println!("wrote {}", dir.display());
            }
        }
        Cmd::Run {
            config,
            plan,
            mode,
            out,
        } => {
            let config = load_config(config.as_ref())?;
            let plan = match plan {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    Some(CompositionPlan::parse(&text).with_context(|| format!("plan {}", p.display()))?)
                }
                None => None,
            };
            let mode = match mode {
                ModeArg::Protected => Mode::Protected,
                ModeArg::Unprotected => Mode::Unprotected,
            };
            let r = harness::run(&config, plan.as_ref(), mode, &out)?;
            println!(
                "{} rows, {} selectivity queries, {} invocations, {} reused ranges, {:.1} ms -> {}",
                r.row.result_rows,
                r.row.selectivity_queries,
                r.row.invocations,
                r.row.reused_ranges,
                r.row.wall_time_ms,
                out.display()
            );
        }
        Cmd::Bench { config, out } => {
            let config = load_config(config.as_ref())?;
            let rows = harness::bench(&config)?;
            harness::write_metrics(&rows, BufWriter::new(File::create(&out)?))?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
        Cmd::Audit { transcript, stores } => {
            let file = File::open(&transcript).with_context(|| format!("opening {}", transcript.display()))?;
            let t = InvocationTranscript::read_ndjson(BufReader::new(file))?;
            let plan = CompositionPlan::parse(&t.header.plan).context("plan embedded in transcript")?;
            let stores = harness::load_stores(&stores)?;
            let report = verify_k_protection(&t, &stores, &plan)?;
            print!("{report}");
            return Ok(if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Cmd::BreachProb { alpha, k } => {
            anyhow::ensure!(alpha >= 1 && k >= 1, "alpha and k must be at least 1");
            println!("{}", breach_probability(alpha, k));
        }
    }
    Ok(ExitCode::SUCCESS)
}
