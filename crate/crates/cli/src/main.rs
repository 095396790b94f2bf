//! Command-line interface for the query-complexity lab: instance
//! generation, displacement certification, experiment campaigns, and
//! reporting.

mod config;
mod experiments;

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qclab::fixpoint::{build_path_function, certify_displacement};
use qclab::games::{ExplicitGame, Game};
use qclab::paths::{cut_cycles, random_walk, SimplePath};

use config::{ExperimentConfig, ExperimentKind};

/// Worker-count override for parallel trials.
const WORKERS_ENV: &str = "QCLAB_WORKERS";

#[derive(Parser)]
#[command(
    name = "qclab",
    version,
    about = "query-complexity lab for games, maps, and paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file: a simple hypercube path or an explicit game.
    Generate(GenerateArgs),
    /// Certify the displacement floor of a path-following map.
    Certify(CertifyArgs),
    /// Run an experiment campaign into a records directory.
    Run(RunArgs),
    /// Summarize a campaign's records into CSV and JSON tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Instance kind: `path` (cycle-cut random walk) or `game` (random
    /// explicit game with binary payoffs).
    #[arg(long, default_value = "path")]
    kind: String,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Walk length before cycle cutting (path) or actions per player (game).
    #[arg(long, default_value_t = 4096)]
    len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    /// Path instance file; omit to generate one from `--n`/`--seed`.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Walk length before cycle cutting when generating.
    #[arg(long, default_value_t = 64)]
    len: usize,
    /// Scan subdivisions per 1/6 cell; the lattice pitch is 1/(6 per-cell).
    #[arg(long, default_value_t = 20)]
    per_cell: usize,
    /// Certificate output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// chain-e2e | htp | walk-cycles | sampling | dynamics | certify
    #[arg(long)]
    kind: Option<String>,
    /// Flat key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dimension, or inclusive range `lo..hi`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    walk_len: Option<usize>,
    #[arg(long)]
    per_cell: Option<usize>,
    #[arg(long)]
    k_cap: Option<usize>,
    /// Campaign directory (append-only; holds manifest.txt + records.csv).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Campaign directory or records.csv file.
    #[arg(long)]
    records: PathBuf,
    /// Output directory for summary.csv / summary.json (defaults to the
    /// campaign directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Certify(args) => certify(args),
        Command::Run(args) => run(args),
        Command::Report(args) => report(args),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    match args.kind.as_str() {
        "path" => {
            let path = cut_cycles(&random_walk(args.n, args.len, args.seed));
            fs::write(&args.out, path.to_text())
                .with_context(|| format!("writing {}", args.out.display()))?;
            println!(
                "path n={} L={} -> {}",
                args.n,
                path.len(),
                args.out.display()
            );
        }
        "game" => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            let game = ExplicitGame::from_fn(vec![args.len; args.n], |_| {
                (0..args.n)
                    .map(|_| f64::from(rng.gen_range(0..=1u8)))
                    .collect()
            })?;
            fs::write(&args.out, game.to_text())
                .with_context(|| format!("writing {}", args.out.display()))?;
            println!(
                "game n={} m={} profiles={} -> {}",
                args.n,
                args.len,
                game.num_profiles(),
                args.out.display()
            );
        }
        other => bail!("unknown instance kind `{other}` (expected path|game)"),
    }
    Ok(())
}

fn certify(args: CertifyArgs) -> Result<()> {
    let path = match &args.path {
        Some(file) => {
            let text =
                fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            SimplePath::from_text(&text)?
        }
        None => cut_cycles(&random_walk(args.n, args.len, args.seed)),
    };
    let f = build_path_function(&path)?;
    let cert = certify_displacement(&f, args.per_cell)?;
    let text = cert.to_text();
    match &args.out {
        Some(file) => {
            fs::write(file, &text).with_context(|| format!("writing {}", file.display()))?;
            println!(
                "certified n={} lambda_star={:.4} eps_star={:.6} -> {}",
                cert.n,
                cert.lambda_star,
                cert.eps_star,
                file.display()
            );
        }
        None => print!("{text}"),
    }
    if cert.eps_star <= 0.0 {
        bail!("certification failed: eps_star = {} <= 0", cert.eps_star);
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(file) => {
            let text =
                fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
            ExperimentConfig::from_flat_text(&text)?
        }
        None => ExperimentConfig {
            kind: ExperimentKind::WalkCycles,
            n_lo: 2,
            n_hi: 2,
            trials: 1,
            seed: 0,
            eps: 0.05,
            delta: 0.2,
            steps: 16,
            walk_len: 65536,
            per_cell: 20,
            k_cap: 32,
        },
    };
    if let Some(kind) = &args.kind {
        config.kind = ExperimentKind::parse(kind)?;
    } else if args.config.is_none() {
        bail!("either --kind or --config is required");
    }
    if let Some(n) = &args.n {
        let (lo, hi) = match n.split_once("..") {
            Some((lo, hi)) => (lo.parse()?, hi.parse()?),
            None => {
                let v: usize = n.parse()?;
                (v, v)
            }
        };
        config.n_lo = lo;
        config.n_hi = hi;
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.eps {
        config.eps = v;
    }
    if let Some(v) = args.delta {
        config.delta = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.walk_len {
        config.walk_len = v;
    }
    if let Some(v) = args.per_cell {
        config.per_cell = v;
    }
    if let Some(v) = args.k_cap {
        config.k_cap = v;
    }
    config.validate()?;

    if let Ok(workers) = std::env::var(WORKERS_ENV) {
        let workers: usize = workers.parse().context("parsing QCLAB_WORKERS")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .ok();
    }

    config::prepare_campaign_dir(&args.out, &config)?;
    let records = experiments::run_experiment(&config)?;
    config::append_records(&args.out, &records)?;

    let rows = experiments::summarize_records(&records);
    print_summary(&rows);
    let failures = records.iter().filter(|r| !r.success).count();
    println!(
        "{} records appended to {} ({} failures)",
        records.len(),
        args.out.join("records.csv").display(),
        failures
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let records = config::read_records(&args.records)?;
    if records.is_empty() {
        bail!("no records found under {}", args.records.display());
    }
    let rows = experiments::summarize_records(&records);
    print_summary(&rows);

    let out_dir = args.out.clone().unwrap_or_else(|| {
        if args.records.is_dir() {
            args.records.clone()
        } else {
            args.records
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."))
        }
    });
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("summary.csv"), experiments::summary_csv(&rows))?;
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&rows)?,
    )?;
    println!("summaries written to {}", out_dir.display());
    Ok(())
}

fn print_summary(rows: &[experiments::SummaryRow]) {
    println!(
        "{:>4} {:>7} {:>9} {:>12} {:>9} {:>9} {:>12} {:>12}",
        "n", "trials", "success", "mean_q", "p50_q", "p90_q", "lambda*", "eps*"
    );
    for row in rows {
        println!(
            "{:>4} {:>7} {:>9.4} {:>12.2} {:>9} {:>9} {:>12} {:>12}",
            row.n,
            row.trials,
            row.success_fraction,
            row.queries_mean,
            row.queries_p50,
            row.queries_p90,
            row.lambda_star_mean
                .map(|v| format!("{v:.3}"))
                .unwrap_or_default(),
            row.eps_star_mean
                .map(|v| format!("{v:.4}"))
                .unwrap_or_default(),
        );
    }
}
