//! Command-line surface: `rank-test`, `scree`, `simulate`, and `bench`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::bench::{run_scenario, ScenarioFile};
use crate::bootstrap::{BootstrapConfig, MRuleScale};
use crate::error::{Error, Result};
use crate::fit::{scree_sequence, FitOptions};
use crate::io::{load_dataset, save_dataset, write_report, ReportFile};
use crate::rank::{choose_d, sequential_rank_test};
use crate::sim::{generate_model, ModelSpec, NoiseSpec};

#[derive(Debug, Parser)]
#[command(
    name = "covrank",
    version,
    about = "Covariance rank inference for noisy functional data"
)]
struct Cli {
    /// Worker threads for bootstrap replicates and benchmark repetitions
    /// (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stepwise bootstrap rank test on a CSV dataset.
    RankTest(RankTestArgs),
    /// Off-diagonal scree sequence (q, T_q, T_q - T_(q-1)) as CSV.
    Scree(ScreeArgs),
    /// Generate a dataset from a named simulation model.
    Simulate(SimulateArgs),
    /// Run a benchmark scenario and tabulate the selected ranks.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct RankTestArgs {
    /// Input dataset (CSV; optional first row of grid nodes).
    data: PathBuf,
    /// Significance level of each local test.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Hypothesis boundary; defaults to floor((L - 1) / 2).
    #[arg(long)]
    d: Option<usize>,
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 500)]
    replicates: usize,
    /// Constant in the noise-rank threshold, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Scale convention for the noise-rank threshold: "offdiag" (relative to
    /// the off-diagonal mass; suits low-rank signals with a visible scree
    /// elbow) or "unit" (absolute; suits smooth spectra with no elbow, where
    /// the reference rank should reach d).
    #[arg(long, default_value = "offdiag")]
    m_scale: String,
    /// Average the estimated noise variances over the grid.
    #[arg(long)]
    homoskedastic: bool,
    /// Use the uncentered empirical covariance (data with known zero mean).
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination (JSON).
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScreeArgs {
    data: PathBuf,
    /// Largest rank to fit; defaults to floor((L - 1) / 2).
    #[arg(long)]
    qmax: Option<usize>,
    #[arg(long)]
    no_center: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model name: A1..A5, S1..S5, SF1..SF3, I1..I4.
    #[arg(long)]
    model: String,
    /// Subjects.
    #[arg(long)]
    n: usize,
    /// Grid size.
    #[arg(long = "L")]
    grid_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise override: "blocked" applies the five-block averaged profile.
    #[arg(long)]
    noise: Option<String>,
    /// Output CSV (grid nodes written as the header row).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Scenario description (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the repetition count from the file.
    #[arg(long)]
    reps: Option<usize>,
    /// Frequency table destination (CSV); a JSON sidecar with per-repetition
    /// records is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the same path
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    if let Some(threads) = cli.threads {
        // A later global-pool initialization loses to an earlier one (e.g. in
        // tests); the run stays correct either way.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) | Error::Dim(_) => 1,
                Error::Data(_) | Error::Io(_) => 2,
                Error::Numerical(_) => 3,
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::RankTest(args) => rank_test(args),
        Command::Scree(args) => scree(args),
        Command::Simulate(args) => simulate(args),
        Command::Bench(args) => bench(args),
    }
}

fn rank_test(args: RankTestArgs) -> Result<()> {
    let sample = load_dataset(&args.data)?;
    let (d, warn) = choose_d(sample.grid_len(), None, args.d)?;
    if let Some(w) = &warn {
        eprintln!("warning: {w}");
    }
    let mut cfg = BootstrapConfig::new(d).with_seed(args.seed);
    cfg.replicates = args.replicates;
    cfg.epsilon = args.epsilon;
    cfg.m_rule_scale = match args.m_scale.as_str() {
        "offdiag" => MRuleScale::OffdiagNormSq,
        "unit" => MRuleScale::Unit,
        other => {
            return Err(Error::Invalid(format!(
                "unknown --m-scale '{other}' (expected 'offdiag' or 'unit')"
            )))
        }
    };
    cfg.homoskedastic = args.homoskedastic;
    cfg.center = !args.no_center;

    let start = Instant::now();
    let mut report = sequential_rank_test(&sample, args.alpha, &cfg)?;
    if let Some(w) = warn {
        report.warnings.push(w);
    }
    let elapsed = start.elapsed().as_secs_f64();

    for rec in &report.per_q {
        match rec.p_value {
            Some(p) => println!("q = {:2}  T_q = {:.6e}  p = {:.4}", rec.q, rec.statistic, p),
            None => println!("q = {:2}  T_q = {:.6e}  (not tested)", rec.q, rec.statistic),
        }
    }
    match report.r_hat {
        Some(r) => println!("selected rank: {r}"),
        None => println!(
            "all ranks up to d = {} rejected: the data are not rank-{}-or-less",
            report.d, report.d
        ),
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let file = ReportFile::new(report, args.seed, elapsed);
    write_report(&file, &args.out)?;
    println!("report written to {}", args.out.display());
    Ok(())
}

fn scree(args: ScreeArgs) -> Result<()> {
    let sample = load_dataset(&args.data)?;
    let bound = (sample.grid_len() - 1) / 2;
    let qmax = match args.qmax {
        None => bound.max(1),
        Some(q) if q < 1 => {
            return Err(Error::Invalid("qmax must be at least 1".into()));
        }
        Some(q) if q > bound => {
            eprintln!(
                "warning: qmax = {q} exceeds the recommended bound (L - 1) / 2 = {bound}; clamped"
            );
            bound.max(1)
        }
        Some(q) => q,
    };
    let k_hat = sample.covariance(!args.no_center)?;
    let seq = scree_sequence(&k_hat, qmax, &FitOptions::default().with_seed(args.seed))?;
    let mut csv = String::from("q,T_q,delta\n");
    for row in &seq.rows {
        csv.push_str(&format!("{},{},{}\n", row.q, row.statistic, row.delta));
    }
    match args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = ModelSpec::named(&args.model)?;
    if let Some(noise) = &args.noise {
        match noise.as_str() {
            "blocked" => spec = spec.with_noise(NoiseSpec::Blocked),
            "default" => {}
            other => {
                return Err(Error::Invalid(format!(
                    "unknown noise override '{other}' (expected 'blocked' or 'default')"
                )))
            }
        }
    }
    let (sample, _) = generate_model(&spec, args.n, args.grid_len, args.seed)?;
    save_dataset(&sample, &args.out)?;
    println!(
        "wrote {} x {} dataset from model {} to {}",
        sample.n(),
        sample.grid_len(),
        spec.name,
        args.out.display()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.scenario).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", args.scenario.display()))
    })?;
    let (mut cfg, warnings) = ScenarioFile::parse(&text)?.resolve()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }

    let start = Instant::now();
    let result = run_scenario(&cfg)?;
    let elapsed = start.elapsed().as_secs_f64();

    let csv = result.to_csv();
    print!("{csv}");
    if let Some(out) = &args.out {
        std::fs::write(out, &csv)?;
        let sidecar = out.with_extension("meta.json");
        let meta = serde_json::json!({
            "tool_version": env!("CARGO_PKG_VERSION"),
            "wall_clock_secs": elapsed,
            "warnings": warnings,
            "config": result.config,
            "records": result.records,
        });
        std::fs::write(
            &sidecar,
            serde_json::to_string_pretty(&meta)
                .map_err(|e| Error::Data(format!("cannot serialize metadata: {e}")))?,
        )?;
        println!("table written to {}, metadata to {}", out.display(), sidecar.display());
    }
    Ok(())
}
