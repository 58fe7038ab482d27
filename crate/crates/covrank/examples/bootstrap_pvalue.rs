//! Bootstrap calibration of one local rank hypothesis.
//!
//! Simulates a dataset from a named model, then tests a single candidate
//! rank `q` and prints the observed statistic, the bootstrap p-value, and a
//! sketch of the bootstrap distribution.
//!
//! ```bash
//! cargo run --release --example bootstrap_pvalue -- A1 150 25 3 200 7
//! ```
//!
//! Arguments (all optional, in order): model, n, L, q, B, seed.

use covrank::bootstrap::{bootstrap_pvalue, BootstrapConfig};
use covrank::rank::choose_d;
use covrank::sim::{generate_model, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = args.first().map(String::as_str).unwrap_or("A1");
    let n: usize = args.get(1).map_or(Ok(150), |s| s.parse())?;
    let grid_len: usize = args.get(2).map_or(Ok(25), |s| s.parse())?;
    let q: usize = args.get(3).map_or(Ok(3), |s| s.parse())?;
    let replicates: usize = args.get(4).map_or(Ok(200), |s| s.parse())?;
    let seed: u64 = args.get(5).map_or(Ok(7), |s| s.parse())?;

    let spec = ModelSpec::named(model)?;
    let (sample, truth) = generate_model(&spec, n, grid_len, seed)?;
    match truth.rank {
        Some(r) => println!("model {model}: true rank {r}, n = {n}, L = {grid_len}"),
        None => println!("model {model}: infinite rank, n = {n}, L = {grid_len}"),
    }

    let (d, _) = choose_d(grid_len, None, None)?;
    let mut cfg = BootstrapConfig::new(d).with_seed(seed);
    cfg.replicates = replicates;

    let outcome = bootstrap_pvalue(&sample, q, &cfg)?;
    println!("T_{q} = {:.6e}", outcome.statistic);
    println!("noise rank M = {}", outcome.noise.m_used);
    println!(
        "bootstrap p-value over B = {replicates} replicates: {:.4}",
        outcome.p_value
    );

    let mut sorted = outcome.boot_statistics.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |f: f64| sorted[(f * (sorted.len() - 1) as f64).round() as usize];
    println!(
        "bootstrap statistic quantiles: 5% {:.3e}  50% {:.3e}  95% {:.3e}",
        pick(0.05),
        pick(0.50),
        pick(0.95)
    );
    Ok(())
}
