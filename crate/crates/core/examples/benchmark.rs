//! Runs the synthetic benchmark once and prints the comparison table.
//!
//! cargo run --release --example benchmark

use std::time::Instant;

use yieldfill::data::{generate_synthetic, SyntheticConfig};
use yieldfill::pipeline::{run_benchmark, BenchmarkConfig};

fn main() -> yieldfill::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::default())?;
    let start = Instant::now();
    let out = run_benchmark(&ds, &BenchmarkConfig::default())?;
    print!("{}", out.report.to_text());
    println!(
        "untrained MAE bps: fcnn {:.2}, cnn {:.2}",
        out.untrained_fcnn.mae_bps, out.untrained_cnn.mae_bps
    );
    println!(
        "best epochs: fcnn {} of {}, cnn {} of {}",
        out.fcnn.best_epoch,
        out.fcnn.history.len(),
        out.cnn.best_epoch,
        out.cnn.history.len()
    );
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
