//! Replicate observations from a fit and report per-category interval
//! coverage, the mean p-value and the share of replicates outside [-1, 1].
//!
//!     cargo run --release --example posterior_predictive

use sentiment_ssm::pipeline::{fit, run_ppc, simulate};
use sentiment_ssm::synth::SynthConfig;
use sentiment_ssm::{RunConfig, Variant};

fn main() -> sentiment_ssm::Result<()> {
    let sim = simulate(&SynthConfig::default(), 42, false)?;
    let draws = fit(&sim.panel, Variant::Hierarchical, &RunConfig::default())?;
    let report = run_ppc(&draws, &sim.panel, 7)?;
    println!("{} replicates", report.replicates);
    println!("{:<8} {:>7} {:>7} {:>7} {:>9}", "category", "cov80", "cov95", "p_mean", "p_out");
    for c in &report.categories {
        println!("{:<8} {:>7.3} {:>7.3} {:>7.3} {:>9.2e}", c.category, c.cov80, c.cov95, c.p_mean, c.p_out);
    }
    Ok(())
}
