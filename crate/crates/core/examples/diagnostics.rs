//! Split R-hat and ESS on a short fit, plus the same diagnostics on two chains
//! deliberately started in different places.
//!
//!     cargo run --release --example diagnostics

use sentiment_ssm::diagnostics::{diagnose, effective_sample_size, split_rhat};
use sentiment_ssm::pipeline::{fit, simulate};
use sentiment_ssm::synth::SynthConfig;
use sentiment_ssm::{RunConfig, Variant};

fn main() -> sentiment_ssm::Result<()> {
    let sim = simulate(&SynthConfig::default(), 42, false)?;
    let run = RunConfig { iterations: 6_000, burn_in: 1_500, ..RunConfig::default() };
    let draws = fit(&sim.panel, Variant::Hierarchical, &run)?;
    let report = diagnose(&draws, &[])?;
    println!(
        "{} chains x {} draws: max R-hat {:.4}, min ESS {:.0}, flagged {:?}",
        report.chains, report.draws_per_chain, report.max_rhat, report.min_ess, report.flagged
    );
    for s in report.scalars.iter().take(8) {
        println!("  {:<16} R-hat {:.4}  ESS {:>7.0}", s.name, s.rhat, s.ess_bulk);
    }

    // Two chains centred far apart never mix.
    let a: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 0.1).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
    let stuck = vec![a, b];
    println!("separated chains: R-hat {:?}, ESS {:?}", split_rhat(&stuck)?, effective_sample_size(&stuck)?);
    Ok(())
}
