//! Simulate the default recovery fixture, fit the hierarchical model, and
//! compare posterior means and 90% intervals with the truth.
//!
//!     cargo run --release --example fit_synthetic -- [iterations]

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentiment_ssm::diagnostics::diagnose;
use sentiment_ssm::model::ParamKind;
use sentiment_ssm::stats::quantiles;
use sentiment_ssm::synth::{generate_panel, SynthConfig};
use sentiment_ssm::{run_chains, ModelSpec, RunConfig, Variant};

fn main() -> sentiment_ssm::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let cfg = SynthConfig::default();
    let sim = generate_panel(&cfg, &mut ChaCha8Rng::seed_from_u64(2024))?;
    let spec = ModelSpec::for_panel(Variant::Hierarchical, &sim.panel)?;
    let run = RunConfig {
        iterations,
        burn_in: iterations / 4,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let draws = run_chains(&sim.panel, &spec, &run)?;
    println!("{} chains x {} draws in {:.1?}", draws.chains.len(), run.retained_per_chain(), start.elapsed());

    let truth = cfg.true_params();
    let mut covered = 0;
    println!("{:<14} {:>9} {:>9} {:>9} {:>9}", "parameter", "truth", "mean", "q05", "q95");
    for kind in ParamKind::ALL {
        for j in 0..cfg.n_categories() {
            let name = format!("{}[{}]", kind.name(), j + 1);
            let v: Vec<f64> = draws.scalar(&name)?.concat();
            let q = quantiles(&v, &[0.05, 0.95]);
            let t = truth.natural(kind, j);
            covered += usize::from(q[0] <= t && t <= q[1]);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            println!("{name:<14} {t:>9.4} {mean:>9.4} {:>9.4} {:>9.4}", q[0], q[1]);
        }
    }
    println!("90% intervals cover {covered} of {} true values", 4 * cfg.n_categories());
    let report = diagnose(&draws, &[])?;
    println!("max split R-hat {:.4}, min ESS {:.0}", report.max_rhat, report.min_ess);
    for a in &draws.chains[0].acceptance {
        println!("chain 0 {:<22} accept {:.2} step {:.3}", a.name, a.rate, a.step);
    }
    Ok(())
}
