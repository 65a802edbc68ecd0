//! Fit the heteroscedastic and homoscedastic models to the same panel and
//! regress 90% interval widths on 1/sqrt(n).
//!
//!     cargo run --release --example width_regression

use sentiment_ssm::pipeline::{fit, run_validation, simulate};
use sentiment_ssm::synth::{NLaw, SynthConfig};
use sentiment_ssm::validation::marginal_effects;
use sentiment_ssm::{RunConfig, Variant};

fn main() -> sentiment_ssm::Result<()> {
    let cfg = SynthConfig { n_law: NLaw::LogNormal { mean: 15.0, cv: 1.5 }, ..SynthConfig::default() };
    let sim = simulate(&cfg, 5, false)?;
    let run = RunConfig::default();
    let het = fit(&sim.panel, Variant::Hierarchical, &run)?;
    let hom = fit(&sim.panel, Variant::HomoscedasticHierarchical, &run)?;
    let res = run_validation(&het, &hom, &sim.panel)?;

    println!("{:<26} {:>10} {:>10} {:>9} {:>10}", "term", "estimate", "std.err", "t", "p");
    for t in &res.terms {
        println!("{:<26} {:>10.5} {:>10.5} {:>9.2} {:>10.2e}", t.name, t.estimate, t.std_error, t.t_value, t.p_value);
    }
    let (het_slope, hom_slope) = marginal_effects(&res)?;
    println!("N = {}, adj R^2 = {:.3}", res.n_obs, res.adj_r2);
    println!("width slope: heteroscedastic {het_slope:.4}, homoscedastic {hom_slope:.4}");
    Ok(())
}
