//! Filter and smooth one simulated category at known parameters, then show
//! how the heteroscedastic observation noise changes the smoothed band.
//!
//!     cargo run --example kalman_smoothing

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentiment_ssm::kalman::{ffbs_sample, kalman_filter, rts_smoother};
use sentiment_ssm::model::CategoryParams;
use sentiment_ssm::synth::{generate_panel, NLaw, SynthConfig};
use sentiment_ssm::Variant;

fn main() -> sentiment_ssm::Result<()> {
    let cfg = SynthConfig {
        categories: vec!["demo".into()],
        windows: 30,
        theta: vec![0.85],
        mu: vec![0.1],
        sigma_eta: vec![0.05],
        sigma: vec![0.25],
        n_law: NLaw::Seasonal { base: 8.0, amplitude: 0.9, period: 10.0 },
        ..SynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sim = generate_panel(&cfg, &mut rng)?;
    let (y, n) = (sim.panel.y_col(0), sim.panel.n_col(0));
    let p = CategoryParams { theta: 0.85, mu: 0.1, sigma_eta: 0.05, sigma: 0.25 };

    let het = kalman_filter(y, n, p, Variant::Hierarchical)?;
    let hom = kalman_filter(y, n, p, Variant::HomoscedasticHierarchical)?;
    println!("log-likelihood: heteroscedastic {:.3}, homoscedastic {:.3}", het.marginal_loglik, hom.marginal_loglik);

    let sh = rts_smoother(&het, p.theta);
    let so = rts_smoother(&hom, p.theta);
    let path = ffbs_sample(&het, p.theta, &mut rng);
    println!("{:>3} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8}", "t", "n", "y", "x", "sd_het", "sd_hom", "ffbs");
    for t in 0..y.len() {
        println!(
            "{:>3} {:>7.2} {:>+8.3} {:>+8.3} {:>8.4} {:>8.4} {:>+8.3}",
            t,
            n[t],
            y[t],
            sim.x[(t, 0)],
            sh.var[t].sqrt(),
            so.var[t].sqrt(),
            path[t]
        );
    }
    Ok(())
}
