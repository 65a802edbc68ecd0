//! Run every stage end to end into a directory, as `sentiment-ssm run` does.
//!
//!     cargo run --release --example full_pipeline -- [output_dir] [config.toml]

use sentiment_ssm::pipeline::{load_toml, run_pipeline, PipelineConfig};

fn main() -> sentiment_ssm::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "pipeline-output".into());
    let mut cfg = match args.next() {
        Some(p) => load_toml(p.as_ref())?,
        None => PipelineConfig::synthetic(&out, 42),
    };
    cfg.output_dir = out.into();
    let o = run_pipeline(&cfg)?;
    for v in &o.variants {
        println!("{}: max R-hat {:.4}, min ESS {:.0}", v.variant, v.diagnostics.max_rhat, v.diagnostics.min_ess);
    }
    if let Some(r) = &o.regression {
        println!("width regression: N = {}, adj R^2 = {:.3}", r.n_obs, r.adj_r2);
    }
    println!("{} artifacts under {}", o.artifacts.len(), cfg.output_dir.display());
    Ok(())
}
