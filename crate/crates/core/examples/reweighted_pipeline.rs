//! Full run on the shipped default config: dense baseline, reweighted
//! training, pruning, masked retraining. Takes a few seconds in release.
//!
//!     cargo run --release --example reweighted_pipeline [config.toml]

use std::path::PathBuf;

use blockprune::config::Config;
use blockprune::trainer::run_pipeline;

fn main() -> blockprune::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml"));
    let cfg = Config::load(&path)?;
    let out = run_pipeline(&cfg.pipeline)?;

    println!("pretrained accuracy {:.4}", out.pretrained_accuracy);
    println!("final accuracy      {:.4}", out.final_accuracy);
    println!("compression         {:.3} (prunable) {:.3} (all)", out.compression.prunable_rate, out.compression.all_rate);
    for m in &out.masks.masks {
        println!("  {:<8} sparsity {:.3}", m.layer_name, m.sparsity());
    }
    for g in &out.gamma_history {
        println!("  gamma refresh at step {}", g.step);
    }
    println!("wall clock {:.2}s", out.wall_clock.as_secs_f64());
    Ok(())
}
