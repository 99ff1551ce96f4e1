//! Prunes each layer on its own and reports the accuracy that remains.
//!
//!     cargo run --release --example sensitivity

use std::path::Path;

use blockprune::config::Config;
use blockprune::experiments::sensitivity_scan;

fn main() -> blockprune::Result<()> {
    let cfg = Config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml"))?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = sensitivity_scan(&cfg.pipeline, 0.5, None, true, workers)?;
    for (row, acc) in table.rows.iter().zip(table.accuracies()) {
        match acc {
            Some(a) => println!("{:<10} {a:.4}", row.value.to_string()),
            None => println!("{:<10} failed", row.value.to_string()),
        }
    }
    Ok(())
}
