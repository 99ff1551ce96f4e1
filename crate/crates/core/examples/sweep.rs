//! Runs the `blocks` sweep from the default config across worker threads.
//!
//!     cargo run --release --example sweep [sweep-name]

use std::path::Path;

use blockprune::config::Config;
use blockprune::experiments::sweep;

fn main() -> blockprune::Result<()> {
    let cfg = Config::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml"))?;
    let name = std::env::args().nth(1).unwrap_or_else(|| "blocks".into());
    let Some(spec) = cfg.sweeps.get(&name) else {
        eprintln!("unknown sweep `{name}`; have {:?}", cfg.sweeps.keys().collect::<Vec<_>>());
        std::process::exit(2);
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = sweep(spec, workers)?;
    print!("{}", table.to_csv());
    Ok(())
}
