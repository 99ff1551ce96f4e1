//! Dense vs block-structured vs COO products on random square inputs.
//!
//!     cargo run --release --example spmm_bench

use blockprune::sparse::{bench_spmm, bench_table_csv};

fn main() -> blockprune::Result<()> {
    let rows = bench_spmm(&[128, 256], &[0.5, 0.8], 3, 42)?;
    print!("{}", bench_table_csv(&rows, 42));
    Ok(())
}
