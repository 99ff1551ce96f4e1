//! Threshold and percentile pruning of a single matrix.
//!
//!     cargo run --example prune_matrix

use blockprune::pruner::{compression_rate, prune_percentile, prune_threshold};
use blockprune::regularizer::{group_norms, make_partition};
use blockprune::{Axis, Matrix, Rng};

fn print(m: &Matrix) {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:6.2}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> blockprune::Result<()> {
    let w = Matrix::random_normal(4, 8, 1.0, &mut Rng::new(11));
    let part = make_partition(4, 8, Axis::Column, 2)?;
    println!("segment norms (column groups x blocks):");
    print(&group_norms(&w, &part)?.transpose());

    let (p, mask) = prune_threshold(&w, &part, 1.2)?;
    println!("threshold 1.2 -> sparsity {:.3}, compression {:.3}", mask.sparsity(), compression_rate(&mask)?);
    print(&p);

    let (p, mask) = prune_percentile(&w, &part, 0.75)?;
    println!("percentile 0.75 -> sparsity {:.3}, compression {:.3}", mask.sparsity(), compression_rate(&mask)?);
    print(&p);
    Ok(())
}
