//! Storage cost of one pruned matrix under each format.
//!
//!     cargo run --example storage_arithmetic

use blockprune::pruner::prune_percentile;
use blockprune::regularizer::make_partition;
use blockprune::sparse::{comparator_tile, to_block_structured, to_coo, whole_block_prune, StorageCost};
use blockprune::{Axis, Matrix, Rng};

fn main() -> blockprune::Result<()> {
    let w = Matrix::random_normal(8, 8, 1.0, &mut Rng::new(7));
    // rows are groups, each split into 2 blocks of width 4; drop half the segments
    let part = make_partition(8, 8, Axis::Row, 2)?;
    let (pruned, mask) = prune_percentile(&w, &part, 0.5)?;

    let (tr, tc) = comparator_tile(&part);
    let reports = [
        w.storage_cost(),
        to_coo(&pruned).storage_cost(),
        whole_block_prune(&w, tr, tc, 0.5)?.storage_cost(),
        to_block_structured(&pruned, &mask)?.storage_cost(),
    ];
    for r in reports {
        println!("{r}");
    }
    println!("kept segments: {:?}", mask.retained_segments());
    Ok(())
}
