//! Analytic gradient of the reweighted penalty against central differences.
//!
//!     cargo run --example gradient_check

use blockprune::numerics::finite_diff_gradient;
use blockprune::regularizer::{gamma_update, make_partition, penalty, penalty_grad};
use blockprune::{Axis, Matrix, Rng};

fn main() -> blockprune::Result<()> {
    let mut rng = Rng::new(3);
    let w = Matrix::random_normal(6, 12, 1.0, &mut rng);
    let lambda = 0.1;
    for axis in [Axis::Row, Axis::Column] {
        let part = make_partition(6, 12, axis, 3)?;
        // gamma comes from a different matrix so it is not trivially 1/norm of w
        let gamma = gamma_update(&Matrix::random_normal(6, 12, 1.0, &mut rng), &part, 1e-6)?;
        let analytic = penalty_grad(&w, &part, &gamma, lambda)?;
        let numeric = finite_diff_gradient(|m| penalty(m, &part, &gamma, lambda).unwrap(), &w, 1e-6)?;
        let err = analytic.max_abs_diff(&numeric)?;
        println!("{:<6} penalty={:.6} max |analytic - numeric| = {err:.2e}", axis.as_str(), penalty(&w, &part, &gamma, lambda)?);
    }
    Ok(())
}
