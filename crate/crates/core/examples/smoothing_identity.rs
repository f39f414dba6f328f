//! Monte Carlo check of `E[xᵀQx] = x̂ᵀQx̂ + tr(QΣ)` for `x ~ N(x̂, Σ)`.

use dualrl::objective::mc_expected_quadratic;
use dualrl::sim::init_rng;
use nalgebra::{DMatrix, DVector};

fn main() -> dualrl::Result<()> {
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5]);
    let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.4, 0.8, 0.0, -0.3, 0.2, 0.6]);
    let cov = &l * l.transpose();
    let exact = (mean.transpose() * &q * &mean)[(0, 0)] + (&q * &cov).trace();
    let mut rng = init_rng(5);
    for n in [1_000, 10_000, 100_000, 1_000_000] {
        let mc = mc_expected_quadratic(&q, &mean, &cov, n, &mut rng)?;
        println!("{n:>8} samples  mc {mc:>9.5}  exact {exact:>9.5}  rel gap {:.2e}", (mc - exact).abs() / exact);
    }
    Ok(())
}
