//! Where the example plant's measurement carries information about `x₁`.
//!
//! The output is a saturated cubic of the first state, so its slope vanishes
//! for negative `x₁` and the filter learns nothing there.

use dualrl::model::example_plant;
use nalgebra::DVector;

fn main() -> dualrl::Result<()> {
    let plant = example_plant();
    println!("{:>6}  {:>12}  {:>12}", "x1", "h(x)", "dh/dx1");
    for i in -8..=8 {
        let x1 = 0.5 * i as f64;
        let x = DVector::from_vec(vec![x1, 0.0, 0.0]);
        let y = plant.observation(&x)?[0];
        let slope = plant.observation_jacobian(&x)?[(0, 0)];
        println!("{x1:>6.2}  {y:>12.5}  {slope:>12.5}");
    }
    Ok(())
}
