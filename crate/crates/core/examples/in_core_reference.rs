//! Runs the whole-grid reference solver and prints the checksum after each sweep.

use ooc_stencil::stencil::{coefficients_8th_order, Initializer, DEFAULT_CFL};
use ooc_stencil::GridSpec;

fn main() -> ooc_stencil::Result<()> {
    let grid = GridSpec::cubic(48, 4)?;
    let c = coefficients_8th_order();
    println!("axis coefficients {:?}", c.axis);

    let mut state = Initializer::default().build(&grid);
    let coeffs = c.with_cfl(DEFAULT_CFL, state.max_velocity());
    for sweep in 0..6 {
        state.advance(&coeffs, 4)?;
        let sum = state.checksum();
        println!("step {:>2}: sum {:+.12e} sum_sq {:.12e}", 4 * (sweep + 1), sum.sum, sum.sum_sq);
    }
    Ok(())
}
