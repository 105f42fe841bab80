//! Two small programs for the dense interior-point solver.

use risopt::conic::{solve, Affine, ConicProgram, Objective};

fn main() -> risopt::Result<()> {
    // maximize log2(1 + x), 0 ≤ x ≤ 3
    let mut p = ConicProgram::new(1, Objective::sum_log2_one_plus(&[0], 1.0));
    p.set_bounds(0, 0.0, 3.0);
    let s = solve(&p, None, 1e-10)?;
    println!("log toy: x = {:.10}, objective {:.10}", s.x[0], s.status.objective);

    // maximize t subject to t² ≤ x y, x ≤ 2, y ≤ 8
    let mut p = ConicProgram::new(3, Objective::linear(vec![(0, 1.0)]));
    p.set_bounds(1, 0.0, 2.0);
    p.set_bounds(2, 0.0, 8.0);
    p.add_hyperbolic("cone", Affine::var(0), Affine::var(1), Affine::var(2));
    let s = solve(&p, None, 1e-10)?;
    println!("cone toy: t = {:.10} after {} Newton steps", s.x[0], s.status.iterations);
    println!("{}", p.to_text());
    Ok(())
}
