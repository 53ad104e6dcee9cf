// Runs the finite-difference suite over every primitive, the composite
// layer and the full backbone.
use std::time::Instant;

use ragcn::harness::run_gradient_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let start = Instant::now();
    let cases = run_gradient_suite(seed)?;
    for c in &cases {
        println!("{c}");
    }
    let failed = cases.iter().filter(|c| !c.passed).count();
    println!(
        "{} cases, {failed} failed, {:.1}s",
        cases.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
