//! Compares autodiff gradients of the unrolled multi-step loss against
//! central differences, in double precision.
//!
//!     cargo run --release --example grad_check

use e2eqr::cli::cmd_grad_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for steps in 1..=3 {
        let r = cmd_grad_check(steps, 200, 1e-4, 0, None)?;
        println!(
            "{steps} step(s): {} coordinates, max relative error {:.2e}, gradient norm of a step-1-only embedding row {:.2e}",
            r.samples, r.max_rel_error, r.step1_only_grad_norm
        );
    }
    Ok(())
}
