//! Compares analytic gradients of the three-head loss with central finite
//! differences on a small random model.

use anyhow::Result;
use editor_core::model::{random_grad_check, small_grad_check_config, GradCheckOptions};

fn main() -> Result<()> {
    let cfg = small_grad_check_config();
    let opts = GradCheckOptions::default();
    for seed in 1..=5 {
        let report = random_grad_check(&cfg, seed, &opts)?;
        println!(
            "seed {seed}: {} entries, max relative error {:.2e}, {}",
            report.checked,
            report.max_rel_error,
            if report.passed() { "ok" } else { "FAILED" }
        );
    }

    // A deliberately wrong gradient must be caught.
    let bad = random_grad_check(&cfg, 1, &GradCheckOptions { corrupt: true, ..opts })?;
    println!("corrupted gradient detected: {}", !bad.passed());
    Ok(())
}
