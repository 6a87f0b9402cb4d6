//! Simulates the 1152³ configuration under the committed cost profile.

use std::path::Path;

use ooc_stencil::cli::{resolve, Settings};
use ooc_stencil::trace::speedup_model;

fn main() -> ooc_stencil::Result<()> {
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/calibration_1152.json");
    let config = resolve(Some(&profile), &Settings::default())?;
    let p = speedup_model(&config.cost, &config)?;
    println!(
        "baseline   {:>8.3}s  transfer {:>7.3}s  kernel {:>7.3}s  {}",
        p.baseline_makespan, p.baseline.transfer_total, p.baseline.kernel_total, p.baseline.label
    );
    println!(
        "swb        {:>8.3}s  transfer {:>7.3}s  kernel {:>7.3}s  {}",
        p.swb_makespan, p.swb.transfer_total, p.swb.kernel_total, p.swb.label
    );
    println!("speedup    {:.3}x", p.ratio);
    Ok(())
}
