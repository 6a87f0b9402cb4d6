//! Runs a small pipeline on real data and writes a Chrome trace-event file.
//!
//! cargo run --example export_trace -- out.json

use std::path::PathBuf;

use ooc_stencil::pipeline::{run, RunConfig};
use ooc_stencil::trace::{bottleneck, export_trace};

fn main() -> ooc_stencil::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ooc-stencil.trace.json"));
    let outcome = run(&RunConfig::default())?;
    export_trace(&outcome.trace, &path)?;
    let b = bottleneck(&outcome.trace);
    println!("{} events -> {}", outcome.trace.len(), path.display());
    println!("transfer {:.4}s kernel {:.4}s ({})", b.transfer_total, b.kernel_total, b.label);
    Ok(())
}
