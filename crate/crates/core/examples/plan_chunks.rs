//! Cuts a grid into z-slabs and prints owned planes, extents and transfer segments.
//!
//! cargo run --example plan_chunks -- [nz] [chunks] [tb_steps]

use ooc_stencil::domain::{coverage_check, plan_decomposition, GridSpec};

fn main() -> ooc_stencil::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let nz = args.first().copied().unwrap_or(1152);
    let n = args.get(1).copied().unwrap_or(8);
    let k = args.get(2).copied().unwrap_or(12);

    let grid = GridSpec::new(nz, nz, nz, 4)?;
    for sharing in [false, true] {
        let plan = plan_decomposition(&grid, n, k, sharing)?;
        println!("sharing={sharing} halo_depth={} planes/sweep={}", plan.halo_depth(), plan.transferred_planes());
        for c in &plan.chunks {
            let segs: Vec<String> = c.segments.iter().map(|s| format!("{:?}{}", s.role, s.planes)).collect();
            println!("  chunk {:>2} owned {} extent {} -> {}", c.index, c.owned, c.extent, segs.join(" "));
        }
        assert!(coverage_check(&plan).is_empty());
    }
    Ok(())
}
