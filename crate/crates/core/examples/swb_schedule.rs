//! Lowers a three-chunk single-working-buffer schedule and prints each lane's actions.
//!
//! Pass `--dot` to print the dependency graph in Graphviz form instead.

use ooc_stencil::domain::{acoustic_datasets, plan_decomposition};
use ooc_stencil::scheduler::{build_dag, lower_to_lanes, topo_order, validate_exclusive, Action};
use ooc_stencil::{CodecSpec, GridSpec, ScheduleMode};

fn main() -> ooc_stencil::Result<()> {
    let grid = GridSpec::new(16, 16, 96, 4)?;
    let plan = plan_decomposition(&grid, 3, 2, false)?;
    let dag = build_dag(&plan, ScheduleMode::CompressSwb, &acoustic_datasets(), &CodecSpec::Truncate, 3)?;
    if std::env::args().any(|a| a == "--dot") {
        print!("{}", dag.to_dot());
        return Ok(());
    }
    let schedule = lower_to_lanes(&dag, &topo_order(&dag)?)?;
    for a in &schedule.actions {
        let what = match a.action {
            Action::Op { node } => schedule.nodes[node].label(),
            Action::Record { event } => format!("record {event}"),
            Action::Wait { event } => format!("wait {event}"),
        };
        println!("{:>8}  lane {}  {}", a.iteration.to_string(), a.lane, what);
    }
    println!("violations: {}", validate_exclusive(&schedule).len());
    Ok(())
}
