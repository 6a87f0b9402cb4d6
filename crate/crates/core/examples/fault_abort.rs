//! Injects a device fault mid-sweep and shows that host data is never torn.

use ooc_stencil::pipeline::{FaultInjection, Pipeline, RunConfig};
use ooc_stencil::OpKind;

fn main() -> ooc_stencil::Result<()> {
    let config = RunConfig {
        fault: Some(FaultInjection { sweep: 1, chunk: 2, op: OpKind::Compute }),
        ..RunConfig::default()
    };
    let mut p = Pipeline::new(config)?;
    p.run_sweep()?;
    let before = p.host_state().cloned().expect("real backend");
    match p.run_sweep() {
        Ok(()) => println!("sweep finished without the fault"),
        Err(e) => println!("sweep aborted: {e}"),
    }
    let after = p.host_state().expect("state survives an abort");
    for c in &p.plan().chunks {
        let same = after.curr.planes(c.owned) == before.curr.planes(c.owned);
        println!("chunk {} owned {}: {}", c.index, c.owned, if same { "untouched" } else { "written back" });
    }
    Ok(())
}
