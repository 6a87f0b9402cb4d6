//! Peak device memory of each mode in units of one full working buffer.

use ooc_stencil::pipeline::{Backend, Mode, Pipeline, RunConfig};
use ooc_stencil::trace::memory_comparison;
use ooc_stencil::{CodecSpec, Error, GridSpec};

fn main() -> ooc_stencil::Result<()> {
    let base = RunConfig {
        grid: GridSpec::cubic(1152, 4)?,
        chunks: 8,
        tb_steps: 12,
        steps: 12,
        backend: Backend::Simulated,
        ..RunConfig::default()
    };
    let mut rows = Vec::new();
    for (mode, codec) in [
        (Mode::OocBaseline, CodecSpec::Identity),
        (Mode::OocCompress, CodecSpec::Truncate),
        (Mode::OocCompressSwb, CodecSpec::Truncate),
        (Mode::OocCompressSwb, CodecSpec::block_quant(30)?),
    ] {
        let label = format!("{mode} {}", codec.name());
        match Pipeline::new(RunConfig { mode, codec, ..base.clone() }) {
            Ok(p) => rows.push((label, p.arena().memory_report(p.geometry().full_bytes))),
            Err(e @ Error::OutOfDeviceMemory { .. }) => println!("{label}: does not fit ({e})"),
            Err(e) => return Err(e),
        }
    }
    print!("{}", memory_comparison(&rows).to_table());
    for b in &rows[1].1.buffers {
        println!("  {:<28} {:>12} B  {:.2} units", b.name, b.bytes, b.units);
    }
    Ok(())
}
