//! Runs every out-of-core mode on real data and compares with the in-core reference.

use ooc_stencil::pipeline::{run, Mode, RunConfig};
use ooc_stencil::{CodecSpec, GridSpec, Initializer, OpKind};

fn main() -> ooc_stencil::Result<()> {
    let base = RunConfig {
        grid: GridSpec::cubic(64, 4)?,
        chunks: 4,
        tb_steps: 2,
        steps: 8,
        init: Initializer::Random { seed: 11 },
        ..RunConfig::default()
    };
    let cases = [
        (Mode::OocBaseline, CodecSpec::Identity),
        (Mode::OocCompress, CodecSpec::Identity),
        (Mode::OocCompressSwb, CodecSpec::Identity),
        (Mode::OocCompressSwb, CodecSpec::Truncate),
    ];
    for (mode, codec) in cases {
        let report = run(&RunConfig { mode, codec, ..base.clone() })?.report;
        let h2d = report.category_bytes.get(&OpKind::H2D).copied().unwrap_or(0);
        println!(
            "{:<18} {:<9} wall {:>7.3}s  h2d {:>10} B  units {:>5.2}  max err {:.3e}",
            mode.as_str(),
            report.codec,
            report.makespan_s,
            h2d,
            report.memory.as_ref().map_or(0.0, |m| m.peak_units),
            report.max_abs_err.unwrap_or(f64::NAN),
        );
    }
    Ok(())
}
