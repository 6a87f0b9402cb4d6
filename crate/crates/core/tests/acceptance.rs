//! One PASS/FAIL line per acceptance criterion.

mod common;

use std::path::Path;

use ooc_stencil::cli::{resolve, Settings};
use ooc_stencil::codec::{decode, encode, encoded_size, BLOCK_VALUES};
use ooc_stencil::domain::{acoustic_datasets, plan_decomposition};
use ooc_stencil::pipeline::{run, Backend, Mode, Pipeline, RunConfig};
use ooc_stencil::scheduler::{schedule, validate_exclusive, validate_exclusive_trace, Action, LoweredSchedule};
use ooc_stencil::stencil::run_in_core;
use ooc_stencil::trace::{memory_comparison, speedup_model, BottleneckLabel, TraceEvent};
use ooc_stencil::{CodecSpec, GridSpec, Initializer, OpKind, ScheduleMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const R: usize = 4;
const OOC_MODES: [Mode; 3] = [Mode::OocBaseline, Mode::OocCompress, Mode::OocCompressSwb];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Smallest z-extent whose even split gives every chunk room for a shared overlap.
fn grid_for(n: usize, k: usize) -> GridSpec {
    GridSpec::new(16, 16, n * 2 * k * R + (n - 1), R).unwrap()
}

fn equivalence(traces: &mut Vec<Vec<TraceEvent>>) -> Outcome {
    let mut runs = 0;
    for n in [1, 2, 4, 8] {
        for k in [1, 2, 3] {
            for sharing in [false, true] {
                let mut grids = vec![grid_for(n, k)];
                let cubic = GridSpec::cubic(48, R).unwrap();
                if plan_decomposition(&cubic, n, k, sharing).is_ok() {
                    grids.push(cubic);
                }
                for grid in grids {
                    let init = Initializer::Random { seed: (n * 100 + k * 10) as u64 };
                    let base = RunConfig {
                        grid: grid.clone(),
                        chunks: n,
                        tb_steps: k,
                        sharing,
                        steps: 2 * k,
                        codec: CodecSpec::Identity,
                        init: init.clone(),
                        ..RunConfig::default()
                    };
                    let oracle = run_in_core(&grid, &base.coefficients(), 2 * k, &init).map_err(|e| e.to_string())?;
                    for mode in OOC_MODES {
                        let out = run(&RunConfig { mode, ..base.clone() }).map_err(|e| format!("{mode} n={n} k={k}: {e}"))?;
                        let s = out.state.ok_or("no host state")?;
                        ensure(
                            s.curr.bitwise_eq(&oracle.state.curr) && s.prev.bitwise_eq(&oracle.state.prev),
                            || format!("{mode} n={n} k={k} sharing={sharing} grid={}x{}x{} differs", grid.nx, grid.ny, grid.nz),
                        )?;
                        traces.push(out.trace);
                        runs += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{runs} out-of-core runs bitwise equal to the in-core reference"))
}

fn swb(n: usize, sharing: bool) -> LoweredSchedule {
    let grid = GridSpec::new(10, 10, 24 * n, R).unwrap();
    let plan = plan_decomposition(&grid, n, 1, sharing).unwrap();
    schedule(&plan, ScheduleMode::CompressSwb, &acoustic_datasets(), &CodecSpec::Truncate, 3).unwrap()
}

fn exclusivity(traces: &[Vec<TraceEvent>]) -> Outcome {
    let mut schedules = 0;
    let mut mutants = 0;
    let mut vacuous = 0;
    for n in 1..=12 {
        for sharing in [false, true] {
            let s = swb(n, sharing);
            let v = validate_exclusive(&s);
            ensure(v.is_empty(), || format!("n={n} sharing={sharing}: {:?}", v[0]))?;
            schedules += 1;
            let mut recorded = std::collections::HashSet::new();
            let mut k = 0;
            for a in &s.actions {
                match a.action {
                    Action::Record { event } => {
                        recorded.insert(event);
                    }
                    Action::Wait { event } => {
                        if recorded.contains(&event) {
                            let m = s.without_wait(k).unwrap();
                            ensure(!validate_exclusive(&m).is_empty(), || {
                                format!("n={n} sharing={sharing}: deleting wait on {event} goes unnoticed")
                            })?;
                            mutants += 1;
                        } else {
                            vacuous += 1;
                        }
                        k += 1;
                    }
                    Action::Op { .. } => {}
                }
            }
        }
    }
    for t in traces {
        let v = validate_exclusive_trace(t);
        ensure(v.is_empty(), || format!("trace violation {:?}", v[0]))?;
    }
    Ok(format!(
        "{schedules} schedules clean, {} traces clean, {mutants} wait deletions all caught ({vacuous} first-iteration waits have no prior record)",
        traces.len()
    ))
}

fn memory() -> Outcome {
    let base = RunConfig {
        grid: GridSpec::cubic(1152, R).unwrap(),
        chunks: 8,
        tb_steps: 12,
        steps: 12,
        backend: Backend::Simulated,
        ..RunConfig::default()
    };
    let mut rows = Vec::new();
    for (mode, codec) in [
        (Mode::OocBaseline, CodecSpec::Identity),
        (Mode::OocCompressSwb, CodecSpec::Truncate),
        (Mode::OocCompressSwb, CodecSpec::block_quant(32).unwrap()),
    ] {
        let p = Pipeline::new(RunConfig { mode, codec, ..base.clone() }).map_err(|e| e.to_string())?;
        rows.push((mode.to_string(), p.arena().memory_report(p.geometry().full_bytes)));
    }
    let cmp = memory_comparison(&rows);
    let (b, s, framed) = (&cmp.rows[0], &cmp.rows[1], &cmp.rows[2]);
    ensure(b.units == 12.0, || format!("baseline {} units", b.units))?;
    ensure(s.units == 8.5, || format!("swb {} units", s.units))?;
    ensure(framed.units == 8.5 && framed.overhead_bytes > 0, || {
        format!("block-quant swb {} units, {} B overhead", framed.units, framed.overhead_bytes)
    })?;
    let table = cmp.to_table();
    ensure(
        table.contains("29.2%") && table.contains("7.5") && table.contains("37.5%") && table.contains("33.0%"),
        || format!("missing figures in\n{table}"),
    )?;
    Ok(format!(
        "baseline {:.3} units, swb {:.3} units, reduction {:.1}%; block-quant swb {:.3} units + {} B framing reported separately",
        b.units, s.units, s.reduction_pct, framed.units, framed.overhead_bytes
    ))
}

fn bytes_of(trace: &[TraceEvent], kinds: &[OpKind], sweep: usize) -> u64 {
    trace
        .iter()
        .filter(|e| e.sweep == sweep && kinds.contains(&e.kind))
        .map(|e| e.bytes)
        .sum()
}

fn transfer_bytes() -> Outcome {
    let base = RunConfig {
        grid: GridSpec::new(20, 18, 120, R).unwrap(),
        chunks: 5,
        tb_steps: 2,
        steps: 4,
        ..RunConfig::default()
    };
    let traced = |c: RunConfig| run(&c).map(|o| o.trace).map_err(|e| e.to_string());
    let ident = traced(RunConfig { codec: CodecSpec::Identity, ..base.clone() })?;
    let trunc = traced(RunConfig { codec: CodecSpec::Truncate, ..base.clone() })?;
    let link = [OpKind::H2D, OpKind::D2H];
    for sweep in 0..base.sweeps() {
        let (i, t) = (bytes_of(&ident, &link, sweep), bytes_of(&trunc, &link, sweep));
        ensure(i == 2 * t, || format!("sweep {sweep}: identity {i} B vs truncate {t} B"))?;
    }

    let plane = base.grid.plane_bytes();
    let transferred = acoustic_datasets().iter().filter(|d| d.is_transferred()).count() as u64;
    let expect_planes = (base.chunks as u64 - 1) * 2 * base.tb_steps as u64 * R as u64 * transferred;
    let mut checked = 0;
    for mode in [Mode::OocBaseline, Mode::OocCompressSwb] {
        let plain = traced(RunConfig { mode, codec: CodecSpec::Identity, sharing: false, ..base.clone() })?;
        let shared = traced(RunConfig { mode, codec: CodecSpec::Identity, sharing: true, ..base.clone() })?;
        for sweep in 0..base.sweeps() {
            let saved = bytes_of(&plain, &[OpKind::H2D], sweep) - bytes_of(&shared, &[OpKind::H2D], sweep);
            ensure(saved == expect_planes * plane, || {
                format!("{mode} sweep {sweep}: saved {} planes, expected {expect_planes}", saved as f64 / plane as f64)
            })?;
            checked += 1;
        }
    }
    Ok(format!(
        "H2D+D2H bytes halved in every sweep; sharing saves {expect_planes} planes per sweep ({checked} sweeps checked)"
    ))
}

fn bottleneck_shift() -> Outcome {
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/calibration_1152.json");
    let config = resolve(Some(&profile), &Settings::default()).map_err(|e| e.to_string())?;
    let p = speedup_model(&config.cost, &config).map_err(|e| e.to_string())?;
    ensure(p.baseline.label == BottleneckLabel::TransferBound, || format!("baseline {}", p.baseline.label))?;
    ensure(p.swb.label == BottleneckLabel::ComputeBound, || format!("swb {}", p.swb.label))?;
    ensure((1.05..=1.2).contains(&p.ratio), || format!("ratio {:.3}", p.ratio))?;
    Ok(format!(
        "baseline {:.2}s {}, swb {:.2}s {}, speedup {:.3}x",
        p.baseline_makespan, p.baseline.label, p.swb_makespan, p.swb.label, p.ratio
    ))
}

fn random_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = rng.random_range(1..=130);
    let scale = 10f64.powi(rng.random_range(-30..=30));
    (0..len)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            _ => rng.random_range(-1.0..1.0) * scale,
        })
        .collect()
}

fn codec_bounds() -> Outcome {
    const TRIPS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut values = 0usize;
    for codec_ix in 0..3 {
        for _ in 0..TRIPS {
            let v = random_values(&mut rng);
            let codec = match codec_ix {
                0 => CodecSpec::Identity,
                1 => CodecSpec::Truncate,
                _ => CodecSpec::block_quant(rng.random_range(1..=52)).unwrap(),
            };
            let payload = encode(&codec, &v).map_err(|e| e.to_string())?;
            ensure(payload.len() as u64 == encoded_size(&codec, v.len() as u64), || {
                format!("{}: {} bytes for {} values", codec.name(), payload.len(), v.len())
            })?;
            let back = decode(&codec, &payload, v.len()).map_err(|e| e.to_string())?;
            values += v.len();
            match codec {
                CodecSpec::Identity => {
                    ensure(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()), || "identity not exact".into())?
                }
                CodecSpec::Truncate => {
                    for (a, b) in v.iter().zip(&back) {
                        ensure((a - b).abs() <= common::f32_half_ulp(*a), || format!("truncate {a} -> {b}"))?;
                    }
                }
                CodecSpec::BlockQuant { q } => {
                    for (block, out) in v.chunks(BLOCK_VALUES).zip(back.chunks(BLOCK_VALUES)) {
                        let lo = block.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = block.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let bound = (hi - lo) / 2f64.powi(q as i32 + 1) + 4.0 * f64::EPSILON * lo.abs().max(hi.abs());
                        for (a, b) in block.iter().zip(out) {
                            ensure((a - b).abs() <= bound, || format!("q={q} {a} -> {b} bound {bound}"))?;
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{} round-trips per codec ({values} values), zero bound or length violations", TRIPS))
}

fn lossy_sanity() -> Outcome {
    let config = RunConfig {
        grid: GridSpec::cubic(64, R).unwrap(),
        chunks: 2,
        tb_steps: 3,
        steps: 36,
        mode: Mode::OocCompressSwb,
        codec: CodecSpec::Truncate,
        compare_reference: true,
        ..RunConfig::default()
    };
    let out = run(&config).map_err(|e| e.to_string())?;
    let reference = run_in_core(&config.grid, &config.coefficients(), config.steps, &config.init).map_err(|e| e.to_string())?;
    let injected = common::injected_codec_run(
        &config.grid,
        &config.coefficients(),
        &config.init,
        &CodecSpec::Truncate,
        config.sweeps(),
        config.tb_steps,
    );
    let bound = injected
        .curr
        .max_abs_diff(&reference.state.curr)
        .max(injected.prev.max_abs_diff(&reference.state.prev));
    let err = out.report.max_abs_err.ok_or("no error reported")?;
    let delta = out.report.checksum_delta.ok_or("no checksum delta reported")?;
    ensure(err <= bound, || format!("max error {err:e} above oracle bound {bound:e}"))?;
    ensure(delta.is_finite(), || format!("checksum delta {delta}"))?;
    let state = out.state.ok_or("no host state")?;
    ensure(state.curr.bitwise_eq(&injected.curr) && state.prev.bitwise_eq(&injected.prev), || "differs from injected-truncation run".into())?;
    Ok(format!("max error {err:.3e} <= oracle bound {bound:.3e}, checksum delta {delta:.3e}"))
}

fn golden() -> Outcome {
    let grid = GridSpec::new(12, 12, 96, R).unwrap();
    let plan = plan_decomposition(&grid, 3, 2, false).unwrap();
    let s = schedule(&plan, ScheduleMode::CompressSwb, &acoustic_datasets(), &CodecSpec::Truncate, 3).unwrap();
    let ours: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
    let expect: serde_json::Value = serde_json::from_str(include_str!("golden/swb_n3_schedule.json")).unwrap();
    ensure(ours == expect, || format!("exported schedule differs:\n{}", s.to_json().unwrap()))?;
    Ok(format!("{} actions match the golden file", s.actions.len()))
}

fn main() {
    let mut traces = Vec::new();
    let mut results = vec![("oracle equivalence", equivalence(&mut traces))];
    // add simulated traces to the temporal check
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/calibration_1152.json");
    let c = resolve(Some(&profile), &Settings::default()).expect("calibration profile");
    for mode in OOC_MODES {
        let codec = if mode == Mode::OocBaseline { CodecSpec::Identity } else { CodecSpec::Truncate };
        let slim = RunConfig { grid: GridSpec::new(64, 64, 1152, R).unwrap(), mode, codec, ..c.clone() };
        traces.push(run(&slim).expect("simulated run").trace);
    }
    results.push(("working-buffer exclusivity", exclusivity(&traces)));
    results.push(("memory accounting", memory()));
    results.push(("transfer-byte identities", transfer_bytes()));
    results.push(("bottleneck shift", bottleneck_shift()));
    results.push(("codec bounds", codec_bounds()));
    results.push(("lossy end-to-end sanity", lossy_sanity()));
    results.push(("scheduler conformance", golden()));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
