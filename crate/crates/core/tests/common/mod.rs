//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use ooc_stencil::codec::{decode, encode};
use ooc_stencil::domain::ChunkPlan;
use ooc_stencil::scheduler::{Action, BufferKind, BufferPart, LoweredSchedule, OpNode};
use ooc_stencil::stencil::{Field, StencilCoeffs, WaveState};
use ooc_stencil::{CodecSpec, GridSpec, Initializer};

/// Per-plane count of how often a sweep makes each allocated plane resident
/// on the device for each chunk, computed plane by plane.
pub fn plane_presence(plan: &ChunkPlan) -> Vec<Vec<usize>> {
    let z = plan.grid.alloc_z();
    plan.chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut counts = vec![0; z];
            for s in &c.segments {
                for p in s.planes.start..s.planes.end {
                    counts[p] += 1;
                }
            }
            if plan.sharing && i > 0 {
                let prev = &plan.chunks[i - 1].extent;
                for p in c.extent.start..c.extent.end {
                    if p >= prev.start && p < prev.end {
                        counts[p] += 1;
                    }
                }
            }
            counts
        })
        .collect()
}

fn roundtrip(codec: &CodecSpec, f: &mut Field) {
    let bytes = encode(codec, &f.data).expect("encodable");
    f.data = decode(codec, &bytes, f.data.len()).expect("decodable");
}

/// Whole-grid run that passes every field through `codec` wherever the
/// pipeline would: before each sweep (transfer in) and after it (write back).
pub fn injected_codec_run(
    grid: &GridSpec,
    coeffs: &StencilCoeffs,
    init: &Initializer,
    codec: &CodecSpec,
    sweeps: usize,
    tb_steps: usize,
) -> WaveState {
    let mut state = init.build(grid);
    let vel = state.vel.clone();
    for _ in 0..sweeps {
        roundtrip(codec, &mut state.prev);
        roundtrip(codec, &mut state.curr);
        state.vel = vel.clone();
        roundtrip(codec, &mut state.vel);
        state.advance(coeffs, tb_steps).expect("in bounds");
        roundtrip(codec, &mut state.prev);
        roundtrip(codec, &mut state.curr);
    }
    state.vel = vel;
    state
}

fn parts_overlap(a: BufferPart, b: BufferPart) -> bool {
    a == BufferPart::All || b == BufferPart::All || a == b
}

/// True when two ops touch a common buffer region and at least one writes it.
pub fn conflicting(a: &OpNode, b: &OpNode) -> bool {
    a.accesses.iter().any(|x| {
        b.accesses.iter().any(|y| {
            (x.write || y.write)
                && x.buffer.kind == y.buffer.kind
                && x.buffer.slot == y.buffer.slot
                && parts_overlap(x.buffer.part, y.buffer.part)
        })
    })
}

#[derive(Clone, Copy, Debug)]
enum Step {
    Op(usize),
    Record(usize),
    Wait(usize, usize),
}

/// Explores every interleaving of the lanes (ops split into start and end)
/// and returns the conflicting op pairs that can be in flight together.
pub fn racing_pairs(s: &LoweredSchedule) -> HashSet<(usize, usize)> {
    let mut event_ids: HashMap<String, usize> = HashMap::new();
    let mut issued: HashMap<usize, usize> = HashMap::new();
    let mut lanes: Vec<Vec<Step>> = vec![Vec::new(); s.lanes];
    for a in &s.actions {
        let step = match a.action {
            Action::Op { node } => Step::Op(node),
            Action::Record { event } => {
                let n = event_ids.len();
                let id = *event_ids.entry(event.to_string()).or_insert(n);
                *issued.entry(id).or_default() += 1;
                Step::Record(id)
            }
            Action::Wait { event } => {
                let n = event_ids.len();
                let id = *event_ids.entry(event.to_string()).or_insert(n);
                Step::Wait(id, issued.get(&id).copied().unwrap_or(0))
            }
        };
        lanes[a.lane].push(step);
    }

    let recorded = |pcs: &[usize], id: usize| -> usize {
        lanes
            .iter()
            .zip(pcs)
            .map(|(prog, &pc)| {
                prog[..pc]
                    .iter()
                    .filter(|st| matches!(st, Step::Record(e) if *e == id))
                    .count()
            })
            .sum()
    };

    // state: per lane (pc, inside op)
    let start: Vec<(usize, bool)> = vec![(0, false); s.lanes];
    let mut seen: HashSet<Vec<(usize, bool)>> = HashSet::new();
    let mut stack = vec![start];
    let mut races = HashSet::new();
    while let Some(state) = stack.pop() {
        if !seen.insert(state.clone()) {
            continue;
        }
        let active: Vec<usize> = state
            .iter()
            .enumerate()
            .filter(|(_, (_, inside))| *inside)
            .map(|(l, (pc, _))| match lanes[l][*pc] {
                Step::Op(n) => n,
                _ => unreachable!(),
            })
            .collect();
        for (i, &a) in active.iter().enumerate() {
            for &b in &active[i + 1..] {
                if conflicting(&s.nodes[a], &s.nodes[b]) {
                    races.insert((a.min(b), a.max(b)));
                }
            }
        }
        let pcs: Vec<usize> = state.iter().map(|(pc, _)| *pc).collect();
        for l in 0..s.lanes {
            let (pc, inside) = state[l];
            let Some(step) = lanes[l].get(pc) else { continue };
            let mut next = state.clone();
            match (*step, inside) {
                (Step::Op(_), false) => next[l] = (pc, true),
                (Step::Op(_), true) => next[l] = (pc + 1, false),
                (Step::Record(_), _) => next[l] = (pc + 1, false),
                (Step::Wait(id, generation), _) => {
                    if recorded(&pcs, id) < generation {
                        continue;
                    }
                    next[l] = (pc + 1, false);
                }
            }
            stack.push(next);
        }
    }
    races
}

/// Half a unit in the last place of `x` rounded to 32-bit precision.
pub fn f32_half_ulp(x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 {
        return 0.0;
    }
    let min_normal = f32::MIN_POSITIVE as f64;
    let exp = if a < min_normal {
        -126.0
    } else {
        a.log2().floor()
    };
    // log2 can land one off near powers of two; take the larger exponent
    let exp = if 2f64.powf(exp + 1.0) <= a { exp + 1.0 } else { exp };
    2f64.powf(exp - 23.0) / 2.0
}

pub fn working_kind(n: &OpNode) -> bool {
    n.accesses.iter().any(|a| a.buffer.kind == BufferKind::Working)
}
