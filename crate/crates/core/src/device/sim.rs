use std::collections::HashMap;

use super::{Engine, ExecOutcome, LanePrograms, LaneStep};
use crate::error::{Error, Result};
use crate::scheduler::{EventId, LoweredSchedule};
use crate::trace::{CostModel, TraceEvent};

/// Discrete-event simulation of one lowered schedule starting at `t0` seconds.
///
/// Lanes issue in FIFO order, a wait completes at the time of the record it
/// targets, and an operation starts once its lane is ready and its engine is
/// idle. Competing operations are granted an engine by (lane ready time,
/// issue order).
pub fn simulate(
    schedule: &LoweredSchedule,
    cost: &CostModel,
    sweep: usize,
    t0: f64,
) -> Result<ExecOutcome> {
    cost.validate()?;
    let programs = LanePrograms::of(schedule);
    let lanes = programs.lanes.len();
    let mut pc = vec![0usize; lanes];
    let mut ready_at = vec![t0; lanes];
    let mut in_flight: Vec<Option<(f64, f64, usize)>> = vec![None; lanes];
    let mut engine_free = [t0; 3];
    let mut record_times: HashMap<EventId, Vec<f64>> = HashMap::new();
    let mut events = Vec::new();
    let mut now = t0;

    loop {
        // drain instantaneous actions
        let mut progress = true;
        while progress {
            progress = false;
            for l in 0..lanes {
                if in_flight[l].is_some() {
                    continue;
                }
                match programs.lanes[l].get(pc[l]) {
                    Some(LaneStep::Record { event }) => {
                        record_times.entry(*event).or_default().push(ready_at[l]);
                        pc[l] += 1;
                        progress = true;
                    }
                    Some(LaneStep::Wait { event, generation }) => {
                        if *generation == 0 {
                            pc[l] += 1;
                            progress = true;
                        } else if let Some(&t) = record_times
                            .get(event)
                            .and_then(|v| v.get(generation - 1))
                        {
                            ready_at[l] = ready_at[l].max(t);
                            pc[l] += 1;
                            progress = true;
                        }
                    }
                    _ => {}
                }
            }
        }

        // grant engines
        let mut candidates: Vec<(f64, usize, usize, usize)> = Vec::new();
        for l in 0..lanes {
            if in_flight[l].is_none() {
                if let Some(LaneStep::Op { node, issue }) = programs.lanes[l].get(pc[l]) {
                    candidates.push((ready_at[l], *issue, l, *node));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, _, l, node) in candidates {
            let n = &schedule.nodes[node];
            let e = Engine::of(n.kind).index();
            if engine_free[e] <= now {
                let end = now + cost.duration(n);
                engine_free[e] = end;
                in_flight[l] = Some((now, end, node));
            }
        }

        let next = in_flight
            .iter()
            .flatten()
            .map(|&(_, end, _)| end)
            .fold(f64::INFINITY, f64::min);
        if next.is_infinite() {
            if pc.iter().zip(&programs.lanes).all(|(p, prog)| *p == prog.len()) {
                break;
            }
            let stuck: Vec<String> = (0..lanes)
                .filter(|&l| pc[l] < programs.lanes[l].len())
                .map(|l| format!("lane {l} at step {}", pc[l]))
                .collect();
            return Err(Error::Schedule(format!("deadlock: {}", stuck.join(", "))));
        }
        now = next;
        for l in 0..lanes {
            if let Some((start, end, node)) = in_flight[l] {
                if end <= now {
                    events.push(TraceEvent::from_node(&schedule.nodes[node], sweep, start, end));
                    in_flight[l] = None;
                    ready_at[l] = end;
                    pc[l] += 1;
                }
            }
        }
    }

    let end = events.iter().map(|e| e.t_end).fold(t0, f64::max);
    Ok(ExecOutcome {
        events,
        audit: programs.audit,
        end,
    })
}
