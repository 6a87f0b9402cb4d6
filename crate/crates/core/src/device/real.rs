use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use super::{Engine, ExecOutcome, LanePrograms, LaneStep};
use crate::error::{Error, Result};
use crate::scheduler::{EventId, LoweredSchedule, OpNode};
use crate::trace::TraceEvent;

/// Performs the data work of one operation.
pub trait OpRunner: Sync {
    fn run_op(&self, node: &OpNode) -> Result<()>;
}

struct Shared {
    events: Mutex<HashMap<EventId, usize>>,
    signal: Condvar,
    abort: AtomicBool,
    engines: [Mutex<()>; 3],
    error: Mutex<Option<Error>>,
    trace: Mutex<Vec<TraceEvent>>,
}

impl Shared {
    fn fail(&self, e: Error) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
        drop(slot);
        let _guard = self.events.lock().unwrap();
        self.abort.store(true, Ordering::SeqCst);
        self.signal.notify_all();
    }
}

/// Runs one lowered schedule with a thread per lane.
///
/// Engines are mutexes: one operation per link direction and one kernel at a
/// time. An error on any lane stops every lane at its next action boundary
/// and is returned once all lanes have stopped.
pub fn execute(
    schedule: &LoweredSchedule,
    runner: &dyn OpRunner,
    sweep: usize,
    origin: Instant,
) -> Result<ExecOutcome> {
    let programs = LanePrograms::of(schedule);
    let shared = Shared {
        events: Mutex::new(HashMap::new()),
        signal: Condvar::new(),
        abort: AtomicBool::new(false),
        engines: Default::default(),
        error: Mutex::new(None),
        trace: Mutex::new(Vec::new()),
    };

    std::thread::scope(|scope| {
        for program in &programs.lanes {
            let shared = &shared;
            scope.spawn(move || {
                for step in program {
                    if shared.abort.load(Ordering::SeqCst) {
                        return;
                    }
                    match *step {
                        LaneStep::Record { event } => {
                            let mut g = shared.events.lock().unwrap();
                            *g.entry(event).or_default() += 1;
                            shared.signal.notify_all();
                        }
                        LaneStep::Wait { event, generation } => {
                            let mut g = shared.events.lock().unwrap();
                            while g.get(&event).copied().unwrap_or(0) < generation
                                && !shared.abort.load(Ordering::SeqCst)
                            {
                                g = shared.signal.wait(g).unwrap();
                            }
                        }
                        LaneStep::Op { node, .. } => {
                            let node = &schedule.nodes[node];
                            let engine = shared.engines[Engine::of(node.kind).index()]
                                .lock()
                                .unwrap();
                            let t0 = origin.elapsed().as_secs_f64();
                            let result = runner.run_op(node);
                            let t1 = origin.elapsed().as_secs_f64();
                            drop(engine);
                            if let Err(e) = result {
                                shared.fail(e);
                                return;
                            }
                            shared
                                .trace
                                .lock()
                                .unwrap()
                                .push(TraceEvent::from_node(node, sweep, t0, t1));
                        }
                    }
                }
            });
        }
    });

    if let Some(e) = shared.error.into_inner().unwrap() {
        return Err(e);
    }
    let mut events = shared.trace.into_inner().unwrap();
    events.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.lane.cmp(&b.lane)));
    let end = events.iter().map(|e| e.t_end).fold(0.0, f64::max);
    Ok(ExecOutcome {
        events,
        audit: programs.audit,
        end,
    })
}
