//! Device model: a capacity-checked allocation arena plus two executors for
//! lowered schedules, one running real threads and one simulating time.

mod arena;
mod real;
mod sim;

pub use arena::{Allocation, BufferEntry, DeviceArena, MemoryReport};
pub use real::{execute, OpRunner};
pub use sim::simulate;

use serde::{Deserialize, Serialize};

use crate::scheduler::{Action, EventId, LoweredSchedule, OpKind};
use crate::trace::TraceEvent;

/// 32 GiB, the memory of the reference accelerator.
pub const DEFAULT_CAPACITY_BYTES: u64 = 32 << 30;

/// Serialized execution resources: one engine per link direction and one kernel engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Engine {
    H2D,
    D2H,
    Kernel,
}

impl Engine {
    pub fn of(kind: OpKind) -> Self {
        match kind {
            OpKind::H2D => Self::H2D,
            OpKind::D2H => Self::D2H,
            _ => Self::Kernel,
        }
    }

    fn index(&self) -> usize {
        match self {
            Self::H2D => 0,
            Self::D2H => 1,
            Self::Kernel => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub events: Vec<TraceEvent>,
    /// Notes for audit, e.g. waits that had nothing to wait for.
    pub audit: Vec<String>,
    /// Time the last operation finished, in run seconds.
    pub end: f64,
}

/// Per-lane action lists with each wait resolved to the record generation it targets.
#[derive(Debug, Clone)]
pub(crate) struct LanePrograms {
    pub lanes: Vec<Vec<LaneStep>>,
    pub audit: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum LaneStep {
    Op { node: usize, issue: usize },
    Record { event: EventId },
    /// Proceeds once `event` has been recorded `generation` times.
    Wait { event: EventId, generation: usize },
}

impl LanePrograms {
    pub fn of(schedule: &LoweredSchedule) -> Self {
        let mut lanes = vec![Vec::new(); schedule.lanes];
        let mut audit = Vec::new();
        let mut issued: std::collections::HashMap<EventId, usize> = Default::default();
        for (issue, a) in schedule.actions.iter().enumerate() {
            let step = match a.action {
                Action::Op { node } => LaneStep::Op { node, issue },
                Action::Record { event } => {
                    *issued.entry(event).or_default() += 1;
                    LaneStep::Record { event }
                }
                Action::Wait { event } => {
                    let generation = issued.get(&event).copied().unwrap_or(0);
                    if generation == 0 {
                        audit.push(format!(
                            "lane {}: wait on {event} precedes any record and is a no-op",
                            a.lane
                        ));
                    }
                    LaneStep::Wait { event, generation }
                }
            };
            lanes[a.lane].push(step);
        }
        Self { lanes, audit }
    }
}
