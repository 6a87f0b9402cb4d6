//! Out-of-core 3-D stencil computation with fixed-rate on-the-fly compression.
//!
//! A grid too large for device memory is cut into z-slabs. Each slab is
//! streamed to the device together with enough halo planes for several
//! time steps, compressed in both directions, and updated in a single
//! working buffer that lanes hand to each other with events.
//!
//! ```no_run
//! use ooc_stencil::pipeline::{run, RunConfig};
//!
//! let report = run(&RunConfig::default()).unwrap().report;
//! println!("{}", report.to_json().unwrap());
//! ```

pub mod cli;
pub mod codec;
pub mod device;
pub mod domain;
pub mod error;
pub mod pipeline;
pub mod scheduler;
pub mod stencil;
pub mod trace;

pub use codec::CodecSpec;
pub use domain::{plan_decomposition, ChunkPlan, GridSpec, PlaneRange};
pub use error::{Error, Result};
pub use pipeline::{run, verify, Backend, Mode, Pipeline, RunConfig, RunReport};
pub use scheduler::{OpKind, ScheduleMode};
pub use stencil::{run_in_core, Initializer, WaveState};
pub use trace::{CostModel, TraceEvent};
