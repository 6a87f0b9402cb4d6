//! End-to-end runs: configuration, host staging, device op bodies, sweeps,
//! reporting and verification against the in-core reference.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{self, encoded_size, CodecSpec, CompressedSegment};
use crate::device::{self, DeviceArena, MemoryReport, OpRunner, DEFAULT_CAPACITY_BYTES};
use crate::domain::{
    acoustic_datasets, buffer_geometry, plan_decomposition, BufferGeometry, ChunkPlan,
    DatasetDecl, GridSpec, PlaneRange, SegmentRole,
};
use crate::error::{Error, Result};
use crate::scheduler::{
    self, validate_exclusive, validate_exclusive_trace, ExclusivityViolation, LoweredSchedule,
    OpKind, OpNode, ScheduleMode, DEFAULT_LANES,
};
use crate::stencil::{
    coefficients_8th_order, run_in_core, step, Checksum, Field, FieldDims, Initializer,
    StencilCoeffs, WaveState, DEFAULT_CFL, STENCIL_RADIUS,
};
use crate::trace::{bottleneck, Bottleneck, CategoryTotals, CostModel, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    InCore,
    OocBaseline,
    OocCompress,
    OocCompressSwb,
}

impl Mode {
    pub fn schedule_mode(&self) -> Option<ScheduleMode> {
        match self {
            Self::InCore => None,
            Self::OocBaseline => Some(ScheduleMode::Baseline),
            Self::OocCompress => Some(ScheduleMode::Compress),
            Self::OocCompressSwb => Some(ScheduleMode::CompressSwb),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::InCore => "in-core",
            Self::OocBaseline => "ooc-baseline",
            Self::OocCompress => "ooc-compress",
            Self::OocCompressSwb => "ooc-compress-swb",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-core" => Ok(Self::InCore),
            "ooc-baseline" | "baseline" => Ok(Self::OocBaseline),
            "ooc-compress" | "compress" => Ok(Self::OocCompress),
            "ooc-compress-swb" | "compress-swb" | "swb" => Ok(Self::OocCompressSwb),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Threads moving and computing real data.
    Real,
    /// Discrete-event simulation under a cost model; no data is touched.
    Simulated,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Self::Real),
            "simulated" | "sim" => Ok(Self::Simulated),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

/// Makes one operation fail, to exercise abort handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub sweep: usize,
    pub chunk: usize,
    pub op: OpKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub chunks: usize,
    pub tb_steps: usize,
    pub sharing: bool,
    pub mode: Mode,
    pub codec: CodecSpec,
    /// Total time steps; a multiple of `tb_steps`.
    pub steps: usize,
    pub backend: Backend,
    pub init: Initializer,
    pub lanes: usize,
    pub device_capacity_bytes: u64,
    pub cost: CostModel,
    /// Largest acceptable max-abs difference from the reference.
    pub tolerance: f64,
    /// Run the in-core reference alongside a real run and report the error.
    pub compare_reference: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultInjection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::cubic(64, STENCIL_RADIUS).expect("valid default grid"),
            chunks: 4,
            tb_steps: 2,
            sharing: true,
            mode: Mode::OocCompressSwb,
            codec: CodecSpec::Truncate,
            steps: 8,
            backend: Backend::Real,
            init: Initializer::default(),
            lanes: DEFAULT_LANES,
            device_capacity_bytes: DEFAULT_CAPACITY_BYTES,
            cost: CostModel::default(),
            tolerance: 0.0,
            compare_reference: true,
            fault: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.halo_radius != STENCIL_RADIUS {
            return Err(Error::Config(format!(
                "halo radius must be {STENCIL_RADIUS} for the 25-point stencil, got {}",
                self.grid.halo_radius
            )));
        }
        if self.tb_steps == 0 {
            return Err(Error::Config("tb_steps must be at least 1".into()));
        }
        if self.mode != Mode::InCore && !self.steps.is_multiple_of(self.tb_steps) {
            return Err(Error::Config(format!(
                "steps ({}) must be a multiple of tb_steps ({})",
                self.steps, self.tb_steps
            )));
        }
        if self.mode == Mode::OocBaseline && self.codec != CodecSpec::Identity {
            return Err(Error::Config(format!(
                "ooc-baseline transfers raw data; codec must be identity, got {}",
                self.codec.name()
            )));
        }
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        self.cost.validate()
    }

    pub fn sweeps(&self) -> usize {
        self.steps / self.tb_steps
    }

    /// Codec actually used on the wire.
    pub fn wire_codec(&self) -> CodecSpec {
        match self.mode {
            Mode::InCore | Mode::OocBaseline => CodecSpec::Identity,
            _ => self.codec,
        }
    }

    pub fn coefficients(&self) -> StencilCoeffs {
        let vmax = self.init.build(&self.grid).max_velocity();
        coefficients_8th_order().with_cfl(DEFAULT_CFL, vmax)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub backend: Backend,
    pub codec: String,
    pub grid: GridSpec,
    pub chunks: usize,
    pub tb_steps: usize,
    pub sharing: bool,
    pub steps: usize,
    pub sweeps: usize,
    pub lanes: usize,
    pub makespan_s: f64,
    pub category_seconds: BTreeMap<OpKind, f64>,
    pub category_bytes: BTreeMap<OpKind, u64>,
    pub bottleneck: Option<Bottleneck>,
    pub memory: Option<MemoryReport>,
    pub checksum: Option<Checksum>,
    pub max_abs_err: Option<f64>,
    pub checksum_delta: Option<f64>,
    pub exclusivity_violations: Vec<ExclusivityViolation>,
    pub audit: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Final host state (real backend only).
    pub state: Option<WaveState>,
    pub trace: Vec<TraceEvent>,
    pub schedule: Option<LoweredSchedule>,
}

/// Index of each dataset in [`acoustic_datasets`] order.
const VEL: usize = 0;
const PREV: usize = 1;
const CURR: usize = 2;
const NEXT: usize = 3;
const TRANSFERRED: [usize; 3] = [VEL, PREV, CURR];
const WRITTEN_BACK: [usize; 2] = [PREV, CURR];

fn host_field(state: &WaveState, d: usize) -> &Field {
    match d {
        VEL => &state.vel,
        PREV => &state.prev,
        CURR => &state.curr,
        _ => unreachable!("dataset {d} is not host resident"),
    }
}

fn host_field_mut(state: &mut WaveState, d: usize) -> &mut Field {
    match d {
        VEL => &mut state.vel,
        PREV => &mut state.prev,
        CURR => &mut state.curr,
        _ => unreachable!("dataset {d} is not host resident"),
    }
}

/// Device-side storage backing the arena's allocations.
struct DeviceStore {
    /// `[slot][dataset]` full-size working buffers.
    working: Vec<Vec<Mutex<Vec<f64>>>>,
    /// `[lane][transferred dataset]` half-size buffers.
    half: Vec<Vec<Mutex<Vec<u8>>>>,
}

/// Host-staged compressed segments, `[chunk][transferred dataset]`.
pub type StagedChunk = Vec<Vec<CompressedSegment>>;

pub struct Pipeline {
    config: RunConfig,
    datasets: Vec<DatasetDecl>,
    plan: ChunkPlan,
    geometry: BufferGeometry,
    schedule: LoweredSchedule,
    arena: DeviceArena,
    store: Option<DeviceStore>,
    host: Option<WaveState>,
    coeffs: StencilCoeffs,
    origin: Instant,
    clock: f64,
    sweeps_done: usize,
    trace: Vec<TraceEvent>,
    audit: Vec<String>,
}

impl Pipeline {
    /// Plans, allocates device buffers and builds and checks the schedule.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mode = config
            .mode
            .schedule_mode()
            .ok_or_else(|| Error::Config("in-core runs have no out-of-core pipeline".into()))?;
        let datasets = acoustic_datasets();
        let wire = config.wire_codec();
        let plan = plan_decomposition(&config.grid, config.chunks, config.tb_steps, config.sharing)?;
        let geometry = buffer_geometry(&plan, &wire);

        let mut arena = DeviceArena::new(config.device_capacity_bytes);
        let slots = if mode.shared_working_buffer() { 1 } else { config.lanes };
        if mode.compresses() {
            for s in 0..config.lanes {
                for &d in &TRANSFERRED {
                    arena.alloc(
                        &format!("hf_buf[{s}].{}", datasets[d].name),
                        geometry.half_bytes,
                        geometry.half_overhead_bytes,
                    )?;
                }
            }
        }
        for s in 0..slots {
            for d in &datasets {
                let name = if mode.shared_working_buffer() {
                    format!("fl_buf.{}", d.name)
                } else {
                    format!("fl_buf[{s}].{}", d.name)
                };
                arena.alloc(&name, geometry.full_bytes, 0)?;
            }
        }

        let schedule = scheduler::schedule(&plan, mode, &datasets, &wire, config.lanes)?;
        let violations = validate_exclusive(&schedule);
        if !violations.is_empty() {
            return Err(Error::Schedule(format!(
                "schedule is not exclusive: {}",
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }

        let (store, host, coeffs) = match config.backend {
            Backend::Real => {
                let host = config.init.build(&config.grid);
                let coeffs = coefficients_8th_order().with_cfl(DEFAULT_CFL, host.max_velocity());
                let full = geometry.full_elems as usize;
                let half = geometry.half_capacity() as usize;
                let store = DeviceStore {
                    working: (0..slots)
                        .map(|_| (0..datasets.len()).map(|_| Mutex::new(vec![0.0; full])).collect())
                        .collect(),
                    half: if mode.compresses() {
                        (0..config.lanes)
                            .map(|_| TRANSFERRED.iter().map(|_| Mutex::new(vec![0u8; half])).collect())
                            .collect()
                    } else {
                        Vec::new()
                    },
                };
                (Some(store), Some(host), coeffs)
            }
            Backend::Simulated => (None, None, coefficients_8th_order()),
        };

        Ok(Self {
            config,
            datasets,
            plan,
            geometry,
            schedule,
            arena,
            store,
            host,
            coeffs,
            origin: Instant::now(),
            clock: 0.0,
            sweeps_done: 0,
            trace: Vec::new(),
            audit: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn plan(&self) -> &ChunkPlan {
        &self.plan
    }

    pub fn geometry(&self) -> &BufferGeometry {
        &self.geometry
    }

    pub fn schedule(&self) -> &LoweredSchedule {
        &self.schedule
    }

    pub fn arena(&self) -> &DeviceArena {
        &self.arena
    }

    pub fn host_state(&self) -> Option<&WaveState> {
        self.host.as_ref()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    /// Compresses chunk `i` of every transferred dataset from the current host state.
    pub fn stage_chunk(&self, i: usize) -> Result<StagedChunk> {
        let host = self
            .host
            .as_ref()
            .ok_or_else(|| Error::Config("staging needs the real backend".into()))?;
        let wire = self.config.wire_codec();
        TRANSFERRED
            .iter()
            .map(|&d| {
                codec::segment_compress(
                    &self.plan,
                    &self.datasets[d],
                    i,
                    &host_field(host, d).data,
                    &wire,
                )
            })
            .collect()
    }

    /// Runs one sweep of `tb_steps` time steps over all chunks.
    pub fn run_sweep(&mut self) -> Result<()> {
        let sweep = self.sweeps_done;
        let outcome = match self.config.backend {
            Backend::Simulated => {
                device::simulate(&self.schedule, &self.config.cost, sweep, self.clock)?
            }
            Backend::Real => {
                let staged = (0..self.plan.n_chunks)
                    .map(|i| self.stage_chunk(i))
                    .collect::<Result<Vec<_>>>()?;
                let host = Mutex::new(self.host.take().expect("real backend has host state"));
                let ops = SweepOps {
                    plan: &self.plan,
                    mode: self.schedule.mode,
                    wire: self.config.wire_codec(),
                    lanes: self.config.lanes,
                    half_capacity: self.geometry.half_capacity() as usize,
                    store: self.store.as_ref().expect("real backend has device storage"),
                    staged: &staged,
                    host: &host,
                    coeffs: &self.coeffs,
                    fault: self.config.fault.filter(|f| f.sweep == sweep),
                };
                let result = device::execute(&self.schedule, &ops, sweep, self.origin);
                self.host = Some(host.into_inner().unwrap());
                result?
            }
        };
        self.clock = outcome.end;
        if sweep == 0 {
            self.audit.extend(outcome.audit);
        }
        self.trace.extend(outcome.events);
        self.sweeps_done += 1;
        Ok(())
    }

    /// Runs the remaining sweeps and assembles the report.
    pub fn finish(mut self) -> Result<RunOutcome> {
        while self.sweeps_done < self.config.sweeps() {
            self.run_sweep()?;
        }
        let names: Vec<String> = self.arena.allocations().map(|a| a.name.clone()).collect();
        let memory = self.arena.memory_report(self.geometry.full_bytes);
        for n in names {
            self.arena.dealloc(&n)?;
        }
        let mut report = base_report(&self.config);
        let totals = CategoryTotals::of(&self.trace);
        report.category_seconds = totals.seconds;
        report.category_bytes = totals.bytes;
        report.makespan_s = bottleneck(&self.trace).makespan;
        report.bottleneck = Some(bottleneck(&self.trace));
        report.memory = Some(memory);
        report.exclusivity_violations = validate_exclusive_trace(&self.trace);
        report.audit = self.audit;
        if let Some(state) = &self.host {
            report.checksum = Some(state.checksum());
            if self.config.compare_reference {
                let reference =
                    run_in_core(&self.config.grid, &self.coeffs, self.config.steps, &self.config.init)?;
                let v = compare_states(state, &reference.state, self.config.tolerance)?;
                report.max_abs_err = Some(v.max_abs_err);
                report.checksum_delta = Some(v.checksum_delta);
            }
        }
        Ok(RunOutcome {
            report,
            state: self.host,
            trace: self.trace,
            schedule: Some(self.schedule),
        })
    }
}

fn base_report(config: &RunConfig) -> RunReport {
    RunReport {
        mode: config.mode,
        backend: config.backend,
        codec: config.wire_codec().name(),
        grid: config.grid,
        chunks: config.chunks,
        tb_steps: config.tb_steps,
        sharing: config.sharing,
        steps: config.steps,
        sweeps: config.sweeps(),
        lanes: config.lanes,
        makespan_s: 0.0,
        category_seconds: BTreeMap::new(),
        category_bytes: BTreeMap::new(),
        bottleneck: None,
        memory: None,
        checksum: None,
        max_abs_err: None,
        checksum_delta: None,
        exclusivity_violations: Vec::new(),
        audit: Vec::new(),
    }
}

/// Runs a configuration to completion.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    if config.mode != Mode::InCore {
        return Pipeline::new(config.clone())?.finish();
    }
    config.validate()?;
    if config.backend != Backend::Real {
        return Err(Error::Config("in-core runs need the real backend".into()));
    }
    let coeffs = config.coefficients();
    let t0 = Instant::now();
    let result = run_in_core(&config.grid, &coeffs, config.steps, &config.init)?;
    let mut report = base_report(config);
    report.makespan_s = t0.elapsed().as_secs_f64();
    report.checksum = Some(result.checksum);
    if config.compare_reference {
        report.max_abs_err = Some(0.0);
        report.checksum_delta = Some(0.0);
    }
    Ok(RunOutcome {
        report,
        state: Some(result.state),
        trace: Vec::new(),
        schedule: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub max_abs_err: f64,
    pub checksum_delta: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares both pressure fields of two states.
pub fn compare_states(state: &WaveState, reference: &WaveState, tolerance: f64) -> Result<VerifyReport> {
    if state.curr.dims != reference.curr.dims || state.prev.dims != reference.prev.dims {
        return Err(Error::Config(format!(
            "cannot compare fields of dims {:?} with reference dims {:?}",
            state.curr.dims, reference.curr.dims
        )));
    }
    let max_abs_err = state
        .curr
        .max_abs_diff(&reference.curr)
        .max(state.prev.max_abs_diff(&reference.prev));
    let checksum_delta = (state.checksum().sum - reference.checksum().sum).abs();
    Ok(VerifyReport {
        max_abs_err,
        checksum_delta,
        tolerance,
        pass: max_abs_err <= tolerance,
    })
}

/// Runs `config` on real data and compares with the in-core reference.
pub fn verify(config: &RunConfig) -> Result<VerifyReport> {
    let mut c = config.clone();
    c.backend = Backend::Real;
    c.compare_reference = false;
    let outcome = run(&c)?;
    let reference = run_in_core(&c.grid, &c.coefficients(), c.steps, &c.init)?;
    compare_states(
        outcome.state.as_ref().expect("real runs keep their state"),
        &reference.state,
        c.tolerance,
    )
}

struct SweepOps<'a> {
    plan: &'a ChunkPlan,
    mode: ScheduleMode,
    wire: CodecSpec,
    lanes: usize,
    half_capacity: usize,
    store: &'a DeviceStore,
    staged: &'a [StagedChunk],
    host: &'a Mutex<WaveState>,
    coeffs: &'a StencilCoeffs,
    fault: Option<FaultInjection>,
}

impl SweepOps<'_> {
    fn plane(&self) -> usize {
        self.plan.grid.plane_elems()
    }

    fn slot(&self, i: usize) -> usize {
        if self.mode.shared_working_buffer() {
            0
        } else {
            i % self.lanes
        }
    }

    fn local(&self, i: usize, planes: PlaneRange) -> std::ops::Range<usize> {
        let p = self.plane();
        let r = planes.relative_to(self.plan.chunks[i].extent.start);
        r.start * p..r.end * p
    }

    fn head_bytes(&self, i: usize) -> usize {
        self.plan.chunks[i]
            .overlap_head()
            .map(|h| encoded_size(&self.wire, (h.planes.len() * self.plane()) as u64) as usize)
            .unwrap_or(0)
    }

    fn h2d(&self, i: usize) -> Result<()> {
        let lane = i % self.lanes;
        for (t, &d) in TRANSFERRED.iter().enumerate() {
            let segments = &self.staged[i][t];
            if self.mode.compresses() {
                let mut hf = self.store.half[lane][t].lock().unwrap();
                let mut offset = 0;
                for seg in segments {
                    let len = seg.payload.len();
                    let at = match seg.role {
                        SegmentRole::Body => {
                            offset += len;
                            offset - len
                        }
                        SegmentRole::OverlapHead => self.half_capacity - len,
                    };
                    hf[at..at + len].copy_from_slice(&seg.payload);
                }
            } else {
                let mut fl = self.store.working[self.slot(i)][d].lock().unwrap();
                for seg in segments {
                    seg.decode_into(&mut fl[self.local(i, seg.planes)])?;
                }
            }
        }
        Ok(())
    }

    fn share_copy(&self, i: usize) -> Result<()> {
        let ov = self.plan.overlap(i - 1);
        for &d in &TRANSFERRED {
            let planes = {
                let src = self.store.working[self.slot(i - 1)][d].lock().unwrap();
                src[self.local(i - 1, ov)].to_vec()
            };
            let mut dst = self.store.working[self.slot(i)][d].lock().unwrap();
            dst[self.local(i, ov)].copy_from_slice(&planes);
        }
        Ok(())
    }

    fn decompress(&self, i: usize) -> Result<()> {
        let lane = i % self.lanes;
        for (t, &d) in TRANSFERRED.iter().enumerate() {
            let segments = &self.staged[i][t];
            {
                let hf = self.store.half[lane][t].lock().unwrap();
                let mut fl = self.store.working[self.slot(i)][d].lock().unwrap();
                let mut offset = 0;
                for seg in segments {
                    let len = seg.payload.len();
                    let at = match seg.role {
                        SegmentRole::Body => {
                            offset += len;
                            offset - len
                        }
                        SegmentRole::OverlapHead => self.half_capacity - len,
                    };
                    codec::decode_into(&self.wire, &hf[at..at + len], &mut fl[self.local(i, seg.planes)])?;
                }
            }
            if let Some(ov) = self.plan.resident_overlap(i) {
                let hf = self.store.half[(i - 1) % self.lanes][t].lock().unwrap();
                let len = self.head_bytes(i - 1);
                let mut fl = self.store.working[self.slot(i)][d].lock().unwrap();
                codec::decode_into(
                    &self.wire,
                    &hf[self.half_capacity - len..],
                    &mut fl[self.local(i, ov)],
                )?;
            }
        }
        Ok(())
    }

    fn compute(&self, i: usize) -> Result<()> {
        let slot = &self.store.working[self.slot(i)];
        let mut guards: Vec<_> = slot.iter().map(|m| m.lock().unwrap()).collect();
        let ext = self.plan.chunks[i].extent;
        let n = ext.len() * self.plane();
        let dims = FieldDims {
            nx: self.plan.grid.alloc_x(),
            ny: self.plan.grid.alloc_y(),
            planes: ext.len(),
        };
        let vel = std::mem::take(&mut *guards[VEL]);
        let mut prev = std::mem::take(&mut *guards[PREV]);
        let mut curr = std::mem::take(&mut *guards[CURR]);
        let mut next = std::mem::take(&mut *guards[NEXT]);
        let mut result = Ok(());
        for j in 1..=self.plan.tb_steps {
            // cells the step does not update carry over unchanged
            next[..n].copy_from_slice(&curr[..n]);
            let region = self.plan.step_region(i, j).relative_to(ext.start);
            result = step(&prev, &curr, &vel, &mut next, dims, region, self.coeffs);
            if result.is_err() {
                break;
            }
            std::mem::swap(&mut prev, &mut curr);
            std::mem::swap(&mut curr, &mut next);
        }
        *guards[VEL] = vel;
        *guards[PREV] = prev;
        *guards[CURR] = curr;
        *guards[NEXT] = next;
        result
    }

    fn compress(&self, i: usize) -> Result<()> {
        let lane = i % self.lanes;
        let owned = self.plan.chunks[i].owned;
        for &d in &WRITTEN_BACK {
            let t = TRANSFERRED.iter().position(|&x| x == d).unwrap();
            let fl = self.store.working[self.slot(i)][d].lock().unwrap();
            let mut hf = self.store.half[lane][t].lock().unwrap();
            let src = &fl[self.local(i, owned)];
            let len = encoded_size(&self.wire, src.len() as u64) as usize;
            codec::encode_into(&self.wire, src, &mut hf[..len])?;
        }
        Ok(())
    }

    fn d2h(&self, i: usize) -> Result<()> {
        let lane = i % self.lanes;
        let owned = self.plan.chunks[i].owned;
        let count = owned.len() * self.plane();
        let len = encoded_size(&self.wire, count as u64) as usize;
        let mut decoded = Vec::with_capacity(WRITTEN_BACK.len());
        for &d in &WRITTEN_BACK {
            let bytes = if self.mode.compresses() {
                let t = TRANSFERRED.iter().position(|&x| x == d).unwrap();
                self.store.half[lane][t].lock().unwrap()[..len].to_vec()
            } else {
                let fl = self.store.working[self.slot(i)][d].lock().unwrap();
                codec::encode(&CodecSpec::Identity, &fl[self.local(i, owned)])?
            };
            decoded.push(codec::decode(&self.wire, &bytes, count)?);
        }
        self.write_back(owned, &decoded);
        Ok(())
    }

    /// Replaces the owned planes of every written-back dataset in one critical section.
    fn write_back(&self, owned: PlaneRange, decoded: &[Vec<f64>]) {
        let mut host = self.host.lock().unwrap();
        for (&d, values) in WRITTEN_BACK.iter().zip(decoded) {
            host_field_mut(&mut host, d)
                .planes_mut(owned)
                .copy_from_slice(values);
        }
    }
}

impl OpRunner for SweepOps<'_> {
    fn run_op(&self, node: &OpNode) -> Result<()> {
        if let Some(f) = self.fault {
            if f.op == node.kind && f.chunk == node.chunk {
                return Err(Error::DeviceFault(format!(
                    "injected fault in {} of sweep {}",
                    node.label(),
                    f.sweep
                )));
            }
        }
        let i = node.chunk;
        match node.kind {
            OpKind::H2D => self.h2d(i),
            OpKind::ShareCopy => self.share_copy(i),
            OpKind::Decompress => self.decompress(i),
            OpKind::Compute => self.compute(i),
            OpKind::Compress => self.compress(i),
            OpKind::D2H => self.d2h(i),
        }
    }
}
