//! Dependency DAG of per-chunk device operations and its lowering onto
//! event-synchronized lanes.
//!
//! In single-working-buffer mode every chunk's decompress/compute/compress
//! block runs in the one shared working buffer. The lowering hands that
//! buffer from lane to lane with an event recorded after each compress and
//! waited on before the next chunk's decompress, with the previous chunk's
//! compress and device-to-host copy deferred into the next loop iteration
//! and a drain epilogue for the last chunk.

use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{encoded_size, CodecSpec};
use crate::domain::{ChunkPlan, DatasetDecl};
use crate::error::{Error, Result};
use crate::trace::TraceEvent;

pub const DEFAULT_LANES: usize = 3;

/// Device-side organization of an out-of-core run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Raw transfers into one private full-size working set per lane.
    Baseline,
    /// Compressed transfers; one private working set per lane.
    Compress,
    /// Compressed transfers; a single working set shared by all lanes.
    CompressSwb,
}

impl ScheduleMode {
    pub fn compresses(&self) -> bool {
        !matches!(self, Self::Baseline)
    }

    pub fn shared_working_buffer(&self) -> bool {
        matches!(self, Self::CompressSwb)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Compress => "compress",
            Self::CompressSwb => "compress-swb",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "ooc-baseline" => Ok(Self::Baseline),
            "compress" | "ooc-compress" => Ok(Self::Compress),
            "compress-swb" | "ooc-compress-swb" | "swb" => Ok(Self::CompressSwb),
            other => Err(Error::Config(format!("unknown schedule mode `{other}`"))),
        }
    }
}

/// Operation kinds in lane-issue priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    H2D,
    /// Device-to-device copy of a shared overlap between private working sets.
    ShareCopy,
    Decompress,
    Compute,
    Compress,
    D2H,
}

impl OpKind {
    pub fn is_transfer(&self) -> bool {
        matches!(self, Self::H2D | Self::D2H)
    }

    pub fn is_kernel(&self) -> bool {
        !self.is_transfer()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::H2D => "H2D",
            Self::ShareCopy => "ShareCopy",
            Self::Decompress => "Decompress",
            Self::Compute => "Compute",
            Self::Compress => "Compress",
            Self::D2H => "D2H",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferKind {
    /// Full-size working buffers (`fl_buf`), one per dataset, handed off together.
    Working,
    /// Main area of a half-size buffer (`hf_buf`).
    Half,
    /// Tail area of a half-size buffer holding a retained overlap segment.
    Retained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferPart {
    All,
    /// Leading planes received from the previous chunk.
    Head,
    /// Everything except the head.
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BufferRef {
    pub kind: BufferKind,
    /// Lane that owns the buffer; `None` for the shared working buffer.
    pub slot: Option<usize>,
    pub part: BufferPart,
}

impl BufferRef {
    pub fn working(slot: Option<usize>) -> Self {
        Self {
            kind: BufferKind::Working,
            slot,
            part: BufferPart::All,
        }
    }

    pub fn half(lane: usize) -> Self {
        Self {
            kind: BufferKind::Half,
            slot: Some(lane),
            part: BufferPart::All,
        }
    }

    pub fn retained(lane: usize) -> Self {
        Self {
            kind: BufferKind::Retained,
            slot: Some(lane),
            part: BufferPart::All,
        }
    }

    pub fn with_part(mut self, part: BufferPart) -> Self {
        self.part = part;
        self
    }

    pub fn overlaps(&self, other: &BufferRef) -> bool {
        self.kind == other.kind
            && self.slot == other.slot
            && (self.part == BufferPart::All
                || other.part == BufferPart::All
                || self.part == other.part)
    }

    /// Name of the whole buffer, e.g. `fl_buf`, `fl_buf[1]`, `hf_buf[2]`.
    pub fn name(&self) -> String {
        let base = match self.kind {
            BufferKind::Working => "fl_buf",
            BufferKind::Half => "hf_buf",
            BufferKind::Retained => "hf_buf.retained",
        };
        match self.slot {
            Some(s) => format!("{base}[{s}]"),
            None => base.to_owned(),
        }
    }
}

impl fmt::Display for BufferRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())?;
        match self.part {
            BufferPart::All => Ok(()),
            BufferPart::Head => f.write_str(".head"),
            BufferPart::Body => f.write_str(".body"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BufferAccess {
    pub buffer: BufferRef,
    pub write: bool,
}

/// Why an edge exists; cross-lane edges are realized with events of the
/// matching [`EventFamily`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    /// Intra-chunk operation chain.
    Chain,
    /// Working-buffer handoff from one chunk's compress to the next chunk's decompress.
    Handoff,
    /// The next chunk decompresses an overlap segment transferred with this chunk.
    OverlapReady,
    /// A retained overlap segment has been consumed; its half buffer may be refilled.
    Release,
    /// A lane's buffers are reused by a later chunk.
    LaneReuse,
    /// Overlap copy between private working sets.
    Share,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: usize,
    pub kind: OpKind,
    pub chunk: usize,
    pub lane: usize,
    pub accesses: Vec<BufferAccess>,
    /// Incoming dependency edges.
    pub deps: Vec<Edge>,
    /// Payload bytes moved (transfers and device copies).
    pub bytes: u64,
    /// Elements processed (kernels).
    pub cells: u64,
}

impl OpNode {
    pub fn label(&self) -> String {
        format!("{}_{}", self.kind, self.chunk)
    }

    /// The working buffer this op holds on behalf of its chunk, if any.
    pub fn working_tenure(&self) -> Option<BufferRef> {
        self.accesses
            .iter()
            .filter(|a| a.buffer.kind == BufferKind::Working)
            .find(|a| match self.kind {
                // a share copy only reads the source set; it holds the destination
                OpKind::ShareCopy => a.write,
                _ => true,
            })
            .map(|a| BufferRef {
                part: BufferPart::All,
                ..a.buffer
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    pub mode: ScheduleMode,
    pub lanes: usize,
    pub n_chunks: usize,
    pub sharing: bool,
    pub nodes: Vec<OpNode>,
}

impl Dag {
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.nodes.iter().flat_map(|n| n.deps.iter())
    }

    pub fn find(&self, kind: OpKind, chunk: usize) -> Option<&OpNode> {
        self.nodes.iter().find(|n| n.kind == kind && n.chunk == chunk)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Graphviz rendering with one cluster per lane.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph schedule {\n  rankdir=LR;\n  node [shape=box];\n");
        for lane in 0..self.lanes {
            let _ = writeln!(s, "  subgraph cluster_lane{lane} {{\n    label=\"lane {lane}\";");
            for n in self.nodes.iter().filter(|n| n.lane == lane) {
                let _ = writeln!(s, "    n{} [label=\"{}\"];", n.id, n.label());
            }
            s.push_str("  }\n");
        }
        for e in self.edges() {
            let cross = self.nodes[e.from].lane != self.nodes[e.to].lane;
            let style = if cross { " [style=dashed]" } else { "" };
            let _ = writeln!(s, "  n{} -> n{}{style};", e.from, e.to);
        }
        s.push_str("}\n");
        s
    }
}

/// Builds the per-sweep operation DAG.
pub fn build_dag(
    plan: &ChunkPlan,
    mode: ScheduleMode,
    datasets: &[DatasetDecl],
    codec: &CodecSpec,
    lanes: usize,
) -> Result<Dag> {
    if lanes == 0 {
        return Err(Error::Config("at least one lane is required".into()));
    }
    if plan.sharing && plan.n_chunks > 1 && lanes < 2 {
        return Err(Error::Config(
            "region sharing needs at least two lanes: one lane would overwrite its retained overlap"
                .into(),
        ));
    }
    let n = plan.n_chunks;
    let plane = plan.grid.plane_elems() as u64;
    let plane_bytes = plan.grid.plane_bytes();
    let transferred = datasets.iter().filter(|d| d.is_transferred()).count() as u64;
    let written_back = datasets.iter().filter(|d| d.is_written_back()).count() as u64;
    let wire = if mode.compresses() {
        *codec
    } else {
        CodecSpec::Identity
    };
    let lane_of = |i: usize| i % lanes;
    let slot_of = |i: usize| (!mode.shared_working_buffer()).then_some(lane_of(i));

    let mut nodes: Vec<OpNode> = Vec::new();
    let mut ids: HashMap<(OpKind, usize), usize> = HashMap::new();
    let mut add = |nodes: &mut Vec<OpNode>, kind, chunk, lane, accesses, bytes, cells| {
        let id = nodes.len();
        nodes.push(OpNode {
            id,
            kind,
            chunk,
            lane,
            accesses,
            deps: Vec::new(),
            bytes,
            cells,
        });
        ids.insert((kind, chunk), id);
        id
    };
    let w = |buffer: BufferRef| BufferAccess {
        buffer,
        write: true,
    };
    let r = |buffer: BufferRef| BufferAccess {
        buffer,
        write: false,
    };

    for (i, chunk) in plan.chunks.iter().enumerate() {
        let s = lane_of(i);
        let resident = plan.resident_overlap(i);
        let h2d_bytes = transferred
            * chunk
                .segments
                .iter()
                .map(|seg| encoded_size(&wire, seg.planes.len() as u64 * plane))
                .sum::<u64>();
        let owned_elems = chunk.owned.len() as u64 * plane;
        let d2h_bytes = written_back * encoded_size(&wire, owned_elems);
        let working = BufferRef::working(slot_of(i));

        if mode.compresses() {
            let mut h2d_acc = vec![w(BufferRef::half(s))];
            if chunk.overlap_head().is_some() {
                h2d_acc.push(w(BufferRef::retained(s)));
            }
            add(&mut nodes, OpKind::H2D, i, s, h2d_acc, h2d_bytes, 0);

            let mut dec_acc = vec![r(BufferRef::half(s))];
            if resident.is_some() {
                dec_acc.push(r(BufferRef::retained(lane_of(i - 1))));
            }
            dec_acc.push(w(working));
            let dec_cells = transferred * chunk.extent.len() as u64 * plane;
            add(&mut nodes, OpKind::Decompress, i, s, dec_acc, 0, dec_cells);
            add(&mut nodes, OpKind::Compute, i, s, vec![w(working)], 0, plan.compute_cells(i));
            add(
                &mut nodes,
                OpKind::Compress,
                i,
                s,
                vec![r(working), w(BufferRef::half(s))],
                0,
                written_back * owned_elems,
            );
            add(&mut nodes, OpKind::D2H, i, s, vec![r(BufferRef::half(s))], d2h_bytes, 0);
        } else {
            let h2d_part = if resident.is_some() {
                BufferPart::Body
            } else {
                BufferPart::All
            };
            add(
                &mut nodes,
                OpKind::H2D,
                i,
                s,
                vec![w(working.with_part(h2d_part))],
                h2d_bytes,
                0,
            );
            if let Some(ov) = resident {
                // the overlap is the tail of the previous set, inside its body
                let src = BufferRef::working(slot_of(i - 1)).with_part(BufferPart::Body);
                add(
                    &mut nodes,
                    OpKind::ShareCopy,
                    i,
                    lane_of(i - 1),
                    vec![r(src), w(working.with_part(BufferPart::Head))],
                    transferred * ov.len() as u64 * plane_bytes,
                    0,
                );
            }
            add(&mut nodes, OpKind::Compute, i, s, vec![w(working)], 0, plan.compute_cells(i));
            add(&mut nodes, OpKind::D2H, i, s, vec![r(working)], d2h_bytes, 0);
        }
    }

    let id = |kind, chunk| ids[&(kind, chunk)];
    let mut edges: Vec<Edge> = Vec::new();
    let mut edge = |from, to, kind| edges.push(Edge { from, to, kind });
    for i in 0..n {
        let chain: Vec<usize> = if mode.compresses() {
            [OpKind::H2D, OpKind::Decompress, OpKind::Compute, OpKind::Compress, OpKind::D2H]
                .iter()
                .map(|k| id(*k, i))
                .collect()
        } else {
            [OpKind::H2D, OpKind::Compute, OpKind::D2H]
                .iter()
                .map(|k| id(*k, i))
                .collect()
        };
        for pair in chain.windows(2) {
            edge(pair[0], pair[1], EdgeKind::Chain);
        }
        if i >= lanes {
            edge(id(OpKind::D2H, i - lanes), id(OpKind::H2D, i), EdgeKind::LaneReuse);
        }
        if mode.shared_working_buffer() && i > 0 {
            edge(id(OpKind::Compress, i - 1), id(OpKind::Decompress, i), EdgeKind::Handoff);
        }
        if plan.sharing && i > 0 {
            if mode.compresses() {
                edge(id(OpKind::H2D, i - 1), id(OpKind::Decompress, i), EdgeKind::OverlapReady);
                // H2D_i refills the tail of hf_buf[lane(i)], last read by the
                // decompress of the chunk after the lane's previous occupant
                if i >= lanes && plan.chunks[i].overlap_head().is_some() {
                    edge(
                        id(OpKind::Decompress, i - lanes + 1),
                        id(OpKind::H2D, i),
                        EdgeKind::Release,
                    );
                }
            } else {
                let share = id(OpKind::ShareCopy, i);
                edge(id(OpKind::H2D, i - 1), share, EdgeKind::Share);
                edge(share, id(OpKind::Compute, i - 1), EdgeKind::Share);
                edge(share, id(OpKind::Compute, i), EdgeKind::Share);
                if i >= lanes {
                    edge(id(OpKind::D2H, i - lanes), share, EdgeKind::LaneReuse);
                }
            }
        }
    }
    for e in edges {
        nodes[e.to].deps.push(e);
    }
    for n in &mut nodes {
        n.deps.sort_by_key(|e| (e.from, e.kind));
        n.deps.dedup();
    }

    Ok(Dag {
        mode,
        lanes,
        n_chunks: n,
        sharing: plan.sharing,
        nodes,
    })
}

/// Kahn's algorithm; ties go to the lowest (chunk, kind, id).
pub fn topo_order(dag: &Dag) -> Result<Vec<usize>> {
    let n = dag.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in dag.edges() {
        if e.from >= n || e.to >= n {
            return Err(Error::Schedule(format!("edge {}->{} out of range", e.from, e.to)));
        }
        indeg[e.to] += 1;
        succ[e.from].push(e.to);
    }
    let key = |id: usize| Reverse((dag.nodes[id].chunk, dag.nodes[id].kind, id));
    let mut ready: BinaryHeap<_> = (0..n).filter(|&v| indeg[v] == 0).map(key).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, _, v))) = ready.pop() {
        order.push(v);
        for &t in &succ[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                ready.push(key(t));
            }
        }
    }
    if order.len() < n {
        return Err(Error::CycleDetected(find_cycle(dag, &indeg)));
    }
    Ok(order)
}

fn find_cycle(dag: &Dag, indeg: &[usize]) -> Vec<usize> {
    // every unsorted node has an unsorted predecessor; walk back until a repeat
    let preds = |v: usize| {
        dag.nodes[v]
            .deps
            .iter()
            .map(|e| e.from)
            .find(|&u| indeg[u] > 0)
    };
    let Some(start) = (0..indeg.len()).find(|&v| indeg[v] > 0) else {
        return Vec::new();
    };
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut path = Vec::new();
    let mut v = start;
    while !seen.contains_key(&v) {
        seen.insert(v, path.len());
        path.push(v);
        match preds(v) {
            Some(u) => v = u,
            None => return path,
        }
    }
    let mut cycle = path[seen[&v]..].to_vec();
    cycle.reverse();
    cycle
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventFamily {
    /// Working-buffer handoff events (`evt[s]`).
    Handoff,
    OverlapReady,
    Release,
    Share,
    LaneReuse,
    Chain,
}

impl EventFamily {
    fn of_edge(kind: EdgeKind) -> Self {
        match kind {
            EdgeKind::Handoff => Self::Handoff,
            EdgeKind::OverlapReady => Self::OverlapReady,
            EdgeKind::Release => Self::Release,
            EdgeKind::Share => Self::Share,
            EdgeKind::LaneReuse => Self::LaneReuse,
            EdgeKind::Chain => Self::Chain,
        }
    }

    fn prefix(&self) -> &'static str {
        match self {
            Self::Handoff => "evt",
            Self::OverlapReady => "ready",
            Self::Release => "release",
            Self::Share => "share",
            Self::LaneReuse => "reuse",
            Self::Chain => "chain",
        }
    }
}

/// An event token; `index` is the lane that records it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId {
    pub family: EventFamily,
    pub index: usize,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.family.prefix(), self.index)
    }
}

impl Serialize for EventId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (prefix, rest) = s
            .split_once('[')
            .ok_or_else(|| serde::de::Error::custom(format!("bad event `{s}`")))?;
        let index = rest
            .trim_end_matches(']')
            .parse()
            .map_err(serde::de::Error::custom)?;
        let family = [
            EventFamily::Handoff,
            EventFamily::OverlapReady,
            EventFamily::Release,
            EventFamily::Share,
            EventFamily::LaneReuse,
            EventFamily::Chain,
        ]
        .into_iter()
        .find(|f| f.prefix() == prefix)
        .ok_or_else(|| serde::de::Error::custom(format!("unknown event family `{prefix}`")))?;
        Ok(Self { family, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum Action {
    Op { node: usize },
    Record { event: EventId },
    Wait { event: EventId },
}

/// Loop iteration in which an action is issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Iteration {
    Loop(usize),
    Epilogue(EpilogueTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpilogueTag {
    Epilogue,
}

impl Iteration {
    pub const EPILOGUE: Iteration = Iteration::Epilogue(EpilogueTag::Epilogue);
}

impl fmt::Display for Iteration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Loop(i) => write!(f, "{i}"),
            Self::Epilogue(_) => f.write_str("epilogue"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub lane: usize,
    pub iteration: Iteration,
    #[serde(flatten)]
    pub action: Action,
}

/// Global issue order of lane actions for one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoweredSchedule {
    pub mode: ScheduleMode,
    pub lanes: usize,
    pub n_chunks: usize,
    pub nodes: Vec<OpNode>,
    pub actions: Vec<ScheduledAction>,
}

impl LoweredSchedule {
    pub fn lane_actions(&self, lane: usize) -> impl Iterator<Item = &ScheduledAction> {
        self.actions.iter().filter(move |a| a.lane == lane)
    }

    pub fn op_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a.action, Action::Op { .. }))
            .count()
    }

    /// Compact export: one entry per action naming op kind and chunk.
    pub fn export(&self) -> ScheduleExport {
        let actions = self
            .actions
            .iter()
            .map(|a| {
                let (action, chunk, event) = match a.action {
                    Action::Op { node } => {
                        let n = &self.nodes[node];
                        (n.kind.as_str().to_owned(), Some(n.chunk), None)
                    }
                    Action::Record { event } => ("record".to_owned(), None, Some(event)),
                    Action::Wait { event } => ("wait".to_owned(), None, Some(event)),
                };
                ExportedAction {
                    iteration: a.iteration,
                    lane: a.lane,
                    action,
                    chunk,
                    event,
                }
            })
            .collect();
        ScheduleExport {
            mode: self.mode,
            lanes: self.lanes,
            chunks: self.n_chunks,
            actions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }

    /// Removes the `k`-th wait action (in issue order); used for mutation testing.
    pub fn without_wait(&self, k: usize) -> Option<LoweredSchedule> {
        let pos = self
            .actions
            .iter()
            .enumerate()
            .filter(|(_, a)| matches!(a.action, Action::Wait { .. }))
            .nth(k)?
            .0;
        let mut out = self.clone();
        out.actions.remove(pos);
        Some(out)
    }

    pub fn wait_count(&self) -> usize {
        self.actions
            .iter()
            .filter(|a| matches!(a.action, Action::Wait { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleExport {
    pub mode: ScheduleMode,
    pub lanes: usize,
    pub chunks: usize,
    pub actions: Vec<ExportedAction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedAction {
    #[serde(rename = "iter")]
    pub iteration: Iteration,
    pub lane: usize,
    pub action: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chunk: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub event: Option<EventId>,
}

/// Small dense bitset over node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
struct NodeSet(Vec<u64>);

impl NodeSet {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    fn insert(&mut self, v: usize) {
        self.0[v / 64] |= 1 << (v % 64);
    }

    fn contains(&self, v: usize) -> bool {
        self.0[v / 64] & (1 << (v % 64)) != 0
    }

    fn union(&mut self, other: &NodeSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Emits lane actions for `order`, turning cross-lane edges into record/wait pairs.
///
/// Cross-lane edges already implied by lane order and earlier waits get no
/// event. In single-working-buffer mode the handoff event is always recorded
/// after a compress and always waited on before a decompress, including the
/// first chunk's wait on an event nothing has recorded yet.
pub fn lower_to_lanes(dag: &Dag, order: &[usize]) -> Result<LoweredSchedule> {
    let n = dag.nodes.len();
    let mut position = vec![usize::MAX; n];
    for (p, &v) in order.iter().enumerate() {
        if v >= n || position[v] != usize::MAX {
            return Err(Error::Schedule(format!("order repeats or misses node {v}")));
        }
        position[v] = p;
    }
    if order.len() != n {
        return Err(Error::Schedule(format!(
            "order lists {} of {n} nodes",
            order.len()
        )));
    }
    for e in dag.edges() {
        if position[e.from] > position[e.to] {
            return Err(Error::Schedule(format!(
                "order places {} before its dependency {}",
                dag.nodes[e.to].label(),
                dag.nodes[e.from].label()
            )));
        }
    }

    let lanes = dag.lanes;
    let swb = dag.mode.shared_working_buffer();
    let handoff = |lane: usize| EventId {
        family: EventFamily::Handoff,
        index: lane,
    };

    // pass 1: decide which cross-lane edges need an event
    let mut hb: Vec<NodeSet> = vec![NodeSet::new(n); n];
    let mut last_on_lane: Vec<Option<usize>> = vec![None; lanes];
    let mut last_handoff_src: Vec<Option<usize>> = vec![None; lanes];
    let mut waits_for: Vec<Vec<(EventId, Option<usize>)>> = vec![Vec::new(); n];
    let mut records_after: Vec<BTreeSet<EventId>> = vec![BTreeSet::new(); n];
    for &v in order {
        let node = &dag.nodes[v];
        let mut pred = NodeSet::new(n);
        if let Some(u) = last_on_lane[node.lane] {
            pred.union(&hb[u]);
            pred.insert(u);
        }
        if swb && node.kind == OpKind::Decompress {
            let prev = (node.lane + lanes - 1) % lanes;
            let src = last_handoff_src[prev];
            if let Some(u) = src {
                pred.union(&hb[u]);
                pred.insert(u);
            }
            waits_for[v].push((handoff(prev), src));
        }
        for e in &node.deps {
            let u = e.from;
            if dag.nodes[u].lane == node.lane || pred.contains(u) {
                continue;
            }
            let event = EventId {
                family: EventFamily::of_edge(e.kind),
                index: dag.nodes[u].lane,
            };
            records_after[u].insert(event);
            waits_for[v].push((event, Some(u)));
            pred.union(&hb[u]);
            pred.insert(u);
        }
        if swb && node.kind == OpKind::Compress {
            records_after[v].insert(handoff(node.lane));
            last_handoff_src[node.lane] = Some(v);
        }
        hb[v] = pred;
        last_on_lane[node.lane] = Some(v);
    }

    // pass 2: emit, checking that every wait sees the record it was planned against
    let iteration_of = |v: usize| {
        let node = &dag.nodes[v];
        let deferred = swb && matches!(node.kind, OpKind::Compress | OpKind::D2H);
        if !deferred {
            Iteration::Loop(node.chunk)
        } else if node.chunk + 1 == dag.n_chunks {
            Iteration::Epilogue(EpilogueTag::Epilogue)
        } else {
            Iteration::Loop(node.chunk + 1)
        }
    };
    let mut actions = Vec::new();
    let mut latest_record: HashMap<EventId, usize> = HashMap::new();
    for &v in order {
        let node = &dag.nodes[v];
        let iteration = iteration_of(v);
        for (event, src) in &waits_for[v] {
            if latest_record.get(event).copied() != *src {
                return Err(Error::Schedule(format!(
                    "wait on {event} before {} would not observe the record after {:?}",
                    node.label(),
                    src.map(|u| dag.nodes[u].label())
                )));
            }
            actions.push(ScheduledAction {
                lane: node.lane,
                iteration,
                action: Action::Wait { event: *event },
            });
        }
        actions.push(ScheduledAction {
            lane: node.lane,
            iteration,
            action: Action::Op { node: v },
        });
        for event in &records_after[v] {
            latest_record.insert(*event, v);
            actions.push(ScheduledAction {
                lane: node.lane,
                iteration,
                action: Action::Record { event: *event },
            });
        }
    }

    Ok(LoweredSchedule {
        mode: dag.mode,
        lanes,
        n_chunks: dag.n_chunks,
        nodes: dag.nodes.clone(),
        actions,
    })
}

/// Convenience: DAG, topological order and lowering in one call.
pub fn schedule(
    plan: &ChunkPlan,
    mode: ScheduleMode,
    datasets: &[DatasetDecl],
    codec: &CodecSpec,
    lanes: usize,
) -> Result<LoweredSchedule> {
    let dag = build_dag(plan, mode, datasets, codec, lanes)?;
    let order = topo_order(&dag)?;
    lower_to_lanes(&dag, &order)
}

/// Happens-before closure implied by a lowered schedule: lane FIFO plus each
/// wait matched to the most recent prior record of its event.
pub fn happens_before(schedule: &LoweredSchedule) -> Vec<Vec<bool>> {
    let n = schedule.nodes.len();
    let mut hb: Vec<NodeSet> = vec![NodeSet::new(n); n];
    let mut lane_state: Vec<Option<NodeSet>> = vec![None; schedule.lanes];
    let mut last_op_on_lane: Vec<Option<usize>> = vec![None; schedule.lanes];
    let mut recorded: HashMap<EventId, NodeSet> = HashMap::new();
    let mut done: Vec<bool> = vec![false; n];
    for a in &schedule.actions {
        let lane = a.lane;
        let state = lane_state[lane].get_or_insert_with(|| NodeSet::new(n));
        match a.action {
            Action::Op { node } => {
                hb[node] = state.clone();
                state.insert(node);
                last_op_on_lane[lane] = Some(node);
                done[node] = true;
            }
            Action::Record { event } => {
                recorded.insert(event, state.clone());
            }
            Action::Wait { event } => {
                if let Some(set) = recorded.get(&event) {
                    state.union(set);
                }
            }
        }
    }
    (0..n)
        .map(|v| (0..n).map(|u| done[v] && hb[v].contains(u)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusivityViolation {
    pub buffer: String,
    pub first: String,
    pub second: String,
}

impl fmt::Display for ExclusivityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} and {} race on {}", self.first, self.second, self.buffer)
    }
}

/// Structural check: every pair of ops touching an overlapping buffer with a
/// write on either side must be ordered by happens-before.
pub fn validate_exclusive(schedule: &LoweredSchedule) -> Vec<ExclusivityViolation> {
    let hb = happens_before(schedule);
    let nodes = &schedule.nodes;
    let mut out = Vec::new();
    for b in 0..nodes.len() {
        for a in 0..b {
            if hb[b][a] || hb[a][b] {
                continue;
            }
            let clash = nodes[a].accesses.iter().find_map(|x| {
                nodes[b]
                    .accesses
                    .iter()
                    .find(|y| (x.write || y.write) && x.buffer.overlaps(&y.buffer))
                    .map(|y| if x.buffer.part == BufferPart::All { y.buffer } else { x.buffer })
            });
            if let Some(buf) = clash {
                out.push(ExclusivityViolation {
                    buffer: buf.to_string(),
                    first: nodes[a].label(),
                    second: nodes[b].label(),
                });
            }
        }
    }
    out
}

/// Temporal check: per working buffer, the tenures of different chunks (first
/// to last op holding the buffer) must not overlap in time.
pub fn validate_exclusive_trace(events: &[TraceEvent]) -> Vec<ExclusivityViolation> {
    let mut tenures: HashMap<(String, usize, usize), (f64, f64)> = HashMap::new();
    for e in events {
        if let Some(buf) = &e.buffer {
            let t = tenures
                .entry((buf.clone(), e.sweep, e.chunk))
                .or_insert((e.t_start, e.t_end));
            t.0 = t.0.min(e.t_start);
            t.1 = t.1.max(e.t_end);
        }
    }
    let mut list: Vec<_> = tenures.into_iter().collect();
    list.sort_by(|a, b| {
        (a.0 .0.as_str(), a.1 .0, a.0 .1, a.0 .2)
            .partial_cmp(&(b.0 .0.as_str(), b.1 .0, b.0 .1, b.0 .2))
            .unwrap()
    });
    let mut out = Vec::new();
    for (i, ((buf, sweep, chunk), (_, end))) in list.iter().enumerate() {
        for ((buf2, sweep2, chunk2), (start2, _)) in &list[i + 1..] {
            if buf2 != buf {
                break;
            }
            if *start2 < *end {
                out.push(ExclusivityViolation {
                    buffer: buf.clone(),
                    first: format!("chunk {chunk} (sweep {sweep})"),
                    second: format!("chunk {chunk2} (sweep {sweep2})"),
                });
            }
        }
    }
    out
}
