//! Grid geometry, dataset declarations and the z-slab chunk decomposition.
//!
//! All plane indices in this module are *allocated* plane indices: plane 0 is
//! the first boundary-halo plane and the interior occupies
//! `[R, nz + R)`. Owned intervals are also exposed in interior coordinates via
//! [`ChunkRecord::owned_interior`].

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::codec::{encoded_size, CodecSpec};
use crate::error::{Error, Result};

pub const VELOCITY: &str = "velocity";
pub const PRESSURE_PREV: &str = "pressure_prev";
pub const PRESSURE_CURR: &str = "pressure_curr";
pub const PRESSURE_NEXT: &str = "pressure_next";

/// Interior extent of a 3-D volume plus its boundary halo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Planes of halo per side per time step.
    pub halo_radius: usize,
    /// Bytes per element.
    pub element_size: usize,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, halo_radius: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Config(format!(
                "grid extents must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        if halo_radius == 0 {
            return Err(Error::Config("halo radius must be at least 1".into()));
        }
        Ok(Self {
            nx,
            ny,
            nz,
            halo_radius,
            element_size: std::mem::size_of::<f64>(),
        })
    }

    pub fn cubic(n: usize, halo_radius: usize) -> Result<Self> {
        Self::new(n, n, n, halo_radius)
    }

    pub fn alloc_x(&self) -> usize {
        self.nx + 2 * self.halo_radius
    }

    pub fn alloc_y(&self) -> usize {
        self.ny + 2 * self.halo_radius
    }

    pub fn alloc_z(&self) -> usize {
        self.nz + 2 * self.halo_radius
    }

    /// Elements in one allocated xy-plane.
    pub fn plane_elems(&self) -> usize {
        self.alloc_x() * self.alloc_y()
    }

    pub fn plane_bytes(&self) -> u64 {
        (self.plane_elems() * self.element_size) as u64
    }

    /// Interior cells updated per plane (boundary columns excluded).
    pub fn interior_plane_cells(&self) -> u64 {
        (self.nx * self.ny) as u64
    }

    pub fn alloc_elems(&self) -> usize {
        self.plane_elems() * self.alloc_z()
    }

    pub fn total_bytes(&self, num_datasets: usize) -> u64 {
        (num_datasets * self.alloc_elems() * self.element_size) as u64
    }

    pub fn interior_planes(&self) -> PlaneRange {
        PlaneRange::new(self.halo_radius, self.nz + self.halo_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    ReadOnly,
    ReadWrite,
    /// Lives only in device working memory; never transferred or compressed.
    DeviceScratch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDecl {
    pub name: String,
    pub access: Access,
}

impl DatasetDecl {
    pub fn new(name: impl Into<String>, access: Access) -> Self {
        Self {
            name: name.into(),
            access,
        }
    }

    pub fn is_transferred(&self) -> bool {
        self.access != Access::DeviceScratch
    }

    pub fn is_written_back(&self) -> bool {
        self.access == Access::ReadWrite
    }
}

/// The four fields of the acoustic wave configuration, in working-buffer order.
pub fn acoustic_datasets() -> Vec<DatasetDecl> {
    vec![
        DatasetDecl::new(VELOCITY, Access::ReadOnly),
        DatasetDecl::new(PRESSURE_PREV, Access::ReadWrite),
        DatasetDecl::new(PRESSURE_CURR, Access::ReadWrite),
        DatasetDecl::new(PRESSURE_NEXT, Access::DeviceScratch),
    ]
}

/// Half-open interval of planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlaneRange {
    pub start: usize,
    pub end: usize,
}

impl PlaneRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, plane: usize) -> bool {
        self.start <= plane && plane < self.end
    }

    pub fn contains_range(&self, other: &PlaneRange) -> bool {
        other.is_empty() || (self.start <= other.start && other.end <= self.end)
    }

    pub fn intersect(&self, other: &PlaneRange) -> PlaneRange {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end).max(start);
        PlaneRange { start, end }
    }

    /// The same interval expressed relative to `origin`.
    pub fn relative_to(&self, origin: usize) -> PlaneRange {
        PlaneRange::new(self.start - origin, self.end - origin)
    }

    pub fn as_range(&self) -> Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for PlaneRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentRole {
    /// Tail of a chunk's extent that the next chunk reuses from device memory.
    OverlapHead,
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferSegment {
    pub planes: PlaneRange,
    pub role: SegmentRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub owned: PlaneRange,
    pub extent: PlaneRange,
    /// Segments transferred host-to-device for every transferred dataset,
    /// ascending by plane.
    pub segments: Vec<TransferSegment>,
}

impl ChunkRecord {
    pub fn owned_interior(&self, halo_radius: usize) -> PlaneRange {
        self.owned.relative_to(halo_radius)
    }

    pub fn transferred_planes(&self) -> usize {
        self.segments.iter().map(|s| s.planes.len()).sum()
    }

    pub fn overlap_head(&self) -> Option<&TransferSegment> {
        self.segments
            .iter()
            .find(|s| s.role == SegmentRole::OverlapHead)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub grid: GridSpec,
    pub n_chunks: usize,
    pub tb_steps: usize,
    pub sharing: bool,
    pub chunks: Vec<ChunkRecord>,
}

impl ChunkPlan {
    pub fn halo_depth(&self) -> usize {
        halo_depth(self.tb_steps, self.grid.halo_radius)
    }

    /// Planes shared between chunk `i` and chunk `i + 1`.
    pub fn overlap(&self, i: usize) -> PlaneRange {
        let a = &self.chunks[i].extent;
        let b = &self.chunks[i + 1].extent;
        a.intersect(b)
    }

    /// Planes of chunk `i` that are already resident from chunk `i - 1`.
    pub fn resident_overlap(&self, i: usize) -> Option<PlaneRange> {
        (self.sharing && i > 0).then(|| self.overlap(i - 1))
    }

    pub fn max_extent_planes(&self) -> usize {
        self.chunks
            .iter()
            .map(|c| c.extent.len())
            .max()
            .unwrap_or(0)
    }

    /// Planes updated during temporal-blocking step `j` (1-based) of chunk `i`.
    ///
    /// Each step shrinks the valid region by one halo radius on every side
    /// that is not a physical boundary; boundary planes are held constant.
    pub fn step_region(&self, i: usize, j: usize) -> PlaneRange {
        let r = self.grid.halo_radius;
        let ext = self.chunks[i].extent;
        let lo = if ext.start == 0 { r } else { ext.start + j * r };
        let hi = if ext.end == self.grid.alloc_z() {
            self.grid.alloc_z() - r
        } else {
            ext.end - j * r
        };
        PlaneRange::new(lo, hi.max(lo))
    }

    /// Interior cells updated by chunk `i` over all of its temporal-blocking steps.
    pub fn compute_cells(&self, i: usize) -> u64 {
        (1..=self.tb_steps)
            .map(|j| self.step_region(i, j).len() as u64)
            .sum::<u64>()
            * self.grid.interior_plane_cells()
    }

    /// Total planes transferred host-to-device per transferred dataset per sweep.
    pub fn transferred_planes(&self) -> usize {
        self.chunks.iter().map(|c| c.transferred_planes()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Halo planes piggybacked per side for `k` temporal-blocking steps.
pub fn halo_depth(k: usize, halo_radius: usize) -> usize {
    k * halo_radius
}

/// Splits the interior along z into `n` slabs and extends each by `k·R` halo planes.
pub fn plan_decomposition(grid: &GridSpec, n: usize, k: usize, sharing: bool) -> Result<ChunkPlan> {
    if n == 0 {
        return Err(Error::Decomposition("chunk count must be positive".into()));
    }
    if k == 0 {
        return Err(Error::Decomposition(
            "temporal-blocking steps must be positive".into(),
        ));
    }
    if n > grid.nz {
        return Err(Error::Decomposition(format!(
            "{n} chunks over {} planes leaves an empty chunk",
            grid.nz
        )));
    }
    let r = grid.halo_radius;
    let depth = halo_depth(k, r);
    let base = grid.nz / n;
    let remainder = grid.nz % n;
    // leading chunks take the remainder, so `base` is the narrowest width
    if n > 1 && depth >= base {
        return Err(Error::Decomposition(format!(
            "halo depth {depth} (k={k}, R={r}) must be below the narrowest owned width {base}"
        )));
    }
    // a middle chunk must not have its two shared overlaps intersect
    if sharing && n > 2 && 2 * depth > base {
        return Err(Error::Decomposition(format!(
            "region sharing needs owned width {base} >= 2*k*R = {}",
            2 * depth
        )));
    }

    let alloc_z = grid.alloc_z();
    let mut owned = Vec::with_capacity(n);
    let mut lo = r;
    for i in 0..n {
        let width = base + usize::from(i < remainder);
        owned.push(PlaneRange::new(lo, lo + width));
        lo += width;
    }
    let extents: Vec<PlaneRange> = owned
        .iter()
        .map(|o| PlaneRange::new(o.start.saturating_sub(depth), (o.end + depth).min(alloc_z)))
        .collect();

    let chunks = (0..n)
        .map(|i| {
            let extent = extents[i];
            let start = if sharing && i > 0 {
                extents[i - 1].end
            } else {
                extent.start
            };
            let head_start = if sharing && i + 1 < n {
                extents[i + 1].start
            } else {
                extent.end
            };
            let mut segments = Vec::with_capacity(2);
            if head_start > start {
                segments.push(TransferSegment {
                    planes: PlaneRange::new(start, head_start),
                    role: SegmentRole::Body,
                });
            }
            if head_start < extent.end {
                segments.push(TransferSegment {
                    planes: PlaneRange::new(head_start.max(start), extent.end),
                    role: SegmentRole::OverlapHead,
                });
            }
            ChunkRecord {
                index: i,
                owned: owned[i],
                extent,
                segments,
            }
        })
        .collect();

    Ok(ChunkPlan {
        grid: *grid,
        n_chunks: n,
        tb_steps: k,
        sharing,
        chunks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    OwnedOverlap,
    OwnedGap,
    ExtentTooNarrow,
    OutOfBounds,
    CoverageGap,
    DoubleCoverage,
    SegmentOutsideExtent,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::OwnedOverlap => "owned-overlap",
            Self::OwnedGap => "owned-gap",
            Self::ExtentTooNarrow => "extent-too-narrow",
            Self::OutOfBounds => "out-of-bounds",
            Self::CoverageGap => "coverage-gap",
            Self::DoubleCoverage => "double-coverage",
            Self::SegmentOutsideExtent => "segment-outside-extent",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanViolation {
    pub kind: ViolationKind,
    pub chunk: usize,
    pub planes: PlaneRange,
}

/// Audits the partition and segment invariants of a plan.
pub fn coverage_check(plan: &ChunkPlan) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let interior = plan.grid.interior_planes();
    let alloc_z = plan.grid.alloc_z();

    let mut cursor = interior.start;
    for c in &plan.chunks {
        if c.owned.start < cursor {
            out.push(PlanViolation {
                kind: ViolationKind::OwnedOverlap,
                chunk: c.index,
                planes: PlaneRange::new(c.owned.start, cursor.min(c.owned.end)),
            });
        } else if c.owned.start > cursor {
            out.push(PlanViolation {
                kind: ViolationKind::OwnedGap,
                chunk: c.index,
                planes: PlaneRange::new(cursor, c.owned.start),
            });
        }
        cursor = cursor.max(c.owned.end);
    }
    if cursor < interior.end {
        out.push(PlanViolation {
            kind: ViolationKind::OwnedGap,
            chunk: plan.chunks.len().saturating_sub(1),
            planes: PlaneRange::new(cursor, interior.end),
        });
    }

    for (i, c) in plan.chunks.iter().enumerate() {
        if c.extent.end > alloc_z {
            out.push(PlanViolation {
                kind: ViolationKind::OutOfBounds,
                chunk: i,
                planes: PlaneRange::new(alloc_z, c.extent.end),
            });
        }
        if !c.extent.contains_range(&c.owned) {
            out.push(PlanViolation {
                kind: ViolationKind::ExtentTooNarrow,
                chunk: i,
                planes: c.owned,
            });
        }

        // per-plane multiplicity of segments plus the resident overlap
        let resident = if plan.sharing && i > 0 {
            plan.chunks[i - 1].extent.intersect(&c.extent)
        } else {
            PlaneRange::new(0, 0)
        };
        let mut stray = None::<PlaneRange>;
        for s in &c.segments {
            if !c.extent.contains_range(&s.planes) {
                stray = Some(s.planes);
            }
        }
        if let Some(planes) = stray {
            out.push(PlanViolation {
                kind: ViolationKind::SegmentOutsideExtent,
                chunk: i,
                planes,
            });
        }
        let count = |p: usize| {
            c.segments.iter().filter(|s| s.planes.contains(p)).count()
                + usize::from(resident.contains(p))
        };
        let mut run: Option<(ViolationKind, usize)> = None;
        for p in c.extent.start..=c.extent.end {
            let kind = if p == c.extent.end {
                None
            } else {
                match count(p) {
                    0 => Some(ViolationKind::CoverageGap),
                    1 => None,
                    _ => Some(ViolationKind::DoubleCoverage),
                }
            };
            match (run, kind) {
                (Some((k0, _)), Some(k1)) if k0 == k1 => {}
                (prev, next) => {
                    if let Some((k0, s0)) = prev {
                        out.push(PlanViolation {
                            kind: k0,
                            chunk: i,
                            planes: PlaneRange::new(s0, p),
                        });
                    }
                    run = next.map(|k| (k, p));
                }
            }
        }
    }
    out
}

/// Device buffer sizes implied by a plan and codec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferGeometry {
    /// Elements in one full-size working buffer (largest chunk extent).
    pub full_elems: u64,
    pub full_bytes: u64,
    /// Half-size buffer bytes at the codec's pure rate, block headers excluded.
    pub half_bytes: u64,
    /// Extra bytes a half buffer needs beyond the pure rate (block headers,
    /// segment padding, retained overlap placement).
    pub half_overhead_bytes: u64,
    pub rate_bits: u32,
}

impl BufferGeometry {
    pub fn half_capacity(&self) -> u64 {
        self.half_bytes + self.half_overhead_bytes
    }

    pub fn rate(&self) -> f64 {
        f64::from(self.rate_bits) / 64.0
    }
}

pub fn buffer_geometry(plan: &ChunkPlan, codec: &CodecSpec) -> BufferGeometry {
    let plane = plan.grid.plane_elems() as u64;
    let full_elems = plan.max_extent_planes() as u64 * plane;
    let full_bytes = full_elems * plan.grid.element_size as u64;
    let rate_bits = codec.rate_bits();
    let half_bytes = (full_bytes * u64::from(codec.payload_bits())).div_ceil(64);

    // main area holds the chunk's own input (or its compressed owned output);
    // the overlap head sits at the tail so compression never clobbers it
    let needed = plan
        .chunks
        .iter()
        .map(|c| {
            let mut body = 0;
            let mut head = 0;
            for s in &c.segments {
                let bytes = encoded_size(codec, s.planes.len() as u64 * plane);
                match s.role {
                    SegmentRole::Body => body += bytes,
                    SegmentRole::OverlapHead => head += bytes,
                }
            }
            let owned = encoded_size(codec, c.owned.len() as u64 * plane);
            body.max(owned) + head
        })
        .max()
        .unwrap_or(0);

    BufferGeometry {
        full_elems,
        full_bytes,
        half_bytes,
        half_overhead_bytes: needed.saturating_sub(half_bytes),
        rate_bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nz: usize, r: usize) -> GridSpec {
        GridSpec::new(8, 8, nz, r).unwrap()
    }

    #[test]
    fn full_scale_decomposition() {
        let g = GridSpec::cubic(1152, 4).unwrap();
        let plan = plan_decomposition(&g, 8, 12, true).unwrap();
        let widths: Vec<usize> = plan.chunks.iter().map(|c| c.owned.len()).collect();
        assert_eq!(widths, vec![144; 8]);
        assert_eq!(widths.iter().sum::<usize>(), 1152);
        for c in &plan.chunks[1..7] {
            assert_eq!(c.owned.start - c.extent.start, 48);
            assert_eq!(c.extent.end - c.owned.end, 48);
        }
        for i in 0..7 {
            assert_eq!(plan.overlap(i).len(), 96);
        }
        assert!(coverage_check(&plan).is_empty());
    }

    #[test]
    fn single_chunk_spans_allocation() {
        let g = grid(16, 1);
        let plan = plan_decomposition(&g, 1, 1, true).unwrap();
        let c = &plan.chunks[0];
        assert_eq!(c.owned_interior(1), PlaneRange::new(0, 16));
        assert_eq!(c.extent, PlaneRange::new(0, g.alloc_z()));
        assert!(c.overlap_head().is_none());
        assert_eq!(c.segments.len(), 1);
        assert_eq!(c.segments[0].role, SegmentRole::Body);
    }

    #[test]
    fn sharing_skips_resident_planes() {
        let g = grid(32, 1);
        let shared = plan_decomposition(&g, 4, 2, true).unwrap();
        let full = plan_decomposition(&g, 4, 2, false).unwrap();
        assert_eq!(
            full.chunks[1].transferred_planes() - shared.chunks[1].transferred_planes(),
            4
        );
        assert_eq!(shared.chunks[1].segments[0].planes.start, shared.chunks[0].extent.end);

        // brute-force: chunk-0 extent plus chunk-1 segments cover chunk-1 extent once
        let c1 = &shared.chunks[1];
        for p in c1.extent.as_range() {
            let from_prev = usize::from(shared.chunks[0].extent.contains(p));
            let own = c1.segments.iter().filter(|s| s.planes.contains(p)).count();
            assert_eq!(from_prev + own, 1, "plane {p}");
        }
    }

    #[test]
    fn remainder_goes_to_leading_chunks() {
        let plan = plan_decomposition(&grid(10, 1), 4, 1, false).unwrap();
        let widths: Vec<usize> = plan.chunks.iter().map(|c| c.owned.len()).collect();
        assert_eq!(widths, vec![3, 3, 2, 2]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let g = grid(8, 1);
        assert!(matches!(
            plan_decomposition(&g, 9, 1, false),
            Err(Error::Decomposition(_))
        ));
        assert!(plan_decomposition(&g, 4, 2, false).is_err());
        assert!(plan_decomposition(&g, 4, 1, false).is_ok());
        assert!(plan_decomposition(&g, 0, 1, false).is_err());
        assert!(plan_decomposition(&g, 1, 0, false).is_err());
    }

    #[test]
    fn halo_depth_products() {
        assert_eq!(halo_depth(12, 4), 48);
        assert_eq!(halo_depth(1, 1), 1);
        assert_eq!(halo_depth(3, 2), 6);
    }

    #[test]
    fn seeded_owned_overlap_is_reported_once() {
        let mut plan = plan_decomposition(&grid(32, 1), 4, 2, true).unwrap();
        plan.chunks[1].owned.start -= 1;
        let v = coverage_check(&plan);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::OwnedOverlap);
    }

    #[test]
    fn seeded_missing_body_is_one_gap() {
        let mut plan = plan_decomposition(&grid(32, 1), 4, 2, true).unwrap();
        plan.chunks[1]
            .segments
            .retain(|s| s.role != SegmentRole::Body);
        let v = coverage_check(&plan);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::CoverageGap);
    }

    #[test]
    fn step_regions_shrink_by_radius() {
        let g = GridSpec::new(4, 4, 32, 2).unwrap();
        let plan = plan_decomposition(&g, 4, 3, false).unwrap();
        // chunk 1 is interior on both sides
        let ext = plan.chunks[1].extent;
        for j in 1..=3 {
            let r = plan.step_region(1, j);
            assert_eq!(r, PlaneRange::new(ext.start + 2 * j, ext.end - 2 * j));
        }
        assert_eq!(plan.step_region(1, 3), plan.chunks[1].owned);
        // chunk 0 keeps updating from the first interior plane
        assert_eq!(plan.step_region(0, 3).start, 2);
        assert_eq!(plan.step_region(0, 3).end, plan.chunks[0].owned.end);
    }

    #[test]
    fn geometry_at_half_rate() {
        let g = GridSpec::cubic(128, 4).unwrap();
        let plan = plan_decomposition(&g, 4, 2, false).unwrap();
        let geo = buffer_geometry(&plan, &CodecSpec::truncate());
        assert_eq!(geo.full_elems, (32 + 16) * 136 * 136);
        assert_eq!(geo.half_bytes, geo.full_bytes.div_ceil(2));
        assert_eq!(geo.half_bytes, encoded_size(&CodecSpec::truncate(), geo.full_elems));
        assert_eq!(geo.half_overhead_bytes, 0);
        assert_eq!(geo.rate(), 0.5);

        let id = buffer_geometry(&plan, &CodecSpec::identity());
        assert_eq!(id.half_bytes, id.full_bytes);

        let bq = buffer_geometry(&plan, &CodecSpec::block_quant(32).unwrap());
        assert_eq!(bq.half_bytes, geo.half_bytes);
        let blocks = geo.full_elems.div_ceil(64);
        assert!(bq.half_overhead_bytes >= blocks * 16);
    }
}
