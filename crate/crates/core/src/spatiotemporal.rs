//! Spatiotemporal index: temporal bins subdivided into `v` spatial slabs per
//! dimension.
//!
//! On top of the temporal index, each dimension is cut into `v` slabs at
//! least as wide as the widest entry in that dimension, so an entry overlaps
//! at most two slabs per dimension. Three id arrays `X`, `Y`, `Z` store, per
//! dimension, the entries of every (temporal bin `i`, slab `j`) block, laid
//! out in `(j, i)` lexicographic order: the blocks of one slab across
//! consecutive temporal bins are contiguous. A query expanded by `d` that
//! covers a single slab in some dimension can therefore be served by one
//! contiguous index range into one array; the schedule picks the dimension
//! with the fewest candidates and falls back to the plain temporal range when
//! every dimension covers several slabs (which also keeps the raw result
//! stream duplicate-free).

use thiserror::Error;

use crate::engine::{
    run_batched, EngineConfig, EngineError, RefineCounter, ResultBuffer, ResultSet, RunMetrics,
    SearchKernel,
};
use crate::geometry::{compare, SegmentST};
use crate::temporal::{build_temporal, TemporalIndex};

/// Reported bound when a dimension has no constraint (all entries have zero
/// extent in it).
pub const SUBBIN_BOUND_CAP: u32 = 1 << 20;

/// Logical slab assignment: per dimension, the block `bin * v + slab` lists
/// that block's entry ids.
pub type SlabMemberships = [Vec<Vec<u32>>; 3];

/// Per-dimension admissible slab counts: `floor(extent / max entry extent)`,
/// capped at [`SUBBIN_BOUND_CAP`] for degenerate dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubbinBounds {
    pub per_dim: [u32; 3],
    pub overall: u32,
}

pub fn max_subbin_count(segments: &[SegmentST]) -> SubbinBounds {
    assert!(!segments.is_empty());
    let mut per_dim = [0u32; 3];
    for (dim, bound) in per_dim.iter_mut().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut max_extent = 0.0f64;
        for seg in segments {
            let a = seg.start_pos.coord(dim);
            let b = seg.end_pos.coord(dim);
            lo = lo.min(a.min(b));
            hi = hi.max(a.max(b));
            max_extent = max_extent.max((a - b).abs());
        }
        *bound = if max_extent > 0.0 {
            (((hi - lo) / max_extent) as u32).clamp(1, SUBBIN_BOUND_CAP)
        } else {
            SUBBIN_BOUND_CAP
        };
    }
    SubbinBounds {
        per_dim,
        overall: per_dim.iter().copied().min().unwrap(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StBuildError {
    #[error("subbin count {v} exceeds the admissible bound {bound} (slabs must be wider than the widest entry)")]
    TooManySubbins { v: u32, bound: u32 },
    #[error("subbin count must be at least 1")]
    ZeroSubbins,
}

/// Index ranges of one (temporal bin, slab) block into the X/Y/Z arrays
/// (`None` for an empty block).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubbinRanges {
    pub x: Option<(u32, u32)>,
    pub y: Option<(u32, u32)>,
    pub z: Option<(u32, u32)>,
}

impl SubbinRanges {
    #[inline]
    pub fn dim(&self, dim: usize) -> Option<(u32, u32)> {
        match dim {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("dimension out of range: {dim}"),
        }
    }

    fn dim_mut(&mut self, dim: usize) -> &mut Option<(u32, u32)> {
        match dim {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("dimension out of range: {dim}"),
        }
    }
}

/// Slab tiling of one dimension: `v` half-open slabs `[origin + j*width,
/// origin + (j+1)*width)`, the last one closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabGeometry {
    pub origin: [f64; 3],
    pub width: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SpatioTemporalIndex {
    pub base: TemporalIndex,
    pub v: u32,
    pub slabs: SlabGeometry,
    /// Entry ids per dimension, blocks in `(slab, bin)` order.
    pub arrays: [Vec<u32>; 3],
    /// Block descriptors indexed `bin * v + slab`.
    pub subbins: Vec<SubbinRanges>,
}

impl SpatioTemporalIndex {
    pub fn n_bins(&self) -> u32 {
        self.base.bins.len() as u32
    }

    #[inline]
    pub fn subbin(&self, bin: u32, slab: u32) -> &SubbinRanges {
        &self.subbins[(bin * self.v + slab) as usize]
    }

    /// Inclusive slab range overlapped by `[lo, hi]` in one dimension, or
    /// `None` when the value range misses the slab space entirely.
    pub fn slab_range(&self, dim: usize, lo: f64, hi: f64) -> Option<(u32, u32)> {
        let origin = self.slabs.origin[dim];
        let width = self.slabs.width[dim];
        let v = i64::from(self.v);
        let span = origin + width * v as f64;
        if hi < origin || lo > span {
            return None;
        }
        // Half-open slabs; the last one is closed above.
        let overlaps = |j: i64| {
            let s = origin + j as f64 * width;
            let e = origin + (j + 1) as f64 * width;
            hi >= s && (lo < e || (j == v - 1 && lo <= e))
        };
        let mut first = (((lo - origin) / width).floor() as i64 - 1).max(0);
        let mut last = (((hi - origin) / width).floor() as i64 + 1).min(v - 1);
        while first <= last && !overlaps(first) {
            first += 1;
        }
        while last >= first && !overlaps(last) {
            last -= 1;
        }
        if first > last {
            None
        } else {
            Some((first as u32, last as u32))
        }
    }

    /// Assemble the physical arrays from a logical assignment:
    /// `memberships[dim][bin * v + slab]` lists the block's entry ids. This is
    /// the layout stage of the build, exposed so the layout can be driven by
    /// an explicit assignment.
    pub fn from_memberships(
        base: TemporalIndex,
        v: u32,
        slabs: SlabGeometry,
        memberships: &SlabMemberships,
    ) -> Self {
        let m = base.bins.len();
        for dim_members in memberships {
            assert_eq!(dim_members.len(), m * v as usize);
        }
        let mut arrays: [Vec<u32>; 3] = Default::default();
        let mut subbins = vec![SubbinRanges::default(); m * v as usize];
        for dim in 0..3 {
            let array = &mut arrays[dim];
            for slab in 0..v as usize {
                for bin in 0..m {
                    let block = &memberships[dim][bin * v as usize + slab];
                    if block.is_empty() {
                        continue;
                    }
                    let start = array.len() as u32;
                    array.extend_from_slice(block);
                    *subbins[bin * v as usize + slab].dim_mut(dim) =
                        Some((start, array.len() as u32 - 1));
                }
            }
        }
        Self {
            base,
            v,
            slabs,
            arrays,
            subbins,
        }
    }
}

/// Build the spatiotemporal index: temporal base, then per dimension place
/// every entry into each slab its extent overlaps, inside its temporal bin's
/// block (ids ascending within a block).
pub fn build_spatiotemporal(
    segments: &[SegmentST],
    m: u32,
    v: u32,
) -> Result<SpatioTemporalIndex, StBuildError> {
    if v == 0 {
        return Err(StBuildError::ZeroSubbins);
    }
    let bounds = max_subbin_count(segments);
    if v > bounds.overall {
        return Err(StBuildError::TooManySubbins {
            v,
            bound: bounds.overall,
        });
    }
    let base = build_temporal(segments, m);

    let mut origin = [0.0f64; 3];
    let mut width = [0.0f64; 3];
    for dim in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut max_extent = 0.0f64;
        for seg in &base.entries {
            let a = seg.start_pos.coord(dim);
            let b = seg.end_pos.coord(dim);
            lo = lo.min(a.min(b));
            hi = hi.max(a.max(b));
            max_extent = max_extent.max((a - b).abs());
        }
        origin[dim] = lo;
        // extent/v respects the width constraint in exact arithmetic; the max
        // guards the division's rounding, and a degenerate dimension gets
        // unit slabs.
        let extent = hi - lo;
        width[dim] = if extent > 0.0 {
            (extent / f64::from(v)).max(max_extent)
        } else {
            1.0
        };
    }
    let slabs = SlabGeometry { origin, width };

    let scaffold = SpatioTemporalIndex {
        base,
        v,
        slabs,
        arrays: Default::default(),
        subbins: Vec::new(),
    };
    let m = scaffold.base.bins.len();
    let mut memberships: SlabMemberships =
        std::array::from_fn(|_| vec![Vec::new(); m * v as usize]);
    for (bin, descriptor) in scaffold.base.bins.iter().enumerate() {
        let Some((first, last)) = descriptor.range else {
            continue;
        };
        for i in first..=last {
            let seg = &scaffold.base.entries[i as usize];
            for (dim, dim_members) in memberships.iter_mut().enumerate() {
                let a = seg.start_pos.coord(dim);
                let b = seg.end_pos.coord(dim);
                let (j_lo, j_hi) = scaffold
                    .slab_range(dim, a.min(b), a.max(b))
                    .expect("entry lies inside the slab space");
                for j in j_lo..=j_hi {
                    dim_members[bin * v as usize + j as usize].push(i);
                }
            }
        }
    }
    let SpatioTemporalIndex { base, v, slabs, .. } = scaffold;
    Ok(SpatioTemporalIndex::from_memberships(
        base,
        v,
        slabs,
        &memberships,
    ))
}

/// Which array a schedule entry addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Selector {
    X,
    Y,
    Z,
    /// No dimension covered a single slab: address the sorted entry array
    /// with the plain temporal range.
    Temporal,
}

impl Selector {
    pub fn dim(self) -> Option<usize> {
        match self {
            Selector::X => Some(0),
            Selector::Y => Some(1),
            Selector::Z => Some(2),
            Selector::Temporal => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StScheduleEntry {
    pub query_id: u32,
    pub selector: Selector,
    pub range: Option<(u32, u32)>,
}

/// Host-side schedule: per query the temporal bin hull, the slab coverage of
/// the `d`-expanded MBB per dimension, and the selected (array, range) —
/// the single-slab dimension with the fewest candidates, or the temporal
/// fallback. Entries are sorted by selector (fallback last) and carry their
/// query id explicitly.
pub fn build_schedule_st(
    index: &SpatioTemporalIndex,
    queries: &[SegmentST],
    d: f64,
) -> Vec<StScheduleEntry> {
    let order = TemporalIndex::sorted_query_order(queries);
    let mut schedule = Vec::with_capacity(queries.len());
    let mut hint = 0usize;
    for query_id in order {
        let q = &queries[query_id as usize];
        let scan = index.base.overlapped_bins(q.t_start, q.t_end, hint);
        hint = scan.next_hint;
        let Some((bin_lo, bin_hi)) = scan.bin_hull else {
            schedule.push(StScheduleEntry {
                query_id,
                selector: Selector::Temporal,
                range: None,
            });
            continue;
        };

        struct Pick {
            len: u64,
            selector: Selector,
            range: Option<(u32, u32)>,
        }
        let expanded = q.mbb().expanded(d);
        let mut best: Option<Pick> = None;
        for dim in 0..3 {
            let coverage = index.slab_range(
                dim,
                expanded.min.coord(dim),
                expanded.max.coord(dim),
            );
            let slab = match coverage {
                // Missing the slab space entirely means no entry can be
                // within d in this dimension: an empty range, the best
                // possible pick.
                None => None,
                Some((lo, hi)) if lo == hi => Some(lo),
                Some(_) => continue, // several slabs covered
            };
            let range = slab.and_then(|j| {
                let mut hull: Option<(u32, u32)> = None;
                for bin in bin_lo..=bin_hi {
                    if let Some((start, end)) = index.subbin(bin as u32, j).dim(dim) {
                        hull = match hull {
                            None => Some((start, end)),
                            Some((lo, _)) => Some((lo, end)),
                        };
                    }
                }
                hull
            });
            let len = range.map_or(0, |(lo, hi)| u64::from(hi - lo) + 1);
            let selector = [Selector::X, Selector::Y, Selector::Z][dim];
            if best.as_ref().is_none_or(|pick| len < pick.len) {
                best = Some(Pick {
                    len,
                    selector,
                    range,
                });
            }
        }
        let (selector, range) = match best {
            Some(pick) => (pick.selector, pick.range),
            None => (Selector::Temporal, scan.entry_range),
        };
        schedule.push(StScheduleEntry {
            query_id,
            selector,
            range,
        });
    }
    // Group by array to mirror the device dispatch order; ids travel with
    // the entries.
    schedule.sort_by_key(|e| e.selector);
    schedule
}

struct StKernel<'a> {
    index: &'a SpatioTemporalIndex,
    queries: &'a [SegmentST],
    plan_of_query: Vec<(Selector, Option<(u32, u32)>)>,
    d: f64,
    refined: &'a RefineCounter,
}

impl SearchKernel for StKernel<'_> {
    fn run(&self, query_id: u32, sink: &ResultBuffer) {
        if sink.is_full() {
            sink.mark_overflow(query_id);
            return;
        }
        let (selector, range) = self.plan_of_query[query_id as usize];
        let Some((lo, hi)) = range else { return };
        let query = &self.queries[query_id as usize];
        let entries = &self.index.base.entries;
        let mut refined = 0u64;
        let mut step = |entry: &SegmentST, sink: &ResultBuffer| -> bool {
            refined += 1;
            if let Some(hit) = compare(entry, query, self.d) {
                if !sink.try_push(hit) {
                    sink.mark_overflow(query_id);
                    return false;
                }
            }
            true
        };
        match selector.dim() {
            Some(dim) => {
                let array = &self.index.arrays[dim];
                for idx in lo as usize..=hi as usize {
                    if !step(&entries[array[idx] as usize], sink) {
                        break;
                    }
                }
            }
            None => {
                for entry in &entries[lo as usize..=hi as usize] {
                    if !step(entry, sink) {
                        break;
                    }
                }
            }
        }
        self.refined.add(refined);
    }
}

pub fn search_spatiotemporal(
    index: &SpatioTemporalIndex,
    queries: &[SegmentST],
    schedule: &[StScheduleEntry],
    d: f64,
    cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), EngineError> {
    let mut plan_of_query = vec![(Selector::Temporal, None); queries.len()];
    for entry in schedule {
        plan_of_query[entry.query_id as usize] = (entry.selector, entry.range);
    }
    let refined = RefineCounter::default();
    let kernel = StKernel {
        index,
        queries,
        plan_of_query,
        d,
        refined: &refined,
    };
    let ids: Vec<u32> = schedule.iter().map(|e| e.query_id).collect();
    let (set, mut metrics) = run_batched(&kernel, ids, cfg)?;
    metrics.candidates_refined = refined.get();
    Ok((set, metrics))
}
