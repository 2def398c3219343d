//! Flatly structured grid (FSG): a non-hierarchical spatial index.
//!
//! Space is cut into `grid_x * grid_y * grid_z` cells over the database's
//! spatial extent. Only non-empty cells are stored, as an array `G` sorted by
//! the cell's row-major linearized coordinate `h`; each carries an inclusive
//! index range into a lookup array `A` holding the ids of the segments whose
//! MBB overlaps the cell. A segment overlapping k cells contributes k copies
//! of its id, and candidate lists keep those duplicates — the host-side
//! duplicate filter collapses the resulting repeated records after
//! refinement.
//!
//! Cell overlap is closed on both sides: a box touching a cell face belongs
//! to both cells. Queries rasterize their MBB expanded by the search distance
//! `d`, so neighbors within `d` in adjacent cells cannot be missed.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::engine::{
    run_batched, EngineConfig, EngineError, RefineCounter, ResultBuffer, ResultSet, RunMetrics,
    SearchKernel,
};
use crate::geometry::{compare, Mbb, Point3, SegmentST};

/// Grid resolution used when none is configured (50 cells per dimension).
pub const DEFAULT_GRID_CELLS: u32 = 50;

/// Total candidate-buffer budget shared by the active queries of one
/// invocation: 2 GiB of 4-byte ids.
pub const DEFAULT_CANDIDATE_BUFFER_BYTES: u64 = 2 * 1024 * 1024 * 1024;

/// Magic bytes of the index persistence format.
pub const FSG_MAGIC: &[u8; 4] = b"FSG1";

/// Geometry of the grid: cells tile `[origin, origin + counts*cell_size]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Point3,
    pub cell_size: [f64; 3],
    pub counts: [u32; 3],
}

impl GridSpec {
    /// Tile the closed box `[min, max]` with `counts` cells per dimension.
    /// A dimension of zero extent gets unit-size cells.
    pub fn from_extent(min: Point3, max: Point3, counts: [u32; 3]) -> Self {
        assert!(counts.iter().all(|&c| c >= 1), "cell counts must be >= 1");
        let mut cell_size = [0.0; 3];
        for dim in 0..3 {
            let extent = max.coord(dim) - min.coord(dim);
            cell_size[dim] = if extent > 0.0 {
                extent / f64::from(counts[dim])
            } else {
                1.0
            };
        }
        Self {
            origin: min,
            cell_size,
            counts,
        }
    }

    pub fn total_cells(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).product()
    }

    /// Row-major linearized cell coordinate.
    #[inline]
    pub fn linearize(&self, cell: [u32; 3]) -> u64 {
        debug_assert!((0..3).all(|d| cell[d] < self.counts[d]));
        (u64::from(cell[0]) * u64::from(self.counts[1]) + u64::from(cell[1]))
            * u64::from(self.counts[2])
            + u64::from(cell[2])
    }

    /// Inclusive cell range overlapped by `[lo, hi]` in one dimension, or
    /// `None` when the value range misses the grid entirely.
    fn dim_range(&self, dim: usize, lo: f64, hi: f64) -> Option<(u32, u32)> {
        let origin = self.origin.coord(dim);
        let size = self.cell_size[dim];
        let count = i64::from(self.counts[dim]);
        if hi < origin || lo > origin + size * count as f64 {
            return None;
        }
        // Closed cell k covers [origin + k*size, origin + (k+1)*size].
        let overlaps = |k: i64| {
            origin + k as f64 * size <= hi && origin + (k + 1) as f64 * size >= lo
        };
        let mut first = (((lo - origin) / size).floor() as i64 - 1).max(0);
        let mut last = (((hi - origin) / size).floor() as i64 + 1).min(count - 1);
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

    /// Per-dimension cell ranges covered by `mbb`, clamped to the grid.
    pub fn cell_range(&self, mbb: &Mbb) -> Option<[(u32, u32); 3]> {
        let x = self.dim_range(0, mbb.min.x, mbb.max.x)?;
        let y = self.dim_range(1, mbb.min.y, mbb.max.y)?;
        let z = self.dim_range(2, mbb.min.z, mbb.max.z)?;
        Some([x, y, z])
    }
}

/// The cells whose closed extents intersect `mbb`, clamped to the grid.
pub fn rasterize_mbb(mbb: &Mbb, spec: &GridSpec) -> Vec<[u32; 3]> {
    let Some([xs, ys, zs]) = spec.cell_range(mbb) else {
        return Vec::new();
    };
    let mut cells = Vec::new();
    for cx in xs.0..=xs.1 {
        for cy in ys.0..=ys.1 {
            for cz in zs.0..=zs.1 {
                cells.push([cx, cy, cz]);
            }
        }
    }
    cells
}

/// One non-empty cell: its linearized coordinate and the inclusive slice
/// `A[a_min..=a_max]` of overlapping segment ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsgCell {
    pub h: u64,
    pub a_min: u32,
    pub a_max: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsgIndex {
    pub spec: GridSpec,
    /// Non-empty cells sorted ascending by `h`.
    pub cells: Vec<FsgCell>,
    /// Lookup array of entry-segment ids.
    pub lookup: Vec<u32>,
}

/// Build the grid over the spatial extent of `segments`' MBBs.
pub fn build_fsg(segments: &[SegmentST], counts: [u32; 3]) -> FsgIndex {
    assert!(!segments.is_empty(), "cannot index an empty database");
    let mut min = segments[0].mbb().min;
    let mut max = segments[0].mbb().max;
    for seg in &segments[1..] {
        let mbb = seg.mbb();
        min = min.min_components(mbb.min);
        max = max.max_components(mbb.max);
    }
    let spec = GridSpec::from_extent(min, max, counts);

    let mut pairs: Vec<(u64, u32)> = Vec::with_capacity(segments.len());
    for (id, seg) in segments.iter().enumerate() {
        for cell in rasterize_mbb(&seg.mbb(), &spec) {
            pairs.push((spec.linearize(cell), id as u32));
        }
    }
    pairs.sort_unstable();

    let mut cells: Vec<FsgCell> = Vec::new();
    let lookup: Vec<u32> = pairs
        .iter()
        .enumerate()
        .map(|(pos, &(h, id))| {
            match cells.last_mut() {
                Some(cell) if cell.h == h => cell.a_max = pos as u32,
                _ => cells.push(FsgCell {
                    h,
                    a_min: pos as u32,
                    a_max: pos as u32,
                }),
            }
            id
        })
        .collect();

    FsgIndex { spec, cells, lookup }
}

impl FsgIndex {
    /// Binary search over `G` by linearized coordinate.
    pub fn find_cell(&self, h: u64) -> Option<&FsgCell> {
        self.cells
            .binary_search_by_key(&h, |cell| cell.h)
            .ok()
            .map(|i| &self.cells[i])
    }

    /// Append the lookup slices of the given cells to `out`, duplicates
    /// retained. Returns true (leaving `out` unspecified) as soon as the
    /// total would exceed `capacity`.
    pub fn collect_candidates<I: IntoIterator<Item = u64>>(
        &self,
        cells: I,
        capacity: usize,
        out: &mut Vec<u32>,
    ) -> bool {
        for h in cells {
            let Some(cell) = self.find_cell(h) else {
                continue;
            };
            let slice = &self.lookup[cell.a_min as usize..=cell.a_max as usize];
            if out.len() + slice.len() > capacity {
                return true;
            }
            out.extend_from_slice(slice);
        }
        false
    }

    /// Candidate ids for one query: rasterize its `d`-expanded MBB and gather
    /// the lookup slices of every non-empty covered cell.
    pub fn get_candidates(
        &self,
        query: &SegmentST,
        d: f64,
        capacity: usize,
        out: &mut Vec<u32>,
    ) -> bool {
        out.clear();
        let expanded = query.mbb().expanded(d);
        let Some([xs, ys, zs]) = self.spec.cell_range(&expanded) else {
            return false;
        };
        for cx in xs.0..=xs.1 {
            for cy in ys.0..=ys.1 {
                let row = self.collect_candidates(
                    (zs.0..=zs.1).map(|cz| self.spec.linearize([cx, cy, cz])),
                    capacity,
                    out,
                );
                if row {
                    return true;
                }
            }
        }
        false
    }
}

#[derive(Debug, Clone)]
pub struct FsgConfig {
    /// Total candidate-buffer budget in bytes (ids are 4 bytes); one
    /// invocation splits it equally among its active queries.
    pub candidate_buffer_bytes: u64,
}

impl Default for FsgConfig {
    fn default() -> Self {
        Self {
            candidate_buffer_bytes: DEFAULT_CANDIDATE_BUFFER_BYTES,
        }
    }
}

impl FsgConfig {
    pub fn total_candidate_capacity(&self) -> usize {
        usize::try_from(self.candidate_buffer_bytes / 4).unwrap_or(usize::MAX)
    }
}

struct FsgKernel<'a> {
    index: &'a FsgIndex,
    entries: &'a [SegmentST],
    queries: &'a [SegmentST],
    d: f64,
    total_capacity: usize,
    per_query_capacity: AtomicUsize,
    refined: &'a RefineCounter,
}

impl SearchKernel for FsgKernel<'_> {
    fn begin_invocation(&self, active: &[u32]) {
        // The buffer is split equally among the invocation's active queries;
        // re-invocations run fewer queries and so grant each a larger share.
        let share = self.total_capacity / active.len().max(1);
        self.per_query_capacity.store(share, Ordering::Relaxed);
    }

    fn run(&self, query_id: u32, sink: &ResultBuffer) {
        if sink.is_full() {
            sink.mark_overflow(query_id);
            return;
        }
        let capacity = self.per_query_capacity.load(Ordering::Relaxed);
        let query = &self.queries[query_id as usize];
        let mut candidates = Vec::new();
        if self.index.get_candidates(query, self.d, capacity, &mut candidates) {
            sink.mark_overflow(query_id);
            return;
        }
        let mut refined = 0u64;
        for &entry_id in &candidates {
            refined += 1;
            if let Some(hit) = compare(&self.entries[entry_id as usize], query, self.d) {
                if !sink.try_push(hit) {
                    sink.mark_overflow(query_id);
                    self.refined.add(refined);
                    return;
                }
            }
        }
        self.refined.add(refined);
    }
}

/// Grid search over all queries: per-query candidate gathering with the
/// shared buffer budget, overflowing queries re-invoked with a larger share
/// until none overflow, refinement through `compare`, host-side dedup.
pub fn search_spatial(
    index: &FsgIndex,
    entries: &[SegmentST],
    queries: &[SegmentST],
    d: f64,
    fsg_cfg: &FsgConfig,
    engine_cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), EngineError> {
    let refined = RefineCounter::default();
    let kernel = FsgKernel {
        index,
        entries,
        queries,
        d,
        total_capacity: fsg_cfg.total_candidate_capacity(),
        per_query_capacity: AtomicUsize::new(0),
        refined: &refined,
    };
    let ids: Vec<u32> = (0..queries.len() as u32).collect();
    let (set, mut metrics) = run_batched(&kernel, ids, engine_cfg)?;
    metrics.candidates_refined = refined.get();
    Ok((set, metrics))
}

#[derive(Debug, Error)]
pub enum FsgIoError {
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Persist the index: magic `FSG1`, grid spec, `|G|` and its records, `|A|`
/// and its records, all little-endian.
pub fn write_fsg<W: Write>(index: &FsgIndex, mut out: W) -> Result<(), FsgIoError> {
    out.write_all(FSG_MAGIC)?;
    for value in [
        index.spec.origin.x,
        index.spec.origin.y,
        index.spec.origin.z,
        index.spec.cell_size[0],
        index.spec.cell_size[1],
        index.spec.cell_size[2],
    ] {
        out.write_all(&value.to_le_bytes())?;
    }
    for count in index.spec.counts {
        out.write_all(&count.to_le_bytes())?;
    }
    out.write_all(&(index.cells.len() as u64).to_le_bytes())?;
    for cell in &index.cells {
        out.write_all(&cell.h.to_le_bytes())?;
        out.write_all(&cell.a_min.to_le_bytes())?;
        out.write_all(&cell.a_max.to_le_bytes())?;
    }
    out.write_all(&(index.lookup.len() as u64).to_le_bytes())?;
    for id in &index.lookup {
        out.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_fsg<R: Read>(mut input: R) -> Result<FsgIndex, FsgIoError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != FSG_MAGIC {
        return Err(FsgIoError::Format(format!(
            "bad magic: expected {FSG_MAGIC:?}, found {magic:?}"
        )));
    }
    let mut f64_buf = [0u8; 8];
    let mut read_f64 = |input: &mut R| -> Result<f64, FsgIoError> {
        input.read_exact(&mut f64_buf)?;
        Ok(f64::from_le_bytes(f64_buf))
    };
    let origin = Point3::new(read_f64(&mut input)?, read_f64(&mut input)?, read_f64(&mut input)?);
    let cell_size = [
        read_f64(&mut input)?,
        read_f64(&mut input)?,
        read_f64(&mut input)?,
    ];
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |input: &mut R| -> Result<u32, FsgIoError> {
        input.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let counts = [
        read_u32(&mut input)?,
        read_u32(&mut input)?,
        read_u32(&mut input)?,
    ];
    let mut u64_buf = [0u8; 8];
    input.read_exact(&mut u64_buf)?;
    let n_cells = u64::from_le_bytes(u64_buf) as usize;
    let mut cells = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        input.read_exact(&mut u64_buf)?;
        let h = u64::from_le_bytes(u64_buf);
        input.read_exact(&mut u32_buf)?;
        let a_min = u32::from_le_bytes(u32_buf);
        input.read_exact(&mut u32_buf)?;
        let a_max = u32::from_le_bytes(u32_buf);
        cells.push(FsgCell { h, a_min, a_max });
    }
    input.read_exact(&mut u64_buf)?;
    let n_lookup = u64::from_le_bytes(u64_buf) as usize;
    let mut lookup = Vec::with_capacity(n_lookup);
    for _ in 0..n_lookup {
        input.read_exact(&mut u32_buf)?;
        lookup.push(u32::from_le_bytes(u32_buf));
    }
    Ok(FsgIndex {
        spec: GridSpec {
            origin,
            cell_size,
            counts,
        },
        cells,
        lookup,
    })
}
