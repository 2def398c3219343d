//! Purely temporal index: the entry array sorted by start time plus `m`
//! fixed-length bins.
//!
//! Bin `j` starts at `t_min + j*b` (`b = (t_max - t_min) / m`) and holds the
//! entries whose start time falls in its base slot; its end time is stretched
//! to cover the latest end time of its members, so a query overlapping an
//! entry always overlaps that entry's bin. Because the entries are sorted,
//! each bin is a contiguous index range, and a query's candidates reduce to a
//! single `[entry_min, entry_max]` range — the *schedule* — computed on the
//! host with an incremental scan over the sorted queries.

use crate::engine::{
    run_batched, EngineConfig, EngineError, RefineCounter, ResultBuffer, ResultSet, RunMetrics,
    SearchKernel,
};
use crate::geometry::{compare, SegmentST};

/// One temporal bin: extent `[start, end]` plus the inclusive index range of
/// its entries in the sorted entry array (`None` for an empty bin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalBin {
    pub start: f64,
    pub end: f64,
    pub range: Option<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct TemporalIndex {
    /// The database sorted by non-decreasing `t_start`; kernel entry ids are
    /// positions in this array.
    pub entries: Vec<SegmentST>,
    pub bins: Vec<TemporalBin>,
    pub t_min: f64,
    pub t_max: f64,
    pub bin_len: f64,
}

/// Per-query candidate range into [`TemporalIndex::entries`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    /// Index of the query in the caller's query slice.
    pub query_id: u32,
    pub range: Option<(u32, u32)>,
}

/// Sort the database by start time and slice it into `m` bins.
pub fn build_temporal(segments: &[SegmentST], m: u32) -> TemporalIndex {
    assert!(m >= 1, "bin count must be at least 1");
    assert!(!segments.is_empty(), "cannot index an empty database");

    let mut entries = segments.to_vec();
    entries.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));

    let t_min = entries[0].t_start;
    let t_max = entries.iter().map(|s| s.t_end).fold(f64::MIN, f64::max);
    let bin_len = (t_max - t_min) / f64::from(m);

    let mut bins: Vec<TemporalBin> = (0..m)
        .map(|j| TemporalBin {
            start: t_min + f64::from(j) * bin_len,
            end: t_min + f64::from(j + 1) * bin_len,
            range: None,
        })
        .collect();

    for (i, entry) in entries.iter().enumerate() {
        let j = (((entry.t_start - t_min) / bin_len) as usize).min(m as usize - 1);
        let bin = &mut bins[j];
        bin.end = bin.end.max(entry.t_end);
        bin.range = match bin.range {
            None => Some((i as u32, i as u32)),
            Some((first, _)) => Some((first, i as u32)),
        };
    }

    TemporalIndex {
        entries,
        bins,
        t_min,
        t_max,
        bin_len,
    }
}

impl TemporalIndex {
    pub fn n_bins(&self) -> u32 {
        self.bins.len() as u32
    }

    /// Queries sorted by non-decreasing start time: the order schedules are
    /// built and dispatched in.
    pub fn sorted_query_order(queries: &[SegmentST]) -> Vec<u32> {
        let mut order: Vec<u32> = (0..queries.len() as u32).collect();
        order.sort_by(|&a, &b| {
            queries[a as usize]
                .t_start
                .total_cmp(&queries[b as usize].t_start)
                .then(a.cmp(&b))
        });
        order
    }

    /// Scan forward from bin `hint` for the bins whose extent intersects
    /// `[t_lo, t_hi]`. Stretched bin ends make the overlap set possibly
    /// non-contiguous; both hulls cover it. Queries arrive sorted by start
    /// time, so bins before the previous query's first overlap can only have
    /// ended before `t_lo` and are safe to skip.
    pub(crate) fn overlapped_bins(&self, t_lo: f64, t_hi: f64, hint: usize) -> BinScan {
        let mut bin_hull: Option<(usize, usize)> = None;
        let mut entry_range: Option<(u32, u32)> = None;
        for (j, bin) in self.bins.iter().enumerate().skip(hint) {
            if bin.start > t_hi {
                break;
            }
            if bin.end < t_lo {
                continue;
            }
            bin_hull = match bin_hull {
                None => Some((j, j)),
                Some((first, _)) => Some((first, j)),
            };
            if let Some((first, last)) = bin.range {
                entry_range = match entry_range {
                    None => Some((first, last)),
                    Some((lo, hi)) => Some((lo.min(first), hi.max(last))),
                };
            }
        }
        let next_hint = bin_hull.map_or(hint, |(first, _)| first);
        BinScan {
            bin_hull,
            entry_range,
            next_hint,
        }
    }
}

/// Result of one bin-overlap scan.
pub(crate) struct BinScan {
    /// First and last overlapping bin.
    pub bin_hull: Option<(usize, usize)>,
    /// Hull of the non-empty overlapping bins' entry ranges.
    pub entry_range: Option<(u32, u32)>,
    /// Scan start for the next (later-starting) query.
    pub next_hint: usize,
}

/// Host-side schedule construction: one entry range per query, queries
/// processed in non-decreasing `t_start` order, each bin scan starting from
/// the previous query's first overlapping bin.
pub fn build_schedule_temporal(index: &TemporalIndex, queries: &[SegmentST]) -> Vec<ScheduleEntry> {
    let order = TemporalIndex::sorted_query_order(queries);
    let mut schedule = Vec::with_capacity(queries.len());
    let mut hint = 0usize;
    for query_id in order {
        let q = &queries[query_id as usize];
        let scan = index.overlapped_bins(q.t_start, q.t_end, hint);
        hint = scan.next_hint;
        schedule.push(ScheduleEntry {
            query_id,
            range: scan.entry_range,
        });
    }
    schedule
}

pub(crate) struct TemporalKernel<'a> {
    pub entries: &'a [SegmentST],
    pub queries: &'a [SegmentST],
    /// query id -> candidate range (schedule scattered back to query order).
    pub range_of_query: Vec<Option<(u32, u32)>>,
    pub d: f64,
    pub refined: &'a RefineCounter,
}

impl TemporalKernel<'_> {
    /// Alg. 2 body: compare one query against a contiguous entry range.
    pub fn run_range(&self, query_id: u32, range: Option<(u32, u32)>, sink: &ResultBuffer) {
        if sink.is_full() {
            sink.mark_overflow(query_id);
            return;
        }
        let Some((lo, hi)) = range else { return };
        let query = &self.queries[query_id as usize];
        let mut refined = 0u64;
        for entry in &self.entries[lo as usize..=hi as usize] {
            refined += 1;
            if let Some(hit) = compare(entry, query, self.d) {
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

impl SearchKernel for TemporalKernel<'_> {
    fn run(&self, query_id: u32, sink: &ResultBuffer) {
        self.run_range(query_id, self.range_of_query[query_id as usize], sink);
    }
}

/// Run the temporal search end to end; the deduplicated result equals the
/// all-pairs oracle's.
pub fn search_temporal(
    index: &TemporalIndex,
    queries: &[SegmentST],
    schedule: &[ScheduleEntry],
    d: f64,
    cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), EngineError> {
    let mut range_of_query = vec![None; queries.len()];
    for entry in schedule {
        range_of_query[entry.query_id as usize] = entry.range;
    }
    let refined = RefineCounter::default();
    let kernel = TemporalKernel {
        entries: &index.entries,
        queries,
        range_of_query,
        d,
        refined: &refined,
    };
    let ids: Vec<u32> = schedule.iter().map(|e| e.query_id).collect();
    let (set, mut metrics) = run_batched(&kernel, ids, cfg)?;
    metrics.candidates_refined = refined.get();
    Ok((set, metrics))
}
