//! Portable emulation of the device-kernel execution contract shared by all
//! search backends.
//!
//! A search runs as a series of *invocations*. Each invocation dispatches one
//! logical worker per active query; workers share a fixed-capacity
//! [`ResultBuffer`] and append records through a linearizable reservation. A
//! worker that cannot reserve a slot registers its query id in the overflow
//! list and stops; overflowed queries are re-invoked with a fresh buffer until
//! none remain. Partial records written by overflowed workers are retained —
//! kernels are deterministic per query, so a re-run reproduces them exactly
//! and the host-side duplicate filter collapses them.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{compare, Interaction, SegmentST};

/// Record count of the statically allocated result buffer: 5.0e7, overridable
/// through [`EngineConfig`].
pub const DEFAULT_RESULT_CAPACITY: usize = 50_000_000;

/// Two records with equal ids must agree on their interval to this tolerance;
/// a larger deviation means a kernel was nondeterministic, which is a bug.
pub const DUPLICATE_INTERVAL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(
        "query {query_id} produced {results} records, which exceed the result \
         capacity of {capacity} even in a dedicated invocation"
    )]
    ResultCapacityExceeded {
        query_id: u32,
        results: u64,
        capacity: usize,
    },
    #[error(
        "query {query_id} cannot complete even in a dedicated invocation: its \
         kernel-side candidate buffer exceeds the whole buffer space"
    )]
    CandidateOverflow { query_id: u32 },
    #[error(
        "duplicate records for pair ({query_trajectory},{query_segment}) x \
         ({entry_trajectory},{entry_segment}) disagree on the interval (max deviation {deviation:e})"
    )]
    DuplicateIntervalMismatch {
        query_trajectory: u32,
        query_segment: u32,
        entry_trajectory: u32,
        entry_segment: u32,
        deviation: f64,
    },
}

/// Worker-count and buffer configuration. Semantically inert: the final
/// [`ResultSet`] of a search is identical across worker counts and capacities
/// (capacities below a single query's own result count excepted — those are a
/// hard error).
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub result_capacity: usize,
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            result_capacity: DEFAULT_RESULT_CAPACITY,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl EngineConfig {
    pub fn sequential() -> Self {
        Self {
            result_capacity: DEFAULT_RESULT_CAPACITY,
            workers: 1,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.result_capacity = capacity;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

/// Fixed-capacity record buffer shared by the workers of one invocation.
///
/// `try_push` performs the reservation; when it fails the worker must call
/// `mark_overflow` with its query id and stop. `records[0..count)` are fully
/// written whenever an invocation completes, regardless of interleaving.
pub struct ResultBuffer {
    capacity: usize,
    records: Mutex<Vec<Interaction>>,
    overflow: Mutex<Vec<u32>>,
}

impl ResultBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            records: Mutex::new(Vec::new()),
            overflow: Mutex::new(Vec::new()),
        }
    }

    /// Reserve a slot and write `record` into it. Returns false (and writes
    /// nothing) when the buffer is at capacity.
    pub fn try_push(&self, record: Interaction) -> bool {
        let mut records = self.records.lock().unwrap();
        if records.len() >= self.capacity {
            return false;
        }
        records.push(record);
        true
    }

    /// Register a query id for reprocessing in a later invocation.
    pub fn mark_overflow(&self, query_id: u32) {
        self.overflow.lock().unwrap().push(query_id);
    }

    /// True once the reservation counter has reached capacity. Kernels may
    /// poll this to bail out early instead of recomputing a candidate set
    /// whose appends are doomed; bailing out is equivalent to scheduling the
    /// worker after the buffer filled.
    pub fn is_full(&self) -> bool {
        self.records.lock().unwrap().len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_parts(self) -> (Vec<Interaction>, Vec<u32>) {
        (
            self.records.into_inner().unwrap(),
            self.overflow.into_inner().unwrap(),
        )
    }
}

/// One invocation: runs `kernel(gid, buffer)` for every `gid` in
/// `[0, schedule_len)`, sequentially or on the given pool.
pub fn dispatch<K>(kernel: &K, schedule_len: usize, buffer: &ResultBuffer, pool: Option<&rayon::ThreadPool>)
where
    K: Fn(usize, &ResultBuffer) + Sync,
{
    match pool {
        None => {
            for gid in 0..schedule_len {
                kernel(gid, buffer);
            }
        }
        Some(pool) => pool.install(|| {
            (0..schedule_len)
                .into_par_iter()
                .for_each(|gid| kernel(gid, buffer));
        }),
    }
}

/// A search backend's per-query kernel body.
pub trait SearchKernel: Sync {
    /// Called once before each invocation with the ids of the active queries
    /// (kernels that size per-query scratch space from the active count hook
    /// in here).
    fn begin_invocation(&self, _active: &[u32]) {}

    /// Process one query, appending records through the buffer's reservation.
    /// On a failed reservation the kernel must `mark_overflow(query_id)` and
    /// return.
    fn run(&self, query_id: u32, sink: &ResultBuffer);
}

/// Instrumentation for one batched run.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    /// Kernel invocations issued (1 when nothing overflowed).
    pub invocations: u32,
    /// Successful slot reservations summed over all invocations.
    pub reserved_records: u64,
    /// Records in the final deduplicated set.
    pub final_records: u64,
    /// reserved / final (1.0 when the raw stream had no duplicates).
    pub dedup_ratio: f64,
    /// Candidate segments refined with `compare`, summed over invocations.
    pub candidates_refined: u64,
    /// Wall time of each kernel invocation.
    pub invocation_walls: Vec<Duration>,
    /// Wall time of the batched run, including deduplication.
    pub wall: Duration,
}

/// Run `kernel` over `query_ids` through the batched invocation loop and
/// deduplicate the concatenated records.
///
/// Overflowed queries are re-invoked together (their per-invocation share of
/// kernel scratch space grows as the active set shrinks). If an invocation
/// makes no progress at all the active set is halved to restore it; a single
/// query that still cannot complete alone is a hard error identifying the
/// query.
pub fn run_batched<K: SearchKernel>(
    kernel: &K,
    query_ids: Vec<u32>,
    cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), EngineError> {
    let start = Instant::now();
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .expect("failed to build worker pool"),
        )
    } else {
        None
    };

    let mut metrics = RunMetrics::default();
    let mut raw: Vec<Interaction> = Vec::new();
    let mut worklist: VecDeque<Vec<u32>> = VecDeque::new();
    if !query_ids.is_empty() {
        worklist.push_back(query_ids);
    } else {
        // Vacuous dispatch still counts as one invocation.
        metrics.invocations = 1;
    }

    while let Some(active) = worklist.pop_front() {
        kernel.begin_invocation(&active);
        let buffer = ResultBuffer::new(cfg.result_capacity);
        let body = |gid: usize, sink: &ResultBuffer| kernel.run(active[gid], sink);
        let invocation_start = Instant::now();
        dispatch(&body, active.len(), &buffer, pool.as_ref());
        metrics.invocation_walls.push(invocation_start.elapsed());
        metrics.invocations += 1;

        let (records, mut overflow) = buffer.into_parts();
        metrics.reserved_records += records.len() as u64;
        raw.extend(records);

        if overflow.is_empty() {
            continue;
        }
        overflow.sort_unstable();
        overflow.dedup();
        if overflow.len() == active.len() {
            // Zero progress. Shrink the active set until someone fits.
            if let [query_id] = overflow[..] {
                return Err(diagnose_stuck_query(kernel, query_id, cfg, pool.as_ref()));
            }
            let mid = overflow.len() / 2;
            let tail = overflow.split_off(mid);
            worklist.push_back(overflow);
            worklist.push_back(tail);
        } else {
            worklist.push_back(overflow);
        }
    }

    let result = dedup_results(raw)?;
    metrics.final_records = result.len() as u64;
    metrics.dedup_ratio = if result.is_empty() {
        1.0
    } else {
        metrics.reserved_records as f64 / result.len() as f64
    };
    metrics.wall = start.elapsed();
    Ok((result, metrics))
}

/// A query overflowed an invocation it had to itself: rerun it against an
/// unbounded result buffer to tell a result-capacity failure (and its exact
/// record count) from a kernel-side candidate overflow.
fn diagnose_stuck_query<K: SearchKernel>(
    kernel: &K,
    query_id: u32,
    cfg: &EngineConfig,
    pool: Option<&rayon::ThreadPool>,
) -> EngineError {
    kernel.begin_invocation(&[query_id]);
    let probe = ResultBuffer::new(usize::MAX);
    let body = |_gid: usize, sink: &ResultBuffer| kernel.run(query_id, sink);
    dispatch(&body, 1, &probe, pool);
    let (records, overflow) = probe.into_parts();
    if overflow.is_empty() {
        EngineError::ResultCapacityExceeded {
            query_id,
            results: records.len() as u64,
            capacity: cfg.result_capacity,
        }
    } else {
        EngineError::CandidateOverflow { query_id }
    }
}

/// Canonical deduplicated result set, sorted by the four segment ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    records: Vec<Interaction>,
}

impl ResultSet {
    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Interaction> {
        self.records.iter()
    }
}

/// Collapse exact duplicates (all four ids equal) and sort canonically.
///
/// Kernels are deterministic, so duplicates must carry identical intervals;
/// a deviation beyond [`DUPLICATE_INTERVAL_TOLERANCE`] reports an integrity
/// error instead of silently merging.
pub fn dedup_results(mut raw: Vec<Interaction>) -> Result<ResultSet, EngineError> {
    raw.sort_unstable_by(|a, b| {
        a.key()
            .cmp(&b.key())
            .then_with(|| a.interval.begin.total_cmp(&b.interval.begin))
            .then_with(|| a.interval.end.total_cmp(&b.interval.end))
    });
    let mut records: Vec<Interaction> = Vec::with_capacity(raw.len());
    for rec in raw {
        match records.last() {
            Some(prev) if prev.key() == rec.key() => {
                let deviation = (prev.interval.begin - rec.interval.begin)
                    .abs()
                    .max((prev.interval.end - rec.interval.end).abs());
                if deviation > DUPLICATE_INTERVAL_TOLERANCE {
                    return Err(EngineError::DuplicateIntervalMismatch {
                        query_trajectory: rec.query_trajectory,
                        query_segment: rec.query_segment,
                        entry_trajectory: rec.entry_trajectory,
                        entry_segment: rec.entry_segment,
                        deviation,
                    });
                }
            }
            _ => records.push(rec),
        }
    }
    Ok(ResultSet { records })
}

/// Exhaustive all-pairs reference: `compare` every (entry, query) pair and
/// canonicalize. The verification oracle for every index backend.
pub fn brute_force_oracle(entries: &[SegmentST], queries: &[SegmentST], d: f64) -> ResultSet {
    let raw: Vec<Interaction> = queries
        .par_iter()
        .map(|query| {
            entries
                .iter()
                .filter_map(|entry| compare(entry, query, d))
                .collect::<Vec<_>>()
        })
        .reduce(Vec::new, |mut acc, mut chunk| {
            acc.append(&mut chunk);
            acc
        });
    dedup_results(raw).expect("all-pairs enumeration cannot produce duplicates")
}

/// Pair-set and interval comparison between two result sets.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// Pairs present in `a` but absent from `b`.
    pub only_in_a: Vec<(u32, u32, u32, u32)>,
    /// Pairs present in `b` but absent from `a`.
    pub only_in_b: Vec<(u32, u32, u32, u32)>,
    /// Largest absolute interval-endpoint deviation over the shared pairs.
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.only_in_a.is_empty() && self.only_in_b.is_empty() && self.max_deviation <= self.tolerance
    }
}

impl std::fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.equivalent() {
            write!(
                f,
                "equivalent: pair sets match, max interval deviation {:.3e} (tolerance {:.1e})",
                self.max_deviation, self.tolerance
            )
        } else {
            write!(
                f,
                "NOT equivalent: {} pairs only in left, {} only in right (first: {:?}), max interval deviation {:.3e} (tolerance {:.1e})",
                self.only_in_a.len(),
                self.only_in_b.len(),
                self.only_in_a.first().or(self.only_in_b.first()),
                self.max_deviation,
                self.tolerance
            )
        }
    }
}

/// Compare two canonical result sets: symmetric difference of their pair sets
/// plus the maximum interval-endpoint deviation over shared pairs.
pub fn compare_result_sets(a: &ResultSet, b: &ResultSet, tolerance: f64) -> EquivalenceReport {
    let mut only_in_a = Vec::new();
    let mut only_in_b = Vec::new();
    let mut max_deviation: f64 = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.records.len() && j < b.records.len() {
        let (ra, rb) = (&a.records[i], &b.records[j]);
        match ra.key().cmp(&rb.key()) {
            std::cmp::Ordering::Less => {
                only_in_a.push(ra.key());
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                only_in_b.push(rb.key());
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                max_deviation = max_deviation
                    .max((ra.interval.begin - rb.interval.begin).abs())
                    .max((ra.interval.end - rb.interval.end).abs());
                i += 1;
                j += 1;
            }
        }
    }
    only_in_a.extend(a.records[i..].iter().map(Interaction::key));
    only_in_b.extend(b.records[j..].iter().map(Interaction::key));
    EquivalenceReport {
        only_in_a,
        only_in_b,
        max_deviation,
        tolerance,
    }
}

/// Shared counter for kernel instrumentation (candidates refined).
#[derive(Default)]
pub struct RefineCounter(AtomicU64);

impl RefineCounter {
    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}
