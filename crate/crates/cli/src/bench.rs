//! Scenario benchmark runner: response-time tables over parameter sweeps.
//!
//! Index build time is excluded from the response time, matching how the
//! response times are defined for the search itself; schedule construction
//! happens per query batch and is included. Every row carries the record
//! count, and counts must agree across all configurations at the same
//! distance — timings vary, correctness may not.

use std::collections::BTreeMap;
use std::time::Instant;

use trajsearch::driver::IndexSpec;
use trajsearch::engine::{EngineConfig, ResultSet, RunMetrics};
use trajsearch::fsg::{self, FsgConfig, FsgIndex};
use trajsearch::geometry::SegmentST;
use trajsearch::rtree::{build_rtree, search_rtree, RTreeIndex};
use trajsearch::spatiotemporal::{
    build_schedule_st, build_spatiotemporal, search_spatiotemporal, SpatioTemporalIndex,
};
use trajsearch::temporal::{
    build_schedule_temporal, build_temporal, search_temporal, TemporalIndex,
};

use crate::CliError;

pub struct BenchPlan<'a> {
    pub entries: &'a [SegmentST],
    pub queries: &'a [SegmentST],
    pub specs: Vec<IndexSpec>,
    pub distances: Vec<f64>,
    pub trials: u32,
    pub engine: EngineConfig,
    pub fsg: FsgConfig,
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub index_label: String,
    pub d: f64,
    pub trials: u32,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub records: u64,
    pub invocations: u32,
    pub candidates_refined: u64,
}

pub const TABLE_HEADER: &str =
    "index,d,trials,mean_ms,std_ms,records,invocations,candidates_refined";

impl BenchRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{},{},{}",
            self.index_label,
            self.d,
            self.trials,
            self.mean_ms,
            self.std_ms,
            self.records,
            self.invocations,
            self.candidates_refined
        )
    }
}

/// A built index of any backend, ready to serve searches.
pub enum BuiltIndex {
    Fsg(FsgIndex),
    Temporal(TemporalIndex),
    St(SpatioTemporalIndex),
    RTree(RTreeIndex),
}

pub fn build_index(spec: IndexSpec, entries: &[SegmentST]) -> Result<BuiltIndex, CliError> {
    Ok(match spec {
        IndexSpec::Fsg { cells } => {
            BuiltIndex::Fsg(fsg::build_fsg(entries, [cells, cells, cells]))
        }
        IndexSpec::Temporal { bins } => BuiltIndex::Temporal(build_temporal(entries, bins)),
        IndexSpec::SpatioTemporal { bins, subbins } => BuiltIndex::St(
            build_spatiotemporal(entries, bins, subbins)
                .map_err(trajsearch::driver::SearchError::Build)?,
        ),
        IndexSpec::RTree {
            segments_per_box,
            fanout,
        } => BuiltIndex::RTree(build_rtree(entries, segments_per_box, fanout)),
    })
}

/// One search over a prebuilt index (schedules are rebuilt per run; they are
/// part of query processing).
pub fn run_search_once(
    built: &BuiltIndex,
    entries: &[SegmentST],
    queries: &[SegmentST],
    d: f64,
    fsg_cfg: &FsgConfig,
    engine: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), CliError> {
    let result = match built {
        BuiltIndex::Fsg(index) => fsg::search_spatial(index, entries, queries, d, fsg_cfg, engine)?,
        BuiltIndex::Temporal(index) => {
            let schedule = build_schedule_temporal(index, queries);
            search_temporal(index, queries, &schedule, d, engine)?
        }
        BuiltIndex::St(index) => {
            let schedule = build_schedule_st(index, queries, d);
            search_spatiotemporal(index, queries, &schedule, d, engine)?
        }
        BuiltIndex::RTree(index) => search_rtree(index, entries, queries, d, engine)?,
    };
    Ok(result)
}

pub fn run_bench(plan: &BenchPlan<'_>) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = Vec::new();
    for &spec in &plan.specs {
        let built = build_index(spec, plan.entries)?;
        for &d in &plan.distances {
            let mut wall_ms = Vec::with_capacity(plan.trials as usize);
            let mut last = None;
            for _ in 0..plan.trials.max(1) {
                let start = Instant::now();
                let (set, metrics) =
                    run_search_once(&built, plan.entries, plan.queries, d, &plan.fsg, &plan.engine)?;
                wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
                last = Some((set, metrics));
            }
            let (set, metrics) = last.expect("at least one trial ran");
            let n = wall_ms.len() as f64;
            let mean = wall_ms.iter().sum::<f64>() / n;
            let std = if wall_ms.len() > 1 {
                (wall_ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(BenchRow {
                index_label: spec.label(),
                d,
                trials: plan.trials.max(1),
                mean_ms: mean,
                std_ms: std,
                records: set.len() as u64,
                invocations: metrics.invocations,
                candidates_refined: metrics.candidates_refined,
            });
        }
    }
    check_counts(&rows)?;
    Ok(rows)
}

/// Record counts must agree across every configuration at the same distance.
fn check_counts(rows: &[BenchRow]) -> Result<(), CliError> {
    let mut by_d: BTreeMap<u64, Vec<&BenchRow>> = BTreeMap::new();
    for row in rows {
        by_d.entry(row.d.to_bits()).or_default().push(row);
    }
    for group in by_d.values() {
        let expected = group[0].records;
        if let Some(bad) = group.iter().find(|row| row.records != expected) {
            return Err(CliError::Verification(format!(
                "record counts disagree at d={}: {} returned {} records, {} returned {}",
                bad.d, group[0].index_label, expected, bad.index_label, bad.records
            )));
        }
    }
    Ok(())
}
