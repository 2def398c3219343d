//! One-call search entry point over the four index backends, shared by the
//! CLI and the verification suites.

use thiserror::Error;

use crate::engine::{brute_force_oracle, EngineConfig, EngineError, ResultSet, RunMetrics};
use crate::fsg::{self, FsgConfig};
use crate::geometry::SegmentST;
use crate::rtree;
use crate::spatiotemporal::{self, StBuildError};
use crate::temporal;

/// Index backend plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexSpec {
    /// Flat spatial grid with this many cells per dimension.
    Fsg { cells: u32 },
    /// Temporal bins.
    Temporal { bins: u32 },
    /// Temporal bins with v spatial slabs per dimension.
    SpatioTemporal { bins: u32, subbins: u32 },
    /// R-tree baseline with r segments per leaf box.
    RTree { segments_per_box: u32, fanout: usize },
}

impl IndexSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            IndexSpec::Fsg { .. } => "fsg",
            IndexSpec::Temporal { .. } => "temporal",
            IndexSpec::SpatioTemporal { .. } => "st",
            IndexSpec::RTree { .. } => "rtree",
        }
    }

    /// `kind(param ...)` label for tables and logs; comma-free so it can sit
    /// in a CSV column.
    pub fn label(&self) -> String {
        match self {
            IndexSpec::Fsg { cells } => format!("fsg(cells={cells})"),
            IndexSpec::Temporal { bins } => format!("temporal(bins={bins})"),
            IndexSpec::SpatioTemporal { bins, subbins } => {
                format!("st(bins={bins} subbins={subbins})")
            }
            IndexSpec::RTree {
                segments_per_box,
                fanout,
            } => format!("rtree(r={segments_per_box} fanout={fanout})"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Build(#[from] StBuildError),
}

/// Build the index described by `spec` over `entries` and run the full
/// distance-threshold search. All backends return the same deduplicated
/// result set for the same inputs.
pub fn run_search(
    spec: IndexSpec,
    entries: &[SegmentST],
    queries: &[SegmentST],
    d: f64,
    fsg_cfg: &FsgConfig,
    engine_cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), SearchError> {
    let out = match spec {
        IndexSpec::Fsg { cells } => {
            let index = fsg::build_fsg(entries, [cells, cells, cells]);
            fsg::search_spatial(&index, entries, queries, d, fsg_cfg, engine_cfg)?
        }
        IndexSpec::Temporal { bins } => {
            let index = temporal::build_temporal(entries, bins);
            let schedule = temporal::build_schedule_temporal(&index, queries);
            temporal::search_temporal(&index, queries, &schedule, d, engine_cfg)?
        }
        IndexSpec::SpatioTemporal { bins, subbins } => {
            let index = spatiotemporal::build_spatiotemporal(entries, bins, subbins)?;
            let schedule = spatiotemporal::build_schedule_st(&index, queries, d);
            spatiotemporal::search_spatiotemporal(&index, queries, &schedule, d, engine_cfg)?
        }
        IndexSpec::RTree {
            segments_per_box,
            fanout,
        } => {
            let index = rtree::build_rtree(entries, segments_per_box, fanout);
            rtree::search_rtree(&index, entries, queries, d, engine_cfg)?
        }
    };
    Ok(out)
}

/// Run the search and compare against the all-pairs oracle.
pub fn verify_against_oracle(
    spec: IndexSpec,
    entries: &[SegmentST],
    queries: &[SegmentST],
    d: f64,
    tolerance: f64,
    fsg_cfg: &FsgConfig,
    engine_cfg: &EngineConfig,
) -> Result<crate::engine::EquivalenceReport, SearchError> {
    let (set, _) = run_search(spec, entries, queries, d, fsg_cfg, engine_cfg)?;
    let oracle = brute_force_oracle(entries, queries, d);
    Ok(crate::engine::compare_result_sets(&set, &oracle, tolerance))
}
