//! Result-set and metrics serialization.

use std::io::{self, Write};
use std::path::Path;

use trajsearch::engine::{ResultSet, RunMetrics};

/// Result CSV column order. Interval endpoints are written with 17
/// significant digits so golden files round-trip exactly.
pub const RESULTS_HEADER: &str = "query_traj,query_seg,entry_traj,entry_seg,t_begin,t_end";

pub fn write_results_csv<W: Write>(set: &ResultSet, mut out: W) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for rec in set.iter() {
        writeln!(
            out,
            "{},{},{},{},{:.16e},{:.16e}",
            rec.query_trajectory,
            rec.query_segment,
            rec.entry_trajectory,
            rec.entry_segment,
            rec.interval.begin,
            rec.interval.end
        )?;
    }
    Ok(())
}

/// One metrics row per search run.
pub const METRICS_HEADER: &str = "index,dataset,queries,d,workers,result_capacity,invocations,\
reserved_records,final_records,dedup_ratio,candidates_refined,wall_ms";

pub struct MetricsRow<'a> {
    pub index_label: &'a str,
    pub dataset: &'a str,
    pub queries: &'a str,
    pub d: f64,
    pub workers: usize,
    pub result_capacity: usize,
    pub metrics: &'a RunMetrics,
}

impl MetricsRow<'_> {
    pub fn to_csv_line(&self) -> String {
        let m = self.metrics;
        format!(
            "{},{},{},{},{},{},{},{},{},{:.4},{},{:.3}",
            self.index_label,
            self.dataset,
            self.queries,
            self.d,
            self.workers,
            self.result_capacity,
            m.invocations,
            m.reserved_records,
            m.final_records,
            m.dedup_ratio,
            m.candidates_refined,
            m.wall.as_secs_f64() * 1e3
        )
    }
}

/// Append a metrics row, writing the header first when the file is new.
pub fn append_metrics(path: &Path, row: &MetricsRow<'_>) -> io::Result<()> {
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    if fresh {
        writeln!(file, "{METRICS_HEADER}")?;
    }
    writeln!(file, "{}", row.to_csv_line())
}
