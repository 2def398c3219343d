//! Distance-threshold similarity search over 4-D moving-object trajectories.
//!
//! A database `D` of entry line segments (3 spatial dimensions + time, linear
//! motion between timestamped endpoints) is searched against a query set `Q`:
//! report every (query segment, entry segment) pair that comes within a
//! Euclidean distance `d` during the segments' temporal overlap, together with
//! the exact closed time interval of the encounter.
//!
//! Four interchangeable index backends narrow the candidate pairs before the
//! exact [`geometry::compare`] refinement:
//!
//! - [`fsg`]: a flatly structured spatial grid with a cell lookup array,
//! - [`temporal`]: fixed-length temporal bins over a time-sorted entry array,
//! - [`spatiotemporal`]: temporal bins subdivided into per-dimension spatial
//!   slabs, with a dimension-selecting schedule and temporal fallback,
//! - [`rtree`]: a bulk-loaded 4-D R-tree baseline (the multicore CPU path).
//!
//! All searches execute through the [`engine`] module, which emulates a
//! data-parallel kernel contract: one logical worker per schedule entry, a
//! fixed-capacity result buffer filled through reservations, and batched
//! re-invocation of the queries that overflow it.

pub mod dataset;
pub mod driver;
pub mod engine;
pub mod fsg;
pub mod geometry;
pub mod rtree;
pub mod spatiotemporal;
pub mod temporal;

pub use engine::{EngineConfig, ResultSet, RunMetrics};
pub use geometry::{compare, Interaction, Mbb, Point3, SegmentST, TimeInterval};
