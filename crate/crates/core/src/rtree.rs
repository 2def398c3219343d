//! Multicore CPU baseline: an in-memory R-tree over 4-D (space + time)
//! bounding boxes, each leaf entry covering up to `r` consecutive segments of
//! one trajectory.
//!
//! The tree is bulk-loaded with sort-tile-recursive packing on box centers,
//! which is deterministic and balanced. Larger `r` gives a shallower tree at
//! the price of looser boxes (more wasted candidate refinement); the final
//! result set is independent of both `r` and the fanout.

use crate::engine::{
    run_batched, EngineConfig, EngineError, RefineCounter, ResultBuffer, ResultSet, RunMetrics,
    SearchKernel,
};
use crate::geometry::{compare, SegmentST};

pub const DEFAULT_FANOUT: usize = 16;

/// An axis-aligned box over x, y, z, t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box4 {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl Box4 {
    fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 4],
            max: [f64::NEG_INFINITY; 4],
        }
    }

    fn of_segment(seg: &SegmentST) -> Self {
        let mbb = seg.mbb();
        Self {
            min: [mbb.min.x, mbb.min.y, mbb.min.z, seg.t_start],
            max: [mbb.max.x, mbb.max.y, mbb.max.z, seg.t_end],
        }
    }

    fn grow(&mut self, other: &Box4) {
        for dim in 0..4 {
            self.min[dim] = self.min[dim].min(other.min[dim]);
            self.max[dim] = self.max[dim].max(other.max[dim]);
        }
    }

    #[inline]
    pub fn intersects(&self, other: &Box4) -> bool {
        (0..4).all(|d| self.min[d] <= other.max[d] && self.max[d] >= other.min[d])
    }

    #[inline]
    pub fn contains(&self, other: &Box4) -> bool {
        (0..4).all(|d| self.min[d] <= other.min[d] && self.max[d] >= other.max[d])
    }

    fn center(&self, dim: usize) -> f64 {
        0.5 * (self.min[dim] + self.max[dim])
    }
}

/// Tight 4-D box over at most `r` consecutive segments of one trajectory,
/// with their inclusive index range into the database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RTreeLeafEntry {
    pub bounds: Box4,
    pub first_segment: u32,
    pub last_segment: u32,
}

#[derive(Debug, Clone)]
pub enum NodePayload {
    Internal(Vec<RTreeNode>),
    Leaf(Vec<RTreeLeafEntry>),
}

#[derive(Debug, Clone)]
pub struct RTreeNode {
    pub bounds: Box4,
    pub payload: NodePayload,
}

#[derive(Debug, Clone)]
pub struct RTreeIndex {
    pub root: RTreeNode,
    pub r: u32,
    pub fanout: usize,
    pub height: u32,
    pub n_leaf_entries: usize,
}

/// Group per-trajectory runs of up to `r` segments into leaf entries and pack
/// them bottom-up with sort-tile-recursive tiling over the 4 box-center
/// coordinates.
pub fn build_rtree(segments: &[SegmentST], r: u32, fanout: usize) -> RTreeIndex {
    assert!(r >= 1, "segments per leaf entry must be at least 1");
    assert!(fanout >= 2, "fanout must be at least 2");
    assert!(!segments.is_empty(), "cannot index an empty database");

    let mut entries: Vec<RTreeLeafEntry> = Vec::with_capacity(segments.len() / r as usize + 1);
    let mut run_start = 0usize;
    while run_start < segments.len() {
        let trajectory = segments[run_start].trajectory;
        let mut run_end = run_start;
        let mut bounds = Box4::of_segment(&segments[run_start]);
        while run_end + 1 < segments.len()
            && segments[run_end + 1].trajectory == trajectory
            && (run_end + 1 - run_start) < r as usize
        {
            run_end += 1;
            bounds.grow(&Box4::of_segment(&segments[run_end]));
        }
        entries.push(RTreeLeafEntry {
            bounds,
            first_segment: run_start as u32,
            last_segment: run_end as u32,
        });
        run_start = run_end + 1;
    }
    let n_leaf_entries = entries.len();

    let mut nodes: Vec<RTreeNode> = str_tile(entries, fanout, |e| e.bounds)
        .into_iter()
        .map(|group| {
            let mut bounds = Box4::empty();
            for entry in &group {
                bounds.grow(&entry.bounds);
            }
            RTreeNode {
                bounds,
                payload: NodePayload::Leaf(group),
            }
        })
        .collect();

    let mut height = 1;
    while nodes.len() > 1 {
        nodes = str_tile(nodes, fanout, |n| n.bounds)
            .into_iter()
            .map(|group| {
                let mut bounds = Box4::empty();
                for child in &group {
                    bounds.grow(&child.bounds);
                }
                RTreeNode {
                    bounds,
                    payload: NodePayload::Internal(group),
                }
            })
            .collect();
        height += 1;
    }
    let root = nodes.pop().expect("non-empty input produces a root");
    RTreeIndex {
        root,
        r,
        fanout,
        height,
        n_leaf_entries,
    }
}

/// Sort-tile-recursive packing: sort by the x center, slice, then recurse on
/// y, z, t inside each slice, producing groups of at most `fanout` items.
fn str_tile<T, F: Fn(&T) -> Box4 + Copy>(items: Vec<T>, fanout: usize, bounds: F) -> Vec<Vec<T>> {
    fn tile<T, F: Fn(&T) -> Box4 + Copy>(
        mut items: Vec<T>,
        fanout: usize,
        dim: usize,
        bounds: F,
        out: &mut Vec<Vec<T>>,
    ) {
        if items.len() <= fanout {
            if !items.is_empty() {
                out.push(items);
            }
            return;
        }
        items.sort_by(|a, b| bounds(a).center(dim).total_cmp(&bounds(b).center(dim)));
        let n_groups = items.len().div_ceil(fanout);
        let remaining_dims = 3 - dim;
        // Number of slices along this dimension so the remaining dimensions
        // can tile the rest.
        let n_slices = if remaining_dims == 0 {
            n_groups
        } else {
            (n_groups as f64)
                .powf(1.0 / (remaining_dims + 1) as f64)
                .ceil() as usize
        };
        let slice_len = items.len().div_ceil(n_slices.max(1));
        while !items.is_empty() {
            let take = slice_len.min(items.len());
            let rest = items.split_off(take);
            if dim == 3 {
                out.push(items);
            } else {
                tile(items, fanout, dim + 1, bounds, out);
            }
            items = rest;
        }
    }

    let mut out = Vec::new();
    tile(items, fanout, 0, bounds, &mut out);
    out
}

impl RTreeIndex {
    /// Leaf entries whose boxes intersect `probe`, in deterministic tree
    /// order.
    pub fn locate<'a>(&'a self, probe: &Box4, out: &mut Vec<&'a RTreeLeafEntry>) {
        fn walk<'a>(node: &'a RTreeNode, probe: &Box4, out: &mut Vec<&'a RTreeLeafEntry>) {
            if !node.bounds.intersects(probe) {
                return;
            }
            match &node.payload {
                NodePayload::Internal(children) => {
                    for child in children {
                        walk(child, probe, out);
                    }
                }
                NodePayload::Leaf(entries) => {
                    out.extend(entries.iter().filter(|e| e.bounds.intersects(probe)));
                }
            }
        }
        out.clear();
        walk(&self.root, probe, out);
    }
}

/// 4-D probe box of a query: spatial faces expanded by `d`, temporal extent
/// exact.
fn probe_box(query: &SegmentST, d: f64) -> Box4 {
    let mbb = query.mbb().expanded(d);
    Box4 {
        min: [mbb.min.x, mbb.min.y, mbb.min.z, query.t_start],
        max: [mbb.max.x, mbb.max.y, mbb.max.z, query.t_end],
    }
}

struct RTreeKernel<'a> {
    index: &'a RTreeIndex,
    entries: &'a [SegmentST],
    queries: &'a [SegmentST],
    d: f64,
    refined: &'a RefineCounter,
}

impl SearchKernel for RTreeKernel<'_> {
    fn run(&self, query_id: u32, sink: &ResultBuffer) {
        if sink.is_full() {
            sink.mark_overflow(query_id);
            return;
        }
        let query = &self.queries[query_id as usize];
        let probe = probe_box(query, self.d);
        let mut hits = Vec::new();
        self.index.locate(&probe, &mut hits);
        let mut refined = 0u64;
        for leaf in hits {
            for entry in &self.entries[leaf.first_segment as usize..=leaf.last_segment as usize] {
                refined += 1;
                if let Some(hit) = compare(entry, query, self.d) {
                    if !sink.try_push(hit) {
                        sink.mark_overflow(query_id);
                        self.refined.add(refined);
                        return;
                    }
                }
            }
        }
        self.refined.add(refined);
    }
}

/// Parallel range search plus refinement: each worker takes one query,
/// collects the intersecting leaf entries' segment ranges and refines every
/// member segment.
pub fn search_rtree(
    index: &RTreeIndex,
    entries: &[SegmentST],
    queries: &[SegmentST],
    d: f64,
    cfg: &EngineConfig,
) -> Result<(ResultSet, RunMetrics), EngineError> {
    let refined = RefineCounter::default();
    let kernel = RTreeKernel {
        index,
        entries,
        queries,
        d,
        refined: &refined,
    };
    let ids: Vec<u32> = (0..queries.len() as u32).collect();
    let (set, mut metrics) = run_batched(&kernel, ids, cfg)?;
    metrics.candidates_refined = refined.get();
    Ok((set, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_random_walk, RandomWalkParams};
    use crate::engine::brute_force_oracle;
    use crate::geometry::Point3;

    fn straight_trajectory(trajectory: u32, n_segments: u32) -> Vec<SegmentST> {
        (0..n_segments)
            .map(|k| {
                SegmentST::new(
                    trajectory,
                    k,
                    Point3::new(f64::from(k), 0.0, 0.0),
                    Point3::new(f64::from(k) + 1.0, 0.0, 0.0),
                    f64::from(k),
                    f64::from(k) + 1.0,
                )
                .unwrap()
            })
            .collect()
    }

    fn leaf_entries(node: &RTreeNode, out: &mut Vec<RTreeLeafEntry>) {
        match &node.payload {
            NodePayload::Internal(children) => {
                for child in children {
                    leaf_entries(child, out);
                }
            }
            NodePayload::Leaf(entries) => out.extend_from_slice(entries),
        }
    }

    #[test]
    fn grouping_arithmetic() {
        // 399 segments at r=10: 39 full groups and one of 9.
        let segments = straight_trajectory(0, 399);
        let index = build_rtree(&segments, 10, DEFAULT_FANOUT);
        assert_eq!(index.n_leaf_entries, 40);
        let mut leaves = Vec::new();
        leaf_entries(&index.root, &mut leaves);
        let mut sizes: Vec<u32> = leaves
            .iter()
            .map(|l| l.last_segment - l.first_segment + 1)
            .collect();
        sizes.sort_unstable();
        assert_eq!(sizes[0], 9);
        assert!(sizes[1..].iter().all(|&s| s == 10));

        // r=1: one segment per leaf entry.
        let index = build_rtree(&segments, 1, DEFAULT_FANOUT);
        assert_eq!(index.n_leaf_entries, segments.len());

        // r=4 over a 6-segment trajectory: groups {0..3}, {4..5}.
        let segments = straight_trajectory(0, 6);
        let index = build_rtree(&segments, 4, DEFAULT_FANOUT);
        let mut leaves = Vec::new();
        leaf_entries(&index.root, &mut leaves);
        let mut ranges: Vec<(u32, u32)> = leaves
            .iter()
            .map(|l| (l.first_segment, l.last_segment))
            .collect();
        ranges.sort_unstable();
        assert_eq!(ranges, vec![(0, 3), (4, 5)]);
    }

    #[test]
    fn groups_never_span_trajectories() {
        let mut segments = straight_trajectory(0, 7);
        segments.extend(straight_trajectory(1, 5));
        let index = build_rtree(&segments, 4, DEFAULT_FANOUT);
        let mut leaves = Vec::new();
        leaf_entries(&index.root, &mut leaves);
        assert_eq!(leaves.len(), 2 + 2);
        for leaf in &leaves {
            let t = segments[leaf.first_segment as usize].trajectory;
            assert!((leaf.first_segment..=leaf.last_segment)
                .all(|i| segments[i as usize].trajectory == t));
        }
    }

    #[test]
    fn boxes_are_tight_and_nested() {
        let ds = generate_random_walk(&RandomWalkParams {
            n_trajectories: 9,
            n_timesteps: 50,
            seed: 14,
            ..Default::default()
        });
        let index = build_rtree(&ds.segments, 5, 4);

        fn check(node: &RTreeNode, segments: &[SegmentST]) {
            match &node.payload {
                NodePayload::Internal(children) => {
                    for child in children {
                        assert!(node.bounds.contains(&child.bounds));
                        check(child, segments);
                    }
                }
                NodePayload::Leaf(entries) => {
                    for entry in entries {
                        assert!(node.bounds.contains(&entry.bounds));
                        let mut tight = Box4::empty();
                        for seg in
                            &segments[entry.first_segment as usize..=entry.last_segment as usize]
                        {
                            tight.grow(&Box4::of_segment(seg));
                        }
                        assert_eq!(&tight, &entry.bounds);
                    }
                }
            }
        }
        check(&index.root, &ds.segments);
    }

    #[test]
    fn leaves_sit_at_equal_depth() {
        let ds = generate_random_walk(&RandomWalkParams {
            n_trajectories: 20,
            n_timesteps: 60,
            seed: 8,
            ..Default::default()
        });
        let index = build_rtree(&ds.segments, 3, 8);

        fn depths(node: &RTreeNode, depth: u32, out: &mut Vec<u32>) {
            match &node.payload {
                NodePayload::Internal(children) => {
                    for child in children {
                        depths(child, depth + 1, out);
                    }
                }
                NodePayload::Leaf(_) => out.push(depth),
            }
        }
        let mut all = Vec::new();
        depths(&index.root, 0, &mut all);
        assert!(all.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(all[0] + 1, index.height);
    }

    #[test]
    fn disjoint_trajectories_yield_empty_results() {
        let mut segments = straight_trajectory(0, 5);
        for seg in &mut segments {
            seg.start_pos.y = 100.0;
            seg.end_pos.y = 100.0;
        }
        let queries = straight_trajectory(0, 5);
        let index = build_rtree(&segments, 2, DEFAULT_FANOUT);
        let (set, _) = search_rtree(
            &index,
            &segments,
            &queries,
            0.5,
            &EngineConfig::sequential(),
        )
        .unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn search_matches_oracle_for_every_r() {
        let ds = generate_random_walk(&RandomWalkParams {
            n_trajectories: 15,
            n_timesteps: 80,
            seed: 51,
            ..Default::default()
        });
        let qs = generate_random_walk(&RandomWalkParams {
            n_trajectories: 3,
            n_timesteps: 80,
            seed: 99,
            ..Default::default()
        });
        let cfg = EngineConfig::sequential();
        for d in [20.0, 400.0] {
            let oracle = brute_force_oracle(&ds.segments, &qs.segments, d);
            let mut last_candidates = 0u64;
            for r in [1, 4, 10] {
                let index = build_rtree(&ds.segments, r, DEFAULT_FANOUT);
                let (set, metrics) =
                    search_rtree(&index, &ds.segments, &qs.segments, d, &cfg).unwrap();
                assert_eq!(set, oracle, "d={d} r={r}");
                // Fatter leaf boxes never shrink the candidate workload.
                assert!(metrics.candidates_refined >= last_candidates);
                last_candidates = metrics.candidates_refined;
            }
        }
    }

    #[test]
    fn results_are_fanout_invariant() {
        let ds = generate_random_walk(&RandomWalkParams {
            n_trajectories: 10,
            n_timesteps: 40,
            seed: 6,
            ..Default::default()
        });
        let qs = generate_random_walk(&RandomWalkParams {
            n_trajectories: 2,
            n_timesteps: 40,
            seed: 60,
            ..Default::default()
        });
        let cfg = EngineConfig::sequential();
        let mut reference = None;
        for fanout in [4, 16, 64] {
            let index = build_rtree(&ds.segments, 4, fanout);
            let (set, _) = search_rtree(&index, &ds.segments, &qs.segments, 250.0, &cfg).unwrap();
            if let Some(prev) = &reference {
                assert_eq!(&set, prev);
            }
            reference = Some(set);
        }
    }
}
