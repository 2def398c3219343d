//! Synthetic trajectory generation and dataset file I/O.
//!
//! Datasets are flat segment arrays: all segments of a trajectory are
//! contiguous, ordered by segment id, and chained exactly (segment k's end
//! point and time equal segment k+1's start). Generation is deterministic for
//! a fixed seed and independent of worker scheduling: every trajectory draws
//! from its own counter-based stream derived from `(seed, trajectory_id)`.

use std::io::{self, BufRead, Read, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Point3, SegmentST, SegmentError};

/// Column order shared by the CSV and binary formats.
pub const CSV_HEADER: &str = "traj_id,seg_id,x_start,y_start,z_start,t_start,x_end,y_end,z_end,t_end";

/// Magic bytes of the binary dataset format.
pub const BINARY_MAGIC: &[u8; 4] = b"TRJ1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {index}: {source}")]
    Segment { index: usize, source: SegmentError },
    #[error("record {index}: trajectory {trajectory} reappears after other trajectories (blocks must be contiguous)")]
    NonContiguousTrajectory { index: usize, trajectory: u32 },
    #[error("record {index}: trajectory {trajectory} has segment id {found}, expected {expected} (ids must be dense from 0)")]
    NonDenseSegmentIds {
        index: usize,
        trajectory: u32,
        expected: u32,
        found: u32,
    },
    #[error("record {index}: trajectory id {found}, expected {expected} (trajectory ids must be dense from 0)")]
    NonDenseTrajectoryIds {
        index: usize,
        expected: u32,
        found: u32,
    },
    #[error("record {index}: trajectory {trajectory} is discontinuous (segment end does not equal the next segment's start)")]
    DiscontinuousTrajectory { index: usize, trajectory: u32 },
    #[error("empty dataset")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parameters of the sparse random-walk generator (the Random-1M family):
/// unit-time steps, per-coordinate displacement uniform in ±`step_max`,
/// trajectory start times uniform over `[0, start_window]`, initial positions
/// uniform in a cube of side `initial_box`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkParams {
    pub n_trajectories: u32,
    pub n_timesteps: u32,
    pub start_window: f64,
    pub initial_box: f64,
    pub step_max: f64,
    pub seed: u64,
}

impl Default for RandomWalkParams {
    /// The Random-1M preset: 2,500 trajectories x 400 timesteps = 997,500
    /// segments, start times over [0,100].
    fn default() -> Self {
        Self {
            n_trajectories: 2_500,
            n_timesteps: 400,
            start_window: 100.0,
            initial_box: 1_000.0,
            step_max: 1.0,
            seed: 0,
        }
    }
}

impl RandomWalkParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_trajectories == 0 {
            return Err("n_trajectories must be at least 1".into());
        }
        if self.n_timesteps < 2 {
            return Err("n_timesteps must be at least 2".into());
        }
        if self.step_max.is_nan() || self.step_max <= 0.0 {
            return Err("step_max must be positive".into());
        }
        let nonnegative = |x: f64| x >= 0.0; // NaN fails
        if !nonnegative(self.start_window) || !nonnegative(self.initial_box) {
            return Err("start_window and initial_box must be nonnegative".into());
        }
        Ok(())
    }
}

/// Parameters of the dense generator: all particles start at t = 0 inside a
/// cube sized for the target density; per-step per-coordinate displacement
/// magnitude uniform in `[step_min, step_max]` with random sign; a particle
/// drifting outside the cube by more than `escape_fraction` of the side
/// length has its subsequent step signs in that coordinate forced toward the
/// cube until it re-enters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWalkParams {
    pub n_particles: u32,
    pub n_timesteps: u32,
    /// Particles per unit volume; the cube side is `(n/density)^(1/3)`.
    pub density: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub escape_fraction: f64,
    pub seed: u64,
}

impl Default for DenseWalkParams {
    /// The Random-dense preset in parsecs: 65,536 particles at 0.112 pc^-3
    /// over 193 timesteps, steps of 1-5 pc, 20% escape margin.
    fn default() -> Self {
        Self {
            n_particles: 65_536,
            n_timesteps: 193,
            density: 0.112,
            step_min: 1.0,
            step_max: 5.0,
            escape_fraction: 0.2,
            seed: 0,
        }
    }
}

impl DenseWalkParams {
    /// Side length of the starting cube.
    pub fn cube_side(&self) -> f64 {
        (self.n_particles as f64 / self.density).cbrt()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_particles == 0 {
            return Err("n_particles must be at least 1".into());
        }
        if self.n_timesteps < 2 {
            return Err("n_timesteps must be at least 2".into());
        }
        if self.density.is_nan() || self.density <= 0.0 {
            return Err("density must be positive".into());
        }
        let ordered = self.step_min >= 0.0 && self.step_min <= self.step_max; // NaN fails
        if !ordered {
            return Err("step bounds must satisfy 0 <= step_min <= step_max".into());
        }
        if self.escape_fraction < 0.0 {
            return Err("escape_fraction must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerationParams {
    RandomWalk(RandomWalkParams),
    DenseWalk(DenseWalkParams),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    pub units: String,
    pub seed: Option<u64>,
    pub params: Option<GenerationParams>,
}

/// A validated segment database (or query set).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub segments: Vec<SegmentST>,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    /// Wrap raw segments, enforcing the structural invariants: contiguous,
    /// dense-id trajectory blocks whose segments chain exactly.
    pub fn from_segments(
        segments: Vec<SegmentST>,
        meta: DatasetMeta,
    ) -> Result<Self, DatasetError> {
        validate_segments(&segments)?;
        Ok(Self { segments, meta })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn n_trajectories(&self) -> u32 {
        self.segments.last().map_or(0, |s| s.trajectory + 1)
    }
}

fn validate_segments(segments: &[SegmentST]) -> Result<(), DatasetError> {
    if segments.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut next_trajectory = 0u32;
    for (index, seg) in segments.iter().enumerate() {
        SegmentST::new(
            seg.trajectory,
            seg.segment,
            seg.start_pos,
            seg.end_pos,
            seg.t_start,
            seg.t_end,
        )
        .map_err(|source| DatasetError::Segment { index, source })?;

        let starts_trajectory = index == 0 || segments[index - 1].trajectory != seg.trajectory;
        if starts_trajectory {
            if seg.trajectory != next_trajectory {
                if seg.trajectory < next_trajectory {
                    return Err(DatasetError::NonContiguousTrajectory {
                        index,
                        trajectory: seg.trajectory,
                    });
                }
                return Err(DatasetError::NonDenseTrajectoryIds {
                    index,
                    expected: next_trajectory,
                    found: seg.trajectory,
                });
            }
            next_trajectory += 1;
            if seg.segment != 0 {
                return Err(DatasetError::NonDenseSegmentIds {
                    index,
                    trajectory: seg.trajectory,
                    expected: 0,
                    found: seg.segment,
                });
            }
        } else {
            let prev = &segments[index - 1];
            if seg.segment != prev.segment + 1 {
                return Err(DatasetError::NonDenseSegmentIds {
                    index,
                    trajectory: seg.trajectory,
                    expected: prev.segment + 1,
                    found: seg.segment,
                });
            }
            if prev.end_pos != seg.start_pos || prev.t_end != seg.t_start {
                return Err(DatasetError::DiscontinuousTrajectory {
                    index,
                    trajectory: seg.trajectory,
                });
            }
        }
    }
    Ok(())
}

/// Counter-based stream for one trajectory: scheduling-independent
/// determinism regardless of how generation is parallelized.
fn trajectory_rng(seed: u64, trajectory: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(trajectory) + 1);
    rng
}

/// Random-walk generator: `n_trajectories` trajectories of
/// `n_timesteps - 1` unit-time segments each.
pub fn generate_random_walk(p: &RandomWalkParams) -> TrajectoryDataset {
    p.validate().expect("invalid random-walk parameters");
    let per_trajectory: Vec<Vec<SegmentST>> = (0..p.n_trajectories)
        .into_par_iter()
        .map(|tid| {
            let mut rng = trajectory_rng(p.seed, tid);
            let t0 = if p.start_window > 0.0 {
                rng.gen_range(0.0..=p.start_window)
            } else {
                0.0
            };
            let mut pos = Point3::new(
                rng.gen_range(0.0..=p.initial_box),
                rng.gen_range(0.0..=p.initial_box),
                rng.gen_range(0.0..=p.initial_box),
            );
            let steps = p.n_timesteps - 1;
            let mut segments = Vec::with_capacity(steps as usize);
            for k in 0..steps {
                let next = pos
                    + Point3::new(
                        rng.gen_range(-p.step_max..=p.step_max),
                        rng.gen_range(-p.step_max..=p.step_max),
                        rng.gen_range(-p.step_max..=p.step_max),
                    );
                segments.push(
                    SegmentST::new(tid, k, pos, next, t0 + f64::from(k), t0 + f64::from(k + 1))
                        .expect("generated segment is valid"),
                );
                pos = next;
            }
            segments
        })
        .collect();
    let segments: Vec<SegmentST> = per_trajectory.into_iter().flatten().collect();
    debug_assert!(validate_segments(&segments).is_ok());
    TrajectoryDataset {
        segments,
        meta: DatasetMeta {
            name: "random-walk".into(),
            units: "model".into(),
            seed: Some(p.seed),
            params: Some(GenerationParams::RandomWalk(p.clone())),
        },
    }
}

/// Dense-cube generator: random walks confined near a density-derived cube.
pub fn generate_random_dense(p: &DenseWalkParams) -> TrajectoryDataset {
    p.validate().expect("invalid dense-walk parameters");
    let side = p.cube_side();
    let margin = p.escape_fraction * side;
    let per_particle: Vec<Vec<SegmentST>> = (0..p.n_particles)
        .into_par_iter()
        .map(|tid| {
            let mut rng = trajectory_rng(p.seed, tid);
            let mut pos = [
                rng.gen_range(0.0..=side),
                rng.gen_range(0.0..=side),
                rng.gen_range(0.0..=side),
            ];
            // Per-coordinate forced step direction; set while the particle is
            // beyond the escape margin, cleared on re-entry into the cube.
            let mut forced: [Option<f64>; 3] = [None; 3];
            let steps = p.n_timesteps - 1;
            let mut segments = Vec::with_capacity(steps as usize);
            for k in 0..steps {
                let mut next = pos;
                for (c, coord) in next.iter_mut().enumerate() {
                    let magnitude = rng.gen_range(p.step_min..=p.step_max);
                    let sign = match forced[c] {
                        Some(sign) => sign,
                        None => {
                            if rng.gen_bool(0.5) {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                    *coord += sign * magnitude;
                    if *coord < -margin {
                        forced[c] = Some(1.0);
                    } else if *coord > side + margin {
                        forced[c] = Some(-1.0);
                    } else if (0.0..=side).contains(coord) {
                        forced[c] = None;
                    }
                }
                segments.push(
                    SegmentST::new(
                        tid,
                        k,
                        Point3::new(pos[0], pos[1], pos[2]),
                        Point3::new(next[0], next[1], next[2]),
                        f64::from(k),
                        f64::from(k + 1),
                    )
                    .expect("generated segment is valid"),
                );
                pos = next;
            }
            segments
        })
        .collect();
    let segments: Vec<SegmentST> = per_particle.into_iter().flatten().collect();
    debug_assert!(validate_segments(&segments).is_ok());
    TrajectoryDataset {
        segments,
        meta: DatasetMeta {
            name: "random-dense".into(),
            units: "pc".into(),
            seed: Some(p.seed),
            params: Some(GenerationParams::DenseWalk(p.clone())),
        },
    }
}

/// Write the CSV form (`CSV_HEADER` column order, shortest round-trip float
/// representation).
pub fn write_csv<W: Write>(ds: &TrajectoryDataset, mut out: W) -> Result<(), DatasetError> {
    writeln!(out, "{CSV_HEADER}")?;
    for s in &ds.segments {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.trajectory,
            s.segment,
            s.start_pos.x,
            s.start_pos.y,
            s.start_pos.z,
            s.t_start,
            s.end_pos.x,
            s.end_pos.y,
            s.end_pos.z,
            s.t_end
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<TrajectoryDataset, DatasetError> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DatasetError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
    let header = header?;
    if header.trim_end() != CSV_HEADER {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("bad header: expected `{CSV_HEADER}`, found `{header}`"),
        });
    }

    const COLUMNS: [&str; 10] = [
        "traj_id", "seg_id", "x_start", "y_start", "z_start", "t_start", "x_end", "y_end",
        "z_end", "t_end",
    ];
    let mut segments = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut field = |col: usize| {
            fields.next().map(str::trim).ok_or_else(|| DatasetError::Parse {
                line: line_no,
                message: format!("missing column `{}`", COLUMNS[col]),
            })
        };
        let parse_u32 = |raw: &str, col: usize| {
            raw.parse::<u32>().map_err(|e| DatasetError::Parse {
                line: line_no,
                message: format!("column `{}`: {e}", COLUMNS[col]),
            })
        };
        let parse_f64 = |raw: &str, col: usize| {
            raw.parse::<f64>().map_err(|e| DatasetError::Parse {
                line: line_no,
                message: format!("column `{}`: {e}", COLUMNS[col]),
            })
        };
        let trajectory = parse_u32(field(0)?, 0)?;
        let segment = parse_u32(field(1)?, 1)?;
        let mut coords = [0.0f64; 8];
        for (k, slot) in coords.iter_mut().enumerate() {
            *slot = parse_f64(field(k + 2)?, k + 2)?;
        }
        if fields.next().is_some() {
            return Err(DatasetError::Parse {
                line: line_no,
                message: "too many columns".into(),
            });
        }
        segments.push(
            SegmentST::new(
                trajectory,
                segment,
                Point3::new(coords[0], coords[1], coords[2]),
                Point3::new(coords[4], coords[5], coords[6]),
                coords[3],
                coords[7],
            )
            .map_err(|source| DatasetError::Segment {
                index: segments.len(),
                source,
            })?,
        );
    }
    TrajectoryDataset::from_segments(segments, DatasetMeta::default())
}

/// Write the binary form: magic `TRJ1`, little-endian u64 segment count, then
/// per segment two u32 ids and eight f64 values in CSV column order.
/// Round-trips bit-exactly.
pub fn write_binary<W: Write>(ds: &TrajectoryDataset, mut out: W) -> Result<(), DatasetError> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(ds.segments.len() as u64).to_le_bytes())?;
    let mut record = [0u8; 72];
    for s in &ds.segments {
        record[0..4].copy_from_slice(&s.trajectory.to_le_bytes());
        record[4..8].copy_from_slice(&s.segment.to_le_bytes());
        for (k, value) in [
            s.start_pos.x,
            s.start_pos.y,
            s.start_pos.z,
            s.t_start,
            s.end_pos.x,
            s.end_pos.y,
            s.end_pos.z,
            s.t_end,
        ]
        .into_iter()
        .enumerate()
        {
            record[8 + 8 * k..16 + 8 * k].copy_from_slice(&value.to_le_bytes());
        }
        out.write_all(&record)?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<TrajectoryDataset, DatasetError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(DatasetError::Format(format!(
            "bad magic: expected {BINARY_MAGIC:?}, found {magic:?}"
        )));
    }
    let mut count_bytes = [0u8; 8];
    input.read_exact(&mut count_bytes)?;
    let count = u64::from_le_bytes(count_bytes);
    let count = usize::try_from(count)
        .map_err(|_| DatasetError::Format(format!("segment count {count} too large")))?;
    let mut segments = Vec::with_capacity(count);
    let mut record = [0u8; 72];
    for index in 0..count {
        input.read_exact(&mut record).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                DatasetError::Format(format!(
                    "truncated file: {index} of {count} records present"
                ))
            } else {
                DatasetError::Io(e)
            }
        })?;
        let u32_at = |o: usize| u32::from_le_bytes(record[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(record[o..o + 8].try_into().unwrap());
        segments.push(
            SegmentST::new(
                u32_at(0),
                u32_at(4),
                Point3::new(f64_at(8), f64_at(16), f64_at(24)),
                Point3::new(f64_at(40), f64_at(48), f64_at(56)),
                f64_at(32),
                f64_at(64),
            )
            .map_err(|source| DatasetError::Segment { index, source })?,
        );
    }
    TrajectoryDataset::from_segments(segments, DatasetMeta::default())
}
