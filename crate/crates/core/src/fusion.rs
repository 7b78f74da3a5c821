//! Geometric multi-view fusion by per-voxel majority vote.
//!
//! A voxel `v` of a camera-local grid covers the unit cube `[v, v+1)`; its
//! centre is carried into the world by `E` and the block containing the
//! image point is the one that receives the vote. Ties between equally
//! voted classes go to the class voted most recently, then to the lowest id.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::camera::{Extrinsics, Intrinsics};
use crate::grid::{Aabb, ClassId, ClassTable, SemanticGrid, VoxelCoord, EMPTY};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FusionError {
    #[error("no observations to fuse")]
    EmptyObservationSet,
    #[error("observation {0} uses a different class table than observation 0")]
    ClassTableMismatch(usize),
}

#[derive(Debug, Clone)]
pub struct ViewObservation {
    pub grid: SemanticGrid,
    pub extrinsics: Extrinsics,
    pub intrinsics: Option<Intrinsics>,
}

impl ViewObservation {
    pub fn new(grid: SemanticGrid, extrinsics: Extrinsics) -> Self {
        ViewObservation { grid, extrinsics, intrinsics: None }
    }
}

fn block_of(p: [f64; 3]) -> VoxelCoord {
    // values within 1e-9 of an integer are treated as that integer so that
    // rotations by exact multiples of 90 degrees stay exact
    let snap = |c: f64| {
        let r = c.round();
        if (c - r).abs() < 1e-9 { r } else { c }
    };
    VoxelCoord::floor([snap(p[0]), snap(p[1]), snap(p[2])])
}

/// World block and class for every non-empty voxel of the observation.
pub fn transform_view_to_world(obs: &ViewObservation) -> Vec<(VoxelCoord, ClassId)> {
    obs.grid
        .occupied()
        .map(|(v, class)| {
            let world = obs.extrinsics.camera_to_world(v.center());
            (block_of(world), class)
        })
        .collect()
}

/// Smallest world box receiving a vote from any voxel of any grid. The map
/// is affine, so the images of the eight corner-voxel centres bound it.
pub fn world_bounds(observations: &[ViewObservation]) -> Option<Aabb> {
    let mut out: Option<Aabb> = None;
    for o in observations {
        let b = o.grid.bounds();
        let (lo, hi) = (b.min(), b.max());
        for k in 0..8 {
            let c = VoxelCoord::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            );
            let w = block_of(o.extrinsics.camera_to_world(c.center()));
            let one = Aabb::spanning(w, w);
            out = Some(out.map_or(one, |a| a.union(&one)));
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Tally {
    class: ClassId,
    count: u32,
    last: usize,
}

pub fn fuse_views(observations: &[ViewObservation], out_bounds: Aabb) -> Result<SemanticGrid, FusionError> {
    let first = observations.first().ok_or(FusionError::EmptyObservationSet)?;
    let table: Arc<ClassTable> = first.grid.classes().clone();
    if let Some(i) = observations.iter().position(|o| *o.grid.classes() != table) {
        return Err(FusionError::ClassTableMismatch(i));
    }
    let mut out = SemanticGrid::over(out_bounds, table);

    // per-observation transforms run in parallel; the merge below walks them
    // in observation order so the result never depends on scheduling
    let votes: Vec<Vec<(usize, ClassId)>> = observations
        .par_iter()
        .map(|o| {
            transform_view_to_world(o)
                .into_iter()
                .filter_map(|(v, c)| out.index_of(v).map(|i| (i, c)))
                .collect()
        })
        .collect();

    let mut tallies: HashMap<usize, Vec<Tally>> = HashMap::new();
    for (obs_idx, list) in votes.iter().enumerate() {
        for &(i, class) in list {
            let slot = tallies.entry(i).or_default();
            match slot.iter_mut().find(|t| t.class == class) {
                Some(t) => {
                    t.count += 1;
                    t.last = obs_idx;
                }
                None => slot.push(Tally { class, count: 1, last: obs_idx }),
            }
        }
    }
    for (i, slot) in tallies {
        let win = slot
            .iter()
            .max_by(|a, b| {
                a.count
                    .cmp(&b.count)
                    .then(a.last.cmp(&b.last))
                    .then(b.class.cmp(&a.class))
            })
            .expect("non-empty tally");
        out.set_index(i, win.class);
    }
    Ok(out)
}

/// Voxels of `out_bounds` where two or more classes share the top vote count.
pub fn tied_voxels(observations: &[ViewObservation], out_bounds: Aabb) -> Vec<VoxelCoord> {
    let mut counts: HashMap<VoxelCoord, HashMap<ClassId, u32>> = HashMap::new();
    for o in observations {
        for (v, c) in transform_view_to_world(o) {
            if out_bounds.contains(v) {
                *counts.entry(v).or_default().entry(c).or_default() += 1;
            }
        }
    }
    let mut tied: Vec<VoxelCoord> = counts
        .into_iter()
        .filter(|(_, m)| {
            let top = m.values().max().copied().unwrap_or(0);
            m.values().filter(|&&c| c == top).count() > 1
        })
        .map(|(v, _)| v)
        .collect();
    tied.sort();
    tied
}

/// True when no non-empty output voxel lacks a vote.
pub fn is_supported(observations: &[ViewObservation], fused: &SemanticGrid) -> bool {
    let voted: std::collections::HashSet<VoxelCoord> =
        observations.iter().flat_map(transform_view_to_world).map(|(v, _)| v).collect();
    fused.occupied().all(|(v, l)| l == EMPTY || voted.contains(&v))
}
