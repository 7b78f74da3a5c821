//! Per-frame label volumes: snap the player's yaw to one of eight
//! horizontal directions, place a fixed-size box relative to the player,
//! optionally shift it, and cull voxels that fall outside the image.

use std::f64::consts::{FRAC_PI_4, TAU};

use serde::{Deserialize, Serialize};

use crate::camera::{project_voxel, Extrinsics, Intrinsics};
use crate::grid::{Aabb, SemanticGrid, VoxelCoord, EMPTY};

/// Horizontal view direction, listed in order of increasing yaw
/// (45 degree steps, yaw 0 facing +Z, yaw 90 facing -X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    PosZ,
    NegXPosZ,
    NegX,
    NegXNegZ,
    NegZ,
    PosXNegZ,
    PosX,
    PosXPosZ,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::PosZ,
        Direction::NegXPosZ,
        Direction::NegX,
        Direction::NegXNegZ,
        Direction::NegZ,
        Direction::PosXNegZ,
        Direction::PosX,
        Direction::PosXPosZ,
    ];

    /// Direction for `yaw = k * 45 degrees`.
    pub fn from_octant(k: usize) -> Self {
        Self::ALL[k % 8]
    }

    pub fn octant(self) -> usize {
        Self::ALL.iter().position(|&d| d == self).unwrap()
    }

    /// Unit steps `(dx, dz)` of the direction.
    pub fn step(self) -> (i32, i32) {
        match self {
            Direction::PosZ => (0, 1),
            Direction::NegXPosZ => (-1, 1),
            Direction::NegX => (-1, 0),
            Direction::NegXNegZ => (-1, -1),
            Direction::NegZ => (0, -1),
            Direction::PosXNegZ => (1, -1),
            Direction::PosX => (1, 0),
            Direction::PosXPosZ => (1, 1),
        }
    }

    pub fn is_axis_aligned(self) -> bool {
        self.octant().is_multiple_of(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewKind {
    AxisAligned,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewCase {
    pub kind: ViewKind,
    pub direction: Direction,
}

impl ViewCase {
    pub fn new(direction: Direction) -> Self {
        let kind = if direction.is_axis_aligned() { ViewKind::AxisAligned } else { ViewKind::Diagonal };
        Self { kind, direction }
    }
}

/// Box size in blocks plus the corner offset. `epsilon: None` selects
/// [`default_epsilon`] for the view case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeSpec {
    pub w: u32,
    pub h: u32,
    pub d: u32,
    #[serde(default)]
    pub epsilon: Option<VoxelCoord>,
}

impl VolumeSpec {
    pub fn new(w: u32, h: u32, d: u32) -> Self {
        assert!(w >= 1 && h >= 1 && d >= 1, "volume dimensions must be positive");
        Self { w, h, d, epsilon: None }
    }

    pub fn with_epsilon(mut self, epsilon: VoxelCoord) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn epsilon_for(&self, case: ViewCase) -> VoxelCoord {
        self.epsilon.unwrap_or_else(|| default_epsilon(case))
    }
}

/// Snaps a yaw (radians) to the nearest of the eight directions; exact
/// half-way yaws go to the axis-aligned neighbour.
pub fn classify_view_case(yaw: f64) -> ViewCase {
    let steps = yaw.rem_euclid(TAU) / FRAC_PI_4;
    let lower = steps.floor();
    let frac = steps - lower;
    let k = if (frac - 0.5).abs() < 1e-9 {
        let lower = lower as usize;
        if lower.is_multiple_of(2) { lower } else { lower + 1 }
    } else {
        steps.round() as usize
    };
    ViewCase::new(Direction::from_octant(k))
}

/// Inclusive range of `len` blocks starting at `start` and running in
/// the direction of `sign`.
fn span(start: i32, len: u32, sign: i32) -> (i32, i32) {
    let len = len as i32;
    if sign >= 0 {
        (start, start + len - 1)
    } else {
        (start - len + 1, start)
    }
}

/// `len` blocks centred on `c` (lower middle for even lengths).
fn centered(c: i32, len: u32) -> (i32, i32) {
    let lo = c - (len / 2) as i32;
    (lo, lo + len as i32 - 1)
}

/// Label volume for a player standing in block `player`.
///
/// Axis-aligned views put the player at the centre of the face nearest to
/// them, with depth `d` along the view axis, width `w` across it and height
/// `h` vertically. Diagonal views put the player at the corner and open the
/// box into the viewed quadrant: `w` along X, `h` upward, `d` along Z.
pub fn compute_view_volume(player: VoxelCoord, case: ViewCase, spec: &VolumeSpec) -> Aabb {
    let (dx, dz) = case.direction.step();
    let (x, y, z) = match case.kind {
        ViewKind::AxisAligned => {
            let ys = centered(player.y, spec.h);
            if dx == 0 {
                (centered(player.x, spec.w), ys, span(player.z, spec.d, dz))
            } else {
                (span(player.x, spec.d, dx), ys, centered(player.z, spec.w))
            }
        }
        ViewKind::Diagonal => (
            span(player.x, spec.w, dx),
            span(player.y, spec.h, 1),
            span(player.z, spec.d, dz),
        ),
    };
    Aabb::new(VoxelCoord::new(x.0, y.0, z.0), VoxelCoord::new(x.1, y.1, z.1))
        .expect("spans are ordered")
}

/// Rigid translation of both corners.
pub fn apply_offset(bounds: Aabb, epsilon: VoxelCoord) -> Aabb {
    bounds.translate(epsilon)
}

/// Zero for axis-aligned views; for diagonal views the box is pulled two
/// blocks back toward the player along both horizontal axes so the
/// periphery next to the player is kept at the cost of far depth.
pub fn default_epsilon(case: ViewCase) -> VoxelCoord {
    match case.kind {
        ViewKind::AxisAligned => VoxelCoord::ZERO,
        ViewKind::Diagonal => {
            let (dx, dz) = case.direction.step();
            VoxelCoord::new(-2 * dx, 0, -2 * dz)
        }
    }
}

/// Empties every voxel whose centre is behind the camera or projects
/// outside `[0, W] x [0, H]`.
pub fn frustum_cull(grid: &SemanticGrid, extrinsics: &Extrinsics, intrinsics: &Intrinsics) -> SemanticGrid {
    grid.map_labels(|v, label| {
        if label == EMPTY {
            return EMPTY;
        }
        match project_voxel(v, extrinsics, intrinsics) {
            Ok(p) if intrinsics.contains(p.u, p.v) => label,
            _ => EMPTY,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::grid::ClassTable;
    use std::sync::Arc;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn exact_directions() {
        assert_eq!(classify_view_case(0.0), ViewCase { kind: ViewKind::AxisAligned, direction: Direction::PosZ });
        assert_eq!(classify_view_case(deg(45.0)).kind, ViewKind::Diagonal);
        assert_eq!(classify_view_case(deg(45.0)).direction, Direction::NegXPosZ);
        assert_eq!(classify_view_case(deg(90.0)).direction, Direction::NegX);
        assert_eq!(classify_view_case(deg(270.0)).direction, Direction::PosX);
        assert_eq!(classify_view_case(deg(-90.0)).direction, Direction::PosX);
    }

    #[test]
    fn snapping_and_ties() {
        assert_eq!(classify_view_case(deg(44.9)).direction, Direction::NegXPosZ);
        assert_eq!(classify_view_case(deg(22.4)).direction, Direction::PosZ);
        assert_eq!(classify_view_case(deg(22.5)).direction, Direction::PosZ);
        assert_eq!(classify_view_case(deg(67.5)).direction, Direction::NegX);
        assert_eq!(classify_view_case(deg(337.5)).direction, Direction::PosZ);
        assert_eq!(classify_view_case(deg(359.9)).direction, Direction::PosZ);
    }

    #[test]
    fn snapping_matches_nearest_direction_oracle() {
        for tenth in -3600..7200 {
            let d = tenth as f64 / 10.0;
            let got = classify_view_case(deg(d)).direction.octant();
            // oracle: minimal angular distance, axis-aligned preferred on ties
            let norm = d.rem_euclid(360.0);
            let mut best = (f64::INFINITY, 0usize);
            for k in 0..8 {
                let c = k as f64 * 45.0;
                let dist = (norm - c).abs().min(360.0 - (norm - c).abs());
                let better = dist < best.0 - 1e-9 || ((dist - best.0).abs() <= 1e-9 && k % 2 == 0);
                if better {
                    best = (dist, k);
                }
            }
            assert_eq!(got, best.1, "yaw {d}");
        }
    }

    #[test]
    fn periodic_in_two_pi() {
        for i in 0..720 {
            let t = i as f64 * 0.0137 - 3.0;
            assert_eq!(classify_view_case(t), classify_view_case(t + TAU));
        }
    }

    #[test]
    fn pos_z_box() {
        let b = compute_view_volume(
            VoxelCoord::new(10, 64, 20),
            ViewCase::new(Direction::PosZ),
            &VolumeSpec::new(4, 4, 4),
        );
        assert_eq!(b.min(), VoxelCoord::new(8, 62, 20));
        assert_eq!(b.max(), VoxelCoord::new(11, 65, 23));
    }

    #[test]
    fn diagonal_box_has_player_at_min_corner() {
        let b = compute_view_volume(VoxelCoord::ZERO, ViewCase::new(Direction::PosXPosZ), &VolumeSpec::new(8, 8, 8));
        assert_eq!(b.min(), VoxelCoord::ZERO);
        assert_eq!(b.max(), VoxelCoord::new(7, 7, 7));
    }

    #[test]
    fn every_direction_has_full_volume_and_player_on_boundary() {
        let p = VoxelCoord::new(-3, 70, 12);
        for spec in [VolumeSpec::new(4, 5, 6), VolumeSpec::new(7, 3, 2), VolumeSpec::new(1, 1, 1)] {
            for dir in Direction::ALL {
                let b = compute_view_volume(p, ViewCase::new(dir), &spec);
                assert_eq!(b.volume(), (spec.w * spec.h * spec.d) as u64);
                assert!(b.on_boundary(p), "{dir:?}");
                // box opens toward the view direction
                let (dx, dz) = dir.step();
                let c = b.min().as_f64().iter().zip(b.max().as_f64()).map(|(a, b)| (a + b) / 2.0).collect::<Vec<_>>();
                assert!((c[0] - p.x as f64) * dx as f64 >= 0.0);
                assert!((c[2] - p.z as f64) * dz as f64 >= 0.0);
            }
        }
    }

    #[test]
    fn offset_translates() {
        let b = Aabb::new(VoxelCoord::ZERO, VoxelCoord::new(3, 3, 3)).unwrap();
        assert_eq!(apply_offset(b, VoxelCoord::ZERO), b);
        let o = apply_offset(b, VoxelCoord::new(1, 0, -1));
        assert_eq!(o.min(), VoxelCoord::new(1, 0, -1));
        assert_eq!(o.max(), VoxelCoord::new(4, 3, 2));
        assert_eq!(o.volume(), b.volume());
    }

    #[test]
    fn default_epsilon_pulls_diagonals_back() {
        assert_eq!(default_epsilon(ViewCase::new(Direction::PosZ)), VoxelCoord::ZERO);
        assert_eq!(default_epsilon(ViewCase::new(Direction::PosXPosZ)), VoxelCoord::new(-2, 0, -2));
        assert_eq!(default_epsilon(ViewCase::new(Direction::NegXPosZ)), VoxelCoord::new(2, 0, -2));
    }

    fn camera(pos: [f64; 3], yaw: f64, pitch: f64) -> (Extrinsics, Intrinsics) {
        let e = Extrinsics::from_pose(&Pose::new(pos, yaw, pitch).unwrap());
        (e, Intrinsics::from_fov(deg(70.0), 640, 480).unwrap())
    }

    #[test]
    fn cull_keeps_on_axis_and_drops_behind() {
        let table = Arc::new(ClassTable::canonical());
        let mut g = SemanticGrid::new(VoxelCoord::new(-5, -5, -5), [11, 11, 11], table).unwrap();
        g.set(VoxelCoord::new(0, 0, 4), 5);
        g.set(VoxelCoord::new(0, 0, -4), 5);
        let (e, k) = camera([0.5, 0.5, 0.5], 0.0, 0.0);
        let out = frustum_cull(&g, &e, &k);
        assert_eq!(out.get(VoxelCoord::new(0, 0, 4)), 5);
        assert_eq!(out.get(VoxelCoord::new(0, 0, -4)), EMPTY);
        assert_eq!(out.dims(), g.dims());
        assert_eq!(frustum_cull(&out, &e, &k), out);
        assert!(out.count_nonempty() <= g.count_nonempty());
    }
}
