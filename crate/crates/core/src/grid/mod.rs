//! Voxel grid data model shared by every stage: integer world coordinates,
//! boxes, class tables and dense semantic grids.
//!
//! Labels are stored x-fastest: `idx = x + X * (y + Y * z)`.

mod classes;
pub mod io;

use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use classes::{base_block_name, is_air, ClassMap, ClassTable, AIR_NAMES, CANONICAL_CLASSES};

pub type ClassId = u16;

/// Id of the empty / air class in every table.
pub const EMPTY: ClassId = 0;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension mismatch: header declares {expected} labels, payload has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown grid file version {0:?}")]
    UnknownVersion(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("class id {id} out of range for a table of {len} classes")]
    TargetIdOutOfRange { id: usize, len: usize },
    #[error("invalid class table: {0}")]
    InvalidClassTable(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Integer block coordinate in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(from = "[i32; 3]", into = "[i32; 3]")]
pub struct VoxelCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const ZERO: VoxelCoord = VoxelCoord { x: 0, y: 0, z: 0 };

    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// Block containing a real-valued point (componentwise floor).
    pub fn floor(p: [f64; 3]) -> Self {
        Self::new(p[0].floor() as i32, p[1].floor() as i32, p[2].floor() as i32)
    }

    /// Nearest integer coordinate, halves rounded toward +inf.
    pub fn round_half_up(p: [f64; 3]) -> Self {
        let r = |v: f64| (v + 0.5).floor() as i32;
        Self::new(r(p[0]), r(p[1]), r(p[2]))
    }

    pub fn center(self) -> [f64; 3] {
        [self.x as f64 + 0.5, self.y as f64 + 0.5, self.z as f64 + 0.5]
    }

    pub fn as_f64(self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl From<[i32; 3]> for VoxelCoord {
    fn from(a: [i32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<VoxelCoord> for [i32; 3] {
    fn from(v: VoxelCoord) -> Self {
        v.to_array()
    }
}

impl Add for VoxelCoord {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for VoxelCoord {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for VoxelCoord {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.x, self.y, self.z)
    }
}

/// Inclusive axis-aligned box of blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AabbRepr", into = "AabbRepr")]
pub struct Aabb {
    min: VoxelCoord,
    max: VoxelCoord,
}

#[derive(Serialize, Deserialize)]
struct AabbRepr {
    min: VoxelCoord,
    max: VoxelCoord,
}

impl TryFrom<AabbRepr> for Aabb {
    type Error = GridError;
    fn try_from(r: AabbRepr) -> Result<Self, GridError> {
        Aabb::new(r.min, r.max)
    }
}

impl From<Aabb> for AabbRepr {
    fn from(b: Aabb) -> Self {
        AabbRepr { min: b.min, max: b.max }
    }
}

impl Aabb {
    pub fn new(min: VoxelCoord, max: VoxelCoord) -> Result<Self, GridError> {
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(GridError::InvalidBox(format!("min ({min}) exceeds max ({max})")));
        }
        Ok(Self { min, max })
    }

    /// Box with `min` corner and positive extents `dims`.
    pub fn from_origin_dims(origin: VoxelCoord, dims: [usize; 3]) -> Result<Self, GridError> {
        if dims.contains(&0) {
            return Err(GridError::InvalidBox(format!("zero extent in {dims:?}")));
        }
        let max = VoxelCoord::new(
            origin.x + dims[0] as i32 - 1,
            origin.y + dims[1] as i32 - 1,
            origin.z + dims[2] as i32 - 1,
        );
        Self::new(origin, max)
    }

    /// Smallest box containing both corners in any order.
    pub fn spanning(a: VoxelCoord, b: VoxelCoord) -> Self {
        Self { min: a.min(b), max: a.max(b) }
    }

    pub fn min(&self) -> VoxelCoord {
        self.min
    }

    pub fn max(&self) -> VoxelCoord {
        self.max
    }

    pub fn extents(&self) -> [usize; 3] {
        [
            (self.max.x - self.min.x + 1) as usize,
            (self.max.y - self.min.y + 1) as usize,
            (self.max.z - self.min.z + 1) as usize,
        ]
    }

    pub fn volume(&self) -> u64 {
        self.extents().iter().map(|&e| e as u64).product()
    }

    pub fn contains(&self, v: VoxelCoord) -> bool {
        v.x >= self.min.x
            && v.y >= self.min.y
            && v.z >= self.min.z
            && v.x <= self.max.x
            && v.y <= self.max.y
            && v.z <= self.max.z
    }

    /// True when `v` lies on one of the six faces.
    pub fn on_boundary(&self, v: VoxelCoord) -> bool {
        self.contains(v)
            && (v.x == self.min.x
                || v.x == self.max.x
                || v.y == self.min.y
                || v.y == self.max.y
                || v.z == self.min.z
                || v.z == self.max.z)
    }

    pub fn translate(&self, t: VoxelCoord) -> Self {
        Self { min: self.min + t, max: self.max + t }
    }

    pub fn intersect(&self, o: &Aabb) -> Option<Aabb> {
        Aabb::new(self.min.max(o.min), self.max.min(o.max)).ok()
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    /// Every coordinate in the box, x fastest then y then z.
    pub fn iter(&self) -> impl Iterator<Item = VoxelCoord> + '_ {
        let (min, max) = (self.min, self.max);
        (min.z..=max.z).flat_map(move |z| {
            (min.y..=max.y).flat_map(move |y| (min.x..=max.x).map(move |x| VoxelCoord::new(x, y, z)))
        })
    }
}

/// Dense `X x Y x Z` grid of class ids anchored at a world origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticGrid {
    origin: VoxelCoord,
    dims: [usize; 3],
    labels: Vec<ClassId>,
    classes: Arc<ClassTable>,
}

impl SemanticGrid {
    /// All-empty grid.
    pub fn new(origin: VoxelCoord, dims: [usize; 3], classes: Arc<ClassTable>) -> Result<Self, GridError> {
        Aabb::from_origin_dims(origin, dims)?;
        let len = dims[0] * dims[1] * dims[2];
        Ok(Self { origin, dims, labels: vec![EMPTY; len], classes })
    }

    pub fn over(bounds: Aabb, classes: Arc<ClassTable>) -> Self {
        Self::new(bounds.min(), bounds.extents(), classes).expect("box extents are positive")
    }

    pub fn from_labels(
        origin: VoxelCoord,
        dims: [usize; 3],
        labels: Vec<ClassId>,
        classes: Arc<ClassTable>,
    ) -> Result<Self, GridError> {
        Aabb::from_origin_dims(origin, dims)?;
        let expected = dims[0] * dims[1] * dims[2];
        if labels.len() != expected {
            return Err(GridError::DimensionMismatch { expected, actual: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes.len()) {
            return Err(GridError::TargetIdOutOfRange { id: bad as usize, len: classes.len() });
        }
        Ok(Self { origin, dims, labels, classes })
    }

    pub fn origin(&self) -> VoxelCoord {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn classes(&self) -> &Arc<ClassTable> {
        &self.classes
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_origin_dims(self.origin, self.dims).expect("grid dims are positive")
    }

    /// Linear index of local coordinates.
    #[inline]
    pub fn local_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn index_of(&self, v: VoxelCoord) -> Option<usize> {
        let l = v - self.origin;
        if l.x < 0 || l.y < 0 || l.z < 0 {
            return None;
        }
        let (x, y, z) = (l.x as usize, l.y as usize, l.z as usize);
        if x >= self.dims[0] || y >= self.dims[1] || z >= self.dims[2] {
            return None;
        }
        Some(self.local_index(x, y, z))
    }

    pub fn coord_of(&self, idx: usize) -> VoxelCoord {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        self.origin + VoxelCoord::new(x as i32, y as i32, z as i32)
    }

    /// Label at a world coordinate; out-of-bounds reads as empty.
    pub fn get(&self, v: VoxelCoord) -> ClassId {
        self.index_of(v).map_or(EMPTY, |i| self.labels[i])
    }

    /// Sets a label; returns `false` (and does nothing) when `v` is outside.
    pub fn set(&mut self, v: VoxelCoord, label: ClassId) -> bool {
        debug_assert!((label as usize) < self.classes.len());
        match self.index_of(v) {
            Some(i) => {
                self.labels[i] = label;
                true
            }
            None => false,
        }
    }

    pub fn set_index(&mut self, idx: usize, label: ClassId) {
        self.labels[idx] = label;
    }

    /// Non-empty voxels in index order.
    pub fn occupied(&self) -> impl Iterator<Item = (VoxelCoord, ClassId)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != EMPTY)
            .map(|(i, &l)| (self.coord_of(i), l))
    }

    pub fn count_nonempty(&self) -> usize {
        self.labels.iter().filter(|&&l| l != EMPTY).count()
    }

    /// Voxel count per class id (length = class table size).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn map_labels(&self, f: impl Fn(VoxelCoord, ClassId) -> ClassId) -> SemanticGrid {
        let labels = self.labels.iter().enumerate().map(|(i, &l)| f(self.coord_of(i), l)).collect();
        SemanticGrid { labels, ..self.clone() }
    }

    /// Copy of the region `bounds` (must lie inside this grid).
    pub fn sub_grid(&self, bounds: Aabb) -> Option<SemanticGrid> {
        if !self.bounds().contains(bounds.min()) || !self.bounds().contains(bounds.max()) {
            return None;
        }
        let labels = bounds.iter().map(|v| self.get(v)).collect();
        Some(SemanticGrid {
            origin: bounds.min(),
            dims: bounds.extents(),
            labels,
            classes: self.classes.clone(),
        })
    }
}

/// Relabels `grid` into `target` through `map`. Empty stays empty.
pub fn remap_classes(
    grid: &SemanticGrid,
    map: &ClassMap,
    target: Arc<ClassTable>,
) -> Result<SemanticGrid, GridError> {
    let source = grid.classes();
    // Only classes present in the grid are resolved, so an incomplete map
    // fails only on names the grid actually uses.
    let mut lut = vec![EMPTY; source.len()];
    for (id, &n) in grid.class_counts().iter().enumerate() {
        if n > 0 && id != EMPTY as usize {
            lut[id] = map.resolve(&source.names()[id], &target)?;
        }
    }
    let labels = grid.labels.iter().map(|&l| lut[l as usize]).collect();
    SemanticGrid::from_labels(grid.origin, grid.dims, labels, target)
}
