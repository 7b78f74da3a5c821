//! Voxel worlds: a total map from block coordinates to block names, loaded
//! from Sponge schematics or a small JSON format, and label extraction over
//! a box.
//!
//! world.json:
//! ```json
//! {"bounds": {"min": [0,0,0], "max": [31,31,31]},
//!  "fills":  [[0,0,0, 31,0,31, "minecraft:oak_planks"]],
//!  "blocks": [[4,1,4, "minecraft:red_bed[part=foot]"]]}
//! ```
//! Fills are applied first, then single blocks; everything else is air.

pub mod nbt;
pub mod schematic;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::grid::{Aabb, ClassId, ClassMap, ClassTable, GridError, SemanticGrid, VoxelCoord};

pub use nbt::{NbtError, NbtValue};
pub use schematic::{load_schematic, save_schematic};

pub const AIR: &str = "minecraft:air";

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Nbt(#[from] NbtError),
    #[error("schematic is missing field {0}")]
    MissingField(&'static str),
    #[error("palette index {index} out of range for a palette of {len}")]
    PaletteIndexOutOfRange { index: u32, len: usize },
    #[error("varint at byte {0} overflows 32 bits or is truncated")]
    VarintOverflow(usize),
    #[error("schematic declares {expected} blocks but BlockData holds {actual}")]
    BlockCountMismatch { expected: usize, actual: usize },
    #[error("world of extents {0:?} does not fit a schematic")]
    TooLarge([usize; 3]),
    #[error("world.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("block {0} lies outside the world bounds")]
    OutOfBounds(VoxelCoord),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense palette-indexed block storage over `bounds`, same index order as
/// [`SemanticGrid`]. Immutable once built, so shared queries are safe.
#[derive(Debug, Clone)]
pub struct WorldMap {
    bounds: Aabb,
    palette: Vec<String>,
    lookup: HashMap<String, u32>,
    blocks: Vec<u32>,
    air: u32,
}

impl WorldMap {
    /// A world of one block type. The palette always gets an air entry.
    pub fn filled(bounds: Aabb, name: &str) -> Self {
        let mut w = WorldMap {
            bounds,
            palette: Vec::new(),
            lookup: HashMap::new(),
            blocks: Vec::new(),
            air: 0,
        };
        w.air = w.intern(AIR);
        let fill = w.intern(name);
        w.blocks = vec![fill; bounds.volume() as usize];
        w
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn palette(&self) -> &[String] {
        &self.palette
    }

    pub(crate) fn intern(&mut self, name: &str) -> u32 {
        if let Some(&i) = self.lookup.get(name) {
            return i;
        }
        let i = self.palette.len() as u32;
        self.palette.push(name.to_string());
        self.lookup.insert(name.to_string(), i);
        i
    }

    fn index_of(&self, v: VoxelCoord) -> Option<usize> {
        if !self.bounds.contains(v) {
            return None;
        }
        let [ex, ey, _] = self.bounds.extents();
        let d = v - self.bounds.min();
        Some(d.x as usize + ex * (d.y as usize + ey * d.z as usize))
    }

    pub(crate) fn set_index(&mut self, idx: usize, palette_index: u32) {
        self.blocks[idx] = palette_index;
    }

    /// Sets one block; returns false when `v` is outside the bounds.
    pub fn set(&mut self, v: VoxelCoord, name: &str) -> bool {
        match self.index_of(v) {
            Some(i) => {
                let p = self.intern(name);
                self.blocks[i] = p;
                true
            }
            None => false,
        }
    }

    pub fn fill(&mut self, region: Aabb, name: &str) {
        let Some(region) = region.intersect(&self.bounds) else { return };
        let p = self.intern(name);
        for v in region.iter() {
            let i = self.index_of(v).expect("clipped to bounds");
            self.blocks[i] = p;
        }
    }

    pub fn palette_index(&self, v: VoxelCoord) -> Option<u32> {
        self.index_of(v).map(|i| self.blocks[i])
    }

    /// Block name at `v`; air outside the bounds.
    pub fn query(&self, v: VoxelCoord) -> &str {
        let p = self.palette_index(v).unwrap_or(self.air);
        &self.palette[p as usize]
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let doc: WorldJson = serde_json::from_str(text)?;
        let mut w = WorldMap::filled(doc.bounds, AIR);
        for (x1, y1, z1, x2, y2, z2, name) in doc.fills {
            let region = Aabb::spanning(VoxelCoord::new(x1, y1, z1), VoxelCoord::new(x2, y2, z2));
            if region.intersect(&w.bounds) != Some(region) {
                return Err(WorldError::OutOfBounds(VoxelCoord::new(x1, y1, z1)));
            }
            w.fill(region, &name);
        }
        for (x, y, z, name) in doc.blocks {
            let v = VoxelCoord::new(x, y, z);
            if !w.set(v, &name) {
                return Err(WorldError::OutOfBounds(v));
            }
        }
        Ok(w)
    }

    /// Writes every non-air block individually.
    pub fn to_json(&self) -> String {
        let blocks = self
            .bounds
            .iter()
            .zip(&self.blocks)
            .filter(|(_, &p)| p != self.air)
            .map(|(v, &p)| (v.x, v.y, v.z, self.palette[p as usize].clone()))
            .collect();
        let doc = WorldJson { bounds: self.bounds, fills: Vec::new(), blocks };
        serde_json::to_string(&doc).expect("world serializes")
    }

    /// `.schem` / `.schematic` load as NBT, anything else as world.json.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("schem") | Some("schematic") => load_schematic(path),
            _ => Self::from_json(&std::fs::read_to_string(path)?),
        }
    }
}

type FillRow = (i32, i32, i32, i32, i32, i32, String);
type BlockRow = (i32, i32, i32, String);

#[derive(Serialize, Deserialize)]
struct WorldJson {
    bounds: Aabb,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    fills: Vec<FillRow>,
    #[serde(default)]
    blocks: Vec<BlockRow>,
}

/// Labels every voxel of `bounds` with the remapped class of the block there.
pub fn extract_occupancy(
    world: &WorldMap,
    bounds: Aabb,
    map: &ClassMap,
    table: Arc<ClassTable>,
) -> Result<SemanticGrid, WorldError> {
    // resolve each palette entry once, lazily, so unused names never error
    let mut cache: Vec<Option<ClassId>> = vec![None; world.palette.len()];
    let mut grid = SemanticGrid::over(bounds, table.clone());
    for (i, v) in bounds.iter().enumerate() {
        let p = world.palette_index(v).unwrap_or(world.air) as usize;
        let id = match cache[p] {
            Some(id) => id,
            None => {
                let id = map.resolve(&world.palette[p], &table)?;
                cache[p] = Some(id);
                id
            }
        };
        grid.set_index(i, id);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::EMPTY;
    use proptest::prelude::*;

    fn table() -> Arc<ClassTable> {
        Arc::new(ClassTable::canonical())
    }

    fn furnished() -> (WorldMap, ClassMap) {
        let b = Aabb::from_origin_dims(VoxelCoord::ZERO, [8, 8, 8]).unwrap();
        let mut w = WorldMap::filled(b, AIR);
        w.fill(Aabb::spanning(VoxelCoord::new(0, 0, 0), VoxelCoord::new(7, 0, 7)), "minecraft:oak_planks");
        w.fill(Aabb::spanning(VoxelCoord::new(0, 1, 0), VoxelCoord::new(0, 7, 7)), "minecraft:smooth_quartz");
        w.set(VoxelCoord::new(3, 1, 3), "minecraft:oak_stairs[facing=north]");
        w.set(VoxelCoord::new(5, 1, 5), "minecraft:flower_pot");
        let t = table();
        let mut m = ClassMap::with_objects_default(&t);
        m.insert("minecraft:oak_planks", t.id_of("floor").unwrap());
        m.insert("minecraft:smooth_quartz", t.id_of("wall").unwrap());
        m.insert("minecraft:oak_stairs", t.id_of("chair").unwrap());
        (w, m)
    }

    #[test]
    fn out_of_bounds_is_air() {
        let (w, _) = furnished();
        assert_eq!(w.query(VoxelCoord::new(0, 0, 0)), "minecraft:oak_planks");
        assert_eq!(w.query(VoxelCoord::new(-1, 0, 0)), AIR);
        assert_eq!(w.query(VoxelCoord::new(100, 100, 100)), AIR);
    }

    #[test]
    fn exhaustive_query_on_4_cubed() {
        let b = Aabb::from_origin_dims(VoxelCoord::new(-2, 0, 3), [4, 4, 4]).unwrap();
        let names = ["a", "b", "c", "minecraft:air", "d"];
        let mut src = Vec::new();
        let mut w = WorldMap::filled(b, AIR);
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let n = names[(x * 7 + y * 3 + z * 5) % names.len()];
                    w.set(VoxelCoord::new(x as i32 - 2, y as i32, z as i32 + 3), n);
                    src.push(((x, y, z), n));
                }
            }
        }
        for ((x, y, z), n) in src {
            assert_eq!(w.query(VoxelCoord::new(x as i32 - 2, y as i32, z as i32 + 3)), n);
        }
    }

    #[test]
    fn box_outside_world_is_empty() {
        let (w, m) = furnished();
        let b = Aabb::from_origin_dims(VoxelCoord::new(50, 50, 50), [3, 3, 3]).unwrap();
        let g = extract_occupancy(&w, b, &m, table()).unwrap();
        assert_eq!(g.count_nonempty(), 0);
    }

    #[test]
    fn single_chair_in_2_cubed_box() {
        let (w, m) = furnished();
        let b = Aabb::from_origin_dims(VoxelCoord::new(2, 1, 2), [2, 2, 2]).unwrap();
        let g = extract_occupancy(&w, b, &m, table()).unwrap();
        let chair = table().id_of("chair").unwrap();
        let hits: Vec<_> = g.occupied().collect();
        assert_eq!(hits, vec![(VoxelCoord::new(3, 1, 3), chair)]);
    }

    #[test]
    fn counts_match_double_loop() {
        let (w, m) = furnished();
        let t = table();
        let b = Aabb::from_origin_dims(VoxelCoord::ZERO, [8, 8, 8]).unwrap();
        let g = extract_occupancy(&w, b, &m, t.clone()).unwrap();
        let mut oracle = vec![0usize; t.len()];
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    let name = w.query(VoxelCoord::new(x, y, z));
                    let class = match name {
                        "minecraft:air" => "empty",
                        "minecraft:oak_planks" => "floor",
                        "minecraft:smooth_quartz" => "wall",
                        n if n.starts_with("minecraft:oak_stairs") => "chair",
                        _ => "objects",
                    };
                    oracle[t.id_of(class).unwrap() as usize] += 1;
                }
            }
        }
        assert_eq!(g.class_counts(), oracle);
        assert_eq!(oracle[t.id_of("objects").unwrap() as usize], 1);
    }

    #[test]
    fn unknown_block_without_default_fails() {
        let (w, mut m) = furnished();
        m.set_default_target(None);
        let b = Aabb::from_origin_dims(VoxelCoord::ZERO, [8, 8, 8]).unwrap();
        assert!(matches!(
            extract_occupancy(&w, b, &m, table()),
            Err(WorldError::Grid(GridError::UnknownClass(_)))
        ));
        // a box that avoids the flower pot is fine
        let b = Aabb::from_origin_dims(VoxelCoord::ZERO, [4, 4, 4]).unwrap();
        assert!(extract_occupancy(&w, b, &m, table()).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"bounds":{"min":[0,0,0],"max":[3,3,3]},
            "fills":[[0,0,0,3,0,3,"minecraft:stone"]],
            "blocks":[[1,1,1,"minecraft:oak_planks"]]}"#;
        let w = WorldMap::from_json(text).unwrap();
        assert_eq!(w.query(VoxelCoord::new(3, 0, 3)), "minecraft:stone");
        assert_eq!(w.query(VoxelCoord::new(1, 1, 1)), "minecraft:oak_planks");
        assert_eq!(w.query(VoxelCoord::new(1, 2, 1)), AIR);
        let back = WorldMap::from_json(&w.to_json()).unwrap();
        for v in w.bounds().iter() {
            assert_eq!(back.query(v), w.query(v));
        }
        let bad = r#"{"bounds":{"min":[0,0,0],"max":[1,1,1]},"blocks":[[5,0,0,"x"]]}"#;
        assert!(matches!(WorldMap::from_json(bad), Err(WorldError::OutOfBounds(_))));
    }

    proptest! {
        #[test]
        fn extraction_is_local(
            x0 in -3i32..10, y0 in -3i32..10, z0 in -3i32..10,
            dx in 1usize..6, dy in 1usize..6, dz in 1usize..6,
            sx in 0i32..6, sy in 0i32..6, sz in 0i32..6,
        ) {
            let (w, m) = furnished();
            let outer = Aabb::from_origin_dims(VoxelCoord::new(x0, y0, z0), [dx, dy, dz]).unwrap();
            let big = extract_occupancy(&w, outer, &m, table()).unwrap();
            let lo = VoxelCoord::new(x0 + sx % dx as i32, y0 + sy % dy as i32, z0 + sz % dz as i32);
            let inner = Aabb::spanning(lo, outer.max());
            let small = extract_occupancy(&w, inner, &m, table()).unwrap();
            for v in inner.iter() {
                prop_assert_eq!(small.get(v), big.get(v));
            }
            prop_assert!(big.labels().iter().all(|&l| l == EMPTY || (l as usize) < 12));
        }
    }
}
