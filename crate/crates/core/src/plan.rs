//! Build plans: structural classes become coalesced `fill` boxes, matched
//! instances become per-block stamps, and a plan can be replayed back into a
//! grid to check it.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::centers::CenterSet;
use crate::grid::{base_block_name, Aabb, ClassId, ClassMap, ClassTable, SemanticGrid, VoxelCoord, EMPTY};
use crate::matching::{rotate_template, InstanceMatch, MatchError, TemplateLibrary};

/// Largest box a single vanilla `fill` accepts.
pub const VANILLA_FILL_LIMIT: u64 = 32768;

pub const AIR_BLOCK: &str = "minecraft:air";

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("no class for block {0:?}")]
    UnknownBlockName(String),
    #[error("no block for class {0:?}")]
    UnmappedClass(String),
    #[error("{centers} centres but {matches} match results")]
    MatchCountMismatch { centers: usize, matches: usize },
    #[error("template index {0} out of range")]
    BadTemplateIndex(usize),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("plan.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum BuildCommand {
    Clear {
        #[serde(rename = "box")]
        region: Aabb,
    },
    Fill {
        #[serde(rename = "box")]
        region: Aabb,
        block: String,
    },
    #[serde(rename = "setblock")]
    SetBlock { pos: VoxelCoord, block: String },
}

/// Class name to default block name.
pub type BlockTable = BTreeMap<String, String>;

pub fn default_block_table() -> BlockTable {
    [
        ("ceiling", "minecraft:white_concrete"),
        ("floor", "minecraft:oak_planks"),
        ("wall", "minecraft:smooth_quartz"),
        ("window", "minecraft:glass"),
        ("chair", "minecraft:oak_stairs"),
        ("bed", "minecraft:red_wool"),
        ("sofa", "minecraft:green_wool"),
        ("table", "minecraft:spruce_planks"),
        ("tvs", "minecraft:black_concrete"),
        ("furniture", "minecraft:bookshelf"),
        ("objects", "minecraft:flower_pot"),
    ]
    .into_iter()
    .map(|(c, b)| (c.to_string(), b.to_string()))
    .collect()
}

/// Maps block names back to classes: the block table first (exact, then
/// without block states), then an optional class map.
pub struct BlockResolver<'a> {
    by_block: HashMap<&'a str, ClassId>,
    map: Option<&'a ClassMap>,
    table: &'a ClassTable,
}

impl<'a> BlockResolver<'a> {
    pub fn new(blocks: &'a BlockTable, map: Option<&'a ClassMap>, table: &'a ClassTable) -> Self {
        let by_block = blocks
            .iter()
            .filter_map(|(class, block)| table.id_of(class).map(|id| (block.as_str(), id)))
            .collect();
        BlockResolver { by_block, map, table }
    }

    pub fn class_of(&self, block: &str) -> Option<ClassId> {
        if crate::grid::is_air(block) {
            return Some(EMPTY);
        }
        self.by_block
            .get(block)
            .or_else(|| self.by_block.get(base_block_name(block)))
            .copied()
            .or_else(|| self.map.and_then(|m| m.resolve(block, self.table).ok()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildPlan {
    pub bounds: Aabb,
    pub commands: Vec<BuildCommand>,
    #[serde(default)]
    pub block_table: BlockTable,
}

impl BuildPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn count(&self, pred: impl Fn(&BuildCommand) -> bool) -> usize {
        self.commands.iter().filter(|c| pred(c)).count()
    }

    pub fn fills(&self) -> usize {
        self.count(|c| matches!(c, BuildCommand::Fill { .. }))
    }

    pub fn setblocks(&self) -> usize {
        self.count(|c| matches!(c, BuildCommand::SetBlock { .. }))
    }
}

/// Greedy cuboid cover of the selected classes.
///
/// Scanning y, then z, then x, each unvisited voxel starts a box that grows
/// along x, then z (whole rows), then y (whole slabs). Boxes are disjoint and
/// their union is exactly the selected voxels.
pub fn coalesce_cuboids(
    grid: &SemanticGrid,
    classes: &[ClassId],
    blocks: &BlockTable,
) -> Result<Vec<BuildCommand>, PlanError> {
    let [nx, ny, nz] = grid.dims();
    let mut sorted: Vec<ClassId> = classes.iter().copied().filter(|&c| c != EMPTY).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::new();
    for class in sorted {
        let name = grid.classes().name(class).unwrap_or("?").to_string();
        let block = blocks.get(&name).ok_or(PlanError::UnmappedClass(name))?;
        let mut used = vec![false; grid.len()];
        let free = |used: &[bool], x: usize, y: usize, z: usize| {
            let i = grid.local_index(x, y, z);
            !used[i] && grid.labels()[i] == class
        };
        for y in 0..ny {
            for z in 0..nz {
                for x in 0..nx {
                    if !free(&used, x, y, z) {
                        continue;
                    }
                    let mut x1 = x;
                    while x1 + 1 < nx && free(&used, x1 + 1, y, z) {
                        x1 += 1;
                    }
                    let mut z1 = z;
                    while z1 + 1 < nz && (x..=x1).all(|xx| free(&used, xx, y, z1 + 1)) {
                        z1 += 1;
                    }
                    let mut y1 = y;
                    while y1 + 1 < ny && (z..=z1).all(|zz| (x..=x1).all(|xx| free(&used, xx, y1 + 1, zz))) {
                        y1 += 1;
                    }
                    for yy in y..=y1 {
                        for zz in z..=z1 {
                            for xx in x..=x1 {
                                used[grid.local_index(xx, yy, zz)] = true;
                            }
                        }
                    }
                    let o = grid.origin();
                    let lo = o + VoxelCoord::new(x as i32, y as i32, z as i32);
                    let hi = o + VoxelCoord::new(x1 as i32, y1 as i32, z1 as i32);
                    out.push(BuildCommand::Fill { region: Aabb::spanning(lo, hi), block: block.clone() });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Classes rendered voxel-exact from the grid.
    pub structural: Vec<String>,
    pub blocks: BlockTable,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            structural: ["ceiling", "floor", "wall", "window"].map(String::from).to_vec(),
            blocks: default_block_table(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    pub fills: usize,
    pub setblocks: usize,
    pub templates: usize,
    pub fallbacks: usize,
    /// Voxels written more than once with different blocks; the later write wins.
    pub conflicts: usize,
    pub conflict_samples: Vec<VoxelCoord>,
    /// Stamped blocks dropped for lying outside the plan bounds.
    pub clipped: usize,
}

pub fn emit_plan(
    grid: &SemanticGrid,
    centers: &CenterSet,
    matches: &[InstanceMatch],
    library: &TemplateLibrary,
    config: &PlanConfig,
) -> Result<(BuildPlan, PlanDiagnostics), PlanError> {
    if centers.len() != matches.len() {
        return Err(PlanError::MatchCountMismatch { centers: centers.len(), matches: matches.len() });
    }
    let table = grid.classes();
    let structural: Vec<ClassId> = config.structural.iter().filter_map(|n| table.id_of(n)).collect();
    let bounds = grid.bounds();
    let mut diag = PlanDiagnostics::default();
    let mut commands = vec![BuildCommand::Clear { region: bounds }];
    let fills = coalesce_cuboids(grid, &structural, &config.blocks)?;
    diag.fills = fills.len();
    commands.extend(fills);

    let class_block = |class: ClassId| -> Result<&String, PlanError> {
        let name = table.name(class).unwrap_or("?");
        config.blocks.get(name).ok_or_else(|| PlanError::UnmappedClass(name.to_string()))
    };
    let mut written: HashMap<VoxelCoord, String> = HashMap::new();
    let mut order: Vec<usize> = (0..centers.len()).collect();
    order.sort_by_key(|&i| centers.centers[i].id);
    for i in order {
        let center = &centers.centers[i];
        let stamps: Vec<(VoxelCoord, String)> = match &matches[i] {
            InstanceMatch::Template(m) => {
                diag.templates += 1;
                let t = library.templates.get(m.template).ok_or(PlanError::BadTemplateIndex(m.template))?;
                let r = rotate_template(t, m.rotation as i64)?;
                if r.recipe.is_empty() {
                    let b = class_block(t.class)?;
                    r.voxels().iter().map(|&v| (m.placement + v, b.clone())).collect()
                } else {
                    r.recipe.iter().map(|(v, b)| (m.placement + *v, b.clone())).collect()
                }
            }
            // structural voxels are already covered by the fills
            InstanceMatch::Fallback { .. } if structural.contains(&center.class) => continue,
            InstanceMatch::Fallback { voxels, .. } => {
                diag.fallbacks += 1;
                let b = class_block(center.class)?;
                voxels.iter().map(|&v| (v, b.clone())).collect()
            }
        };
        for (pos, block) in stamps {
            if !bounds.contains(pos) {
                diag.clipped += 1;
                continue;
            }
            let previous = match written.get(&pos) {
                Some(b) => Some(b.clone()),
                None => {
                    let l = grid.get(pos);
                    structural.contains(&l).then(|| class_block(l)).transpose()?.cloned()
                }
            };
            if previous.is_some_and(|p| p != block) {
                diag.conflicts += 1;
                if diag.conflict_samples.len() < 16 {
                    diag.conflict_samples.push(pos);
                }
            }
            written.insert(pos, block.clone());
            commands.push(BuildCommand::SetBlock { pos, block });
        }
    }
    diag.setblocks = commands.len() - 1 - diag.fills;
    Ok((BuildPlan { bounds, commands, block_table: config.blocks.clone() }, diag))
}

/// A hand correction applied on top of a generated plan: place `block` at
/// `pos`, or clear it when `block` is absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub pos: VoxelCoord,
    #[serde(default)]
    pub block: Option<String>,
}

/// Appends patches as trailing set-block commands; returns how many were
/// dropped for lying outside the plan bounds.
pub fn apply_patches(plan: &mut BuildPlan, patches: &[Patch]) -> usize {
    let mut dropped = 0;
    for p in patches {
        if !plan.bounds.contains(p.pos) {
            dropped += 1;
            continue;
        }
        let block = p.block.clone().unwrap_or_else(|| AIR_BLOCK.to_string());
        plan.commands.push(BuildCommand::SetBlock { pos: p.pos, block });
    }
    dropped
}

/// Replays the plan into an empty grid over its bounds.
pub fn decode_plan(
    plan: &BuildPlan,
    class_of_block: impl Fn(&str) -> Option<ClassId>,
    table: Arc<ClassTable>,
) -> Result<SemanticGrid, PlanError> {
    let mut grid = SemanticGrid::over(plan.bounds, table);
    let resolve = |b: &str| class_of_block(b).ok_or_else(|| PlanError::UnknownBlockName(b.to_string()));
    for cmd in &plan.commands {
        match cmd {
            BuildCommand::Clear { region } => fill(&mut grid, region, EMPTY),
            BuildCommand::Fill { region, block } => fill(&mut grid, region, resolve(block)?),
            BuildCommand::SetBlock { pos, block } => {
                grid.set(*pos, resolve(block)?);
            }
        }
    }
    Ok(grid)
}

fn fill(grid: &mut SemanticGrid, region: &Aabb, class: ClassId) {
    if let Some(r) = region.intersect(&grid.bounds()) {
        for v in r.iter() {
            grid.set(v, class);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[default]
    Vanilla,
    Worldedit,
}

/// Splits a box into pieces of at most `limit` blocks, halving the longest axis.
pub fn split_box(region: Aabb, limit: u64) -> Vec<Aabb> {
    if region.volume() <= limit {
        return vec![region];
    }
    let e = region.extents();
    let axis = (0..3).max_by_key(|&a| (e[a], 3 - a)).expect("three axes");
    let (lo, hi) = (region.min().to_array(), region.max().to_array());
    let mid = lo[axis] + (e[axis] as i32) / 2 - 1;
    let mut a_hi = hi;
    a_hi[axis] = mid;
    let mut b_lo = lo;
    b_lo[axis] = mid + 1;
    let a = Aabb::spanning(region.min(), VoxelCoord::new(a_hi[0], a_hi[1], a_hi[2]));
    let b = Aabb::spanning(VoxelCoord::new(b_lo[0], b_lo[1], b_lo[2]), region.max());
    let mut out = split_box(a, limit);
    out.extend(split_box(b, limit));
    out
}

fn coords(v: VoxelCoord) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

/// Text commands, one per line, without a leading slash. Vanilla `fill`
/// boxes larger than the server limit are split.
pub fn render_commands(plan: &BuildPlan, dialect: Dialect) -> Vec<String> {
    let mut out = Vec::with_capacity(plan.commands.len());
    for cmd in &plan.commands {
        let (region, block) = match cmd {
            BuildCommand::SetBlock { pos, block } => {
                out.push(format!("setblock {} {}", coords(*pos), block));
                continue;
            }
            BuildCommand::Fill { region, block } => (*region, block.as_str()),
            BuildCommand::Clear { region } => (*region, AIR_BLOCK),
        };
        match dialect {
            Dialect::Vanilla => {
                for piece in split_box(region, VANILLA_FILL_LIMIT) {
                    out.push(format!("fill {} {} {}", coords(piece.min()), coords(piece.max()), block));
                }
            }
            Dialect::Worldedit => {
                let (a, b) = (region.min(), region.max());
                out.push(format!("//pos1 {},{},{}", a.x, a.y, a.z));
                out.push(format!("//pos2 {},{},{}", b.x, b.y, b.z));
                out.push(format!("//set {block}"));
            }
        }
    }
    out
}

/// LF-terminated command file.
pub fn render_text(plan: &BuildPlan, dialect: Dialect) -> String {
    let mut s = String::new();
    for line in render_commands(plan, dialect) {
        let _ = writeln!(s, "{line}");
    }
    s
}
