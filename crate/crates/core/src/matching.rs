//! Template retrieval: crop each instance around its centre, then search the
//! library over quarter-turn rotations for the best voxel IoU.
//!
//! All alignment arithmetic is done on integer sums so that IoU comparisons
//! and half-way rounding are exact.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centers::{Center, CenterSet};
use crate::grid::{ClassId, ClassTable, GridError, SemanticGrid, VoxelCoord};

pub const DEFAULT_ROTATIONS: [u16; 4] = [0, 90, 180, 270];

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("rotation {0} degrees is not in the rotation set")]
    UnsupportedAngle(i64),
    #[error("instance has no occupied voxels")]
    EmptyInstance,
    #[error("no template for class {0}")]
    NoTemplate(String),
    #[error("template {0:?} has no voxels")]
    EmptyTemplate(String),
    #[error("crop radius must be at least 1")]
    InvalidRadius,
    #[error("templates.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A furniture shape in its own frame, min corner at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub class: ClassId,
    /// Occupied cells, sorted.
    voxels: Vec<VoxelCoord>,
    /// Block placements relative to the template origin. May be empty, in
    /// which case the class default block is stamped on every voxel.
    pub recipe: Vec<(VoxelCoord, String)>,
}

fn sum(voxels: &[VoxelCoord]) -> [i64; 3] {
    voxels.iter().fold([0; 3], |a, v| [a[0] + v.x as i64, a[1] + v.y as i64, a[2] + v.z as i64])
}

impl Template {
    /// Shifts voxels and recipe together so the voxel min corner is at the origin.
    pub fn new(
        name: impl Into<String>,
        class: ClassId,
        voxels: Vec<VoxelCoord>,
        recipe: Vec<(VoxelCoord, String)>,
    ) -> Result<Self, MatchError> {
        let name = name.into();
        let Some(min) = voxels.iter().copied().reduce(VoxelCoord::min) else {
            return Err(MatchError::EmptyTemplate(name));
        };
        let mut voxels: Vec<VoxelCoord> = voxels.into_iter().map(|v| v - min).collect();
        voxels.sort();
        voxels.dedup();
        let recipe = recipe.into_iter().map(|(v, b)| (v - min, b)).collect();
        Ok(Template { name, class, voxels, recipe })
    }

    pub fn voxels(&self) -> &[VoxelCoord] {
        &self.voxels
    }

    /// Mean of the occupied voxel coordinates.
    pub fn anchor(&self) -> [f64; 3] {
        let s = sum(&self.voxels);
        let n = self.voxels.len() as f64;
        [s[0] as f64 / n, s[1] as f64 / n, s[2] as f64 / n]
    }

    pub fn extents(&self) -> [usize; 3] {
        let max = self.voxels.iter().copied().reduce(VoxelCoord::max).unwrap_or_default();
        [max.x as usize + 1, max.y as usize + 1, max.z as usize + 1]
    }
}

/// One quarter turn about +Y: (x, z) -> (-z, x), which carries north (-Z)
/// onto east (+X).
fn quarter(v: VoxelCoord) -> VoxelCoord {
    VoxelCoord::new(-v.z, v.y, v.x)
}

const FACINGS: [&str; 4] = ["north", "east", "south", "west"];

/// Rotates orientation states in a block name by `turns` quarter turns.
pub fn rotate_block_state(name: &str, turns: usize) -> String {
    let Some(open) = name.find('[') else { return name.to_string() };
    let Some(body) = name[open + 1..].strip_suffix(']') else { return name.to_string() };
    let props: Vec<String> = body
        .split(',')
        .map(|kv| match kv.split_once('=') {
            Some(("facing", f)) => match FACINGS.iter().position(|&x| x == f) {
                Some(i) => format!("facing={}", FACINGS[(i + turns) % 4]),
                None => kv.to_string(),
            },
            Some(("axis", a)) if turns % 2 == 1 && (a == "x" || a == "z") => {
                format!("axis={}", if a == "x" { "z" } else { "x" })
            }
            _ => kv.to_string(),
        })
        .collect();
    format!("{}[{}]", &name[..open], props.join(","))
}

pub fn rotate_template(t: &Template, degrees: i64) -> Result<Template, MatchError> {
    if !DEFAULT_ROTATIONS.iter().any(|&d| d as i64 == degrees) {
        return Err(MatchError::UnsupportedAngle(degrees));
    }
    let turns = (degrees / 90) as usize;
    let spin = |mut v: VoxelCoord| {
        for _ in 0..turns {
            v = quarter(v);
        }
        v
    };
    let voxels = t.voxels.iter().map(|&v| spin(v)).collect();
    let recipe = t.recipe.iter().map(|(v, b)| (spin(*v), rotate_block_state(b, turns))).collect();
    Template::new(t.name.clone(), t.class, voxels, recipe)
}

/// Occupied cells of one instance, in crop-local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// World coordinate of local (0, 0, 0).
    pub origin: VoxelCoord,
    pub voxels: Vec<VoxelCoord>,
}

impl Instance {
    pub fn world_voxels(&self) -> impl Iterator<Item = VoxelCoord> + '_ {
        self.voxels.iter().map(|&v| v + self.origin)
    }
}

/// Voxels of `class` inside the `(2r+1)^3` window around the rounded centre.
pub fn crop_instance(grid: &SemanticGrid, center: &Center, radius: i32) -> Result<Instance, MatchError> {
    if radius < 1 {
        return Err(MatchError::InvalidRadius);
    }
    let c = VoxelCoord::round_half_up(center.pos);
    let origin = c - VoxelCoord::new(radius, radius, radius);
    let side = 2 * radius + 1;
    let mut voxels = Vec::new();
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let local = VoxelCoord::new(x, y, z);
                if grid.get(origin + local) == center.class {
                    voxels.push(local);
                }
            }
        }
    }
    voxels.sort();
    Ok(Instance { origin, voxels })
}

/// Integer translations that put `b`'s mean onto `a`'s mean, rounded to the
/// nearest integer per axis; both neighbours are returned at exact halves.
fn alignments(a: &[VoxelCoord], b: &[VoxelCoord]) -> Vec<VoxelCoord> {
    let (sa, sb) = (sum(a), sum(b));
    let (na, nb) = (a.len() as i64, b.len() as i64);
    let den = na * nb;
    let mut per_axis: [Vec<i32>; 3] = Default::default();
    for ax in 0..3 {
        let num = sa[ax] * nb - sb[ax] * na;
        let lo = num.div_euclid(den);
        let rem2 = 2 * num.rem_euclid(den);
        per_axis[ax] = if rem2 == den {
            vec![lo as i32, lo as i32 + 1]
        } else if rem2 > den {
            vec![lo as i32 + 1]
        } else {
            vec![lo as i32]
        };
    }
    let mut out = Vec::new();
    for &x in &per_axis[0] {
        for &y in &per_axis[1] {
            for &z in &per_axis[2] {
                out.push(VoxelCoord::new(x, y, z));
            }
        }
    }
    out
}

/// Exact IoU as `intersection / union`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: usize,
    pub union: usize,
}

impl Overlap {
    pub fn iou(self) -> f64 {
        self.intersection as f64 / self.union as f64
    }

    fn beats(self, o: Overlap) -> bool {
        (self.intersection * o.union) > (o.intersection * self.union)
    }
}

fn overlap(a: &std::collections::HashSet<VoxelCoord>, b: &[VoxelCoord], shift: VoxelCoord) -> Overlap {
    let inter = b.iter().filter(|&&v| a.contains(&(v + shift))).count();
    Overlap { intersection: inter, union: a.len() + b.len() - inter }
}

/// Best IoU of `b` placed at the centroid-aligned translation (and, with
/// `jitter`, every translation within one voxel of it). Returns the
/// translation applied to `b`.
pub fn aligned_overlap(a: &[VoxelCoord], b: &[VoxelCoord], jitter: bool) -> Result<(Overlap, VoxelCoord), MatchError> {
    if a.is_empty() {
        return Err(MatchError::EmptyInstance);
    }
    if b.is_empty() {
        return Ok((Overlap { intersection: 0, union: a.len() }, VoxelCoord::ZERO));
    }
    let set: std::collections::HashSet<VoxelCoord> = a.iter().copied().collect();
    let mut shifts = alignments(a, b);
    if jitter {
        let base = shifts.clone();
        for s in base {
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let j = s + VoxelCoord::new(dx, dy, dz);
                        if !shifts.contains(&j) {
                            shifts.push(j);
                        }
                    }
                }
            }
        }
    }
    let mut best = (overlap(&set, b, shifts[0]), shifts[0]);
    for &s in &shifts[1..] {
        let o = overlap(&set, b, s);
        if o.beats(best.0) {
            best = (o, s);
        }
    }
    Ok(best)
}

pub fn voxel_iou(a: &[VoxelCoord], b: &[VoxelCoord]) -> Result<f64, MatchError> {
    Ok(aligned_overlap(a, b, false)?.0.iou())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub template: usize,
    pub rotation: u16,
    pub iou: f64,
    /// World position of the rotated template's local origin.
    pub placement: VoxelCoord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateLibrary {
    pub templates: Vec<Template>,
}

#[derive(Deserialize, Serialize)]
struct TemplateRow {
    name: String,
    class: String,
    voxels: Vec<[i32; 3]>,
    #[serde(default)]
    blocks: Vec<(i32, i32, i32, String)>,
}

impl TemplateLibrary {
    pub fn new(templates: Vec<Template>) -> Self {
        TemplateLibrary { templates }
    }

    pub fn for_class(&self, class: ClassId) -> impl Iterator<Item = (usize, &Template)> {
        self.templates.iter().enumerate().filter(move |(_, t)| t.class == class)
    }

    pub fn from_json(text: &str, table: &ClassTable) -> Result<Self, MatchError> {
        let rows: Vec<TemplateRow> = serde_json::from_str(text)?;
        let templates = rows
            .into_iter()
            .map(|r| {
                let class = table.resolve(&r.class)?;
                Template::new(
                    r.name,
                    class,
                    r.voxels.into_iter().map(|[x, y, z]| VoxelCoord::new(x, y, z)).collect(),
                    r.blocks.into_iter().map(|(x, y, z, b)| (VoxelCoord::new(x, y, z), b)).collect(),
                )
            })
            .collect::<Result<_, MatchError>>()?;
        Ok(TemplateLibrary { templates })
    }

    pub fn to_json(&self, table: &ClassTable) -> String {
        let rows: Vec<TemplateRow> = self
            .templates
            .iter()
            .map(|t| TemplateRow {
                name: t.name.clone(),
                class: table.name(t.class).unwrap_or("objects").to_string(),
                voxels: t.voxels.iter().map(|v| v.to_array()).collect(),
                blocks: t.recipe.iter().map(|(v, b)| (v.x, v.y, v.z, b.clone())).collect(),
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("templates serialize")
    }

    pub fn load(path: impl AsRef<Path>, table: &ClassTable) -> Result<Self, MatchError> {
        Self::from_json(&std::fs::read_to_string(path)?, table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    pub radius: i32,
    pub min_iou: f64,
    pub rotations: Vec<u16>,
    pub jitter: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { radius: 5, min_iou: 0.25, rotations: DEFAULT_ROTATIONS.to_vec(), jitter: false }
    }
}

/// Exhaustive search over class templates and rotations. Ties go to the
/// earlier rotation in `rotations`, then the lower template index.
pub fn best_match(
    instance: &Instance,
    library: &TemplateLibrary,
    class: ClassId,
    rotations: &[u16],
    jitter: bool,
) -> Result<MatchResult, MatchError> {
    if instance.voxels.is_empty() {
        return Err(MatchError::EmptyInstance);
    }
    let mut best: Option<(Overlap, MatchResult)> = None;
    for &deg in rotations {
        for (j, t) in library.for_class(class) {
            let rotated = rotate_template(t, deg as i64)?;
            let (o, shift) = aligned_overlap(&instance.voxels, rotated.voxels(), jitter)?;
            if best.as_ref().is_none_or(|(b, _)| o.beats(*b)) {
                let m = MatchResult { template: j, rotation: deg, iou: o.iou(), placement: instance.origin + shift };
                best = Some((o, m));
            }
        }
    }
    best.map(|(_, m)| m).ok_or_else(|| MatchError::NoTemplate(class.to_string()))
}

/// How one centre will be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InstanceMatch {
    Template(MatchResult),
    /// No template, or the best one scored below the threshold: the raw
    /// instance voxels (world coordinates) are stamped instead.
    Fallback { voxels: Vec<VoxelCoord>, best_iou: Option<f64> },
}

pub fn match_instances(
    grid: &SemanticGrid,
    centers: &CenterSet,
    library: &TemplateLibrary,
    config: &MatchConfig,
) -> Result<Vec<InstanceMatch>, MatchError> {
    for &r in &config.rotations {
        if !DEFAULT_ROTATIONS.contains(&r) {
            return Err(MatchError::UnsupportedAngle(r as i64));
        }
    }
    centers
        .centers
        .par_iter()
        .map(|c| {
            let inst = crop_instance(grid, c, config.radius)?;
            if inst.voxels.is_empty() {
                return Ok(InstanceMatch::Fallback { voxels: Vec::new(), best_iou: None });
            }
            match best_match(&inst, library, c.class, &config.rotations, config.jitter) {
                Ok(m) if m.iou >= config.min_iou => Ok(InstanceMatch::Template(m)),
                Ok(m) => Ok(InstanceMatch::Fallback { voxels: inst.world_voxels().collect(), best_iou: Some(m.iou) }),
                Err(MatchError::NoTemplate(_)) => {
                    Ok(InstanceMatch::Fallback { voxels: inst.world_voxels().collect(), best_iou: None })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}
