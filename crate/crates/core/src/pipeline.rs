//! Stage orchestration and configuration.
//!
//! Reconstruction runs fuse, centres, match and plan in that order; the
//! dataset direction cuts one labelled view volume per camera frame out of a
//! voxel world.
//!
//! Config is TOML. Every section and key is optional:
//!
//! ```toml
//! [centers]
//! k = 3
//! tau = 0.2
//! eta = 2.0
//! min_pts = 1
//!
//! [matching]
//! radius = 5
//! min_iou = 0.25
//! rotations = [0, 90, 180, 270]
//! jitter = false
//!
//! [volume]
//! w = 16
//! h = 16
//! d = 16
//! epsilon = [0, 0, 0]   # omit for the per-case default
//!
//! [camera]
//! width = 640
//! height = 480
//! vertical_fov = false
//! cull = true
//!
//! [plan]
//! structural = ["ceiling", "floor", "wall", "window"]
//! [plan.blocks]
//! wall = "minecraft:stone_bricks"
//!
//! [paths]
//! templates = "templates.json"
//! classmap = "classmap.json"
//! block_table = "blocks.json"
//!
//! [rcon]
//! host = "127.0.0.1"
//! port = 25575
//! timeout = 5.0
//! throttle = 20.0
//! password_env = "RCON_PASSWORD"
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraError, FrameRecord};
use crate::centers::{extract_centers, CenterDiagnostics, CenterParams, CenterSet, CentersError};
use crate::fusion::{fuse_views, world_bounds, FusionError, ViewObservation};
use crate::grid::{Aabb, ClassMap, ClassTable, GridError, SemanticGrid};
use crate::matching::{match_instances, InstanceMatch, MatchConfig, MatchError, TemplateLibrary};
use crate::plan::{emit_plan, BlockTable, BuildPlan, PlanConfig, PlanDiagnostics, PlanError};
use crate::rcon::{DispatchOptions, RconEndpoint, DEFAULT_PORT};
use crate::viewvol::{apply_offset, classify_view_case, compute_view_volume, frustum_cull, VolumeSpec};
use crate::world::{extract_occupancy, WorldError, WorldMap};

pub const CONFIG_ENV: &str = "OCCUCRAFT_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("fusion stage: {0}")]
    Fusion(#[from] FusionError),
    #[error("centers stage: {0}")]
    Centers(#[from] CentersError),
    #[error("match stage: {0}")]
    Match(#[from] MatchError),
    #[error("plan stage: {0}")]
    Plan(#[from] PlanError),
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("camera: {0}")]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub vertical_fov: bool,
    pub cull: bool,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { width: 640, height: 480, vertical_fov: false, cull: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub templates: Option<PathBuf>,
    pub classmap: Option<PathBuf>,
    pub block_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RconConfig {
    pub host: String,
    pub port: u16,
    pub timeout: f64,
    pub throttle: f64,
    pub password_env: String,
}

impl Default for RconConfig {
    fn default() -> Self {
        RconConfig {
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            timeout: 5.0,
            throttle: DispatchOptions::default().throttle,
            password_env: "RCON_PASSWORD".into(),
        }
    }
}

impl RconConfig {
    /// Endpoint with the password taken from `password_env`.
    pub fn endpoint(&self) -> RconEndpoint {
        RconEndpoint {
            host: self.host.clone(),
            port: self.port,
            password: std::env::var(&self.password_env).unwrap_or_default(),
            timeout: self.timeout,
        }
    }
}

fn default_volume() -> VolumeSpec {
    VolumeSpec::new(16, 16, 16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub centers: CenterParams,
    pub matching: MatchConfig,
    pub volume: VolumeSpec,
    pub camera: CameraConfig,
    pub plan: PlanConfig,
    pub paths: PathsConfig,
    pub rcon: RconConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            centers: CenterParams::default(),
            matching: MatchConfig::default(),
            volume: default_volume(),
            camera: CameraConfig::default(),
            plan: PlanConfig::default(),
            paths: PathsConfig::default(),
            rcon: RconConfig::default(),
        }
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::File { path: path.to_path_buf(), source })
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        // section tables replace defaults wholesale; block overrides merge
        let mut blocks = crate::plan::default_block_table();
        blocks.extend(std::mem::take(&mut cfg.plan.blocks));
        cfg.plan.blocks = blocks;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.templates, &mut cfg.paths.classmap, &mut cfg.paths.block_table]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// `flag` if given, else `$OCCUCRAFT_CONFIG`, else built-in defaults.
    pub fn discover(flag: Option<&Path>) -> Result<Self, PipelineError> {
        match flag.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from)) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.centers;
        let bad = |m: String| Err(PipelineError::Config(m));
        if c.k < 1 || c.k % 2 == 0 {
            return bad(format!("centers.k must be odd and positive, got {}", c.k));
        }
        if !(c.tau >= 0.0) {
            return bad(format!("centers.tau must be non-negative, got {}", c.tau));
        }
        if !(c.eta > 0.0) {
            return bad(format!("centers.eta must be positive, got {}", c.eta));
        }
        if c.min_pts < 1 {
            return bad("centers.min_pts must be at least 1".into());
        }
        if self.matching.radius < 1 {
            return bad("matching.radius must be at least 1".into());
        }
        if self.matching.rotations.is_empty() || self.matching.rotations.iter().any(|r| r % 90 != 0 || *r >= 360) {
            return bad(format!("matching.rotations must be drawn from 0, 90, 180, 270, got {:?}", self.matching.rotations));
        }
        if self.volume.w == 0 || self.volume.h == 0 || self.volume.d == 0 {
            return bad("volume dimensions must be positive".into());
        }
        if !(self.rcon.throttle > 0.0) {
            return bad("rcon.throttle must be positive".into());
        }
        Ok(())
    }

    /// Plan settings with the block table file, if any, layered on top.
    pub fn plan_config(&self) -> Result<PlanConfig, PipelineError> {
        let mut plan = self.plan.clone();
        if let Some(p) = &self.paths.block_table {
            let extra: BlockTable =
                serde_json::from_str(&read(p)?).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
            plan.blocks.extend(extra);
        }
        Ok(plan)
    }

    pub fn library(&self, table: &ClassTable) -> Result<TemplateLibrary, PipelineError> {
        match &self.paths.templates {
            Some(p) => Ok(TemplateLibrary::from_json(&read(p)?, table)?),
            None => Ok(TemplateLibrary::default()),
        }
    }

    pub fn class_map(&self, table: &ClassTable) -> Result<ClassMap, PipelineError> {
        match &self.paths.classmap {
            Some(p) => Ok(ClassMap::from_json(&read(p)?, table)?),
            None => Ok(ClassMap::with_objects_default(table)),
        }
    }

    pub fn dispatch_options(&self) -> DispatchOptions {
        DispatchOptions { throttle: self.rcon.throttle, ..Default::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub observations: usize,
    pub fused_voxels: usize,
    pub centers: CenterDiagnostics,
    pub instances: usize,
    pub template_instances: usize,
    pub fallback_instances: usize,
    pub plan: PlanDiagnostics,
    pub commands: usize,
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub fused: SemanticGrid,
    pub centers: CenterSet,
    pub matches: Vec<InstanceMatch>,
    pub plan: BuildPlan,
    pub report: PipelineReport,
}

/// Matching and plan emission for a fixed grid and centre set.
pub fn plan_from_centers(
    grid: &SemanticGrid,
    centers: &CenterSet,
    library: &TemplateLibrary,
    matching: &MatchConfig,
    plan: &PlanConfig,
) -> Result<(Vec<InstanceMatch>, BuildPlan, PlanDiagnostics), PipelineError> {
    let matches = match_instances(grid, centers, library, matching)?;
    let (plan, diag) = emit_plan(grid, centers, &matches, library, plan)?;
    Ok((matches, plan, diag))
}

/// Fuse, find centres, match templates and emit the plan.
pub fn reconstruct_scene(
    observations: &[ViewObservation],
    out_bounds: Option<Aabb>,
    library: &TemplateLibrary,
    config: &PipelineConfig,
) -> Result<SceneOutput, PipelineError> {
    let bounds = match out_bounds {
        Some(b) => b,
        None => world_bounds(observations).ok_or(FusionError::EmptyObservationSet)?,
    };
    let fused = fuse_views(observations, bounds)?;
    let centers = extract_centers(&fused, &config.centers)?;
    let (matches, plan, plan_diag) =
        plan_from_centers(&fused, &centers, library, &config.matching, &config.plan_config()?)?;
    let template_instances = matches.iter().filter(|m| matches!(m, InstanceMatch::Template(_))).count();
    let report = PipelineReport {
        observations: observations.len(),
        fused_voxels: fused.count_nonempty(),
        centers: centers.diagnostics.clone(),
        instances: matches.len(),
        template_instances,
        fallback_instances: matches.len() - template_instances,
        commands: plan.commands.len(),
        plan: plan_diag,
    };
    Ok(SceneOutput { fused, centers, matches, plan, report })
}

/// Observations from grid files paired with poses in order.
pub fn load_observations(grids: &[PathBuf], poses: &[FrameRecord], camera: &CameraConfig) -> Result<Vec<ViewObservation>, PipelineError> {
    if grids.len() != poses.len() {
        return Err(PipelineError::Config(format!("{} grids but {} poses", grids.len(), poses.len())));
    }
    grids
        .iter()
        .zip(poses)
        .map(|(path, pose)| {
            let grid = crate::grid::io::load_grid(path)?;
            let mut obs = ViewObservation::new(grid, pose.extrinsics()?);
            obs.intrinsics = Some(pose.intrinsics(camera.width, camera.height, camera.vertical_fov)?);
            Ok(obs)
        })
        .collect()
}

/// Labelled view volume for one camera frame.
pub fn extract_frame(
    world: &WorldMap,
    frame: &FrameRecord,
    volume: &VolumeSpec,
    camera: &CameraConfig,
    map: &ClassMap,
    table: Arc<ClassTable>,
) -> Result<SemanticGrid, PipelineError> {
    let pose = frame.pose()?;
    let case = classify_view_case(pose.yaw);
    let bounds = apply_offset(compute_view_volume(pose.block(), case, volume), volume.epsilon_for(case));
    let grid = extract_occupancy(world, bounds, map, table)?;
    if !camera.cull {
        return Ok(grid);
    }
    let k = frame.intrinsics(camera.width, camera.height, camera.vertical_fov)?;
    Ok(frustum_cull(&grid, &frame.extrinsics()?, &k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Extrinsics;
    use crate::grid::{ClassId, VoxelCoord};
    use crate::matching::Template;
    use crate::plan::{decode_plan, BlockResolver, BuildCommand};
    use nalgebra::Matrix3;

    fn table() -> Arc<ClassTable> {
        Arc::new(ClassTable::canonical())
    }

    fn id(n: &str) -> ClassId {
        ClassTable::canonical().id_of(n).unwrap()
    }

    fn v(x: i32, y: i32, z: i32) -> VoxelCoord {
        VoxelCoord::new(x, y, z)
    }

    #[test]
    fn config_layers() {
        let cfg = PipelineConfig::from_toml("[centers]\ntau = 0.5\n[plan.blocks]\nwall = \"minecraft:stone\"\n").unwrap();
        assert_eq!(cfg.centers.tau, 0.5);
        assert_eq!(cfg.centers.k, 3);
        assert_eq!(cfg.plan.blocks["wall"], "minecraft:stone");
        assert_eq!(cfg.plan.blocks["floor"], "minecraft:oak_planks");
        assert!(PipelineConfig::from_toml("[centers]\nk = 4\n").is_err());
        assert!(PipelineConfig::from_toml("[centers]\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml("[matching]\nrotations = [45]\n").is_err());
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    fn sofa_scene() -> (SemanticGrid, TemplateLibrary) {
        let mut g = SemanticGrid::new(v(0, 0, 0), [12, 4, 12], table()).unwrap();
        for x in 0..12 {
            for z in 0..12 {
                g.set(v(x, 0, z), id("floor"));
            }
        }
        let shape = vec![v(0, 0, 0), v(1, 0, 0), v(2, 0, 0), v(0, 1, 0)];
        for p in &shape {
            g.set(*p + v(4, 1, 5), id("sofa"));
        }
        let recipe = shape.iter().map(|&p| (p, "minecraft:green_wool".to_string())).collect();
        let lib = TemplateLibrary::new(vec![Template::new("sofa", id("sofa"), shape, recipe).unwrap()]);
        (g, lib)
    }

    #[test]
    fn single_view_sofa_scene() {
        let (g, lib) = sofa_scene();
        let obs = vec![ViewObservation::new(g.clone(), Extrinsics::identity())];
        let out = reconstruct_scene(&obs, None, &lib, &PipelineConfig::default()).unwrap();
        assert_eq!(out.plan.bounds, g.bounds());
        assert_eq!(out.report.template_instances, 1);
        let sofa = out.centers.centers.iter().position(|c| c.class == id("sofa")).unwrap();
        let InstanceMatch::Template(m) = out.matches[sofa] else { panic!("expected a template match") };
        assert_eq!((m.rotation, m.iou, m.placement), (0, 1.0, v(4, 1, 5)));
        let blocks = crate::plan::default_block_table();
        let t = ClassTable::canonical();
        let r = BlockResolver::new(&blocks, None, &t);
        let back = decode_plan(&out.plan, |b| r.class_of(b), table()).unwrap();
        assert_eq!(back.labels(), g.labels());
    }

    #[test]
    fn empty_input_gives_single_clear() {
        let g = SemanticGrid::new(v(0, 0, 0), [5, 5, 5], table()).unwrap();
        let out = reconstruct_scene(&[ViewObservation::new(g, Extrinsics::identity())], None, &TemplateLibrary::default(), &PipelineConfig::default()).unwrap();
        assert!(out.centers.is_empty());
        assert!(matches!(out.plan.commands.as_slice(), [BuildCommand::Clear { .. }]));
    }

    #[test]
    fn overlapping_views_agree_with_single_view() {
        let (g, lib) = sofa_scene();
        // camera-local halves of the scene, carried back by pure translations
        let half = |x0: i32, x1: i32| {
            let mut local = SemanticGrid::new(v(0, 0, 0), [(x1 - x0) as usize, 4, 12], table()).unwrap();
            for p in local.bounds().iter().collect::<Vec<_>>() {
                local.set(p, g.get(p + v(x0, 0, 0)));
            }
            ViewObservation::new(local, Extrinsics::from_parts(Matrix3::identity(), [x0 as f64, 0.0, 0.0]))
        };
        let two = vec![half(0, 8), half(3, 12)];
        let fused = reconstruct_scene(&two, Some(g.bounds()), &lib, &PipelineConfig::default()).unwrap();
        let single = reconstruct_scene(&[ViewObservation::new(g.clone(), Extrinsics::identity())], None, &lib, &PipelineConfig::default()).unwrap();
        assert_eq!(fused.fused.labels(), g.labels());
        assert_eq!(fused.plan, single.plan);
    }

    #[test]
    fn extraction_follows_the_view_volume() {
        let b = Aabb::spanning(v(0, 0, 0), v(31, 31, 31));
        let mut w = WorldMap::filled(b, "minecraft:air");
        w.fill(Aabb::spanning(v(0, 9, 0), v(31, 9, 31)), "minecraft:oak_planks");
        let frame = FrameRecord { frame: "0001.png".into(), pos: [10.5, 10.0, 10.5], yaw_deg: 0.0, pitch_deg: 0.0, fov_deg: 70.0, matrix: None };
        let t = table();
        let mut map = ClassMap::with_objects_default(&t);
        map.insert("minecraft:oak_planks", id("floor"));
        let cam = CameraConfig { cull: false, ..Default::default() };
        let g = extract_frame(&w, &frame, &VolumeSpec::new(4, 4, 4), &cam, &map, t.clone()).unwrap();
        assert_eq!(g.bounds(), Aabb::spanning(v(8, 8, 10), v(11, 11, 13)));
        assert_eq!(g.count_nonempty(), 16);
    }
}
