//! Command-line front end. Usage errors exit 2, runtime errors exit 1; both
//! finish with a single JSON error line on stderr.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{load_poses, FrameRecord};
use crate::centers::{extract_centers, CenterSet};
use crate::fusion::{fuse_views, world_bounds};
use crate::grid::io::{load_grid, save_grid};
use crate::grid::{remap_classes, Aabb, ClassMap, ClassTable, SemanticGrid, VoxelCoord};
use crate::matching::{match_instances, InstanceMatch, TemplateLibrary};
use crate::pipeline::{extract_frame, load_observations, reconstruct_scene, PipelineConfig};
use crate::plan::{apply_patches, emit_plan, render_commands, render_text, BuildPlan, Dialect, Patch};
use crate::rcon::{dispatch_commands, Session};
use crate::world::schematic::save_schematic;
use crate::world::WorldMap;

#[derive(Debug, Parser)]
#[command(name = "occucraft", version, about = "Semantic occupancy grids to voxel-world build plans and back")]
pub struct Cli {
    /// TOML config; defaults to $OCCUCRAFT_CONFIG, then built-in values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Reserved. No stage is randomised, so this has no effect.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse per-view grids into one world-frame grid.
    Fuse(FuseArgs),
    /// Extract object centres from a grid.
    Centers(CentersArgs),
    /// Match the instance around each centre against the template library.
    Match(MatchArgs),
    /// Emit a build plan from a grid and its centres.
    Plan(PlanArgs),
    /// Send a plan to a server over RCON, or print it with --dry-run.
    Apply(ApplyArgs),
    /// Cut one labelled view volume per camera pose out of a world.
    Extract(ExtractArgs),
    /// Relabel a grid through a class map.
    Remap(RemapArgs),
    /// Convert grids, worlds and plans between file formats.
    Convert(ConvertArgs),
    /// Fuse, centres, match and plan in one go.
    Reconstruct(ReconstructArgs),
    /// Run the HTTP service for centre editing.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ViewsArgs {
    /// Per-view grid files, paired with poses in order.
    pub grids: Vec<PathBuf>,
    /// Directory holding `<frame stem>.vxg` or `<frame stem>.json` per pose.
    #[arg(long, conflicts_with = "grids")]
    pub views: Option<PathBuf>,
    #[arg(long)]
    pub poses: PathBuf,
    /// The grids are already in world coordinates (as written by
    /// `extract`); poses only pair frames with files.
    #[arg(long)]
    pub world_frame: bool,
    /// Output box as min then max corner; defaults to the span of all views.
    #[arg(long, num_args = 6, value_names = ["X1", "Y1", "Z1", "X2", "Y2", "Z2"], allow_hyphen_values = true)]
    pub bounds: Option<Vec<i32>>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub views: ViewsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CenterOpts {
    /// Density kernel size (odd).
    #[arg(long)]
    pub k: Option<i64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CentersArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub opts: CenterOpts,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchOpts {
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<i32>,
    #[arg(long)]
    pub min_iou: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub rotations: Option<Vec<u16>>,
    /// Also try one-block shifts around each alignment.
    #[arg(long)]
    pub jitter: bool,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub centers: PathBuf,
    #[command(flatten)]
    pub opts: MatchOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub centers: PathBuf,
    /// Output of `match`; matching runs here when absent.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[command(flatten)]
    pub opts: MatchOpts,
    /// JSON list of `{"pos": [x,y,z], "block": name}`; no block clears.
    #[arg(long)]
    pub patches: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Diagnostics as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Plan file; read from stdin when absent or `-`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Environment variable holding the RCON password.
    #[arg(long)]
    pub password_env: Option<String>,
    /// Commands per second.
    #[arg(long)]
    pub throttle: Option<f64>,
    /// Socket timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Print the rendered commands and send nothing.
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, value_enum, default_value_t = Dialect::Vanilla)]
    pub dialect: Dialect,
    /// Dispatch report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GridExt {
    Vxg,
    Json,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// world.json, .schem or .schematic.
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, num_args = 3, value_names = ["W", "H", "D"])]
    pub dims: Option<Vec<u32>>,
    /// Corner offset; the per-view default applies when absent.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_hyphen_values = true)]
    pub epsilon: Option<Vec<i32>>,
    #[arg(long)]
    pub classmap: Option<PathBuf>,
    /// Keep voxels outside the camera frustum.
    #[arg(long)]
    pub no_cull: bool,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long, value_enum, default_value_t = GridExt::Vxg)]
    pub format: GridExt,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RemapArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    /// JSON list of target class names; the canonical table when absent.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Target format follows the extension: .vxg/.json for grids,
    /// .schem/.json for worlds, .mcfunction/.txt for plan commands.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Dialect::Vanilla)]
    pub dialect: Dialect,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub views: ViewsArgs,
    #[command(flatten)]
    pub centers: CenterOpts,
    #[command(flatten)]
    pub matching: MatchOpts,
    /// Receives fused.vxg, centers.json, matches.json, plan.json and report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of project directories.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: std::net::SocketAddr,
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.kind().as_str().unwrap_or("invalid usage");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg }));
            return ExitCode::from(2);
        }
    };
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": "runtime", "command": name, "message": chain.join(": ") }));
            ExitCode::from(1)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fuse(_) => "fuse",
        Command::Centers(_) => "centers",
        Command::Match(_) => "match",
        Command::Plan(_) => "plan",
        Command::Apply(_) => "apply",
        Command::Extract(_) => "extract",
        Command::Remap(_) => "remap",
        Command::Convert(_) => "convert",
        Command::Reconstruct(_) => "reconstruct",
        Command::Serve(_) => "serve",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(seed) = cli.seed {
        log::debug!("--seed {seed} ignored: no randomised stage");
    }
    let mut cfg = PipelineConfig::discover(cli.config.as_deref()).context("loading config")?;
    match cli.command {
        Command::Fuse(a) => fuse(&cfg, a),
        Command::Centers(a) => {
            override_centers(&mut cfg, &a.opts)?;
            centers(&cfg, a)
        }
        Command::Match(a) => {
            override_matching(&mut cfg, &a.opts)?;
            matching(&cfg, a)
        }
        Command::Plan(a) => {
            override_matching(&mut cfg, &a.opts)?;
            plan(&cfg, a)
        }
        Command::Apply(a) => apply(&cfg, a),
        Command::Extract(a) => extract(&cfg, a),
        Command::Remap(a) => remap(a),
        Command::Convert(a) => convert(a),
        Command::Reconstruct(a) => {
            override_centers(&mut cfg, &a.centers)?;
            override_matching(&mut cfg, &a.matching)?;
            reconstruct(&cfg, a)
        }
        Command::Serve(a) => serve(cfg, a),
    }
}

fn override_centers(cfg: &mut PipelineConfig, o: &CenterOpts) -> Result<()> {
    let c = &mut cfg.centers;
    c.k = o.k.unwrap_or(c.k);
    c.tau = o.tau.unwrap_or(c.tau);
    c.eta = o.eta.unwrap_or(c.eta);
    c.min_pts = o.min_pts.unwrap_or(c.min_pts);
    cfg.validate()?;
    Ok(())
}

fn override_matching(cfg: &mut PipelineConfig, o: &MatchOpts) -> Result<()> {
    let m = &mut cfg.matching;
    m.radius = o.radius.unwrap_or(m.radius);
    m.min_iou = o.min_iou.unwrap_or(m.min_iou);
    if let Some(r) = &o.rotations {
        m.rotations = r.clone();
    }
    m.jitter |= o.jitter;
    if let Some(t) = &o.templates {
        cfg.paths.templates = Some(t.clone());
    }
    cfg.validate()?;
    Ok(())
}

/// Exclusive marker in an output directory, removed on drop. A marker left
/// by a process that no longer exists is taken over.
pub struct DirLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".occucraft.lock";

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(&path).unwrap_or_default();
                    let pid = holder.trim();
                    let alive = pid.parse::<u32>().is_ok() && Path::new("/proc").join(pid).exists();
                    if alive || !Path::new("/proc/self").exists() {
                        bail!("{} is in use by process {pid} (remove {} if stale)", dir.display(), path.display());
                    }
                    let _ = std::fs::remove_file(&path);
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        bail!("could not lock {}", dir.display())
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn lock_for(out: &Path) -> Result<DirLock> {
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    DirLock::acquire(dir)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            let _lock = lock_for(p)?;
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                so.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn grid_at(path: &Path) -> Result<SemanticGrid> {
    load_grid(path).with_context(|| format!("reading grid {}", path.display()))
}

fn poses_at(path: &Path) -> Result<Vec<FrameRecord>> {
    load_poses(path).with_context(|| format!("reading poses {}", path.display()))
}

fn bounds_arg(b: &Option<Vec<i32>>) -> Result<Option<Aabb>> {
    Ok(match b.as_deref() {
        Some([x1, y1, z1, x2, y2, z2]) => {
            Some(Aabb::new(VoxelCoord::new(*x1, *y1, *z1), VoxelCoord::new(*x2, *y2, *z2)).context("--bounds")?)
        }
        Some(_) => bail!("--bounds takes six integers"),
        None => None,
    })
}

fn observations(cfg: &PipelineConfig, v: &ViewsArgs) -> Result<Vec<crate::fusion::ViewObservation>> {
    let poses = poses_at(&v.poses)?;
    let grids: Vec<PathBuf> = match &v.views {
        Some(dir) => poses
            .iter()
            .map(|p| {
                ["vxg", "json"]
                    .iter()
                    .map(|ext| dir.join(format!("{}.{ext}", p.stem())))
                    .find(|f| f.is_file())
                    .ok_or_else(|| anyhow!("no grid for frame {} in {}", p.frame, dir.display()))
            })
            .collect::<Result<_>>()?,
        None => v.grids.clone(),
    };
    if grids.is_empty() {
        bail!("no input grids");
    }
    let mut obs = load_observations(&grids, &poses, &cfg.camera)?;
    if v.world_frame {
        for o in &mut obs {
            o.extrinsics = crate::camera::Extrinsics::identity();
            o.intrinsics = None;
        }
    }
    Ok(obs)
}

fn fuse(cfg: &PipelineConfig, a: FuseArgs) -> Result<()> {
    let obs = observations(cfg, &a.views)?;
    let bounds = match bounds_arg(&a.views.bounds)? {
        Some(b) => b,
        None => world_bounds(&obs).context("fusion stage: no observations")?,
    };
    let fused = fuse_views(&obs, bounds).context("fusion stage")?;
    let _lock = lock_for(&a.out)?;
    save_grid(&fused, &a.out).with_context(|| format!("writing {}", a.out.display()))
}

fn centers(cfg: &PipelineConfig, a: CentersArgs) -> Result<()> {
    let grid = grid_at(&a.input)?;
    let set = extract_centers(&grid, &cfg.centers).context("centers stage")?;
    log::info!("{} centres from {} candidates, {} noise", set.len(), set.diagnostics.candidates, set.diagnostics.noise);
    emit(a.out.as_deref(), &set.to_json(grid.classes()))
}

/// One row of matches.json.
#[derive(Debug, Serialize, Deserialize)]
pub struct MatchRow {
    pub center: u32,
    #[serde(flatten)]
    pub result: InstanceMatch,
}

fn load_centers(cfg: &PipelineConfig, path: &Path, table: &ClassTable) -> Result<CenterSet> {
    CenterSet::load(path, table, cfg.centers).with_context(|| format!("reading centers {}", path.display()))
}

fn library(cfg: &PipelineConfig, table: &ClassTable) -> Result<TemplateLibrary> {
    cfg.library(table).context("reading template library")
}

fn matching(cfg: &PipelineConfig, a: MatchArgs) -> Result<()> {
    let grid = grid_at(&a.input)?;
    let set = load_centers(cfg, &a.centers, grid.classes())?;
    let lib = library(cfg, grid.classes())?;
    let matches = match_instances(&grid, &set, &lib, &cfg.matching).context("match stage")?;
    let rows: Vec<MatchRow> = set.centers.iter().zip(matches).map(|(c, m)| MatchRow { center: c.id, result: m }).collect();
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&rows)? + "\n"))
}

fn plan(cfg: &PipelineConfig, a: PlanArgs) -> Result<()> {
    let grid = grid_at(&a.input)?;
    let set = load_centers(cfg, &a.centers, grid.classes())?;
    let lib = library(cfg, grid.classes())?;
    let matches = match &a.matches {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let rows: Vec<MatchRow> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            // rows are keyed by centre id; reorder to the centre file's order
            let mut by_id: std::collections::HashMap<u32, InstanceMatch> = rows.into_iter().map(|r| (r.center, r.result)).collect();
            set.centers
                .iter()
                .map(|c| by_id.remove(&c.id).ok_or_else(|| anyhow!("{} has no entry for centre {}", p.display(), c.id)))
                .collect::<Result<Vec<_>>>()?
        }
        None => match_instances(&grid, &set, &lib, &cfg.matching).context("match stage")?,
    };
    let (mut plan, diag) = emit_plan(&grid, &set, &matches, &lib, &cfg.plan_config()?).context("plan stage")?;
    if let Some(p) = &a.patches {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let patches: Vec<Patch> = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let dropped = apply_patches(&mut plan, &patches);
        if dropped > 0 {
            log::warn!("{dropped} patches lie outside the plan bounds and were dropped");
        }
    }
    if diag.conflicts > 0 {
        log::warn!("{} voxels written more than once; later writes win", diag.conflicts);
    }
    if let Some(r) = &a.report {
        emit(Some(r), &(serde_json::to_string_pretty(&diag)? + "\n"))?;
    }
    emit(a.out.as_deref(), &plan.to_json())
}

fn read_plan(path: Option<&Path>) -> Result<BuildPlan> {
    let text = match path {
        Some(p) if p != Path::new("-") => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        _ => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).context("reading plan from stdin")?;
            s
        }
    };
    BuildPlan::from_json(&text).context("parsing plan")
}

fn apply(cfg: &PipelineConfig, a: ApplyArgs) -> Result<()> {
    let plan = read_plan(a.plan.as_deref())?;
    if a.dry_run {
        return emit(None, &render_text(&plan, a.dialect));
    }
    let mut rc = cfg.rcon.clone();
    rc.host = a.host.unwrap_or(rc.host);
    rc.port = a.port.unwrap_or(rc.port);
    rc.timeout = a.timeout.unwrap_or(rc.timeout);
    rc.throttle = a.throttle.unwrap_or(rc.throttle);
    rc.password_env = a.password_env.unwrap_or(rc.password_env);
    let endpoint = rc.endpoint();
    let commands = render_commands(&plan, a.dialect);
    let mut session = Session::connect_and_auth(&endpoint).with_context(|| format!("connecting to {}:{}", rc.host, rc.port))?;
    let opts = crate::rcon::DispatchOptions { throttle: rc.throttle, ..Default::default() };
    let total = commands.len();
    let cancel = AtomicBool::new(false);
    let report = dispatch_commands(&mut session, &commands, &opts, &cancel, &mut |r| {
        if r.ok {
            log::debug!("[{}/{total}] {}", r.index + 1, r.command);
        } else {
            log::warn!("[{}/{total}] failed: {} ({})", r.index + 1, r.command, r.error.as_deref().unwrap_or(""));
        }
    })
    .context("dispatch")?;
    if let Some(p) = &a.report {
        emit(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    eprintln!("sent {} of {} commands, {} failed", report.sent(), report.total, report.failed().len());
    if !report.is_success() {
        bail!("{} of {} commands failed{}", report.failed().len(), report.total, if report.aborted { ", aborted" } else { "" });
    }
    Ok(())
}

fn extract(cfg: &PipelineConfig, a: ExtractArgs) -> Result<()> {
    let world = WorldMap::load(&a.world).with_context(|| format!("reading world {}", a.world.display()))?;
    let poses = poses_at(&a.poses)?;
    let mut volume = cfg.volume;
    if let Some(d) = &a.dims {
        if d.contains(&0) {
            bail!("--dims must be positive");
        }
        volume = crate::viewvol::VolumeSpec { w: d[0], h: d[1], d: d[2], epsilon: volume.epsilon };
    }
    if let Some(e) = &a.epsilon {
        volume.epsilon = Some(VoxelCoord::new(e[0], e[1], e[2]));
    }
    let mut camera = cfg.camera.clone();
    camera.cull &= !a.no_cull;
    camera.width = a.width.unwrap_or(camera.width);
    camera.height = a.height.unwrap_or(camera.height);
    let table = Arc::new(ClassTable::canonical());
    let map = match &a.classmap {
        Some(p) => ClassMap::load(p, &table).with_context(|| format!("reading class map {}", p.display()))?,
        None => cfg.class_map(&table)?,
    };
    let _lock = DirLock::acquire(&a.out)?;
    let grids = poses
        .par_iter()
        .map(|f| extract_frame(&world, f, &volume, &camera, &map, table.clone()).with_context(|| format!("frame {}", f.frame)))
        .collect::<Result<Vec<_>>>()?;
    let ext = match a.format {
        GridExt::Vxg => "vxg",
        GridExt::Json => "json",
    };
    for (f, g) in poses.iter().zip(&grids) {
        let path = a.out.join(format!("{}.{ext}", f.stem()));
        save_grid(g, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("wrote {} grids to {}", grids.len(), a.out.display());
    Ok(())
}

fn remap(a: RemapArgs) -> Result<()> {
    let grid = grid_at(&a.input)?;
    let target = Arc::new(match &a.classes {
        Some(p) => {
            let names: Vec<String> = serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
            ClassTable::new(names)?
        }
        None => ClassTable::canonical(),
    });
    let map = ClassMap::load(&a.map, &target).with_context(|| format!("reading class map {}", a.map.display()))?;
    let out = remap_classes(&grid, &map, target)?;
    let _lock = lock_for(&a.out)?;
    save_grid(&out, &a.out).with_context(|| format!("writing {}", a.out.display()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Grid,
    World,
    Plan,
}

fn ext_of(p: &Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

fn sniff(path: &Path) -> Result<Kind> {
    match ext_of(path).as_str() {
        "schem" | "schematic" => return Ok(Kind::World),
        "json" => {}
        _ => return Ok(Kind::Grid),
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if v.get("commands").is_some() {
        Ok(Kind::Plan)
    } else if v.get("voxels").is_some() {
        Ok(Kind::Grid)
    } else if v.get("fills").is_some() || v.get("blocks").is_some() {
        Ok(Kind::World)
    } else {
        bail!("{} is not a grid, world or plan file", path.display())
    }
}

fn convert(a: ConvertArgs) -> Result<()> {
    let kind = sniff(&a.input)?;
    let out_ext = ext_of(&a.out);
    let _lock = lock_for(&a.out)?;
    match kind {
        Kind::Grid => {
            let g = grid_at(&a.input)?;
            save_grid(&g, &a.out)?;
        }
        Kind::World => {
            let w = WorldMap::load(&a.input)?;
            match out_ext.as_str() {
                "schem" | "schematic" => save_schematic(&w, &a.out)?,
                "json" => std::fs::write(&a.out, w.to_json())?,
                other => bail!("cannot write a world as .{other}"),
            }
        }
        Kind::Plan => {
            let plan = BuildPlan::load(&a.input)?;
            match out_ext.as_str() {
                "json" => std::fs::write(&a.out, plan.to_json())?,
                _ => std::fs::write(&a.out, render_text(&plan, a.dialect))?,
            }
        }
    }
    Ok(())
}

fn reconstruct(cfg: &PipelineConfig, a: ReconstructArgs) -> Result<()> {
    let obs = observations(cfg, &a.views)?;
    let table = obs[0].grid.classes().clone();
    let lib = library(cfg, &table)?;
    let out = reconstruct_scene(&obs, bounds_arg(&a.views.bounds)?, &lib, cfg)?;
    let _lock = DirLock::acquire(&a.out_dir)?;
    let dir = &a.out_dir;
    save_grid(&out.fused, dir.join("fused.vxg"))?;
    std::fs::write(dir.join("centers.json"), out.centers.to_json(&table))?;
    let rows: Vec<MatchRow> =
        out.centers.centers.iter().zip(out.matches).map(|(c, m)| MatchRow { center: c.id, result: m }).collect();
    std::fs::write(dir.join("matches.json"), serde_json::to_string_pretty(&rows)? + "\n")?;
    std::fs::write(dir.join("plan.json"), out.plan.to_json())?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&out.report)? + "\n")?;
    Ok(())
}

fn serve(cfg: PipelineConfig, a: ServeArgs) -> Result<()> {
    if !a.root.is_dir() {
        bail!("{} is not a directory", a.root.display());
    }
    let config = crate::service::ServiceConfig::new(a.root, cfg);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::service::serve(config, a.bind)).context("service")
}
