//! The whole reconstruction on the sample scene: fuse, centres, matching, plan.
use std::path::Path;
use std::sync::Arc;

use occucraft::camera::{load_poses, Extrinsics};
use occucraft::fusion::ViewObservation;
use occucraft::grid::ClassTable;
use occucraft::pipeline::{extract_frame, reconstruct_scene, PipelineConfig};
use occucraft::world::WorldMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample");
    let cfg = PipelineConfig::load(dir.join("occucraft.toml"))?;
    let table = Arc::new(ClassTable::canonical());
    let world = WorldMap::load(dir.join("world.json"))?;
    let map = cfg.class_map(&table)?;
    let mut views = Vec::new();
    for frame in load_poses(dir.join("poses.json"))? {
        // views are cut straight from the world, so they are already in world coordinates
        let g = extract_frame(&world, &frame, &cfg.volume, &cfg.camera, &map, table.clone())?;
        views.push(ViewObservation::new(g, Extrinsics::identity()));
    }
    let out = reconstruct_scene(&views, None, &cfg.library(&table)?, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&out.report)?);
    Ok(())
}
