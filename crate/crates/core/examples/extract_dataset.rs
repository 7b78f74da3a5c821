//! Extract labelled view volumes from the bundled sample world.
use std::path::Path;
use std::sync::Arc;

use occucraft::camera::load_poses;
use occucraft::grid::ClassTable;
use occucraft::pipeline::{extract_frame, PipelineConfig};
use occucraft::world::WorldMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample");
    let mut cfg = PipelineConfig::load(dir.join("occucraft.toml"))?;
    cfg.camera.cull = true;
    let table = Arc::new(ClassTable::canonical());
    let world = WorldMap::load(dir.join("world.json"))?;
    let map = cfg.class_map(&table)?;
    for frame in load_poses(dir.join("poses.json"))? {
        let g = extract_frame(&world, &frame, &cfg.volume, &cfg.camera, &map, table.clone())?;
        let counts: Vec<String> = g
            .class_counts()
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &n)| n > 0)
            .map(|(c, n)| format!("{}={n}", table.names()[c]))
            .collect();
        println!("{} box {:?} {}", frame.stem(), g.bounds(), counts.join(" "));
    }
    Ok(())
}
