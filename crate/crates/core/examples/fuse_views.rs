//! Render two camera-local views of a small scene and fuse them back into
//! world coordinates.
use std::sync::Arc;

use occucraft::camera::{Extrinsics, Pose};
use occucraft::fusion::{fuse_views, tied_voxels, world_bounds, ViewObservation};
use occucraft::grid::{Aabb, ClassTable, SemanticGrid, VoxelCoord};

fn scene(table: Arc<ClassTable>) -> SemanticGrid {
    let bounds = Aabb::spanning(VoxelCoord::new(-4, 0, -4), VoxelCoord::new(4, 4, 4));
    let mut g = SemanticGrid::over(bounds, table.clone());
    let floor = table.id_of("floor").unwrap();
    let table_id = table.id_of("table").unwrap();
    for v in Aabb::spanning(VoxelCoord::new(-4, 0, -4), VoxelCoord::new(4, 0, 4)).iter() {
        g.set(v, floor);
    }
    for v in Aabb::spanning(VoxelCoord::new(-1, 1, 0), VoxelCoord::new(1, 1, 1)).iter() {
        g.set(v, table_id);
    }
    g
}

/// Labels of a camera-local box, looked up in the world through the extrinsics.
fn render(world: &SemanticGrid, ext: &Extrinsics, local: Aabb) -> SemanticGrid {
    let mut g = SemanticGrid::over(local, world.classes().clone());
    for c in local.iter() {
        let p = ext.camera_to_world(c.center());
        g.set(c, world.get(VoxelCoord::floor(p)));
    }
    g
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Arc::new(ClassTable::canonical());
    let world = scene(table);
    let local = Aabb::spanning(VoxelCoord::new(-5, -5, 0), VoxelCoord::new(5, 5, 10));
    let views: Vec<ViewObservation> = [(0.0, [0.0, 2.0, -5.0]), (180.0, [0.0, 2.0, 5.0])]
        .into_iter()
        .map(|(yaw, pos)| {
            let ext = Extrinsics::from_pose(&Pose::from_degrees(pos, yaw, 0.0).unwrap());
            ViewObservation::new(render(&world, &ext, local), ext)
        })
        .collect();
    let bounds = world_bounds(&views).unwrap();
    let fused = fuse_views(&views, bounds)?;
    let matches = world.bounds().iter().filter(|&v| fused.get(v) == world.get(v)).count();
    println!("fused bounds {bounds:?}");
    println!("{matches}/{} scene voxels recovered, {} ties", world.len(), tied_voxels(&views, bounds).len());
    Ok(())
}
