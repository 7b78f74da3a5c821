//! Plant a rotated template and recover it by exhaustive IoU search.
use std::sync::Arc;

use occucraft::centers::{extract_centers, CenterParams};
use occucraft::grid::{ClassTable, SemanticGrid, VoxelCoord};
use occucraft::matching::{match_instances, rotate_template, InstanceMatch, MatchConfig, Template, TemplateLibrary};

fn v(x: i32, y: i32, z: i32) -> VoxelCoord {
    VoxelCoord::new(x, y, z)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Arc::new(ClassTable::canonical());
    let sofa = table.id_of("sofa").unwrap();
    let straight = Template::new("straight_sofa", sofa, (0..4).map(|x| v(x, 0, 0)).chain((0..4).map(|x| v(x, 1, 1))).collect(), vec![])?;
    let corner = Template::new(
        "corner_sofa",
        sofa,
        vec![v(0, 0, 0), v(1, 0, 0), v(2, 0, 0), v(0, 0, 1), v(0, 0, 2), v(0, 1, 0), v(1, 1, 0), v(0, 1, 1)],
        vec![],
    )?;
    let library = TemplateLibrary::new(vec![straight, corner.clone()]);

    let mut g = SemanticGrid::new(VoxelCoord::ZERO, [12, 4, 12], table.clone())?;
    let placed = rotate_template(&corner, 270)?;
    for &p in placed.voxels() {
        g.set(p + v(5, 0, 5), sofa);
    }
    let centers = extract_centers(&g, &CenterParams::default())?;
    let matches = match_instances(&g, &centers, &library, &MatchConfig::default())?;
    for (c, m) in centers.centers.iter().zip(&matches) {
        match m {
            InstanceMatch::Template(r) => println!(
                "centre {} -> {} rotated {} at {:?}, IoU {:.3}",
                c.id, library.templates[r.template].name, r.rotation, r.placement, r.iou
            ),
            InstanceMatch::Fallback { voxels, best_iou } => println!("centre {} -> fallback, {} voxels, best {best_iou:?}", c.id, voxels.len()),
        }
    }
    Ok(())
}
