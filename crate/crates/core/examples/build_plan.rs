//! Emit a build plan for a walled room, render it, and decode it back.
use std::sync::Arc;

use occucraft::centers::{extract_centers, CenterParams};
use occucraft::grid::{Aabb, ClassTable, SemanticGrid, VoxelCoord};
use occucraft::matching::{match_instances, MatchConfig, TemplateLibrary};
use occucraft::plan::{decode_plan, emit_plan, render_text, BlockResolver, Dialect, PlanConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Arc::new(ClassTable::canonical());
    let bounds = Aabb::spanning(VoxelCoord::new(0, 63, 0), VoxelCoord::new(9, 67, 9));
    let mut g = SemanticGrid::over(bounds, table.clone());
    let (floor, wall, tv) = (table.id_of("floor").unwrap(), table.id_of("wall").unwrap(), table.id_of("tvs").unwrap());
    for v in bounds.iter() {
        if v.y == 63 {
            g.set(v, floor);
        } else if v.x == 0 || v.x == 9 || v.z == 0 || v.z == 9 {
            g.set(v, wall);
        }
    }
    g.set(VoxelCoord::new(4, 65, 8), tv);
    g.set(VoxelCoord::new(5, 65, 8), tv);

    let config = PlanConfig::default();
    let library = TemplateLibrary::new(Vec::new());
    let centers = extract_centers(&g, &CenterParams::default())?;
    let matches = match_instances(&g, &centers, &library, &MatchConfig::default())?;
    let (plan, diag) = emit_plan(&g, &centers, &matches, &library, &config)?;
    println!("{} voxels -> {} commands ({} fills, {} setblocks)", g.count_nonempty(), plan.commands.len(), diag.fills, diag.setblocks);
    print!("{}", render_text(&plan, Dialect::Vanilla));

    let resolver = BlockResolver::new(&config.blocks, None, &table);
    let back = decode_plan(&plan, |b| resolver.class_of(b), table.clone())?;
    println!("round trip exact: {}", back.labels() == g.labels());
    Ok(())
}
