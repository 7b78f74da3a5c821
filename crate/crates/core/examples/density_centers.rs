//! Density map, candidates and DBSCAN centres on a grid with two chairs and
//! some scattered noise.
use std::sync::Arc;

use occucraft::centers::{binarize, density_map, extract_candidates, extract_centers, CenterParams};
use occucraft::grid::{ClassTable, SemanticGrid, VoxelCoord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = Arc::new(ClassTable::canonical());
    let chair = table.id_of("chair").unwrap();
    let objects = table.id_of("objects").unwrap();
    let mut g = SemanticGrid::new(VoxelCoord::ZERO, [16, 6, 16], table.clone())?;
    for base in [VoxelCoord::new(2, 0, 2), VoxelCoord::new(10, 0, 9)] {
        for d in [[0, 0, 0], [1, 0, 0], [0, 0, 1], [1, 0, 1], [0, 1, 0], [0, 2, 0], [1, 1, 0], [1, 2, 0]] {
            g.set(base + VoxelCoord::new(d[0], d[1], d[2]), chair);
        }
    }
    for p in [[7, 4, 13], [14, 5, 1], [0, 3, 15]] {
        g.set(VoxelCoord::new(p[0], p[1], p[2]), objects);
    }

    let params = CenterParams::default();
    let density = density_map(&binarize(&g), params.k)?;
    let cands = extract_candidates(&g, &density, params.tau)?;
    println!("{} occupied, {} candidates at k={} tau={}", g.count_nonempty(), cands.len(), params.k, params.tau);
    let set = extract_centers(&g, &params)?;
    println!("{}", set.to_json(&table));
    println!("noise {}", set.diagnostics.noise);
    Ok(())
}
