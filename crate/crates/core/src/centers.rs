//! Object centres: occupancy density, thresholded candidates and per-class
//! DBSCAN clustering down to one centroid per instance.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{ClassId, ClassTable, GridError, SemanticGrid, VoxelCoord, EMPTY};

#[derive(Debug, thiserror::Error)]
pub enum CentersError {
    #[error("kernel size {0} must be odd and positive")]
    InvalidKernel(i64),
    #[error("invalid clustering parameters: {0}")]
    InvalidParams(String),
    #[error("density field dims {field:?} do not match grid dims {grid:?}")]
    DimsMismatch { field: [usize; 3], grid: [usize; 3] },
    #[error("centers.json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 0/1 occupancy, same layout as the source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub dims: [usize; 3],
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

pub fn binarize(grid: &SemanticGrid) -> BinaryGrid {
    BinaryGrid { dims: grid.dims(), cells: grid.labels().iter().map(|&l| l != EMPTY).collect() }
}

/// Mean occupancy over a `k^3` window, stored as integer window counts so
/// every value is an exact `count / k^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub dims: [usize; 3],
    pub k: usize,
    counts: Vec<u32>,
}

impl DensityField {
    pub fn count(&self, idx: usize) -> u32 {
        self.counts[idx]
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.counts[idx] as f64 / (self.k * self.k * self.k) as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.counts.len()).map(|i| self.value(i))
    }
}

/// Zero-padded box filter via a 3D summed-area table.
pub fn density_map(binary: &BinaryGrid, k: i64) -> Result<DensityField, CentersError> {
    if k < 1 || k % 2 == 0 {
        return Err(CentersError::InvalidKernel(k));
    }
    let k = k as usize;
    let [nx, ny, nz] = binary.dims;
    let r = (k / 2) as isize;
    // prefix sums with a one-cell zero border on the low side
    let (px, py) = (nx + 1, ny + 1);
    let mut sat = vec![0u32; px * py * (nz + 1)];
    let at = |x: usize, y: usize, z: usize| x + px * (y + py * z);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = binary.cells[x + nx * (y + ny * z)] as u32;
                sat[at(x + 1, y + 1, z + 1)] = v + sat[at(x, y + 1, z + 1)] + sat[at(x + 1, y, z + 1)]
                    + sat[at(x + 1, y + 1, z)]
                    + sat[at(x, y, z)]
                    - sat[at(x, y, z + 1)]
                    - sat[at(x, y + 1, z)]
                    - sat[at(x + 1, y, z)];
            }
        }
    }
    let clamp = |c: isize, n: usize| c.clamp(0, n as isize) as usize;
    let counts: Vec<u32> = (0..nx * ny * nz)
        .into_par_iter()
        .map(|i| {
            let (x, y, z) = ((i % nx) as isize, ((i / nx) % ny) as isize, (i / (nx * ny)) as isize);
            let (x0, x1) = (clamp(x - r, nx), clamp(x + r + 1, nx));
            let (y0, y1) = (clamp(y - r, ny), clamp(y + r + 1, ny));
            let (z0, z1) = (clamp(z - r, nz), clamp(z + r + 1, nz));
            // inclusion-exclusion in i64 to keep intermediate terms signed
            let s = |x: usize, y: usize, z: usize| sat[at(x, y, z)] as i64;
            (s(x1, y1, z1) - s(x0, y1, z1) - s(x1, y0, z1) - s(x1, y1, z0) + s(x0, y0, z1) + s(x0, y1, z0)
                + s(x1, y0, z0)
                - s(x0, y0, z0)) as u32
        })
        .collect();
    Ok(DensityField { dims: binary.dims, k, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Candidate {
    pub pos: VoxelCoord,
    pub class: ClassId,
}

/// Occupied voxels whose density reaches `tau`, in grid index order.
pub fn extract_candidates(grid: &SemanticGrid, density: &DensityField, tau: f64) -> Result<Vec<Candidate>, CentersError> {
    if density.dims != grid.dims() {
        return Err(CentersError::DimsMismatch { field: density.dims, grid: grid.dims() });
    }
    Ok(grid
        .labels()
        .iter()
        .enumerate()
        .filter(|&(i, &l)| l != EMPTY && density.value(i) >= tau)
        .map(|(i, &l)| Candidate { pos: grid.coord_of(i), class: l })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Clustering {
    /// Member indices, ascending; clusters ordered by their first member.
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

fn within(a: &[f64; 3], b: &[f64; 3], eta2: f64) -> bool {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz <= eta2
}

/// DBSCAN with inclusive radius and self-counting `min_pts`.
///
/// Core points are joined into clusters by breadth-first search. A border
/// point (non-core with a core neighbour) joins the cluster of its
/// lowest-index core neighbour, which makes the partition independent of
/// visiting order.
pub fn dbscan(points: &[[f64; 3]], eta: f64, min_pts: usize) -> Result<Clustering, CentersError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(CentersError::InvalidParams(format!("eta must be positive, got {eta}")));
    }
    if min_pts < 1 {
        return Err(CentersError::InvalidParams("min_pts must be at least 1".into()));
    }
    let eta2 = eta * eta;
    // cells a hair wider than eta so rounding in the division can never put
    // two neighbours more than one cell apart
    let size = eta * (1.0 + 1e-9);
    let cell = |p: &[f64; 3]| -> (i64, i64, i64) {
        ((p[0] / size).floor() as i64, (p[1] / size).floor() as i64, (p[2] / size).floor() as i64)
    };
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets.entry(cell(p)).or_default().push(i);
    }
    let neighbours: Vec<Vec<usize>> = points
        .iter()
        .map(|p| {
            let (cx, cy, cz) = cell(p);
            let mut out = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(b) = buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                            out.extend(b.iter().copied().filter(|&j| within(p, &points[j], eta2)));
                        }
                    }
                }
            }
            out.sort_unstable();
            out
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|n| n.len() >= min_pts).collect();

    const NONE: usize = usize::MAX;
    let mut label = vec![NONE; points.len()];
    let mut n_clusters = 0;
    for start in 0..points.len() {
        if !core[start] || label[start] != NONE {
            continue;
        }
        label[start] = n_clusters;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighbours[i] {
                if core[j] && label[j] == NONE {
                    label[j] = n_clusters;
                    queue.push_back(j);
                }
            }
        }
        n_clusters += 1;
    }
    let mut out = Clustering { clusters: vec![Vec::new(); n_clusters], noise: Vec::new() };
    for i in 0..points.len() {
        let c = if core[i] {
            label[i]
        } else {
            match neighbours[i].iter().find(|&&j| core[j]) {
                Some(&j) => label[j],
                None => NONE,
            }
        };
        if c == NONE {
            out.noise.push(i);
        } else {
            out.clusters[c].push(i);
        }
    }
    // BFS numbers clusters by their lowest core point; a border point can
    // precede it, so reorder by first member
    out.clusters.sort_by_key(|c| c[0]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CenterParams {
    pub k: i64,
    pub tau: f64,
    pub eta: f64,
    pub min_pts: usize,
}

impl Default for CenterParams {
    fn default() -> Self {
        CenterParams { k: 3, tau: 0.2, eta: 2.0, min_pts: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Center {
    pub id: u32,
    pub class: ClassId,
    /// Mean of member voxel coordinates.
    pub pos: [f64; 3],
    pub members: usize,
    /// Member voxels when the centre came from clustering; absent for
    /// hand-placed or loaded centres.
    pub member_voxels: Option<Vec<VoxelCoord>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CenterDiagnostics {
    pub candidates: usize,
    pub noise: usize,
    pub clusters_per_class: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    pub centers: Vec<Center>,
    pub params: CenterParams,
    pub diagnostics: CenterDiagnostics,
}

impl CenterSet {
    pub fn new(centers: Vec<Center>, params: CenterParams) -> Self {
        CenterSet { centers, params, diagnostics: CenterDiagnostics::default() }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn next_id(&self) -> u32 {
        self.centers.iter().map(|c| c.id + 1).max().unwrap_or(0)
    }

    pub fn to_json(&self, table: &ClassTable) -> String {
        let rows: Vec<CenterRow> = self
            .centers
            .iter()
            .map(|c| CenterRow {
                id: c.id,
                class: table.name(c.class).unwrap_or("objects").to_string(),
                pos: c.pos,
                members: c.members,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("centers serialize")
    }

    pub fn from_json(text: &str, table: &ClassTable, params: CenterParams) -> Result<Self, CentersError> {
        let rows: Vec<CenterRow> = serde_json::from_str(text)?;
        let centers = rows
            .into_iter()
            .map(|r| {
                Ok(Center {
                    id: r.id,
                    class: table.resolve(&r.class)?,
                    pos: r.pos,
                    members: r.members.max(1),
                    member_voxels: None,
                })
            })
            .collect::<Result<Vec<_>, GridError>>()?;
        Ok(CenterSet::new(centers, params))
    }

    pub fn load(path: impl AsRef<Path>, table: &ClassTable, params: CenterParams) -> Result<Self, CentersError> {
        Self::from_json(&std::fs::read_to_string(path)?, table, params)
    }
}

/// One row of centers.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterRow {
    pub id: u32,
    pub class: String,
    pub pos: [f64; 3],
    #[serde(default = "one")]
    pub members: usize,
}

fn one() -> usize {
    1
}

fn mean(points: &[VoxelCoord]) -> [f64; 3] {
    // integer sums are exact, so the only rounding is the final division
    let n = points.len() as f64;
    let s = points.iter().fold([0i64; 3], |a, p| [a[0] + p.x as i64, a[1] + p.y as i64, a[2] + p.z as i64]);
    [s[0] as f64 / n, s[1] as f64 / n, s[2] as f64 / n]
}

/// Clusters each class separately and returns one centre per cluster, ordered
/// by class id and then by cluster order. Noise is counted, not kept.
pub fn cluster_centroids(
    candidates: &[Candidate],
    params: &CenterParams,
    table: &ClassTable,
) -> Result<CenterSet, CentersError> {
    let mut by_class: Vec<(ClassId, Vec<VoxelCoord>)> = Vec::new();
    {
        let mut map: HashMap<ClassId, Vec<VoxelCoord>> = HashMap::new();
        for c in candidates {
            map.entry(c.class).or_default().push(c.pos);
        }
        by_class.extend(map);
        by_class.sort_by_key(|(c, _)| *c);
    }
    let per_class: Vec<(ClassId, Vec<Vec<VoxelCoord>>, usize)> = by_class
        .par_iter()
        .map(|(class, pts)| {
            let fpts: Vec<[f64; 3]> = pts.iter().map(|p| p.as_f64()).collect();
            let cl = dbscan(&fpts, params.eta, params.min_pts)?;
            let groups = cl.clusters.iter().map(|m| m.iter().map(|&i| pts[i]).collect()).collect();
            Ok((*class, groups, cl.noise.len()))
        })
        .collect::<Result<_, CentersError>>()?;

    let mut set = CenterSet::new(Vec::new(), *params);
    set.diagnostics.candidates = candidates.len();
    for (class, groups, noise) in per_class {
        set.diagnostics.noise += noise;
        set.diagnostics
            .clusters_per_class
            .push((table.name(class).unwrap_or("?").to_string(), groups.len()));
        for members in groups {
            set.centers.push(Center {
                id: set.centers.len() as u32,
                class,
                pos: mean(&members),
                members: members.len(),
                member_voxels: Some(members),
            });
        }
    }
    Ok(set)
}

/// Binarize, density, threshold and cluster in one call.
pub fn extract_centers(grid: &SemanticGrid, params: &CenterParams) -> Result<CenterSet, CentersError> {
    if !(0.0..=f64::INFINITY).contains(&params.tau) {
        return Err(CentersError::InvalidParams(format!("tau must be non-negative, got {}", params.tau)));
    }
    let density = density_map(&binarize(grid), params.k)?;
    let cands = extract_candidates(grid, &density, params.tau)?;
    cluster_centroids(&cands, params, grid.classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn table() -> Arc<ClassTable> {
        Arc::new(ClassTable::canonical())
    }

    fn id(n: &str) -> ClassId {
        ClassTable::canonical().id_of(n).unwrap()
    }

    fn grid(dims: [usize; 3]) -> SemanticGrid {
        SemanticGrid::new(VoxelCoord::ZERO, dims, table()).unwrap()
    }

    #[test]
    fn binarize_marks_every_class() {
        let mut g = grid([3, 3, 3]);
        assert_eq!(binarize(&g).count(), 0);
        g.set(VoxelCoord::new(0, 0, 0), id("chair"));
        g.set(VoxelCoord::new(2, 2, 2), id("wall"));
        let b = binarize(&g);
        assert!(b.cells[0] && b.cells[26]);
        assert_eq!(b.count(), g.count_nonempty());
    }

    #[test]
    fn kernel_validation() {
        let b = binarize(&grid([2, 2, 2]));
        for k in [0, -1, 2, 4] {
            assert!(matches!(density_map(&b, k), Err(CentersError::InvalidKernel(_))));
        }
    }

    #[test]
    fn single_voxel_density() {
        let mut g = grid([5, 5, 5]);
        g.set(VoxelCoord::new(2, 2, 2), id("chair"));
        let d = density_map(&binarize(&g), 3).unwrap();
        assert_eq!(d.value(g.index_of(VoxelCoord::new(2, 2, 2)).unwrap()), 1.0 / 27.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(3, 2, 2)).unwrap()), 1.0 / 27.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(3, 3, 3)).unwrap()), 1.0 / 27.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(4, 2, 2)).unwrap()), 0.0);
        let k1 = density_map(&binarize(&g), 1).unwrap();
        assert!(k1.values().zip(binarize(&g).cells).all(|(v, c)| v == c as u8 as f64));
    }

    #[test]
    fn full_block_density() {
        let g = grid([5, 5, 5]).map_labels(|_, _| id("wall"));
        let d = density_map(&binarize(&g), 3).unwrap();
        assert_eq!(d.value(g.index_of(VoxelCoord::new(2, 2, 2)).unwrap()), 1.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(1, 3, 2)).unwrap()), 1.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(0, 0, 0)).unwrap()), 8.0 / 27.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(4, 0, 4)).unwrap()), 8.0 / 27.0);
        assert_eq!(d.value(g.index_of(VoxelCoord::new(0, 2, 2)).unwrap()), 18.0 / 27.0);
    }

    #[test]
    fn threshold_edges() {
        let mut g = grid([4, 4, 4]);
        g.set(VoxelCoord::new(1, 1, 1), id("bed"));
        g.set(VoxelCoord::new(3, 3, 3), id("bed"));
        let d = density_map(&binarize(&g), 3).unwrap();
        assert_eq!(extract_candidates(&g, &d, 0.0).unwrap().len(), 2);
        assert!(extract_candidates(&g, &d, 1.01).unwrap().is_empty());
    }

    #[test]
    fn dbscan_examples() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        let c = dbscan(&pts, 2.0, 1).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1], vec![2]]);
        assert!(c.noise.is_empty());
        let c = dbscan(&[[3.0, 4.0, 5.0]], 0.1, 1).unwrap();
        assert_eq!(c.clusters, vec![vec![0]]);
        let c = dbscan(&pts, 2.0, 3).unwrap();
        assert!(c.clusters.is_empty());
        assert_eq!(c.noise, vec![0, 1, 2]);
        assert!(dbscan(&pts, 0.0, 1).is_err());
        assert!(dbscan(&pts, 1.0, 0).is_err());
    }

    #[test]
    fn border_joins_lowest_core_neighbour() {
        // point 4 sits between two dense groups and is core in neither
        let xs = [-1.0, -0.5, -0.25, 0.0, 2.0, 4.0, 4.25, 4.5, 5.0];
        let pts: Vec<[f64; 3]> = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
        let c = dbscan(&pts, 2.0, 4).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8]]);
        assert!(c.noise.is_empty());
        let c = dbscan(&pts, 1.5, 4).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1, 2, 3], vec![5, 6, 7, 8]]);
        assert_eq!(c.noise, vec![4]);
    }

    #[test]
    fn per_class_centroids() {
        let cands = [
            Candidate { pos: VoxelCoord::new(0, 0, 0), class: id("chair") },
            Candidate { pos: VoxelCoord::new(1, 0, 0), class: id("chair") },
            Candidate { pos: VoxelCoord::new(0, 0, 0), class: id("table") },
        ];
        let set = cluster_centroids(&cands, &CenterParams::default(), &ClassTable::canonical()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!((set.centers[0].class, set.centers[0].pos), (id("chair"), [0.5, 0.0, 0.0]));
        assert_eq!((set.centers[1].class, set.centers[1].pos), (id("table"), [0.0, 0.0, 0.0]));
        assert!(cluster_centroids(&[], &CenterParams::default(), &ClassTable::canonical()).unwrap().is_empty());
    }

    #[test]
    fn chain_has_one_mean_centre() {
        let cands: Vec<_> = (0..7).map(|i| Candidate { pos: VoxelCoord::new(i * 2, 1, i % 2), class: id("sofa") }).collect();
        let set = cluster_centroids(&cands, &CenterParams { eta: 2.5, ..Default::default() }, &ClassTable::canonical()).unwrap();
        assert_eq!(set.len(), 1);
        let n = cands.len() as f64;
        let oracle = [
            cands.iter().map(|c| c.pos.x as f64).sum::<f64>() / n,
            cands.iter().map(|c| c.pos.y as f64).sum::<f64>() / n,
            cands.iter().map(|c| c.pos.z as f64).sum::<f64>() / n,
        ];
        assert_eq!(set.centers[0].pos, oracle);
    }

    #[test]
    fn json_round_trip() {
        let t = ClassTable::canonical();
        let set = CenterSet::new(
            vec![Center { id: 3, class: id("bed"), pos: [1.5, 2.0, -3.25], members: 4, member_voxels: None }],
            CenterParams::default(),
        );
        let text = set.to_json(&t);
        assert!(text.contains("\"class\": \"bed\""));
        let back = CenterSet::from_json(&text, &t, CenterParams::default()).unwrap();
        assert_eq!(back, set);
    }

    fn random_grid() -> impl Strategy<Value = SemanticGrid> {
        (1usize..7, 1usize..7, 1usize..7)
            .prop_flat_map(|(x, y, z)| (Just([x, y, z]), prop::collection::vec(0u16..4, x * y * z)))
            .prop_map(|(dims, labels)| {
                let labels = labels.into_iter().map(|l| if l == 3 { id("chair") } else { l }).collect();
                SemanticGrid::from_labels(VoxelCoord::new(-2, 0, 5), dims, labels, table()).unwrap()
            })
    }

    proptest! {
        #[test]
        fn density_bounded_and_monotone(g in random_grid(), k in prop::sample::select(vec![1i64, 3, 5]), pick in any::<prop::sample::Index>()) {
            let b = binarize(&g);
            let d = density_map(&b, k).unwrap();
            prop_assert!(d.values().all(|v| (0.0..=1.0).contains(&v)));
            let mut more = b.clone();
            let i = pick.index(more.cells.len());
            more.cells[i] = true;
            let d2 = density_map(&more, k).unwrap();
            prop_assert!((0..b.cells.len()).all(|i| d2.value(i) >= d.value(i)));
        }

        #[test]
        fn thresholds_nest(g in random_grid(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let d = density_map(&binarize(&g), 3).unwrap();
            let a: std::collections::HashSet<_> = extract_candidates(&g, &d, lo).unwrap().into_iter().collect();
            let b = extract_candidates(&g, &d, hi).unwrap();
            prop_assert!(b.iter().all(|c| a.contains(c)));
        }

        #[test]
        fn centres_are_pure_and_translate(g in random_grid(), tx in -20i32..20, ty in -20i32..20, tz in -20i32..20, min_pts in 1usize..4) {
            let params = CenterParams { min_pts, ..Default::default() };
            let d = density_map(&binarize(&g), params.k).unwrap();
            let cands = extract_candidates(&g, &d, params.tau).unwrap();
            let t = ClassTable::canonical();
            let set = cluster_centroids(&cands, &params, &t).unwrap();
            let by_pos: HashMap<VoxelCoord, ClassId> = cands.iter().map(|c| (c.pos, c.class)).collect();
            for c in &set.centers {
                prop_assert!(c.members >= 1);
                prop_assert!(c.member_voxels.as_ref().unwrap().iter().all(|v| by_pos[v] == c.class));
            }
            let shift = VoxelCoord::new(tx, ty, tz);
            let moved: Vec<_> = cands.iter().map(|c| Candidate { pos: c.pos + shift, class: c.class }).collect();
            let set2 = cluster_centroids(&moved, &params, &t).unwrap();
            prop_assert_eq!(set.len(), set2.len());
            for (a, b) in set.centers.iter().zip(&set2.centers) {
                prop_assert_eq!(a.members, b.members);
                for ax in 0..3 {
                    prop_assert!((b.pos[ax] - a.pos[ax] - shift.to_array()[ax] as f64).abs() < 1e-9);
                }
            }
        }
    }
}
