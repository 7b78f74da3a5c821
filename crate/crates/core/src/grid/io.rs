//! Grid file formats: the `VXG1` binary layout and sparse `occ.json`.
//!
//! `VXG1` (all integers little-endian):
//!
//! ```text
//! "VXG1" | u32 X | u32 Y | u32 Z | i32 ox | i32 oy | i32 oz
//!        | u16 class count | (u16 len, utf-8 bytes) * count
//!        | u16 label * X*Y*Z   (x fastest, then y, then z)
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ClassId, ClassTable, GridError, SemanticGrid, VoxelCoord, EMPTY};

pub const VXG_MAGIC: [u8; 4] = *b"VXG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Binary,
    OccJson,
}

impl GridFormat {
    /// `.json` means occ.json, anything else the binary layout.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => GridFormat::OccJson,
            _ => GridFormat::Binary,
        }
    }
}

pub fn encode_vxg(grid: &SemanticGrid) -> Vec<u8> {
    let classes = grid.classes();
    let mut out = Vec::with_capacity(32 + grid.len() * 2);
    out.extend_from_slice(&VXG_MAGIC);
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for c in grid.origin().to_array() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&(classes.len() as u16).to_le_bytes());
    for name in classes.names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for &l in grid.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridError> {
        if self.buf.len() - self.pos < n {
            return Err(GridError::Format(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, GridError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, GridError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, GridError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_vxg(bytes: &[u8]) -> Result<SemanticGrid, GridError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| GridError::Format("missing magic".into()))?;
    if magic != VXG_MAGIC {
        if &magic[..3] == b"VXG" {
            return Err(GridError::UnknownVersion(String::from_utf8_lossy(magic).into_owned()));
        }
        return Err(GridError::Format(format!("bad magic {magic:02x?}")));
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let origin = VoxelCoord::new(r.i32()?, r.i32()?, r.i32()?);
    let count = r.u16()? as usize;
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let raw = r.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| GridError::Format(format!("class name is not utf-8: {e}")))?;
        names.push(name.to_string());
    }
    let classes = Arc::new(ClassTable::new(names)?);
    let payload = &bytes[r.pos..];
    if !payload.len().is_multiple_of(2) {
        return Err(GridError::Format("label payload has an odd byte count".into()));
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| GridError::Format(format!("dims {dims:?} overflow")))?;
    if payload.len() / 2 != expected {
        return Err(GridError::DimensionMismatch { expected, actual: payload.len() / 2 });
    }
    let labels = payload.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    SemanticGrid::from_labels(origin, dims, labels, classes)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
struct OccJsonIn {
    dims: [usize; 3],
    #[serde(default)]
    origin: [i32; 3],
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    voxels: Vec<(i32, i32, i32, ClassRef)>,
}

#[derive(Debug, Serialize)]
struct OccJsonOut<'a> {
    dims: [usize; 3],
    origin: [i32; 3],
    classes: &'a [String],
    voxels: Vec<(i32, i32, i32, &'a str)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<usize>,
}

/// Parses sparse occ.json. Voxel coordinates are world coordinates
/// (`origin + local index`); omitted voxels are empty. A missing class
/// list means the canonical table.
pub fn from_occ_json(text: &str) -> Result<SemanticGrid, GridError> {
    let doc: OccJsonIn = serde_json::from_str(text).map_err(|e| GridError::Format(e.to_string()))?;
    let classes = Arc::new(match doc.classes {
        Some(names) => ClassTable::new(names)?,
        None => ClassTable::canonical(),
    });
    let mut grid = SemanticGrid::new(doc.origin.into(), doc.dims, classes.clone())?;
    for (x, y, z, class) in doc.voxels {
        let id: ClassId = match class {
            ClassRef::Index(i) if i < classes.len() => i as ClassId,
            ClassRef::Index(i) => return Err(GridError::TargetIdOutOfRange { id: i, len: classes.len() }),
            ClassRef::Name(n) => classes.resolve(&n)?,
        };
        let v = VoxelCoord::new(x, y, z);
        if !grid.set(v, id) {
            return Err(GridError::Format(format!("voxel ({v}) lies outside dims {:?}", doc.dims)));
        }
    }
    Ok(grid)
}

pub fn to_occ_json(grid: &SemanticGrid) -> String {
    to_occ_json_strided(grid, 1)
}

/// Sparse occ.json keeping only voxels whose local coordinates are all
/// multiples of `stride`.
pub fn to_occ_json_strided(grid: &SemanticGrid, stride: usize) -> String {
    let stride = stride.max(1);
    let names = grid.classes().names();
    let origin = grid.origin();
    let voxels = grid
        .occupied()
        .filter(|(v, _)| {
            let l = *v - origin;
            [l.x, l.y, l.z].iter().all(|&c| (c as usize).is_multiple_of(stride))
        })
        .map(|(v, l)| (v.x, v.y, v.z, names[l as usize].as_str()))
        .collect();
    let doc = OccJsonOut {
        dims: grid.dims(),
        origin: origin.to_array(),
        classes: names,
        voxels,
        stride: (stride > 1).then_some(stride),
    };
    serde_json::to_string(&doc).expect("occ json serializes")
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<SemanticGrid, GridError> {
    let path = path.as_ref();
    load_grid_as(path, GridFormat::from_path(path))
}

pub fn load_grid_as(path: impl AsRef<Path>, format: GridFormat) -> Result<SemanticGrid, GridError> {
    match format {
        GridFormat::Binary => decode_vxg(&std::fs::read(path)?),
        GridFormat::OccJson => from_occ_json(&std::fs::read_to_string(path)?),
    }
}

pub fn save_grid(grid: &SemanticGrid, path: impl AsRef<Path>) -> Result<(), GridError> {
    let path = path.as_ref();
    save_grid_as(grid, path, GridFormat::from_path(path))
}

pub fn save_grid_as(grid: &SemanticGrid, path: impl AsRef<Path>, format: GridFormat) -> Result<(), GridError> {
    let bytes = match format {
        GridFormat::Binary => encode_vxg(grid),
        GridFormat::OccJson => to_occ_json(grid).into_bytes(),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// True when every label is empty.
pub fn is_all_empty(grid: &SemanticGrid) -> bool {
    grid.labels().iter().all(|&l| l == EMPTY)
}
