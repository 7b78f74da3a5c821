//! Sponge schematic v2 subset: `Width`, `Height`, `Length`, `Palette` and
//! `BlockData`. `BlockData` holds one unsigned LEB128 varint per block in
//! `x + z * Width + y * Width * Length` order.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;

use super::nbt::{encode_nbt_gzip, parse_nbt, NamedTag, NbtValue};
use super::{WorldError, WorldMap};
use crate::grid::{Aabb, VoxelCoord};

/// Appends the varint encoding of `value`.
pub fn write_varint(out: &mut Vec<u8>, mut value: u32) {
    loop {
        let byte = (value & 0x7f) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Decodes a whole varint stream. Values wider than 32 bits fail.
pub fn read_varints(bytes: &[u8]) -> Result<Vec<u32>, WorldError> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let mut value: u64 = 0;
        let mut shift = 0;
        loop {
            let Some(&b) = bytes.get(i) else {
                return Err(WorldError::VarintOverflow(start));
            };
            i += 1;
            value |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                break;
            }
            shift += 7;
            if shift >= 35 {
                return Err(WorldError::VarintOverflow(start));
            }
        }
        if value > u32::MAX as u64 {
            return Err(WorldError::VarintOverflow(start));
        }
        out.push(value as u32);
    }
    Ok(out)
}

fn field<'a>(root: &'a NbtValue, name: &'static str) -> Result<&'a NbtValue, WorldError> {
    root.get(name).ok_or(WorldError::MissingField(name))
}

fn dimension(root: &NbtValue, name: &'static str) -> Result<usize, WorldError> {
    match field(root, name)? {
        // shorts are stored signed but mean 0..=65535
        NbtValue::Short(s) => Ok(*s as u16 as usize),
        other => match other.as_i64() {
            Some(v) if v > 0 => Ok(v as usize),
            _ => Err(WorldError::MissingField(name)),
        },
    }
}

pub fn world_from_schematic(tag: &NamedTag) -> Result<WorldMap, WorldError> {
    let root = &tag.value;
    let (w, h, l) = (dimension(root, "Width")?, dimension(root, "Height")?, dimension(root, "Length")?);
    if w == 0 || h == 0 || l == 0 {
        return Err(WorldError::MissingField("Width/Height/Length"));
    }
    for ignored in ["Offset", "Metadata", "BlockEntities", "Entities"] {
        if root.get(ignored).is_some() {
            log::warn!("schematic field {ignored} is ignored");
        }
    }
    let palette = field(root, "Palette")?.as_compound().ok_or(WorldError::MissingField("Palette"))?;
    let mut by_index: HashMap<u32, &str> = HashMap::with_capacity(palette.len());
    for (name, idx) in palette {
        let idx = idx.as_i64().filter(|&i| i >= 0).ok_or(WorldError::MissingField("Palette"))?;
        by_index.insert(idx as u32, name.as_str());
    }
    let data = match field(root, "BlockData")? {
        NbtValue::ByteArray(b) => b.iter().map(|&x| x as u8).collect::<Vec<u8>>(),
        _ => return Err(WorldError::MissingField("BlockData")),
    };
    let indices = read_varints(&data)?;
    if indices.len() != w * h * l {
        return Err(WorldError::BlockCountMismatch { expected: w * h * l, actual: indices.len() });
    }
    let bounds = Aabb::from_origin_dims(VoxelCoord::ZERO, [w, h, l]).map_err(WorldError::Grid)?;
    let mut world = WorldMap::filled(bounds, super::AIR);
    let mut remap: HashMap<u32, u32> = HashMap::new();
    for (i, &pidx) in indices.iter().enumerate() {
        let local = match remap.get(&pidx) {
            Some(&p) => p,
            None => {
                let name = by_index
                    .get(&pidx)
                    .ok_or(WorldError::PaletteIndexOutOfRange { index: pidx, len: palette.len() })?;
                let p = world.intern(name);
                remap.insert(pidx, p);
                p
            }
        };
        let (x, z, y) = (i % w, (i / w) % l, i / (w * l));
        world.set_index(x + w * (y + h * z), local);
    }
    Ok(world)
}

pub fn load_schematic(path: impl AsRef<Path>) -> Result<WorldMap, WorldError> {
    let bytes = std::fs::read(path)?;
    world_from_schematic(&parse_nbt(&bytes)?)
}

/// Sponge v2 compound for a world whose extents fit in 16 bits.
pub fn schematic_from_world(world: &WorldMap) -> Result<NamedTag, WorldError> {
    let [w, h, l] = world.bounds().extents();
    if [w, h, l].iter().any(|&d| d > u16::MAX as usize) {
        return Err(WorldError::TooLarge([w, h, l]));
    }
    let mut palette = IndexMap::new();
    for (i, name) in world.palette().iter().enumerate() {
        palette.insert(name.clone(), NbtValue::Int(i as i32));
    }
    let mut data = Vec::with_capacity(w * h * l);
    let min = world.bounds().min();
    for y in 0..h {
        for z in 0..l {
            for x in 0..w {
                let v = min + VoxelCoord::new(x as i32, y as i32, z as i32);
                write_varint(&mut data, world.palette_index(v).expect("inside bounds"));
            }
        }
    }
    let mut root = IndexMap::new();
    root.insert("Version".to_string(), NbtValue::Int(2));
    root.insert("Width".to_string(), NbtValue::Short(w as u16 as i16));
    root.insert("Height".to_string(), NbtValue::Short(h as u16 as i16));
    root.insert("Length".to_string(), NbtValue::Short(l as u16 as i16));
    root.insert("PaletteMax".to_string(), NbtValue::Int(world.palette().len() as i32));
    root.insert("Palette".to_string(), NbtValue::Compound(palette));
    root.insert("BlockData".to_string(), NbtValue::ByteArray(data.into_iter().map(|b| b as i8).collect()));
    Ok(NamedTag::compound("Schematic", root))
}

pub fn save_schematic(world: &WorldMap, path: impl AsRef<Path>) -> Result<(), WorldError> {
    std::fs::write(path, encode_nbt_gzip(&schematic_from_world(world)?))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::nbt::encode_nbt;

    fn schem(w: i16, h: i16, l: i16, palette: &[(&str, i32)], data: Vec<u8>) -> NamedTag {
        let mut p = IndexMap::new();
        for (n, i) in palette {
            p.insert(n.to_string(), NbtValue::Int(*i));
        }
        let mut root = IndexMap::new();
        root.insert("Width".into(), NbtValue::Short(w));
        root.insert("Height".into(), NbtValue::Short(h));
        root.insert("Length".into(), NbtValue::Short(l));
        root.insert("Palette".into(), NbtValue::Compound(p));
        root.insert("BlockData".into(), NbtValue::ByteArray(data.into_iter().map(|b| b as i8).collect()));
        NamedTag::compound("Schematic", root)
    }

    #[test]
    fn single_air_block() {
        let w = world_from_schematic(&schem(1, 1, 1, &[("minecraft:air", 0)], vec![0])).unwrap();
        assert_eq!(w.bounds().volume(), 1);
        assert_eq!(w.query(VoxelCoord::ZERO), "minecraft:air");
    }

    #[test]
    fn two_by_one_by_one() {
        let t = schem(2, 1, 1, &[("minecraft:air", 0), ("minecraft:stone", 1)], vec![1, 0]);
        let w = world_from_schematic(&parse_nbt(&encode_nbt(&t)).unwrap()).unwrap();
        assert_eq!(w.query(VoxelCoord::new(0, 0, 0)), "minecraft:stone");
        assert_eq!(w.query(VoxelCoord::new(1, 0, 0)), "minecraft:air");
    }

    #[test]
    fn axis_order_is_x_then_z_then_y() {
        // 2 wide, 2 high, 2 long; block i gets palette id i
        let palette: Vec<(String, i32)> = (0..8).map(|i| (format!("b{i}"), i)).collect();
        let refs: Vec<(&str, i32)> = palette.iter().map(|(n, i)| (n.as_str(), *i)).collect();
        let w = world_from_schematic(&schem(2, 2, 2, &refs, (0..8).collect())).unwrap();
        assert_eq!(w.query(VoxelCoord::new(1, 0, 0)), "b1");
        assert_eq!(w.query(VoxelCoord::new(0, 0, 1)), "b2");
        assert_eq!(w.query(VoxelCoord::new(0, 1, 0)), "b4");
        assert_eq!(w.query(VoxelCoord::new(1, 1, 1)), "b7");
    }

    #[test]
    fn missing_field_and_bad_index() {
        let mut t = schem(1, 1, 1, &[("minecraft:air", 0)], vec![0]);
        if let NbtValue::Compound(m) = &mut t.value {
            m.shift_remove("Palette");
        }
        assert!(matches!(world_from_schematic(&t), Err(WorldError::MissingField("Palette"))));
        let t = schem(1, 1, 1, &[("minecraft:air", 0)], vec![3]);
        assert!(matches!(world_from_schematic(&t), Err(WorldError::PaletteIndexOutOfRange { index: 3, .. })));
        let t = schem(2, 1, 1, &[("minecraft:air", 0)], vec![0]);
        assert!(matches!(world_from_schematic(&t), Err(WorldError::BlockCountMismatch { .. })));
    }

    #[test]
    fn varint_overflow() {
        assert!(matches!(read_varints(&[0x80]), Err(WorldError::VarintOverflow(0))));
        assert!(matches!(read_varints(&[0xff, 0xff, 0xff, 0xff, 0xff, 0x01]), Err(WorldError::VarintOverflow(0))));
        assert_eq!(read_varints(&[0xff, 0xff, 0xff, 0xff, 0x0f]).unwrap(), vec![u32::MAX]);
    }

    /// Independent reference: textbook LEB128 written byte by byte.
    fn oracle_encode(v: u32) -> Vec<u8> {
        if v < 0x80 {
            vec![v as u8]
        } else if v < 0x4000 {
            vec![(v & 0x7f) as u8 | 0x80, (v >> 7) as u8]
        } else {
            let mut rest = oracle_encode(v >> 7);
            rest.insert(0, (v & 0x7f) as u8 | 0x80);
            rest
        }
    }

    #[test]
    fn two_hundred_entry_palette() {
        let names: Vec<String> = (0..200).map(|i| format!("minecraft:block_{i}")).collect();
        let palette: Vec<(&str, i32)> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i as i32)).collect();
        let ids: Vec<u32> = (0..200u32).rev().collect();
        let data: Vec<u8> = ids.iter().flat_map(|&i| oracle_encode(i)).collect();
        assert!(data.len() > 200, "ids >= 128 take two bytes");
        assert_eq!(read_varints(&data).unwrap(), ids);
        let mut mine = Vec::new();
        for &i in &ids {
            write_varint(&mut mine, i);
        }
        assert_eq!(mine, data);
        let w = world_from_schematic(&schem(200, 1, 1, &palette, data)).unwrap();
        assert_eq!(w.query(VoxelCoord::new(0, 0, 0)), "minecraft:block_199");
        assert_eq!(w.query(VoxelCoord::new(199, 0, 0)), "minecraft:block_0");
    }

    #[test]
    fn write_then_read() {
        let b = Aabb::from_origin_dims(VoxelCoord::ZERO, [3, 2, 4]).unwrap();
        let mut w = WorldMap::filled(b, "minecraft:air");
        w.set(VoxelCoord::new(2, 1, 3), "minecraft:stone");
        w.set(VoxelCoord::new(0, 0, 1), "minecraft:oak_planks");
        let t = schematic_from_world(&w).unwrap();
        let back = world_from_schematic(&t).unwrap();
        for v in b.iter() {
            assert_eq!(back.query(v), w.query(v));
        }
    }
}
