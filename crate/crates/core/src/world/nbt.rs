//! Big-endian NBT reader and writer (optionally gzip-wrapped).

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use indexmap::IndexMap;

pub const DEFAULT_DEPTH_LIMIT: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NbtError {
    #[error("input ended early at byte {0}")]
    TruncatedInput(usize),
    #[error("unknown tag id {id} at byte {offset}")]
    UnknownTag { id: u8, offset: usize },
    #[error("string at byte {0} is not valid utf-8")]
    BadUtf8(usize),
    #[error("nesting deeper than {0}")]
    DepthLimitExceeded(usize),
    #[error("negative length {len} at byte {offset}")]
    NegativeLength { len: i32, offset: usize },
    #[error("root tag is {0:?}, expected a compound")]
    RootNotCompound(TagType),
    #[error("gzip stream is corrupt: {0}")]
    Gzip(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TagType {
    End = 0,
    Byte = 1,
    Short = 2,
    Int = 3,
    Long = 4,
    Float = 5,
    Double = 6,
    ByteArray = 7,
    String = 8,
    List = 9,
    Compound = 10,
    IntArray = 11,
    LongArray = 12,
}

impl TagType {
    pub fn from_id(id: u8) -> Option<Self> {
        use TagType::*;
        Some(match id {
            0 => End,
            1 => Byte,
            2 => Short,
            3 => Int,
            4 => Long,
            5 => Float,
            6 => Double,
            7 => ByteArray,
            8 => String,
            9 => List,
            10 => Compound,
            11 => IntArray,
            12 => LongArray,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NbtValue {
    Byte(i8),
    Short(i16),
    Int(i32),
    Long(i64),
    Float(f32),
    Double(f64),
    ByteArray(Vec<i8>),
    String(String),
    List(NbtList),
    Compound(IndexMap<String, NbtValue>),
    IntArray(Vec<i32>),
    LongArray(Vec<i64>),
}

/// Homogeneous list; `element` is kept so empty lists round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct NbtList {
    element: TagType,
    items: Vec<NbtValue>,
}

impl NbtList {
    /// Fails (returns `None`) when items are not all of type `element`.
    pub fn new(element: TagType, items: Vec<NbtValue>) -> Option<Self> {
        if items.iter().all(|v| v.tag_type() == element) && (element != TagType::End || items.is_empty()) {
            Some(Self { element, items })
        } else {
            None
        }
    }

    pub fn element(&self) -> TagType {
        self.element
    }

    pub fn items(&self) -> &[NbtValue] {
        &self.items
    }
}

impl NbtValue {
    pub fn tag_type(&self) -> TagType {
        match self {
            NbtValue::Byte(_) => TagType::Byte,
            NbtValue::Short(_) => TagType::Short,
            NbtValue::Int(_) => TagType::Int,
            NbtValue::Long(_) => TagType::Long,
            NbtValue::Float(_) => TagType::Float,
            NbtValue::Double(_) => TagType::Double,
            NbtValue::ByteArray(_) => TagType::ByteArray,
            NbtValue::String(_) => TagType::String,
            NbtValue::List(_) => TagType::List,
            NbtValue::Compound(_) => TagType::Compound,
            NbtValue::IntArray(_) => TagType::IntArray,
            NbtValue::LongArray(_) => TagType::LongArray,
        }
    }

    pub fn as_compound(&self) -> Option<&IndexMap<String, NbtValue>> {
        match self {
            NbtValue::Compound(c) => Some(c),
            _ => None,
        }
    }

    /// Integer value of any integral tag.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            NbtValue::Byte(v) => Some(v as i64),
            NbtValue::Short(v) => Some(v as i64),
            NbtValue::Int(v) => Some(v as i64),
            NbtValue::Long(v) => Some(v),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&NbtValue> {
        self.as_compound().and_then(|c| c.get(key))
    }
}

/// Root tag with its (usually empty) name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTag {
    pub name: String,
    pub value: NbtValue,
}

impl NamedTag {
    pub fn compound(name: impl Into<String>, entries: IndexMap<String, NbtValue>) -> Self {
        Self { name: name.into(), value: NbtValue::Compound(entries) }
    }
}

pub fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

pub fn parse_nbt(bytes: &[u8]) -> Result<NamedTag, NbtError> {
    parse_nbt_with_limit(bytes, DEFAULT_DEPTH_LIMIT)
}

pub fn parse_nbt_with_limit(bytes: &[u8], depth_limit: usize) -> Result<NamedTag, NbtError> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| NbtError::Gzip(e.to_string()))?;
        return parse_raw(&raw, depth_limit);
    }
    parse_raw(bytes, depth_limit)
}

fn parse_raw(bytes: &[u8], depth_limit: usize) -> Result<NamedTag, NbtError> {
    let mut p = Parser { buf: bytes, pos: 0, limit: depth_limit };
    let id = p.u8()?;
    let tag = TagType::from_id(id).ok_or(NbtError::UnknownTag { id, offset: 0 })?;
    if tag != TagType::Compound {
        return Err(NbtError::RootNotCompound(tag));
    }
    let name = p.string()?;
    let value = p.payload(tag, 1)?;
    Ok(NamedTag { name, value })
}

struct Parser<'a> {
    buf: &'a [u8],
    pos: usize,
    limit: usize,
}

impl<'a> Parser<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NbtError> {
        if self.buf.len() - self.pos < n {
            return Err(NbtError::TruncatedInput(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NbtError> {
        Ok(self.take(1)?[0])
    }

    fn i16(&mut self) -> Result<i16, NbtError> {
        Ok(i16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, NbtError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, NbtError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, NbtError> {
        let at = self.pos;
        let len = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| NbtError::BadUtf8(at))
    }

    /// Reads an array length and checks `len * width` bytes remain.
    fn array_len(&mut self, width: usize) -> Result<usize, NbtError> {
        let at = self.pos;
        let len = self.i32()?;
        if len < 0 {
            return Err(NbtError::NegativeLength { len, offset: at });
        }
        let len = len as usize;
        if (self.buf.len() - self.pos) / width.max(1) < len {
            return Err(NbtError::TruncatedInput(self.buf.len()));
        }
        Ok(len)
    }

    fn tag_id(&mut self) -> Result<TagType, NbtError> {
        let offset = self.pos;
        let id = self.u8()?;
        TagType::from_id(id).ok_or(NbtError::UnknownTag { id, offset })
    }

    fn payload(&mut self, tag: TagType, depth: usize) -> Result<NbtValue, NbtError> {
        Ok(match tag {
            TagType::End => unreachable!("End has no payload"),
            TagType::Byte => NbtValue::Byte(self.u8()? as i8),
            TagType::Short => NbtValue::Short(self.i16()?),
            TagType::Int => NbtValue::Int(self.i32()?),
            TagType::Long => NbtValue::Long(self.i64()?),
            TagType::Float => NbtValue::Float(f32::from_bits(self.i32()? as u32)),
            TagType::Double => NbtValue::Double(f64::from_bits(self.i64()? as u64)),
            TagType::ByteArray => {
                let n = self.array_len(1)?;
                NbtValue::ByteArray(self.take(n)?.iter().map(|&b| b as i8).collect())
            }
            TagType::String => NbtValue::String(self.string()?),
            TagType::IntArray => {
                let n = self.array_len(4)?;
                NbtValue::IntArray((0..n).map(|_| self.i32()).collect::<Result<_, _>>()?)
            }
            TagType::LongArray => {
                let n = self.array_len(8)?;
                NbtValue::LongArray((0..n).map(|_| self.i64()).collect::<Result<_, _>>()?)
            }
            TagType::List => {
                if depth > self.limit {
                    return Err(NbtError::DepthLimitExceeded(self.limit));
                }
                let element = self.tag_id()?;
                let n = self.array_len(0)?;
                if element == TagType::End {
                    // only legal for empty lists; a non-empty End list has no payload to read
                    return Ok(NbtValue::List(NbtList { element, items: Vec::new() }));
                }
                let mut items = Vec::with_capacity(n.min(4096));
                for _ in 0..n {
                    items.push(self.payload(element, depth + 1)?);
                }
                NbtValue::List(NbtList { element, items })
            }
            TagType::Compound => {
                if depth > self.limit {
                    return Err(NbtError::DepthLimitExceeded(self.limit));
                }
                let mut map = IndexMap::new();
                loop {
                    let t = self.tag_id()?;
                    if t == TagType::End {
                        break;
                    }
                    let name = self.string()?;
                    let v = self.payload(t, depth + 1)?;
                    map.insert(name, v);
                }
                NbtValue::Compound(map)
            }
        })
    }
}

pub fn encode_nbt(tag: &NamedTag) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(tag.value.tag_type() as u8);
    write_string(&mut out, &tag.name);
    write_payload(&mut out, &tag.value);
    out
}

pub fn encode_nbt_gzip(tag: &NamedTag) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&encode_nbt(tag)).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_payload(out: &mut Vec<u8>, v: &NbtValue) {
    match v {
        NbtValue::Byte(b) => out.push(*b as u8),
        NbtValue::Short(s) => out.extend_from_slice(&s.to_be_bytes()),
        NbtValue::Int(i) => out.extend_from_slice(&i.to_be_bytes()),
        NbtValue::Long(l) => out.extend_from_slice(&l.to_be_bytes()),
        NbtValue::Float(f) => out.extend_from_slice(&f.to_bits().to_be_bytes()),
        NbtValue::Double(d) => out.extend_from_slice(&d.to_bits().to_be_bytes()),
        NbtValue::ByteArray(a) => {
            out.extend_from_slice(&(a.len() as i32).to_be_bytes());
            out.extend(a.iter().map(|&b| b as u8));
        }
        NbtValue::String(s) => write_string(out, s),
        NbtValue::List(l) => {
            out.push(l.element as u8);
            out.extend_from_slice(&(l.items.len() as i32).to_be_bytes());
            for item in &l.items {
                write_payload(out, item);
            }
        }
        NbtValue::Compound(map) => {
            for (k, v) in map {
                out.push(v.tag_type() as u8);
                write_string(out, k);
                write_payload(out, v);
            }
            out.push(TagType::End as u8);
        }
        NbtValue::IntArray(a) => {
            out.extend_from_slice(&(a.len() as i32).to_be_bytes());
            for i in a {
                out.extend_from_slice(&i.to_be_bytes());
            }
        }
        NbtValue::LongArray(a) => {
            out.extend_from_slice(&(a.len() as i32).to_be_bytes());
            for l in a {
                out.extend_from_slice(&l.to_be_bytes());
            }
        }
    }
}
