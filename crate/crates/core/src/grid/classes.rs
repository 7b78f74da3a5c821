use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassId, GridError, EMPTY};

/// Names of the canonical indoor class table, in id order.
pub const CANONICAL_CLASSES: [&str; 12] = [
    "empty",
    "ceiling",
    "floor",
    "wall",
    "window",
    "chair",
    "bed",
    "sofa",
    "table",
    "tvs",
    "furniture",
    "objects",
];

/// Block names that always resolve to the empty class.
pub const AIR_NAMES: [&str; 4] = [
    "minecraft:air",
    "minecraft:cave_air",
    "minecraft:void_air",
    "air",
];

/// Ordered list of class names; the position of a name is its id and id 0
/// is reserved for empty space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    names: Vec<String>,
    lookup: HashMap<String, ClassId>,
}

impl ClassTable {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, GridError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(GridError::InvalidClassTable("class table is empty".into()));
        }
        if names.len() > ClassId::MAX as usize + 1 {
            return Err(GridError::InvalidClassTable(format!(
                "{} classes exceed the 16-bit id space",
                names.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(GridError::InvalidClassTable(format!("class {id} has an empty name")));
            }
            if lookup.insert(name.clone(), id as ClassId).is_some() {
                return Err(GridError::InvalidClassTable(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, lookup })
    }

    /// The 12-entry indoor table: `empty` followed by the 11 semantic classes.
    pub fn canonical() -> Self {
        Self::new(CANONICAL_CLASSES).expect("canonical table is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.lookup.get(name).copied()
    }

    /// Resolves either a class name or a decimal class index.
    pub fn resolve(&self, name_or_index: &str) -> Result<ClassId, GridError> {
        if let Some(id) = self.id_of(name_or_index) {
            return Ok(id);
        }
        match name_or_index.parse::<usize>() {
            Ok(idx) if idx < self.len() => Ok(idx as ClassId),
            Ok(idx) => Err(GridError::TargetIdOutOfRange { id: idx, len: self.len() }),
            Err(_) => Err(GridError::UnknownClass(name_or_index.to_string())),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn empty_id(&self) -> ClassId {
        EMPTY
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Strips a `[key=value,...]` block-state suffix from a block name.
pub fn base_block_name(name: &str) -> &str {
    match name.find('[') {
        Some(i) => &name[..i],
        None => name,
    }
}

pub fn is_air(name: &str) -> bool {
    AIR_NAMES.contains(&base_block_name(name))
}

/// Many-to-one mapping from source names (fine-grained classes or block
/// names) to ids of a target [`ClassTable`].
///
/// Resolution order for a source name: exact entry, entry for the name
/// with its block-state suffix removed, air names (always empty), a class
/// of the same name in the target table, then `default_target`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMap {
    entries: HashMap<String, ClassId>,
    default_target: Option<ClassId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassMapFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
    #[serde(default)]
    map: std::collections::BTreeMap<String, String>,
}

impl ClassMap {
    pub fn new(default_target: Option<ClassId>) -> Self {
        Self { entries: HashMap::new(), default_target }
    }

    /// Map with no explicit entries that resolves every target-table name to
    /// itself and has no default.
    pub fn identity() -> Self {
        Self::new(None)
    }

    /// Default mapping into `table`: unmapped names go to `objects`.
    pub fn with_objects_default(table: &ClassTable) -> Self {
        Self::new(table.id_of("objects"))
    }

    pub fn insert(&mut self, source: impl Into<String>, target: ClassId) -> &mut Self {
        self.entries.insert(source.into(), target);
        self
    }

    pub fn default_target(&self) -> Option<ClassId> {
        self.default_target
    }

    pub fn set_default_target(&mut self, target: Option<ClassId>) {
        self.default_target = target;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks that every target id (and the default) exists in `table`.
    pub fn validate(&self, table: &ClassTable) -> Result<(), GridError> {
        let check = |id: ClassId| {
            if (id as usize) < table.len() {
                Ok(())
            } else {
                Err(GridError::TargetIdOutOfRange { id: id as usize, len: table.len() })
            }
        };
        for &id in self.entries.values() {
            check(id)?;
        }
        if let Some(id) = self.default_target {
            check(id)?;
        }
        Ok(())
    }

    pub fn resolve(&self, source: &str, table: &ClassTable) -> Result<ClassId, GridError> {
        let found = self
            .entries
            .get(source)
            .or_else(|| self.entries.get(base_block_name(source)))
            .copied()
            .or_else(|| is_air(source).then_some(EMPTY))
            .or_else(|| table.id_of(source))
            .or_else(|| table.id_of(base_block_name(source)))
            .or(self.default_target);
        match found {
            Some(id) if (id as usize) < table.len() => Ok(id),
            Some(id) => Err(GridError::TargetIdOutOfRange { id: id as usize, len: table.len() }),
            None => Err(GridError::UnknownClass(source.to_string())),
        }
    }

    /// Parses the `classmap.json` layout: `{"default": name, "map": {source: target}}`.
    pub fn from_json(text: &str, table: &ClassTable) -> Result<Self, GridError> {
        let file: ClassMapFile =
            serde_json::from_str(text).map_err(|e| GridError::Format(e.to_string()))?;
        let target = |name: &str| {
            table.id_of(name).ok_or_else(|| GridError::UnknownClass(name.to_string()))
        };
        let mut map = ClassMap::new(file.default.as_deref().map(target).transpose()?);
        for (source, dest) in &file.map {
            map.insert(source.clone(), target(dest)?);
        }
        Ok(map)
    }

    pub fn to_json(&self, table: &ClassTable) -> String {
        let name = |id: ClassId| table.name(id).unwrap_or("?").to_string();
        let file = ClassMapFile {
            default: self.default_target.map(name),
            map: self.entries.iter().map(|(k, &v)| (k.clone(), name(v))).collect(),
        };
        serde_json::to_string_pretty(&file).expect("class map serializes")
    }

    pub fn load(path: impl AsRef<Path>, table: &ClassTable) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, table)
    }
}
