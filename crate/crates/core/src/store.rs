//! On-disk data model for visual features, semantic embeddings and
//! activation maps.
//!
//! All three formats share a header of 4 magic bytes followed by a `u32`
//! format version. Integers are little-endian `u32`, reals little-endian
//! IEEE-754 `f32`, strings a `u32` byte length followed by UTF-8 bytes.
//!
//! ```text
//! FSHB  version  d  class_count  { id  split:u8  n_c  n_c*d f32 }*
//! FSSB  version  m  entry_count  { id  m f32 }*
//! FSAM  version  entry_count     { sample_id  class_id  H  W  H*W f32 }*
//! ```
//!
//! Banks are plain data. [`FeatureBank::validate`] and friends check the
//! invariants; writing refuses invalid banks and loading never returns one.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, Decoder, Encoder};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FSHB";
pub const SEMANTIC_MAGIC: &[u8; 4] = b"FSSB";
pub const ACTIVATION_MAGIC: &[u8; 4] = b"FSAM";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Base,
    Validation,
    Novel,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Base => 0,
            Split::Validation => 1,
            Split::Novel => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Split> {
        match code {
            0 => Some(Split::Base),
            1 => Some(Split::Validation),
            2 => Some(Split::Novel),
            _ => None,
        }
    }
}

/// The feature rows of one class, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassFeatures {
    pub class_id: String,
    pub split: Split,
    pub data: Vec<f32>,
}

impl ClassFeatures {
    pub fn new(class_id: impl Into<String>, split: Split, data: Vec<f32>) -> Self {
        ClassFeatures {
            class_id: class_id.into(),
            split,
            data,
        }
    }

    /// Number of rows given the bank dimensionality.
    pub fn rows(&self, dim: usize) -> usize {
        self.data.len().checked_div(dim).unwrap_or(0)
    }

    pub fn row(&self, dim: usize, i: usize) -> &[f32] {
        &self.data[i * dim..(i + 1) * dim]
    }

    pub fn row_f64(&self, dim: usize, i: usize) -> Vec<f64> {
        self.row(dim, i).iter().map(|&v| v as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub dim: usize,
    pub classes: Vec<ClassFeatures>,
}

impl FeatureBank {
    pub fn new(dim: usize, classes: Vec<ClassFeatures>) -> Result<Self> {
        let bank = FeatureBank { dim, classes };
        bank.validate()?;
        Ok(bank)
    }

    pub fn class(&self, class_id: &str) -> Option<&ClassFeatures> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClassFeatures> {
        self.classes.iter().filter(move |c| c.split == split)
    }

    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push(Issue::ZeroDimension);
            return out;
        }
        let mut seen = HashSet::new();
        for class in &self.classes {
            if !seen.insert(class.class_id.as_str()) {
                // duplicate ids also cover split overlap: one id cannot carry two splits
                out.push(Issue::DuplicateClass(class.class_id.clone()));
            }
            if class.data.is_empty() {
                out.push(Issue::EmptyClass(class.class_id.clone()));
                continue;
            }
            if class.data.len() % self.dim != 0 {
                out.push(Issue::RaggedRows {
                    class_id: class.class_id.clone(),
                    values: class.data.len(),
                    dim: self.dim,
                });
                continue;
            }
            for (i, &v) in class.data.iter().enumerate() {
                let (row, col) = (i / self.dim, i % self.dim);
                if !v.is_finite() {
                    out.push(Issue::NonFinite {
                        class_id: class.class_id.clone(),
                        row,
                        col,
                    });
                } else if v < 0.0 {
                    out.push(Issue::NegativeFeature {
                        class_id: class.class_id.clone(),
                        row,
                        col,
                        value: v,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        check(self.issues())
    }
}

/// One embedding per class label, keyed by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticBank {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<f32>>,
}

impl SemanticBank {
    pub fn new(dim: usize, entries: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let bank = SemanticBank { dim, entries };
        bank.validate()?;
        Ok(bank)
    }

    pub fn get(&self, class_id: &str) -> Option<&[f32]> {
        self.entries.get(class_id).map(Vec::as_slice)
    }

    pub fn get_f64(&self, class_id: &str) -> Result<Vec<f64>> {
        self.get(class_id)
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .ok_or_else(|| Error::MissingSemantic(class_id.to_string()))
    }

    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push(Issue::ZeroDimension);
        }
        for (id, v) in &self.entries {
            if v.len() != self.dim {
                out.push(Issue::SemanticDimension {
                    class_id: id.clone(),
                    expected: self.dim,
                    found: v.len(),
                });
            }
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                out.push(Issue::NonFinite {
                    class_id: id.clone(),
                    row: 0,
                    col,
                });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        check(self.issues())
    }
}

/// A spatial map with values in `[0, 1]`, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let map = AttentionMap {
            height,
            width,
            values,
        };
        if let Some(issue) = map.issue() {
            return Err(Error::InvalidBank(issue));
        }
        Ok(map)
    }

    fn issue(&self) -> Option<String> {
        if self.height == 0 || self.width == 0 {
            return Some(format!("map shape {}x{} is empty", self.height, self.width));
        }
        if self.values.len() != self.height * self.width {
            return Some(format!(
                "map shape {}x{} holds {} values",
                self.height,
                self.width,
                self.values.len()
            ));
        }
        self.values
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
            .map(|i| format!("map value {} at {i} outside [0, 1]", self.values[i]))
    }
}

/// Activation maps keyed by `(sample_id, base_class_id)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActivationMapSet {
    pub entries: BTreeMap<(String, String), AttentionMap>,
}

impl ActivationMapSet {
    pub fn get(&self, sample_id: &str, class_id: &str) -> Option<&AttentionMap> {
        self.entries
            .get(&(sample_id.to_string(), class_id.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for ((sample, class), map) in &self.entries {
            if let Some(issue) = map.issue() {
                return Err(Error::InvalidBank(format!("({sample}, {class}): {issue}")));
            }
        }
        Ok(())
    }
}

/// One problem found while validating banks.
#[derive(Clone, Debug, PartialEq)]
pub enum Issue {
    ZeroDimension,
    DuplicateClass(String),
    EmptyClass(String),
    RaggedRows {
        class_id: String,
        values: usize,
        dim: usize,
    },
    NonFinite {
        class_id: String,
        row: usize,
        col: usize,
    },
    NegativeFeature {
        class_id: String,
        row: usize,
        col: usize,
        value: f32,
    },
    SemanticDimension {
        class_id: String,
        expected: usize,
        found: usize,
    },
    MissingSemantic(String),
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::ZeroDimension => write!(f, "dimension is zero"),
            Issue::DuplicateClass(id) => write!(f, "class {id:?} appears more than once"),
            Issue::EmptyClass(id) => write!(f, "class {id:?} has no rows"),
            Issue::RaggedRows { class_id, values, dim } => write!(
                f,
                "class {class_id:?} holds {values} values, not a multiple of dimension {dim}"
            ),
            Issue::NonFinite { class_id, row, col } => {
                write!(f, "class {class_id:?} row {row} col {col} is not finite")
            }
            Issue::NegativeFeature {
                class_id,
                row,
                col,
                value,
            } => write!(
                f,
                "class {class_id:?} row {row} col {col} is negative ({value})"
            ),
            Issue::SemanticDimension {
                class_id,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch: semantic vector for {class_id:?} has {found} entries, expected {expected}"
            ),
            Issue::MissingSemantic(id) => write!(f, "class {id:?} has no semantic vector"),
        }
    }
}

fn check(issues: Vec<Issue>) -> Result<()> {
    if issues.is_empty() {
        return Ok(());
    }
    let shown: Vec<String> = issues.iter().take(5).map(Issue::to_string).collect();
    let more = issues.len().saturating_sub(5);
    let mut msg = shown.join("; ");
    if more > 0 {
        msg.push_str(&format!("; and {more} more"));
    }
    Err(Error::InvalidBank(msg))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Checks a feature bank and semantic bank jointly. Problems are reported,
/// never raised.
pub fn validate_pair(features: &FeatureBank, semantics: &SemanticBank) -> ValidationReport {
    let mut issues = features.issues();
    issues.extend(semantics.issues());
    for class in &features.classes {
        if !semantics.entries.contains_key(&class.class_id) {
            issues.push(Issue::MissingSemantic(class.class_id.clone()));
        }
    }
    ValidationReport { issues }
}

/// A file format with a fixed magic number.
pub trait BankFormat: Sized {
    const MAGIC: &'static [u8; 4];

    fn encode(&self) -> Result<Vec<u8>>;
    fn decode(bytes: &[u8]) -> Result<Self>;
}

impl BankFormat for FeatureBank {
    const MAGIC: &'static [u8; 4] = FEATURE_MAGIC;

    fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut enc = Encoder::new(Self::MAGIC);
        enc.len_u32(self.dim, "dimension")?;
        enc.len_u32(self.classes.len(), "class count")?;
        for class in &self.classes {
            enc.string(&class.class_id)?;
            enc.u8(class.split.code());
            enc.len_u32(class.rows(self.dim), "row count")?;
            enc.f32s(&class.data);
        }
        Ok(enc.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes, Self::MAGIC)?;
        let dim = dec.u32("dimension")? as usize;
        let count = dec.u32("class count")? as usize;
        let mut classes = Vec::with_capacity(count.min(1 << 16));
        for c in 0..count {
            let class_id = dec.string(&format!("class {c} id"))?;
            let at = dec.offset();
            let code = dec.u8(&format!("class {class_id:?} split"))?;
            let split = Split::from_code(code).ok_or_else(|| {
                Error::InvalidBank(format!(
                    "class {class_id:?} has split code {code} at byte offset {at}"
                ))
            })?;
            let rows = dec.u32(&format!("class {class_id:?} row count"))? as usize;
            let n = rows.checked_mul(dim).ok_or_else(|| {
                Error::InvalidBank(format!("class {class_id:?} declares too many rows"))
            })?;
            let data = dec.f32s(n, &format!("{rows} rows of class {class_id:?}"))?;
            classes.push(ClassFeatures {
                class_id,
                split,
                data,
            });
        }
        dec.finish()?;
        FeatureBank::new(dim, classes)
    }
}

impl BankFormat for SemanticBank {
    const MAGIC: &'static [u8; 4] = SEMANTIC_MAGIC;

    fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut enc = Encoder::new(Self::MAGIC);
        enc.len_u32(self.dim, "dimension")?;
        enc.len_u32(self.entries.len(), "entry count")?;
        for (id, v) in &self.entries {
            enc.string(id)?;
            enc.f32s(v);
        }
        Ok(enc.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes, Self::MAGIC)?;
        let dim = dec.u32("dimension")? as usize;
        let count = dec.u32("entry count")? as usize;
        let mut entries = BTreeMap::new();
        for e in 0..count {
            let id = dec.string(&format!("entry {e} id"))?;
            let v = dec.f32s(dim, &format!("vector of {id:?}"))?;
            if entries.insert(id.clone(), v).is_some() {
                return Err(Error::InvalidBank(format!(
                    "class {id:?} appears more than once"
                )));
            }
        }
        dec.finish()?;
        SemanticBank::new(dim, entries)
    }
}

impl BankFormat for ActivationMapSet {
    const MAGIC: &'static [u8; 4] = ACTIVATION_MAGIC;

    fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut enc = Encoder::new(Self::MAGIC);
        enc.len_u32(self.entries.len(), "entry count")?;
        for ((sample, class), map) in &self.entries {
            enc.string(sample)?;
            enc.string(class)?;
            enc.len_u32(map.height, "map height")?;
            enc.len_u32(map.width, "map width")?;
            enc.f32s(&map.values);
        }
        Ok(enc.finish())
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new(bytes, Self::MAGIC)?;
        let count = dec.u32("entry count")? as usize;
        let mut entries = BTreeMap::new();
        for e in 0..count {
            let sample = dec.string(&format!("entry {e} sample id"))?;
            let class = dec.string(&format!("entry {e} class id"))?;
            let height = dec.u32("map height")? as usize;
            let width = dec.u32("map width")? as usize;
            let n = height
                .checked_mul(width)
                .ok_or_else(|| Error::InvalidBank(format!("map {e} is too large")))?;
            let values = dec.f32s(n, &format!("map values of entry {e}"))?;
            let map = AttentionMap::new(height, width, values)
                .map_err(|err| Error::InvalidBank(format!("({sample}, {class}): {err}")))?;
            if entries.insert((sample.clone(), class.clone()), map).is_some() {
                return Err(Error::InvalidBank(format!(
                    "map ({sample}, {class}) appears more than once"
                )));
            }
        }
        dec.finish()?;
        Ok(ActivationMapSet { entries })
    }
}

/// Any bank file, dispatched on its magic bytes.
#[derive(Clone, Debug, PartialEq)]
pub enum Bank {
    Features(FeatureBank),
    Semantics(SemanticBank),
    ActivationMaps(ActivationMapSet),
}

pub fn write_bank<B: BankFormat>(bank: &B, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bank.encode()?;
    write_file(path.as_ref(), &bytes)
}

/// Loads a file of a known format.
pub fn read_bank<B: BankFormat>(path: impl AsRef<Path>) -> Result<B> {
    B::decode(&read_file(path.as_ref())?)
}

/// Loads any bank file, choosing the format from its magic bytes.
pub fn load_bank(path: impl AsRef<Path>) -> Result<Bank> {
    let bytes = read_file(path.as_ref())?;
    match bytes.get(..4) {
        Some(m) if m == FEATURE_MAGIC => FeatureBank::decode(&bytes).map(Bank::Features),
        Some(m) if m == SEMANTIC_MAGIC => SemanticBank::decode(&bytes).map(Bank::Semantics),
        Some(m) if m == ACTIVATION_MAGIC => {
            ActivationMapSet::decode(&bytes).map(Bank::ActivationMaps)
        }
        other => Err(Error::UnrecognizedFormat {
            expected: "FSHB, FSSB or FSAM".to_string(),
            found: String::from_utf8_lossy(other.unwrap_or(&bytes)).into_owned(),
        }),
    }
}
