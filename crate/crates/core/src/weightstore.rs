//! Ordered, named, role-tagged tensors of 32-bit floats — the cover medium —
//! plus the WSTG v1 on-disk format and the layer selectors.
//!
//! WSTG v1 layout (all integers little-endian):
//!
//! ```text
//! magic  4 bytes "WSTG"
//! version u8 = 1
//! tensor_count u32
//! per tensor:
//!   name_len u16, name UTF-8,
//!   role u8 (0 = Output, 1 = Hidden, 2 = Pretrained),
//!   rank u8, dims rank x u32,
//!   data product(dims) x f32 (IEEE-754 binary32, little-endian)
//! ```
//!
//! The format is canonical: parsing a valid file and re-serializing it
//! reproduces the input byte for byte. Equality on stores and tensors is
//! defined on the underlying bit patterns, so stores containing NaN still
//! compare equal to their round-tripped selves.

use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"WSTG";
pub const VERSION: u8 = 1;
/// Desk-scale guardrails on tensor shape.
pub const MAX_RANK: usize = 8;
pub const MAX_ELEMENTS: u64 = u32::MAX as u64;

/// Tensors whose name ends with this suffix ride along for lossless model
/// round-trips but are never cover media: the role selectors skip them (the
/// published weight counts exclude biases). `Named` still resolves them when
/// asked explicitly.
pub const BIAS_SUFFIX: &str = ".bias";

#[derive(Debug)]
pub enum StoreError {
    Io(io::Error),
    BadMagic([u8; 4]),
    UnsupportedVersion(u8),
    TruncatedFile,
    DuplicateTensorName(String),
    InvalidName(String),
    InvalidRole(u8),
    DimOverflow(String),
    DataLengthMismatch {
        name: String,
        expected: u64,
        actual: usize,
    },
    UnknownTensorName(String),
    BadSelector(String),
}

impl fmt::Display for StoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::BadMagic(m) => write!(f, "bad magic {m:02x?}, expected \"WSTG\""),
            Self::UnsupportedVersion(v) => write!(f, "unsupported WSTG version {v}"),
            Self::TruncatedFile => write!(f, "truncated WSTG file"),
            Self::DuplicateTensorName(n) => write!(f, "duplicate tensor name {n:?}"),
            Self::InvalidName(msg) => write!(f, "invalid tensor name: {msg}"),
            Self::InvalidRole(r) => write!(f, "invalid role byte {r}"),
            Self::DimOverflow(msg) => write!(f, "dims out of range: {msg}"),
            Self::DataLengthMismatch {
                name,
                expected,
                actual,
            } => write!(
                f,
                "tensor {name:?} has {actual} values but dims require {expected}"
            ),
            Self::UnknownTensorName(n) => write!(f, "unknown tensor name {n:?}"),
            Self::BadSelector(s) => write!(f, "bad selector spec {s:?}"),
        }
    }
}

impl std::error::Error for StoreError {}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            StoreError::TruncatedFile
        } else {
            StoreError::Io(e)
        }
    }
}

/// Where a tensor sits in the model, as preserved across serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Output,
    Hidden,
    Pretrained,
}

impl Role {
    pub fn to_byte(self) -> u8 {
        match self {
            Role::Output => 0,
            Role::Hidden => 1,
            Role::Pretrained => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, StoreError> {
        match b {
            0 => Ok(Role::Output),
            1 => Ok(Role::Hidden),
            2 => Ok(Role::Pretrained),
            other => Err(StoreError::InvalidRole(other)),
        }
    }
}

/// One named tensor: flat row-major f32 data plus its dims and role.
#[derive(Debug, Clone)]
pub struct TensorRecord {
    name: String,
    role: Role,
    dims: Vec<u32>,
    data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(
        name: impl Into<String>,
        role: Role,
        dims: Vec<u32>,
        data: Vec<f32>,
    ) -> Result<Self, StoreError> {
        let name = name.into();
        if name.is_empty() {
            return Err(StoreError::InvalidName("empty".into()));
        }
        if name.len() > u16::MAX as usize {
            return Err(StoreError::InvalidName(format!(
                "{} bytes exceeds the u16 name length field",
                name.len()
            )));
        }
        let expected = checked_element_count(&dims)?;
        if data.len() as u64 != expected {
            return Err(StoreError::DataLengthMismatch {
                name,
                expected,
                actual: data.len(),
            });
        }
        Ok(TensorRecord {
            name,
            role,
            dims,
            data,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bias vectors are never embedding targets; see [`BIAS_SUFFIX`].
    pub fn is_bias(&self) -> bool {
        self.name.ends_with(BIAS_SUFFIX)
    }
}

impl PartialEq for TensorRecord {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.role == other.role
            && self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for TensorRecord {}

fn checked_element_count(dims: &[u32]) -> Result<u64, StoreError> {
    if dims.len() > MAX_RANK {
        return Err(StoreError::DimOverflow(format!(
            "rank {} exceeds {MAX_RANK}",
            dims.len()
        )));
    }
    let mut product: u64 = 1;
    for &d in dims {
        if d == 0 {
            return Err(StoreError::DimOverflow("zero dim".into()));
        }
        product = product
            .checked_mul(d as u64)
            .filter(|&p| p <= MAX_ELEMENTS)
            .ok_or_else(|| StoreError::DimOverflow("element count exceeds 2^32 - 1".into()))?;
    }
    Ok(product)
}

/// The full weight set of one model. Tensor order is stable and significant:
/// it defines the embedding traversal order. Immutable after construction;
/// the codec mutates by producing a new store.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightStore {
    tensors: Vec<TensorRecord>,
}

impl WeightStore {
    pub fn new(tensors: Vec<TensorRecord>) -> Result<Self, StoreError> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|p| p.name == t.name) {
                return Err(StoreError::DuplicateTensorName(t.name.clone()));
            }
        }
        Ok(WeightStore { tensors })
    }

    pub fn tensors(&self) -> &[TensorRecord] {
        &self.tensors
    }

    pub(crate) fn tensor_mut(&mut self, index: usize) -> &mut TensorRecord {
        &mut self.tensors[index]
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn total_weights(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64).sum()
    }

    /// Serializes in WSTG v1 and returns the number of bytes written.
    pub fn write_to(&self, sink: &mut dyn Write) -> Result<u64, StoreError> {
        let mut written: u64 = 0;
        let mut emit = |sink: &mut dyn Write, bytes: &[u8]| -> Result<(), StoreError> {
            sink.write_all(bytes).map_err(StoreError::Io)?;
            written += bytes.len() as u64;
            Ok(())
        };
        emit(sink, &MAGIC)?;
        emit(sink, &[VERSION])?;
        emit(sink, &(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            emit(sink, &(t.name.len() as u16).to_le_bytes())?;
            emit(sink, t.name.as_bytes())?;
            emit(sink, &[t.role.to_byte()])?;
            emit(sink, &[t.dims.len() as u8])?;
            for &d in &t.dims {
                emit(sink, &d.to_le_bytes())?;
            }
            for &v in &t.data {
                emit(sink, &v.to_le_bytes())?;
            }
        }
        Ok(written)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// Parses WSTG v1; exact inverse of [`WeightStore::write_to`].
    pub fn read_from(source: &mut dyn Read) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        source.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = read_u8(source)?;
        if version != VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let tensor_count = read_u32(source)?;
        let mut tensors = Vec::new();
        for _ in 0..tensor_count {
            let name_len = read_u16(source)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            source.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| StoreError::InvalidName(e.to_string()))?;
            if name.is_empty() {
                return Err(StoreError::InvalidName("empty".into()));
            }
            let role = Role::from_byte(read_u8(source)?)?;
            let rank = read_u8(source)? as usize;
            if rank > MAX_RANK {
                return Err(StoreError::DimOverflow(format!(
                    "rank {rank} exceeds {MAX_RANK}"
                )));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(read_u32(source)?);
            }
            let count = checked_element_count(&dims)?;
            let mut raw = vec![0u8; count as usize * 4];
            source.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(TensorRecord {
                name,
                role,
                dims,
                data,
            });
        }
        WeightStore::new(tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cursor = bytes;
        Self::read_from(&mut cursor)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<u64, StoreError> {
        let mut file = std::fs::File::create(path).map_err(StoreError::Io)?;
        self.write_to(&mut file)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let mut file = std::fs::File::open(path).map_err(StoreError::Io)?;
        Self::read_from(&mut file)
    }
}

fn read_u8(source: &mut dyn Read) -> Result<u8, StoreError> {
    let mut b = [0u8; 1];
    source.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(source: &mut dyn Read) -> Result<u16, StoreError> {
    let mut b = [0u8; 2];
    source.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(source: &mut dyn Read) -> Result<u32, StoreError> {
    let mut b = [0u8; 4];
    source.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Picks which tensors act as cover media.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    All,
    Output,
    Hidden,
    Pretrained,
    Named(Vec<String>),
}

impl Selector {
    /// Parses the CLI spelling: `all`, `output`, `hidden`, `pretrained`, or
    /// `named:a,b,c`.
    pub fn parse(spec: &str) -> Result<Self, StoreError> {
        match spec {
            "all" => Ok(Selector::All),
            "output" => Ok(Selector::Output),
            "hidden" => Ok(Selector::Hidden),
            "pretrained" => Ok(Selector::Pretrained),
            other => {
                if let Some(list) = other.strip_prefix("named:") {
                    let names: Vec<String> = list
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect();
                    if names.is_empty() {
                        return Err(StoreError::BadSelector(spec.into()));
                    }
                    Ok(Selector::Named(names))
                } else {
                    Err(StoreError::BadSelector(spec.into()))
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Selector::All => "all".into(),
            Selector::Output => "output".into(),
            Selector::Hidden => "hidden".into(),
            Selector::Pretrained => "pretrained".into(),
            Selector::Named(names) => format!("named:{}", names.join(",")),
        }
    }
}

/// Indices of the tensors a selector covers, in store order.
///
/// Role selectors (`All`, `Output`, `Hidden`, `Pretrained`) skip bias
/// tensors; `Named` resolves exact names and errors on unknown ones.
pub fn selected_tensors(store: &WeightStore, sel: &Selector) -> Result<Vec<usize>, StoreError> {
    match sel {
        Selector::Named(names) => {
            for name in names {
                if store.tensor_by_name(name).is_none() {
                    return Err(StoreError::UnknownTensorName(name.clone()));
                }
            }
            Ok(store
                .tensors
                .iter()
                .enumerate()
                .filter(|(_, t)| names.iter().any(|n| n == &t.name))
                .map(|(i, _)| i)
                .collect())
        }
        _ => {
            let wanted = |role: Role| match sel {
                Selector::All => true,
                Selector::Output => role == Role::Output,
                Selector::Hidden => role == Role::Hidden,
                Selector::Pretrained => role == Role::Pretrained,
                Selector::Named(_) => unreachable!(),
            };
            Ok(store
                .tensors
                .iter()
                .enumerate()
                .filter(|(_, t)| !t.is_bias() && wanted(t.role))
                .map(|(i, _)| i)
                .collect())
        }
    }
}

/// Ordered weight slots `(tensor index, element index)` the selector covers:
/// tensor position in the store first, then row-major element order.
pub fn select(store: &WeightStore, sel: &Selector) -> Result<Vec<(usize, usize)>, StoreError> {
    let mut slots = Vec::new();
    for ti in selected_tensors(store, sel)? {
        for ei in 0..store.tensors[ti].len() {
            slots.push((ti, ei));
        }
    }
    Ok(slots)
}

/// Number of weight slots the selector covers.
pub fn count_selected(store: &WeightStore, sel: &Selector) -> Result<u64, StoreError> {
    Ok(selected_tensors(store, sel)?
        .into_iter()
        .map(|ti| store.tensors[ti].len() as u64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, role: Role, dims: Vec<u32>, data: Vec<f32>) -> TensorRecord {
        TensorRecord::new(name, role, dims, data).unwrap()
    }

    fn two_tensor_store() -> WeightStore {
        WeightStore::new(vec![
            tensor("a", Role::Hidden, vec![3], vec![0.5, 1.5, 2.5]),
            tensor("b", Role::Output, vec![2], vec![-1.0, 4.0]),
        ])
        .unwrap()
    }

    #[test]
    fn empty_store_is_nine_bytes() {
        let store = WeightStore::default();
        let bytes = store.to_bytes();
        assert_eq!(bytes.len(), 9);
        assert_eq!(&bytes[..4], b"WSTG");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..], &[0, 0, 0, 0]);
    }

    // Hand-encoded fixture: tensor "w", role Output, dims [2], data [1.0, -2.0].
    // IEEE-754 binary32: 1.0 = 0x3F800000, -2.0 = 0xC0000000 (little-endian on disk).
    const FIXTURE: [u8; 26] = [
        0x57, 0x53, 0x54, 0x47, // "WSTG"
        0x01, // version
        0x01, 0x00, 0x00, 0x00, // tensor count
        0x01, 0x00, // name_len
        0x77, // "w"
        0x00, // role Output
        0x01, // rank
        0x02, 0x00, 0x00, 0x00, // dims [2]
        0x00, 0x00, 0x80, 0x3F, // 1.0
        0x00, 0x00, 0x00, 0xC0, // -2.0
    ];

    #[test]
    fn golden_encoding() {
        let store = WeightStore::new(vec![tensor("w", Role::Output, vec![2], vec![1.0, -2.0])])
            .unwrap();
        assert_eq!(store.to_bytes(), FIXTURE);
    }

    #[test]
    fn golden_decoding() {
        let store = WeightStore::from_bytes(&FIXTURE).unwrap();
        assert_eq!(store.tensors().len(), 1);
        let t = &store.tensors()[0];
        assert_eq!(t.name(), "w");
        assert_eq!(t.role(), Role::Output);
        assert_eq!(t.dims(), &[2]);
        assert_eq!(t.data(), &[1.0, -2.0]);
    }

    #[test]
    fn golden_file_fixture_roundtrips() {
        // The committed file pins endianness permanently.
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden.wstg");
        let bytes = std::fs::read(path).unwrap();
        assert_eq!(bytes, FIXTURE);
        let store = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(store.to_bytes(), bytes);
    }

    #[test]
    fn write_count_matches_length() {
        let store = two_tensor_store();
        let mut buf = Vec::new();
        let n = store.write_to(&mut buf).unwrap();
        assert_eq!(n, buf.len() as u64);
    }

    #[test]
    fn roundtrip_with_nan_and_inf() {
        let store = WeightStore::new(vec![tensor(
            "t",
            Role::Hidden,
            vec![4],
            vec![f32::NAN, f32::INFINITY, -0.0, f32::MIN_POSITIVE],
        )])
        .unwrap();
        let bytes = store.to_bytes();
        let parsed = WeightStore::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, store);
        assert_eq!(parsed.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = FIXTURE.to_vec();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            WeightStore::from_bytes(&bytes),
            Err(StoreError::BadMagic(_))
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let mut bytes = FIXTURE.to_vec();
        bytes[4] = 9;
        assert!(matches!(
            WeightStore::from_bytes(&bytes),
            Err(StoreError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn truncation_mid_data_is_detected() {
        let bytes = &FIXTURE[..FIXTURE.len() - 3];
        assert!(matches!(
            WeightStore::from_bytes(bytes),
            Err(StoreError::TruncatedFile)
        ));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let bytes = {
            let mut store = two_tensor_store().to_bytes();
            // Rename tensor "b" to "a" in place: name bytes sit right after
            // each name_len field.
            let pos = store
                .windows(1)
                .rposition(|w| w == b"b")
                .expect("tensor name present");
            store[pos] = b'a';
            store
        };
        assert!(matches!(
            WeightStore::from_bytes(&bytes),
            Err(StoreError::DuplicateTensorName(_))
        ));
        let dup = WeightStore::new(vec![
            tensor("x", Role::Hidden, vec![1], vec![0.0]),
            tensor("x", Role::Output, vec![1], vec![1.0]),
        ]);
        assert!(matches!(dup, Err(StoreError::DuplicateTensorName(_))));
    }

    #[test]
    fn dim_guardrails() {
        assert!(matches!(
            TensorRecord::new("t", Role::Hidden, vec![0], vec![]),
            Err(StoreError::DimOverflow(_))
        ));
        assert!(matches!(
            TensorRecord::new("t", Role::Hidden, vec![1; 9], vec![0.0]),
            Err(StoreError::DimOverflow(_))
        ));
        assert!(matches!(
            TensorRecord::new("t", Role::Hidden, vec![1 << 16, 1 << 16], vec![]),
            Err(StoreError::DimOverflow(_))
        ));
        assert!(matches!(
            TensorRecord::new("t", Role::Hidden, vec![3], vec![0.0]),
            Err(StoreError::DataLengthMismatch { .. })
        ));
    }

    #[test]
    fn select_all_orders_slots_by_store_position() {
        let store = two_tensor_store();
        let slots = select(&store, &Selector::All).unwrap();
        assert_eq!(slots, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]);
    }

    #[test]
    fn select_by_role() {
        let store = two_tensor_store();
        assert_eq!(
            select(&store, &Selector::Output).unwrap(),
            vec![(1, 0), (1, 1)]
        );
        assert_eq!(
            select(&store, &Selector::Hidden).unwrap(),
            vec![(0, 0), (0, 1), (0, 2)]
        );
        assert!(select(&store, &Selector::Pretrained).unwrap().is_empty());
        assert_eq!(count_selected(&store, &Selector::Pretrained).unwrap(), 0);
    }

    #[test]
    fn named_selector_resolves_in_store_order() {
        let store = two_tensor_store();
        let sel = Selector::Named(vec!["b".into(), "a".into()]);
        assert_eq!(
            select(&store, &sel).unwrap(),
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1)]
        );
        let missing = Selector::Named(vec!["absent".into()]);
        assert!(matches!(
            select(&store, &missing),
            Err(StoreError::UnknownTensorName(_))
        ));
    }

    #[test]
    fn role_selectors_skip_bias_tensors_but_named_resolves_them() {
        let store = WeightStore::new(vec![
            tensor("coef", Role::Output, vec![2, 2], vec![1.0; 4]),
            tensor("coef.bias", Role::Output, vec![2], vec![0.0; 2]),
        ])
        .unwrap();
        assert_eq!(count_selected(&store, &Selector::All).unwrap(), 4);
        assert_eq!(count_selected(&store, &Selector::Output).unwrap(), 4);
        let named = Selector::Named(vec!["coef.bias".into()]);
        assert_eq!(count_selected(&store, &named).unwrap(), 2);
    }

    #[test]
    fn paper_shaped_weight_counts() {
        // LR-shaped store: a single 10x256 coefficient tensor.
        let lr = WeightStore::new(vec![tensor(
            "coef",
            Role::Output,
            vec![10, 256],
            vec![0.0; 2560],
        )])
        .unwrap();
        assert_eq!(count_selected(&lr, &Selector::All).unwrap(), 2560);

        // MLP-shaped store: hidden 34,048 plus output 100.
        let mlp = WeightStore::new(vec![
            tensor("hidden0", Role::Hidden, vec![256, 128], vec![0.0; 32768]),
            tensor("hidden1", Role::Hidden, vec![128, 10], vec![0.0; 1280]),
            tensor("output", Role::Output, vec![10, 10], vec![0.0; 100]),
        ])
        .unwrap();
        assert_eq!(count_selected(&mlp, &Selector::All).unwrap(), 34_148);
        assert_eq!(count_selected(&mlp, &Selector::Hidden).unwrap(), 34_048);
        assert_eq!(count_selected(&mlp, &Selector::Output).unwrap(), 100);
    }

    #[test]
    fn selector_parsing() {
        assert_eq!(Selector::parse("all").unwrap(), Selector::All);
        assert_eq!(Selector::parse("output").unwrap(), Selector::Output);
        assert_eq!(
            Selector::parse("named:a, b").unwrap(),
            Selector::Named(vec!["a".into(), "b".into()])
        );
        assert!(Selector::parse("nope").is_err());
        assert!(Selector::parse("named:").is_err());
    }
}
