//! TVWD: binary container for named tensors.
//!
//! Layout: magic `"TVWD"`, version `u32` LE, header length `u64` LE, UTF-8
//! JSON header (name/dtype/shape/offset table), then the raw little-endian
//! IEEE-754 payload. Offsets are relative to the payload start, 64-byte
//! aligned and non-overlapping. The same container stores decoder weights
//! (`.tvwd`) and single latent/video tensors (`.tvt`, entry name `"tensor"`).

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor5;

pub const MAGIC: &[u8; 4] = b"TVWD";
pub const VERSION: u32 = 1;
const ALIGN: u64 = 64;
/// Entry name used when a container holds one bare tensor.
pub const SINGLE_TENSOR_NAME: &str = "tensor";

/// A named tensor of rank 1..=5.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<S> {
    pub dims: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> NamedTensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 5 {
            return Err(Error::Validation(format!(
                "tensor rank must be 1..=5, got {}",
                dims.len()
            )));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} want {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_tensor5(t: Tensor5<S>) -> Self {
        Self { dims: t.shape().to_vec(), data: t.into_vec() }
    }

    pub fn to_tensor5(&self) -> Result<Tensor5<S>> {
        if self.dims.len() != 5 {
            return Err(Error::Shape(format!(
                "entry has rank {}, expected 5",
                self.dims.len()
            )));
        }
        Tensor5::from_vec(
            [self.dims[0], self.dims[1], self.dims[2], self.dims[3], self.dims[4]],
            self.data.clone(),
        )
    }
}

/// Ordered map of named tensors.
#[derive(Debug, Clone, Default)]
pub struct WeightStore<S> {
    entries: IndexMap<String, NamedTensor<S>>,
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::Validation("entry name is empty".into()));
    }
    if !name.is_ascii() {
        return Err(Error::Validation(format!("entry name not ASCII: {name:?}")));
    }
    Ok(())
}

impl<S: Scalar> WeightStore<S> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: NamedTensor<S>) -> Result<()> {
        validate_name(name)?;
        if self.entries.contains_key(name) {
            return Err(Error::Validation(format!("duplicate entry name: {name}")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn insert_tensor5(&mut self, name: &str, t: Tensor5<S>) -> Result<()> {
        self.insert(name, NamedTensor::from_tensor5(t))
    }

    pub fn insert_vec(&mut self, name: &str, v: Vec<S>) -> Result<()> {
        let n = v.len();
        self.insert(name, NamedTensor::new(vec![n], v)?)
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor<S>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Validation(format!("missing entry: {name}")))
    }

    pub fn tensor5(&self, name: &str) -> Result<Tensor5<S>> {
        self.require(name)?.to_tensor5()
    }

    pub fn vec1(&self, name: &str) -> Result<Vec<S>> {
        let e = self.require(name)?;
        if e.dims.len() != 1 {
            return Err(Error::Shape(format!(
                "entry {name} has rank {}, expected 1",
                e.dims.len()
            )));
        }
        Ok(e.data.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NamedTensor<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> u64 {
        self.entries.values().map(|e| e.data.len() as u64).sum()
    }

    pub fn cast<T: Scalar>(&self) -> WeightStore<T> {
        let mut out = WeightStore::new();
        for (k, v) in &self.entries {
            out.entries.insert(
                k.clone(),
                NamedTensor {
                    dims: v.dims.clone(),
                    data: v.data.iter().map(|&x| T::of_f64(x.as_f64())).collect(),
                },
            );
        }
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    entries: Vec<HeaderEntry>,
}

fn align_up(v: u64, a: u64) -> u64 {
    v.div_ceil(a) * a
}

impl WeightStore<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut header = Header { entries: Vec::with_capacity(self.entries.len()) };
        let mut offset = 0u64;
        for (name, e) in &self.entries {
            offset = align_up(offset, ALIGN);
            header.entries.push(HeaderEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: e.dims.clone(),
                offset,
            });
            offset += (e.data.len() * 4) as u64;
        }
        let header_bytes = serde_json::to_vec(&header)?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&VERSION.to_le_bytes())?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        let mut payload = vec![0u8; offset as usize];
        for (he, e) in header.entries.iter().zip(self.entries.values()) {
            let mut at = he.offset as usize;
            for &v in &e.data {
                payload[at..at + 4].copy_from_slice(&v.to_le_bytes());
                at += 4;
            }
        }
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format(format!(
                "file too short for TVWD preamble: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:02x?}, expected \"TVWD\"",
                &bytes[0..4]
            )));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = 16u64
            .checked_add(header_len)
            .ok_or_else(|| Error::Format("header length overflows".into()))?;
        if header_end > bytes.len() as u64 {
            return Err(Error::Format(format!(
                "declared header length {header_len} exceeds file size {}",
                bytes.len()
            )));
        }
        let header_bytes = &bytes[16..header_end as usize];
        let header_str = std::str::from_utf8(header_bytes)
            .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
        let header: Header = serde_json::from_str(header_str)
            .map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
        let payload = &bytes[header_end as usize..];

        let mut store = Self::new();
        // (start, end, name) spans for the overlap check.
        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.entries.len());
        for he in &header.entries {
            validate_name(&he.name)?;
            if he.dtype != "f32" {
                return Err(Error::Format(format!(
                    "unsupported dtype {:?} for entry {}",
                    he.dtype, he.name
                )));
            }
            if he.shape.is_empty() || he.shape.len() > 5 {
                return Err(Error::Validation(format!(
                    "entry {} has rank {}, expected 1..=5",
                    he.name,
                    he.shape.len()
                )));
            }
            if he.offset % ALIGN != 0 {
                return Err(Error::Validation(format!(
                    "entry {} offset {} not {ALIGN}-byte aligned",
                    he.name, he.offset
                )));
            }
            let numel = he
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Validation(format!("entry {} extent overflow", he.name)))?;
            let nbytes = (numel as u64)
                .checked_mul(4)
                .ok_or_else(|| Error::Validation(format!("entry {} size overflow", he.name)))?;
            let end = he
                .offset
                .checked_add(nbytes)
                .ok_or_else(|| Error::Validation(format!("entry {} span overflow", he.name)))?;
            if end > payload.len() as u64 {
                return Err(Error::Corruption(format!(
                    "entry {} spans [{}, {end}) beyond payload of {} bytes",
                    he.name, he.offset, payload.len()
                )));
            }
            spans.push((he.offset, end, &he.name));
            let mut data = Vec::with_capacity(numel);
            let base = he.offset as usize;
            for i in 0..numel {
                data.push(f32::from_le_bytes(
                    payload[base + 4 * i..base + 4 * i + 4].try_into().unwrap(),
                ));
            }
            store.insert(&he.name, NamedTensor { dims: he.shape.clone(), data })?;
        }
        spans.sort_unstable();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::Validation(format!(
                    "entries {} and {} overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }
        Ok(store)
    }

    /// Write one bare tensor (`.tvt` convention).
    pub fn save_single(t: &Tensor5<f32>, path: impl AsRef<Path>) -> Result<()> {
        let mut s = Self::new();
        s.insert_tensor5(SINGLE_TENSOR_NAME, t.clone())?;
        s.save(path)
    }

    /// Read one bare tensor (`.tvt` convention).
    pub fn load_single(path: impl AsRef<Path>) -> Result<Tensor5<f32>> {
        let s = Self::load(path)?;
        s.tensor5(SINGLE_TENSOR_NAME)
    }
}

/// One shape-mismatch line of a validation report.
#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub name: String,
    pub expected: Vec<usize>,
    pub found: Vec<usize>,
}

/// Store-vs-config cross-check; empty iff the store is loadable.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub mismatched: Vec<Mismatch>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.mismatched.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return write!(f, "store matches config");
        }
        for m in &self.missing {
            writeln!(f, "missing: {m}")?;
        }
        for e in &self.extra {
            writeln!(f, "extra: {e}")?;
        }
        for m in &self.mismatched {
            writeln!(
                f,
                "shape mismatch: {} expected {:?}, found {:?}",
                m.name, m.expected, m.found
            )?;
        }
        Ok(())
    }
}

/// Compare a store against the `(name, shape)` list a config demands.
pub fn validate_against<S: Scalar>(
    store: &WeightStore<S>,
    expected: &[(String, Vec<usize>)],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (name, dims) in expected {
        match store.get(name) {
            None => report.missing.push(name.clone()),
            Some(e) if &e.dims != dims => report.mismatched.push(Mismatch {
                name: name.clone(),
                expected: dims.clone(),
                found: e.dims.clone(),
            }),
            Some(_) => {}
        }
    }
    let wanted: std::collections::HashSet<&str> =
        expected.iter().map(|(n, _)| n.as_str()).collect();
    for name in store.names() {
        if !wanted.contains(name) {
            report.extra.push(name.to_string());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tvwd");
        let s = WeightStore::<f32>::new();
        s.save(&path).unwrap();
        let loaded = WeightStore::load(&path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn single_tensor_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tvt");
        // Include a NaN bit pattern and a denormal: bitwise means bitwise.
        let data = vec![1.0f32, -0.0, f32::from_bits(0x7fc0_1234), f32::from_bits(1), 2.5, -3.75];
        let t = Tensor5::from_vec([1, 2, 3, 1, 1], data.clone()).unwrap();
        let mut s = WeightStore::new();
        s.insert(SINGLE_TENSOR_NAME, NamedTensor::new(vec![1, 2, 3, 1, 1], data.clone()).unwrap())
            .unwrap();
        s.save(&path).unwrap();
        let loaded = WeightStore::load(&path).unwrap();
        let got = loaded.get(SINGLE_TENSOR_NAME).unwrap();
        assert_eq!(got.dims, vec![1, 2, 3, 1, 1]);
        for (a, b) in got.data.iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let _ = t;
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = WeightStore::<f32>::new();
        s.insert_vec("a/b", vec![1.0]).unwrap();
        assert!(matches!(s.insert_vec("a/b", vec![2.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut s = WeightStore::<f32>::new();
        s.insert_vec("w", vec![1.0, 2.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tvwd");
        s.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        assert!(matches!(WeightStore::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        assert!(matches!(WeightStore::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn overlapping_offsets_rejected() {
        // Hand-crafted header with two entries sharing offset 0.
        let header = br#"{"entries":[
            {"name":"a","dtype":"f32","shape":[4],"offset":0},
            {"name":"b","dtype":"f32","shape":[4],"offset":0}]}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 64]);
        assert!(matches!(WeightStore::from_bytes(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let mut s = WeightStore::<f32>::new();
        s.insert_vec("w", vec![1.0; 32]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.tvwd");
        s.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 16];
        assert!(matches!(WeightStore::from_bytes(cut), Err(Error::Corruption(_))));
    }

    #[test]
    fn validation_report_faults() {
        let mut s = WeightStore::<f32>::new();
        s.insert_vec("a", vec![0.0; 3]).unwrap();
        s.insert(
            "b",
            NamedTensor::new(vec![2, 2], vec![0.0; 4]).unwrap(),
        )
        .unwrap();
        let expected = vec![
            ("a".to_string(), vec![3usize]),
            ("b".to_string(), vec![4usize]),
            ("c".to_string(), vec![1usize]),
        ];
        let r = validate_against(&s, &expected);
        assert_eq!(r.missing, vec!["c"]);
        assert!(r.extra.is_empty());
        assert_eq!(r.mismatched.len(), 1);
        assert_eq!(r.mismatched[0].name, "b");
    }

    use crate::error::Error;
}
