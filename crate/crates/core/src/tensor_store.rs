//! Weight container I/O and architecture manifests.
//!
//! Container layout: an 8-byte little-endian header length `N`, then `N` bytes
//! of UTF-8 JSON mapping each tensor name to `{"dtype", "shape", "data_offsets"}`,
//! then the little-endian tensor payloads. Offsets are relative to the first
//! byte after the header. Writers emit names in sorted order with contiguous
//! offsets, so equal tensor maps always serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense row-major tensor with an F32 or F64 payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Validation(format!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            )));
        }
        let finite = match &data {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
        };
        if !finite {
            return Err(Error::Validation("tensor contains NaN or Inf".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f64.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Interprets a rank-2 tensor (or a rank-1 tensor as a single row) as a matrix.
    pub fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        let (r, c) = match self.shape.as_slice() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => {
                return Err(Error::Dimension(format!(
                    "tensor of rank {} is not a matrix",
                    s.len()
                )))
            }
        };
        let data = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        };
        Matrix::from_vec(r, c, data)
    }

    /// Builds a tensor of the given shape and dtype from matrix values.
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>, shape: Vec<usize>, dtype: DType) -> Result<Self> {
        let data = match dtype {
            DType::F32 => TensorData::F32(m.as_slice().iter().map(|v| v.to_f64_lossy() as f32).collect()),
            DType::F64 => TensorData::F64(m.as_slice().iter().map(|v| v.to_f64_lossy()).collect()),
        };
        Self::new(shape, data)
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: DType,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

/// Serializes a tensor map into the canonical container byte layout.
pub fn encode_container(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut header = BTreeMap::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        if name.is_empty() {
            return Err(Error::Validation("tensor names must be non-empty".into()));
        }
        let bytes = (t.len() * t.dtype().size_of()) as u64;
        header.insert(
            name.as_str(),
            HeaderEntry {
                dtype: t.dtype(),
                shape: t.shape.iter().map(|&d| d as u64).collect(),
                data_offsets: [offset, offset + bytes],
            },
        );
        offset += bytes;
    }
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors.values() {
        t.write_le(&mut out);
    }
    Ok(out)
}

/// Parses container bytes, validating the header, offsets and values.
pub fn decode_container(bytes: &[u8]) -> Result<TensorMap> {
    if bytes.len() < 8 {
        return Err(Error::Format("file shorter than the 8-byte header length".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body_start = 8usize
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format(format!("header length {n} exceeds file size")))?;
    let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&bytes[8..body_start])
        .map_err(|e| Error::Format(format!("header is not a valid tensor index: {e}")))?;
    let body = &bytes[body_start..];

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.len());
    let mut out = TensorMap::new();
    for (name, entry) in &header {
        if name.is_empty() {
            return Err(Error::Format("empty tensor name".into()));
        }
        let [begin, end] = entry.data_offsets;
        let shape: Vec<usize> = entry.shape.iter().map(|&d| d as usize).collect();
        let n_elem = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}`: shape overflows")))?;
        let expected = (n_elem * entry.dtype.size_of()) as u64;
        if end < begin || end - begin != expected {
            return Err(Error::Corruption(format!(
                "`{name}`: offsets [{begin}, {end}] do not hold {expected} bytes"
            )));
        }
        if end as usize > body.len() {
            return Err(Error::Corruption(format!(
                "`{name}`: offsets [{begin}, {end}] overrun a {}-byte payload",
                body.len()
            )));
        }
        spans.push((begin, end, name));
        let raw = &body[begin as usize..end as usize];
        let data = match entry.dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Validation(format!("`{name}`: {e}")))?;
        out.insert(name.clone(), tensor);
    }

    spans.sort_unstable();
    for w in spans.windows(2) {
        let (_, end_a, a) = w[0];
        let (begin_b, _, b) = w[1];
        if begin_b < end_a {
            return Err(Error::Corruption(format!("`{a}` and `{b}` overlap")));
        }
    }
    Ok(out)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorMap> {
    decode_container(&fs::read(path)?)
}

pub fn write_container(tensors: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_container(tensors)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Embedding, `L` attention + GLU MLP blocks, final norm and output projection.
    GluTransformer,
    /// `L` standalone GLU MLP blocks.
    GluMlp,
    /// `L` standalone two-layer ReLU MLP blocks (`up_proj`, `down_proj`).
    PlainMlp,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::GluTransformer => "glu-transformer",
            Family::GluMlp => "glu-mlp",
            Family::PlainMlp => "plain-mlp",
        }
    }
}

/// Architecture description: dimensions plus the role → tensor-name table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchManifest {
    pub family: Family,
    #[serde(rename = "L")]
    pub n_blocks: usize,
    pub d_emb: usize,
    pub d_mlp: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
    pub n_heads: usize,
    pub role_map: BTreeMap<String, String>,
}

impl ArchManifest {
    /// Manifest whose tensor names equal the role keys.
    pub fn with_default_roles(
        family: Family,
        n_blocks: usize,
        d_emb: usize,
        d_mlp: usize,
        vocab: usize,
        n_heads: usize,
    ) -> Self {
        let mut m = Self {
            family,
            n_blocks,
            d_emb,
            d_mlp,
            vocab,
            n_heads,
            role_map: BTreeMap::new(),
        };
        m.role_map = m
            .required_roles()
            .into_iter()
            .map(|(role, _)| (role.clone(), role))
            .collect();
        m
    }

    /// Every role the family needs, with its expected shape.
    pub fn required_roles(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h, v) = (self.d_emb, self.d_mlp, self.vocab);
        let mut roles = Vec::new();
        if self.family == Family::GluTransformer {
            roles.push(("embedding".to_string(), vec![v, d]));
        }
        for i in 0..self.n_blocks {
            if self.family == Family::GluTransformer {
                roles.push((format!("input_layernorm.{i}"), vec![d]));
                for w in ["W_Q", "W_K", "W_V", "W_O"] {
                    roles.push((format!("{w}.{i}"), vec![d, d]));
                }
                roles.push((format!("post_attn_layernorm.{i}"), vec![d]));
            }
            if self.family != Family::PlainMlp {
                roles.push((format!("gate_proj.{i}"), vec![h, d]));
            }
            roles.push((format!("up_proj.{i}"), vec![h, d]));
            roles.push((format!("down_proj.{i}"), vec![d, h]));
        }
        if self.family == Family::GluTransformer {
            roles.push(("final_layernorm".to_string(), vec![d]));
            roles.push(("output".to_string(), vec![d, v]));
        }
        roles
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.d_emb == 0 || self.d_mlp == 0 {
            return Err(Error::Manifest("L, d_emb and d_mlp must be positive".into()));
        }
        if self.family == Family::GluTransformer {
            if self.vocab == 0 || self.n_heads == 0 {
                return Err(Error::Manifest("V and n_heads must be positive".into()));
            }
            if self.d_emb % self.n_heads != 0 {
                return Err(Error::Manifest(format!(
                    "d_emb = {} is not divisible by n_heads = {}",
                    self.d_emb, self.n_heads
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// A manifest together with the tensors its roles resolve to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    manifest: ArchManifest,
    tensors: TensorMap,
}

impl ModelBundle {
    /// Checks that every required role resolves to a tensor of the expected shape.
    pub fn new(manifest: ArchManifest, tensors: TensorMap) -> Result<Self> {
        manifest.validate()?;
        for (role, expected) in manifest.required_roles() {
            let name = manifest
                .role_map
                .get(&role)
                .ok_or_else(|| Error::MissingRole(role.clone()))?;
            let t = tensors.get(name).ok_or_else(|| Error::MissingRole(role.clone()))?;
            if t.shape() != expected.as_slice() {
                return Err(Error::Shape {
                    role,
                    expected,
                    got: t.shape().to_vec(),
                });
            }
        }
        for (role, name) in &manifest.role_map {
            if !tensors.contains_key(name) {
                return Err(Error::Manifest(format!(
                    "role `{role}` points at missing tensor `{name}`"
                )));
            }
        }
        Ok(Self { manifest, tensors })
    }

    pub fn manifest(&self) -> &ArchManifest {
        &self.manifest
    }

    pub fn tensors(&self) -> &TensorMap {
        &self.tensors
    }

    pub fn into_tensors(self) -> TensorMap {
        self.tensors
    }

    pub fn tensor(&self, role: &str) -> Result<&Tensor> {
        self.manifest
            .role_map
            .get(role)
            .and_then(|name| self.tensors.get(name))
            .ok_or_else(|| Error::MissingRole(role.to_string()))
    }

    pub fn matrix<T: Scalar>(&self, role: &str) -> Result<Matrix<T>> {
        self.tensor(role)?.to_matrix()
    }

    /// Storage dtype shared by every role tensor, if uniform.
    pub fn dtype(&self) -> DType {
        let mut all = self.tensors.values().map(Tensor::dtype);
        let first = all.next().unwrap_or(DType::F64);
        if all.all(|d| d == first) {
            first
        } else {
            DType::F64
        }
    }
}

pub fn load_model(container: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<ModelBundle> {
    let manifest = ArchManifest::read(manifest)?;
    let tensors = read_container(container)?;
    ModelBundle::new(manifest, tensors)
}
