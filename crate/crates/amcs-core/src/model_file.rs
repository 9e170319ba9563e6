//! The shared on-disk container and the model file built on it.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "AMCS" | version u16 | meta_len u32 | metadata (key=value lines)
//! | chunk_count u32 | chunks...
//! chunk: name_len u32 | name utf-8 | rank u32 | extents u32 x rank
//!        | payload f32 x product(extents), row-major
//! ```
//!
//! The same container carries models, patch caches and measurement
//! dumps, distinguished by the `format` metadata key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::measurement::{MeasurementKind, MeasurementOperator};
use crate::reconnet::{ArchConfig, ConvLayerParams, ReconNetParams, ReconNetParamsBase};
use crate::rng::PRNG_ALGORITHM;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AMCS";
pub const FORMAT_VERSION: u16 = 1;

/// A parsed container: ordered named tensors plus key=value metadata.
#[derive(Clone, Debug, Default)]
pub struct ChunkFile {
    pub metadata: BTreeMap<String, String>,
    pub chunks: Vec<(String, Tensor)>,
}

impl ChunkFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    pub fn require_meta(&self, key: &str, path: &Path) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::format(path, format!("missing metadata key {key:?}")))
    }

    pub fn chunk(&self, name: &str) -> Option<&Tensor> {
        self.chunks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn require_chunk(&self, name: &str, path: &Path) -> Result<&Tensor> {
        self.chunk(name)
            .ok_or_else(|| Error::format(path, format!("missing chunk {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.chunks.len() as u32).to_le_bytes());
        for (name, tensor) in &self.chunks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::format(path, "truncated container"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = take(pos, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };

        if take(&mut pos, 4)? != MAGIC {
            return Err(Error::format(path, "bad magic, not an AMCS container"));
        }
        let ver = take(&mut pos, 2)?;
        let ver = u16::from_le_bytes([ver[0], ver[1]]);
        if ver != FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported format version {ver}"),
            ));
        }
        let meta_len = read_u32(&mut pos)? as usize;
        let meta_bytes = take(&mut pos, meta_len)?;
        let meta_str = std::str::from_utf8(meta_bytes)
            .map_err(|_| Error::format(path, "metadata is not valid UTF-8"))?;
        let mut metadata = BTreeMap::new();
        for line in meta_str.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }

        let chunk_count = read_u32(&mut pos)? as usize;
        let mut chunks = Vec::with_capacity(chunk_count);
        for _ in 0..chunk_count {
            let name_len = read_u32(&mut pos)? as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| Error::format(path, "chunk name is not valid UTF-8"))?
                .to_string();
            let rank = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut pos)? as usize);
            }
            let count: usize = shape.iter().product();
            let payload = take(&mut pos, count * 4)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            chunks.push((
                name,
                Tensor::new(shape, data).map_err(|e| {
                    Error::format(path, format!("bad chunk geometry: {e}"))
                })?,
            ));
        }
        if pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after last chunk"));
        }
        Ok(ChunkFile { metadata, chunks })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// A trained (or freshly initialized) model plus everything needed to
/// run and reproduce it.
#[derive(Clone, Debug)]
pub struct Model {
    pub mode: MeasurementKind,
    pub rate: f64,
    pub m: usize,
    pub arch: ArchConfig,
    pub seed: u64,
    pub init: String,
    pub iterations: usize,
    pub params: ReconNetParams,
    /// The fixed Gaussian operator; present iff fixed mode.
    pub phi: Option<MeasurementOperator>,
}

impl Model {
    /// The measurement operator this model measures with.
    pub fn measurement(&self) -> Result<MeasurementOperator> {
        match self.mode {
            MeasurementKind::FixedGaussian => self
                .phi
                .clone()
                .ok_or_else(|| Error::Mode("fixed-mode model lost its Phi".into())),
            MeasurementKind::Adaptive => self
                .params
                .adaptive_operator()
                .ok_or_else(|| Error::Mode("adaptive-mode model lost its K".into())),
        }
    }

    pub fn to_chunk_file(&self) -> ChunkFile {
        let mut metadata = BTreeMap::new();
        metadata.insert("format".into(), "amcs-model".into());
        metadata.insert("mode".into(), self.mode.as_str().into());
        metadata.insert("rate".into(), format!("{}", self.rate));
        metadata.insert("m".into(), format!("{}", self.m));
        metadata.insert("arch".into(), self.arch.encode());
        metadata.insert("seed".into(), format!("{}", self.seed));
        metadata.insert("prng".into(), PRNG_ALGORITHM.into());
        metadata.insert("init".into(), self.init.clone());
        metadata.insert("iterations".into(), format!("{}", self.iterations));

        let mut chunks = Vec::new();
        chunks.push(("fc_weight".to_string(), self.params.fc_weight.clone()));
        chunks.push(("fc_bias".to_string(), self.params.fc_bias.clone()));
        for (i, layer) in self.params.conv.iter().enumerate() {
            chunks.push((format!("conv{i}.kernels"), layer.kernels.clone()));
            chunks.push((format!("conv{i}.bias"), layer.bias.clone()));
        }
        match self.mode {
            MeasurementKind::FixedGaussian => {
                if let Some(phi) = &self.phi {
                    chunks.push(("phi".to_string(), phi.matrix().clone()));
                }
            }
            MeasurementKind::Adaptive => {
                if let Some(k) = &self.params.measurement_k {
                    chunks.push(("k".to_string(), k.clone()));
                }
            }
        }
        ChunkFile { metadata, chunks }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_chunk_file().save(path)
    }

    pub fn from_chunk_file(file: &ChunkFile, path: &Path) -> Result<Self> {
        let format = file.require_meta("format", path)?;
        if format != "amcs-model" {
            return Err(Error::format(
                path,
                format!("expected an amcs-model file, found format {format:?}"),
            ));
        }
        let mode = MeasurementKind::parse(file.require_meta("mode", path)?)?;
        let rate: f64 = file
            .require_meta("rate", path)?
            .parse()
            .map_err(|_| Error::format(path, "bad rate"))?;
        let m: usize = file
            .require_meta("m", path)?
            .parse()
            .map_err(|_| Error::format(path, "bad m"))?;
        let arch = ArchConfig::parse(file.require_meta("arch", path)?)?;
        let seed: u64 = file
            .require_meta("seed", path)?
            .parse()
            .map_err(|_| Error::format(path, "bad seed"))?;
        let init = file.require_meta("init", path)?.to_string();
        let iterations: usize = file
            .meta("iterations")
            .unwrap_or("0")
            .parse()
            .map_err(|_| Error::format(path, "bad iteration count"))?;

        let fc_weight = file.require_chunk("fc_weight", path)?.clone();
        let fc_bias = file.require_chunk("fc_bias", path)?.clone();
        let mut conv = Vec::with_capacity(arch.layers.len());
        for i in 0..arch.layers.len() {
            conv.push(ConvLayerParams {
                kernels: file
                    .require_chunk(&format!("conv{i}.kernels"), path)?
                    .clone(),
                bias: file.require_chunk(&format!("conv{i}.bias"), path)?.clone(),
                has_relu: arch.has_relu(i),
            });
        }
        let (phi, measurement_k) = match mode {
            MeasurementKind::FixedGaussian => {
                let matrix = file.require_chunk("phi", path)?.clone();
                (
                    Some(MeasurementOperator::from_parts(
                        MeasurementKind::FixedGaussian,
                        matrix,
                        rate,
                        Some(seed),
                    )?),
                    None,
                )
            }
            MeasurementKind::Adaptive => {
                (None, Some(file.require_chunk("k", path)?.clone()))
            }
        };
        let params = ReconNetParamsBase {
            fc_weight,
            fc_bias,
            conv,
            measurement_k,
            m,
            rate,
        };
        params.validate(&arch)?;
        Ok(Model {
            mode,
            rate,
            m,
            arch,
            seed,
            init,
            iterations,
            params,
            phi,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ChunkFile::load(path)?;
        Self::from_chunk_file(&file, path)
    }
}
