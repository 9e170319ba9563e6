//! Training corpus construction: 33x33 patch extraction at stride 14,
//! train/validation splitting, and precomputed measurements for fixed
//! mode.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::measurement::{MeasurementOperator, BLOCK_LEN, BLOCK_SIDE};
use crate::model_file::ChunkFile;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const PATCH_SIDE: usize = BLOCK_SIDE;
pub const DEFAULT_STRIDE: usize = 14;

/// The set of vectorized training patches, optionally with their
/// precomputed fixed-mode measurements, plus the train/validation split.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    /// `T x 1089`, each row a row-major vectorized patch in [0, 1].
    pub patches: Tensor,
    /// `T x m`, row i = Phi . patch i; fixed mode only.
    pub measurements: Option<Tensor>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    /// Names of the source images that contributed patches.
    pub source_manifest: Vec<String>,
    /// Names of images skipped for being smaller than a patch.
    pub skipped: Vec<String>,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.patches.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        &self.patches.data()[i * BLOCK_LEN..(i + 1) * BLOCK_LEN]
    }

    pub fn measurement(&self, i: usize) -> Option<&[f32]> {
        self.measurements
            .as_ref()
            .map(|m| &m.data()[i * m.shape()[1]..(i + 1) * m.shape()[1]])
    }
}

/// Patches per axis for one image extent: `floor((dim - patch)/stride) + 1`.
pub fn patches_per_axis(dim: usize, patch: usize, stride: usize) -> usize {
    if dim < patch {
        0
    } else {
        (dim - patch) / stride + 1
    }
}

/// Slide a `patch x patch` window at the given stride over every image,
/// top-left aligned, dropping windows that would overrun the border.
/// Pixel values are scaled to [0, 1]. Images smaller than the patch are
/// skipped and recorded.
pub fn extract_patches(
    images: &[(String, GrayImage)],
    patch: usize,
    stride: usize,
) -> Result<PatchDataset> {
    if patch == 0 || stride == 0 {
        return Err(Error::Config("patch and stride must be positive".into()));
    }
    let mut rows: Vec<f32> = Vec::new();
    let mut count = 0usize;
    let mut source_manifest = Vec::new();
    let mut skipped = Vec::new();
    for (name, img) in images {
        let ny = patches_per_axis(img.height(), patch, stride);
        let nx = patches_per_axis(img.width(), patch, stride);
        if ny == 0 || nx == 0 {
            skipped.push(name.clone());
            continue;
        }
        source_manifest.push(name.clone());
        for by in 0..ny {
            for bx in 0..nx {
                let y0 = by * stride;
                let x0 = bx * stride;
                for y in 0..patch {
                    for x in 0..patch {
                        rows.push(img.at(y0 + y, x0 + x) as f32 / 255.0);
                    }
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Dataset(
            "no image yielded any patch; all inputs smaller than the patch size".into(),
        ));
    }
    Ok(PatchDataset {
        patches: Tensor::new(vec![count, patch * patch], rows)?,
        measurements: None,
        train_indices: (0..count).collect(),
        validation_indices: Vec::new(),
        source_manifest,
        skipped,
    })
}

/// Deterministic seeded shuffle; the last `ceil(fraction * T)` indices
/// of the shuffled order become the validation set.
pub fn split_validation(dataset: &mut PatchDataset, fraction: f64, seed: u64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(Error::Config(format!(
            "validation fraction must be in (0, 0.5), got {fraction}"
        )));
    }
    let t = dataset.len();
    let n_val = ((fraction * t as f64).ceil() as usize).min(t.saturating_sub(1));
    let mut order: Vec<usize> = (0..t).collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut order);
    dataset.validation_indices = order.split_off(t - n_val);
    dataset.train_indices = order;
    Ok(())
}

/// Precompute `y_i = op . x_i` for every patch.
pub fn attach_measurements(dataset: &mut PatchDataset, op: &MeasurementOperator) -> Result<()> {
    let t = dataset.len();
    let m = op.m();
    let mut data = Vec::with_capacity(t * m);
    for i in 0..t {
        data.extend_from_slice(&op.measure(dataset.patch(i))?);
    }
    dataset.measurements = Some(Tensor::new(vec![t, m], data)?);
    Ok(())
}

/// Read an image manifest: one path per line, relative paths resolved
/// against the manifest's directory; `#` starts a comment.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = PathBuf::from(line);
        out.push(if p.is_absolute() { p } else { base.join(p) });
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "manifest {} lists no images",
            path.display()
        )));
    }
    Ok(out)
}

/// Load every image in a manifest as `(stem name, image)` pairs.
pub fn load_manifest_images(path: impl AsRef<Path>) -> Result<Vec<(String, GrayImage)>> {
    let paths = load_manifest(path)?;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        out.push((name, crate::image_io::read_pgm(&p)?));
    }
    Ok(out)
}

/// Persist the patches (and measurements, when attached) in the shared
/// chunk container.
pub fn save_patch_cache(dataset: &PatchDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut metadata = BTreeMap::new();
    metadata.insert("format".into(), "amcs-patches".into());
    metadata.insert("count".into(), format!("{}", dataset.len()));
    metadata.insert("patch".into(), format!("{PATCH_SIDE}"));
    metadata.insert("sources".into(), dataset.source_manifest.join(";"));
    let mut chunks = vec![("patches".to_string(), dataset.patches.clone())];
    if let Some(m) = &dataset.measurements {
        chunks.push(("measurements".to_string(), m.clone()));
    }
    ChunkFile { metadata, chunks }.save(path)
}

pub fn load_patch_cache(path: impl AsRef<Path>) -> Result<PatchDataset> {
    let path = path.as_ref();
    let file = ChunkFile::load(path)?;
    if file.require_meta("format", path)? != "amcs-patches" {
        return Err(Error::format(path, "not a patch cache"));
    }
    let patches = file.require_chunk("patches", path)?.clone();
    if patches.rank() != 2 || patches.shape()[1] != BLOCK_LEN {
        return Err(Error::format(path, "patch chunk must be T x 1089"));
    }
    let count = patches.shape()[0];
    let measurements = file.chunk("measurements").cloned();
    let source_manifest = file
        .meta("sources")
        .map(|s| s.split(';').map(str::to_string).collect())
        .unwrap_or_default();
    Ok(PatchDataset {
        patches,
        measurements,
        train_indices: (0..count).collect(),
        validation_indices: Vec::new(),
        source_manifest,
        skipped: Vec::new(),
    })
}
