//! Whole-image reconstruction: symmetric padding to a multiple of 33,
//! non-overlapping tiling, independent per-block recovery, reassembly
//! and crop.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::measurement::{MeasurementKind, BLOCK_LEN, BLOCK_SIDE};
use crate::model_file::{ChunkFile, Model};
use crate::reconnet::forward_recon;
use crate::tensor::Tensor;

/// Pad widths applied to the right and bottom edges (the only padded
/// sides; tiling is anchored top-left).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadSpec {
    pub right: usize,
    pub bottom: usize,
}

/// An image split into row-major 33x33 blocks.
#[derive(Clone, Debug)]
pub struct TiledImage {
    pub original_h: usize,
    pub original_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    pub pad_spec: PadSpec,
    /// Row-major blocks, each 1089 bytes, themselves row-major.
    pub blocks: Vec<Vec<u8>>,
}

/// Source index for a padded position along one axis: mirror reflection
/// that does not repeat the edge pixel, falling back to edge replication
/// when the axis is too short to reflect from.
fn reflect_index(pos: usize, dim: usize, pad: usize) -> usize {
    if pos < dim {
        return pos;
    }
    if pad <= dim - 1 {
        // Mirror without the edge: dim, dim+1, ... map to dim-2, dim-3, ...
        2 * dim - 2 - pos
    } else {
        pos.min(dim - 1)
    }
}

/// Pad the right and bottom edges to the next multiple of `multiple` by
/// mirror reflection (edge pixel not repeated). Already-aligned images
/// come back unchanged.
pub fn pad_symmetric(image: &GrayImage, multiple: usize) -> Result<(GrayImage, PadSpec)> {
    if multiple == 0 {
        return Err(Error::Config("padding multiple must be positive".into()));
    }
    let (h, w) = (image.height(), image.width());
    let padded_h = h.div_ceil(multiple) * multiple;
    let padded_w = w.div_ceil(multiple) * multiple;
    let spec = PadSpec {
        right: padded_w - w,
        bottom: padded_h - h,
    };
    if spec.right == 0 && spec.bottom == 0 {
        return Ok((image.clone(), spec));
    }
    let mut pixels = vec![0u8; padded_h * padded_w];
    for y in 0..padded_h {
        let sy = reflect_index(y, h, spec.bottom);
        for x in 0..padded_w {
            let sx = reflect_index(x, w, spec.right);
            pixels[y * padded_w + x] = image.at(sy, sx);
        }
    }
    Ok((GrayImage::new(padded_w, padded_h, pixels)?, spec))
}

/// Split a padded image into non-overlapping 33x33 blocks, row-major.
pub fn tile(padded: &GrayImage, original_h: usize, original_w: usize, pad_spec: PadSpec) -> Result<TiledImage> {
    let (h, w) = (padded.height(), padded.width());
    if h % BLOCK_SIDE != 0 || w % BLOCK_SIDE != 0 {
        return Err(Error::Shape(format!(
            "tiling needs dimensions that are multiples of {BLOCK_SIDE}, got {h}x{w}"
        )));
    }
    let by = h / BLOCK_SIDE;
    let bx = w / BLOCK_SIDE;
    let mut blocks = Vec::with_capacity(by * bx);
    for ty in 0..by {
        for tx in 0..bx {
            let mut block = Vec::with_capacity(BLOCK_LEN);
            for y in 0..BLOCK_SIDE {
                let row = (ty * BLOCK_SIDE + y) * w + tx * BLOCK_SIDE;
                block.extend_from_slice(&padded.pixels()[row..row + BLOCK_SIDE]);
            }
            blocks.push(block);
        }
    }
    Ok(TiledImage {
        original_h,
        original_w,
        padded_h: h,
        padded_w: w,
        pad_spec,
        blocks,
    })
}

/// Rebuild the padded image from its blocks.
pub fn reassemble(tiled: &TiledImage) -> Result<GrayImage> {
    let (h, w) = (tiled.padded_h, tiled.padded_w);
    let bx = w / BLOCK_SIDE;
    let mut pixels = vec![0u8; h * w];
    for (i, block) in tiled.blocks.iter().enumerate() {
        if block.len() != BLOCK_LEN {
            return Err(Error::Shape(format!(
                "block {i} has {} pixels, expected {BLOCK_LEN}",
                block.len()
            )));
        }
        let ty = i / bx;
        let tx = i % bx;
        for y in 0..BLOCK_SIDE {
            let dst = (ty * BLOCK_SIDE + y) * w + tx * BLOCK_SIDE;
            pixels[dst..dst + BLOCK_SIDE].copy_from_slice(&block[y * BLOCK_SIDE..(y + 1) * BLOCK_SIDE]);
        }
    }
    GrayImage::new(w, h, pixels)
}

/// Crop to the top-left `h x w` region.
pub fn crop(image: &GrayImage, h: usize, w: usize) -> Result<GrayImage> {
    if h > image.height() || w > image.width() {
        return Err(Error::Shape(format!(
            "cannot crop {}x{} to {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = y * image.width();
        pixels.extend_from_slice(&image.pixels()[row..row + w]);
    }
    GrayImage::new(w, h, pixels)
}

/// Per-block measurements of one image, together with the geometry
/// needed to reconstruct from them alone.
#[derive(Clone, Debug)]
pub struct BlockMeasurements {
    pub kind: MeasurementKind,
    pub rate: f64,
    pub m: usize,
    pub original_h: usize,
    pub original_w: usize,
    pub padded_h: usize,
    pub padded_w: usize,
    /// `n_blocks x m`, blocks in row-major tile order.
    pub rows: Tensor,
}

impl BlockMeasurements {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut metadata = BTreeMap::new();
        metadata.insert("format".into(), "amcs-measurements".into());
        metadata.insert("kind".into(), self.kind.as_str().into());
        metadata.insert("rate".into(), format!("{}", self.rate));
        metadata.insert("m".into(), format!("{}", self.m));
        metadata.insert("original_h".into(), format!("{}", self.original_h));
        metadata.insert("original_w".into(), format!("{}", self.original_w));
        metadata.insert("padded_h".into(), format!("{}", self.padded_h));
        metadata.insert("padded_w".into(), format!("{}", self.padded_w));
        ChunkFile {
            metadata,
            chunks: vec![("measurements".into(), self.rows.clone())],
        }
        .save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ChunkFile::load(path)?;
        if file.require_meta("format", path)? != "amcs-measurements" {
            return Err(Error::format(path, "not a measurement dump"));
        }
        let parse_dim = |key: &str| -> Result<usize> {
            file.require_meta(key, path)?
                .parse()
                .map_err(|_| Error::format(path, format!("bad {key}")))
        };
        let rows = file.require_chunk("measurements", path)?.clone();
        let m = parse_dim("m")?;
        if rows.rank() != 2 || rows.shape()[1] != m {
            return Err(Error::format(path, "measurement chunk must be n_blocks x m"));
        }
        Ok(BlockMeasurements {
            kind: MeasurementKind::parse(file.require_meta("kind", path)?)?,
            rate: file
                .require_meta("rate", path)?
                .parse()
                .map_err(|_| Error::format(path, "bad rate"))?,
            m,
            original_h: parse_dim("original_h")?,
            original_w: parse_dim("original_w")?,
            padded_h: parse_dim("padded_h")?,
            padded_w: parse_dim("padded_w")?,
            rows,
        })
    }
}

/// A reconstructed image: quantized 8-bit output plus the clamped
/// floating-point image it was quantized from.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: GrayImage,
    /// Clamped to [0, 1], original extent, before 8-bit quantization.
    pub float_image: Tensor,
}

fn block_to_float(block: &[u8]) -> Vec<f32> {
    block.iter().map(|&p| p as f32 / 255.0).collect()
}

fn assemble_float_blocks(
    blocks: &[Tensor],
    padded_h: usize,
    padded_w: usize,
    h: usize,
    w: usize,
) -> Tensor {
    let bx = padded_w / BLOCK_SIDE;
    let mut data = vec![0.0f32; h * w];
    for (i, block) in blocks.iter().enumerate() {
        let ty = i / bx;
        let tx = i % bx;
        for y in 0..BLOCK_SIDE {
            let gy = ty * BLOCK_SIDE + y;
            if gy >= h {
                break;
            }
            for x in 0..BLOCK_SIDE {
                let gx = tx * BLOCK_SIDE + x;
                if gx < w {
                    data[gy * w + gx] = block.data()[y * BLOCK_SIDE + x];
                }
            }
        }
    }
    let _ = padded_h;
    Tensor::new(vec![h, w], data).expect("geometry agrees")
}

fn recover_blocks(model: &Model, measurement_rows: &[Vec<f32>]) -> Result<Vec<Tensor>> {
    measurement_rows
        .par_iter()
        .map(|y| {
            let (out, _) = forward_recon(&model.params, y)?;
            Ok(out.map(|v| v.clamp(0.0, 1.0)))
        })
        .collect()
}

/// Reconstruct a whole image: pad, tile, measure each block (when
/// starting from pixels), recover each block independently, reassemble
/// and crop. Block order does not influence the result.
pub fn reconstruct_image(model: &Model, image: &GrayImage) -> Result<Reconstruction> {
    let (recon, _) = reconstruct_with_measurements(model, image)?;
    Ok(recon)
}

/// [`reconstruct_image`] that also returns the per-block measurements.
pub fn reconstruct_with_measurements(
    model: &Model,
    image: &GrayImage,
) -> Result<(Reconstruction, BlockMeasurements)> {
    let (padded, pad_spec) = pad_symmetric(image, BLOCK_SIDE)?;
    let tiled = tile(&padded, image.height(), image.width(), pad_spec)?;
    let op = model.measurement()?;
    let rows: Vec<Vec<f32>> = tiled
        .blocks
        .par_iter()
        .map(|b| op.measure(&block_to_float(b)))
        .collect::<Result<_>>()?;
    let recon = reconstruct_from_rows(model, &rows, &tiled)?;
    let mut flat = Vec::with_capacity(rows.len() * op.m());
    for r in &rows {
        flat.extend_from_slice(r);
    }
    let dump = BlockMeasurements {
        kind: model.mode,
        rate: model.rate,
        m: op.m(),
        original_h: image.height(),
        original_w: image.width(),
        padded_h: tiled.padded_h,
        padded_w: tiled.padded_w,
        rows: Tensor::new(vec![rows.len(), op.m()], flat)?,
    };
    Ok((recon, dump))
}

/// Reconstruct from a measurement dump instead of pixels.
pub fn reconstruct_from_measurements(
    model: &Model,
    dump: &BlockMeasurements,
) -> Result<Reconstruction> {
    if dump.kind != model.mode {
        return Err(Error::Usage(format!(
            "measurements were taken with kind {:?}, model is {:?}",
            dump.kind, model.mode
        )));
    }
    if dump.m != model.m {
        return Err(Error::Shape(format!(
            "measurement length {} does not match the model's m = {}",
            dump.m, model.m
        )));
    }
    let n_blocks = dump.rows.shape()[0];
    let expect =
        (dump.padded_h / BLOCK_SIDE) * (dump.padded_w / BLOCK_SIDE);
    if n_blocks != expect
        || dump.padded_h % BLOCK_SIDE != 0
        || dump.padded_w % BLOCK_SIDE != 0
        || dump.padded_h < dump.original_h
        || dump.padded_w < dump.original_w
    {
        return Err(Error::Shape("inconsistent measurement-dump geometry".into()));
    }
    let rows: Vec<Vec<f32>> = (0..n_blocks)
        .map(|i| dump.rows.data()[i * dump.m..(i + 1) * dump.m].to_vec())
        .collect();
    let tiled = TiledImage {
        original_h: dump.original_h,
        original_w: dump.original_w,
        padded_h: dump.padded_h,
        padded_w: dump.padded_w,
        pad_spec: PadSpec {
            right: dump.padded_w - dump.original_w,
            bottom: dump.padded_h - dump.original_h,
        },
        blocks: Vec::new(),
    };
    reconstruct_from_rows(model, &rows, &tiled)
}

fn reconstruct_from_rows(
    model: &Model,
    rows: &[Vec<f32>],
    tiled: &TiledImage,
) -> Result<Reconstruction> {
    let float_blocks = recover_blocks(model, rows)?;
    let float_image = assemble_float_blocks(
        &float_blocks,
        tiled.padded_h,
        tiled.padded_w,
        tiled.original_h,
        tiled.original_w,
    );
    let image = GrayImage::from_tensor_clamped(&float_image)?;
    Ok(Reconstruction { image, float_image })
}
