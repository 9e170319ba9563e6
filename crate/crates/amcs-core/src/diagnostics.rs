//! Interpretability analyses of a trained model: the equivalent square
//! matrix composed of the recovery layer and the measurement, its
//! diagonal/band concentration, the time/frequency content of
//! measurement rows, and feature-map exports.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::measurement::{MeasurementKind, BLOCK_LEN, BLOCK_SIDE};
use crate::model_file::Model;
use crate::reconnet::{forward_recon, ForwardCache};
use crate::tensor::{matmul, Tensor};

/// The 1089x1089 product `fc_weight . measurement_matrix`: what one
/// block passes through up to the end of the recovery layer, ignoring
/// the fc bias (an affine offset, not part of the linear composition).
#[derive(Clone, Debug)]
pub struct EquivalentMatrix {
    pub matrix: Tensor,
    pub kind: MeasurementKind,
    pub rate: f64,
    pub m: usize,
}

pub fn equivalent_matrix(model: &Model) -> Result<EquivalentMatrix> {
    let op = model.measurement()?;
    let matrix = matmul(&model.params.fc_weight, op.matrix())?;
    debug_assert_eq!(matrix.shape(), &[BLOCK_LEN, BLOCK_LEN]);
    Ok(EquivalentMatrix {
        matrix,
        kind: model.mode,
        rate: model.rate,
        m: model.m,
    })
}

/// `mean |diagonal| / mean |off-diagonal|`. An exactly-diagonal matrix
/// has no off-diagonal mass and reports `+inf`.
pub fn diagonal_dominance(eq: &EquivalentMatrix) -> f64 {
    let n = BLOCK_LEN;
    let data = eq.matrix.data();
    let mut diag = 0.0f64;
    let mut off = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = data[i * n + j].abs() as f64;
            if i == j {
                diag += v;
            } else {
                off += v;
            }
        }
    }
    let mean_diag = diag / n as f64;
    let mean_off = off / (n * n - n) as f64;
    if mean_off == 0.0 {
        return f64::INFINITY;
    }
    mean_diag / mean_off
}

/// Fraction of squared Frobenius energy within the band `|i - j| <=
/// halfwidth`. In the row-major 33-wide pixel order, halfwidth 34
/// covers a pixel's four spatial neighbors (offsets 1 and 33).
pub fn band_energy(eq: &EquivalentMatrix, halfwidth: usize) -> Result<f64> {
    if halfwidth >= BLOCK_LEN {
        return Err(Error::Config(format!(
            "halfwidth must be below {BLOCK_LEN}, got {halfwidth}"
        )));
    }
    band_energy_of(&eq.matrix, halfwidth)
}

pub(crate) fn band_energy_of(matrix: &Tensor, halfwidth: usize) -> Result<f64> {
    let n = matrix.shape()[0];
    if matrix.shape() != [n, n] {
        return Err(Error::Shape("band energy needs a square matrix".into()));
    }
    let data = matrix.data();
    let mut total = 0.0f64;
    let mut band = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = data[i * n + j] as f64;
            let sq = v * v;
            total += sq;
            if i.abs_diff(j) <= halfwidth {
                band += sq;
            }
        }
    }
    if total == 0.0 {
        return Ok(0.0);
    }
    Ok(band / total)
}

/// A measurement row reshaped to its 33x33 time-domain image together
/// with the DC-centered magnitude of its 2D DFT.
#[derive(Clone, Debug)]
pub struct RowSpectrum {
    pub time: Tensor,
    /// Raw DFT magnitudes, DC at the center (fftshift applied).
    pub magnitude: Tensor,
}

fn fft2d_magnitude(values: &[f32]) -> Tensor {
    let n = BLOCK_SIDE;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut grid: Vec<Complex<f64>> = values
        .iter()
        .map(|&v| Complex::new(v as f64, 0.0))
        .collect();
    // Rows, then columns.
    for row in grid.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = grid[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            grid[y * n + x] = col[y];
        }
    }
    // fftshift: move DC to the center.
    let half = n / 2;
    let mut out = vec![0.0f32; n * n];
    for y in 0..n {
        for x in 0..n {
            let sy = (y + half + 1) % n;
            let sx = (x + half + 1) % n;
            out[y * n + x] = grid[sy * n + sx].norm() as f32;
        }
    }
    Tensor::new(vec![n, n], out).expect("square grid")
}

/// Index of the DC coefficient after the shift.
pub const DC_INDEX: usize = BLOCK_SIDE / 2;

/// Reshape row `row` of a measurement matrix to 33x33 and compute its
/// DFT magnitude image.
pub fn row_spectrum(matrix: &Tensor, row: usize) -> Result<RowSpectrum> {
    if matrix.rank() != 2 || matrix.shape()[1] != BLOCK_LEN {
        return Err(Error::Shape(format!(
            "expected an m x {BLOCK_LEN} matrix, got {:?}",
            matrix.shape()
        )));
    }
    if row >= matrix.shape()[0] {
        return Err(Error::Usage(format!(
            "row {row} out of range for a matrix with {} rows",
            matrix.shape()[0]
        )));
    }
    let values = &matrix.data()[row * BLOCK_LEN..(row + 1) * BLOCK_LEN];
    let time = Tensor::new(vec![BLOCK_SIDE, BLOCK_SIDE], values.to_vec())?;
    let magnitude = fft2d_magnitude(values);
    Ok(RowSpectrum { time, magnitude })
}

/// Fraction of spectral energy outside the central `low_band x low_band`
/// square around DC, averaged over all rows of the matrix.
pub fn high_frequency_fraction(matrix: &Tensor, low_band: usize) -> Result<f64> {
    let m = matrix.shape()[0];
    let half = low_band / 2;
    let mut total_fraction = 0.0f64;
    for row in 0..m {
        let spec = row_spectrum(matrix, row)?;
        let mut total = 0.0f64;
        let mut low = 0.0f64;
        for y in 0..BLOCK_SIDE {
            for x in 0..BLOCK_SIDE {
                let v = spec.magnitude.data()[y * BLOCK_SIDE + x] as f64;
                let sq = v * v;
                total += sq;
                if y.abs_diff(DC_INDEX) <= half && x.abs_diff(DC_INDEX) <= half {
                    low += sq;
                }
            }
        }
        if total > 0.0 {
            total_fraction += (total - low) / total;
        }
    }
    Ok(total_fraction / m as f64)
}

/// Min-max normalize a 2D tensor to an 8-bit image. A constant map
/// renders mid-gray.
pub fn normalize_to_image(t: &Tensor) -> Result<GrayImage> {
    if t.rank() != 2 {
        return Err(Error::Shape(format!(
            "expected a 2D map, got {:?}",
            t.shape()
        )));
    }
    let lo = t.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = t.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let pixels = t
        .data()
        .iter()
        .map(|&v| {
            if range == 0.0 {
                128
            } else {
                (((v - lo) / range) * 255.0).round() as u8
            }
        })
        .collect();
    GrayImage::new(t.shape()[1], t.shape()[0], pixels)
}

/// Log-scaled (`log(1 + |F|)`) magnitude image for export.
pub fn spectrum_to_image(magnitude: &Tensor) -> Result<GrayImage> {
    normalize_to_image(&magnitude.map(|v| (1.0 + v).ln()))
}

/// The intermediate activations the figure exports use: the fc map and
/// the outputs of the middle and final convolutional layers.
#[derive(Clone, Debug)]
pub struct FeatureMaps {
    pub fc_map: Tensor,
    pub conv_mid: Tensor,
    pub conv_last: Tensor,
}

/// Run one 33x33 block through the model and capture the fc map plus
/// the mid-network (layer count / 2) and final conv activations.
pub fn export_feature_maps(model: &Model, block: &GrayImage) -> Result<FeatureMaps> {
    if block.width() != BLOCK_SIDE || block.height() != BLOCK_SIDE {
        return Err(Error::Shape(format!(
            "feature maps need a {BLOCK_SIDE}x{BLOCK_SIDE} block, got {}x{}",
            block.width(),
            block.height()
        )));
    }
    let x: Vec<f32> = block.pixels().iter().map(|&p| p as f32 / 255.0).collect();
    let op = model.measurement()?;
    let y = op.measure(&x)?;
    let (_, cache): (_, ForwardCache<f32>) = forward_recon(&model.params, &y)?;
    let mid = cache.conv_outputs.len() / 2 - 1;
    let last = cache.conv_outputs.len() - 1;
    Ok(FeatureMaps {
        fc_map: cache
            .fc_map
            .clone()
            .reshape(vec![BLOCK_SIDE, BLOCK_SIDE])?,
        conv_mid: cache.conv_outputs[mid].clone(),
        conv_last: cache.conv_outputs[last]
            .clone()
            .reshape(vec![BLOCK_SIDE, BLOCK_SIDE])?,
    })
}

/// Lay a `h x w x c` activation out as a `ceil(sqrt(c))`-wide mosaic
/// grid, min-max normalized over the whole map.
pub fn channel_mosaic(activation: &Tensor) -> Result<GrayImage> {
    let (h, w, c) = match activation.shape() {
        [h, w] => (*h, *w, 1usize),
        [h, w, c] => (*h, *w, *c),
        other => {
            return Err(Error::Shape(format!(
                "mosaic needs an h x w (x c) map, got {other:?}"
            )))
        }
    };
    let grid = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(grid);
    let mut mosaic = Tensor::zeros(vec![rows * h, grid * w]);
    for ch in 0..c {
        let gy = ch / grid;
        let gx = ch % grid;
        for y in 0..h {
            for x in 0..w {
                let v = activation.data()[(y * w + x) * c + ch];
                mosaic.data_mut()[(gy * h + y) * (grid * w) + gx * w + x] = v;
            }
        }
    }
    normalize_to_image(&mosaic)
}
