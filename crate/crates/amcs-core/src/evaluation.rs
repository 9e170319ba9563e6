//! PSNR and batch evaluation across images, rates and measurement kinds,
//! tabulated the way the reference results table lays them out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::GrayImage;
use crate::inference::reconstruct_image;
use crate::measurement::MeasurementKind;
use crate::model_file::Model;
use crate::tensor::Tensor;

/// Cap used when printing the infinite PSNR of identical images.
pub const PSNR_DISPLAY_CAP: f64 = 99.99;

/// Peak signal-to-noise ratio in dB on the 8-bit scale:
/// `10 log10(peak^2 / MSE)`. Identical images give `+inf`.
pub fn psnr(reference: &GrayImage, test: &GrayImage, peak: f64) -> Result<f64> {
    if reference.width() != test.width() || reference.height() != test.height() {
        return Err(Error::Shape(format!(
            "psnr: {}x{} vs {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let mut sq = 0.0f64;
    for (&a, &b) in reference.pixels().iter().zip(test.pixels()) {
        let d = a as f64 - b as f64;
        sq += d * d;
    }
    let mse = sq / reference.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR between two same-shaped float images on the given peak scale.
pub fn psnr_float(reference: &Tensor, test: &Tensor, peak: f64) -> Result<f64> {
    if reference.shape() != test.shape() {
        return Err(Error::Shape(format!(
            "psnr: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    let mut sq = 0.0f64;
    for (&a, &b) in reference.data().iter().zip(test.data()) {
        let d = a as f64 - b as f64;
        sq += d * d;
    }
    let mse = sq / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn fmt_db(v: f64) -> String {
    format!("{:.2}", v.min(PSNR_DISPLAY_CAP))
}

#[derive(Clone, Debug)]
pub struct EvalRow {
    pub image: String,
    pub kind: MeasurementKind,
    pub rate: f64,
    pub psnr_db: f64,
}

/// Per-image rows plus per-(kind, rate) means.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub means: Vec<(MeasurementKind, f64, f64)>,
    /// Model identifiers and seeds, printed in the text table header.
    pub metadata: Vec<String>,
}

impl EvalReport {
    /// Arithmetic mean PSNR of the rows matching `(kind, rate)`.
    pub fn mean_for(&self, kind: MeasurementKind, rate: f64) -> Option<f64> {
        self.means
            .iter()
            .find(|(k, r, _)| *k == kind && *r == rate)
            .map(|(_, _, v)| *v)
    }

    /// CSV with schema `image,kind,rate,psnr_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,kind,rate,psnr_db\n");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.image,
                row.kind.as_str(),
                row.rate,
                fmt_db(row.psnr_db)
            );
        }
        out
    }

    /// Aligned text table: one row block per image (a line per
    /// measurement kind), rates as columns, a MeanPSNR block at the end.
    pub fn to_table(&self) -> String {
        let mut rates: Vec<f64> = self.rows.iter().map(|r| r.rate).collect();
        rates.sort_by(|a, b| b.partial_cmp(a).unwrap());
        rates.dedup();
        let mut kinds: Vec<MeasurementKind> = Vec::new();
        for r in &self.rows {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        let mut images: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !images.contains(&r.image.as_str()) {
                images.push(&r.image);
            }
        }

        let lookup: BTreeMap<(String, String, String), f64> = self
            .rows
            .iter()
            .map(|r| {
                (
                    (r.image.clone(), r.kind.as_str().to_string(), format!("{}", r.rate)),
                    r.psnr_db,
                )
            })
            .collect();

        let mut out = String::new();
        for meta in &self.metadata {
            let _ = writeln!(out, "# {meta}");
        }
        let _ = write!(out, "{:<14}{:<12}", "Image", "Measurement");
        for rate in &rates {
            let _ = write!(out, "{:>12}", format!("Rate {}%", rate * 100.0));
        }
        out.push('\n');
        let kind_label = |k: MeasurementKind| match k {
            MeasurementKind::Adaptive => "Adaptive",
            MeasurementKind::FixedGaussian => "Gaussian",
        };
        for image in &images {
            for (i, kind) in kinds.iter().enumerate() {
                let _ = write!(
                    out,
                    "{:<14}{:<12}",
                    if i == 0 { image } else { &"" },
                    kind_label(*kind)
                );
                for rate in &rates {
                    let key = (
                        image.to_string(),
                        kind.as_str().to_string(),
                        format!("{rate}"),
                    );
                    match lookup.get(&key) {
                        Some(v) => {
                            let _ = write!(out, "{:>12}", format!("{}dB", fmt_db(*v)));
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "-");
                        }
                    }
                }
                out.push('\n');
            }
        }
        for (i, kind) in kinds.iter().enumerate() {
            let _ = write!(
                out,
                "{:<14}{:<12}",
                if i == 0 { "MeanPSNR" } else { "" },
                kind_label(*kind)
            );
            for rate in &rates {
                match self.mean_for(*kind, *rate) {
                    Some(v) => {
                        let _ = write!(out, "{:>12}", format!("{}dB", fmt_db(v)));
                    }
                    None => {
                        let _ = write!(out, "{:>12}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reconstruct every image with every model and tabulate PSNR against
/// the originals. `rates`, when non-empty, is the set of rates the
/// caller expects; a missing (kind, rate) model is a config error that
/// lists the gaps.
pub fn evaluate_suite(
    models: &[Model],
    images: &[(String, GrayImage)],
    rates: &[f64],
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::Config("no models to evaluate".into()));
    }
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    if !rates.is_empty() {
        let mut kinds: Vec<MeasurementKind> = models.iter().map(|m| m.mode).collect();
        kinds.dedup();
        let mut gaps = Vec::new();
        for kind in [MeasurementKind::Adaptive, MeasurementKind::FixedGaussian] {
            if !kinds.contains(&kind) {
                continue;
            }
            for &rate in rates {
                if !models.iter().any(|m| m.mode == kind && m.rate == rate) {
                    gaps.push(format!("{}@{}", kind.as_str(), rate));
                }
            }
        }
        if !gaps.is_empty() {
            return Err(Error::Config(format!(
                "missing models for requested combinations: {}",
                gaps.join(", ")
            )));
        }
    }

    let mut rows = Vec::new();
    let mut metadata = Vec::new();
    for model in models {
        metadata.push(format!(
            "model kind={} rate={} m={} seed={} init={}",
            model.mode.as_str(),
            model.rate,
            model.m,
            model.seed,
            model.init
        ));
        if !rates.is_empty() && !rates.contains(&model.rate) {
            continue;
        }
        for (name, image) in images {
            let recon = reconstruct_image(model, image)?;
            rows.push(EvalRow {
                image: name.clone(),
                kind: model.mode,
                rate: model.rate,
                psnr_db: psnr(image, &recon.image, 255.0)?,
            });
        }
    }

    let mut means = Vec::new();
    for row in &rows {
        if !means
            .iter()
            .any(|(k, r, _): &(MeasurementKind, f64, f64)| *k == row.kind && *r == row.rate)
        {
            let matching: Vec<f64> = rows
                .iter()
                .filter(|r| r.kind == row.kind && r.rate == row.rate)
                .map(|r| r.psnr_db)
                .collect();
            let mean = matching.iter().sum::<f64>() / matching.len() as f64;
            means.push((row.kind, row.rate, mean));
        }
    }
    Ok(EvalReport {
        rows,
        means,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_are_infinite() {
        let img = GrayImage::new(4, 4, vec![9u8; 16]).unwrap();
        assert_eq!(psnr(&img, &img, 255.0).unwrap(), f64::INFINITY);
        assert_eq!(fmt_db(f64::INFINITY), "99.99");
    }

    #[test]
    fn uniform_one_level_error() {
        let a = GrayImage::new(8, 8, vec![100u8; 64]).unwrap();
        let b = GrayImage::new(8, 8, vec![101u8; 64]).unwrap();
        let v = psnr(&a, &b, 255.0).unwrap();
        let expect = 10.0 * (255.0f64 * 255.0).log10();
        assert!((v - expect).abs() < 1e-9, "{v} vs {expect}");
        assert!((v - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_symmetry() {
        let a = GrayImage::new(4, 4, (0u8..16).collect()).unwrap();
        let b = GrayImage::new(4, 4, (16u8..32).collect()).unwrap();
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
    }

    #[test]
    fn psnr_rejects_mismatched_shapes() {
        let a = GrayImage::new(4, 4, vec![0u8; 16]).unwrap();
        let b = GrayImage::new(4, 5, vec![0u8; 20]).unwrap();
        assert!(psnr(&a, &b, 255.0).is_err());
    }

    #[test]
    fn csv_and_table_agree() {
        let report = EvalReport {
            rows: vec![
                EvalRow {
                    image: "lena".into(),
                    kind: MeasurementKind::Adaptive,
                    rate: 0.25,
                    psnr_db: 31.634,
                },
                EvalRow {
                    image: "lena".into(),
                    kind: MeasurementKind::FixedGaussian,
                    rate: 0.25,
                    psnr_db: 27.468,
                },
            ],
            means: vec![
                (MeasurementKind::Adaptive, 0.25, 31.634),
                (MeasurementKind::FixedGaussian, 0.25, 27.468),
            ],
            metadata: vec![],
        };
        let csv = report.to_csv();
        assert!(csv.contains("lena,adaptive,0.25,31.63"));
        assert!(csv.contains("lena,gaussian,0.25,27.47"));
        let table = report.to_table();
        assert!(table.contains("31.63dB"));
        assert!(table.contains("27.47dB"));
        assert!(table.contains("MeanPSNR"));
    }

    #[test]
    fn single_row_mean_equals_row() {
        let report = EvalReport {
            rows: vec![EvalRow {
                image: "x".into(),
                kind: MeasurementKind::Adaptive,
                rate: 0.1,
                psnr_db: 24.5,
            }],
            means: vec![(MeasurementKind::Adaptive, 0.1, 24.5)],
            metadata: vec![],
        };
        assert_eq!(report.mean_for(MeasurementKind::Adaptive, 0.1), Some(24.5));
    }
}
