//! Measurement operators: the fixed random Gaussian matrix with
//! orthonormalized rows, and the learned adaptive matrix.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{matvec, Tensor, Tensor64};

/// Side length of a reconstruction block.
pub const BLOCK_SIDE: usize = 33;
/// Length of a vectorized block (33 * 33). Blocks are flattened row-major.
pub const BLOCK_LEN: usize = BLOCK_SIDE * BLOCK_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementKind {
    FixedGaussian,
    Adaptive,
}

impl MeasurementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MeasurementKind::FixedGaussian => "gaussian",
            MeasurementKind::Adaptive => "adaptive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "fixed" => Ok(MeasurementKind::FixedGaussian),
            "adaptive" => Ok(MeasurementKind::Adaptive),
            other => Err(Error::Config(format!("unknown measurement kind {other:?}"))),
        }
    }
}

/// An `m x 1089` linear map taking a vectorized 33x33 block to an
/// m-vector. Immutable after construction.
#[derive(Clone, Debug)]
pub struct MeasurementOperator {
    kind: MeasurementKind,
    matrix: Tensor,
    rate: f64,
    m: usize,
    seed: Option<u64>,
}

/// Number of measurements for a sampling rate: `round(rate * 1089)`,
/// clamped to at least one. Callers that need a different convention
/// pass an explicit override instead.
pub fn rate_to_m(rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!(
            "measurement rate must be in (0, 1], got {rate}"
        )));
    }
    Ok(((rate * BLOCK_LEN as f64).round() as usize).max(1))
}

/// Resolve the row count from a rate plus an optional explicit override.
pub fn resolve_m(rate: f64, m_override: Option<usize>) -> Result<usize> {
    let m = match m_override {
        Some(m) => m,
        None => rate_to_m(rate)?,
    };
    if m == 0 || m > BLOCK_LEN {
        return Err(Error::Config(format!(
            "measurement count must be in [1, {BLOCK_LEN}], got {m}"
        )));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!(
            "measurement rate must be in (0, 1], got {rate}"
        )));
    }
    Ok(m)
}

/// An `m x n` matrix of i.i.d. standard normal entries from the seeded
/// generator. Same seed, same matrix, bit for bit.
pub fn generate_gaussian(m: usize, n: usize, seed: u64) -> Result<Tensor> {
    if m == 0 || n == 0 {
        return Err(Error::Config("matrix extents must be positive".into()));
    }
    if m > n {
        return Err(Error::Config(format!(
            "cannot orthonormalize {m} rows in dimension {n}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut matrix = Tensor::zeros(vec![m, n]);
    rng.fill_normal(matrix.data_mut(), 1.0);
    Ok(matrix)
}

/// Modified Gram-Schmidt on the rows, computed in f64.
///
/// The output spans the same row space and has an identity row Gram
/// matrix to within 1e-6 per entry. Rows whose residual norm falls
/// below 1e-10 indicate linearly dependent input.
pub fn orthonormalize_rows(matrix: &Tensor) -> Result<Tensor> {
    let m = matrix.shape()[0];
    let n = matrix.shape()[1];
    let mut rows: Tensor64 = matrix.widen();
    for i in 0..m {
        let (done, rest) = rows.data_mut().split_at_mut(i * n);
        let row_i = &mut rest[..n];
        // Subtract projections onto the already-orthonormal rows.
        for j in 0..i {
            let prev = &done[j * n..(j + 1) * n];
            let coeff: f64 = row_i.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (v, &p) in row_i.iter_mut().zip(prev) {
                *v -= coeff * p;
            }
        }
        let norm = row_i.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return Err(Error::Degenerate(format!(
                "row {i} is numerically dependent on previous rows (residual norm {norm:.3e})"
            )));
        }
        for v in row_i.iter_mut() {
            *v /= norm;
        }
    }
    Ok(rows.narrow())
}

impl MeasurementOperator {
    /// Orthonormalized random Gaussian operator for the given rate.
    pub fn fixed_gaussian(rate: f64, m_override: Option<usize>, seed: u64) -> Result<Self> {
        let m = resolve_m(rate, m_override)?;
        let gaussian = generate_gaussian(m, BLOCK_LEN, seed)?;
        let matrix = orthonormalize_rows(&gaussian)?;
        Ok(MeasurementOperator {
            kind: MeasurementKind::FixedGaussian,
            matrix,
            rate,
            m,
            seed: Some(seed),
        })
    }

    /// Wrap a learned matrix as an adaptive operator.
    pub fn adaptive(rate: f64, matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 || matrix.shape()[1] != BLOCK_LEN {
            return Err(Error::Shape(format!(
                "adaptive measurement must be m x {BLOCK_LEN}, got {:?}",
                matrix.shape()
            )));
        }
        let m = matrix.shape()[0];
        resolve_m(rate, Some(m))?;
        Ok(MeasurementOperator {
            kind: MeasurementKind::Adaptive,
            matrix,
            rate,
            m,
            seed: None,
        })
    }

    /// Rebuild a fixed operator from its recorded seed, e.g. when loading
    /// a model file that stores the matrix (`from_parts`) is preferable.
    pub fn from_parts(
        kind: MeasurementKind,
        matrix: Tensor,
        rate: f64,
        seed: Option<u64>,
    ) -> Result<Self> {
        if matrix.rank() != 2 || matrix.shape()[1] != BLOCK_LEN {
            return Err(Error::Shape(format!(
                "measurement matrix must be m x {BLOCK_LEN}, got {:?}",
                matrix.shape()
            )));
        }
        let m = matrix.shape()[0];
        resolve_m(rate, Some(m))?;
        Ok(MeasurementOperator {
            kind,
            matrix,
            rate,
            m,
            seed,
        })
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `y = matrix . x` for a vectorized (row-major) 33x33 block.
    ///
    /// Uses the same f32 kernel as the network forward pass, so an
    /// adaptive forward pass decomposes into `measure` + recovery
    /// bit-exactly.
    pub fn measure(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != BLOCK_LEN {
            return Err(Error::Shape(format!(
                "measure: expected a {BLOCK_LEN}-vector, got length {}",
                x.len()
            )));
        }
        matvec(&self.matrix, x)
    }

    /// Largest absolute deviation of the row Gram matrix from identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.m;
        let n = BLOCK_LEN;
        let data = self.matrix.data();
        let mut worst = 0.0f64;
        for i in 0..m {
            let ri = &data[i * n..(i + 1) * n];
            for j in i..m {
                let rj = &data[j * n..(j + 1) * n];
                let g: f64 = ri
                    .iter()
                    .zip(rj)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_mapping() {
        assert_eq!(rate_to_m(0.25).unwrap(), 272);
        assert_eq!(rate_to_m(1.0).unwrap(), 1089);
        assert_eq!(rate_to_m(0.01).unwrap(), 11);
        assert_eq!(rate_to_m(0.0001).unwrap(), 1); // clamped
        assert!(rate_to_m(0.0).is_err());
        assert!(rate_to_m(1.5).is_err());
    }

    #[test]
    fn m_override() {
        assert_eq!(resolve_m(0.01, Some(10)).unwrap(), 10);
        assert!(resolve_m(0.01, Some(0)).is_err());
        assert!(resolve_m(0.01, Some(2000)).is_err());
    }

    #[test]
    fn gaussian_determinism() {
        let a = generate_gaussian(2, 4, 42).unwrap();
        let b = generate_gaussian(2, 4, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate_gaussian(2, 4, 43).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn gaussian_rejects_wide() {
        assert!(generate_gaussian(5, 4, 0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let m = generate_gaussian(1000, 1000, 7).unwrap();
        let n = m.len() as f64;
        let mean = m.sum_f64() / n;
        let var = m.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / n
            - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn orthonormalize_scaling_case() {
        let m = Tensor::new(vec![2, 3], vec![2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        let q = orthonormalize_rows(&m).unwrap();
        assert_eq!(q.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn orthonormalize_idempotent() {
        let g = generate_gaussian(6, 20, 3).unwrap();
        let q = orthonormalize_rows(&g).unwrap();
        let q2 = orthonormalize_rows(&q).unwrap();
        for (a, b) in q.data().iter().zip(q2.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn orthonormalize_gram_is_identity() {
        let g = generate_gaussian(10, 50, 9).unwrap();
        let q = orthonormalize_rows(&g).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let gi: f64 = (0..50)
                    .map(|k| q.data()[i * 50 + k] as f64 * q.data()[j * 50 + k] as f64)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((gi - target).abs() < 1e-6, "gram[{i}][{j}] = {gi}");
            }
        }
    }

    #[test]
    fn orthonormalize_detects_dependence() {
        let mut m = Tensor::zeros(vec![2, 4]);
        m.data_mut()[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        m.data_mut()[4..].copy_from_slice(&[2.0, 4.0, 6.0, 8.0]);
        assert!(matches!(
            orthonormalize_rows(&m),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn measure_zero_and_shape() {
        let op = MeasurementOperator::fixed_gaussian(0.1, None, 5).unwrap();
        assert_eq!(op.m(), 109);
        let y = op.measure(&vec![0.0; BLOCK_LEN]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(op.measure(&vec![0.0; 100]).is_err());
    }

    #[test]
    fn fixed_is_non_expansive() {
        let op = MeasurementOperator::fixed_gaussian(0.25, None, 11).unwrap();
        let mut rng = SeededRng::new(1);
        let mut x = vec![0.0f32; BLOCK_LEN];
        rng.fill_normal(&mut x, 1.0);
        let y = op.measure(&x).unwrap();
        let nx: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!(ny <= nx * (1.0 + 1e-5), "|y| = {ny}, |x| = {nx}");
    }
}
