//! Shared helpers for integration tests: independent brute-force
//! oracles kept deliberately naive so they cannot share a bug with the
//! implementation they check.

use amcs_core::rng::SeededRng;
use amcs_core::tensor::{Scalar, TensorBase};

/// Row-reduction rank of a matrix, computed in f64 with partial
/// pivoting.
pub fn rank_f64(data: &[f32], rows: usize, cols: usize, tol: f64) -> usize {
    let mut a: Vec<f64> = data.iter().map(|&v| v as f64).collect();
    let mut rank = 0usize;
    let mut row = 0usize;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        // Find the pivot.
        let mut best = row;
        for r in row + 1..rows {
            if a[r * cols + col].abs() > a[best * cols + col].abs() {
                best = r;
            }
        }
        if a[best * cols + col].abs() < tol {
            continue;
        }
        if best != row {
            for c in 0..cols {
                a.swap(row * cols + c, best * cols + c);
            }
        }
        let pivot = a[row * cols + col];
        for r in row + 1..rows {
            let factor = a[r * cols + col] / pivot;
            if factor != 0.0 {
                for c in col..cols {
                    a[r * cols + c] -= factor * a[row * cols + c];
                }
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}

/// A tensor of seeded normal deviates.
pub fn random_tensor<S: Scalar>(shape: &[usize], sigma: f64, rng: &mut SeededRng) -> TensorBase<S> {
    let mut t = TensorBase::zeros(shape.to_vec());
    rng.fill_normal(t.data_mut(), sigma);
    t
}

/// Smallest |pre-activation| over every ReLU layer of an adaptive
/// forward pass. Finite-difference checks need test points where this
/// gap is comfortably larger than any probe-induced shift, otherwise a
/// probe crosses a ReLU kink and the difference quotient is polluted.
pub fn min_relu_gap(
    params: &amcs_core::reconnet::ReconNetParamsBase<f64>,
    x: &[f64],
) -> f64 {
    use amcs_core::tensor::{conv2d_same, relu};
    let k = params.measurement_k.as_ref().expect("adaptive params");
    let y: Vec<f64> = (0..params.m)
        .map(|i| {
            k.data()[i * amcs_core::BLOCK_LEN..(i + 1) * amcs_core::BLOCK_LEN]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let mut fc = TensorBase::<f64>::zeros(vec![33, 33, 1]);
    for i in 0..amcs_core::BLOCK_LEN {
        fc.data_mut()[i] = params.fc_weight.data()[i * params.m..(i + 1) * params.m]
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + params.fc_bias.data()[i];
    }
    let mut gap = f64::INFINITY;
    let mut cur = fc;
    for layer in &params.conv {
        let pre = conv2d_same(&cur, &layer.kernels, &layer.bias).unwrap();
        if layer.has_relu {
            for &v in pre.data() {
                gap = gap.min(v.abs());
            }
            cur = relu(&pre);
        } else {
            cur = pre;
        }
    }
    gap
}

/// Draw seeded adaptive parameters and an input whose ReLU gap exceeds
/// `margin`, skipping degenerate draws.
pub fn well_conditioned_point(
    arch: &amcs_core::reconnet::ArchConfig,
    rate: f64,
    m: usize,
    sigma: f64,
    base_seed: u64,
    margin: f64,
) -> (amcs_core::reconnet::ReconNetParamsBase<f64>, TensorBase<f64>) {
    use amcs_core::reconnet::{init_params, InitMode};
    for attempt in 0..400 {
        let seed = base_seed + attempt * 1000;
        let mut params = init_params(
            arch,
            amcs_core::MeasurementKind::Adaptive,
            rate,
            m,
            InitMode::Gaussian { sigma },
            seed,
            None,
        )
        .unwrap()
        .cast::<f64>();
        let mut rng = SeededRng::new(seed ^ 0xabcd);
        // Zero biases put a whole class of pre-activations exactly on
        // the ReLU kink (pixels whose every input channel is dead).
        // Gradients are checked at generic points, so draw the biases
        // randomly like everything else.
        for layer in &mut params.conv {
            rng.fill_normal(layer.bias.data_mut(), 0.05);
        }
        let x: TensorBase<f64> = random_tensor(&[amcs_core::BLOCK_LEN], 0.4, &mut rng);
        if min_relu_gap(&params, x.data()) > margin {
            return (params, x);
        }
    }
    panic!("no well-conditioned point found near seed {base_seed}");
}

/// Triple-loop matrix product; the independent oracle for `matmul`.
pub fn matmul_oracle(a: &[f32], b: &[f32], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; r * c];
    for i in 0..r {
        for j in 0..c {
            let mut acc = 0.0f64;
            for kk in 0..k {
                acc += a[i * k + kk] as f64 * b[kk * c + j] as f64;
            }
            out[i * c + j] = acc;
        }
    }
    out
}

/// Six-nested-loop same-padding cross-correlation; the independent
/// oracle for `conv2d_same`.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    input: &[f32],
    kernels: &[f32],
    bias: &[f32],
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
) -> Vec<f64> {
    let pad = (k as isize - 1) / 2;
    let mut out = vec![0.0f64; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            for co in 0..cout {
                let mut acc = bias[co] as f64;
                for dy in 0..k {
                    for dx in 0..k {
                        for ci in 0..cin {
                            let iy = y as isize + dy as isize - pad;
                            let ix = x as isize + dx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let iv = input[(iy as usize * w + ix as usize) * cin + ci] as f64;
                            let kv = kernels[((dy * k + dx) * cin + ci) * cout + co] as f64;
                            acc += iv * kv;
                        }
                    }
                }
                out[(y * w + x) * cout + co] = acc;
            }
        }
    }
    out
}
