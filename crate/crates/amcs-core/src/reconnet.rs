//! The reconstruction network: a fully-connected recovery layer mapping
//! an m-vector of measurements to a 33x33 map, followed by six
//! convolutional layers. In adaptive mode a learnable linear measurement
//! layer `K` is prepended and trained jointly.

use crate::error::{Error, Result};
use crate::measurement::{MeasurementKind, MeasurementOperator, BLOCK_LEN, BLOCK_SIDE};
use crate::rng::SeededRng;
use crate::tensor::{
    conv2d_same, conv2d_same_backward_acc, dot, outer_acc, relu, relu_backward, vecmat,
    Scalar, Tensor, TensorBase,
};

/// One convolutional stage: square kernel size and output channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub kernel: usize,
    pub channels: usize,
}

/// The convolutional tail configuration. The first half and second half
/// must be identical, the last layer must emit a single channel, and
/// every layer except the last is followed by ReLU.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub layers: Vec<ConvLayerSpec>,
}

impl ArchConfig {
    /// The standard configuration: (11x11, 64) -> (1x1, 32) -> (7x7, 1),
    /// repeated twice.
    pub fn standard() -> Self {
        let half = [
            ConvLayerSpec {
                kernel: 11,
                channels: 64,
            },
            ConvLayerSpec {
                kernel: 1,
                channels: 32,
            },
            ConvLayerSpec {
                kernel: 7,
                channels: 1,
            },
        ];
        ArchConfig {
            layers: half.iter().chain(half.iter()).copied().collect(),
        }
    }

    /// A small configuration with the same structure, used by tests.
    pub fn tiny() -> Self {
        let half = [
            ConvLayerSpec {
                kernel: 3,
                channels: 4,
            },
            ConvLayerSpec {
                kernel: 1,
                channels: 3,
            },
            ConvLayerSpec {
                kernel: 3,
                channels: 1,
            },
        ];
        ArchConfig {
            layers: half.iter().chain(half.iter()).copied().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() % 2 != 0 {
            return Err(Error::Config(format!(
                "architecture needs an even, positive layer count, got {}",
                self.layers.len()
            )));
        }
        let half = self.layers.len() / 2;
        for i in 0..half {
            if self.layers[i] != self.layers[i + half] {
                return Err(Error::Config(format!(
                    "layer {} and layer {} must be identical",
                    i,
                    i + half
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.kernel == 0 {
                return Err(Error::Config(format!(
                    "layer {i}: kernel size must be odd, got {}",
                    l.kernel
                )));
            }
            if l.channels == 0 {
                return Err(Error::Config(format!("layer {i}: zero channels")));
            }
        }
        if self.layers.last().unwrap().channels != 1 {
            return Err(Error::Config(
                "last layer must emit a single channel".into(),
            ));
        }
        Ok(())
    }

    /// Input channel count of layer `i` (the fc map feeds layer 0).
    pub fn channels_in(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.layers[i - 1].channels
        }
    }

    /// True for layers followed by ReLU: every layer except the last.
    pub fn has_relu(&self, i: usize) -> bool {
        i + 1 != self.layers.len()
    }

    /// Compact text form, e.g. `11x64,1x32,7x1,11x64,1x32,7x1`.
    pub fn encode(&self) -> String {
        self.layers
            .iter()
            .map(|l| format!("{}x{}", l.kernel, l.channels))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for part in s.split(',') {
            let (k, c) = part
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("bad architecture item {part:?}")))?;
            layers.push(ConvLayerSpec {
                kernel: k
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad kernel size in {part:?}")))?,
                channels: c
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad channel count in {part:?}")))?,
            });
        }
        let arch = ArchConfig { layers };
        arch.validate()?;
        Ok(arch)
    }
}

/// Parameters of one convolutional layer.
#[derive(Clone, Debug)]
pub struct ConvLayerParams<S: Scalar = f32> {
    pub kernels: TensorBase<S>,
    pub bias: TensorBase<S>,
    pub has_relu: bool,
}

/// All trainable parameters: the recovery fc layer, the convolutional
/// tail, and (adaptive mode only) the measurement matrix `K`.
#[derive(Clone, Debug)]
pub struct ReconNetParamsBase<S: Scalar = f32> {
    pub fc_weight: TensorBase<S>,
    pub fc_bias: TensorBase<S>,
    pub conv: Vec<ConvLayerParams<S>>,
    /// `m x 1089` learned measurement; present iff adaptive mode.
    pub measurement_k: Option<TensorBase<S>>,
    pub m: usize,
    pub rate: f64,
}

pub type ReconNetParams = ReconNetParamsBase<f32>;

/// How to initialize the trainable parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitMode {
    /// Every weight i.i.d. N(0, sigma^2), biases zero.
    Gaussian { sigma: f64 },
    /// Transpose back-projection for the fc layer (`fc = M^T` for the
    /// measurement matrix in play) and center-tap channel-averaging
    /// pass-through convolutions. In adaptive mode `K` is drawn
    /// N(0, 1/m) from the seed first.
    Deterministic,
}

impl InitMode {
    pub fn encode(&self) -> String {
        match self {
            InitMode::Gaussian { sigma } => format!("gaussian:{sigma}"),
            InitMode::Deterministic => "deterministic".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "deterministic" {
            return Ok(InitMode::Deterministic);
        }
        if s == "gaussian" {
            return Ok(InitMode::Gaussian { sigma: 0.01 });
        }
        if let Some(rest) = s.strip_prefix("gaussian:") {
            let sigma: f64 = rest
                .parse()
                .map_err(|_| Error::Config(format!("bad sigma in init mode {s:?}")))?;
            if sigma <= 0.0 {
                return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
            }
            return Ok(InitMode::Gaussian { sigma });
        }
        Err(Error::Config(format!("unknown init mode {s:?}")))
    }
}

fn passthrough_kernels<S: Scalar>(spec: ConvLayerSpec, cin: usize) -> TensorBase<S> {
    let k = spec.kernel;
    let cout = spec.channels;
    let center = k / 2;
    let weight = S::from_f64(1.0 / cin as f64);
    let mut t = TensorBase::zeros(vec![k, k, cin, cout]);
    for ci in 0..cin {
        let base = ((center * k + center) * cin + ci) * cout;
        for co in 0..cout {
            t.data_mut()[base + co] = weight;
        }
    }
    t
}

impl<S: Scalar> ReconNetParamsBase<S> {
    /// Validates the channel chain and architectural symmetry.
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        arch.validate()?;
        if self.fc_weight.shape() != [BLOCK_LEN, self.m] {
            return Err(Error::Shape(format!(
                "fc weight must be {BLOCK_LEN} x {}, got {:?}",
                self.m,
                self.fc_weight.shape()
            )));
        }
        if self.fc_bias.shape() != [BLOCK_LEN] {
            return Err(Error::Shape("fc bias must have length 1089".into()));
        }
        if self.conv.len() != arch.layers.len() {
            return Err(Error::Config(format!(
                "expected {} conv layers, got {}",
                arch.layers.len(),
                self.conv.len()
            )));
        }
        for (i, (layer, spec)) in self.conv.iter().zip(&arch.layers).enumerate() {
            let cin = arch.channels_in(i);
            let want = [spec.kernel, spec.kernel, cin, spec.channels];
            if layer.kernels.shape() != want {
                return Err(Error::Shape(format!(
                    "conv layer {i}: kernels {:?}, expected {want:?}",
                    layer.kernels.shape()
                )));
            }
            if layer.bias.shape() != [spec.channels] {
                return Err(Error::Shape(format!("conv layer {i}: bad bias shape")));
            }
            if layer.has_relu != arch.has_relu(i) {
                return Err(Error::Config(format!(
                    "conv layer {i}: ReLU placement disagrees with architecture"
                )));
            }
        }
        if let Some(k) = &self.measurement_k {
            if k.shape() != [self.m, BLOCK_LEN] {
                return Err(Error::Shape(format!(
                    "measurement K must be {} x {BLOCK_LEN}, got {:?}",
                    self.m,
                    k.shape()
                )));
            }
        }
        Ok(())
    }

    /// The adaptive measurement as an operator, when present.
    pub fn adaptive_operator(&self) -> Option<MeasurementOperator>
    where
        S: Scalar,
    {
        self.measurement_k.as_ref().map(|k| {
            MeasurementOperator::adaptive(self.rate, k.cast::<f32>())
                .expect("stored K has valid shape")
        })
    }

    /// All parameter tensors in a fixed order: fc weight, fc bias, the
    /// conv kernels/biases in layer order, then K if present.
    pub fn tensors(&self) -> Vec<&TensorBase<S>> {
        let mut v: Vec<&TensorBase<S>> = vec![&self.fc_weight, &self.fc_bias];
        for layer in &self.conv {
            v.push(&layer.kernels);
            v.push(&layer.bias);
        }
        if let Some(k) = &self.measurement_k {
            v.push(k);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut TensorBase<S>> {
        let mut v: Vec<&mut TensorBase<S>> = vec![&mut self.fc_weight, &mut self.fc_bias];
        for layer in &mut self.conv {
            v.push(&mut layer.kernels);
            v.push(&mut layer.bias);
        }
        if let Some(k) = &mut self.measurement_k {
            v.push(k);
        }
        v
    }

    pub fn cast<T: Scalar>(&self) -> ReconNetParamsBase<T> {
        ReconNetParamsBase {
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.cast(),
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayerParams {
                    kernels: l.kernels.cast(),
                    bias: l.bias.cast(),
                    has_relu: l.has_relu,
                })
                .collect(),
            measurement_k: self.measurement_k.as_ref().map(|k| k.cast()),
            m: self.m,
            rate: self.rate,
        }
    }
}

/// Initialize parameters for the given mode.
///
/// `fixed_phi` must be provided for deterministic initialization in
/// fixed mode (the fc layer starts from the transpose of Phi). All
/// random draws come from `seed` in a fixed order: K (adaptive), fc
/// weight, then conv kernels layer by layer.
pub fn init_params(
    arch: &ArchConfig,
    mode: MeasurementKind,
    rate: f64,
    m: usize,
    init: InitMode,
    seed: u64,
    fixed_phi: Option<&MeasurementOperator>,
) -> Result<ReconNetParams> {
    arch.validate()?;
    let mut rng = SeededRng::new(seed);

    let measurement_k = match (mode, init) {
        (MeasurementKind::Adaptive, InitMode::Gaussian { sigma }) => {
            let mut k = Tensor::zeros(vec![m, BLOCK_LEN]);
            rng.fill_normal(k.data_mut(), sigma);
            Some(k)
        }
        (MeasurementKind::Adaptive, InitMode::Deterministic) => {
            let mut k = Tensor::zeros(vec![m, BLOCK_LEN]);
            rng.fill_normal(k.data_mut(), 1.0 / (m as f64).sqrt());
            Some(k)
        }
        (MeasurementKind::FixedGaussian, _) => None,
    };

    let fc_weight = match init {
        InitMode::Gaussian { sigma } => {
            let mut w = Tensor::zeros(vec![BLOCK_LEN, m]);
            rng.fill_normal(w.data_mut(), sigma);
            w
        }
        InitMode::Deterministic => {
            let matrix = match mode {
                MeasurementKind::FixedGaussian => fixed_phi
                    .ok_or_else(|| {
                        Error::Config(
                            "deterministic initialization in fixed mode needs the measurement operator"
                                .into(),
                        )
                    })?
                    .matrix(),
                MeasurementKind::Adaptive => measurement_k.as_ref().unwrap(),
            };
            if matrix.shape() != [m, BLOCK_LEN] {
                return Err(Error::Shape(format!(
                    "measurement matrix {:?} does not match m = {m}",
                    matrix.shape()
                )));
            }
            let mut w = Tensor::zeros(vec![BLOCK_LEN, m]);
            for row in 0..m {
                for col in 0..BLOCK_LEN {
                    w.data_mut()[col * m + row] = matrix.data()[row * BLOCK_LEN + col];
                }
            }
            w
        }
    };

    let mut conv = Vec::with_capacity(arch.layers.len());
    for (i, &spec) in arch.layers.iter().enumerate() {
        let cin = arch.channels_in(i);
        let kernels = match init {
            InitMode::Gaussian { sigma } => {
                let mut t = Tensor::zeros(vec![spec.kernel, spec.kernel, cin, spec.channels]);
                rng.fill_normal(t.data_mut(), sigma);
                t
            }
            InitMode::Deterministic => passthrough_kernels(spec, cin),
        };
        conv.push(ConvLayerParams {
            kernels,
            bias: Tensor::zeros(vec![spec.channels]),
            has_relu: arch.has_relu(i),
        });
    }

    let params = ReconNetParams {
        fc_weight,
        fc_bias: Tensor::zeros(vec![BLOCK_LEN]),
        conv,
        measurement_k,
        m,
        rate,
    };
    params.validate(arch)?;
    Ok(params)
}

/// Activations cached by a forward pass, as needed by backpropagation
/// and by the feature-map exports.
#[derive(Clone, Debug)]
pub struct ForwardCache<S: Scalar = f32> {
    /// Raw block input; present only for adaptive forward passes.
    pub input_x: Option<Vec<S>>,
    /// The measurement vector that entered the fc layer.
    pub measurement: Vec<S>,
    /// Output of the fc layer reshaped to 33x33x1 (the "fc map").
    pub fc_map: TensorBase<S>,
    /// Post-activation output of each convolutional layer in order.
    pub conv_outputs: Vec<TensorBase<S>>,
}

/// Recovery pass: measurements in, 33x33 image out.
pub fn forward_recon<S: Scalar>(
    params: &ReconNetParamsBase<S>,
    y: &[S],
) -> Result<(TensorBase<S>, ForwardCache<S>)> {
    if y.len() != params.m {
        return Err(Error::Shape(format!(
            "expected {} measurements, got {}",
            params.m,
            y.len()
        )));
    }
    let m = params.m;
    let mut fc_out = vec![S::ZERO; BLOCK_LEN];
    for (i, out) in fc_out.iter_mut().enumerate() {
        *out = dot(&params.fc_weight.data()[i * m..(i + 1) * m], y)
            + params.fc_bias.data()[i];
    }
    let fc_map = TensorBase::new(vec![BLOCK_SIDE, BLOCK_SIDE, 1], fc_out)?;

    let mut conv_outputs: Vec<TensorBase<S>> = Vec::with_capacity(params.conv.len());
    for layer in &params.conv {
        let input = conv_outputs.last().unwrap_or(&fc_map);
        let mut pre = conv2d_same(input, &layer.kernels, &layer.bias)?;
        if layer.has_relu {
            for v in pre.data_mut() {
                if *v < S::ZERO {
                    *v = S::ZERO;
                }
            }
        }
        conv_outputs.push(pre);
    }
    let output = conv_outputs
        .last()
        .expect("architecture has at least one layer")
        .clone()
        .reshape(vec![BLOCK_SIDE, BLOCK_SIDE])?;
    Ok((
        output,
        ForwardCache {
            input_x: None,
            measurement: y.to_vec(),
            fc_map,
            conv_outputs,
        },
    ))
}

/// Adaptive pass: raw vectorized block in, measurement taken by `K`
/// inside, then the recovery pass. Decomposes bit-exactly into
/// `measure` followed by [`forward_recon`].
pub fn forward_adaptive<S: Scalar>(
    params: &ReconNetParamsBase<S>,
    x: &[S],
) -> Result<(TensorBase<S>, ForwardCache<S>)> {
    let k = params.measurement_k.as_ref().ok_or_else(|| {
        Error::Mode("adaptive forward pass needs an adaptive measurement layer".into())
    })?;
    if x.len() != BLOCK_LEN {
        return Err(Error::Shape(format!(
            "expected a {BLOCK_LEN}-vector, got length {}",
            x.len()
        )));
    }
    let y: Vec<S> = (0..params.m)
        .map(|i| dot(&k.data()[i * BLOCK_LEN..(i + 1) * BLOCK_LEN], x))
        .collect();
    let (out, mut cache) = forward_recon(params, &y)?;
    cache.input_x = Some(x.to_vec());
    Ok((out, cache))
}

/// Gradients for every trainable parameter; mirrors
/// [`ReconNetParamsBase`] shape for shape.
#[derive(Clone, Debug)]
pub struct ParamGrads<S: Scalar = f32> {
    pub fc_weight: TensorBase<S>,
    pub fc_bias: TensorBase<S>,
    pub conv: Vec<(TensorBase<S>, TensorBase<S>)>,
    pub measurement_k: Option<TensorBase<S>>,
}

impl<S: Scalar> ParamGrads<S> {
    pub fn zeros_like(params: &ReconNetParamsBase<S>) -> Self {
        ParamGrads {
            fc_weight: TensorBase::zeros(params.fc_weight.shape().to_vec()),
            fc_bias: TensorBase::zeros(params.fc_bias.shape().to_vec()),
            conv: params
                .conv
                .iter()
                .map(|l| {
                    (
                        TensorBase::zeros(l.kernels.shape().to_vec()),
                        TensorBase::zeros(l.bias.shape().to_vec()),
                    )
                })
                .collect(),
            measurement_k: params
                .measurement_k
                .as_ref()
                .map(|k| TensorBase::zeros(k.shape().to_vec())),
        }
    }

    /// Same fixed tensor order as `ReconNetParamsBase::tensors`.
    pub fn tensors(&self) -> Vec<&TensorBase<S>> {
        let mut v: Vec<&TensorBase<S>> = vec![&self.fc_weight, &self.fc_bias];
        for (k, b) in &self.conv {
            v.push(k);
            v.push(b);
        }
        if let Some(k) = &self.measurement_k {
            v.push(k);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut TensorBase<S>> {
        let mut v: Vec<&mut TensorBase<S>> = vec![&mut self.fc_weight, &mut self.fc_bias];
        for (k, b) in &mut self.conv {
            v.push(k);
            v.push(b);
        }
        if let Some(k) = &mut self.measurement_k {
            v.push(k);
        }
        v
    }

    pub fn add_assign(&mut self, other: &ParamGrads<S>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Backpropagate `upstream` (gradient of a scalar loss with respect to
/// the 33x33 output) through the cached forward pass, accumulating into
/// `grads`. Computes `dK` iff the cache came from an adaptive pass and
/// `grads` carries a `K` buffer.
pub fn backward_accumulate<S: Scalar>(
    params: &ReconNetParamsBase<S>,
    cache: &ForwardCache<S>,
    upstream: &TensorBase<S>,
    grads: &mut ParamGrads<S>,
) -> Result<()> {
    if upstream.shape() != [BLOCK_SIDE, BLOCK_SIDE] {
        return Err(Error::Shape(format!(
            "upstream gradient must be {BLOCK_SIDE}x{BLOCK_SIDE}, got {:?}",
            upstream.shape()
        )));
    }
    if cache.conv_outputs.len() != params.conv.len() {
        return Err(Error::Usage(
            "forward cache does not match the parameter set".into(),
        ));
    }
    let mut g = upstream
        .clone()
        .reshape(vec![BLOCK_SIDE, BLOCK_SIDE, 1])?;
    for i in (0..params.conv.len()).rev() {
        let layer = &params.conv[i];
        if layer.has_relu {
            g = relu_backward(&cache.conv_outputs[i], &g)?;
        }
        let input = if i == 0 {
            &cache.fc_map
        } else {
            &cache.conv_outputs[i - 1]
        };
        let (dk, db) = &mut grads.conv[i];
        g = conv2d_same_backward_acc(input, &layer.kernels, &g, dk, db)?;
    }
    // g is now the gradient w.r.t. the fc map.
    let g_fc = g.reshape(vec![BLOCK_LEN])?;
    for (o, &v) in grads.fc_bias.data_mut().iter_mut().zip(g_fc.data()) {
        *o += v;
    }
    outer_acc(g_fc.data(), &cache.measurement, &mut grads.fc_weight);

    if let Some(dk) = grads.measurement_k.as_mut() {
        let x = cache.input_x.as_ref().ok_or_else(|| {
            Error::Usage(
                "gradient for K requested but the forward pass was not adaptive".into(),
            )
        })?;
        let dy = vecmat(g_fc.data(), &params.fc_weight)?;
        outer_acc(&dy, x, dk);
    }
    Ok(())
}

/// One-shot variant of [`backward_accumulate`] returning fresh buffers.
pub fn backward_full<S: Scalar>(
    params: &ReconNetParamsBase<S>,
    cache: &ForwardCache<S>,
    upstream: &TensorBase<S>,
) -> Result<ParamGrads<S>> {
    let mut grads = ParamGrads::zeros_like(params);
    backward_accumulate(params, cache, upstream, &mut grads)?;
    Ok(grads)
}
