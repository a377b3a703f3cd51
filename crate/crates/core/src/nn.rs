//! Pose-conditioned filter network: Fourier features, a tanh MLP and a linear
//! head emitting the real and imaginary parts of every filter coefficient.
//!
//! The backward pass is written out for this fixed architecture. Losses supply
//! the gradient with respect to the filter bank (as `∂/∂Re + i ∂/∂Im`) and the
//! network propagates it to its weights.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BsannError, Result};
use crate::spectral::FrequencyGrid;

/// Program channels in `S(ω)` order: 1L, 1R, 2L, 2R.
pub const NUM_PROGRAMS: usize = 4;

/// Head-centre positions of both listeners in the array frame (x across the
/// array, y away from it), metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseInput {
    pub listener1_xy_m: [f64; 2],
    pub listener2_xy_m: [f64; 2],
}

impl PoseInput {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.listener1_xy_m[0],
            self.listener1_xy_m[1],
            self.listener2_xy_m[0],
            self.listener2_xy_m[1],
        ]
    }
}

/// Axis-aligned square per listener used to normalise poses to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRegion {
    pub centers_xy_m: [[f64; 2]; 2],
    pub half_extent_m: f64,
}

impl Default for PoseRegion {
    fn default() -> Self {
        Self {
            centers_xy_m: [[-0.5, 1.0], [0.5, 1.0]],
            half_extent_m: 0.25,
        }
    }
}

impl PoseRegion {
    pub fn normalize(&self, pose: &PoseInput) -> [f64; 4] {
        let p = pose.as_array();
        let c = [
            self.centers_xy_m[0][0],
            self.centers_xy_m[0][1],
            self.centers_xy_m[1][0],
            self.centers_xy_m[1][1],
        ];
        std::array::from_fn(|i| (p[i] - c[i]) / self.half_extent_m)
    }

    pub fn contains(&self, pose: &PoseInput) -> bool {
        self.normalize(pose).iter().all(|v| v.abs() <= 1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_bands: usize,
    pub fourier_scale: f64,
    pub hidden: Vec<usize>,
    /// Scale applied to the Xavier-uniform initialisation of the head.
    #[serde(default = "default_head_init")]
    pub head_init_scale: f64,
    #[serde(default)]
    pub pose_region: PoseRegion,
}

fn default_head_init() -> f64 {
    0.1
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_bands: 64,
            fourier_scale: 3.0,
            hidden: vec![256, 256, 256],
            head_init_scale: default_head_init(),
            pose_region: PoseRegion::default(),
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn xavier(out: usize, inp: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let limit = scale * (6.0 / (inp + out) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((out, inp), |_| rng.gen_range(-limit..=limit)),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Trainable state plus the frozen Fourier frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub grid: FrequencyGrid,
    pub speakers: usize,
    pub seed: u64,
    /// `num_bands × 4`, never trained.
    pub fourier_freqs: Array2<f64>,
    /// Hidden layers followed by the head.
    pub layers: Vec<Dense>,
}

impl NetworkParams {
    pub fn init(config: &NetworkConfig, grid: &FrequencyGrid, speakers: usize, seed: u64) -> Result<Self> {
        if config.num_bands == 0 || config.hidden.is_empty() || config.hidden.contains(&0) || speakers == 0 {
            return Err(BsannError::Config("network needs bands, hidden layers and speakers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.fourier_scale).map_err(|e| BsannError::Config(e.to_string()))?;
        let fourier_freqs = Array2::from_shape_fn((config.num_bands, 4), |_| normal.sample(&mut rng));
        let mut layers = Vec::new();
        let mut width = 2 * config.num_bands;
        for &h in &config.hidden {
            layers.push(Dense::xavier(h, width, 1.0, &mut rng));
            width = h;
        }
        let outputs = 2 * speakers * NUM_PROGRAMS * grid.num_bins();
        layers.push(Dense::xavier(outputs, width, config.head_init_scale, &mut rng));
        Ok(Self {
            config: config.clone(),
            grid: *grid,
            speakers,
            seed,
            fourier_freqs,
            layers,
        })
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("network has a head")
    }

    pub fn output_len(&self) -> usize {
        2 * self.speakers * NUM_PROGRAMS * self.grid.num_bins()
    }

    pub fn num_trainable(&self) -> usize {
        self.layers.iter().map(|d| d.weight.len() + d.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.fourier_freqs.iter().all(|v| v.is_finite()) && self.layers.iter().all(Dense::is_finite)
    }

    pub fn encode(&self, pose: &PoseInput) -> Array1<f64> {
        fourier_encode(&self.config.pose_region.normalize(pose), self.fourier_freqs.view())
    }
}

/// `[sin(2π B s); cos(2π B s)]`.
pub fn fourier_encode(s: &[f64], freqs: ArrayView2<f64>) -> Array1<f64> {
    let bands = freqs.nrows();
    let mut out = Array1::zeros(2 * bands);
    for b in 0..bands {
        let phase: f64 = 2.0 * PI * freqs.row(b).iter().zip(s).map(|(f, x)| f * x).sum::<f64>();
        out[b] = phase.sin();
        out[bands + b] = phase.cos();
    }
    out
}

/// Complex filters `g[speaker, program, bin]`, bin fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub speakers: usize,
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl FilterBank {
    pub fn zeros(speakers: usize, grid: &FrequencyGrid) -> Self {
        Self {
            speakers,
            grid: *grid,
            values: vec![Complex64::new(0.0, 0.0); speakers * NUM_PROGRAMS * grid.num_bins()],
        }
    }

    pub fn bins(&self) -> usize {
        self.grid.num_bins()
    }

    #[inline]
    pub fn index(&self, l: usize, p: usize, n: usize) -> usize {
        (l * NUM_PROGRAMS + p) * self.grid.num_bins() + n
    }

    #[inline]
    pub fn at(&self, l: usize, p: usize, n: usize) -> Complex64 {
        self.values[self.index(l, p, n)]
    }

    #[inline]
    pub fn at_mut(&mut self, l: usize, p: usize, n: usize) -> &mut Complex64 {
        let i = self.index(l, p, n);
        &mut self.values[i]
    }

    pub fn channel(&self, l: usize, p: usize) -> &[Complex64] {
        let start = self.index(l, p, 0);
        &self.values[start..start + self.bins()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|z| z * c).collect(),
            ..self.clone()
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &FilterBank, alpha: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b * alpha;
        }
    }

    /// Drops the imaginary parts at DC and Nyquist so every channel is the
    /// spectrum of a real impulse response.
    pub fn project_real(&mut self) {
        let last = self.bins() - 1;
        for l in 0..self.speakers {
            for p in 0..NUM_PROGRAMS {
                self.at_mut(l, p, 0).im = 0.0;
                self.at_mut(l, p, last).im = 0.0;
            }
        }
    }
}

/// Activations kept for the backward pass of a batch.
pub struct ForwardCache {
    /// Input features followed by each hidden layer's tanh output.
    activations: Vec<Array2<f64>>,
}

fn check_params(params: &NetworkParams) -> Result<()> {
    if !params.is_finite() {
        let layer = params.layers.iter().position(|d| !d.is_finite());
        return Err(BsannError::Config(match layer {
            Some(i) => format!("non-finite weights in layer {i}"),
            None => "non-finite Fourier frequencies".into(),
        }));
    }
    Ok(())
}

fn outputs_to_bank(params: &NetworkParams, row: ndarray::ArrayView1<f64>) -> FilterBank {
    let mut bank = FilterBank::zeros(params.speakers, &params.grid);
    for (i, z) in bank.values.iter_mut().enumerate() {
        *z = Complex64::new(row[2 * i], row[2 * i + 1]);
    }
    bank.project_real();
    bank
}

/// Batched forward pass. Returns one filter bank per pose.
pub fn forward_batch(params: &NetworkParams, poses: &[PoseInput]) -> Result<(Vec<FilterBank>, ForwardCache)> {
    check_params(params)?;
    let features = 2 * params.config.num_bands;
    let mut x = Array2::zeros((poses.len(), features));
    for (i, pose) in poses.iter().enumerate() {
        x.row_mut(i).assign(&params.encode(pose));
    }
    let mut activations = vec![x];
    let (hidden, head) = params.layers.split_at(params.layers.len() - 1);
    for layer in hidden {
        let prev = activations.last().expect("input present");
        let mut z = prev.dot(&layer.weight.t());
        z += &layer.bias;
        z.mapv_inplace(f64::tanh);
        activations.push(z);
    }
    let mut y = activations.last().expect("hidden output").dot(&head[0].weight.t());
    y += &head[0].bias;
    let banks = y.axis_iter(Axis(0)).map(|row| outputs_to_bank(params, row)).collect();
    Ok((banks, ForwardCache { activations }))
}

/// `g = f_θ(s)` for a single pose.
pub fn forward(params: &NetworkParams, pose: &PoseInput) -> Result<FilterBank> {
    let (mut banks, _) = forward_batch(params, std::slice::from_ref(pose))?;
    Ok(banks.remove(0))
}

/// Parameter gradients, shaped like [`NetworkParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|d| d.weight.iter().chain(d.bias.iter()))
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for d in &mut self.layers {
            d.weight *= s;
            d.bias *= s;
        }
    }
}

/// Backpropagates filter-bank gradients (one per pose in the cached batch)
/// and sums the parameter gradients over the batch.
pub fn backward_batch(params: &NetworkParams, cache: &ForwardCache, bank_grads: &[FilterBank]) -> Result<Gradients> {
    let batch = cache.activations[0].nrows();
    if bank_grads.len() != batch {
        return Err(BsannError::Shape(format!("{} gradients for a batch of {batch}", bank_grads.len())));
    }
    let mut dy = Array2::zeros((batch, params.output_len()));
    for (i, g) in bank_grads.iter().enumerate() {
        let mut g = g.clone();
        g.project_real();
        let mut row = dy.row_mut(i);
        for (j, z) in g.values.iter().enumerate() {
            row[2 * j] = z.re;
            row[2 * j + 1] = z.im;
        }
    }

    let depth = params.layers.len();
    let mut grads = Vec::with_capacity(depth);
    let mut delta = dy;
    for li in (0..depth).rev() {
        let input = &cache.activations[li];
        let weight_grad = delta.t().dot(input);
        let bias_grad = delta.sum_axis(Axis(0));
        grads.push(Dense {
            weight: weight_grad,
            bias: bias_grad,
        });
        if li > 0 {
            let mut upstream = delta.dot(&params.layers[li].weight);
            // input = tanh(z) of layer li - 1
            ndarray::Zip::from(&mut upstream)
                .and(input)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            delta = upstream;
        }
    }
    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// Loss value and gradient of a scalar loss of one pose's filter bank.
pub fn backward<F>(params: &NetworkParams, pose: &PoseInput, loss_fn: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&FilterBank) -> Result<(f64, FilterBank)>,
{
    let (banks, cache) = forward_batch(params, std::slice::from_ref(pose))?;
    let (loss, grad) = loss_fn(&banks[0])?;
    if !loss.is_finite() {
        return Err(BsannError::NonFiniteLoss(format!("loss evaluated to {loss}")));
    }
    let grads = backward_batch(params, &cache, std::slice::from_ref(&grad))?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one flat parameter block; `t` counts from 1.
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, hyper: &AdamHyper) {
    let c1 = 1.0 - hyper.beta1.powi(t as i32);
    let c2 = 1.0 - hyper.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

/// Adam moments for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            step: 0,
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
        }
    }
}

pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState, lr: f64, hyper: &AdamHyper) {
    state.step += 1;
    let t = state.step;
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.layers.iter_mut())
        .zip(state.v.layers.iter_mut())
    {
        adam_update(
            p.weight.as_slice_mut().expect("standard layout"),
            g.weight.as_slice().expect("standard layout"),
            m.weight.as_slice_mut().expect("standard layout"),
            v.weight.as_slice_mut().expect("standard layout"),
            t,
            lr,
            hyper,
        );
        adam_update(
            p.bias.as_slice_mut().expect("standard layout"),
            g.bias.as_slice().expect("standard layout"),
            m.bias.as_slice_mut().expect("standard layout"),
            v.bias.as_slice_mut().expect("standard layout"),
            t,
            lr,
            hyper,
        );
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"BSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    version: u32,
    network: NetworkConfig,
    grid: FrequencyGrid,
    speakers: usize,
    seed: u64,
    /// `[rows, cols]` of the Fourier matrix then of every layer weight.
    shapes: Vec<[usize; 2]>,
    blob_floats: usize,
    #[serde(default)]
    hyperparameters: serde_json::Value,
}

/// Writes `params` as magic, a length-prefixed JSON header and an f32 blob.
pub fn write_checkpoint(mut w: impl Write, params: &NetworkParams, hyperparameters: serde_json::Value) -> Result<()> {
    let mut shapes = vec![[params.fourier_freqs.nrows(), params.fourier_freqs.ncols()]];
    shapes.extend(params.layers.iter().map(|d| [d.weight.nrows(), d.weight.ncols()]));
    let mut blob: Vec<f32> = params.fourier_freqs.iter().map(|&v| v as f32).collect();
    for d in &params.layers {
        blob.extend(d.weight.iter().map(|&v| v as f32));
        blob.extend(d.bias.iter().map(|&v| v as f32));
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        network: params.config.clone(),
        grid: params.grid,
        speakers: params.speakers,
        seed: params.seed,
        shapes,
        blob_floats: blob.len(),
        hyperparameters,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut bytes = Vec::with_capacity(blob.len() * 4);
    for v in blob {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(NetworkParams, serde_json::Value)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(BsannError::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(BsannError::Version {
            expected: CHECKPOINT_VERSION,
            found: header.version,
        });
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != header.blob_floats * 4 {
        return Err(BsannError::Format(format!(
            "checkpoint blob has {} bytes, header expects {}",
            bytes.len(),
            header.blob_floats * 4
        )));
    }
    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    let mut take = |rows: usize, cols: usize| -> Result<Array2<f64>> {
        let data: Vec<f64> = floats.by_ref().take(rows * cols).collect();
        Array2::from_shape_vec((rows, cols), data).map_err(|e| BsannError::Format(e.to_string()))
    };
    let shapes = &header.shapes;
    if shapes.len() < 2 {
        return Err(BsannError::Format("checkpoint lists no layers".into()));
    }
    let fourier_freqs = take(shapes[0][0], shapes[0][1])?;
    let mut layers = Vec::new();
    for s in &shapes[1..] {
        let weight = take(s[0], s[1])?;
        let bias = take(1, s[0])?.into_shape_with_order(s[0]).map_err(|e| BsannError::Format(e.to_string()))?;
        layers.push(Dense { weight, bias });
    }
    let params = NetworkParams {
        config: header.network,
        grid: header.grid,
        speakers: header.speakers,
        seed: header.seed,
        fourier_freqs,
        layers,
    };
    if params.head().weight.nrows() != params.output_len() {
        return Err(BsannError::Shape("head size does not match speakers and grid".into()));
    }
    Ok((params, header.hyperparameters))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams, hyperparameters: serde_json::Value) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(&mut w, params, hyperparameters)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkParams, serde_json::Value)> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
