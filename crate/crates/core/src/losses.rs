//! Training objectives and their gradients with respect to the filter bank.
//!
//! Gradients use the paired-real convention `∂L/∂Re g + i ∂L/∂Im g`. Every
//! term that depends on the radiated field goes through [`radiate`] and
//! [`field_adjoint`], so for `z = H g` the filter gradient is `conj(H)` times
//! the field gradient.
//!
//! Program pair `k` drives channels `2k` (left program) and `2k + 1` (right
//! program). Its bright zone is listener `k`, ears `2k` and `2k + 1`; its dark
//! zone is the other listener.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acoustic::{AtfTensor, NUM_EARS};
use crate::error::{BsannError, Result};
use crate::nn::{FilterBank, NUM_PROGRAMS};
use crate::spectral::{irfft, rfft, FrequencyGrid};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_xtc: f64,
    pub lambda_off: f64,
    pub lambda_diag: f64,
    pub lambda_reg: f64,
    pub beta0: f64,
    pub kappa_min: f64,
    pub epsilon: f64,
    pub w_bz: f64,
    pub w_dz: f64,
    pub eta: f64,
    /// Linear gain ceiling.
    pub g_max: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            lambda_xtc: 0.14,
            lambda_off: 1.5,
            lambda_diag: 1.0,
            lambda_reg: 1.0,
            beta0: 1e-4,
            kappa_min: 1e3,
            epsilon: 1e-8,
            w_bz: 0.075,
            w_dz: 0.075,
            eta: 1.0,
            g_max: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(BsannError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        let rest = [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_xtc", self.lambda_xtc),
            ("lambda_off", self.lambda_off),
            ("lambda_diag", self.lambda_diag),
            ("lambda_reg", self.lambda_reg),
            ("beta0", self.beta0),
            ("kappa_min", self.kappa_min),
            ("epsilon", self.epsilon),
            ("w_bz", self.w_bz),
            ("w_dz", self.w_dz),
            ("eta", self.eta),
            ("g_max", self.g_max),
        ];
        for (name, v) in rest {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(BsannError::Config(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        if self.g_max == 0.0 || self.kappa_min == 0.0 {
            return Err(BsannError::Config("g_max and kappa_min must be positive".into()));
        }
        Ok(())
    }
}

/// Bright-zone target magnitudes `|p_T|`, laid out `[ear, point, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub points: usize,
    pub bins: usize,
    pub bz_target_mag: Vec<f64>,
}

impl TargetSpec {
    pub fn new(points: usize, bins: usize, bz_target_mag: Vec<f64>) -> Result<Self> {
        if bz_target_mag.len() != NUM_EARS * points * bins {
            return Err(BsannError::Shape(format!(
                "target needs {} values, got {}",
                NUM_EARS * points * bins,
                bz_target_mag.len()
            )));
        }
        if bz_target_mag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(BsannError::Config("targets must be finite and nonnegative".into()));
        }
        Ok(Self {
            points,
            bins,
            bz_target_mag,
        })
    }

    #[inline]
    pub fn at(&self, e: usize, m: usize, n: usize) -> f64 {
        self.bz_target_mag[(e * self.points + m) * self.bins + n]
    }
}

/// Diagonal targets `|R_LL|`, `|R_RR|` laid out `[pair, side, point, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct XtcTargets {
    pub points: usize,
    pub bins: usize,
    pub target_diag_mag: Vec<f64>,
}

impl XtcTargets {
    /// Captures the diagonal magnitudes of `filters` on `atf`, floored at `epsilon`.
    pub fn capture(atf: &AtfTensor, filters: &FilterBank, epsilon: f64) -> Result<Self> {
        let field = radiate(atf, filters)?;
        let (points, bins) = (field.points, field.bins);
        let mut target_diag_mag = Vec::with_capacity(4 * points * bins);
        for k in 0..2 {
            for side in 0..2 {
                let (e, p) = (2 * k + side, 2 * k + side);
                for m in 0..points {
                    for n in 0..bins {
                        target_diag_mag.push(field.at(e, m, p, n).norm().max(epsilon));
                    }
                }
            }
        }
        Ok(Self {
            points,
            bins,
            target_diag_mag,
        })
    }

    #[inline]
    pub fn at(&self, k: usize, side: usize, m: usize, n: usize) -> f64 {
        self.target_diag_mag[((2 * k + side) * self.points + m) * self.bins + n]
    }
}

/// Late-energy penalty settings for the compactness loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactnessConfig {
    pub filter_len: usize,
    pub window: Vec<f64>,
    pub bandpass_fir: Vec<f64>,
}

impl CompactnessConfig {
    /// Window that is zero before `0.2 N`, rises as a half Hann to one at
    /// `0.4 N`, and a Hamming-windowed bandpass over the grid's band (65 taps,
    /// fewer on grids too short to hold them).
    pub fn for_grid(grid: &FrequencyGrid) -> Self {
        let len = grid.fft_size;
        let (a, b) = (0.2 * len as f64, 0.4 * len as f64);
        let window = (0..len)
            .map(|n| {
                let t = n as f64;
                if t < a {
                    0.0
                } else if t < b {
                    0.5 * (1.0 - (PI * (t - a) / (b - a)).cos())
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            filter_len: len,
            window,
            bandpass_fir: bandpass_fir(65.min(len - 1), grid.band_lo_hz, grid.band_hi_hz, grid.sample_rate_hz),
        }
    }

    pub fn validate_for(&self, grid: &FrequencyGrid) -> Result<()> {
        if self.filter_len != grid.fft_size || self.window.len() != self.filter_len {
            return Err(BsannError::Shape("compactness window must span fft_size samples".into()));
        }
        if self.window.iter().any(|w| !(0.0..=1.0).contains(w)) || self.window.windows(2).any(|p| p[1] < p[0]) {
            return Err(BsannError::Config("compactness window must be nondecreasing in [0, 1]".into()));
        }
        let f = &self.bandpass_fir;
        if f.is_empty() || f.len() > self.filter_len || (0..f.len()).any(|i| (f[i] - f[f.len() - 1 - i]).abs() > 1e-12) {
            return Err(BsannError::Config("bandpass FIR must be symmetric and no longer than the filter".into()));
        }
        Ok(())
    }
}

/// Linear-phase windowed-sinc bandpass.
pub fn bandpass_fir(taps: usize, lo_hz: f64, hi_hz: f64, fs: f64) -> Vec<f64> {
    let mid = (taps - 1) as f64 / 2.0;
    let lowpass = |fc: f64, t: f64| {
        let w = 2.0 * fc / fs;
        if t == 0.0 {
            w
        } else {
            (PI * w * t).sin() / (PI * t)
        }
    };
    (0..taps)
        .map(|n| {
            let t = n as f64 - mid;
            let hamming = 0.54 - 0.46 * (2.0 * PI * n as f64 / (taps - 1).max(1) as f64).cos();
            hamming * (lowpass(hi_hz, t) - lowpass(lo_hz, t))
        })
        .collect()
}

/// Radiated field `z[ear, point, program, bin] = Σ_l H[ear, point, l, bin] g[l, program, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub points: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(points: usize, bins: usize) -> Self {
        Self {
            points,
            bins,
            values: vec![ZERO; NUM_EARS * points * NUM_PROGRAMS * bins],
        }
    }

    #[inline]
    pub fn index(&self, e: usize, m: usize, p: usize, n: usize) -> usize {
        ((e * self.points + m) * NUM_PROGRAMS + p) * self.bins + n
    }

    #[inline]
    pub fn at(&self, e: usize, m: usize, p: usize, n: usize) -> Complex64 {
        self.values[self.index(e, m, p, n)]
    }

    #[inline]
    fn add(&mut self, e: usize, m: usize, p: usize, n: usize, v: Complex64) {
        let i = self.index(e, m, p, n);
        self.values[i] += v;
    }
}

fn check_shapes(atf: &AtfTensor, filters: &FilterBank) -> Result<()> {
    if atf.dims.ears != NUM_EARS || atf.dims.speakers != filters.speakers || atf.dims.bins != filters.bins() {
        return Err(BsannError::Shape(format!(
            "ATF {:?} does not match a bank of {} speakers and {} bins",
            atf.dims,
            filters.speakers,
            filters.bins()
        )));
    }
    Ok(())
}

pub fn radiate(atf: &AtfTensor, filters: &FilterBank) -> Result<Field> {
    check_shapes(atf, filters)?;
    let d = atf.dims;
    let mut field = Field::zeros(d.points, d.bins);
    for e in 0..NUM_EARS {
        for m in 0..d.points {
            for l in 0..d.speakers {
                let h = atf.path(e, m, l);
                for p in 0..NUM_PROGRAMS {
                    let g = filters.channel(l, p);
                    let start = field.index(e, m, p, 0);
                    for ((z, hv), gv) in field.values[start..start + d.bins].iter_mut().zip(h).zip(g) {
                        *z += hv * gv;
                    }
                }
            }
        }
    }
    Ok(field)
}

/// Pulls a field gradient back to the filters: `∂g = Σ_{e,m} conj(H) ∂z`.
pub fn field_adjoint(atf: &AtfTensor, grad: &Field) -> FilterBank {
    let d = atf.dims;
    let mut out = FilterBank::zeros(d.speakers, &atf.grid);
    for e in 0..NUM_EARS {
        for m in 0..d.points {
            for l in 0..d.speakers {
                let h = atf.path(e, m, l);
                for p in 0..NUM_PROGRAMS {
                    let start = grad.index(e, m, p, 0);
                    let gz = &grad.values[start..start + d.bins];
                    let idx = out.index(l, p, 0);
                    for (n, (hv, gv)) in h.iter().zip(gz).enumerate() {
                        out.values[idx + n] += hv.conj() * gv;
                    }
                }
            }
        }
    }
    out
}

/// Ear index of listener `k`'s side `s` (0 left, 1 right).
#[inline]
fn ear(k: usize, s: usize) -> usize {
    2 * k + s
}

/// Gradient of `|z|` (zero at the origin).
#[inline]
fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 0.0 {
        z / r
    } else {
        ZERO
    }
}

/// Bright-zone loss, ear-wise: a program channel should reach its own ear at
/// the target magnitude and the listener's other ear not at all.
pub fn bright_term(field: &Field, targets: &TargetSpec) -> Result<(f64, Field)> {
    if targets.points != field.points || targets.bins != field.bins {
        return Err(BsannError::Shape("target does not match the field".into()));
    }
    let mut grad = Field::zeros(field.points, field.bins);
    let count = (2 * 2 * 2 * field.points * field.bins) as f64;
    let mut sum = 0.0;
    for k in 0..2 {
        for side in 0..2 {
            let p = 2 * k + side;
            for s in 0..2 {
                let e = ear(k, s);
                for m in 0..field.points {
                    for n in 0..field.bins {
                        let t = if s == side { targets.at(e, m, n) } else { 0.0 };
                        let z = field.at(e, m, p, n);
                        let diff = t - z.norm();
                        sum += diff * diff;
                        grad.add(e, m, p, n, unit(z) * (-2.0 * diff / count));
                    }
                }
            }
        }
    }
    Ok((sum / count, grad))
}

pub fn dark_term(field: &Field) -> (f64, Field) {
    let mut grad = Field::zeros(field.points, field.bins);
    let count = (2 * 2 * 2 * field.points * field.bins) as f64;
    let mut sum = 0.0;
    for k in 0..2 {
        let other = 1 - k;
        for side in 0..2 {
            let p = 2 * k + side;
            for s in 0..2 {
                let e = ear(other, s);
                for m in 0..field.points {
                    for n in 0..field.bins {
                        let z = field.at(e, m, p, n);
                        sum += z.norm_sqr();
                        grad.add(e, m, p, n, z * (2.0 / count));
                    }
                }
            }
        }
    }
    (sum / count, grad)
}

pub fn loss_bright_grad(atf: &AtfTensor, filters: &FilterBank, targets: &TargetSpec) -> Result<(f64, FilterBank)> {
    let field = radiate(atf, filters)?;
    let (v, g) = bright_term(&field, targets)?;
    Ok((v, field_adjoint(atf, &g)))
}

pub fn loss_bright(atf: &AtfTensor, filters: &FilterBank, targets: &TargetSpec) -> Result<f64> {
    bright_term(&radiate(atf, filters)?, targets).map(|(v, _)| v)
}

pub fn loss_dark_grad(atf: &AtfTensor, filters: &FilterBank) -> Result<(f64, FilterBank)> {
    let field = radiate(atf, filters)?;
    let (v, g) = dark_term(&field);
    Ok((v, field_adjoint(atf, &g)))
}

pub fn loss_dark(atf: &AtfTensor, filters: &FilterBank) -> Result<f64> {
    Ok(dark_term(&radiate(atf, filters)?).0)
}

/// Mean of `max(0, |g| - g_max)^2` over every loudspeaker, channel and bin.
pub fn loss_gain_grad(filters: &FilterBank, g_max: f64) -> (f64, FilterBank) {
    let count = filters.values.len() as f64;
    let mut grad = FilterBank::zeros(filters.speakers, &filters.grid);
    let mut sum = 0.0;
    for (g, out) in filters.values.iter().zip(grad.values.iter_mut()) {
        let excess = g.norm() - g_max;
        if excess > 0.0 {
            sum += excess * excess;
            *out = unit(*g) * (2.0 * excess / count);
        }
    }
    (sum / count, grad)
}

pub fn loss_gain(filters: &FilterBank, g_max: f64) -> f64 {
    loss_gain_grad(filters, g_max).0
}

/// Windowed energy of the band-limited impulse responses, normalised by
/// `N̂ L` and averaged over the four channels.
pub fn loss_compact_grad(filters: &FilterBank, cfg: &CompactnessConfig) -> Result<(f64, FilterBank)> {
    cfg.validate_for(&filters.grid)?;
    let len = cfg.filter_len;
    let f = &cfg.bandpass_fir;
    let scale = 1.0 / (len * filters.speakers * NUM_PROGRAMS) as f64;
    let mut grad = FilterBank::zeros(filters.speakers, &filters.grid);
    let mut sum = 0.0;
    for l in 0..filters.speakers {
        for p in 0..NUM_PROGRAMS {
            let h = irfft(filters.channel(l, p), len);
            let mut wy = vec![0.0; len];
            for n in 0..len {
                if cfg.window[n] == 0.0 {
                    continue;
                }
                let y: f64 = (0..f.len().min(n + 1)).map(|j| f[j] * h[n - j]).sum();
                wy[n] = cfg.window[n] * y;
                sum += wy[n] * wy[n];
            }
            // d loss / d h[i] = scale Σ_n 2 w[n]^2 y[n] f[n - i]
            let mut d = vec![0.0; len];
            for n in 0..len {
                if wy[n] == 0.0 {
                    continue;
                }
                let c = 2.0 * scale * cfg.window[n] * wy[n];
                for j in 0..f.len().min(n + 1) {
                    d[n - j] += c * f[j];
                }
            }
            let spec = rfft(&d, len);
            let last = spec.len() - 1;
            let idx = grad.index(l, p, 0);
            for (k, v) in spec.iter().enumerate() {
                grad.values[idx + k] = if k == 0 || k == last {
                    Complex64::new(v.re / len as f64, 0.0)
                } else {
                    v * (2.0 / len as f64)
                };
            }
        }
    }
    Ok((sum * scale, grad))
}

pub fn loss_compact(filters: &FilterBank, cfg: &CompactnessConfig) -> Result<f64> {
    loss_compact_grad(filters, cfg).map(|(v, _)| v)
}

/// `α L1 + (1 − α) L2 + β L3 + γ L4`.
pub fn combine_psz(bright: f64, dark: f64, gain: f64, compact: f64, w: &LossWeights) -> f64 {
    w.alpha * bright + (1.0 - w.alpha) * dark + w.beta * gain + w.gamma * compact
}

/// Effective 2×2 ear matrices `[[R_LL, R_LR], [R_RL, R_RR]]` of program
/// pair `k`, laid out `[point][bin]`.
pub fn effective_ear_matrix(atf: &AtfTensor, filters: &FilterBank, k: usize) -> Result<Vec<[[Complex64; 2]; 2]>> {
    let field = radiate(atf, filters)?;
    Ok(ear_matrices(&field, k))
}

fn ear_matrices(field: &Field, k: usize) -> Vec<[[Complex64; 2]; 2]> {
    let mut out = Vec::with_capacity(field.points * field.bins);
    for m in 0..field.points {
        for n in 0..field.bins {
            let r = |s: usize, c: usize| field.at(ear(k, s), m, 2 * k + c, n);
            out.push([[r(0, 0), r(0, 1)], [r(1, 0), r(1, 1)]]);
        }
    }
    out
}

/// Energy-weighted mean leakage `log(1 + r)`.
///
/// Per control point the weights `E(ω)` are normalised to sum to one over the
/// bins, then points and program pairs are averaged. `E` carries no gradient.
pub fn xtc_off_term(field: &Field, epsilon: f64) -> Result<(f64, Field)> {
    let (points, bins) = (field.points, field.bins);
    let mut grad = Field::zeros(points, bins);
    let mut total = 0.0;
    for k in 0..2 {
        let t = ear_matrices(field, k);
        for m in 0..points {
            let row = &t[m * bins..(m + 1) * bins];
            let energy: Vec<f64> = row.iter().map(|r| 0.5 * (r[0][0].norm_sqr() + r[1][1].norm_sqr())).collect();
            let norm: f64 = energy.iter().sum();
            if !(norm > 0.0) {
                return Err(BsannError::DegeneratePlant(format!(
                    "program pair {k}, control point {m}: no diagonal energy in any bin"
                )));
            }
            for (n, r) in row.iter().enumerate() {
                let (ll, lr, rl, rr) = (r[0][0], r[0][1], r[1][0], r[1][1]);
                let dl = ll.norm_sqr() + epsilon;
                let dr = rr.norm_sqr() + epsilon;
                let leak = 0.5 * (rl.norm_sqr() / dl + lr.norm_sqr() / dr);
                let c = energy[n] / norm / (2 * points) as f64;
                total += c * leak.ln_1p();
                let s = c / (1.0 + leak);
                grad.add(ear(k, 1), m, 2 * k, n, rl * (s / dl));
                grad.add(ear(k, 0), m, 2 * k + 1, n, lr * (s / dr));
                grad.add(ear(k, 0), m, 2 * k, n, ll * (-s * rl.norm_sqr() / (dl * dl)));
                grad.add(ear(k, 1), m, 2 * k + 1, n, rr * (-s * lr.norm_sqr() / (dr * dr)));
            }
        }
    }
    Ok((total, grad))
}

pub fn xtc_off_loss(atf: &AtfTensor, filters: &FilterBank, epsilon: f64) -> Result<f64> {
    xtc_off_term(&radiate(atf, filters)?, epsilon).map(|(v, _)| v)
}

/// Mean of `½[(|R_LL|/t_L − 1)² + (|R_RR|/t_R − 1)²]`.
pub fn xtc_diag_term(field: &Field, targets: &XtcTargets) -> Result<(f64, Field)> {
    let (points, bins) = (field.points, field.bins);
    if targets.points != points || targets.bins != bins {
        return Err(BsannError::Shape("XTC targets do not match the field".into()));
    }
    let mut grad = Field::zeros(points, bins);
    let count = (2 * points * bins) as f64;
    let mut total = 0.0;
    for k in 0..2 {
        for side in 0..2 {
            for m in 0..points {
                for n in 0..bins {
                    let z = field.at(ear(k, side), m, 2 * k + side, n);
                    let t = targets.at(k, side, m, n);
                    let u = z.norm() / t - 1.0;
                    total += 0.5 * u * u / count;
                    grad.add(ear(k, side), m, 2 * k + side, n, unit(z) * (u / t / count));
                }
            }
        }
    }
    Ok((total, grad))
}

pub fn xtc_diag_loss(atf: &AtfTensor, filters: &FilterBank, targets: &XtcTargets) -> Result<f64> {
    xtc_diag_term(&radiate(atf, filters)?, targets).map(|(v, _)| v)
}

/// Eigenvalue extremes of the Gram matrix `Pᴴ P` for a 2×L plant `P`.
///
/// The nonzero spectrum equals that of the 2×2 matrix `P Pᴴ`; with more than
/// two loudspeakers the smallest eigenvalue is zero.
pub fn gram_extremes(rows: [&[Complex64]; 2]) -> (f64, f64, f64) {
    let a: f64 = rows[0].iter().map(|v| v.norm_sqr()).sum();
    let d: f64 = rows[1].iter().map(|v| v.norm_sqr()).sum();
    let c: Complex64 = rows[0].iter().zip(rows[1]).map(|(x, y)| x * y.conj()).sum();
    let trace = a + d;
    let half_gap = ((0.5 * (a - d)).powi(2) + c.norm_sqr()).sqrt();
    let hi = 0.5 * trace + half_gap;
    let lo = (0.5 * trace - half_gap).max(0.0);
    let speakers = rows[0].len();
    let lo = match speakers {
        1 => hi,
        2 => lo,
        _ => 0.0,
    };
    (hi, lo, trace)
}

/// Conditioning weight `β_0 ReLU((κ − κ_min)/κ_min) tr(G)/L`.
pub fn conditioning_weight(rows: [&[Complex64]; 2], w: &LossWeights) -> f64 {
    let (hi, lo, trace) = gram_extremes(rows);
    let kappa = hi / (lo + w.epsilon);
    w.beta0 * ((kappa - w.kappa_min) / w.kappa_min).max(0.0) * trace / rows[0].len() as f64
}

/// `(1/(N M)) Σ β_m ‖W‖_F²` per program pair, averaged over pairs.
pub fn xtc_reg_loss_grad(atf: &AtfTensor, filters: &FilterBank, w: &LossWeights) -> Result<(f64, FilterBank)> {
    check_shapes(atf, filters)?;
    let d = atf.dims;
    let mut grad = FilterBank::zeros(d.speakers, &atf.grid);
    let mut total = 0.0;
    let scale = 1.0 / (2 * d.points * d.bins) as f64;
    let mut rows = [vec![ZERO; d.speakers], vec![ZERO; d.speakers]];
    for k in 0..2 {
        for n in 0..d.bins {
            let mut beta_sum = 0.0;
            for m in 0..d.points {
                for (s, row) in rows.iter_mut().enumerate() {
                    for (l, v) in row.iter_mut().enumerate() {
                        *v = atf.at(ear(k, s), m, l, n);
                    }
                }
                beta_sum += conditioning_weight([&rows[0], &rows[1]], w);
            }
            if beta_sum == 0.0 {
                continue;
            }
            for l in 0..d.speakers {
                for p in [2 * k, 2 * k + 1] {
                    let g = filters.at(l, p, n);
                    total += scale * beta_sum * g.norm_sqr();
                    *grad.at_mut(l, p, n) += g * (2.0 * scale * beta_sum);
                }
            }
        }
    }
    Ok((total, grad))
}

pub fn xtc_reg_loss(atf: &AtfTensor, filters: &FilterBank, w: &LossWeights) -> Result<f64> {
    xtc_reg_loss_grad(atf, filters, w).map(|(v, _)| v)
}

/// `λ_off L_off + λ_diag L_diag + λ_reg L_reg`.
pub fn combine_xtc(off: f64, diag: f64, reg: f64, w: &LossWeights) -> f64 {
    w.lambda_off * off + w.lambda_diag * diag + w.lambda_reg * reg
}

/// `(1/N) Σ_n ‖vec W_cur − vec W_teach‖²` over every loudspeaker and channel.
pub fn loss_teacher_grad(current: &FilterBank, teacher: &FilterBank) -> Result<(f64, FilterBank)> {
    if current.values.len() != teacher.values.len() {
        return Err(BsannError::Shape("teacher bank has a different shape".into()));
    }
    let bins = current.bins() as f64;
    let mut grad = FilterBank::zeros(current.speakers, &current.grid);
    let mut sum = 0.0;
    for ((a, b), out) in current.values.iter().zip(&teacher.values).zip(grad.values.iter_mut()) {
        let diff = a - b;
        sum += diff.norm_sqr();
        *out = diff * (2.0 / bins);
    }
    Ok((sum / bins, grad))
}

pub fn loss_teacher(current: &FilterBank, teacher: &FilterBank) -> Result<f64> {
    loss_teacher_grad(current, teacher).map(|(v, _)| v)
}

/// `λ_xtc L_XTC + w_BZ L_BZ + w_DZ L_DZ + β L_gain + γ L_compact + η L_teach`.
pub fn combine_total(xtc: f64, bright: f64, dark: f64, gain: f64, compact: f64, teach: f64, w: &LossWeights) -> f64 {
    w.lambda_xtc * xtc + w.w_bz * bright + w.w_dz * dark + w.beta * gain + w.gamma * compact + w.eta * teach
}

/// Stage-1 loss components of one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PszTerms {
    pub bright: f64,
    pub dark: f64,
    pub gain: f64,
    pub compact: f64,
    pub total: f64,
}

/// Stage-2 loss components of one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TotalTerms {
    pub off: f64,
    pub diag: f64,
    pub reg: f64,
    pub xtc: f64,
    pub bright: f64,
    pub dark: f64,
    pub gain: f64,
    pub compact: f64,
    pub teach: f64,
    pub total: f64,
}

fn scaled_field(mut f: Field, s: f64) -> Field {
    for v in &mut f.values {
        *v *= s;
    }
    f
}

fn accumulate(into: &mut Field, other: &Field, s: f64) {
    for (a, b) in into.values.iter_mut().zip(&other.values) {
        *a += b * s;
    }
}

/// `L_PSZ` and its filter gradient for one scene.
pub fn psz_objective(
    atf: &AtfTensor,
    filters: &FilterBank,
    targets: &TargetSpec,
    compact: &CompactnessConfig,
    w: &LossWeights,
) -> Result<(PszTerms, FilterBank)> {
    let field = radiate(atf, filters)?;
    let (bright, gb) = bright_term(&field, targets)?;
    let (dark, gd) = dark_term(&field);
    let mut gz = scaled_field(gb, w.alpha);
    accumulate(&mut gz, &gd, 1.0 - w.alpha);
    let mut grad = field_adjoint(atf, &gz);
    let (gain, gg) = loss_gain_grad(filters, w.g_max);
    grad.add_scaled(&gg, w.beta);
    let (comp, gc) = if w.gamma > 0.0 {
        loss_compact_grad(filters, compact)?
    } else {
        (loss_compact(filters, compact)?, FilterBank::zeros(filters.speakers, &filters.grid))
    };
    grad.add_scaled(&gc, w.gamma);
    let terms = PszTerms {
        bright,
        dark,
        gain,
        compact: comp,
        total: combine_psz(bright, dark, gain, comp, w),
    };
    check_finite_terms(&[("bright", bright), ("dark", dark), ("gain", gain), ("compact", comp)])?;
    Ok((terms, grad))
}

/// `L_total` and its filter gradient for one scene.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    atf: &AtfTensor,
    filters: &FilterBank,
    targets: &TargetSpec,
    xtc_targets: &XtcTargets,
    teacher: &FilterBank,
    compact: &CompactnessConfig,
    w: &LossWeights,
) -> Result<(TotalTerms, FilterBank)> {
    let field = radiate(atf, filters)?;
    let (off, g_off) = xtc_off_term(&field, w.epsilon)?;
    let (diag, g_diag) = xtc_diag_term(&field, xtc_targets)?;
    let (bright, g_bright) = bright_term(&field, targets)?;
    let (dark, g_dark) = dark_term(&field);
    let mut gz = scaled_field(g_off, w.lambda_xtc * w.lambda_off);
    accumulate(&mut gz, &g_diag, w.lambda_xtc * w.lambda_diag);
    accumulate(&mut gz, &g_bright, w.w_bz);
    accumulate(&mut gz, &g_dark, w.w_dz);
    let mut grad = field_adjoint(atf, &gz);

    let (reg, g_reg) = xtc_reg_loss_grad(atf, filters, w)?;
    grad.add_scaled(&g_reg, w.lambda_xtc * w.lambda_reg);
    let (gain, g_gain) = loss_gain_grad(filters, w.g_max);
    grad.add_scaled(&g_gain, w.beta);
    let (comp, g_comp) = loss_compact_grad(filters, compact)?;
    grad.add_scaled(&g_comp, w.gamma);
    let (teach, g_teach) = loss_teacher_grad(filters, teacher)?;
    grad.add_scaled(&g_teach, w.eta);

    check_finite_terms(&[
        ("off", off),
        ("diag", diag),
        ("reg", reg),
        ("bright", bright),
        ("dark", dark),
        ("gain", gain),
        ("compact", comp),
        ("teach", teach),
    ])?;
    let xtc = combine_xtc(off, diag, reg, w);
    Ok((
        TotalTerms {
            off,
            diag,
            reg,
            xtc,
            bright,
            dark,
            gain,
            compact: comp,
            teach,
            total: combine_total(xtc, bright, dark, gain, comp, teach, w),
        },
        grad,
    ))
}

fn check_finite_terms(terms: &[(&str, f64)]) -> Result<()> {
    for (name, v) in terms {
        if !v.is_finite() {
            return Err(BsannError::NonFiniteLoss(format!("{name} term evaluated to {v}")));
        }
    }
    Ok(())
}
