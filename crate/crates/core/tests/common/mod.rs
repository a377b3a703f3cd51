//! Scalar reference implementations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use bsann_core::acoustic::{AtfDims, AtfTensor, NUM_EARS};
use bsann_core::losses::*;
use bsann_core::nn::{self, FilterBank, NetworkConfig, NetworkParams, PoseInput, PoseRegion, NUM_PROGRAMS};
use bsann_core::spectral::FrequencyGrid;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type C = Complex64;

pub fn grid_with_bins(bins: usize) -> FrequencyGrid {
    let fft = 2 * (bins - 1);
    FrequencyGrid::new(fft as f64 * 1000.0, fft, 1.0, fft as f64 * 500.0).unwrap()
}

pub fn random_atf(rng: &mut ChaCha8Rng, points: usize, speakers: usize, grid: &FrequencyGrid) -> AtfTensor {
    let dims = AtfDims {
        ears: NUM_EARS,
        points,
        speakers,
        bins: grid.num_bins(),
    };
    let values = (0..dims.len()).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    AtfTensor::from_values(dims, *grid, values).unwrap()
}

pub fn random_bank(rng: &mut ChaCha8Rng, speakers: usize, grid: &FrequencyGrid, scale: f64) -> FilterBank {
    let mut b = FilterBank::zeros(speakers, grid);
    for v in &mut b.values {
        *v = C::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
    }
    b.project_real();
    b
}

pub fn random_targets(rng: &mut ChaCha8Rng, points: usize, bins: usize) -> TargetSpec {
    TargetSpec::new(points, bins, (0..4 * points * bins).map(|_| rng.gen_range(0.1..2.0)).collect()).unwrap()
}

pub fn random_xtc_targets(rng: &mut ChaCha8Rng, points: usize, bins: usize) -> XtcTargets {
    XtcTargets {
        points,
        bins,
        target_diag_mag: (0..4 * points * bins).map(|_| rng.gen_range(0.2..2.0)).collect(),
    }
}

/// `Σ_l H g` for one ear, point, channel and bin.
pub fn z(atf: &AtfTensor, g: &FilterBank, e: usize, m: usize, p: usize, n: usize) -> C {
    let mut acc = C::new(0.0, 0.0);
    for l in 0..g.speakers {
        acc += atf.at(e, m, l, n) * g.at(l, p, n);
    }
    acc
}

pub fn naive_bright(atf: &AtfTensor, g: &FilterBank, t: &TargetSpec) -> f64 {
    let (pts, bins) = (atf.dims.points, atf.dims.bins);
    let mut per_pair = [0.0; 2];
    for k in 0..2 {
        let mut acc = 0.0;
        for ch in 0..2 {
            for s in 0..2 {
                for m in 0..pts {
                    for n in 0..bins {
                        let e = 2 * k + s;
                        let target = if s == ch { t.at(e, m, n) } else { 0.0 };
                        let d = target - z(atf, g, e, m, 2 * k + ch, n).norm();
                        acc += d * d;
                    }
                }
            }
        }
        per_pair[k] = acc / (4 * pts * bins) as f64;
    }
    0.5 * (per_pair[0] + per_pair[1])
}

pub fn naive_dark(atf: &AtfTensor, g: &FilterBank) -> f64 {
    let (pts, bins) = (atf.dims.points, atf.dims.bins);
    let mut total = 0.0;
    for k in 0..2 {
        let mut acc = 0.0;
        for ch in 0..2 {
            for s in 0..2 {
                for m in 0..pts {
                    for n in 0..bins {
                        acc += z(atf, g, 2 * (1 - k) + s, m, 2 * k + ch, n).norm_sqr();
                    }
                }
            }
        }
        total += 0.5 * acc / (4 * pts * bins) as f64;
    }
    total
}

pub fn naive_gain(g: &FilterBank, gmax: f64) -> f64 {
    let mut per_channel = 0.0;
    for p in 0..NUM_PROGRAMS {
        let mut acc = 0.0;
        for l in 0..g.speakers {
            for n in 0..g.bins() {
                acc += (g.at(l, p, n).norm() - gmax).max(0.0).powi(2);
            }
        }
        per_channel += acc / (g.speakers * g.bins()) as f64;
    }
    per_channel / NUM_PROGRAMS as f64
}

pub fn ear_matrix(atf: &AtfTensor, g: &FilterBank, k: usize, m: usize, n: usize) -> [[C; 2]; 2] {
    let r = |s: usize, c: usize| z(atf, g, 2 * k + s, m, 2 * k + c, n);
    [[r(0, 0), r(0, 1)], [r(1, 0), r(1, 1)]]
}

/// Energy weights `E[k][m][n]` of a bank (held fixed for stop-gradient checks).
pub fn energies(atf: &AtfTensor, g: &FilterBank) -> Vec<Vec<Vec<f64>>> {
    (0..2)
        .map(|k| {
            (0..atf.dims.points)
                .map(|m| {
                    (0..atf.dims.bins)
                        .map(|n| {
                            let t = ear_matrix(atf, g, k, m, n);
                            0.5 * (t[0][0].norm_sqr() + t[1][1].norm_sqr())
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn naive_off_with(atf: &AtfTensor, g: &FilterBank, eps: f64, energy: &[Vec<Vec<f64>>]) -> f64 {
    let (pts, bins) = (atf.dims.points, atf.dims.bins);
    let mut total = 0.0;
    for k in 0..2 {
        let mut pair = 0.0;
        for m in 0..pts {
            let norm: f64 = energy[k][m].iter().sum();
            for n in 0..bins {
                let t = ear_matrix(atf, g, k, m, n);
                let r = 0.5 * (t[1][0].norm_sqr() / (t[0][0].norm_sqr() + eps) + t[0][1].norm_sqr() / (t[1][1].norm_sqr() + eps));
                pair += energy[k][m][n] / norm * (1.0 + r).ln();
            }
        }
        total += 0.5 * pair / pts as f64;
    }
    total
}

pub fn naive_diag(atf: &AtfTensor, g: &FilterBank, t: &XtcTargets) -> f64 {
    let (pts, bins) = (atf.dims.points, atf.dims.bins);
    let mut total = 0.0;
    for k in 0..2 {
        for m in 0..pts {
            for n in 0..bins {
                let r = ear_matrix(atf, g, k, m, n);
                let a = r[0][0].norm() / t.at(k, 0, m, n) - 1.0;
                let b = r[1][1].norm() / t.at(k, 1, m, n) - 1.0;
                total += 0.5 * 0.5 * (a * a + b * b) / (pts * bins) as f64;
            }
        }
    }
    total
}

/// Reference conditioning weight from a full eigen-decomposition of `Pᴴ P`.
pub fn eigen_beta(atf: &AtfTensor, k: usize, m: usize, n: usize, w: &LossWeights) -> f64 {
    let l = atf.dims.speakers;
    let p = DMatrix::from_fn(2, l, |s, j| atf.at(2 * k + s, m, j, n));
    let gram = p.adjoint() * &p;
    let eig = SymmetricEigen::new(gram.clone());
    let hi = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let mut lo = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min).max(0.0);
    // Exact rank deficiency shows up as round-off.
    if lo < 1e-12 * hi {
        lo = 0.0;
    }
    let trace: f64 = (0..l).map(|i| gram[(i, i)].re).sum();
    let kappa = hi / (lo + w.epsilon);
    w.beta0 * ((kappa - w.kappa_min) / w.kappa_min).max(0.0) * trace / l as f64
}

pub fn naive_reg(atf: &AtfTensor, g: &FilterBank, w: &LossWeights) -> f64 {
    let (pts, bins) = (atf.dims.points, atf.dims.bins);
    let mut total = 0.0;
    for k in 0..2 {
        for m in 0..pts {
            for n in 0..bins {
                let mut fro = 0.0;
                for l in 0..g.speakers {
                    fro += g.at(l, 2 * k, n).norm_sqr() + g.at(l, 2 * k + 1, n).norm_sqr();
                }
                total += 0.5 * eigen_beta(atf, k, m, n, w) * fro / (pts * bins) as f64;
            }
        }
    }
    total
}

pub fn naive_teacher(a: &FilterBank, b: &FilterBank) -> f64 {
    let mut acc = 0.0;
    for n in 0..a.bins() {
        for l in 0..a.speakers {
            for p in 0..NUM_PROGRAMS {
                acc += (a.at(l, p, n) - b.at(l, p, n)).norm_sqr();
            }
        }
    }
    acc / a.bins() as f64
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Central differences over every real and imaginary part of the bank.
pub fn fd_bank(bank: &FilterBank, f: &dyn Fn(&FilterBank) -> f64, h: f64) -> FilterBank {
    let mut out = FilterBank::zeros(bank.speakers, &bank.grid);
    for i in 0..bank.values.len() {
        for part in 0..2 {
            let mut plus = bank.clone();
            let mut minus = bank.clone();
            if part == 0 {
                plus.values[i].re += h;
                minus.values[i].re -= h;
            } else {
                plus.values[i].im += h;
                minus.values[i].im -= h;
            }
            let d = (f(&plus) - f(&minus)) / (2.0 * h);
            if part == 0 {
                out.values[i].re = d;
            } else {
                out.values[i].im = d;
            }
        }
    }
    out
}

pub fn assert_grad_close(name: &str, analytic: &FilterBank, numeric: &FilterBank) {
    let scale = analytic.values.iter().chain(&numeric.values).fold(0.0f64, |a, z| a.max(z.re.abs()).max(z.im.abs()));
    assert!(scale > 0.0, "{name}: gradient vanished");
    for (i, (a, b)) in analytic.values.iter().zip(&numeric.values).enumerate() {
        for (x, y) in [(a.re, b.re), (a.im, b.im)] {
            let tol = 1e-4 * x.abs().max(y.abs()).max(1e-3 * scale);
            assert!((x - y).abs() <= tol, "{name}: entry {i} analytic {x} vs numeric {y}");
        }
    }
}

pub fn toy() -> (AtfTensor, FilterBank, TargetSpec, XtcTargets, FilterBank, CompactnessConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let grid = grid_with_bins(4);
    let atf = random_atf(&mut rng, 1, 2, &grid);
    let g = random_bank(&mut rng, 2, &grid, 2.0);
    let t = random_targets(&mut rng, 1, 4);
    let xt = random_xtc_targets(&mut rng, 1, 4);
    let teacher = random_bank(&mut rng, 2, &grid, 1.0);
    let cfg = CompactnessConfig {
        filter_len: 6,
        window: vec![0.0, 0.0, 0.3, 0.8, 1.0, 1.0],
        bandpass_fir: vec![0.2, 0.6, 0.2],
    };
    (atf, g, t, xt, teacher, cfg)
}

pub fn tiny_net(grid: &FrequencyGrid) -> NetworkParams {
    let cfg = NetworkConfig {
        num_bands: 3,
        fourier_scale: 0.5,
        hidden: vec![2],
        head_init_scale: 3.0,
        pose_region: PoseRegion::default(),
    };
    NetworkParams::init(&cfg, grid, 2, 4).unwrap()
}

/// Central differences of `f(forward(params))` over every trainable parameter.
pub fn fd_params(params: &NetworkParams, pose: &PoseInput, f: &dyn Fn(&FilterBank) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut out = Vec::new();
    for li in 0..params.layers.len() {
        let (rows, cols) = params.layers[li].weight.dim();
        let eval = |p: &NetworkParams| f(&nn::forward(p, pose).unwrap());
        for r in 0..rows {
            for c in 0..cols {
                let mut a = params.clone();
                let mut b = params.clone();
                a.layers[li].weight[[r, c]] += h;
                b.layers[li].weight[[r, c]] -= h;
                out.push((eval(&a) - eval(&b)) / (2.0 * h));
            }
        }
        for r in 0..rows {
            let mut a = params.clone();
            let mut b = params.clone();
            a.layers[li].bias[r] += h;
            b.layers[li].bias[r] -= h;
            out.push((eval(&a) - eval(&b)) / (2.0 * h));
        }
    }
    out
}

pub fn flatten(g: &nn::Gradients) -> Vec<f64> {
    g.layers.iter().flat_map(|d| d.weight.iter().chain(d.bias.iter()).cloned().collect::<Vec<_>>()).collect()
}

pub fn assert_vec_close(name: &str, a: &[f64], b: &[f64]) {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0, "{name}: gradient vanished");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let tol = 1e-4 * x.abs().max(y.abs()).max(1e-3 * scale);
        assert!((x - y).abs() <= tol, "{name}: parameter {i} analytic {x} vs numeric {y}");
    }
}


/// Windowed, band-passed impulse-response energy from a direct inverse DFT.
pub fn naive_compact(g: &FilterBank, cfg: &CompactnessConfig) -> f64 {
    let len = cfg.filter_len;
    let half = len / 2;
    let mut acc = 0.0;
    for l in 0..g.speakers {
        for p in 0..NUM_PROGRAMS {
            let h: Vec<f64> = (0..len)
                .map(|t| {
                    let mut v = g.at(l, p, 0).re + g.at(l, p, half).re * if t % 2 == 0 { 1.0 } else { -1.0 };
                    for k in 1..half {
                        let ph = 2.0 * std::f64::consts::PI * (k * t) as f64 / len as f64;
                        v += 2.0 * (g.at(l, p, k) * C::new(ph.cos(), ph.sin())).re;
                    }
                    v / len as f64
                })
                .collect();
            for n in 0..len {
                let mut y = 0.0;
                for (j, f) in cfg.bandpass_fir.iter().enumerate() {
                    if j <= n {
                        y += f * h[n - j];
                    }
                }
                acc += (cfg.window[n] * y).powi(2);
            }
        }
    }
    acc / (len * g.speakers * NUM_PROGRAMS) as f64
}

pub fn naive_psz(atf: &AtfTensor, g: &FilterBank, t: &TargetSpec, cfg: &CompactnessConfig, w: &LossWeights) -> f64 {
    w.alpha * naive_bright(atf, g, t)
        + (1.0 - w.alpha) * naive_dark(atf, g)
        + w.beta * naive_gain(g, w.g_max)
        + w.gamma * naive_compact(g, cfg)
}

#[allow(clippy::too_many_arguments)]
pub fn naive_total(
    atf: &AtfTensor,
    g: &FilterBank,
    t: &TargetSpec,
    xt: &XtcTargets,
    teacher: &FilterBank,
    cfg: &CompactnessConfig,
    w: &LossWeights,
) -> f64 {
    let e = energies(atf, g);
    let xtc = w.lambda_off * naive_off_with(atf, g, w.epsilon, &e)
        + w.lambda_diag * naive_diag(atf, g, xt)
        + w.lambda_reg * naive_reg(atf, g, w);
    w.lambda_xtc * xtc
        + w.w_bz * naive_bright(atf, g, t)
        + w.w_dz * naive_dark(atf, g)
        + w.beta * naive_gain(g, w.g_max)
        + w.gamma * naive_compact(g, cfg)
        + w.eta * naive_teacher(g, teacher)
}

/// Random compactness settings for `len`-tap filters (window ramps up).
pub fn random_compactness(rng: &mut ChaCha8Rng, len: usize) -> CompactnessConfig {
    CompactnessConfig {
        filter_len: len,
        window: {
            let mut w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
            w.sort_by(f64::total_cmp);
            w
        },
        bandpass_fir: {
            let (a, b) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            if len >= 3 { vec![a, b, a] } else { vec![b] }
        },
    }
}
