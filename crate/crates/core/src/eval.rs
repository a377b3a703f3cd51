//! Isolation metrics, their log-frequency summaries, linear rendering and
//! plot-ready exports.
//!
//! Metrics are energy ratios in dB over a tensor whose control points are the
//! ear reference points. When an ATF has several points per ear, the energies
//! are summed over them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acoustic::AtfTensor;
use crate::error::{BsannError, Result};
use crate::losses::{radiate, Field};
use crate::nn::{FilterBank, NUM_PROGRAMS};
use crate::spectral::{irfft, log_frequency_weights_at, rfft, FrequencyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Largest magnitude reported, in dB.
    pub cap_db: f64,
    /// Ratios are capped when the denominator falls below `epsilon` times the numerator.
    pub epsilon: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            cap_db: 120.0,
            epsilon: 1e-8,
        }
    }
}

/// `10 log10(num / den)` limited to `±cap_db`.
pub fn ratio_db(num: f64, den: f64, cfg: &MetricConfig) -> f64 {
    if num == 0.0 && den == 0.0 {
        return 0.0;
    }
    if den < cfg.epsilon * num {
        return cfg.cap_db;
    }
    (10.0 * (num / den).log10()).clamp(-cfg.cap_db, cfg.cap_db)
}

/// Energy of program pair `k`'s two channels at listener `who`, per bin.
fn zone_energy(field: &Field, who: usize, k: usize) -> Vec<f64> {
    (0..field.bins)
        .map(|n| {
            let mut acc = 0.0;
            for s in 0..2 {
                for m in 0..field.points {
                    for c in 0..2 {
                        acc += field.at(2 * who + s, m, 2 * k + c, n).norm_sqr();
                    }
                }
            }
            acc
        })
        .collect()
}

fn pairwise(num: &[f64], den: &[f64], cfg: &MetricConfig) -> Vec<f64> {
    num.iter().zip(den).map(|(a, b)| ratio_db(*a, *b, cfg)).collect()
}

/// Inter-zone isolation: program `k` at listener `k` over the same program at
/// the other listener.
pub fn compute_izi(atf: &AtfTensor, filters: &FilterBank, cfg: &MetricConfig) -> Result<[Vec<f64>; 2]> {
    let f = radiate(atf, filters)?;
    Ok([0, 1].map(|k| pairwise(&zone_energy(&f, k, k), &zone_energy(&f, 1 - k, k), cfg)))
}

/// Inter-program isolation: at listener `k`, its own program over the other one.
pub fn compute_ipi(atf: &AtfTensor, filters: &FilterBank, cfg: &MetricConfig) -> Result<[Vec<f64>; 2]> {
    let f = radiate(atf, filters)?;
    Ok([0, 1].map(|k| pairwise(&zone_energy(&f, k, k), &zone_energy(&f, k, 1 - k), cfg)))
}

/// Crosstalk cancellation: diagonal over off-diagonal energy of the effective
/// ear matrix of program pair `k` at listener `k`.
pub fn compute_xtc(atf: &AtfTensor, filters: &FilterBank, cfg: &MetricConfig) -> Result<[Vec<f64>; 2]> {
    let f = radiate(atf, filters)?;
    Ok([0, 1].map(|k| {
        (0..f.bins)
            .map(|n| {
                let (mut diag, mut off) = (0.0, 0.0);
                for m in 0..f.points {
                    for s in 0..2 {
                        for c in 0..2 {
                            let e = f.at(2 * k + s, m, 2 * k + c, n).norm_sqr();
                            if s == c {
                                diag += e;
                            } else {
                                off += e;
                            }
                        }
                    }
                }
                ratio_db(diag, off, cfg)
            })
            .collect()
    }))
}

/// Inner product of a per-bin dB curve with the grid's log-frequency weights.
pub fn log_weighted_mean(curve_db: &[f64], grid: &FrequencyGrid) -> Result<f64> {
    if curve_db.len() != grid.num_bins() {
        return Err(BsannError::Shape(format!(
            "curve has {} bins, grid has {}",
            curve_db.len(),
            grid.num_bins()
        )));
    }
    let w = log_frequency_weights_at(&grid.bin_freqs(), grid.band_lo_hz, grid.band_hi_hz)?;
    Ok(w.iter().zip(curve_db).filter(|(w, _)| **w > 0.0).map(|(w, v)| w * v).sum())
}

pub const CURVE_NAMES: [&str; 6] = ["izi1_db", "izi2_db", "ipi1_db", "ipi2_db", "xtc1_db", "xtc2_db"];

/// Per-bin metric curves in the order of [`CURVE_NAMES`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub freqs_hz: Vec<f64>,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub curves: [Vec<f64>; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub izi1_db: f64,
    pub izi2_db: f64,
    pub ipi1_db: f64,
    pub ipi2_db: f64,
    pub xtc1_db: f64,
    pub xtc2_db: f64,
}

impl MetricMeans {
    fn from_array(v: [f64; 6]) -> Self {
        Self {
            izi1_db: v[0],
            izi2_db: v[1],
            ipi1_db: v[2],
            ipi2_db: v[3],
            xtc1_db: v[4],
            xtc2_db: v[5],
        }
    }

    pub fn izi(&self) -> [f64; 2] {
        [self.izi1_db, self.izi2_db]
    }

    pub fn ipi(&self) -> [f64; 2] {
        [self.ipi1_db, self.ipi2_db]
    }

    pub fn xtc(&self) -> [f64; 2] {
        [self.xtc1_db, self.xtc2_db]
    }
}

impl MetricCurves {
    pub fn means(&self) -> Result<MetricMeans> {
        let w = log_frequency_weights_at(&self.freqs_hz, self.band_lo_hz, self.band_hi_hz)?;
        let mean = |c: &Vec<f64>| w.iter().zip(c).filter(|(w, _)| **w > 0.0).map(|(w, v)| w * v).sum::<f64>();
        Ok(MetricMeans::from_array([0, 1, 2, 3, 4, 5].map(|i| mean(&self.curves[i]))))
    }
}

/// All six curves on `atf` (normally built at the ear reference points).
pub fn evaluate(atf: &AtfTensor, filters: &FilterBank, cfg: &MetricConfig) -> Result<MetricCurves> {
    let [izi1, izi2] = compute_izi(atf, filters, cfg)?;
    let [ipi1, ipi2] = compute_ipi(atf, filters, cfg)?;
    let [xtc1, xtc2] = compute_xtc(atf, filters, cfg)?;
    Ok(MetricCurves {
        freqs_hz: atf.grid.bin_freqs(),
        band_lo_hz: atf.grid.band_lo_hz,
        band_hi_hz: atf.grid.band_hi_hz,
        curves: [izi1, izi2, ipi1, ipi2, xtc1, xtc2],
    })
}

/// Impulse response of one filter channel.
pub fn impulse_response(filters: &FilterBank, l: usize, p: usize) -> Vec<f64> {
    irfft(filters.channel(l, p), filters.grid.fft_size)
}

/// Renders a 4-channel program block through the bank: each loudspeaker gets
/// `Σ_p h_{l,p} * s_p`. Outputs carry the full linear convolution,
/// `len + fft_size - 1` samples.
pub fn render(filters: &FilterBank, program: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if program.len() != NUM_PROGRAMS {
        return Err(BsannError::Shape(format!("expected {NUM_PROGRAMS} program channels, got {}", program.len())));
    }
    let len = program[0].len();
    if program.iter().any(|c| c.len() != len) {
        return Err(BsannError::Shape("program channels differ in length".into()));
    }
    let taps = filters.grid.fft_size;
    let out_len = len + taps - 1;
    let size = out_len + out_len % 2;
    let inputs: Vec<_> = program.iter().map(|c| rfft(c, size)).collect();
    let mut out = Vec::with_capacity(filters.speakers);
    for l in 0..filters.speakers {
        let mut acc = vec![num_complex::Complex64::new(0.0, 0.0); size / 2 + 1];
        for (p, x) in inputs.iter().enumerate() {
            let h = rfft(&impulse_response(filters, l, p), size);
            for ((a, xv), hv) in acc.iter_mut().zip(x).zip(&h) {
                *a += xv * hv;
            }
        }
        let mut y = irfft(&acc, size);
        y.truncate(out_len);
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    band_lo_hz: f64,
    band_hi_hz: f64,
    rows: usize,
    means: Option<MetricMeans>,
    error: Option<String>,
}

/// Sidecar path for a CSV: the same name with a `.json` extension.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes in-band rows as CSV and the log-weighted means as a JSON sidecar.
pub fn export_curves(curves: &MetricCurves, path: &Path) -> Result<()> {
    let mut text = String::from("freq_hz");
    for name in CURVE_NAMES {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    let mut rows = 0;
    for (n, f) in curves.freqs_hz.iter().enumerate() {
        if *f < curves.band_lo_hz || *f > curves.band_hi_hz {
            continue;
        }
        rows += 1;
        text.push_str(&f.to_string());
        for c in &curves.curves {
            text.push(',');
            text.push_str(&c[n].to_string());
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    let (means, error) = match curves.means() {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let sidecar = Sidecar {
        band_lo_hz: curves.band_lo_hz,
        band_hi_hz: curves.band_hi_hz,
        rows,
        means,
        error,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Parses a CSV written by [`export_curves`] into `(freqs, curves)`.
pub fn read_curves_csv(path: &Path) -> Result<(Vec<f64>, [Vec<f64>; 6])> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| BsannError::Format("empty CSV".into()))?;
    let expected = std::iter::once("freq_hz").chain(CURVE_NAMES).collect::<Vec<_>>().join(",");
    if header != expected {
        return Err(BsannError::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut freqs = Vec::new();
    let mut curves: [Vec<f64>; 6] = Default::default();
    for line in lines {
        let fields: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| BsannError::Format(format!("bad CSV value {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        if fields.len() != 7 {
            return Err(BsannError::Format(format!("CSV row has {} fields", fields.len())));
        }
        freqs.push(fields[0]);
        for i in 0..6 {
            curves[i].push(fields[i + 1]);
        }
    }
    Ok((freqs, curves))
}
