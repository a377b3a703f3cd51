//! Frequency grids, one-sided spectra and log-frequency weighting.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{BsannError, Result};

/// Discrete one-sided frequency grid of a real FFT of length `fft_size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyGrid {
    pub sample_rate_hz: f64,
    pub fft_size: usize,
    #[serde(default = "default_band_lo")]
    pub band_lo_hz: f64,
    #[serde(default = "default_band_hi")]
    pub band_hi_hz: f64,
}

fn default_band_lo() -> f64 {
    100.0
}

fn default_band_hi() -> f64 {
    20_000.0
}

impl Default for FrequencyGrid {
    /// 48 kHz, 512-point FFT (257 bins), 100 Hz to 20 kHz evaluation band.
    fn default() -> Self {
        Self {
            sample_rate_hz: 48_000.0,
            fft_size: 512,
            band_lo_hz: default_band_lo(),
            band_hi_hz: default_band_hi(),
        }
    }
}

impl FrequencyGrid {
    pub fn new(sample_rate_hz: f64, fft_size: usize, band_lo_hz: f64, band_hi_hz: f64) -> Result<Self> {
        let grid = Self {
            sample_rate_hz,
            fft_size,
            band_lo_hz,
            band_hi_hz,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(BsannError::Config(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        check_fft_size(self.fft_size)?;
        if !(self.band_lo_hz.is_finite() && self.band_lo_hz > 0.0) {
            return Err(BsannError::Config("band_lo_hz must be positive".into()));
        }
        if !(self.band_lo_hz < self.band_hi_hz && self.band_hi_hz <= self.sample_rate_hz / 2.0) {
            return Err(BsannError::Config(format!(
                "band must satisfy 0 < lo < hi <= fs/2, got [{}, {}] at fs={}",
                self.band_lo_hz, self.band_hi_hz, self.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Number of one-sided bins, `fft_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn bin_freq(&self, n: usize) -> f64 {
        n as f64 * self.sample_rate_hz / self.fft_size as f64
    }

    pub fn bin_freqs(&self) -> Vec<f64> {
        (0..self.num_bins()).map(|n| self.bin_freq(n)).collect()
    }

    /// Acoustic wavenumber `2πf/c` of bin `n`.
    pub fn wavenumber(&self, n: usize, speed_of_sound: f64) -> f64 {
        2.0 * PI * self.bin_freq(n) / speed_of_sound
    }

    pub fn in_band(&self, n: usize) -> bool {
        let f = self.bin_freq(n);
        f >= self.band_lo_hz && f <= self.band_hi_hz
    }
}

fn check_fft_size(fft_size: usize) -> Result<()> {
    if fft_size < 2 || fft_size % 2 != 0 {
        return Err(BsannError::Config(format!(
            "fft_size must be a positive even integer, got {fft_size}"
        )));
    }
    Ok(())
}

/// One-sided complex spectrum of a real signal (`fft_size / 2 + 1` bins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComplexSpectrum(pub Vec<Complex64>);

impl ComplexSpectrum {
    pub fn zeros(bins: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); bins])
    }

    pub fn ones(bins: usize) -> Self {
        Self(vec![Complex64::new(1.0, 0.0); bins])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.0
    }
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((n, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// Forward real FFT of `signal` zero-padded to `fft_size`, no size checks.
pub(crate) fn rfft(signal: &[f64], fft_size: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = (0..fft_size)
        .map(|i| Complex64::new(signal.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    plan(fft_size, false).process(&mut buf);
    buf.truncate(fft_size / 2 + 1);
    buf
}

/// Hermitian extension plus inverse FFT. Imaginary parts at DC and Nyquist
/// are ignored, which is the projection onto real signals.
pub(crate) fn irfft(spectrum: &[Complex64], fft_size: usize) -> Vec<f64> {
    let half = fft_size / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    buf[0] = Complex64::new(spectrum[0].re, 0.0);
    buf[half] = Complex64::new(spectrum[half].re, 0.0);
    for k in 1..half {
        buf[k] = spectrum[k];
        buf[fft_size - k] = spectrum[k].conj();
    }
    plan(fft_size, true).process(&mut buf);
    let scale = 1.0 / fft_size as f64;
    buf.into_iter().map(|z| z.re * scale).collect()
}

/// Real-to-complex FFT, zero-padding `signal` to `fft_size`.
pub fn forward_real_fft(signal: &[f64], fft_size: usize) -> Result<ComplexSpectrum> {
    check_fft_size(fft_size)?;
    if signal.len() > fft_size {
        return Err(BsannError::Config(format!(
            "signal of length {} exceeds fft_size {fft_size}",
            signal.len()
        )));
    }
    Ok(ComplexSpectrum(rfft(signal, fft_size)))
}

/// Inverse of [`forward_real_fft`]. Rejects spectra whose DC or Nyquist bins
/// carry an imaginary part, since no real signal produces one.
pub fn inverse_real_fft(spectrum: &ComplexSpectrum, fft_size: usize) -> Result<Vec<f64>> {
    check_fft_size(fft_size)?;
    let half = fft_size / 2;
    if spectrum.len() != half + 1 {
        return Err(BsannError::InvalidSpectrum(format!(
            "expected {} bins for fft_size {fft_size}, got {}",
            half + 1,
            spectrum.len()
        )));
    }
    let scale = spectrum.0.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    for (name, idx) in [("DC", 0), ("Nyquist", half)] {
        let im = spectrum.0[idx].im;
        if !im.is_finite() || im.abs() > tol {
            return Err(BsannError::InvalidSpectrum(format!(
                "{name} bin has imaginary part {im:e}"
            )));
        }
    }
    Ok(irfft(&spectrum.0, fft_size))
}

/// Time-domain energy of the real signal whose one-sided spectrum is given.
pub fn one_sided_energy(spectrum: &[Complex64], fft_size: usize) -> f64 {
    let half = fft_size / 2;
    let inner: f64 = spectrum[1..half].iter().map(|z| z.norm_sqr()).sum();
    (spectrum[0].norm_sqr() + spectrum[half].norm_sqr() + 2.0 * inner) / fft_size as f64
}

/// Log-frequency quadrature weights of the grid's bins over its band.
///
/// Each in-band bin owns the stretch of `ln f` between the log-midpoints to its
/// in-band neighbours; the lowest and highest cells extend to the band edges.
/// Weights are the cell widths divided by `ln(hi/lo)`, so they sum to one.
pub fn log_frequency_weights(grid: &FrequencyGrid) -> Result<Vec<f64>> {
    log_frequency_weights_at(&grid.bin_freqs(), grid.band_lo_hz, grid.band_hi_hz)
}

/// [`log_frequency_weights`] for an arbitrary increasing frequency list.
pub fn log_frequency_weights_at(freqs_hz: &[f64], band_lo_hz: f64, band_hi_hz: f64) -> Result<Vec<f64>> {
    let empty = || BsannError::EmptyBand {
        lo_hz: band_lo_hz,
        hi_hz: band_hi_hz,
    };
    if !(band_lo_hz > 0.0 && band_lo_hz < band_hi_hz) {
        return Err(empty());
    }
    let in_band: Vec<usize> = freqs_hz
        .iter()
        .enumerate()
        .filter(|(_, &f)| f >= band_lo_hz && f <= band_hi_hz)
        .map(|(i, _)| i)
        .collect();
    if in_band.is_empty() {
        return Err(empty());
    }
    let total = (band_hi_hz / band_lo_hz).ln();
    let mut weights = vec![0.0; freqs_hz.len()];
    for (j, &i) in in_band.iter().enumerate() {
        let lower = if j == 0 {
            band_lo_hz.ln()
        } else {
            0.5 * (freqs_hz[in_band[j - 1]].ln() + freqs_hz[i].ln())
        };
        let upper = if j + 1 == in_band.len() {
            band_hi_hz.ln()
        } else {
            0.5 * (freqs_hz[i].ln() + freqs_hz[in_band[j + 1]].ln())
        };
        weights[i] = (upper - lower) / total;
    }
    Ok(weights)
}
