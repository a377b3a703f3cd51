//! Shoebox image-source room simulation and direct/reflected splitting.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{BsannError, Result};
use crate::geom::{distance, Vec3};
use crate::spectral::FrequencyGrid;

/// Half-width of the fractional-delay kernel in samples (16 taps total).
const KERNEL_HALF: f64 = 8.5;
const KERNEL_TAPS: i64 = 16;

/// Default gate half-width around the line-of-sight arrival.
pub const DEFAULT_GUARD_MS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub dims_m: Vec3,
    /// Zero means anechoic: only the line-of-sight path is rendered.
    pub rt60_s: f64,
    pub max_image_order: usize,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound_mps: f64,
}

pub fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims_m.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(BsannError::Geometry(format!("room dimensions must be positive: {:?}", self.dims_m)));
        }
        if !(self.rt60_s.is_finite() && self.rt60_s >= 0.0) {
            return Err(BsannError::Config(format!("rt60 must be nonnegative, got {}", self.rt60_s)));
        }
        if !(self.speed_of_sound_mps > 0.0) {
            return Err(BsannError::Config("speed of sound must be positive".into()));
        }
        Ok(())
    }

    pub fn is_anechoic(&self) -> bool {
        self.rt60_s == 0.0 || self.max_image_order == 0
    }

    /// Uniform pressure reflection coefficient from Sabine's formula.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.rt60_s == 0.0 {
            return 0.0;
        }
        let [lx, ly, lz] = self.dims_m;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        let sabine = 24.0 * std::f64::consts::LN_10 / self.speed_of_sound_mps;
        let alpha = (sabine * volume / (surface * self.rt60_s)).min(1.0);
        (1.0 - alpha).sqrt()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.iter().zip(&self.dims_m).all(|(x, d)| *x > 0.0 && *x < *d)
    }
}

/// A mirror image of the source with the number of wall bounces behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub reflections: usize,
}

/// Enumerates image sources up to the room's maximum order.
pub fn image_sources(room: &RoomSpec, src: &Vec3) -> Vec<ImageSource> {
    let order = if room.rt60_s == 0.0 { 0 } else { room.max_image_order } as i64;
    let mut out = Vec::new();
    for nx in -order..=order {
        for ny in -order..=order {
            for nz in -order..=order {
                for q in 0..8u8 {
                    let cell = [nx, ny, nz];
                    let mut position = [0.0; 3];
                    let mut reflections = 0i64;
                    for axis in 0..3 {
                        let qa = ((q >> axis) & 1) as i64;
                        let n = cell[axis];
                        position[axis] = (1 - 2 * qa) as f64 * src[axis] + 2.0 * n as f64 * room.dims_m[axis];
                        reflections += (n - qa).abs() + n.abs();
                    }
                    if reflections <= order {
                        out.push(ImageSource {
                            position,
                            reflections: reflections as usize,
                        });
                    }
                }
            }
        }
    }
    out
}

/// A simulated impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    /// Set when energy expected from the decay (or an image arrival) falls
    /// beyond `fft_size` and was cut off.
    pub truncated: bool,
}

fn check_positions(room: &RoomSpec, src: &Vec3, mic: &Vec3) -> Result<()> {
    room.validate()?;
    if !room.contains(src) {
        return Err(BsannError::Geometry(format!("source {src:?} outside room {:?}", room.dims_m)));
    }
    if !room.contains(mic) {
        return Err(BsannError::Geometry(format!("receiver {mic:?} outside room {:?}", room.dims_m)));
    }
    if distance(src, mic) == 0.0 {
        return Err(BsannError::Geometry("source and receiver coincide".into()));
    }
    Ok(())
}

/// Adds a Hann-windowed sinc centred at fractional sample `delay`.
/// Returns false when part of the kernel fell outside the buffer.
fn add_fractional_impulse(buf: &mut [f64], delay: f64, amplitude: f64) -> bool {
    let start = delay.floor() as i64 - (KERNEL_TAPS / 2 - 1);
    let mut complete = true;
    for n in start..start + KERNEL_TAPS {
        let u = n as f64 - delay;
        if u.abs() >= KERNEL_HALF {
            continue;
        }
        if n < 0 || n as usize >= buf.len() {
            complete = false;
            continue;
        }
        let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
        let window = 0.5 * (1.0 + (PI * u / KERNEL_HALF).cos());
        buf[n as usize] += amplitude * sinc * window;
    }
    complete
}

/// Image-source impulse response of length `grid.fft_size` from `src` to `mic`.
///
/// Each image contributes `beta^reflections / (4π d)` at delay `d / c`.
pub fn simulate_rir(room: &RoomSpec, src: &Vec3, mic: &Vec3, grid: &FrequencyGrid) -> Result<Rir> {
    check_positions(room, src, mic)?;
    let fs = grid.sample_rate_hz;
    let c = room.speed_of_sound_mps;
    let beta = room.reflection_coefficient();
    let mut samples = vec![0.0; grid.fft_size];
    let mut truncated = room.rt60_s > 0.0 && room.rt60_s * fs > grid.fft_size as f64;
    for image in image_sources(room, src) {
        let d = distance(&image.position, mic);
        let amplitude = beta.powi(image.reflections as i32) / (4.0 * PI * d);
        if amplitude == 0.0 {
            continue;
        }
        let delay = d / c * fs;
        if delay - KERNEL_HALF >= grid.fft_size as f64 {
            truncated = true;
            continue;
        }
        if !add_fractional_impulse(&mut samples, delay, amplitude) {
            truncated = true;
        }
    }
    if truncated {
        log::debug!("RIR truncated at {} samples (rt60 {} s)", grid.fft_size, room.rt60_s);
    }
    Ok(Rir { samples, truncated })
}

/// Direct and reflected parts of an impulse response; they sum to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct RirPair {
    pub h_dir: Vec<f64>,
    pub h_refl: Vec<f64>,
    /// The gate reaches into the earliest reflection's kernel.
    pub overlap: bool,
}

/// Splits `rir` with a rectangular gate of `guard_ms` around the line-of-sight delay.
pub fn split_direct_reflected(
    rir: &[f64],
    src: &Vec3,
    mic: &Vec3,
    room: &RoomSpec,
    grid: &FrequencyGrid,
    guard_ms: f64,
) -> Result<RirPair> {
    check_positions(room, src, mic)?;
    if !(guard_ms >= 0.0) {
        return Err(BsannError::Config(format!("guard must be nonnegative, got {guard_ms}")));
    }
    let fs = grid.sample_rate_hz;
    let c = room.speed_of_sound_mps;
    let t_los = distance(src, mic) / c * fs;
    let guard = guard_ms * 1e-3 * fs;

    let mut h_dir = vec![0.0; rir.len()];
    let mut h_refl = rir.to_vec();
    for (n, v) in rir.iter().enumerate() {
        if (n as f64 - t_los).abs() <= guard {
            h_dir[n] = *v;
            h_refl[n] = 0.0;
        }
    }

    let earliest_reflection = image_sources(room, src)
        .iter()
        .filter(|im| im.reflections > 0)
        .map(|im| distance(&im.position, mic) / c * fs)
        .fold(f64::INFINITY, f64::min);
    let overlap = earliest_reflection - KERNEL_HALF <= t_los + guard;
    if overlap {
        log::debug!(
            "direct gate [{:.1}, {:.1}] overlaps reflection at {:.1} samples",
            t_los - guard,
            t_los + guard,
            earliest_reflection
        );
    }
    Ok(RirPair { h_dir, h_refl, overlap })
}
