//! Physically informed acoustic transfer functions: loudspeaker responses,
//! piston directivity and rigid-sphere scattering, combined with the direct
//! and reflected room responses.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{BsannError, Result};
use crate::geom::{self, Vec3};
use crate::par;
use crate::room::RirPair;
use crate::specfun;
use crate::spectral::{forward_real_fft, rfft, ComplexSpectrum, FrequencyGrid};

/// Number of ears in the two-listener scene, ordered `(L1, R1, L2, R2)`.
pub const NUM_EARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverBand {
    Woofer,
    Tweeter,
}

/// Where a driver's anechoic response comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DriverResponse {
    /// Minimum-phase band model from [`synth_driver_response`].
    Synthetic,
    Measured { spectrum: ComplexSpectrum },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub position_m: Vec3,
    pub facing_unit: Vec3,
    pub piston_radius_m: f64,
    pub band: DriverBand,
    pub response: DriverResponse,
}

impl DriverSpec {
    pub fn validate(&self) -> Result<()> {
        if (geom::norm(&self.facing_unit) - 1.0).abs() > 1e-9 {
            return Err(BsannError::Geometry(format!("driver facing {:?} is not a unit vector", self.facing_unit)));
        }
        if !(self.piston_radius_m > 0.0 && self.piston_radius_m < 0.5) {
            return Err(BsannError::Geometry(format!(
                "piston radius {} outside (0, 0.5) m",
                self.piston_radius_m
            )));
        }
        Ok(())
    }

    /// The anechoic response `A(ω)` on `grid`.
    pub fn response_spectrum(&self, grid: &FrequencyGrid) -> Result<ComplexSpectrum> {
        match &self.response {
            DriverResponse::Synthetic => Ok(synth_driver_response(self.band, grid)),
            DriverResponse::Measured { spectrum } => {
                if spectrum.len() != grid.num_bins() {
                    return Err(BsannError::Shape(format!(
                        "measured response has {} bins, grid has {}",
                        spectrum.len(),
                        grid.num_bins()
                    )));
                }
                Ok(spectrum.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One listener's head and the control points around both ears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListenerGeometry {
    pub head_center_m: Vec3,
    pub head_radius_m: f64,
    pub ear_offset_m: f64,
    pub facing_unit: Vec3,
    /// `[left, right]`, `M` points each.
    pub control_points: [Vec<Vec3>; 2],
}

impl ListenerGeometry {
    /// Unit vector from the head centre toward the left ear (z is up).
    pub fn left_unit(&self) -> Vec3 {
        geom::normalize(&geom::cross(&[0.0, 0.0, 1.0], &self.facing_unit))
    }

    pub fn ear_reference(&self, side: Side) -> Vec3 {
        let sign = match side {
            Side::Left => 1.0,
            Side::Right => -1.0,
        };
        let reach = self.head_radius_m + self.ear_offset_m;
        geom::add(&self.head_center_m, &geom::scale(&self.left_unit(), sign * reach))
    }

    pub fn points_per_ear(&self) -> usize {
        self.control_points[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.head_radius_m > 0.0) || self.ear_offset_m < 0.0 {
            return Err(BsannError::Geometry("head radius must be positive and ear offset nonnegative".into()));
        }
        if (geom::norm(&self.facing_unit) - 1.0).abs() > 1e-9 || self.facing_unit[2].abs() > 1e-9 {
            return Err(BsannError::Geometry(format!(
                "listener facing {:?} must be a horizontal unit vector",
                self.facing_unit
            )));
        }
        if self.control_points[0].len() != self.control_points[1].len() || self.control_points[0].is_empty() {
            return Err(BsannError::Shape("both ears need the same nonzero number of control points".into()));
        }
        for p in self.control_points.iter().flatten() {
            if geom::distance(p, &self.head_center_m) < self.head_radius_m {
                return Err(BsannError::Geometry(format!("control point {p:?} lies inside the rigid sphere")));
            }
        }
        Ok(())
    }

    /// Copy with a single control point per ear, at the ear reference points.
    pub fn at_ear_references(&self) -> Self {
        Self {
            control_points: [vec![self.ear_reference(Side::Left)], vec![self.ear_reference(Side::Right)]],
            ..self.clone()
        }
    }
}

/// Listener index and side of ear `e` in `(L1, R1, L2, R2)` order.
pub fn ear_owner(e: usize) -> (usize, Side) {
    (e / 2, if e % 2 == 0 { Side::Left } else { Side::Right })
}

pub fn control_point(listeners: &[ListenerGeometry; 2], e: usize, m: usize) -> Vec3 {
    let (l, side) = ear_owner(e);
    listeners[l].control_points[side as usize][m]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtfDims {
    pub ears: usize,
    pub points: usize,
    pub speakers: usize,
    pub bins: usize,
}

impl AtfDims {
    pub fn len(&self) -> usize {
        self.ears * self.points * self.speakers * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Complex transfer functions `H[ear, point, speaker, bin]`, bin fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct AtfTensor {
    pub dims: AtfDims,
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
}

impl AtfTensor {
    pub fn zeros(dims: AtfDims, grid: FrequencyGrid) -> Self {
        Self {
            dims,
            grid,
            values: vec![Complex64::new(0.0, 0.0); dims.len()],
        }
    }

    pub fn from_values(dims: AtfDims, grid: FrequencyGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != dims.len() || dims.bins != grid.num_bins() {
            return Err(BsannError::Shape(format!(
                "ATF of dims {dims:?} needs {} values on a {}-bin grid, got {}",
                dims.len(),
                grid.num_bins(),
                values.len()
            )));
        }
        Ok(Self { dims, grid, values })
    }

    #[inline]
    pub fn index(&self, e: usize, m: usize, l: usize, n: usize) -> usize {
        ((e * self.dims.points + m) * self.dims.speakers + l) * self.dims.bins + n
    }

    #[inline]
    pub fn at(&self, e: usize, m: usize, l: usize, n: usize) -> Complex64 {
        self.values[self.index(e, m, l, n)]
    }

    /// The response of one (ear, point, speaker) path across all bins.
    pub fn path(&self, e: usize, m: usize, l: usize) -> &[Complex64] {
        let start = self.index(e, m, l, 0);
        &self.values[start..start + self.dims.bins]
    }

    pub fn path_mut(&mut self, e: usize, m: usize, l: usize) -> &mut [Complex64] {
        let start = self.index(e, m, l, 0);
        let bins = self.dims.bins;
        &mut self.values[start..start + bins]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Series truncation settings for the rigid-sphere model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrtfConfig {
    /// Minimum number of terms; more are added when `k r` calls for them.
    pub series_order: usize,
    /// Hard ceiling on the number of terms.
    #[serde(default = "default_max_order")]
    pub max_series_order: usize,
    pub convergence_tol: f64,
}

fn default_max_order() -> usize {
    200
}

impl Default for HrtfConfig {
    fn default() -> Self {
        Self {
            series_order: 60,
            max_series_order: default_max_order(),
            convergence_tol: 1e-10,
        }
    }
}

impl HrtfConfig {
    /// Checks `series_order >= ceil(k_max a) + 20` at the top of the band.
    pub fn validate_for(&self, grid: &FrequencyGrid, head_radius: f64, speed_of_sound: f64) -> Result<()> {
        let k_max = 2.0 * PI * grid.band_hi_hz / speed_of_sound;
        let needed = (k_max * head_radius).ceil() as usize + 20;
        if self.series_order < needed || self.max_series_order < self.series_order {
            return Err(BsannError::Config(format!(
                "series order {} below {needed} required for ka = {:.1}",
                self.series_order,
                k_max * head_radius
            )));
        }
        Ok(())
    }
}

/// Circular-piston directivity `2 J1(x) / x`, `x = k a sin θ`.
pub fn piston_directivity(k: f64, a: f64, theta: f64) -> f64 {
    let x = (k * a * theta.sin()).abs();
    if x < 1e-8 {
        return 1.0 - x * x / 8.0;
    }
    2.0 * specfun::bessel_j1(x) / x
}

/// Rigid-sphere pressure at `ctrl` for a point source at `src`, normalised by
/// the free-field Green's function between the two points.
///
/// The returned value uses the same `e^{-jωt}` phase convention as the FFT of
/// a causal impulse response, so a pure delay appears as `e^{-jωτ}`.
pub fn rigid_sphere_hrtf(
    src: &Vec3,
    ctrl: &Vec3,
    head_center: &Vec3,
    head_radius: f64,
    k: f64,
    cfg: &HrtfConfig,
) -> Result<Complex64> {
    let rs_vec = geom::sub(src, head_center);
    let re_vec = geom::sub(ctrl, head_center);
    let r_src = geom::norm(&rs_vec);
    let r_ctrl = geom::norm(&re_vec);
    if r_src < head_radius || r_ctrl < head_radius {
        return Err(BsannError::Geometry(format!(
            "source radius {r_src:.4} m or control radius {r_ctrl:.4} m inside sphere of radius {head_radius} m"
        )));
    }
    if !(k >= 0.0) {
        return Err(BsannError::Config(format!("wavenumber must be nonnegative, got {k}")));
    }
    if k == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let cos_gamma = (geom::dot(&rs_vec, &re_vec) / (r_src * r_ctrl)).clamp(-1.0, 1.0);
    let kr = k * r_src.min(r_ctrl);
    let wanted = cfg.series_order.max((kr + 10.0 * kr.cbrt()).ceil() as usize + 30);
    let order = wanted.min(cfg.max_series_order);

    let h_src = specfun::spherical_hn(order, k * r_src);
    let h_ctrl = specfun::spherical_hn(order, k * r_ctrl);
    let (h_lo, h_hi) = if r_src < r_ctrl { (&h_src, &h_ctrl) } else { (&h_ctrl, &h_src) };
    // One extra order for the derivative recurrences.
    let ka = k * head_radius;
    let j_a = specfun::spherical_jn(order + 1, ka);
    let y_a = specfun::spherical_yn(order + 1, ka);
    let dj_a = specfun::spherical_derivatives(&j_a, ka, order);
    let dy_a = specfun::spherical_derivatives(&y_a, ka, order);
    let p = specfun::legendre(order, cos_gamma);

    let mut sum = Complex64::new(0.0, 0.0);
    let mut recent = [0.0f64; 3];
    for n in 0..=order {
        let mut s = h_lo[n].re * h_hi[n];
        if dy_a[n].is_finite() {
            let alpha = Complex64::new(dj_a[n], 0.0) / Complex64::new(dj_a[n], dy_a[n]);
            if alpha.norm() > 0.0 {
                s -= alpha * h_src[n] * h_ctrl[n];
            }
        }
        let term = s * ((2 * n + 1) as f64 * p[n]);
        if term.re.is_finite() && term.im.is_finite() {
            sum += term;
        }
        recent[n % 3] = if term.re.is_finite() && term.im.is_finite() { term.norm() } else { f64::INFINITY };
    }
    let tail = recent.iter().cloned().fold(0.0, f64::max) / sum.norm().max(f64::MIN_POSITIVE);
    if !(tail <= cfg.convergence_tol) {
        return Err(BsannError::Convergence { order, tail });
    }

    let total = Complex64::new(0.0, k) * sum;
    let dist = geom::distance(src, ctrl);
    let green = Complex64::from_polar(1.0 / dist, k * dist);
    Ok((total / green).conj())
}

/// Second-order Butterworth band models with unit passband gain, evaluated
/// from the analog prototypes (minimum phase).
pub fn synth_driver_response(band: DriverBand, grid: &FrequencyGrid) -> ComplexSpectrum {
    let high_pass = |s: Complex64, fc: f64| {
        let w = 2.0 * PI * fc;
        s * s / (s * s + s * (std::f64::consts::SQRT_2 * w) + w * w)
    };
    let low_pass = |s: Complex64, fc: f64| {
        let w = 2.0 * PI * fc;
        Complex64::new(w * w, 0.0) / (s * s + s * (std::f64::consts::SQRT_2 * w) + w * w)
    };
    ComplexSpectrum(
        grid.bin_freqs()
            .into_iter()
            .map(|f| {
                let s = Complex64::new(0.0, 2.0 * PI * f);
                match band {
                    DriverBand::Woofer => high_pass(s, 100.0) * low_pass(s, 2000.0),
                    DriverBand::Tweeter => high_pass(s, 2000.0),
                }
            })
            .collect(),
    )
}

/// Reads a mono 32-bit float WAV impulse response and transforms it.
pub fn load_driver_response_wav(path: impl AsRef<Path>, grid: &FrequencyGrid) -> Result<ComplexSpectrum> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(BsannError::Format(format!(
            "expected mono 32-bit float WAV, got {} channel(s), {:?} {}-bit",
            spec.channels, spec.sample_format, spec.bits_per_sample
        )));
    }
    if (spec.sample_rate as f64 - grid.sample_rate_hz).abs() > 0.5 {
        return Err(BsannError::Config(format!(
            "WAV sample rate {} does not match grid {}",
            spec.sample_rate, grid.sample_rate_hz
        )));
    }
    let samples: Vec<f64> = reader
        .samples::<f32>()
        .map(|s| s.map(f64::from))
        .collect::<std::result::Result<_, _>>()?;
    forward_real_fft(&samples, grid.fft_size)
}

/// Angle between a driver's axis and the direction to `target`.
pub fn off_axis_angle(driver: &DriverSpec, target: &Vec3) -> f64 {
    geom::angle_between(&driver.facing_unit, &geom::sub(target, &driver.position_m))
}

/// Direct-path multiplier `A D H_hrtf` for one path on all bins.
pub fn direct_path_factor(
    driver: &DriverSpec,
    response: &ComplexSpectrum,
    listener: &ListenerGeometry,
    ctrl: &Vec3,
    grid: &FrequencyGrid,
    cfg: &HrtfConfig,
    speed_of_sound: f64,
) -> Result<Vec<Complex64>> {
    let theta = off_axis_angle(driver, ctrl);
    (0..grid.num_bins())
        .map(|n| {
            let k = grid.wavenumber(n, speed_of_sound);
            let d = piston_directivity(k, driver.piston_radius_m, theta);
            let h = rigid_sphere_hrtf(
                &driver.position_m,
                ctrl,
                &listener.head_center_m,
                listener.head_radius_m,
                k,
                cfg,
            )?;
            Ok(response.0[n] * d * h)
        })
        .collect()
}

/// Physically informed ATF: `FFT(h_dir) A D H_hrtf + FFT(h_refl) A`.
///
/// `rirs` is indexed `[(e * M + m) * L + l]`.
pub fn assemble_atf(
    rirs: &[RirPair],
    drivers: &[DriverSpec],
    listeners: &[ListenerGeometry; 2],
    grid: &FrequencyGrid,
    cfg: &HrtfConfig,
    speed_of_sound: f64,
) -> Result<AtfTensor> {
    let points = listeners[0].points_per_ear();
    if listeners[1].points_per_ear() != points {
        return Err(BsannError::Shape("listeners have different control-point counts".into()));
    }
    let dims = AtfDims {
        ears: NUM_EARS,
        points,
        speakers: drivers.len(),
        bins: grid.num_bins(),
    };
    let paths = NUM_EARS * points * drivers.len();
    if rirs.len() != paths {
        return Err(BsannError::Shape(format!("expected {paths} RIR pairs, got {}", rirs.len())));
    }
    let responses: Vec<ComplexSpectrum> = drivers.iter().map(|d| d.response_spectrum(grid)).collect::<Result<_>>()?;

    let columns = par::try_map_indexed(paths, |idx| {
        let l = idx % drivers.len();
        let m = (idx / drivers.len()) % points;
        let e = idx / (drivers.len() * points);
        let nan = |context| BsannError::NonFinite {
            context,
            ear: e,
            point: m,
            speaker: l,
        };
        let pair = &rirs[idx];
        if pair.h_dir.iter().chain(&pair.h_refl).any(|v| !v.is_finite()) {
            return Err(nan("room impulse response"));
        }
        let (owner, _) = ear_owner(e);
        let ctrl = control_point(listeners, e, m);
        let h_dir = rfft(&pair.h_dir, grid.fft_size);
        let h_refl = rfft(&pair.h_refl, grid.fft_size);
        let factor = direct_path_factor(&drivers[l], &responses[l], &listeners[owner], &ctrl, grid, cfg, speed_of_sound)?;
        let column: Vec<Complex64> = (0..grid.num_bins())
            .map(|n| h_dir[n] * factor[n] + h_refl[n] * responses[l].0[n])
            .collect();
        if column.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(nan("assembled transfer function"));
        }
        Ok(column)
    })?;

    let mut values = Vec::with_capacity(dims.len());
    for column in columns {
        values.extend(column);
    }
    AtfTensor::from_values(dims, *grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn piston_on_axis_is_unity() {
        for k in [0.0, 1.0, 100.0, 400.0] {
            assert_eq!(piston_directivity(k, 0.03, 0.0), 1.0);
        }
    }

    #[test]
    fn piston_first_null() {
        let x = 3.8317059702;
        // k a sin θ = x with a = 0.05, θ = π/2
        let v = piston_directivity(x / 0.05, 0.05, PI / 2.0);
        assert!(v.abs() < 1e-8, "{v}");
    }

    #[test]
    fn piston_at_two() {
        let v = piston_directivity(2.0 / 0.04, 0.04, PI / 2.0);
        assert_relative_eq!(v, 0.5767248078, epsilon = 1e-9);
    }

    #[test]
    fn piston_even_and_monotone_before_null() {
        let (k, a) = (200.0, 0.03);
        assert_eq!(piston_directivity(k, a, 0.4), piston_directivity(k, a, -0.4));
        let mut last = 1.0;
        for i in 1..=100 {
            let x = 3.8317 * i as f64 / 100.0;
            let v = piston_directivity(x / a, a, PI / 2.0);
            assert!(v <= last + 1e-15 && v.abs() <= 1.0);
            last = v;
        }
    }

    #[test]
    fn vanishing_sphere_is_transparent() {
        let cfg = HrtfConfig::default();
        let src = [1.0, 0.3, 0.1];
        let ctrl = [0.02, 0.09, -0.01];
        for k in [1.7, 20.0, 150.0, 366.0] {
            let h = rigid_sphere_hrtf(&src, &ctrl, &[0.0; 3], 1e-6, k, &cfg).unwrap();
            assert!((h - Complex64::new(1.0, 0.0)).norm() < 1e-6, "k={k}: {h}");
        }
    }

    #[test]
    fn mirror_control_points_agree() {
        let cfg = HrtfConfig::default();
        let src = [1.0, 0.0, 0.0];
        let a = rigid_sphere_hrtf(&src, &[0.05, 0.09, 0.0], &[0.0; 3], 0.0875, 120.0, &cfg).unwrap();
        let b = rigid_sphere_hrtf(&src, &[0.05, -0.09, 0.0], &[0.0; 3], 0.0875, 120.0, &cfg).unwrap();
        assert!((a - b).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn ipsilateral_louder_than_contralateral() {
        // Source on +x at 1 m, ears on the surface at ±x, ka = 5.
        let cfg = HrtfConfig::default();
        let radius = 0.0875;
        let k = 5.0 / radius;
        let src = [1.0, 0.0, 0.0];
        let surface = radius * (1.0 + 1e-9);
        let ipsi = rigid_sphere_hrtf(&src, &[surface, 0.0, 0.0], &[0.0; 3], radius, k, &cfg).unwrap();
        let contra = rigid_sphere_hrtf(&src, &[-surface, 0.0, 0.0], &[0.0; 3], radius, k, &cfg).unwrap();
        assert!(ipsi.norm() > contra.norm(), "{} vs {}", ipsi.norm(), contra.norm());
    }

    #[test]
    fn points_inside_sphere_are_rejected() {
        let r = rigid_sphere_hrtf(&[1.0, 0.0, 0.0], &[0.05, 0.0, 0.0], &[0.0; 3], 0.0875, 10.0, &HrtfConfig::default());
        assert!(matches!(r, Err(BsannError::Geometry(_))));
    }

    #[test]
    fn capped_series_reports_convergence_failure() {
        let cfg = HrtfConfig {
            series_order: 5,
            max_series_order: 5,
            convergence_tol: 1e-10,
        };
        let r = rigid_sphere_hrtf(&[1.0, 0.0, 0.0], &[0.0, 0.1, 0.0], &[0.0; 3], 0.0875, 300.0, &cfg);
        assert!(matches!(r, Err(BsannError::Convergence { order: 5, .. })));
    }

    #[test]
    fn driver_band_models() {
        let grid = FrequencyGrid::default();
        let w = synth_driver_response(DriverBand::Woofer, &grid);
        let t = synth_driver_response(DriverBand::Tweeter, &grid);
        assert_eq!(w.0[0].norm(), 0.0);
        assert_eq!(t.0[0].norm(), 0.0);
        // Evaluate directly at 500 Hz and 100 Hz.
        let g = FrequencyGrid::new(48_000.0, 480, 100.0, 20_000.0).unwrap();
        let w = synth_driver_response(DriverBand::Woofer, &g);
        let t = synth_driver_response(DriverBand::Tweeter, &g);
        let at = |hz: f64| (hz / g.bin_freq(1)).round() as usize;
        assert!((0.7..=1.0).contains(&w.0[at(500.0)].norm()));
        assert!(t.0[at(100.0)].norm() < 0.01);
        assert_relative_eq!(t.0[at(100.0)].norm(), 1.0 / (1.0f64 + 20.0f64.powi(4)).sqrt(), epsilon = 1e-12);
    }
}
