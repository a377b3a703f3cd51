//! Randomised two-listener scenes, their transfer-function tensors, and the
//! binary dataset format.
//!
//! Coordinates are room coordinates (metres, z up). The array sits near the
//! `y = 0` wall and faces `+y`; listeners face the array. Poses are listener
//! head centres relative to the array centre.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acoustic::{
    assemble_atf, control_point, direct_path_factor, ear_owner, AtfDims, AtfTensor, DriverBand, DriverResponse,
    DriverSpec, HrtfConfig, ListenerGeometry, Side, NUM_EARS,
};
use crate::error::{BsannError, Result};
use crate::geom::{self, Vec3};
use crate::losses::TargetSpec;
use crate::nn::PoseInput;
use crate::par;
use crate::room::{simulate_rir, split_direct_reflected, RirPair, RoomSpec, DEFAULT_GUARD_MS};
use crate::spectral::{rfft, FrequencyGrid};

/// Seed of [`default_scene`].
pub const DEFAULT_SEED: u64 = 0x5EED;

/// Inclusive `[lo, hi]` range sampled uniformly; `lo == hi` pins the value.
pub type Range = [f64; 2];

/// Driver layout on a horizontal arc facing the listening area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayLayout {
    pub woofers: usize,
    pub tweeters: usize,
    /// Radius of the arc, centred between the default listener positions.
    pub arc_radius_m: f64,
    pub arc_length_m: f64,
    pub woofer_radius_m: f64,
    pub tweeter_radius_m: f64,
    /// Woofers sit this far below listener height, tweeters this far above.
    pub vertical_offset_m: f64,
}

impl Default for ArrayLayout {
    fn default() -> Self {
        Self {
            woofers: 4,
            tweeters: 4,
            arc_radius_m: 1.0,
            arc_length_m: 1.0,
            woofer_radius_m: 0.03,
            tweeter_radius_m: 0.0125,
            vertical_offset_m: 0.05,
        }
    }
}

impl ArrayLayout {
    /// The full-size layout: 8 woofers and 16 tweeters.
    pub fn full() -> Self {
        Self {
            woofers: 8,
            tweeters: 16,
            arc_length_m: 1.6,
            ..Self::default()
        }
    }

    pub fn speakers(&self) -> usize {
        self.woofers + self.tweeters
    }

    /// Arc angles of `count` equally spaced drivers.
    pub fn angles(&self, count: usize) -> Vec<f64> {
        let span = self.arc_length_m / self.arc_radius_m;
        if count == 1 {
            return vec![0.0];
        }
        (0..count)
            .map(|i| -0.5 * span + span * i as f64 / (count - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    pub room_dims_m: [Range; 3],
    pub rt60_s: Range,
    pub max_image_order: usize,
    /// Array-centre offset from the room's x midline.
    pub array_x_offset_m: Range,
    /// Distance of the array centre from the `y = 0` wall.
    pub array_wall_gap_m: Range,
    pub listener_height_m: f64,
    /// Default listener head centres relative to the array centre.
    pub zone_centers_xy_m: [[f64; 2]; 2],
    /// Uniform jitter added to each zone-centre coordinate.
    pub zone_jitter_m: Range,
    pub head_radius_m: Range,
    pub ear_offset_m: Range,
    pub control_radius_m: f64,
    pub points_per_ear: usize,
    pub layout: ArrayLayout,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            room_dims_m: [[4.0, 7.0], [4.0, 6.0], [2.5, 3.5]],
            rt60_s: [0.1, 0.4],
            max_image_order: 3,
            array_x_offset_m: [-0.5, 0.5],
            array_wall_gap_m: [0.5, 1.5],
            zone_jitter_m: [-0.25, 0.25],
            head_radius_m: [0.075, 0.095],
            ear_offset_m: [0.0, 0.01],
            ..Self::fixed()
        }
    }
}

impl SceneRanges {
    /// Every range collapsed: sampling yields the default scene geometry.
    pub fn fixed() -> Self {
        Self {
            room_dims_m: [[5.0, 5.0], [4.0, 4.0], [3.0, 3.0]],
            rt60_s: [0.0, 0.0],
            max_image_order: 3,
            array_x_offset_m: [0.0, 0.0],
            array_wall_gap_m: [1.0, 1.0],
            listener_height_m: 1.2,
            zone_centers_xy_m: [[-0.5, 1.0], [0.5, 1.0]],
            zone_jitter_m: [0.0, 0.0],
            head_radius_m: [0.0875, 0.0875],
            ear_offset_m: [0.005, 0.005],
            control_radius_m: 0.05,
            points_per_ear: 8,
            layout: ArrayLayout::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("room x", self.room_dims_m[0]),
            ("room y", self.room_dims_m[1]),
            ("room z", self.room_dims_m[2]),
            ("rt60", self.rt60_s),
            ("array x offset", self.array_x_offset_m),
            ("array wall gap", self.array_wall_gap_m),
            ("zone jitter", self.zone_jitter_m),
            ("head radius", self.head_radius_m),
            ("ear offset", self.ear_offset_m),
        ];
        for (name, [lo, hi]) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(BsannError::Config(format!("{name} range [{lo}, {hi}] is not ordered")));
            }
        }
        if self.head_radius_m[0] <= 0.0 || self.ear_offset_m[0] < 0.0 || self.rt60_s[0] < 0.0 {
            return Err(BsannError::Config("head radius must be positive; ear offset and rt60 nonnegative".into()));
        }
        if self.points_per_ear == 0 || self.layout.speakers() == 0 || !(self.control_radius_m >= 0.0) {
            return Err(BsannError::Config("need control points and drivers".into()));
        }
        Ok(())
    }
}

/// Everything needed to rebuild one scene's transfer functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub room: RoomSpec,
    pub drivers: Vec<DriverSpec>,
    pub listeners: [ListenerGeometry; 2],
    pub array_center_m: Vec3,
    pub seed: u64,
}

impl SceneConfig {
    pub fn pose(&self) -> PoseInput {
        let rel = |l: &ListenerGeometry| {
            [
                l.head_center_m[0] - self.array_center_m[0],
                l.head_center_m[1] - self.array_center_m[1],
            ]
        };
        PoseInput {
            listener1_xy_m: rel(&self.listeners[0]),
            listener2_xy_m: rel(&self.listeners[1]),
        }
    }

    pub fn points_per_ear(&self) -> usize {
        self.listeners[0].points_per_ear()
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        for d in &self.drivers {
            d.validate()?;
            if !self.room.contains(&d.position_m) {
                return Err(BsannError::Geometry(format!("driver at {:?} outside the room", d.position_m)));
            }
        }
        for l in &self.listeners {
            l.validate()?;
            for p in l.control_points.iter().flatten() {
                if !self.room.contains(p) {
                    return Err(BsannError::Geometry(format!("control point {p:?} outside the room")));
                }
            }
        }
        let [a, b] = &self.listeners;
        if geom::distance(&a.head_center_m, &b.head_center_m) <= a.head_radius_m + b.head_radius_m {
            return Err(BsannError::Geometry("listener heads overlap".into()));
        }
        if a.points_per_ear() != b.points_per_ear() {
            return Err(BsannError::Shape("listeners have different control-point counts".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: Range) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Drivers on an arc through the array centre, centred on the midpoint of the
/// default zones, each facing the arc centre.
pub fn place_drivers(layout: &ArrayLayout, array_center: &Vec3) -> Vec<DriverSpec> {
    let mut drivers = Vec::with_capacity(layout.speakers());
    let r = layout.arc_radius_m;
    let mut push = |band: DriverBand, count: usize, dz: f64, radius: f64| {
        for phi in layout.angles(count) {
            drivers.push(DriverSpec {
                position_m: [
                    array_center[0] + r * phi.sin(),
                    array_center[1] + r * (1.0 - phi.cos()),
                    array_center[2] + dz,
                ],
                facing_unit: [-phi.sin(), phi.cos(), 0.0],
                piston_radius_m: radius,
                band,
                response: DriverResponse::Synthetic,
            });
        }
    };
    push(DriverBand::Woofer, layout.woofers, -layout.vertical_offset_m, layout.woofer_radius_m);
    push(DriverBand::Tweeter, layout.tweeters, layout.vertical_offset_m, layout.tweeter_radius_m);
    drivers
}

/// Samples `count` points uniformly on a disc around `ear`, normal to the
/// lateral axis, keeping only points outside the sphere.
fn sample_control_points(
    rng: &mut ChaCha8Rng,
    listener: &ListenerGeometry,
    side: Side,
    radius: f64,
    count: usize,
) -> Result<Vec<Vec3>> {
    let ear = listener.ear_reference(side);
    let forward = listener.facing_unit;
    let up = [0.0, 0.0, 1.0];
    let mut points = Vec::with_capacity(count);
    let mut tries = 0;
    while points.len() < count {
        if tries == 1000 {
            return Err(BsannError::Geometry(format!(
                "could not place {count} control points outside the head after 1000 tries"
            )));
        }
        tries += 1;
        let rho = radius * rng.gen::<f64>().sqrt();
        let theta = 2.0 * PI * rng.gen::<f64>();
        let p = geom::add(
            &ear,
            &geom::add(&geom::scale(&forward, rho * theta.cos()), &geom::scale(&up, rho * theta.sin())),
        );
        if geom::distance(&p, &listener.head_center_m) > listener.head_radius_m {
            points.push(p);
        }
    }
    Ok(points)
}

/// Draws one scene. A pure function of `seed` and `ranges`.
pub fn sample_scene(seed: u64, ranges: &SceneRanges) -> Result<SceneConfig> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [
        uniform(&mut rng, ranges.room_dims_m[0]),
        uniform(&mut rng, ranges.room_dims_m[1]),
        uniform(&mut rng, ranges.room_dims_m[2]),
    ];
    let room = RoomSpec {
        dims_m: dims,
        rt60_s: uniform(&mut rng, ranges.rt60_s),
        max_image_order: ranges.max_image_order,
        speed_of_sound_mps: crate::room::default_speed_of_sound(),
    };
    let array_center = [
        0.5 * dims[0] + uniform(&mut rng, ranges.array_x_offset_m),
        uniform(&mut rng, ranges.array_wall_gap_m),
        ranges.listener_height_m,
    ];
    let drivers = place_drivers(&ranges.layout, &array_center);

    let mut listeners = Vec::with_capacity(2);
    for zone in &ranges.zone_centers_xy_m {
        let center = [
            array_center[0] + zone[0] + uniform(&mut rng, ranges.zone_jitter_m),
            array_center[1] + zone[1] + uniform(&mut rng, ranges.zone_jitter_m),
            ranges.listener_height_m,
        ];
        let mut listener = ListenerGeometry {
            head_center_m: center,
            head_radius_m: uniform(&mut rng, ranges.head_radius_m),
            ear_offset_m: uniform(&mut rng, ranges.ear_offset_m),
            facing_unit: [0.0, -1.0, 0.0],
            control_points: [Vec::new(), Vec::new()],
        };
        let left = sample_control_points(&mut rng, &listener, Side::Left, ranges.control_radius_m, ranges.points_per_ear)?;
        let right =
            sample_control_points(&mut rng, &listener, Side::Right, ranges.control_radius_m, ranges.points_per_ear)?;
        listener.control_points = [left, right];
        listeners.push(listener);
    }
    let listeners: [ListenerGeometry; 2] = listeners.try_into().expect("two listeners");
    let config = SceneConfig {
        room,
        drivers,
        listeners,
        array_center_m: array_center,
        seed,
    };
    config.validate()?;
    Ok(config)
}

/// Two listeners 0.5 m either side of the array axis and 1.0 m in front of
/// it, eight drivers on a 1.0 m arc, anechoic 5 × 4 × 3 m room.
pub fn default_scene() -> SceneConfig {
    sample_scene(DEFAULT_SEED, &SceneRanges::fixed()).expect("default scene is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtfMode {
    /// Room response only: no driver response, directivity or head.
    PointSource,
    PhysicallyInformed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub config: SceneConfig,
    pub atf: AtfTensor,
    pub pose: PoseInput,
    pub mode: AtfMode,
}

/// Direct/reflected RIR pairs for every `(ear, point, speaker)` path.
pub fn scene_rirs(config: &SceneConfig, grid: &FrequencyGrid) -> Result<Vec<RirPair>> {
    let points = config.points_per_ear();
    let speakers = config.drivers.len();
    par::try_map_indexed(NUM_EARS * points * speakers, |idx| {
        let l = idx % speakers;
        let m = (idx / speakers) % points;
        let e = idx / (speakers * points);
        let src = config.drivers[l].position_m;
        let mic = control_point(&config.listeners, e, m);
        let rir = simulate_rir(&config.room, &src, &mic, grid)?;
        let pair = split_direct_reflected(&rir.samples, &src, &mic, &config.room, grid, DEFAULT_GUARD_MS)?;
        if pair.overlap {
            log::warn!("direct gate overlaps the first reflection (ear {e}, point {m}, speaker {l})");
        }
        Ok(pair)
    })
}

/// Assembles the transfer-function tensor of a scene.
pub fn scene_atf(config: &SceneConfig, grid: &FrequencyGrid, hrtf: &HrtfConfig, mode: AtfMode) -> Result<AtfTensor> {
    config.validate()?;
    let rirs = scene_rirs(config, grid)?;
    match mode {
        AtfMode::PhysicallyInformed => assemble_atf(
            &rirs,
            &config.drivers,
            &config.listeners,
            grid,
            hrtf,
            config.room.speed_of_sound_mps,
        ),
        AtfMode::PointSource => {
            let dims = AtfDims {
                ears: NUM_EARS,
                points: config.points_per_ear(),
                speakers: config.drivers.len(),
                bins: grid.num_bins(),
            };
            let mut values = Vec::with_capacity(dims.len());
            for pair in &rirs {
                let full: Vec<f64> = pair.h_dir.iter().zip(&pair.h_refl).map(|(a, b)| a + b).collect();
                values.extend(rfft(&full, grid.fft_size));
            }
            AtfTensor::from_values(dims, *grid, values)
        }
    }
}

pub fn build_sample(config: &SceneConfig, grid: &FrequencyGrid, hrtf: &HrtfConfig, mode: AtfMode) -> Result<SceneSample> {
    let atf = scene_atf(config, grid, hrtf, mode)?;
    Ok(SceneSample {
        config: config.clone(),
        atf,
        pose: config.pose(),
        mode,
    })
}

/// The scene's tensor with one control point per ear, at the ear reference
/// points. Metrics are evaluated on this plant.
pub fn ear_reference_atf(config: &SceneConfig, grid: &FrequencyGrid, hrtf: &HrtfConfig, mode: AtfMode) -> Result<AtfTensor> {
    let reference = SceneConfig {
        listeners: [config.listeners[0].at_ear_references(), config.listeners[1].at_ear_references()],
        ..config.clone()
    };
    scene_atf(&reference, grid, hrtf, mode)
}

/// Averages `mags` over one-third-octave bands centred on each bin.
pub fn third_octave_smooth(mags: &[f64], grid: &FrequencyGrid) -> Vec<f64> {
    let half = 2f64.powf(1.0 / 6.0);
    let freqs = grid.bin_freqs();
    (0..mags.len())
        .map(|n| {
            if n == 0 {
                return mags[0];
            }
            let (lo, hi) = (freqs[n] / half, freqs[n] * half);
            let (sum, count) = freqs
                .iter()
                .zip(mags)
                .filter(|(f, _)| **f >= lo && **f <= hi)
                .fold((0.0, 0usize), |(s, c), (_, m)| (s + m, c + 1));
            sum / count as f64
        })
        .collect()
}

/// Bright-zone target magnitudes of a scene.
///
/// For each ear, the nearest woofer and the nearest tweeter are found; at
/// every control point the target is the larger of their direct-path
/// magnitudes, smoothed over one-third-octave bands. In point-source mode the
/// direct path is the free-field response alone.
pub fn bright_zone_targets(
    config: &SceneConfig,
    grid: &FrequencyGrid,
    hrtf: &HrtfConfig,
    mode: AtfMode,
) -> Result<TargetSpec> {
    let points = config.points_per_ear();
    let bins = grid.num_bins();
    let c = config.room.speed_of_sound_mps;
    let responses: Vec<_> = config.drivers.iter().map(|d| d.response_spectrum(grid)).collect::<Result<_>>()?;
    let per_ear = par::try_map_indexed(NUM_EARS, |e| {
        let (owner, side) = ear_owner(e);
        let listener = &config.listeners[owner];
        let reference = listener.ear_reference(side);
        let nearest = |band: DriverBand| {
            config
                .drivers
                .iter()
                .enumerate()
                .filter(|(_, d)| d.band == band)
                .min_by(|a, b| {
                    geom::distance(&a.1.position_m, &reference).total_cmp(&geom::distance(&b.1.position_m, &reference))
                })
                .map(|(i, _)| i)
        };
        let chosen: Vec<usize> = [nearest(DriverBand::Woofer), nearest(DriverBand::Tweeter)].into_iter().flatten().collect();
        let mut out = Vec::with_capacity(points * bins);
        for m in 0..points {
            let ctrl = listener.control_points[side as usize][m];
            let mut best = vec![0.0f64; bins];
            for &l in &chosen {
                let driver = &config.drivers[l];
                let rir = simulate_rir(&config.room, &driver.position_m, &ctrl, grid)?;
                let pair = split_direct_reflected(&rir.samples, &driver.position_m, &ctrl, &config.room, grid, DEFAULT_GUARD_MS)?;
                let h_dir = rfft(&pair.h_dir, grid.fft_size);
                let mags: Vec<f64> = match mode {
                    AtfMode::PointSource => h_dir.iter().map(|z| z.norm()).collect(),
                    AtfMode::PhysicallyInformed => {
                        let factor = direct_path_factor(driver, &responses[l], listener, &ctrl, grid, hrtf, c)?;
                        h_dir.iter().zip(&factor).map(|(a, b)| (a * b).norm()).collect()
                    }
                };
                for (b, v) in best.iter_mut().zip(mags) {
                    *b = b.max(v);
                }
            }
            out.extend(third_octave_smooth(&best, grid));
        }
        Ok::<_, BsannError>(out)
    })?;
    TargetSpec::new(points, bins, per_ear.concat())
}

const DATASET_MAGIC: &[u8; 4] = b"BSZ1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleMeta {
    config: SceneConfig,
    pose: PoseInput,
    mode: AtfMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    version: u32,
    grid: FrequencyGrid,
    ranges: Option<SceneRanges>,
    count: usize,
    points: usize,
    speakers: usize,
    samples: Vec<SampleMeta>,
    blob_sha256: String,
}

/// A dataset file's contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: FrequencyGrid,
    pub ranges: Option<SceneRanges>,
    pub samples: Vec<SceneSample>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_dataset_to(mut w: impl Write, dataset: &Dataset) -> Result<()> {
    let (points, speakers) = dataset
        .samples
        .first()
        .map(|s| (s.atf.dims.points, s.atf.dims.speakers))
        .unwrap_or((0, 0));
    let mut blob = Vec::new();
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let d = s.atf.dims;
        if d.points != points || d.speakers != speakers || d.bins != dataset.grid.num_bins() || s.atf.grid != dataset.grid {
            return Err(BsannError::Shape(format!("sample with dims {d:?} does not match the dataset")));
        }
        for z in &s.atf.values {
            blob.extend_from_slice(&(z.re as f32).to_le_bytes());
            blob.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        samples.push(SampleMeta {
            config: s.config.clone(),
            pose: s.pose,
            mode: s.mode,
        });
    }
    let header = DatasetHeader {
        version: DATASET_VERSION,
        grid: dataset.grid,
        ranges: dataset.ranges.clone(),
        count: samples.len(),
        points,
        speakers,
        samples,
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_dataset_from(mut r: impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(BsannError::Format("not a dataset file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)
        .map_err(|_| BsannError::Format("dataset header is truncated".into()))?;
    let header: DatasetHeader = serde_json::from_slice(&json)?;
    if header.version != DATASET_VERSION {
        return Err(BsannError::Version {
            expected: DATASET_VERSION,
            found: header.version,
        });
    }
    header.grid.validate()?;
    if header.samples.len() != header.count {
        return Err(BsannError::Format(format!(
            "header lists {} samples but count is {}",
            header.samples.len(),
            header.count
        )));
    }
    let dims = AtfDims {
        ears: NUM_EARS,
        points: header.points,
        speakers: header.speakers,
        bins: header.grid.num_bins(),
    };
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let expected = header.count * dims.len() * 8;
    if blob.len() != expected {
        return Err(BsannError::Format(format!(
            "dataset blob has {} bytes, header implies {expected}",
            blob.len()
        )));
    }
    let actual = hex(&Sha256::digest(&blob));
    if actual != header.blob_sha256 {
        return Err(BsannError::Checksum {
            expected: header.blob_sha256,
            actual,
        });
    }
    let floats: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let mut samples = Vec::with_capacity(header.count);
    for (i, meta) in header.samples.into_iter().enumerate() {
        let chunk = &floats[i * 2 * dims.len()..(i + 1) * 2 * dims.len()];
        let values = chunk.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        samples.push(SceneSample {
            atf: AtfTensor::from_values(dims, header.grid, values)?,
            config: meta.config,
            pose: meta.pose,
            mode: meta.mode,
        });
    }
    Ok(Dataset {
        grid: header.grid,
        ranges: header.ranges,
        samples,
    })
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset_to(&mut w, dataset)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_from(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Seed of scene `index` in a dataset generated from `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64);
    rng.gen()
}

/// Generates `count` scenes and their tensors (scenes built in parallel).
pub fn generate_dataset(
    count: usize,
    base_seed: u64,
    ranges: &SceneRanges,
    grid: &FrequencyGrid,
    hrtf: &HrtfConfig,
    mode: AtfMode,
) -> Result<Dataset> {
    generate_dataset_with_progress(count, base_seed, ranges, grid, hrtf, mode, |_| {})
}

/// [`generate_dataset`] calling `progress(i)` as scene `i` finishes
/// (in completion order, which may differ from index order).
pub fn generate_dataset_with_progress(
    count: usize,
    base_seed: u64,
    ranges: &SceneRanges,
    grid: &FrequencyGrid,
    hrtf: &HrtfConfig,
    mode: AtfMode,
    progress: impl Fn(usize) + Sync + Send,
) -> Result<Dataset> {
    let samples = par::try_map_indexed(count, |i| {
        let config = sample_scene(scene_seed(base_seed, i), ranges)?;
        // Scenes run concurrently; keep each one's paths on this thread.
        let sample = par::sequential(|| build_sample(&config, grid, hrtf, mode))?;
        progress(i);
        Ok::<_, BsannError>(sample)
    })?;
    Ok(Dataset {
        grid: *grid,
        ranges: Some(ranges.clone()),
        samples,
    })
}
