use std::collections::BTreeMap;
use std::f64::consts::PI;

use approx::assert_relative_eq;
use bsann_core::room::{image_sources, simulate_rir, split_direct_reflected, RoomSpec, DEFAULT_GUARD_MS};
use bsann_core::spectral::FrequencyGrid;

fn room(rt60: f64, order: usize) -> RoomSpec {
    RoomSpec {
        dims_m: [5.0, 4.0, 3.0],
        rt60_s: rt60,
        max_image_order: order,
        speed_of_sound_mps: 343.0,
    }
}

fn key(p: &[f64; 3]) -> [i64; 3] {
    p.map(|x| (x * 1e6).round() as i64)
}

/// Breadth-first mirroring across the six walls, keeping the fewest
/// bounces that reach each image position.
fn mirrored_images(dims: [f64; 3], src: [f64; 3], order: usize) -> BTreeMap<[i64; 3], ([f64; 3], usize)> {
    let mut seen = BTreeMap::new();
    seen.insert(key(&src), (src, 0));
    let mut frontier = vec![src];
    for depth in 1..=order {
        let mut next = Vec::new();
        for p in &frontier {
            for axis in 0..3 {
                for wall in [0.0, dims[axis]] {
                    let mut q = *p;
                    q[axis] = 2.0 * wall - p[axis];
                    if !seen.contains_key(&key(&q)) {
                        seen.insert(key(&q), (q, depth));
                        next.push(q);
                    }
                }
            }
        }
        frontier = next;
    }
    seen
}

fn kernel(u: f64) -> f64 {
    if u <= -8.0 || u > 8.0 {
        return 0.0;
    }
    let sinc = if u == 0.0 { 1.0 } else { (PI * u).sin() / (PI * u) };
    sinc * 0.5 * (1.0 + (PI * u / 8.5).cos())
}

#[test]
fn image_list_matches_exhaustive_mirroring() {
    let r = room(0.2, 2);
    let src = [1.3, 2.1, 1.1];
    let expected = mirrored_images(r.dims_m, src, 2);
    let got = image_sources(&r, &src);
    assert_eq!(got.len(), expected.len());
    for im in &got {
        let (pos, depth) = expected[&key(&im.position)];
        assert_eq!(im.reflections, depth);
        for a in 0..3 {
            assert!((pos[a] - im.position[a]).abs() < 1e-9);
        }
    }
}

#[test]
fn rir_matches_exhaustive_image_sum() {
    let r = room(0.2, 2);
    let grid = FrequencyGrid::new(48000.0, 1024, 100.0, 20000.0).unwrap();
    let src = [1.3, 2.1, 1.1];
    let mic = [3.2, 1.7, 1.4];
    let volume = 60.0;
    let surface = 2.0 * (20.0 + 15.0 + 12.0);
    let alpha = 24.0 * 10f64.ln() / 343.0 * volume / (surface * 0.2);
    let beta = (1.0 - alpha).sqrt();

    let mut oracle = vec![0.0; grid.fft_size];
    for (pos, bounces) in mirrored_images(r.dims_m, src, 2).values() {
        let d = ((pos[0] - mic[0]).powi(2) + (pos[1] - mic[1]).powi(2) + (pos[2] - mic[2]).powi(2)).sqrt();
        let tau = d / 343.0 * 48000.0;
        let amp = beta.powi(*bounces as i32) / (4.0 * PI * d);
        for (n, v) in oracle.iter_mut().enumerate() {
            *v += amp * kernel(n as f64 - tau);
        }
    }
    let rir = simulate_rir(&r, &src, &mic, &grid).unwrap();
    let peak = oracle.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (a, b) in rir.samples.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-12 * peak, "{a} vs {b}");
    }
}

#[test]
fn doubling_the_room_doubles_delay_and_halves_amplitude() {
    // 34300 Hz makes one metre exactly 100 samples.
    let grid = FrequencyGrid::new(34300.0, 1024, 100.0, 17000.0).unwrap();
    let small = RoomSpec { dims_m: [3.0, 3.0, 3.0], ..room(0.0, 0) };
    let big = RoomSpec { dims_m: [6.0, 6.0, 6.0], ..room(0.0, 0) };
    let a = simulate_rir(&small, &[1.0, 1.5, 1.5], &[2.0, 1.5, 1.5], &grid).unwrap();
    let b = simulate_rir(&big, &[2.0, 3.0, 3.0], &[4.0, 3.0, 3.0], &grid).unwrap();
    assert_relative_eq!(a.samples[100], 1.0 / (4.0 * PI), max_relative = 1e-12);
    assert_relative_eq!(b.samples[200], 0.5 * a.samples[100], max_relative = 1e-12);
    assert!(a.samples[99].abs() < 1e-15 && b.samples[199].abs() < 1e-15);
}

#[test]
fn order_zero_is_anechoic_for_any_rt60() {
    let grid = FrequencyGrid::default();
    let src = [1.0, 1.0, 1.0];
    let mic = [2.5, 2.0, 1.2];
    let reference = simulate_rir(&room(0.0, 3), &src, &mic, &grid).unwrap();
    for rt60 in [0.1, 0.3, 0.9] {
        assert_eq!(simulate_rir(&room(rt60, 0), &src, &mic, &grid).unwrap().samples, reference.samples);
    }
}

#[test]
fn split_is_a_partition_with_one_direct_region() {
    let grid = FrequencyGrid::default();
    let r = room(0.3, 3);
    let src = [1.0, 1.0, 1.0];
    let mic = [2.5, 2.0, 1.2];
    let rir = simulate_rir(&r, &src, &mic, &grid).unwrap();
    let pair = split_direct_reflected(&rir.samples, &src, &mic, &r, &grid, DEFAULT_GUARD_MS).unwrap();
    for n in 0..rir.samples.len() {
        assert_eq!(pair.h_dir[n] + pair.h_refl[n], rir.samples[n]);
    }
    let nonzero: Vec<usize> = (0..pair.h_dir.len()).filter(|&n| pair.h_dir[n] != 0.0).collect();
    let span = nonzero.last().unwrap() - nonzero.first().unwrap();
    assert!(span <= 2 * (DEFAULT_GUARD_MS * 48.0) as usize + 1);
}
