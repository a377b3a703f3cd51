//! Cylindrical and spherical Bessel functions and Legendre polynomials.

use num_complex::Complex64;

const RESCALE_AT: f64 = 1e200;

/// `(J0(x), J1(x))` by Miller's backward recurrence, normalised with
/// `J0 + 2 Σ J_2k = 1`.
pub fn bessel_j01(x: f64) -> (f64, f64) {
    let ax = x.abs();
    if ax == 0.0 {
        return (1.0, 0.0);
    }
    let mut start = (ax + 30.0 + 10.0 * ax.sqrt()) as usize;
    start += start % 2;
    let (mut next, mut cur) = (0.0f64, 1e-30f64);
    let (mut j0, mut j1) = (0.0, 0.0);
    let mut norm = 0.0;
    // cur holds J_k; step down to J_{k-1}.
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / ax * cur - next;
        next = cur;
        cur = prev;
        let order = k - 1;
        if order == 1 {
            j1 = cur;
        }
        if order == 0 {
            j0 = cur;
        }
        if order % 2 == 0 && order > 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > RESCALE_AT {
            cur /= RESCALE_AT;
            next /= RESCALE_AT;
            norm /= RESCALE_AT;
            j1 /= RESCALE_AT;
        }
    }
    norm += j0;
    let j1 = j1 / norm;
    (j0 / norm, if x < 0.0 { -j1 } else { j1 })
}

pub fn bessel_j1(x: f64) -> f64 {
    bessel_j01(x).1
}

/// Spherical Bessel functions `j_0..=j_nmax` at `x >= 0`.
///
/// Upward recurrence while the order stays below the argument, Miller's
/// downward recurrence (normalised against `j_0` or `j_1`) otherwise.
pub fn spherical_jn(nmax: usize, x: f64) -> Vec<f64> {
    let mut j = vec![0.0; nmax + 1];
    if x == 0.0 {
        j[0] = 1.0;
        return j;
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    if (nmax as f64) < x {
        j[0] = j0;
        if nmax >= 1 {
            j[1] = j1;
        }
        for n in 1..nmax {
            j[n + 1] = (2 * n + 1) as f64 / x * j[n] - j[n - 1];
        }
        return j;
    }
    let start = (nmax as f64).max(x) as usize + 40 + (2.0 * x.sqrt()) as usize;
    let (mut upper, mut cur) = (0.0f64, 1e-300f64);
    // cur holds f_{k}; recurrence f_{k-1} = (2k+1)/x f_k - f_{k+1}.
    for k in (1..=start).rev() {
        let lower = (2 * k + 1) as f64 / x * cur - upper;
        upper = cur;
        cur = lower;
        let order = k - 1;
        if order <= nmax {
            j[order] = cur;
        }
        if cur.abs() > RESCALE_AT {
            cur /= RESCALE_AT;
            upper /= RESCALE_AT;
            for v in j.iter_mut().skip(order) {
                *v /= RESCALE_AT;
            }
        }
    }
    // The k = 1 step leaves the unnormalised f_1 in `upper`.
    let scale = if j0.abs() >= j1.abs() { j0 / j[0] } else { j1 / upper };
    for v in j.iter_mut() {
        *v *= scale;
    }
    j
}

/// Spherical Neumann functions `y_0..=y_nmax` by upward recurrence.
/// Orders that overflow come back as `-inf`.
pub fn spherical_yn(nmax: usize, x: f64) -> Vec<f64> {
    let mut y = vec![0.0; nmax + 1];
    let (s, c) = x.sin_cos();
    y[0] = -c / x;
    if nmax >= 1 {
        y[1] = -c / (x * x) - s / x;
    }
    for n in 1..nmax {
        y[n + 1] = (2 * n + 1) as f64 / x * y[n] - y[n - 1];
    }
    y
}

/// Derivatives from `f_n' = f_{n-1} - (n+1)/x f_n`, `f_0' = -f_1`.
/// Needs `f` up to order `nmax + 1`.
pub fn spherical_derivatives(f: &[f64], x: f64, nmax: usize) -> Vec<f64> {
    (0..=nmax)
        .map(|n| {
            if n == 0 {
                -f[1]
            } else {
                f[n - 1] - (n + 1) as f64 / x * f[n]
            }
        })
        .collect()
}

/// Spherical Hankel functions of the first kind, `h_n = j_n + i y_n`.
pub fn spherical_hn(nmax: usize, x: f64) -> Vec<Complex64> {
    spherical_jn(nmax, x)
        .into_iter()
        .zip(spherical_yn(nmax, x))
        .map(|(j, y)| Complex64::new(j, y))
        .collect()
}

/// Legendre polynomials `P_0..=P_nmax` at `x`.
pub fn legendre(nmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; nmax + 1];
    p[0] = 1.0;
    if nmax >= 1 {
        p[1] = x;
    }
    for n in 1..nmax {
        p[n + 1] = ((2 * n + 1) as f64 * x * p[n] - n as f64 * p[n - 1]) / (n + 1) as f64;
    }
    p
}
