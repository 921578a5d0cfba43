//! Independent reference computations used by the integration and acceptance
//! tests. Nothing here calls into the library's numeric paths.

#![allow(dead_code)]

use std::f64::consts::PI;

/// `erf(z)` by its Maclaurin series; accurate to ~1e-13 for |z| <= 3.
pub fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let z2 = z * z;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= -z2 / k;
        let contrib = term / (2.0 * k + 1.0);
        sum += contrib;
        if contrib.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    2.0 / PI.sqrt() * sum
}

/// Standard normal CDF via the error-function series.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2))
}

/// Solves `normal_cdf(x) = u` by bisection on [-9, 9].
pub fn normal_quantile_bisection(u: f64) -> f64 {
    let (mut lo, mut hi) = (-9.0f64, 9.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All `2^n` sign vectors as `f64` entries, in bitmask order.
pub fn all_sign_vectors(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|mask| {
            (0..n)
                .map(|i| if (mask >> i) & 1 == 1 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

/// maxT p-values by exhaustive enumeration: `x` is row-major `n x p`.
pub fn brute_force_maxt_pvalues(x: &[Vec<f64>], iota: &[f64], signs: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len();
    let stat = |s: &[f64], j: usize| -> f64 {
        let mut sum = 0.0;
        for i in 0..n {
            sum += (iota[i] * s[i]) * x[i][j];
        }
        sum
    };
    let identity = vec![1.0; n];
    let t: Vec<f64> = (0..p).map(|j| stat(&identity, j)).collect();
    let maxima: Vec<f64> = signs
        .iter()
        .map(|s| (0..p).map(|j| stat(s, j)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    t.iter()
        .map(|&tj| maxima.iter().filter(|&&m| m >= tj).count() as f64 / signs.len() as f64)
        .collect()
}

/// Upper-alpha quantile of `max` of `p` iid standard normals, solved by
/// bisection on `normal_cdf(x)^p = 1 - alpha`.
pub fn max_normal_upper_quantile(p: usize, alpha: f64) -> f64 {
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (-9.0f64, 9.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid).powi(p as i32) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closure by brute force on `i8` sign vectors; also requires the identity
/// first and no duplicates.
pub fn is_closed(group: &subgroup_power::Subgroup) -> bool {
    use std::collections::HashSet;
    let signs: Vec<Vec<i8>> = group.elements().iter().map(|e| e.signs()).collect();
    let members: HashSet<&Vec<i8>> = signs.iter().collect();
    if members.len() != signs.len() || !signs[0].iter().all(|&s| s == 1) {
        return false;
    }
    let mut prod = vec![0i8; group.n()];
    signs.iter().all(|a| {
        signs.iter().all(|b| {
            for ((p, x), y) in prod.iter_mut().zip(a).zip(b) {
                *p = x * y;
            }
            members.contains(&prod)
        })
    })
}
