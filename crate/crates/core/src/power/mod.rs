//! Semi-analytic power of the maxT method under Gaussianity.
//!
//! For an oracle subgroup the non-identity rows of the transformed data are
//! iid copies of the noise, so power reduces to comparing `Z_j ~ N(n^{1/2}mu_j, 1)`
//! with `|S| - 1` draws of `max_l Y_l` ([`oracle_power`]). For the full group
//! the reference distribution picks up a leak term
//! `n^{1/2} iota' H iota mu_1` ([`fullgroup_power_approx`]). Replacing
//! `max_l Y_l` by its Gumbel approximation gives closed-form signals at which
//! each method has power about one half ([`mu_os`], [`mu_h`]).

mod quantile;

pub use quantile::{gumbel_quantile, normal_quantile, sample_max_standard_normal};

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::invariance::max_exceedances;
use crate::Estimate;

/// Euler–Mascheroni constant to 15 digits.
pub const EULER_GAMMA: f64 = 0.577215664901533;

/// Default number of inner draws for the full-group reference quantile.
pub const DEFAULT_INNER_DRAWS: usize = 4095;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GumbelParams {
    pub location: f64,
    pub scale: f64,
}

impl GumbelParams {
    pub fn quantile(&self, u: f64) -> Result<f64> {
        Ok(self.location + self.scale * gumbel_quantile(u)?)
    }

    pub fn mean(&self) -> f64 {
        self.location + EULER_GAMMA * self.scale
    }

    pub fn variance(&self) -> f64 {
        PI * PI / 6.0 * self.scale * self.scale
    }
}

fn check_p(p: usize) -> Result<()> {
    if p >= 3 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "the Gumbel approximation needs p >= 3, got {p}"
        )))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::invalid("n must be at least 1"))
    }
}

/// Gumbel approximation of `max` of `p` iid standard normals:
/// location `-Phi^{-1}(1/p)`, scale `-1/Phi^{-1}(1/p)`.
pub fn gumbel_params_for_max_gaussian(p: usize) -> Result<GumbelParams> {
    check_p(p)?;
    let z = normal_quantile(1.0 / p as f64)?;
    Ok(GumbelParams {
        location: -z,
        scale: -1.0 / z,
    })
}

/// Signal at which the oracle-subgroup maxT method has power about 1/2:
/// `-n^{-1/2} [Gamma^{-1}(1-alpha) / Phi^{-1}(1/p) + Phi^{-1}(1/p)]`.
pub fn mu_os(n: usize, p: usize, alpha: f64) -> Result<f64> {
    check_n(n)?;
    check_p(p)?;
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 / p as f64)?;
    let g = gumbel_quantile(1.0 - alpha)?;
    Ok(-(g / z + z) / (n as f64).sqrt())
}

/// The constants of the moment-matched normal approximation to
/// `N(0, mu^2) + Gumbel`: `a` (Gumbel mean), `b` (Gumbel variance) and
/// `c = Phi^{-1}(1 - alpha)`.
fn abc(p: usize, alpha: f64) -> Result<(f64, f64, f64)> {
    let z = normal_quantile(1.0 / p as f64)?;
    let a = -EULER_GAMMA / z - z;
    let b = PI * PI / (6.0 * z * z);
    let c = normal_quantile(1.0 - alpha)?;
    Ok((a, b, c))
}

/// Signal at which the full-group maxT method has power about 1/2:
/// `(c^2 [a^2 + b(n - c^2)] / (c^2 - n)^2)^{1/2} + a n^{1/2} / (n - c^2)`.
/// Requires `n > c^2`.
pub fn mu_h(n: usize, p: usize, alpha: f64) -> Result<f64> {
    check_n(n)?;
    check_p(p)?;
    check_alpha(alpha)?;
    let (a, b, c) = abc(p, alpha)?;
    let nf = n as f64;
    let c2 = c * c;
    if nf <= c2 {
        return Err(Error::domain(format!(
            "mu_h needs n > Phi^-1(1-alpha)^2 = {c2:.6}, got n = {n}"
        )));
    }
    let root = (c2 * (a * a + b * (nf - c2)) / ((c2 - nf) * (c2 - nf))).sqrt();
    Ok(root + a * nf.sqrt() / (nf - c2))
}

/// Both sides of the crossover inequality; the oracle subgroup needs the
/// smaller signal iff `lhs >= rhs`.
///
/// `lhs = n^{-1/2} Gamma^{-1}(1-alpha) + n^{-1/2} Phi^{-1}(1/p)^2` and
/// `rhs = [((gamma - Gamma^{-1}(1-alpha)) / Phi^{-1}(1-alpha))^2 - pi^2/6]^{1/2}`.
pub fn crossover(n: usize, p: usize, alpha: f64) -> Result<(f64, f64)> {
    check_n(n)?;
    check_p(p)?;
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 / p as f64)?;
    let g = gumbel_quantile(1.0 - alpha)?;
    let c = normal_quantile(1.0 - alpha)?;
    let root_n = (n as f64).sqrt();
    let lhs = g / root_n + z * z / root_n;
    let inner = ((EULER_GAMMA - g) / c).powi(2) - PI * PI / 6.0;
    if inner < 0.0 {
        return Err(Error::domain(format!(
            "crossover right-hand side undefined at alpha = {alpha} (negative radicand {inner:.6})"
        )));
    }
    Ok((lhs, inner.sqrt()))
}

/// All relative-efficiency quantities for one `(n, p, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffSignals {
    pub mu_os: f64,
    pub mu_h: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl EffSignals {
    pub fn compute(n: usize, p: usize, alpha: f64) -> Result<Self> {
        let (a, b, c) = {
            check_p(p)?;
            check_alpha(alpha)?;
            abc(p, alpha)?
        };
        let (lhs, rhs) = crossover(n, p, alpha)?;
        Ok(EffSignals {
            mu_os: mu_os(n, p, alpha)?,
            mu_h: mu_h(n, p, alpha)?,
            a,
            b,
            c,
            lhs,
            rhs,
        })
    }

    /// Whether the inequality predicts the oracle subgroup needs the smaller signal.
    pub fn oracle_favored(&self) -> bool {
        self.lhs >= self.rhs
    }
}

/// A lower-triangular factor `L` of a noise covariance `Sigma = L L'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholeskyFactor {
    /// `lower` is row-major `dim x dim`; entries above the diagonal must be zero
    /// and the diagonal positive.
    pub fn new(dim: usize, lower: Vec<f64>) -> Result<Self> {
        check_dim(dim * dim, lower.len())?;
        for i in 0..dim {
            if lower[i * dim + i].is_nan() || lower[i * dim + i] <= 0.0 {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} of the factor must be positive"
                )));
            }
            if lower[i * dim + i + 1..(i + 1) * dim]
                .iter()
                .any(|&v| v != 0.0)
            {
                return Err(Error::invalid(format!(
                    "row {i} of the factor has entries above the diagonal"
                )));
            }
        }
        Ok(CholeskyFactor { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out = L xi` restricted to the first `out.len()` coordinates.
    fn mul_prefix(&self, xi: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.lower[i * self.dim..i * self.dim + i + 1];
            *o = row.iter().zip(xi).map(|(l, x)| l * x).sum();
        }
    }
}

/// One draw of `max_l Y_l` with `Y ~ N(0, Sigma)`.
fn sample_null_max<R: Rng + ?Sized>(
    p: usize,
    sigma: Option<&CholeskyFactor>,
    rng: &mut R,
    xi: &mut [f64],
    y: &mut [f64],
) -> f64 {
    match sigma {
        None => sample_max_standard_normal(p, rng),
        Some(factor) => {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            factor.mul_prefix(xi, y);
            y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Monte Carlo evaluation of the oracle-subgroup power
/// `(1/k) sum_{j<=k} P[Z_j > q_alpha^{|S|}(max_l Y_l)]`.
///
/// `mu` has `k` positive entries followed by zeros. Each repetition draws
/// `subgroup_size - 1` null maxima and `Z ~ N(n^{1/2} mu, Sigma)`, and rejects
/// `Z_j` when `1 + #{draws >= Z_j}` is an admissible exceedance count at level
/// `alpha` for `M = subgroup_size`; the `+1` is the identity element.
#[allow(clippy::too_many_arguments)]
pub fn oracle_power<R: Rng + ?Sized>(
    n: usize,
    mu: &[f64],
    k: usize,
    subgroup_size: usize,
    alpha: f64,
    reps: usize,
    rng: &mut R,
    sigma: Option<&CholeskyFactor>,
) -> Result<Estimate> {
    check_n(n)?;
    let p = mu.len();
    if k == 0 || k > p {
        return Err(Error::invalid(format!(
            "need 1 <= k <= p, got k = {k}, p = {p}"
        )));
    }
    if !mu[..k].iter().all(|&m| m > 0.0) || !mu[k..].iter().all(|&m| m == 0.0) {
        return Err(Error::invalid(
            "mu must have k positive entries followed by zeros",
        ));
    }
    if subgroup_size < 2 {
        return Err(Error::invalid("subgroup size must be at least 2"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    if let Some(f) = sigma {
        check_dim(p, f.dim())?;
    }

    let allowed = max_exceedances(subgroup_size, alpha);
    let root_n = (n as f64).sqrt();
    let mut xi = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut z = vec![0.0; k];
    let mut draws = vec![0.0; subgroup_size - 1];
    let mut per_rep = Vec::with_capacity(reps);
    for _ in 0..reps {
        for d in draws.iter_mut() {
            *d = sample_null_max(p, sigma, rng, &mut xi, &mut y);
        }
        draws.sort_by(f64::total_cmp);
        match sigma {
            None => {
                for (zj, m) in z.iter_mut().zip(mu) {
                    *zj = root_n * m + rng.sample::<f64, _>(StandardNormal);
                }
            }
            Some(factor) => {
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                factor.mul_prefix(&xi, &mut z);
                for (zj, m) in z.iter_mut().zip(mu) {
                    *zj += root_n * m;
                }
            }
        }
        let rejected = z
            .iter()
            .filter(|&&zj| {
                let at_least = draws.len() - draws.partition_point(|&d| d < zj);
                at_least < allowed
            })
            .count();
        per_rep.push(rejected as f64 / k as f64);
    }
    Ok(Estimate::from_samples(&per_rep))
}

/// The single-term oracle power `P[Z_1 > q_alpha^{|S|}(max_l Y_l)]` for iid
/// noise and equal means.
pub fn oracle_power_single<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    mu1: f64,
    subgroup_size: usize,
    alpha: f64,
    reps: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_n(n)?;
    if p == 0 || reps == 0 {
        return Err(Error::invalid("p and reps must be at least 1"));
    }
    if subgroup_size < 2 {
        return Err(Error::invalid("subgroup size must be at least 2"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let allowed = max_exceedances(subgroup_size, alpha);
    let root_n = (n as f64).sqrt();
    let mut draws = vec![0.0; subgroup_size - 1];
    let mut hits = 0;
    for _ in 0..reps {
        for d in draws.iter_mut() {
            *d = sample_max_standard_normal(p, rng);
        }
        let z = root_n * mu1 + rng.sample::<f64, _>(StandardNormal);
        let at_least = draws.iter().filter(|&&d| d >= z).count();
        if at_least < allowed {
            hits += 1;
        }
    }
    Ok(Estimate::from_proportion(hits, reps))
}

/// How the leak variable `n^{1/2} iota' H iota` is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeakMode {
    /// Standard normal, its large-`n` limit.
    GaussianLeak,
    /// Exactly: `n^{1/2}` times one coordinate of a uniform point on the unit sphere.
    SphereLeak,
}

/// Monte Carlo evaluation of the full-group power approximation
/// `P[Z_1 > q_alpha(n^{1/2} iota' H iota mu_1 + max_l Y_l)]` with
/// [`DEFAULT_INNER_DRAWS`] draws for the inner quantile.
pub fn fullgroup_power_approx<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    mu1: f64,
    alpha: f64,
    reps: usize,
    rng: &mut R,
    mode: LeakMode,
) -> Result<Estimate> {
    fullgroup_power_approx_with(n, p, mu1, alpha, reps, rng, mode, DEFAULT_INNER_DRAWS)
}

#[allow(clippy::too_many_arguments)]
pub fn fullgroup_power_approx_with<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    mu1: f64,
    alpha: f64,
    reps: usize,
    rng: &mut R,
    mode: LeakMode,
    inner_draws: usize,
) -> Result<Estimate> {
    check_n(n)?;
    if p == 0 || reps == 0 || inner_draws == 0 {
        return Err(Error::invalid("p, reps and inner_draws must be at least 1"));
    }
    if mu1.is_nan() || mu1 < 0.0 {
        return Err(Error::invalid(format!(
            "mu1 must be non-negative, got {mu1}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let root_n = (n as f64).sqrt();
    let mut sphere = vec![0.0; n];
    let mut inner: Vec<f64> = (0..inner_draws)
        .map(|_| {
            let leak = match mode {
                LeakMode::GaussianLeak => rng.sample::<f64, _>(StandardNormal),
                LeakMode::SphereLeak => {
                    for v in sphere.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let norm = sphere.iter().map(|v| v * v).sum::<f64>().sqrt();
                    root_n * sphere[0] / norm
                }
            };
            leak * mu1 + sample_max_standard_normal(p, rng)
        })
        .collect();
    inner.sort_by(f64::total_cmp);
    // empirical upper-alpha quantile: the ceil((1 - alpha) N)-th order statistic
    let rank = ((1.0 - alpha) * inner_draws as f64)
        .ceil()
        .clamp(1.0, inner_draws as f64) as usize;
    let q = inner[rank - 1];

    let hits = (0..reps)
        .filter(|_| root_n * mu1 + rng.sample::<f64, _>(StandardNormal) > q)
        .count();
    Ok(Estimate::from_proportion(hits, reps))
}
