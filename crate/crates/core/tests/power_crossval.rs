mod common;

use common::max_normal_upper_quantile;
use rand::Rng;
use rand_distr::StandardNormal;

use subgroup_power::construction::Strategy;
use subgroup_power::power::{
    fullgroup_power_approx, mu_h, mu_os, oracle_power, oracle_power_single, CholeskyFactor,
    LeakMode,
};
use subgroup_power::rng::substream;
use subgroup_power::simulation::{estimate, Method, Scenario};

fn within(a: f64, se_a: f64, b: f64, se_b: f64, z: f64) -> bool {
    (a - b).abs() <= z * (se_a * se_a + se_b * se_b).sqrt().max(1e-12)
}

#[test]
fn large_subgroup_power_matches_population_quantile() {
    // with |S| large, the rank rule converges to comparing Z to the
    // population (1 - alpha) quantile of the max of p normals
    let (n, p, alpha, mu1, reps) = (16usize, 20usize, 0.05, 0.6, 4000);
    let q = max_normal_upper_quantile(p, alpha);
    let mut rng = substream(200, 0);
    let hits = (0..reps)
        .filter(|_| (n as f64).sqrt() * mu1 + rng.sample::<f64, _>(StandardNormal) > q)
        .count();
    let reference = hits as f64 / reps as f64;
    let se_ref = (reference * (1.0 - reference) / reps as f64).sqrt();
    let est = oracle_power_single(n, p, mu1, 4096, alpha, reps, &mut substream(201, 0)).unwrap();
    assert!(
        within(est.value, est.se, reference, se_ref, 3.0),
        "{est:?} vs {reference}"
    );
}

#[test]
fn oracle_power_matches_full_simulation() {
    let (n, p, alpha) = (16, 50, 0.125);
    let mu1 = mu_os(n, p, 0.05).unwrap();
    let reps = 4000;
    let mu = vec![mu1; p];
    let semi = oracle_power(n, &mu, p, n, alpha, reps, &mut substream(202, 0), None).unwrap();
    let sim = estimate(&Scenario {
        n,
        p,
        mu_value: mu1,
        prop_false: 1.0,
        alpha,
        method: Method::subgroup(Strategy::SylvesterOracle, n),
        reps,
        seed: 203,
    })
    .unwrap();
    assert!(semi.value > 0.05 && semi.value < 0.95);
    assert!(
        within(semi.value, semi.se, sim.power, sim.se_power, 3.0),
        "{semi:?} vs {}",
        sim.power
    );
}

#[test]
fn oracle_power_with_partial_signal_matches_simulation() {
    let (n, p, alpha) = (32, 40, 0.0625);
    let k = 10;
    let mu1 = 0.8;
    let reps = 3000;
    let mut mu = vec![0.0; p];
    mu[..k].iter_mut().for_each(|m| *m = mu1);
    let semi = oracle_power(n, &mu, k, n, alpha, reps, &mut substream(204, 0), None).unwrap();
    let sim = estimate(&Scenario {
        n,
        p,
        mu_value: mu1,
        prop_false: k as f64 / p as f64,
        alpha,
        method: Method::subgroup(Strategy::SylvesterOracle, n),
        reps,
        seed: 205,
    })
    .unwrap();
    assert!(
        within(semi.value, semi.se, sim.power, sim.se_power, 3.0),
        "{semi:?} vs {}",
        sim.power
    );
}

#[test]
fn correlated_noise_is_supported() {
    let p = 3;
    let rho: f64 = 0.5;
    let lower = vec![
        1.0,
        0.0,
        0.0,
        rho,
        (1.0 - rho * rho).sqrt(),
        0.0,
        0.0,
        0.0,
        1.0,
    ];
    let factor = CholeskyFactor::new(p, lower).unwrap();
    let mu = vec![0.7, 0.0, 0.0];
    let est = oracle_power(
        16,
        &mu,
        1,
        16,
        0.125,
        2000,
        &mut substream(206, 0),
        Some(&factor),
    )
    .unwrap();
    assert!(est.value > 0.0 && est.value < 1.0);
}

#[test]
fn full_group_approximation_at_mu_h_is_near_half() {
    let (n, p, alpha) = (32, 1000, 0.05);
    let mu1 = mu_h(n, p, alpha).unwrap();
    let est = fullgroup_power_approx(
        n,
        p,
        mu1,
        alpha,
        4000,
        &mut substream(207, 0),
        LeakMode::GaussianLeak,
    )
    .unwrap();
    assert!((est.value - 0.5).abs() < 0.1, "{est:?}");
}

#[test]
fn full_group_approximation_tracks_monte_carlo_maxt() {
    let (n, p, alpha) = (32, 200, 0.05);
    let mu1 = 0.7;
    let approx = fullgroup_power_approx(
        n,
        p,
        mu1,
        alpha,
        4000,
        &mut substream(208, 0),
        LeakMode::SphereLeak,
    )
    .unwrap();
    let sim = estimate(&Scenario {
        n,
        p,
        mu_value: mu1,
        prop_false: 1.0,
        alpha,
        method: Method::monte_carlo(1000),
        reps: 300,
        seed: 209,
    })
    .unwrap();
    assert!(
        (approx.value - sim.power).abs() < 0.05,
        "{} vs {}",
        approx.value,
        sim.power
    );
}
