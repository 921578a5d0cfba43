//! Power and FWER estimation in the Gaussian location model, and the
//! experiment grids behind the published power curves.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionSpec, Strategy, DEFAULT_POOL_SIZE};
use crate::data::generate_data;
use crate::error::{Error, Result};
use crate::group::UnitVector;
use crate::invariance::{maxt, ReferenceSet};
use crate::power::{mu_h, mu_os};
use crate::rng::{repetition_stream, substream, CONSTRUCTION_STREAM};
use crate::Estimate;

/// How the reference set of the maxT method is formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// A fixed subgroup, built once per scenario.
    ExactSubgroup {
        strategy: Strategy,
        size: usize,
        #[serde(default = "default_pool_size")]
        pool_size: usize,
    },
    /// Identity plus `draws - 1` uniform sign-flips, redrawn every repetition.
    MonteCarlo { draws: usize },
}

fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}

impl Method {
    pub fn subgroup(strategy: Strategy, size: usize) -> Self {
        Method::ExactSubgroup {
            strategy,
            size,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }

    pub fn monte_carlo(draws: usize) -> Self {
        Method::MonteCarlo { draws }
    }

    /// Short label such as `oracle-32` or `mc-1000`.
    pub fn label(&self) -> String {
        match self {
            Method::ExactSubgroup { strategy, size, .. } => {
                let name = match strategy {
                    Strategy::SylvesterOracle => "oracle",
                    Strategy::NonPositive => "nonpositive",
                    Strategy::NestedChain => "nested",
                    Strategy::GreedyExtend => "greedy",
                };
                format!("{name}-{size}")
            }
            Method::MonteCarlo { draws } => format!("mc-{draws}"),
        }
    }
}

/// One experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub mu_value: f64,
    /// Fraction of false hypotheses; `round(prop_false * p)` get mean `mu_value`.
    #[serde(default = "default_prop_false")]
    pub prop_false: f64,
    pub alpha: f64,
    pub method: Method,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_prop_false() -> f64 {
    1.0
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.reps == 0 {
            return Err(Error::invalid("n, p and reps must be positive"));
        }
        if !(self.mu_value >= 0.0 && self.mu_value.is_finite()) {
            return Err(Error::invalid(format!(
                "mu_value must be finite and >= 0, got {}",
                self.mu_value
            )));
        }
        if !(0.0..=1.0).contains(&self.prop_false) {
            return Err(Error::invalid(format!(
                "prop_false must lie in [0, 1], got {}",
                self.prop_false
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Method::MonteCarlo { draws: 0 } = self.method {
            return Err(Error::invalid("Monte Carlo method needs at least one draw"));
        }
        Ok(())
    }

    /// Number of false hypotheses.
    pub fn false_count(&self) -> usize {
        ((self.prop_false * self.p as f64).round() as usize).min(self.p)
    }

    pub fn means(&self) -> Vec<f64> {
        let k = self.false_count();
        (0..self.p)
            .map(|j| if j < k { self.mu_value } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerResult {
    /// Mean over repetitions of (correct rejections) / k; zero when k = 0.
    pub power: f64,
    /// Fraction of repetitions with at least one false rejection.
    pub fwer: f64,
    pub se_power: f64,
    pub se_fwer: f64,
    pub runtime_s: f64,
    pub scenario: Scenario,
}

impl PowerResult {
    pub fn power_estimate(&self) -> Estimate {
        Estimate {
            value: self.power,
            se: self.se_power,
        }
    }

    pub fn fwer_estimate(&self) -> Estimate {
        Estimate {
            value: self.fwer,
            se: self.se_fwer,
        }
    }
}

/// Runs `scenario.reps` independent repetitions of data generation and maxT.
///
/// Repetition `r` draws its data (and Monte Carlo elements) from stream `r` of
/// the scenario seed, so every method sees the same datasets and the result
/// does not depend on the number of worker threads.
pub fn estimate(scenario: &Scenario) -> Result<PowerResult> {
    scenario.validate()?;
    let start = Instant::now();
    let n = scenario.n;
    let k = scenario.false_count();
    let mu = scenario.means();
    let iota = UnitVector::canonical(n);

    let fixed_reference = match &scenario.method {
        Method::ExactSubgroup {
            strategy,
            size,
            pool_size,
        } => {
            let spec = ConstructionSpec {
                n,
                target_size: *size,
                strategy: *strategy,
                pool_size: *pool_size,
            };
            let group = spec.build(&mut substream(scenario.seed, CONSTRUCTION_STREAM))?;
            Some(ReferenceSet::exact(&group))
        }
        Method::MonteCarlo { .. } => None,
    };

    let tallies = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| -> Result<(usize, usize)> {
            let mut rng = repetition_stream(scenario.seed, rep);
            let x = generate_data(n, &mu, &mut rng)?;
            let fresh;
            let reference = match (&fixed_reference, &scenario.method) {
                (Some(r), _) => r,
                (None, Method::MonteCarlo { draws }) => {
                    fresh = ReferenceSet::monte_carlo(n, *draws, &mut rng)?;
                    &fresh
                }
                (None, Method::ExactSubgroup { .. }) => {
                    unreachable!("exact reference is built up front")
                }
            };
            let outcome = maxt(&x, iota.as_slice(), reference, scenario.alpha)?;
            let correct = outcome.rejected[..k].iter().filter(|&&r| r).count();
            let false_rejections = outcome.rejected[k..].iter().filter(|&&r| r).count();
            Ok((correct, false_rejections))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_rep_power: Vec<f64> = tallies
        .iter()
        .map(|&(correct, _)| {
            if k == 0 {
                0.0
            } else {
                correct as f64 / k as f64
            }
        })
        .collect();
    let power = Estimate::from_samples(&per_rep_power);
    let fwer = Estimate::from_proportion(tallies.iter().filter(|t| t.1 > 0).count(), scenario.reps);
    Ok(PowerResult {
        power: power.value,
        fwer: fwer.value,
        se_power: power.se,
        se_fwer: fwer.se,
        runtime_s: start.elapsed().as_secs_f64(),
        scenario: scenario.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Repetition counts and dimensions as in the original figure captions.
    Full,
    /// Repetitions divided by ten and `p` capped at 2000.
    Desk,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::invalid(format!(
                "unknown scale {other:?}, expected full or desk"
            ))),
        }
    }
}

const DESK_P_CAP: usize = 2000;

/// One point of a figure grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FigurePoint {
    pub figure: u8,
    pub panel: &'static str,
    pub curve: String,
    pub x: f64,
    pub scenario: Scenario,
}

/// One output row of a reproduced figure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub figure: u8,
    pub panel: String,
    pub curve: String,
    pub x: f64,
    pub power: f64,
    pub se: f64,
    pub fwer: f64,
    pub se_fwer: f64,
    pub runtime_s: f64,
    pub seed: u64,
}

pub const FIGURE_CSV_HEADER: &str = "figure,panel,curve,x,power,se,fwer,se_fwer,runtime_s,seed";

fn scaled_reps(full: usize, scale: Scale) -> usize {
    match scale {
        Scale::Full => full,
        Scale::Desk => full / 10,
    }
}

fn scaled_p(full: usize, scale: Scale) -> usize {
    match scale {
        Scale::Full => full,
        Scale::Desk => full.min(DESK_P_CAP),
    }
}

/// Sizes `2, 4, ..., 1024` on the horizontal axis of the first figure.
pub const FIGURE1_SIZES: [usize; 10] = [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024];

/// The grid of scenarios behind figure `id` (1 to 4).
///
/// * 1: `n = 32`, `alpha = 1/16`; left `p = 1, mu = .3`, right `p = 1000,
///   mu = .7`; nested subgroups against Monte Carlo draws of the same size.
/// * 2: `n = 32`, `alpha = .05`, varying `p`; Monte Carlo 1000, oracle 32 and
///   non-positive 64 at signal `mu_h` (left) and `mu_os` (right).
/// * 3: `p = 10000`, varying `n` at signal `mu_os`; subgroup sizes fixed at
///   32/64 (left) or scaling as `n`/`2n` (right).
/// * 4: `p = 10000`, varying proportion of false hypotheses at `mu_os`;
///   `n = 32` (left) and `n = 64` (right).
pub fn figure_plan(id: u8, scale: Scale, seed: u64) -> Result<Vec<FigurePoint>> {
    let mut points = Vec::new();
    let mut push = |figure: u8, panel: &'static str, x: f64, scenario: Scenario| {
        points.push(FigurePoint {
            figure,
            panel,
            curve: scenario
                .method
                .label()
                .split('-')
                .next()
                .unwrap_or_default()
                .to_string(),
            x,
            scenario,
        });
    };
    match id {
        1 => {
            let reps = scaled_reps(10_000, scale);
            let alpha = 1.0 / 16.0;
            for (panel, p, mu) in [("left", 1usize, 0.3), ("right", scaled_p(1000, scale), 0.7)] {
                for &size in &FIGURE1_SIZES {
                    for method in [
                        Method::subgroup(Strategy::NestedChain, size),
                        Method::monte_carlo(size),
                    ] {
                        push(
                            1,
                            panel,
                            size as f64,
                            Scenario {
                                n: 32,
                                p,
                                mu_value: mu,
                                prop_false: 1.0,
                                alpha,
                                method,
                                reps,
                                seed,
                            },
                        );
                    }
                }
            }
        }
        2 => {
            let n = 32;
            let alpha = 0.05;
            let reps = scaled_reps(1000, scale);
            let mut ps: Vec<usize> = [10usize, 100, 1000, 10_000]
                .iter()
                .map(|&p| scaled_p(p, scale))
                .collect();
            ps.dedup();
            for panel in ["left", "right"] {
                for &p in &ps {
                    let mu = if panel == "left" {
                        mu_h(n, p, alpha)?
                    } else {
                        mu_os(n, p, alpha)?
                    };
                    for method in [
                        Method::monte_carlo(1000),
                        Method::subgroup(Strategy::SylvesterOracle, 32),
                        Method::subgroup(Strategy::NonPositive, 64),
                    ] {
                        push(
                            2,
                            panel,
                            p as f64,
                            Scenario {
                                n,
                                p,
                                mu_value: mu,
                                prop_false: 1.0,
                                alpha,
                                method,
                                reps,
                                seed,
                            },
                        );
                    }
                }
            }
        }
        3 => {
            let p = scaled_p(10_000, scale);
            let alpha = 0.05;
            let reps = scaled_reps(1000, scale);
            for (panel, ns) in [
                ("left", &[32usize, 64, 128][..]),
                ("right", &[16usize, 32, 64, 128][..]),
            ] {
                for &n in ns {
                    let (oracle, nonpositive) = if panel == "left" {
                        (32, 64)
                    } else {
                        (n, 2 * n)
                    };
                    let mu = mu_os(n, p, alpha)?;
                    for method in [
                        Method::monte_carlo(1000),
                        Method::subgroup(Strategy::SylvesterOracle, oracle),
                        Method::subgroup(Strategy::NonPositive, nonpositive),
                    ] {
                        push(
                            3,
                            panel,
                            n as f64,
                            Scenario {
                                n,
                                p,
                                mu_value: mu,
                                prop_false: 1.0,
                                alpha,
                                method,
                                reps,
                                seed,
                            },
                        );
                    }
                }
            }
        }
        4 => {
            let p = scaled_p(10_000, scale);
            let alpha = 0.05;
            let reps = scaled_reps(1000, scale);
            for (panel, n) in [("left", 32usize), ("right", 64usize)] {
                let mu = mu_os(n, p, alpha)?;
                for &prop in &[0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0] {
                    for method in [
                        Method::monte_carlo(1000),
                        Method::subgroup(Strategy::SylvesterOracle, n),
                        Method::subgroup(Strategy::NonPositive, 2 * n),
                    ] {
                        push(
                            4,
                            panel,
                            prop,
                            Scenario {
                                n,
                                p,
                                mu_value: mu,
                                prop_false: prop,
                                alpha,
                                method,
                                reps,
                                seed,
                            },
                        );
                    }
                }
            }
        }
        other => {
            return Err(Error::invalid(format!(
                "unknown figure id {other}, expected 1 to 4"
            )))
        }
    }
    Ok(points)
}

/// Runs every point of [`figure_plan`], calling `progress` after each row.
pub fn reproduce_figure_with(
    id: u8,
    scale: Scale,
    seed: u64,
    mut progress: impl FnMut(&FigureRow),
) -> Result<Vec<FigureRow>> {
    let plan = figure_plan(id, scale, seed)?;
    let mut rows = Vec::with_capacity(plan.len());
    for point in plan {
        let result = estimate(&point.scenario)?;
        let row = FigureRow {
            figure: point.figure,
            panel: point.panel.to_string(),
            curve: point.curve,
            x: point.x,
            power: result.power,
            se: result.se_power,
            fwer: result.fwer,
            se_fwer: result.se_fwer,
            runtime_s: result.runtime_s,
            seed,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn reproduce_figure(id: u8, scale: Scale, seed: u64) -> Result<Vec<FigureRow>> {
    reproduce_figure_with(id, scale, seed, |_| {})
}

/// Formats a number with six significant digits, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&exponent) {
        let s = format!("{x:.5e}");
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        return format!("{mantissa}e{exp}");
    }
    let decimals = (5 - exponent).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Renders rows as CSV under [`FIGURE_CSV_HEADER`]. With `with_runtime` false
/// the runtime column is written as `0` so repeated runs are byte-identical.
pub fn figure_csv(rows: &[FigureRow], with_runtime: bool) -> String {
    let mut out = String::from(FIGURE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let runtime = if with_runtime {
            format_sig6(r.runtime_s)
        } else {
            "0".to_string()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.figure,
            r.panel,
            r.curve,
            format_sig6(r.x),
            format_sig6(r.power),
            format_sig6(r.se),
            format_sig6(r.fwer),
            format_sig6(r.se_fwer),
            runtime,
            r.seed
        );
    }
    out
}
