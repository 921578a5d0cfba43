//! Construction of oracle, non-positive, nested and greedy sign-flip subgroups.

use std::collections::HashSet;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{
    assume_subgroup, leak_unchecked, sample_uniform_signflip, SignFlipElement, Subgroup,
    SubgroupClass, UnitVector,
};

/// Default number of random candidate generators examined per doubling.
pub const DEFAULT_POOL_SIZE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Leading rows of the Sylvester–Hadamard matrix; sizes up to `n`.
    SylvesterOracle,
    /// An oracle subgroup together with its negation; sizes up to `2n`.
    NonPositive,
    /// Sylvester prefixes, then the non-positive doubling, then greedy doublings.
    NestedChain,
    /// Greedy doublings starting from the trivial group.
    GreedyExtend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSpec {
    pub n: usize,
    pub target_size: usize,
    pub strategy: Strategy,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
}

fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}

impl ConstructionSpec {
    pub fn new(n: usize, target_size: usize, strategy: Strategy) -> Self {
        ConstructionSpec {
            n,
            target_size,
            strategy,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.target_size == 0 {
            return Err(Error::invalid("target_size must be at least 1"));
        }
        if self.pool_size == 0 {
            return Err(Error::invalid("pool_size must be at least 1"));
        }
        match self.strategy {
            Strategy::SylvesterOracle if self.target_size > self.n => Err(Error::UnsupportedSize {
                size: self.target_size,
                reason: format!("oracle subgroups have at most n = {} elements", self.n),
            }),
            Strategy::NonPositive if self.target_size > 2 * self.n => Err(Error::UnsupportedSize {
                size: self.target_size,
                reason: format!(
                    "non-positive subgroups have at most 2n = {} elements",
                    2 * self.n
                ),
            }),
            _ => Ok(()),
        }
    }

    /// Builds the subgroup under the canonical `iota`. Only the greedy steps
    /// consume randomness.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Subgroup> {
        self.validate()?;
        let iota = UnitVector::canonical(self.n);
        require_power_of_two(self.target_size, "target_size")?;
        match self.strategy {
            Strategy::SylvesterOracle => sylvester_subgroup(self.n, self.target_size),
            Strategy::NonPositive => {
                if self.target_size == 1 {
                    return sylvester_subgroup(self.n, 1);
                }
                nonpositive_from_oracle(&sylvester_subgroup(self.n, self.target_size / 2)?)
            }
            Strategy::NestedChain => {
                let mut chain =
                    nested_chain_with_pool(self.n, &[self.target_size], rng, self.pool_size)?;
                Ok(chain.pop().expect("one size requested"))
            }
            Strategy::GreedyExtend => {
                let trivial = assume_subgroup(vec![SignFlipElement::identity(self.n)], &iota);
                greedy_extend(&trivial, self.target_size, &iota, rng, self.pool_size)
            }
        }
    }
}

fn require_power_of_two(value: usize, what: &str) -> Result<()> {
    if value.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::UnsupportedSize {
            size: value,
            reason: format!("{what} must be a power of two"),
        })
    }
}

/// Row `r` of the Sylvester–Hadamard matrix of order `n`: the sign at column
/// `c` is `(-1)^{popcount(r & c)}`.
fn sylvester_row(n: usize, r: usize) -> SignFlipElement {
    SignFlipElement::from_negative_flags((0..n).map(|c| (r & c).count_ones() % 2 == 1))
}

/// The `n` rows of `H_n` as an oracle subgroup; `n` must be `2^k`, `k >= 1`.
pub fn sylvester_oracle(n: usize) -> Result<Subgroup> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize {
            size: n,
            reason:
                "Sylvester construction needs n = 2^k with k >= 1; use the greedy_extend strategy"
                    .into(),
        });
    }
    sylvester_subgroup(n, n)
}

/// The first `size` rows of `H_n`. Rows `0..2^d` are closed under the
/// entrywise product because row `r` times row `s` is row `r xor s`.
pub fn sylvester_subgroup(n: usize, size: usize) -> Result<Subgroup> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize {
            size: n,
            reason:
                "Sylvester construction needs n = 2^k with k >= 1; use the greedy_extend strategy"
                    .into(),
        });
    }
    require_power_of_two(size, "subgroup size")?;
    if size > n {
        return Err(Error::UnsupportedSize {
            size,
            reason: format!("oracle subgroups have at most n = {n} elements"),
        });
    }
    let elements = (0..size).map(|r| sylvester_row(n, r)).collect();
    Ok(assume_subgroup(elements, &UnitVector::canonical(n)))
}

/// `S ∪ (-S)` for an oracle subgroup `S`.
pub fn nonpositive_from_oracle(oracle: &Subgroup) -> Result<Subgroup> {
    if oracle.class() != SubgroupClass::Oracle {
        return Err(Error::invalid(format!(
            "nonpositive_from_oracle expects an Oracle subgroup, got {}",
            oracle.class()
        )));
    }
    let mut elements = oracle.elements().to_vec();
    elements.extend(oracle.elements().iter().map(SignFlipElement::negate));
    Ok(assume_subgroup(
        elements,
        &UnitVector::canonical(oracle.n()),
    ))
}

/// Nested subgroups of the requested sizes, each containing all earlier ones.
///
/// Sizes up to `n` are Sylvester prefixes, `2n` is the non-positive doubling
/// of `H_n`, and larger sizes are reached by greedy doublings drawn from `rng`.
/// The greedy path does not depend on the largest size requested, so chains
/// built from the same stream share their prefixes.
pub fn nested_chain<R: Rng + ?Sized>(
    n: usize,
    sizes: &[usize],
    rng: &mut R,
) -> Result<Vec<Subgroup>> {
    nested_chain_with_pool(n, sizes, rng, DEFAULT_POOL_SIZE)
}

pub fn nested_chain_with_pool<R: Rng + ?Sized>(
    n: usize,
    sizes: &[usize],
    rng: &mut R,
    pool_size: usize,
) -> Result<Vec<Subgroup>> {
    for pair in sizes.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::invalid(format!(
                "sizes must be strictly ascending, got {sizes:?}"
            )));
        }
    }
    for &size in sizes {
        require_power_of_two(size, "chain size")?;
    }
    let Some(&largest) = sizes.last() else {
        return Ok(Vec::new());
    };
    let iota = UnitVector::canonical(n);
    let oracle = sylvester_oracle(n)?;

    let mut out = Vec::with_capacity(sizes.len());
    let mut wanted = sizes.iter().peekable();
    let mut size = 1;
    let mut current = sylvester_subgroup(n, 1)?;
    loop {
        if wanted.peek() == Some(&&size) {
            out.push(current.clone());
            wanted.next();
        }
        if size >= largest {
            break;
        }
        size *= 2;
        current = if size <= n {
            sylvester_subgroup(n, size)?
        } else if size == 2 * n {
            nonpositive_from_oracle(&oracle)?
        } else {
            greedy_extend(&current, size, &iota, rng, pool_size)?
        };
    }
    Ok(out)
}

/// A random vector with `floor(n/2)` negative entries.
fn balanced_candidate<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SignFlipElement {
    let mut flags = vec![false; n];
    for i in sample_indices(rng, n, n / 2) {
        flags[i] = true;
    }
    SignFlipElement::from_negative_flags(flags)
}

/// Largest leak in the coset `g S`.
fn coset_max_leak(g: &SignFlipElement, group: &Subgroup, iota: &UnitVector) -> f64 {
    group
        .elements()
        .iter()
        .map(|s| leak_unchecked(&g.compose_unchecked(s), iota))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Doubles `group` repeatedly until it has `target_size` elements. Each
/// doubling adds the candidate generator, from a pool of `pool_size` random
/// balanced vectors, whose coset has the smallest maximal leak. Ties go to the
/// earliest candidate in the pool.
pub fn greedy_extend<R: Rng + ?Sized>(
    group: &Subgroup,
    target_size: usize,
    iota: &UnitVector,
    rng: &mut R,
    pool_size: usize,
) -> Result<Subgroup> {
    let n = group.n();
    crate::error::check_dim(n, iota.len())?;
    if n < usize::BITS as usize && target_size > (1usize << n) {
        return Err(Error::ImpossibleSize {
            size: target_size,
            n,
        });
    }
    if target_size < group.len()
        || !target_size.is_multiple_of(group.len())
        || !(target_size / group.len()).is_power_of_two()
    {
        return Err(Error::invalid(format!(
            "target size {target_size} is not a power-of-two multiple of the current size {}",
            group.len()
        )));
    }
    if pool_size == 0 {
        return Err(Error::invalid("pool_size must be at least 1"));
    }

    let mut current = group.clone();
    while current.len() < target_size {
        let members: HashSet<&SignFlipElement> = current.elements().iter().collect();
        let pool: Vec<SignFlipElement> =
            (0..pool_size).map(|_| balanced_candidate(n, rng)).collect();
        let best = pool
            .par_iter()
            .enumerate()
            .filter(|(_, g)| !members.contains(g))
            .map(|(idx, g)| (coset_max_leak(g, &current, iota), idx))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let generator = match best {
            Some((_, idx)) => pool[idx].clone(),
            // Every candidate was already a member; fall back to uniform draws,
            // at least half of which lie outside a proper subgroup.
            None => loop {
                let g = sample_uniform_signflip(n, rng);
                if !members.contains(&g) {
                    break g;
                }
            },
        };
        drop(members);
        let mut elements = current.elements().to_vec();
        elements.extend(
            current
                .elements()
                .iter()
                .map(|s| generator.compose_unchecked(s)),
        );
        current = assume_subgroup(elements, iota);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{classify, leak};
    use crate::rng::substream;

    fn strs(g: &Subgroup) -> Vec<String> {
        g.elements().iter().map(|e| e.to_string()).collect()
    }

    #[test]
    fn sylvester_small_orders() {
        assert_eq!(strs(&sylvester_oracle(2).unwrap()), ["++", "+-"]);
        let h4 = sylvester_oracle(4).unwrap();
        assert_eq!(strs(&h4), ["++++", "+-+-", "++--", "+--+"]);
        assert_eq!(h4.class(), SubgroupClass::Oracle);
        // exhaustive closure over the 16 products
        let reclassified = classify(h4.elements().to_vec(), &UnitVector::canonical(4)).unwrap();
        assert_eq!(reclassified, h4);
    }

    #[test]
    fn sylvester_rejects_non_powers() {
        for n in [0, 1, 3, 6, 12, 33] {
            assert!(
                matches!(sylvester_oracle(n), Err(Error::UnsupportedSize { .. })),
                "n={n}"
            );
        }
        let msg = sylvester_oracle(12).unwrap_err().to_string();
        assert!(msg.contains("greedy_extend"), "{msg}");
    }

    #[test]
    fn sylvester_32_is_oracle_of_size_32() {
        let s = sylvester_oracle(32).unwrap();
        assert_eq!(s.len(), 32);
        assert_eq!(s.class(), SubgroupClass::Oracle);
        assert_eq!(s.leaks()[0], 1.0);
        assert!(s.leaks()[1..].iter().all(|&l| l == 0.0));
        assert!(s.elements()[1..].iter().all(|e| e.negative_count() == 16));
    }

    #[test]
    fn nonpositive_examples() {
        let trivial = sylvester_subgroup(8, 1).unwrap();
        let pm = nonpositive_from_oracle(&trivial).unwrap();
        assert_eq!(pm.len(), 2);
        assert_eq!(pm.class(), SubgroupClass::NonPositive);

        let np8 = nonpositive_from_oracle(&sylvester_oracle(4).unwrap()).unwrap();
        assert_eq!(np8.len(), 8);
        assert_eq!(np8.max_leak(), 0.0);
        assert_eq!(
            np8.leaks()[1..]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
            -1.0
        );

        let np64 = nonpositive_from_oracle(&sylvester_oracle(32).unwrap()).unwrap();
        assert_eq!(np64.len(), 64);
        assert_eq!(np64.class(), SubgroupClass::NonPositive);
        assert_eq!(np64.leaks().iter().filter(|&&l| l == -1.0).count(), 1);
        assert_eq!(np64.leaks().iter().filter(|&&l| l == 1.0).count(), 1);
        assert_eq!(np64.leaks().iter().filter(|&&l| l == 0.0).count(), 62);
    }

    #[test]
    fn nonpositive_rejects_general_input() {
        let iota = UnitVector::canonical(4);
        let general = classify(
            vec!["++++".parse().unwrap(), "+++-".parse().unwrap()],
            &iota,
        )
        .unwrap();
        assert!(matches!(
            nonpositive_from_oracle(&general),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn nested_chain_small() {
        let chain = nested_chain(4, &[1, 2, 4], &mut substream(0, 0)).unwrap();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain[2], sylvester_oracle(4).unwrap());
        for pair in chain.windows(2) {
            assert!(pair[0].elements().iter().all(|e| pair[1].contains(e)));
        }
    }

    #[test]
    fn nested_chain_rejects_bad_sizes() {
        let mut rng = substream(0, 0);
        assert!(nested_chain(4, &[4, 2], &mut rng).is_err());
        assert!(nested_chain(4, &[2, 2], &mut rng).is_err());
        assert!(nested_chain(4, &[3], &mut rng).is_err());
    }

    #[test]
    fn nested_chain_prefixes_agree_across_targets() {
        let short = nested_chain(8, &[64], &mut substream(4, 0)).unwrap();
        let long = nested_chain(8, &[64, 128], &mut substream(4, 0)).unwrap();
        assert_eq!(short[0], long[0]);
    }

    #[test]
    fn greedy_noop_and_errors() {
        let iota = UnitVector::canonical(4);
        let h4 = sylvester_oracle(4).unwrap();
        let mut rng = substream(1, 0);
        assert_eq!(greedy_extend(&h4, 4, &iota, &mut rng, 16).unwrap(), h4);
        assert!(matches!(
            greedy_extend(&h4, 32, &iota, &mut rng, 16),
            Err(Error::ImpossibleSize { size: 32, n: 4 })
        ));
        assert!(greedy_extend(&h4, 12, &iota, &mut rng, 16).is_err());
        assert!(greedy_extend(&h4, 2, &iota, &mut rng, 16).is_err());
    }

    #[test]
    fn greedy_can_fill_the_whole_group() {
        let iota = UnitVector::canonical(4);
        let h4 = sylvester_oracle(4).unwrap();
        let full = greedy_extend(&h4, 16, &iota, &mut substream(2, 0), 8).unwrap();
        assert_eq!(full.len(), 16);
        classify(full.elements().to_vec(), &iota).unwrap();
    }

    #[test]
    fn greedy_beyond_2n_is_general_with_monotone_leak() {
        let n = 32;
        let iota = UnitVector::canonical(n);
        let np = nonpositive_from_oracle(&sylvester_oracle(n).unwrap()).unwrap();
        let mut rng = substream(3, 0);
        let mut current = np;
        let mut last = current.max_leak();
        while current.len() < 1024 {
            current = greedy_extend(
                &current,
                current.len() * 2,
                &iota,
                &mut rng,
                DEFAULT_POOL_SIZE,
            )
            .unwrap();
            assert!(current.max_leak() >= last);
            last = current.max_leak();
        }
        assert_eq!(current.class(), SubgroupClass::General);
        assert!(current.max_leak() > 0.0);
        classify(current.elements().to_vec(), &iota).unwrap();
    }

    #[test]
    fn greedy_beats_random_generator_median() {
        let n = 16;
        let iota = UnitVector::canonical(n);
        let start = nonpositive_from_oracle(&sylvester_oracle(n).unwrap()).unwrap();
        let greedy =
            greedy_extend(&start, 64, &iota, &mut substream(9, 0), DEFAULT_POOL_SIZE).unwrap();

        let mut rng = substream(9, 1);
        let mut baselines: Vec<f64> = (0..20)
            .map(|_| {
                let g = loop {
                    let g = sample_uniform_signflip(n, &mut rng);
                    if !start.contains(&g) {
                        break g;
                    }
                };
                let mut els = start.elements().to_vec();
                els.extend(start.elements().iter().map(|s| g.compose(s).unwrap()));
                els.iter()
                    .skip(1)
                    .map(|e| leak(e, &iota).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        baselines.sort_by(f64::total_cmp);
        let median = 0.5 * (baselines[9] + baselines[10]);
        assert!(
            greedy.max_leak() <= median,
            "greedy {} vs median {median}",
            greedy.max_leak()
        );
    }

    #[test]
    fn build_from_spec() {
        let mut rng = substream(0, 0);
        let spec = ConstructionSpec::new(32, 64, Strategy::NonPositive);
        assert_eq!(
            spec.build(&mut rng).unwrap().class(),
            SubgroupClass::NonPositive
        );
        let bad = ConstructionSpec::new(32, 64, Strategy::SylvesterOracle);
        assert!(bad.build(&mut rng).is_err());
        let greedy = ConstructionSpec::new(12, 8, Strategy::GreedyExtend);
        let g = greedy.build(&mut rng).unwrap();
        assert_eq!(g.len(), 8);
        classify(g.elements().to_vec(), &UnitVector::canonical(12)).unwrap();
    }
}
