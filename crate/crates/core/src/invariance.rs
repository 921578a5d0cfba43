//! Sign-flip invariance tests: the single-hypothesis test and the single-step
//! Westfall–Young maxT procedure.
//!
//! The statistic for column `j` is `t_j = iota' X_j`. For each reference
//! element `S_g` the maxT method records `m_g = max_j iota' (S_g X)_j` and
//! reports `p_j = #{g : m_g >= t_j} / M`. Ties count against rejection.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{check_dim, Error, Result};
use crate::group::{
    leak_unchecked, sample_uniform_signflip, SignFlipElement, Subgroup, UnitVector,
};
use crate::Estimate;

const COLUMN_BLOCK: usize = 256;
const ELEMENT_BLOCK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    ExactSubgroup,
    MonteCarlo,
}

/// The transformations defining a reference distribution, identity first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    kind: ReferenceKind,
    elements: Vec<SignFlipElement>,
}

impl ReferenceSet {
    pub fn exact(group: &Subgroup) -> Self {
        ReferenceSet {
            kind: ReferenceKind::ExactSubgroup,
            elements: group.elements().to_vec(),
        }
    }

    /// The identity followed by `count - 1` independent uniform sign-flips.
    pub fn monte_carlo<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if count == 0 {
            return Err(Error::invalid(
                "a Monte Carlo reference set needs at least the identity",
            ));
        }
        let mut elements = Vec::with_capacity(count);
        elements.push(SignFlipElement::identity(n));
        elements.extend((1..count).map(|_| sample_uniform_signflip(n, rng)));
        Ok(ReferenceSet {
            kind: ReferenceKind::MonteCarlo,
            elements,
        })
    }

    /// A Monte Carlo reference set from given draws; the identity is prepended.
    pub fn monte_carlo_from_draws(draws: Vec<SignFlipElement>) -> Result<Self> {
        let n = draws
            .first()
            .map(SignFlipElement::len)
            .ok_or_else(|| Error::invalid("no draws given"))?;
        for d in &draws {
            check_dim(n, d.len())?;
        }
        let mut elements = Vec::with_capacity(draws.len() + 1);
        elements.push(SignFlipElement::identity(n));
        elements.extend(draws);
        Ok(ReferenceSet {
            kind: ReferenceKind::MonteCarlo,
            elements,
        })
    }

    pub fn kind(&self) -> ReferenceKind {
        self.kind
    }

    pub fn elements(&self) -> &[SignFlipElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn n(&self) -> usize {
        self.elements[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    /// `t_j = iota' X_j`.
    pub statistics: Vec<f64>,
    /// `m_g = max_j iota' (S_g X)_j`, in reference-set order.
    pub max_reference: Vec<f64>,
    pub p_values: Vec<f64>,
    pub rejected: Vec<bool>,
    pub alpha: f64,
}

impl TestOutcome {
    pub fn rejection_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }

    /// The critical value `c` such that `t_j` is rejected iff `t_j > c`: the
    /// `(M - c*)`-th smallest `m_g`, where `c*` is the largest exceedance count
    /// with `c*/M <= alpha`. Infinite when no rejection is possible.
    pub fn critical_value(&self) -> f64 {
        let m = self.max_reference.len();
        let allowed = max_exceedances(m, self.alpha);
        if allowed == 0 {
            return f64::INFINITY;
        }
        let mut sorted = self.max_reference.clone();
        sorted.sort_by(f64::total_cmp);
        sorted[m - allowed - 1]
    }
}

/// Largest `c` with `c / m <= alpha`, using the same comparison as the p-value rule.
pub fn max_exceedances(m: usize, alpha: f64) -> usize {
    let mut c = ((alpha * m as f64).floor().max(0.0) as usize).min(m);
    while c < m && ((c + 1) as f64 / m as f64) <= alpha {
        c += 1;
    }
    while c > 0 && (c as f64 / m as f64) > alpha {
        c -= 1;
    }
    c
}

fn weighted_rows(x: &DataMatrix, iota: &[f64]) -> Vec<f64> {
    let p = x.cols();
    let mut w = Vec::with_capacity(x.rows() * p);
    for (i, &v) in iota.iter().enumerate() {
        w.extend(x.row(i).iter().map(|&xij| v * xij));
    }
    w
}

/// `acc[c] = sum_i s_i w[i, offset + c]`, summed in row order from zero.
#[inline]
fn signed_sums(
    w: &[f64],
    n: usize,
    p: usize,
    element: &SignFlipElement,
    offset: usize,
    acc: &mut [f64],
) {
    acc.fill(0.0);
    let width = acc.len();
    for i in 0..n {
        let row = &w[i * p + offset..i * p + offset + width];
        if element.is_negative(i) {
            for (a, r) in acc.iter_mut().zip(row) {
                *a -= r;
            }
        } else {
            for (a, r) in acc.iter_mut().zip(row) {
                *a += r;
            }
        }
    }
}

fn column_statistics(w: &[f64], n: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p];
    signed_sums(w, n, p, &SignFlipElement::identity(n), 0, &mut out);
    out
}

fn block_maxima(w: &[f64], n: usize, p: usize, block: &[SignFlipElement]) -> Vec<f64> {
    let mut maxima = vec![f64::NEG_INFINITY; block.len()];
    let mut acc = [0.0f64; COLUMN_BLOCK];
    for offset in (0..p).step_by(COLUMN_BLOCK) {
        let width = COLUMN_BLOCK.min(p - offset);
        let acc = &mut acc[..width];
        for (max, el) in maxima.iter_mut().zip(block) {
            signed_sums(w, n, p, el, offset, acc);
            *max = acc.iter().fold(*max, |m, &v| m.max(v));
        }
    }
    maxima
}

fn reference_maxima(w: &[f64], n: usize, p: usize, elements: &[SignFlipElement]) -> Vec<f64> {
    elements
        .par_chunks(ELEMENT_BLOCK)
        .map(|block| block_maxima(w, n, p, block))
        .collect::<Vec<_>>()
        .concat()
}

fn validate(x: &DataMatrix, iota: &[f64], reference: &ReferenceSet) -> Result<()> {
    check_dim(x.rows(), iota.len())?;
    check_dim(x.rows(), reference.n())?;
    if !reference.elements()[0].is_identity() {
        return Err(Error::invalid("reference set must start with the identity"));
    }
    if !x.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("data contains non-finite values"));
    }
    Ok(())
}

/// The single-step maxT procedure. Rejects `H_j` when `p_j <= alpha`.
pub fn maxt(
    x: &DataMatrix,
    iota: &[f64],
    reference: &ReferenceSet,
    alpha: f64,
) -> Result<TestOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    validate(x, iota, reference)?;
    let (n, p) = (x.rows(), x.cols());
    let w = weighted_rows(x, iota);
    let statistics = column_statistics(&w, n, p);
    let max_reference = reference_maxima(&w, n, p, reference.elements());

    let m = max_reference.len();
    let mut sorted = max_reference.clone();
    sorted.sort_by(f64::total_cmp);
    let p_values: Vec<f64> = statistics
        .iter()
        .map(|&t| {
            let at_least = m - sorted.partition_point(|&v| v < t);
            at_least as f64 / m as f64
        })
        .collect();
    let rejected = p_values.iter().map(|&pv| pv <= alpha).collect();
    Ok(TestOutcome {
        statistics,
        max_reference,
        p_values,
        rejected,
        alpha,
    })
}

/// One-sided p-value `#{g : iota' S_g x >= iota' x} / M`.
pub fn single_test_pvalue(x: &[f64], iota: &[f64], reference: &ReferenceSet) -> Result<f64> {
    let data = DataMatrix::from_column(x)?;
    validate(&data, iota, reference)?;
    let n = x.len();
    let w = weighted_rows(&data, iota);
    let t = column_statistics(&w, n, 1)[0];
    let stats = reference_maxima(&w, n, 1, reference.elements());
    let at_least = stats.iter().filter(|&&s| s >= t).count();
    Ok(at_least as f64 / stats.len() as f64)
}

/// Where the random transformation in [`consistency_probe`] comes from.
#[derive(Debug, Clone, Copy)]
pub enum ElementSource<'a> {
    /// Uniform over an explicit element set, e.g. a subgroup.
    Elements(&'a [SignFlipElement]),
    /// Uniform over all `2^n` sign-flips.
    FullGroup,
}

/// Estimates `P[iota'X_1 > n^{1/2} (iota' G iota) mu_1 + max_j iota' E2_j]`
/// with `X_1 = n^{1/2} mu_1 iota + E_1`, `G` uniform on the source and `E2` an
/// independent `n x p` standard normal matrix.
pub fn consistency_probe<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    mu1: f64,
    source: ElementSource<'_>,
    reps: usize,
    rng: &mut R,
) -> Result<Estimate> {
    if n == 0 || p == 0 || reps == 0 {
        return Err(Error::invalid("consistency_probe needs n, p, reps >= 1"));
    }
    if mu1.is_nan() || mu1 < 0.0 {
        return Err(Error::invalid(format!(
            "mu1 must be non-negative, got {mu1}"
        )));
    }
    if let ElementSource::Elements(els) = source {
        if els.is_empty() {
            return Err(Error::invalid("empty element set"));
        }
        for el in els {
            check_dim(n, el.len())?;
        }
    }
    let iota = UnitVector::canonical(n);
    let root_n = (n as f64).sqrt();
    let mut hits = 0;
    let mut column = vec![0.0; p];
    for _ in 0..reps {
        let g = match source {
            ElementSource::Elements(els) => els[rng.random_range(0..els.len())].clone(),
            ElementSource::FullGroup => sample_uniform_signflip(n, rng),
        };
        let noise: f64 = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .sum::<f64>()
            / root_n;
        let lhs = root_n * mu1 + noise;
        column.fill(0.0);
        for _ in 0..n {
            for c in column.iter_mut() {
                *c += rng.sample::<f64, _>(StandardNormal);
            }
        }
        let max_null = column
            .iter()
            .fold(f64::NEG_INFINITY, |m, &c| m.max(c / root_n));
        let rhs = root_n * leak_unchecked(&g, &iota) * mu1 + max_null;
        if lhs > rhs {
            hits += 1;
        }
    }
    Ok(Estimate::from_proportion(hits, reps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{nonpositive_from_oracle, sylvester_oracle};
    use crate::data::generate_data;
    use crate::rng::substream;

    fn full_group(n: usize) -> Vec<SignFlipElement> {
        (0..1usize << n)
            .map(|mask| SignFlipElement::from_negative_flags((0..n).map(|i| (mask >> i) & 1 == 1)))
            .collect()
    }

    #[test]
    fn trivial_reference_gives_p_one() {
        let reference = ReferenceSet::monte_carlo(3, 1, &mut substream(0, 0)).unwrap();
        assert_eq!(
            single_test_pvalue(
                &[1.0, 2.0, 3.0],
                UnitVector::canonical(3).as_slice(),
                &reference
            )
            .unwrap(),
            1.0
        );
    }

    #[test]
    fn positive_sample_gets_smallest_p() {
        let group = crate::group::classify(full_group(3), &UnitVector::canonical(3)).unwrap();
        let reference = ReferenceSet::exact(&group);
        let p = single_test_pvalue(
            &[0.5, 1.5, 2.0],
            UnitVector::canonical(3).as_slice(),
            &reference,
        )
        .unwrap();
        assert_eq!(p, 1.0 / 8.0);
    }

    #[test]
    fn alpha_below_resolution_never_rejects() {
        let mut rng = substream(1, 0);
        let x = generate_data(16, &[5.0; 4], &mut rng).unwrap();
        let reference = ReferenceSet::exact(&sylvester_oracle(16).unwrap());
        let out = maxt(&x, UnitVector::canonical(16).as_slice(), &reference, 0.05).unwrap();
        assert_eq!(out.rejection_count(), 0);
        assert!(out.p_values.iter().all(|&p| p >= 1.0 / 16.0));
        assert_eq!(out.critical_value(), f64::INFINITY);
    }

    #[test]
    fn zero_noise_oracle_rejects_the_signal_column() {
        let n = 8;
        let iota = UnitVector::canonical(n);
        // X = n^{1/2} iota mu' with mu = (1, 0, 0)
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, 0.0, 0.0]).collect();
        let x = DataMatrix::from_rows(&rows).unwrap();
        let reference = ReferenceSet::exact(&sylvester_oracle(n).unwrap());
        let out = maxt(&x, iota.as_slice(), &reference, 0.125).unwrap();
        assert!(out.max_reference[1..].iter().all(|&m| m == 0.0));
        assert_eq!(out.p_values[0], 1.0 / 8.0);
        assert_eq!(out.rejected, vec![true, false, false]);
        let strict = maxt(&x, iota.as_slice(), &reference, 0.1).unwrap();
        assert_eq!(strict.rejection_count(), 0);
    }

    #[test]
    fn rejects_bad_alpha_and_shapes() {
        let x = DataMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let iota = UnitVector::canonical(2);
        let reference = ReferenceSet::exact(&sylvester_oracle(2).unwrap());
        assert!(maxt(&x, iota.as_slice(), &reference, 0.0).is_err());
        assert!(maxt(&x, iota.as_slice(), &reference, 1.0).is_err());
        let bad_ref = ReferenceSet::exact(&sylvester_oracle(4).unwrap());
        assert!(matches!(
            maxt(&x, iota.as_slice(), &bad_ref, 0.5),
            Err(Error::Dimension { .. })
        ));
        let nan = DataMatrix::from_rows(&[vec![f64::NAN], vec![2.0]]).unwrap();
        assert!(maxt(&nan, iota.as_slice(), &reference, 0.5).is_err());
    }

    #[test]
    fn critical_value_form_agrees() {
        let mut rng = substream(2, 0);
        for &alpha in &[0.05, 0.1, 1.0 / 16.0, 0.3] {
            let x = generate_data(32, &[0.5; 40], &mut rng).unwrap();
            let reference = ReferenceSet::monte_carlo(32, 200, &mut rng).unwrap();
            let out = maxt(&x, UnitVector::canonical(32).as_slice(), &reference, alpha).unwrap();
            let c = out.critical_value();
            for (t, r) in out.statistics.iter().zip(&out.rejected) {
                assert_eq!(*r, *t > c);
            }
        }
    }

    #[test]
    fn identity_maximum_dominates_statistics() {
        let mut rng = substream(3, 0);
        let x = generate_data(8, &[0.0, 1.0, -1.0, 0.3], &mut rng).unwrap();
        let reference = ReferenceSet::monte_carlo(8, 50, &mut rng).unwrap();
        let out = maxt(&x, UnitVector::canonical(8).as_slice(), &reference, 0.1).unwrap();
        let max_t = out
            .statistics
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.max_reference[0], max_t);
    }

    #[test]
    fn max_exceedances_matches_rule() {
        assert_eq!(max_exceedances(16, 1.0 / 16.0), 1);
        assert_eq!(max_exceedances(16, 0.05), 0);
        assert_eq!(max_exceedances(1000, 0.05), 50);
        assert_eq!(max_exceedances(64, 0.05), 3);
    }

    #[test]
    fn probe_with_zero_signal_is_one_over_p_plus_one() {
        let p = 4;
        let reps = 20_000;
        let group = sylvester_oracle(8).unwrap();
        let est = consistency_probe(
            8,
            p,
            0.0,
            ElementSource::Elements(group.elements()),
            reps,
            &mut substream(4, 0),
        )
        .unwrap();
        let target = 1.0 / (p as f64 + 1.0);
        assert!(
            (est.value - target).abs() < 4.0 * est.se,
            "{est:?} vs {target}"
        );
    }

    #[test]
    fn probe_increases_with_signal() {
        let group = nonpositive_from_oracle(&sylvester_oracle(16).unwrap()).unwrap();
        let mut last = 0.0;
        for (k, &mu) in [0.0, 0.2, 0.4, 0.8].iter().enumerate() {
            let est = consistency_probe(
                16,
                20,
                mu,
                ElementSource::Elements(group.elements()),
                4000,
                &mut substream(5, k as u64),
            )
            .unwrap();
            assert!(est.value + 3.0 * est.se >= last, "mu={mu} {est:?} < {last}");
            last = est.value;
        }
    }
}
