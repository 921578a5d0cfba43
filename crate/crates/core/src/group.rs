//! The sign-flipping group acting on the rows of a data matrix.
//!
//! A sign-flip is a diagonal matrix with entries in `{-1, +1}`. Elements are
//! stored packed, one bit per row (bit set means `-1`), so composition is a
//! word-wise XOR.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{check_dim, Error, Result};

/// Classification tolerance for leaks. Sign-flip leaks under the canonical
/// `iota` are multiples of `2/n`.
pub const LEAK_TOLERANCE: f64 = 1e-12;

/// Tolerance on the Euclidean norm of a [`UnitVector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SignFlipElement {
    len: usize,
    words: Vec<u64>,
}

fn word_count(n: usize) -> usize {
    n.div_ceil(64)
}

fn tail_mask(n: usize) -> u64 {
    match n % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl SignFlipElement {
    pub fn identity(n: usize) -> Self {
        SignFlipElement {
            len: n,
            words: vec![0; word_count(n)],
        }
    }

    /// The element `-I`.
    pub fn negated_identity(n: usize) -> Self {
        Self::identity(n).negate()
    }

    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let mut el = Self::identity(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            match s {
                1 => {}
                -1 => el.words[i / 64] |= 1 << (i % 64),
                other => {
                    return Err(Error::invalid(format!(
                        "sign {other} at position {i} is not +1 or -1"
                    )))
                }
            }
        }
        Ok(el)
    }

    /// Builds an element from per-row negation flags.
    pub fn from_negative_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let flags: Vec<bool> = flags.into_iter().collect();
        let mut el = Self::identity(flags.len());
        for (i, &neg) in flags.iter().enumerate() {
            if neg {
                el.words[i / 64] |= 1 << (i % 64);
            }
        }
        el
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_identity(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    pub fn is_negative(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn sign(&self, i: usize) -> i8 {
        if self.is_negative(i) {
            -1
        } else {
            1
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    /// Number of `-1` entries.
    pub fn negative_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Entrywise product of signs.
    pub fn compose(&self, other: &SignFlipElement) -> Result<SignFlipElement> {
        check_dim(self.len, other.len)?;
        Ok(self.compose_unchecked(other))
    }

    pub(crate) fn compose_unchecked(&self, other: &SignFlipElement) -> SignFlipElement {
        SignFlipElement {
            len: self.len,
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a ^ b)
                .collect(),
        }
    }

    /// `-S`: every sign flipped.
    pub fn negate(&self) -> SignFlipElement {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(self.len);
        }
        SignFlipElement {
            len: self.len,
            words,
        }
    }

    /// Applies the element to the rows of `x`.
    pub fn apply(&self, x: &DataMatrix) -> Result<DataMatrix> {
        apply(self, x)
    }
}

impl fmt::Display for SignFlipElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.is_negative(i) { "-" } else { "+" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SignFlipElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignFlipElement({self})")
    }
}

impl FromStr for SignFlipElement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Parse("empty sign string".into()));
        }
        let mut flags = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '+' => flags.push(false),
                '-' => flags.push(true),
                other => {
                    return Err(Error::Parse(format!(
                        "unexpected character {other:?} in sign string"
                    )))
                }
            }
        }
        Ok(SignFlipElement::from_negative_flags(flags))
    }
}

pub fn compose(a: &SignFlipElement, b: &SignFlipElement) -> Result<SignFlipElement> {
    a.compose(b)
}

/// Row `i` of the result is `s_i` times row `i` of `x`.
pub fn apply(s: &SignFlipElement, x: &DataMatrix) -> Result<DataMatrix> {
    check_dim(x.rows(), s.len())?;
    let mut out = x.clone();
    let cols = x.cols();
    let data = out.as_mut_slice();
    for i in 0..s.len() {
        if s.is_negative(i) {
            for v in &mut data[i * cols..(i + 1) * cols] {
                *v = -*v;
            }
        }
    }
    Ok(out)
}

/// Each sign is independently `+1` or `-1` with probability 1/2. A zero bit
/// from the stream maps to `+1`.
pub fn sample_uniform_signflip<R: Rng + ?Sized>(n: usize, rng: &mut R) -> SignFlipElement {
    let mut words: Vec<u64> = (0..word_count(n)).map(|_| rng.next_u64()).collect();
    if let Some(last) = words.last_mut() {
        *last &= tail_mask(n);
    }
    SignFlipElement { len: n, words }
}

/// A Euclidean unit vector, the direction of the location shift.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector {
    entries: Vec<f64>,
    uniform: bool,
}

impl UnitVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("unit vector must be nonempty"));
        }
        let norm = entries.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "vector has norm {norm}, expected 1"
            )));
        }
        Ok(UnitVector {
            entries,
            uniform: false,
        })
    }

    /// `n^{-1/2}(1, ..., 1)'`.
    pub fn canonical(n: usize) -> Self {
        let v = 1.0 / (n as f64).sqrt();
        UnitVector {
            entries: vec![v; n],
            uniform: true,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.entries
    }
}

/// The leak `iota' S iota = sum_i iota_i^2 s_i`.
pub fn leak(s: &SignFlipElement, iota: &UnitVector) -> Result<f64> {
    check_dim(iota.len(), s.len())?;
    Ok(leak_unchecked(s, iota))
}

pub(crate) fn leak_unchecked(s: &SignFlipElement, iota: &UnitVector) -> f64 {
    if iota.uniform {
        let n = s.len();
        return (n as f64 - 2.0 * s.negative_count() as f64) / n as f64;
    }
    iota.entries
        .iter()
        .enumerate()
        .map(|(i, v)| if s.is_negative(i) { -v * v } else { v * v })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubgroupClass {
    /// Every non-identity leak is zero.
    Oracle,
    /// Every non-identity leak is at most zero.
    NonPositive,
    General,
}

impl fmt::Display for SubgroupClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubgroupClass::Oracle => "Oracle",
            SubgroupClass::NonPositive => "NonPositive",
            SubgroupClass::General => "General",
        })
    }
}

impl FromStr for SubgroupClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Oracle" => Ok(SubgroupClass::Oracle),
            "NonPositive" => Ok(SubgroupClass::NonPositive),
            "General" => Ok(SubgroupClass::General),
            other => Err(Error::Parse(format!("unknown subgroup class {other:?}"))),
        }
    }
}

/// A verified finite subgroup of sign-flips, identity first, with cached leaks.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    n: usize,
    elements: Vec<SignFlipElement>,
    leaks: Vec<f64>,
    class: SubgroupClass,
}

impl Subgroup {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[SignFlipElement] {
        &self.elements
    }

    pub fn leaks(&self) -> &[f64] {
        &self.leaks
    }

    pub fn class(&self) -> SubgroupClass {
        self.class
    }

    /// Largest leak over the non-identity elements, `-inf` for the trivial group.
    pub fn max_leak(&self) -> f64 {
        self.leaks[1..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, s: &SignFlipElement) -> bool {
        self.elements.contains(s)
    }

    pub fn into_elements(self) -> Vec<SignFlipElement> {
        self.elements
    }

    /// Text form: a header `n=<n> size=<size> class=<class>` followed by one
    /// element per line, identity first.
    pub fn to_text(&self) -> String {
        let mut out = format!("n={} size={} class={}\n", self.n, self.len(), self.class);
        for el in &self.elements {
            out.push_str(&el.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses [`Subgroup::to_text`] output and re-verifies it against the
    /// canonical `iota`. The header must agree with what classification finds.
    /// Lines starting with `#` are comments.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty subgroup file".into()))?;
        let (mut n, mut size, mut class) = (None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("malformed header field {field:?}")))?;
            let bad = |_| Error::Parse(format!("bad value in header field {field:?}"));
            match key {
                "n" => n = Some(value.parse::<usize>().map_err(bad)?),
                "size" => size = Some(value.parse::<usize>().map_err(bad)?),
                "class" => class = Some(value.parse::<SubgroupClass>()?),
                other => return Err(Error::Parse(format!("unknown header key {other:?}"))),
            }
        }
        let (n, size, class) = match (n, size, class) {
            (Some(n), Some(s), Some(c)) => (n, s, c),
            _ => return Err(Error::Parse("header must contain n, size and class".into())),
        };
        let elements = lines
            .map(SignFlipElement::from_str)
            .collect::<Result<Vec<_>>>()?;
        if elements.len() != size {
            return Err(Error::Parse(format!(
                "header says size={size}, found {} elements",
                elements.len()
            )));
        }
        if !elements.first().is_some_and(SignFlipElement::is_identity) {
            return Err(Error::Parse("first element must be the identity".into()));
        }
        for el in &elements {
            if el.len() != n {
                return Err(Error::Parse(format!(
                    "element {el} has length {}, expected n={n}",
                    el.len()
                )));
            }
        }
        let group = classify(elements, &UnitVector::canonical(n))?;
        if group.class != class {
            return Err(Error::Parse(format!(
                "header says class={class}, elements classify as {}",
                group.class
            )));
        }
        Ok(group)
    }
}

/// Verifies that `elements` form a subgroup (identity present, closed under
/// composition), moves the identity to the front, caches leaks and assigns a
/// class.
pub fn classify(elements: Vec<SignFlipElement>, iota: &UnitVector) -> Result<Subgroup> {
    let n = iota.len();
    if elements.is_empty() {
        return Err(Error::invalid("subgroup needs at least one element"));
    }
    for el in &elements {
        check_dim(n, el.len())?;
    }
    let mut elements = elements;
    let id_pos = elements
        .iter()
        .position(SignFlipElement::is_identity)
        .ok_or_else(|| Error::invalid("element set does not contain the identity"))?;
    if id_pos != 0 {
        let id = elements.remove(id_pos);
        elements.insert(0, id);
    }

    let members: HashSet<&[u64]> = elements.iter().map(SignFlipElement::words).collect();
    if members.len() != elements.len() {
        return Err(Error::invalid("element set contains duplicates"));
    }
    verify_closure(&elements, &members)?;

    let leaks: Vec<f64> = elements.iter().map(|s| leak_unchecked(s, iota)).collect();
    let rest = &leaks[1..];
    let class = if rest.iter().all(|l| l.abs() <= LEAK_TOLERANCE) {
        SubgroupClass::Oracle
    } else if rest.iter().all(|&l| l <= LEAK_TOLERANCE) {
        SubgroupClass::NonPositive
    } else {
        SubgroupClass::General
    };
    debug_assert!(class != SubgroupClass::Oracle || elements.len() <= n.max(1));
    debug_assert!(class != SubgroupClass::NonPositive || elements.len() <= 2 * n);
    Ok(Subgroup {
        n,
        elements,
        leaks,
        class,
    })
}

fn verify_closure(elements: &[SignFlipElement], members: &HashSet<&[u64]>) -> Result<()> {
    let words = elements[0].words().len();
    let mut product = vec![0u64; words];
    for (ia, a) in elements.iter().enumerate() {
        for b in &elements[ia..] {
            for ((p, x), y) in product.iter_mut().zip(a.words()).zip(b.words()) {
                *p = x ^ y;
            }
            if !members.contains(product.as_slice()) {
                return Err(Error::NotASubgroup {
                    a: a.to_string(),
                    b: b.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Builds a subgroup from elements already known to be closed (construction
/// routines), skipping the quadratic closure check.
pub(crate) fn assume_subgroup(elements: Vec<SignFlipElement>, iota: &UnitVector) -> Subgroup {
    debug_assert!(elements[0].is_identity());
    let leaks: Vec<f64> = elements.iter().map(|s| leak_unchecked(s, iota)).collect();
    let rest = &leaks[1..];
    let class = if rest.iter().all(|l| l.abs() <= LEAK_TOLERANCE) {
        SubgroupClass::Oracle
    } else if rest.iter().all(|&l| l <= LEAK_TOLERANCE) {
        SubgroupClass::NonPositive
    } else {
        SubgroupClass::General
    };
    Subgroup {
        n: iota.len(),
        elements,
        leaks,
        class,
    }
}
