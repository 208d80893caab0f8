//! Subsets of factor positions, encoded as bit masks.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest supported number of crossed factors.
pub const MAX_FACTORS: usize = 16;

/// A subset `u` of the factor positions `0..r`.
///
/// Bit `j` set means factor `j` (zero based) belongs to the subset. Only the low
/// `r` bits may be set for a dataset with `r` factors.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorSubset(u16);

impl FactorSubset {
    pub const EMPTY: FactorSubset = FactorSubset(0);

    pub const fn from_mask(mask: u16) -> Self {
        FactorSubset(mask)
    }

    /// The full set `[r]`.
    pub fn full(r: usize) -> Self {
        assert!(r <= MAX_FACTORS, "at most {MAX_FACTORS} factors are supported");
        if r == MAX_FACTORS {
            FactorSubset(u16::MAX)
        } else {
            FactorSubset(((1u32 << r) - 1) as u16)
        }
    }

    pub fn singleton(j: usize) -> Self {
        assert!(j < MAX_FACTORS);
        FactorSubset(1 << j)
    }

    pub fn from_members<I: IntoIterator<Item = usize>>(members: I) -> Self {
        members.into_iter().fold(Self::EMPTY, |s, j| s.with(j))
    }

    pub fn mask(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, j: usize) -> bool {
        j < MAX_FACTORS && self.0 & (1 << j) != 0
    }

    pub fn with(self, j: usize) -> Self {
        assert!(j < MAX_FACTORS);
        FactorSubset(self.0 | (1 << j))
    }

    pub fn union(self, other: Self) -> Self {
        FactorSubset(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        FactorSubset(self.0 & other.0)
    }

    /// `self − other`.
    pub fn difference(self, other: Self) -> Self {
        FactorSubset(self.0 & !other.0)
    }

    /// Complement within `[r]`.
    pub fn complement(self, r: usize) -> Self {
        Self::full(r).difference(self)
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_proper_subset_of(self, other: Self) -> bool {
        self.is_subset_of(other) && self != other
    }

    pub fn fits(self, r: usize) -> bool {
        self.is_subset_of(Self::full(r))
    }

    /// Member positions in increasing order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (0..MAX_FACTORS).filter(move |&j| mask & (1 << j) != 0)
    }

    /// All `2^r` subsets of `[r]`, ordered by mask.
    pub fn all(r: usize) -> impl Iterator<Item = FactorSubset> {
        assert!(r <= MAX_FACTORS);
        (0..(1u32 << r)).map(|m| FactorSubset(m as u16))
    }

    /// All supersets of `self` inside `[r]`, including `self`.
    pub fn supersets(self, r: usize) -> impl Iterator<Item = FactorSubset> {
        let free = self.complement(r).0;
        let base = self.0;
        submasks(free).map(move |m| FactorSubset(base | m))
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = FactorSubset> {
        submasks(self.0).map(FactorSubset)
    }

    /// One-based label such as `{1,3}`.
    pub fn label(self) -> String {
        let inner: Vec<String> = self.members().map(|j| (j + 1).to_string()).collect();
        format!("{{{}}}", inner.join(","))
    }

    /// Label using factor names, e.g. `{sharer,url}`.
    pub fn named_label(self, names: &[String]) -> String {
        let inner: Vec<&str> = self.members().map(|j| names[j].as_str()).collect();
        format!("{{{}}}", inner.join(","))
    }
}

fn submasks(mask: u16) -> impl Iterator<Item = u16> {
    // enumerate submasks in increasing order: iterate through 0..=mask with
    // the standard (s - mask) & mask trick
    let mut next = Some(0u16);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == mask { None } else { Some((cur.wrapping_sub(mask)) & mask) };
        Some(cur)
    })
}

impl fmt::Debug for FactorSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl fmt::Display for FactorSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Superset Möbius inversion over the subset lattice of `[r]`, in place.
///
/// On input `values[v]` holds `g(v) = Σ_{w ⊇ v} f(w)`; on output it holds
/// `f(w) = Σ_{v ⊇ w} (−1)^{|v−w|} g(v)`.
pub fn superset_mobius_in_place<T>(values: &mut [T])
where
    T: Copy + std::ops::SubAssign,
{
    let n = values.len();
    assert!(n.is_power_of_two());
    let mut bit = 1;
    while bit < n {
        for m in 0..n {
            if m & bit == 0 {
                let hi = values[m | bit];
                values[m] -= hi;
            }
        }
        bit <<= 1;
    }
}

/// Superset sums `g(v) = Σ_{w ⊇ v} f(w)`, in place. Inverse of
/// [`superset_mobius_in_place`].
pub fn superset_sum_in_place<T>(values: &mut [T])
where
    T: Copy + std::ops::AddAssign,
{
    let n = values.len();
    assert!(n.is_power_of_two());
    let mut bit = 1;
    while bit < n {
        for m in 0..n {
            if m & bit == 0 {
                let hi = values[m | bit];
                values[m] += hi;
            }
        }
        bit <<= 1;
    }
}
