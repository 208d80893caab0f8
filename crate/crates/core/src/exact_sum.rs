//! Order-independent exact summation of `f64` values.
//!
//! Every finite double is an integer multiple of `2^-1074`, so a sum of doubles
//! is a (large) integer in those units. [`ExactSum`] keeps that integer in
//! base-`2^32` digits stored in `i64` limbs, which leaves room for about `2^30`
//! additions between carry propagations. Because the stored integer is exact,
//! the rounded result does not depend on the order of additions or on how the
//! inputs were split across shards.

use std::fmt;

const DIGIT_BITS: u32 = 32;
const LIMBS: usize = 68;
const BIAS: i32 = 1074;
const NORMALIZE_EVERY: u32 = 1 << 30;

#[derive(Clone, PartialEq, Eq)]
pub struct ExactSum {
    limbs: Box<[i64; LIMBS]>,
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self { limbs: Box::new([0; LIMBS]), pending: 0 }
    }
}

impl fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ExactSum({})", self.value())
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a finite double exactly.
    pub fn add(&mut self, x: f64) {
        debug_assert!(x.is_finite());
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let exp_field = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        // x = ±mant · 2^(shift − BIAS)
        let (mant, shift) = if exp_field == 0 { (frac, 0) } else { (frac | (1u64 << 52), exp_field - 1) };
        let shift = shift as u32;
        let k = (shift / DIGIT_BITS) as usize;
        let wide = (mant as u128) << (shift % DIGIT_BITS);
        let sign = if x < 0.0 { -1 } else { 1 };
        let mask = (1u128 << DIGIT_BITS) - 1;
        self.limbs[k] += sign * (wide & mask) as i64;
        self.limbs[k + 1] += sign * ((wide >> DIGIT_BITS) & mask) as i64;
        self.limbs[k + 2] += sign * (wide >> (2 * DIGIT_BITS)) as i64;
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            self.normalize();
        }
    }

    /// Adds `a·b` exactly (barring underflow of the rounding error).
    pub fn add_product(&mut self, a: f64, b: f64) {
        let (p, e) = two_product(a, b);
        self.add(p);
        self.add(e);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        if other.pending == 0 && other.limbs.iter().all(|&l| l == 0) {
            return;
        }
        // both sides are at most 2^30 additions past normal form; normalizing
        // first keeps every limb far from overflow
        self.normalize();
        let mut other = other.clone();
        other.normalize();
        for (a, b) in self.limbs.iter_mut().zip(other.limbs.iter()) {
            *a += *b;
        }
        self.normalize();
    }

    pub fn is_zero(&self) -> bool {
        let mut c = self.clone();
        c.normalize();
        c.limbs.iter().all(|&l| l == 0)
    }

    /// Carries so that every limb but the last lies in `[0, 2^32)`.
    fn normalize(&mut self) {
        let mut carry = 0i64;
        for limb in self.limbs.iter_mut().take(LIMBS - 1) {
            let v = *limb + carry;
            carry = v >> DIGIT_BITS;
            *limb = v - (carry << DIGIT_BITS);
        }
        self.limbs[LIMBS - 1] += carry;
        self.pending = 0;
    }

    /// The sum rounded to the nearest double.
    pub fn value(&self) -> f64 {
        let mut c = self.clone();
        c.normalize();
        let negative = c.limbs[LIMBS - 1] < 0;
        if negative {
            for limb in c.limbs.iter_mut() {
                *limb = -*limb;
            }
            c.normalize();
        }
        let Some(h) = c.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        // top 96 bits plus a sticky bit for everything below them
        let lo = h.saturating_sub(2);
        let mut mant: u128 = 0;
        for j in (lo..=h).rev() {
            mant = (mant << DIGIT_BITS) | c.limbs[j] as u128;
        }
        if c.limbs[..lo].iter().any(|&l| l != 0) {
            mant |= 1;
        }
        let magnitude = ldexp(mant as f64, (lo as i32) * DIGIT_BITS as i32 - BIAS);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// `a·b = p + e` exactly (Dekker's product with Veltkamp splitting).
pub fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    let e = ((ah * bh - p) + ah * bl + al * bh) + al * bl;
    (p, e)
}

fn split(a: f64) -> (f64, f64) {
    const FACTOR: f64 = 134_217_729.0; // 2^27 + 1
    let t = FACTOR * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// `x · 2^e` without intermediate overflow or premature underflow.
fn ldexp(mut x: f64, mut e: i32) -> f64 {
    while e > 1000 {
        x *= f64::from_bits(((1000 + 1023) as u64) << 52);
        e -= 1000;
    }
    while e < -1000 {
        x *= f64::from_bits(((-1000 + 1023) as u64) << 52);
        e += 1000;
    }
    x * f64::from_bits(((e + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_sums() {
        let s: ExactSum = [1.0, 2.0, 3.5].into_iter().collect();
        assert_eq!(s.value(), 6.5);
        let s: ExactSum = [1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = [0.1, 0.2, -0.3].into_iter().collect();
        // the three doubles do not cancel exactly
        assert_eq!(s.value(), 2f64.powi(-55));
        assert_eq!(ExactSum::new().value(), 0.0);
        assert!(ExactSum::new().is_zero());
    }

    #[test]
    fn extremes() {
        let tiny = f64::from_bits(1);
        let s: ExactSum = [tiny, tiny, tiny].into_iter().collect();
        assert_eq!(s.value(), 3.0 * tiny);
        let s: ExactSum = [f64::MAX, -f64::MAX, f64::MAX].into_iter().collect();
        assert_eq!(s.value(), f64::MAX);
        let s: ExactSum = [-2.5, -0.25].into_iter().collect();
        assert_eq!(s.value(), -2.75);
    }

    #[test]
    fn two_product_is_exact() {
        let (p, e) = two_product(0.1, 0.3);
        let mut s = ExactSum::new();
        s.add(p);
        s.add(e);
        s.add(-p);
        assert_eq!(s.value(), e);
        assert_eq!((3.0f64).mul_add(7.0, 0.0), two_product(3.0, 7.0).0);
        assert_eq!(two_product(3.0, 7.0).1, 0.0);
        let (p, e) = two_product(1.0 + 2f64.powi(-30), 1.0 + 2f64.powi(-30));
        assert_eq!(p, 1.0 + 2f64.powi(-29));
        assert_eq!(e, 2f64.powi(-60));
    }

    proptest! {
        #[test]
        fn order_and_sharding_invariance(xs in prop::collection::vec(-1e6f64..1e6, 1..200), cut in 0usize..200) {
            let forward: ExactSum = xs.iter().copied().collect();
            let backward: ExactSum = xs.iter().rev().copied().collect();
            prop_assert_eq!(forward.value().to_bits(), backward.value().to_bits());
            let cut = cut.min(xs.len());
            let mut left: ExactSum = xs[..cut].iter().copied().collect();
            let right: ExactSum = xs[cut..].iter().copied().collect();
            left.merge(&right);
            prop_assert_eq!(left.value().to_bits(), forward.value().to_bits());
        }

        #[test]
        fn matches_wide_integer_sum(xs in prop::collection::vec(-1_000_000i64..1_000_000, 0..100), scale in -40i32..40) {
            let f = 2f64.powi(scale);
            let s: ExactSum = xs.iter().map(|&x| x as f64 * f).collect();
            let exact: i64 = xs.iter().sum();
            prop_assert_eq!(s.value(), exact as f64 * f);
        }
    }
}
