//! Deterministic, order-free random weights.
//!
//! A weight is a pure function of `(master seed, factor position, level bytes,
//! replicate)`. The factor position and level are serialized with a domain tag
//! and length prefixes and hashed with XXH3-64 (seeded by the master seed). The
//! hash keys a SplitMix64 counter generator; output number `b` becomes the
//! uniform variate of replicate `b`, which is mapped to the weight family by
//! inversion. Nothing depends on observation order, thread or shard, so every
//! compute node that sees a level produces the same weight for it.
//!
//! Changing any of the constants below changes every weight; the test vectors
//! in `tests/data/weight_vectors.jsonl` pin them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::data::Dataset;
use crate::error::WeightError;
use crate::subset::FactorSubset;

const LEVEL_TAG: &[u8] = b"crossboot/level-weight/v1";
const NAIVE_TAG: &[u8] = b"crossboot/naive-weight/v1";
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based generator: output `k` is `mix(key + (k+1)·γ)`.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn at(&self, counter: u64) -> u64 {
        splitmix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.at(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    CounterRng::new(base).at(stream)
}

/// Mean-one weight distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    /// Uniform on `{0, 2}`.
    DoubleOrNothing,
    Poisson1,
    Exp1,
    /// `(1+τ²)·Bernoulli(1/(1+τ²))`.
    ScaledBernoulli {
        tau_sq: f64,
    },
}

impl WeightFamily {
    pub fn scaled_bernoulli(tau_sq: f64) -> Result<Self, WeightError> {
        if tau_sq > 0.0 && tau_sq.is_finite() {
            Ok(WeightFamily::ScaledBernoulli { tau_sq })
        } else {
            Err(WeightError::InvalidVariance(tau_sq))
        }
    }

    /// Variance `τ²` of the weight.
    pub fn tau_sq(&self) -> f64 {
        match *self {
            WeightFamily::ScaledBernoulli { tau_sq } => tau_sq,
            _ => 1.0,
        }
    }

    /// Excess kurtosis `κ_w`.
    pub fn kurtosis(&self) -> f64 {
        match *self {
            WeightFamily::DoubleOrNothing => -2.0,
            WeightFamily::Poisson1 => 1.0,
            WeightFamily::Exp1 => 6.0,
            WeightFamily::ScaledBernoulli { tau_sq } => {
                let p = 1.0 / (1.0 + tau_sq);
                let q = 1.0 - p;
                (1.0 - 6.0 * p * q) / (p * q)
            }
        }
    }

    /// Maps a uniform variate on `[0, 1)` to a weight.
    pub fn from_uniform(&self, u: f64) -> f64 {
        match *self {
            WeightFamily::DoubleOrNothing => {
                if u < 0.5 {
                    2.0
                } else {
                    0.0
                }
            }
            WeightFamily::Poisson1 => poisson1_inverse_cdf(u) as f64,
            WeightFamily::Exp1 => -(-u).ln_1p(),
            WeightFamily::ScaledBernoulli { tau_sq } => {
                let scale = 1.0 + tau_sq;
                if u < 1.0 / scale {
                    scale
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            WeightFamily::DoubleOrNothing => "don".into(),
            WeightFamily::Poisson1 => "poisson".into(),
            WeightFamily::Exp1 => "exp".into(),
            WeightFamily::ScaledBernoulli { tau_sq } => format!("bernoulli:{tau_sq}"),
        }
    }
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for WeightFamily {
    type Err = WeightError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "don" | "double-or-nothing" | "double_or_nothing" => Ok(WeightFamily::DoubleOrNothing),
            "poisson" | "poisson1" | "poi" => Ok(WeightFamily::Poisson1),
            "exp" | "exp1" | "exponential" => Ok(WeightFamily::Exp1),
            _ => match lower.strip_prefix("bernoulli:") {
                Some(t) => {
                    let tau_sq: f64 = t.parse().map_err(|_| WeightError::UnknownFamily(s.to_string()))?;
                    WeightFamily::scaled_bernoulli(tau_sq)
                }
                None => Err(WeightError::UnknownFamily(s.to_string())),
            },
        }
    }
}

/// Excess kurtosis of a weight family.
pub fn kurtosis_of(family: WeightFamily) -> f64 {
    family.kurtosis()
}

fn poisson1_inverse_cdf(u: f64) -> u32 {
    // CDF of Poisson(1), truncated once it exceeds 1 − 2^-53
    const LIMIT: f64 = 1.0 - 1.0 / (1u64 << 53) as f64;
    let mut p = (-1.0f64).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u >= cdf && cdf < LIMIT {
        k += 1;
        p /= k as f64;
        cdf += p;
    }
    k
}

/// Everything needed to reproduce one set of bootstrap weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub family: WeightFamily,
    pub master_seed: u64,
    /// Factors that are reweighted; the others contribute a factor of one.
    pub active_factors: FactorSubset,
    pub replicates: usize,
}

impl WeightConfig {
    pub fn new(family: WeightFamily, master_seed: u64, active_factors: FactorSubset, replicates: usize) -> Self {
        Self { family, master_seed, active_factors, replicates }
    }

    pub fn validate(&self, r: usize) -> Result<(), WeightError> {
        if self.replicates == 0 {
            return Err(WeightError::NoReplicates);
        }
        if self.active_factors.is_empty() {
            return Err(WeightError::NoActiveFactors);
        }
        if let Some(factor) = self.active_factors.members().find(|&j| j >= r) {
            return Err(WeightError::FactorOutOfRange { factor, r });
        }
        self.family.tau_sq().is_finite().then_some(()).ok_or(WeightError::InvalidVariance(self.family.tau_sq()))
    }

    /// Stable identifier of the configuration, used to refuse merging
    /// accumulators built under different settings.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("config serializes");
        xxh3_64_with_seed(text.as_bytes(), 0)
    }
}

/// Generator key for one level of one factor; replicate `b` uses counter `b`.
pub fn level_key(master_seed: u64, factor: usize, level: &[u8]) -> u64 {
    let mut buf = Vec::with_capacity(LEVEL_TAG.len() + 12 + level.len());
    buf.extend_from_slice(LEVEL_TAG);
    buf.extend_from_slice(&(factor as u32).to_le_bytes());
    buf.extend_from_slice(&(level.len() as u64).to_le_bytes());
    buf.extend_from_slice(level);
    xxh3_64_with_seed(&buf, master_seed)
}

/// Generator key for a full index tuple, used by the naive bootstrap.
pub fn naive_key(master_seed: u64, levels: &[&[u8]]) -> u64 {
    let mut buf = Vec::with_capacity(NAIVE_TAG.len() + 4 + levels.iter().map(|l| l.len() + 8).sum::<usize>());
    buf.extend_from_slice(NAIVE_TAG);
    buf.extend_from_slice(&(levels.len() as u32).to_le_bytes());
    for l in levels {
        buf.extend_from_slice(&(l.len() as u64).to_le_bytes());
        buf.extend_from_slice(l);
    }
    xxh3_64_with_seed(&buf, master_seed)
}

/// Weight of one level of one factor in one replicate, ignoring the active set.
pub fn raw_level_weight(family: WeightFamily, master_seed: u64, factor: usize, level: &[u8], replicate: u64) -> f64 {
    family.from_uniform(CounterRng::new(level_key(master_seed, factor, level)).uniform(replicate))
}

/// `W_{j,ℓ}` for replicate `replicate` (zero based).
pub fn level_weight(factor: usize, level: &[u8], replicate: u64, config: &WeightConfig) -> Result<f64, WeightError> {
    if !config.active_factors.contains(factor) {
        return Err(WeightError::InactiveFactor { factor });
    }
    Ok(raw_level_weight(config.family, config.master_seed, factor, level, replicate))
}

/// Product weight `W_i = Π_{j active} W_{j, i_j}` of row `i`.
pub fn observation_weight(ds: &Dataset, i: usize, replicate: u64, config: &WeightConfig) -> f64 {
    config.active_factors.members().fold(1.0, |w, j| {
        w * raw_level_weight(config.family, config.master_seed, ds.factor_key(j), ds.level_bytes(i, j), replicate)
    })
}

/// Independent weight per full index, for the naive (observation-level) bootstrap.
pub fn naive_weight(family: WeightFamily, master_seed: u64, levels: &[&[u8]], replicate: u64) -> f64 {
    family.from_uniform(CounterRng::new(naive_key(master_seed, levels)).uniform(replicate))
}

/// Precomputed level weights for every active factor and replicate of a dataset.
#[derive(Debug, Clone)]
pub struct WeightTable {
    replicates: usize,
    /// Per factor (empty when inactive): `levels × replicates`, row-major.
    per_factor: Vec<Vec<f64>>,
}

impl WeightTable {
    pub fn build(ds: &Dataset, config: &WeightConfig) -> Self {
        let b = config.replicates;
        let per_factor = (0..ds.r())
            .map(|j| {
                if !config.active_factors.contains(j) {
                    return Vec::new();
                }
                let table = ds.level_table(j);
                let mut out = Vec::with_capacity(table.len() * b);
                for id in 0..table.len() as u32 {
                    let rng = CounterRng::new(level_key(config.master_seed, ds.factor_key(j), table.name(id)));
                    out.extend((0..b as u64).map(|rep| config.family.from_uniform(rng.uniform(rep))));
                }
                out
            })
            .collect();
        Self { replicates: b, per_factor }
    }

    /// Writes `W_{i,b}` for all replicates of row `i` into `out`.
    pub fn fill(&self, ds: &Dataset, i: usize, out: &mut [f64]) {
        let b = self.replicates;
        out.iter_mut().for_each(|w| *w = 1.0);
        let ids = ds.level_ids(i);
        for (j, table) in self.per_factor.iter().enumerate() {
            if table.is_empty() {
                continue;
            }
            let row = &table[ids[j] as usize * b..(ids[j] as usize + 1) * b];
            for (w, &x) in out.iter_mut().zip(row) {
                *w *= x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset_from_indices;

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var, v.len())
    }

    fn cfg(family: WeightFamily, active: &[usize]) -> WeightConfig {
        WeightConfig::new(family, 42, FactorSubset::from_members(active.iter().copied()), 10)
    }

    #[test]
    fn purity() {
        let c = cfg(WeightFamily::Exp1, &[0, 1]);
        let a = level_weight(1, b"user-17", 3, &c).unwrap();
        let b = level_weight(1, b"user-17", 3, &c).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, level_weight(1, b"user-17", 4, &c).unwrap());
    }

    #[test]
    fn inactive_factor_rejected() {
        let c = cfg(WeightFamily::DoubleOrNothing, &[0]);
        assert_eq!(level_weight(1, b"x", 0, &c), Err(WeightError::InactiveFactor { factor: 1 }));
    }

    #[test]
    fn double_or_nothing_support_and_mean() {
        let c = cfg(WeightFamily::DoubleOrNothing, &[0]);
        let n = 1_000_000u64;
        let mut sum = 0.0;
        for k in 0..n {
            let level = (k % 1000).to_string();
            let w = level_weight(0, level.as_bytes(), k / 1000, &c).unwrap();
            assert!(w == 0.0 || w == 2.0);
            sum += w;
        }
        assert!((sum / n as f64 - 1.0).abs() < 0.003);
    }

    #[test]
    fn family_mean_and_variance() {
        let n = 1_000_000u64;
        for family in [
            WeightFamily::DoubleOrNothing,
            WeightFamily::Poisson1,
            WeightFamily::Exp1,
            WeightFamily::ScaledBernoulli { tau_sq: 0.5 },
            WeightFamily::ScaledBernoulli { tau_sq: 3.0 },
        ] {
            let (mean, var, _) = moments((0..n).map(|k| raw_level_weight(family, 7, 0, &k.to_le_bytes(), 0)));
            let tau_sq = family.tau_sq();
            // 4 standard errors; the variance of a two-point law is nearly deterministic
            let se_mean = (tau_sq / n as f64).sqrt();
            let se_var = tau_sq * ((family.kurtosis() + 2.0) / n as f64).sqrt();
            assert!((mean - 1.0).abs() < 4.0 * se_mean, "{family}: mean {mean}");
            assert!((var - tau_sq).abs() < (4.0 * se_var).max(1e-4), "{family}: var {var}");
        }
    }

    #[test]
    fn same_level_in_two_roles_is_independent() {
        let c = cfg(WeightFamily::Exp1, &[0, 1]);
        let n = 1_000_000u64;
        let mut xs = Vec::with_capacity(n as usize);
        let mut ys = Vec::with_capacity(n as usize);
        for k in 0..n {
            let level = k.to_string();
            xs.push(level_weight(0, level.as_bytes(), 0, &c).unwrap());
            ys.push(level_weight(1, level.as_bytes(), 0, &c).unwrap());
        }
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn replicate_streams_are_uncorrelated() {
        let n = 1_000_000u64;
        let xs: Vec<f64> = (0..n).map(|k| raw_level_weight(WeightFamily::Exp1, 1, 0, &k.to_le_bytes(), 0)).collect();
        let ys: Vec<f64> = (0..n).map(|k| raw_level_weight(WeightFamily::Exp1, 1, 0, &k.to_le_bytes(), 1)).collect();
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn product_weight() {
        let ds = dataset_from_indices(&[vec![38, 44]], &[0.0]).unwrap();
        let c = cfg(WeightFamily::Exp1, &[0, 1]);
        let w = observation_weight(&ds, 0, 2, &c);
        let expect = level_weight(0, b"38", 2, &c).unwrap() * level_weight(1, b"44", 2, &c).unwrap();
        assert_eq!(w, expect);
        let single = cfg(WeightFamily::Exp1, &[0]);
        assert_eq!(observation_weight(&ds, 0, 2, &single), level_weight(0, b"38", 2, &single).unwrap());
    }

    #[test]
    fn double_or_nothing_product_support() {
        let rows: Vec<Vec<u32>> = (0..200u32).map(|i| vec![i % 13, i % 17, i]).collect();
        let ds = dataset_from_indices(&rows, &vec![0.0; rows.len()]).unwrap();
        let c = cfg(WeightFamily::DoubleOrNothing, &[0, 1, 2]);
        let table = WeightTable::build(&ds, &c);
        let mut buf = vec![0.0; c.replicates];
        for i in 0..ds.len() {
            table.fill(&ds, i, &mut buf);
            for (b, &w) in buf.iter().enumerate() {
                assert!([0.0, 2.0, 4.0, 8.0].contains(&w), "{w}");
                assert_eq!(w, observation_weight(&ds, i, b as u64, &c));
            }
        }
    }

    #[test]
    fn kurtosis_constants() {
        assert_eq!(kurtosis_of(WeightFamily::DoubleOrNothing), -2.0);
        assert_eq!(kurtosis_of(WeightFamily::Poisson1), 1.0);
        assert_eq!(kurtosis_of(WeightFamily::Exp1), 6.0);
        assert!((WeightFamily::ScaledBernoulli { tau_sq: 1.0 }.kurtosis() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_inverse_cdf_edges() {
        assert_eq!(poisson1_inverse_cdf(0.0), 0);
        assert_eq!(poisson1_inverse_cdf(0.3), 0);
        assert_eq!(poisson1_inverse_cdf(0.5), 1);
        assert!(poisson1_inverse_cdf(1.0 - 1e-17) < 25);
    }

    #[test]
    fn family_parsing() {
        assert_eq!("don".parse::<WeightFamily>().unwrap(), WeightFamily::DoubleOrNothing);
        assert_eq!("Exp".parse::<WeightFamily>().unwrap(), WeightFamily::Exp1);
        assert_eq!("bernoulli:0.5".parse::<WeightFamily>().unwrap(), WeightFamily::ScaledBernoulli { tau_sq: 0.5 });
        assert!("bernoulli:-1".parse::<WeightFamily>().is_err());
        assert!("gamma".parse::<WeightFamily>().is_err());
        let f = WeightFamily::ScaledBernoulli { tau_sq: 0.25 };
        assert_eq!(f.name().parse::<WeightFamily>().unwrap(), f);
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(WeightFamily::DoubleOrNothing, &[0, 2]);
        assert_eq!(c.validate(2), Err(WeightError::FactorOutOfRange { factor: 2, r: 2 }));
        assert!(c.validate(3).is_ok());
        c.active_factors = FactorSubset::EMPTY;
        assert_eq!(c.validate(3), Err(WeightError::NoActiveFactors));
        c.active_factors = FactorSubset::singleton(0);
        c.replicates = 0;
        assert_eq!(c.validate(3), Err(WeightError::NoReplicates));
    }
}
