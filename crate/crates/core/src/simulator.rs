//! Synthetic data from the homoscedastic and heteroscedastic crossed random
//! effects models.
//!
//! A [`Pattern`] fixes which index tuples are observed. Drawing values attaches
//! one effect to every distinct `u`-projection for every nonempty `u`, so rows
//! that agree on `u` share that effect exactly.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetBuilder, IngestOptions, Observation};
use crate::diagnostics::{duplication_profile, MatchCounts};
use crate::error::SimError;
use crate::subset::{FactorSubset, MAX_FACTORS};
use crate::weights::derive_seed;

const PATTERN_STREAM: u64 = 1;
const EFFECT_STREAM: u64 = 2;
const VARIANCE_STREAM: u64 = 3;

/// Which index tuples are observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternKind {
    /// Every tuple of an `N_1 × … × N_r` grid.
    CompleteGrid { sizes: Vec<usize> },
    /// `n` distinct tuples with independent Zipf-distributed coordinates.
    SparseZipf { levels: Vec<usize>, exponents: Vec<f64>, n: usize },
    /// The given tuples.
    ExplicitMask { indices: Vec<Vec<u32>> },
}

/// How simulated rows get a group label (column `group`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupAssignment {
    /// Uniformly at random among `g1..gk`, independently per row.
    Random { count: usize },
    /// From the level of one factor: level id modulo `count`.
    ByFactor { factor: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub seed: u64,
    #[serde(default)]
    pub groups: Option<GroupAssignment>,
}

impl PatternSpec {
    pub fn new(kind: PatternKind, seed: u64) -> Self {
        Self { kind, seed, groups: None }
    }

    pub fn with_groups(mut self, groups: GroupAssignment) -> Self {
        self.groups = Some(groups);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[−√3, √3]`, scaled by the effect's standard deviation.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum VarianceModel {
    /// `σ²_u` indexed by subset mask; entry 0 is ignored.
    Homoscedastic { sigma_sq: Vec<f64> },
    /// `σ²_{i,u}` drawn uniformly from `[lower, upper]` for every effect instance.
    Heteroscedastic { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub mu: f64,
    pub variance: VarianceModel,
    #[serde(default)]
    pub effects: EffectDistribution,
}

impl TruthSpec {
    pub fn homoscedastic(mu: f64, sigma_sq: Vec<f64>) -> Self {
        Self { mu, variance: VarianceModel::Homoscedastic { sigma_sq }, effects: EffectDistribution::Gaussian }
    }

    pub fn heteroscedastic(mu: f64, lower: f64, upper: f64) -> Self {
        Self { mu, variance: VarianceModel::Heteroscedastic { lower, upper }, effects: EffectDistribution::Gaussian }
    }

    pub fn with_effects(mut self, effects: EffectDistribution) -> Self {
        self.effects = effects;
        self
    }

    fn validate(&self, r: usize) -> Result<(), SimError> {
        if !self.mu.is_finite() {
            return Err(SimError::InvalidSpec("mu must be finite".into()));
        }
        match &self.variance {
            VarianceModel::Homoscedastic { sigma_sq } => {
                if sigma_sq.len() != 1 << r {
                    return Err(SimError::InvalidSpec(format!(
                        "expected {} variance components, got {}",
                        1 << r,
                        sigma_sq.len()
                    )));
                }
                if sigma_sq.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                    return Err(SimError::InvalidSpec("variance components must be finite and >= 0".into()));
                }
            }
            VarianceModel::Heteroscedastic { lower, upper } => {
                if !(*lower > 0.0 && lower <= upper && upper.is_finite()) {
                    return Err(SimError::InvalidSpec(format!(
                        "need 0 < lower <= upper < inf, got [{lower}, {upper}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parses a subset label such as `"12"`, `"{1,2}"` or `"1,3"` (one based).
pub fn parse_subset(label: &str, r: usize) -> Result<FactorSubset, SimError> {
    let inner = label.trim().trim_start_matches('{').trim_end_matches('}');
    let digits: Vec<usize> = if inner.contains(',') {
        inner
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| SimError::InvalidSpec(format!("bad subset `{label}`")))?
    } else {
        inner
            .chars()
            .map(|c| c.to_digit(10).map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| SimError::InvalidSpec(format!("bad subset `{label}`")))?
    };
    let mut u = FactorSubset::EMPTY;
    for d in digits {
        if d == 0 || d > r {
            return Err(SimError::InvalidSpec(format!("factor {d} in `{label}` out of range 1..={r}")));
        }
        u = u.with(d - 1);
    }
    if u.is_empty() {
        return Err(SimError::InvalidSpec(format!("empty subset `{label}`")));
    }
    Ok(u)
}

/// Builds a mask-indexed variance vector from `(label, σ²)` pairs.
pub fn sigma_from_labels<'a>(
    r: usize,
    entries: impl IntoIterator<Item = (&'a str, f64)>,
) -> Result<Vec<f64>, SimError> {
    let mut sigma = vec![0.0; 1 << r];
    for (label, v) in entries {
        sigma[parse_subset(label, r)?.index()] = v;
    }
    Ok(sigma)
}

/// An observation pattern together with the projection structure needed to
/// draw effects quickly.
#[derive(Debug, Clone)]
pub struct Pattern {
    dataset: Dataset,
    /// Per mask: projection id of each row (ids in order of first appearance).
    projections: Arc<Vec<Vec<u32>>>,
    /// Per mask: number of distinct projections.
    projection_counts: Vec<usize>,
}

impl Pattern {
    pub fn generate(spec: &PatternSpec) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, PATTERN_STREAM));
        let indices = match &spec.kind {
            PatternKind::CompleteGrid { sizes } => grid_indices(sizes)?,
            PatternKind::SparseZipf { levels, exponents, n } => zipf_indices(levels, exponents, *n, &mut rng)?,
            PatternKind::ExplicitMask { indices } => {
                let r = indices.first().map_or(0, Vec::len);
                check_r(r)?;
                if indices.iter().any(|t| t.len() != r) {
                    return Err(SimError::InvalidSpec("index tuples differ in length".into()));
                }
                let mut seen = HashSet::new();
                if !indices.iter().all(|t| seen.insert(t)) {
                    return Err(SimError::InvalidSpec("repeated index tuple".into()));
                }
                indices.clone()
            }
        };
        let r = indices[0].len();
        let group_names = if spec.groups.is_some() { vec!["group".to_string()] } else { Vec::new() };
        let mut b = DatasetBuilder::new((1..=r).map(|j| format!("f{j}")).collect(), group_names);
        for t in &indices {
            let levels: Vec<String> = t.iter().map(u32::to_string).collect();
            let mut obs = Observation::new(&levels, 0.0);
            match &spec.groups {
                None => {}
                Some(GroupAssignment::Random { count }) => {
                    if *count == 0 {
                        return Err(SimError::InvalidSpec("group count must be positive".into()));
                    }
                    obs = obs.with_group([format!("g{}", rng.gen_range(0..*count) + 1)]);
                }
                Some(GroupAssignment::ByFactor { factor, count }) => {
                    if *factor >= r || *count == 0 {
                        return Err(SimError::InvalidSpec("invalid group assignment".into()));
                    }
                    obs = obs.with_group([format!("g{}", t[*factor] as usize % count + 1)]);
                }
            }
            b.push(&obs).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        }
        let ds = b.finish(IngestOptions::default()).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        Ok(Self::from_dataset(&ds))
    }

    /// Uses the rows of an existing dataset as the pattern.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let r = ds.r();
        let mut projections = Vec::with_capacity(1 << r);
        let mut projection_counts = Vec::with_capacity(1 << r);
        for u in FactorSubset::all(r) {
            let members: Vec<usize> = u.members().collect();
            let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
            let col: Vec<u32> = (0..ds.len())
                .map(|i| {
                    let levels = ds.level_ids(i);
                    let key: Vec<u32> = members.iter().map(|&j| levels[j]).collect();
                    let next = ids.len() as u32;
                    *ids.entry(key).or_insert(next)
                })
                .collect();
            projection_counts.push(ids.len());
            projections.push(col);
        }
        Self { dataset: ds.clone(), projections: Arc::new(projections), projection_counts }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn r(&self) -> usize {
        self.dataset.r()
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Number of distinct `u`-projections.
    pub fn projection_count(&self, u: FactorSubset) -> usize {
        self.projection_counts[u.index()]
    }

    /// Draws responses and returns them with the variances used.
    pub fn draw(&self, truth: &TruthSpec, seed: u64) -> Result<(Vec<f64>, TruthRecord), SimError> {
        let r = self.r();
        truth.validate(r)?;
        let n = self.len();
        let mut effects_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, EFFECT_STREAM));
        let mut variance_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, VARIANCE_STREAM));
        let mut values = vec![truth.mu; n];
        let mut het = Vec::with_capacity(1 << r);
        let mut effect = Vec::new();
        for u in FactorSubset::all(r) {
            if u.is_empty() {
                het.push(Vec::new());
                continue;
            }
            let count = self.projection_counts[u.index()];
            let sd: Vec<f64> = match &truth.variance {
                VarianceModel::Homoscedastic { sigma_sq } => vec![sigma_sq[u.index()].sqrt(); count],
                VarianceModel::Heteroscedastic { lower, upper } => {
                    let v: Vec<f64> = (0..count)
                        .map(|_| if lower == upper { *lower } else { variance_rng.gen_range(*lower..=*upper) })
                        .collect();
                    let sd = v.iter().map(|x| x.sqrt()).collect();
                    het.push(v);
                    sd
                }
            };
            effect.clear();
            for s in &sd {
                let z: f64 = match truth.effects {
                    EffectDistribution::Gaussian => StandardNormal.sample(&mut effects_rng),
                    EffectDistribution::Uniform => effects_rng.gen_range(-(3f64.sqrt())..3f64.sqrt()),
                };
                effect.push(s * z);
            }
            for (x, &p) in values.iter_mut().zip(&self.projections[u.index()]) {
                *x += effect[p as usize];
            }
        }
        let record = TruthRecord {
            mu: truth.mu,
            r,
            n,
            effects: truth.effects,
            sigma_sq: match &truth.variance {
                VarianceModel::Homoscedastic { sigma_sq } => Some(sigma_sq.clone()),
                VarianceModel::Heteroscedastic { .. } => None,
            },
            het: match &truth.variance {
                VarianceModel::Homoscedastic { .. } => None,
                VarianceModel::Heteroscedastic { .. } => Some(het),
            },
            projections: Arc::clone(&self.projections),
        };
        Ok((values, record))
    }

    /// Draws fresh effects with the variances of an earlier draw held fixed.
    ///
    /// For homoscedastic truth this equals `draw(spec, seed).0`.
    pub fn redraw(&self, truth: &TruthRecord, seed: u64) -> Vec<f64> {
        assert_eq!(truth.n, self.len(), "truth record belongs to another pattern");
        let mut effects_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, EFFECT_STREAM));
        let mut values = vec![truth.mu; truth.n];
        let mut effect = Vec::new();
        for u in FactorSubset::all(truth.r).skip(1) {
            let count = self.projection_counts[u.index()];
            effect.clear();
            for p in 0..count {
                let sd = match (&truth.het, &truth.sigma_sq) {
                    (Some(h), _) => h[u.index()][p].sqrt(),
                    (None, Some(s)) => s[u.index()].sqrt(),
                    (None, None) => 0.0,
                };
                let z: f64 = match truth.effects {
                    EffectDistribution::Gaussian => StandardNormal.sample(&mut effects_rng),
                    EffectDistribution::Uniform => effects_rng.gen_range(-(3f64.sqrt())..3f64.sqrt()),
                };
                effect.push(sd * z);
            }
            for (x, &p) in values.iter_mut().zip(&self.projections[u.index()]) {
                *x += effect[p as usize];
            }
        }
        values
    }

    pub fn simulate(&self, truth: &TruthSpec, seed: u64) -> Result<Simulation, SimError> {
        let (values, truth) = self.draw(truth, seed)?;
        let dataset = self.dataset.with_values(values).expect("simulated values are finite");
        Ok(Simulation { dataset, truth })
    }
}

fn check_r(r: usize) -> Result<(), SimError> {
    if r == 0 || r > MAX_FACTORS {
        return Err(SimError::InvalidSpec(format!("need 1..={MAX_FACTORS} factors, got {r}")));
    }
    Ok(())
}

fn grid_indices(sizes: &[usize]) -> Result<Vec<Vec<u32>>, SimError> {
    check_r(sizes.len())?;
    if sizes.contains(&0) {
        return Err(SimError::InvalidSpec("grid sizes must be positive".into()));
    }
    let total: usize = sizes.iter().product();
    Ok((0..total)
        .map(|mut k| {
            let mut t = vec![0u32; sizes.len()];
            for (j, &s) in sizes.iter().enumerate().rev() {
                t[j] = (k % s) as u32;
                k /= s;
            }
            t
        })
        .collect())
}

fn zipf_indices(
    levels: &[usize],
    exponents: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u32>>, SimError> {
    check_r(levels.len())?;
    if exponents.len() != levels.len() {
        return Err(SimError::InvalidSpec("one zipf exponent per factor is required".into()));
    }
    if n == 0 {
        return Err(SimError::InvalidSpec("n must be positive".into()));
    }
    let capacity = levels.iter().try_fold(1usize, |acc, &l| acc.checked_mul(l)).unwrap_or(usize::MAX);
    if n > capacity {
        return Err(SimError::InvalidSpec(format!("cannot draw {n} distinct tuples from {capacity}")));
    }
    let laws: Vec<Zipf<f64>> = levels
        .iter()
        .zip(exponents)
        .map(|(&l, &s)| Zipf::new(l as u64, s).map_err(|e| SimError::InvalidSpec(format!("zipf({l}, {s}): {e}"))))
        .collect::<Result<_, _>>()?;
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let max_attempts = 200 * n + 10_000;
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SimError::InvalidSpec(format!(
                "only {} distinct tuples after {max_attempts} draws; lower n or flatten the exponents",
                out.len()
            )));
        }
        let t: Vec<u32> = laws.iter().map(|z| z.sample(rng) as u32 - 1).collect();
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    Ok(out)
}

/// The variances behind one simulated dataset.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub mu: f64,
    pub r: usize,
    pub n: usize,
    pub effects: EffectDistribution,
    /// Homoscedastic components by mask.
    pub sigma_sq: Option<Vec<f64>>,
    /// Heteroscedastic: per mask, the variance of each projection's effect.
    pub het: Option<Vec<Vec<f64>>>,
    projections: Arc<Vec<Vec<u32>>>,
}

impl TruthRecord {
    /// `σ²_{i,u}` for row `i` and nonempty `u`.
    pub fn sigma_sq_at(&self, i: usize, u: FactorSubset) -> f64 {
        match (&self.sigma_sq, &self.het) {
            (Some(s), _) => s[u.index()],
            (None, Some(h)) => h[u.index()][self.projections[u.index()][i] as usize],
            (None, None) => unreachable!("truth record has a variance model"),
        }
    }

    pub fn is_heteroscedastic(&self) -> bool {
        self.het.is_some()
    }

    /// JSON description with one-based subset labels.
    pub fn to_json(&self, factor_names: &[String]) -> serde_json::Value {
        use serde_json::json;
        let mut components = serde_json::Map::new();
        match (&self.sigma_sq, &self.het) {
            (Some(s), _) => {
                for u in FactorSubset::all(self.r).skip(1) {
                    components.insert(u.label(), json!(s[u.index()]));
                }
            }
            (None, Some(h)) => {
                for u in FactorSubset::all(self.r).skip(1) {
                    let v = &h[u.index()];
                    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
                    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    components.insert(u.label(), json!({"instances": v.len(), "mean": mean, "min": min, "max": max}));
                }
            }
            (None, None) => {}
        }
        json!({
            "mu": self.mu,
            "n": self.n,
            "factors": factor_names,
            "model": if self.is_heteroscedastic() { "heteroscedastic" } else { "homoscedastic" },
            "effects": self.effects,
            "sigma_sq": components,
        })
    }
}

/// A simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    pub truth: TruthRecord,
}

/// Generates a pattern and draws one dataset on it.
pub fn simulate(pattern: &PatternSpec, truth: &TruthSpec, seed: u64) -> Result<Simulation, SimError> {
    Pattern::generate(pattern)?.simulate(truth, seed)
}

/// `Var(X̄)`: `(1/N) Σ_u ν_u σ²_u`, or `(1/N) Σ_u Σ_i ν_{i,u} σ²_{i,u}` in the
/// heteroscedastic case.
pub fn true_mean_variance(ds: &Dataset, truth: &TruthRecord) -> f64 {
    match &truth.sigma_sq {
        Some(sigma) => crate::diagnostics::mean_variance(&duplication_profile::<f64>(ds), sigma),
        None => {
            let counts = MatchCounts::compute(ds);
            let n = ds.len() as f64;
            let mut total = crate::exact_sum::ExactSum::new();
            for i in 0..ds.len() {
                let nu = counts.obs_nu(i);
                for u in FactorSubset::all(ds.r()).skip(1) {
                    total.add(nu[u.index()] as f64 / n * truth.sigma_sq_at(i, u));
                }
            }
            total.value() / n
        }
    }
}
