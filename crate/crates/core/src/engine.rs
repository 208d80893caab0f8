//! One-pass replicate accumulation, variance estimates, contrasts and
//! nested-factor collapse.
//!
//! For every group `g` and replicate `b` the engine accumulates
//! `T*_b = Σ W_{i,b} X_i` and `N*_b = Σ W_{i,b} M_i` (`M_i` is the row
//! multiplicity, 1 for raw data). All sums are exact ([`ExactSum`]), so shard
//! boundaries, thread counts and row order never change a result bit.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::data::{Dataset, DatasetBuilder, Observation};
use crate::diagnostics::shard_ranges;
use crate::error::EngineError;
use crate::exact_sum::ExactSum;
use crate::scalar::Real;
use crate::subset::FactorSubset;
use crate::weights::{naive_key, CounterRng, WeightConfig, WeightFamily, WeightTable};

/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 50;

/// Supplies `W_{i,b}` for every row and replicate.
pub trait WeightSource: Sync {
    fn replicates(&self) -> usize;

    /// Writes the weights of row `i` for replicates `0..B` into `out`.
    fn fill(&self, ds: &Dataset, i: usize, out: &mut [f64]);

    /// Identifies the weight settings; accumulators only merge when equal.
    fn fingerprint(&self) -> u64;
}

/// Product reweighting of the active factors' levels.
#[derive(Debug, Clone)]
pub struct ProductWeights {
    config: WeightConfig,
    table: WeightTable,
}

impl ProductWeights {
    pub fn new(ds: &Dataset, config: &WeightConfig) -> Result<Self, EngineError> {
        config.validate(ds.r())?;
        Ok(Self { config: *config, table: WeightTable::build(ds, config) })
    }

    pub fn config(&self) -> &WeightConfig {
        &self.config
    }
}

impl WeightSource for ProductWeights {
    fn replicates(&self) -> usize {
        self.config.replicates
    }

    fn fill(&self, ds: &Dataset, i: usize, out: &mut [f64]) {
        self.table.fill(ds, i, out);
    }

    fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }
}

/// One independent weight per full index (the naive Bayesian bootstrap).
#[derive(Debug, Clone, Copy)]
pub struct NaiveWeights {
    pub family: WeightFamily,
    pub master_seed: u64,
    pub replicates: usize,
}

impl WeightSource for NaiveWeights {
    fn replicates(&self) -> usize {
        self.replicates
    }

    fn fill(&self, ds: &Dataset, i: usize, out: &mut [f64]) {
        let levels: Vec<&[u8]> = (0..ds.r()).map(|j| ds.level_bytes(i, j)).collect();
        let rng = CounterRng::new(naive_key(self.master_seed, &levels));
        for (b, w) in out.iter_mut().enumerate() {
            *w = self.family.from_uniform(rng.uniform(b as u64));
        }
    }

    fn fingerprint(&self) -> u64 {
        let text = format!("naive/{}/{}/{}", self.family, self.master_seed, self.replicates);
        xxh3_64_with_seed(text.as_bytes(), 0)
    }
}

/// Multiplies every weight of replicate `b` by `scale[b]`.
///
/// Replicate means are ratios, so they must not change; this exists to test
/// exactly that.
pub struct ScaledWeights<'a> {
    pub inner: &'a dyn WeightSource,
    pub scale: Vec<f64>,
}

impl WeightSource for ScaledWeights<'_> {
    fn replicates(&self) -> usize {
        self.inner.replicates()
    }

    fn fill(&self, ds: &Dataset, i: usize, out: &mut [f64]) {
        self.inner.fill(ds, i, out);
        for (w, s) in out.iter_mut().zip(&self.scale) {
            *w *= s;
        }
    }

    fn fingerprint(&self) -> u64 {
        let bytes: Vec<u8> = self.scale.iter().flat_map(|s| s.to_le_bytes()).collect();
        xxh3_64_with_seed(&bytes, self.inner.fingerprint())
    }
}

/// Running sums for one group.
#[derive(Debug, Clone)]
pub struct GroupAccumulator {
    pub rows: u64,
    pub count: u64,
    /// `Σ X`, `Σ X²`, `Σ X³`, `Σ X⁴` over rows.
    pub power_sums: [ExactSum; 4],
    pub t_star: Vec<ExactSum>,
    pub n_star: Vec<ExactSum>,
}

impl GroupAccumulator {
    fn new(replicates: usize) -> Self {
        Self {
            rows: 0,
            count: 0,
            power_sums: Default::default(),
            t_star: vec![ExactSum::new(); replicates],
            n_star: vec![ExactSum::new(); replicates],
        }
    }

    fn push(&mut self, x: f64, m: u64, weights: &[f64]) {
        self.rows += 1;
        self.count += m;
        let x2 = x * x;
        self.power_sums[0].add(x);
        self.power_sums[1].add(x2);
        self.power_sums[2].add(x2 * x);
        self.power_sums[3].add(x2 * x2);
        let mf = m as f64;
        for ((t, n), &w) in self.t_star.iter_mut().zip(self.n_star.iter_mut()).zip(weights) {
            if w == 0.0 {
                continue;
            }
            t.add_product(w, x);
            if m == 1 {
                n.add(w);
            } else {
                n.add_product(w, mf);
            }
        }
    }

    fn merge(&mut self, other: &GroupAccumulator) {
        self.rows += other.rows;
        self.count += other.count;
        for (a, b) in self.power_sums.iter_mut().zip(&other.power_sums) {
            a.merge(b);
        }
        for (a, b) in self.t_star.iter_mut().zip(&other.t_star) {
            a.merge(b);
        }
        for (a, b) in self.n_star.iter_mut().zip(&other.n_star) {
            a.merge(b);
        }
    }
}

/// Mergeable per-group, per-replicate sums.
#[derive(Debug, Clone)]
pub struct ReplicateAccumulator {
    fingerprint: u64,
    replicates: usize,
    grouping: Vec<String>,
    groups: BTreeMap<Vec<String>, GroupAccumulator>,
}

impl ReplicateAccumulator {
    /// An accumulator with no rows; the identity for [`merge`].
    pub fn empty(source: &dyn WeightSource, grouping: &[String]) -> Self {
        Self {
            fingerprint: source.fingerprint(),
            replicates: source.replicates(),
            grouping: grouping.to_vec(),
            groups: BTreeMap::new(),
        }
    }

    /// Accumulates the given rows.
    pub fn from_rows(
        ds: &Dataset,
        rows: Range<usize>,
        source: &dyn WeightSource,
        grouping: &[String],
    ) -> Result<Self, EngineError> {
        let columns = resolve_grouping(ds, grouping)?;
        let b = source.replicates();
        let mut local: Vec<GroupAccumulator> = Vec::new();
        let mut index: HashMap<Vec<&str>, usize> = HashMap::new();
        let mut weights = vec![0.0; b];
        for i in rows {
            let key: Vec<&str> = columns.iter().map(|&c| ds.group_label(i, c)).collect();
            let next = local.len();
            let g = *index.entry(key).or_insert(next);
            if g == next {
                local.push(GroupAccumulator::new(b));
            }
            source.fill(ds, i, &mut weights);
            local[g].push(ds.value(i), ds.count(i), &weights);
        }
        let mut groups = BTreeMap::new();
        for (key, g) in index {
            groups.insert(
                key.into_iter().map(str::to_string).collect(),
                std::mem::replace(&mut local[g], GroupAccumulator::new(0)),
            );
        }
        Ok(Self { fingerprint: source.fingerprint(), replicates: b, grouping: grouping.to_vec(), groups })
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn grouping(&self) -> &[String] {
        &self.grouping
    }

    pub fn groups(&self) -> &BTreeMap<Vec<String>, GroupAccumulator> {
        &self.groups
    }

    /// Reduces the sums to replicate means and variance estimates.
    pub fn finish<F: Real>(&self) -> Result<BootstrapResult<F>, EngineError> {
        let groups = self.groups.iter().map(|(label, acc)| finish_group(label, acc)).collect::<Result<Vec<_>, _>>()?;
        Ok(BootstrapResult { replicates: self.replicates, grouping: self.grouping.clone(), groups })
    }
}

/// Field-wise sum of two accumulators built with the same settings.
pub fn merge(mut a: ReplicateAccumulator, b: &ReplicateAccumulator) -> Result<ReplicateAccumulator, EngineError> {
    if a.fingerprint != b.fingerprint || a.replicates != b.replicates || a.grouping != b.grouping {
        return Err(EngineError::ConfigMismatch);
    }
    for (label, g) in &b.groups {
        match a.groups.get_mut(label) {
            Some(existing) => existing.merge(g),
            None => {
                a.groups.insert(label.clone(), g.clone());
            }
        }
    }
    Ok(a)
}

fn resolve_grouping(ds: &Dataset, grouping: &[String]) -> Result<Vec<usize>, EngineError> {
    grouping
        .iter()
        .map(|name| ds.group_column(name).ok_or_else(|| EngineError::UnknownGroupColumn(name.clone())))
        .collect()
}

/// Bootstrap output for one group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupResult<F> {
    pub label: Vec<String>,
    pub rows: u64,
    pub count: u64,
    /// `X̄ = T / N`.
    pub mean: F,
    pub t_star: Vec<F>,
    pub n_star: Vec<F>,
    /// `T*_b / N*_b`, or `None` when `N*_b = 0`.
    pub replicate_means: Vec<Option<F>>,
    /// Number of replicates with `N*_b = 0`.
    pub dropped: usize,
    /// `(1/B') Σ_b ((T*_b − X̄ N*_b) / N)²` over the `B'` kept replicates.
    pub delta_variance: F,
    /// `(1/N) Σ (X − X̄)²` over rows.
    pub data_variance: F,
    /// Excess kurtosis of the values, when their variance is positive.
    pub data_kurtosis: Option<F>,
}

impl<F: Real> GroupResult<F> {
    /// Means of the replicates with `N*_b > 0`, in replicate order.
    pub fn kept_means(&self) -> Vec<F> {
        self.replicate_means.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapResult<F> {
    pub replicates: usize,
    pub grouping: Vec<String>,
    /// Sorted by label.
    pub groups: Vec<GroupResult<F>>,
}

impl<F: Real> BootstrapResult<F> {
    pub fn group(&self, label: &[String]) -> Option<&GroupResult<F>> {
        self.groups.iter().find(|g| g.label == label)
    }
}

fn finish_group<F: Real>(label: &[String], acc: &GroupAccumulator) -> Result<GroupResult<F>, EngineError> {
    if acc.count == 0 {
        return Err(EngineError::EmptyGroup(label.to_vec()));
    }
    let n = acc.count as f64;
    let t = acc.power_sums[0].value();
    let mean = t / n;
    let mut delta_sum = ExactSum::new();
    let mut kept = 0usize;
    let mut replicate_means = Vec::with_capacity(acc.t_star.len());
    for (ts, ns) in acc.t_star.iter().zip(&acc.n_star) {
        if ns.is_zero() {
            replicate_means.push(None);
            continue;
        }
        kept += 1;
        let n_star = ns.value();
        replicate_means.push(Some(F::of_f64(ts.value() / n_star)));
        let mut dev = ts.clone();
        dev.add_product(-mean, n_star);
        let d = dev.value() / n;
        delta_sum.add(d * d);
    }
    if kept == 0 {
        return Err(EngineError::AllReplicatesDegenerate(label.to_vec()));
    }
    let (data_variance, data_kurtosis) = central_moments(&acc.power_sums, acc.rows as f64);
    Ok(GroupResult {
        label: label.to_vec(),
        rows: acc.rows,
        count: acc.count,
        mean: F::of_f64(mean),
        t_star: acc.t_star.iter().map(|s| F::of_f64(s.value())).collect(),
        n_star: acc.n_star.iter().map(|s| F::of_f64(s.value())).collect(),
        replicate_means,
        dropped: acc.t_star.len() - kept,
        delta_variance: F::of_f64(delta_sum.value() / kept as f64),
        data_variance: F::of_f64(data_variance),
        data_kurtosis: data_kurtosis.map(F::of_f64),
    })
}

/// Population variance and excess kurtosis from raw power sums.
fn central_moments(p: &[ExactSum; 4], n: f64) -> (f64, Option<f64>) {
    let m1 = p[0].value() / n;
    let m2 = p[1].value() / n;
    let m3 = p[2].value() / n;
    let m4 = p[3].value() / n;
    let var = (m2 - m1 * m1).max(0.0);
    let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
    let kurt = (var > 0.0).then(|| c4 / (var * var) - 3.0);
    (var, kurt)
}

/// How a run is split into shards.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub shards: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { shards: rayon::current_num_threads().max(1) }
    }
}

/// Accumulates all rows in parallel shards and merges them.
pub fn accumulate(
    ds: &Dataset,
    source: &dyn WeightSource,
    grouping: &[String],
    options: RunOptions,
) -> Result<ReplicateAccumulator, EngineError> {
    resolve_grouping(ds, grouping)?;
    let parts: Vec<ReplicateAccumulator> = shard_ranges(ds.len(), options.shards.max(1))
        .into_par_iter()
        .map(|rows| ReplicateAccumulator::from_rows(ds, rows, source, grouping))
        .collect::<Result<_, _>>()?;
    parts.iter().try_fold(ReplicateAccumulator::empty(source, grouping), merge)
}

/// Runs an arbitrary weight source.
pub fn run_with_source<F: Real>(
    ds: &Dataset,
    source: &dyn WeightSource,
    grouping: &[String],
    options: RunOptions,
) -> Result<BootstrapResult<F>, EngineError> {
    accumulate(ds, source, grouping, options)?.finish()
}

/// Product-reweighted bootstrap of the group means.
pub fn run_bootstrap<F: Real>(
    ds: &Dataset,
    config: &WeightConfig,
    grouping: &[String],
) -> Result<BootstrapResult<F>, EngineError> {
    run_bootstrap_with(ds, config, grouping, RunOptions::default())
}

pub fn run_bootstrap_with<F: Real>(
    ds: &Dataset,
    config: &WeightConfig,
    grouping: &[String],
    options: RunOptions,
) -> Result<BootstrapResult<F>, EngineError> {
    let source = ProductWeights::new(ds, config)?;
    run_with_source(ds, &source, grouping, options)
}

/// Naive bootstrap: one independent weight per observation and replicate.
pub fn run_naive<F: Real>(
    ds: &Dataset,
    family: WeightFamily,
    replicates: usize,
    master_seed: u64,
    grouping: &[String],
) -> Result<BootstrapResult<F>, EngineError> {
    if replicates == 0 {
        return Err(crate::error::WeightError::NoReplicates.into());
    }
    let source = NaiveWeights { family, master_seed, replicates };
    run_with_source(ds, &source, grouping, RunOptions::default())
}

/// Interval estimates for one group or contrast.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceSummary<F> {
    pub estimate: F,
    /// Sample variance of the kept replicate values (needs two of them).
    pub s2: Option<F>,
    /// Delta-form variance estimate.
    pub delta: F,
    pub level: f64,
    pub normal_ci: Option<(F, F)>,
    pub percentile_ci: (F, F),
    pub replicates_used: usize,
    pub dropped: usize,
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted<F: Real>(sorted: &[F], p: f64) -> F {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = F::of_f64(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sample_variance<F: Real>(xs: &[F]) -> Option<F> {
    if xs.len() < 2 {
        return None;
    }
    let n = F::of_f64(xs.len() as f64);
    let mean = xs.iter().fold(F::zero(), |a, &x| a + x) / n;
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - mean) * (x - mean));
    Some(ss / (n - F::one()))
}

fn summarize<F: Real>(
    estimate: F,
    values: &[F],
    delta: F,
    dropped: usize,
    level: f64,
) -> Result<VarianceSummary<F>, EngineError> {
    if values.is_empty() {
        return Err(EngineError::InsufficientReplicates { needed: 1, have: 0 });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("replicate values are finite"));
    let alpha = 1.0 - level;
    let percentile_ci = (quantile_sorted(&sorted, alpha / 2.0), quantile_sorted(&sorted, 1.0 - alpha / 2.0));
    let s2 = sample_variance(values);
    let z = F::of_f64(Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - alpha / 2.0));
    let normal_ci = s2.map(|v| {
        let half = z * v.sqrt();
        (estimate - half, estimate + half)
    });
    Ok(VarianceSummary { estimate, s2, delta, level, normal_ci, percentile_ci, replicates_used: values.len(), dropped })
}

/// Normal and percentile intervals for one group at confidence `level`.
pub fn variance_summary<F: Real>(group: &GroupResult<F>, level: f64) -> Result<VarianceSummary<F>, EngineError> {
    summarize(group.mean, &group.kept_means(), group.delta_variance, group.dropped, level)
}

/// Replicate-wise difference of two group means.
#[derive(Debug, Clone, Serialize)]
pub struct Contrast<F> {
    pub a: Vec<String>,
    pub b: Vec<String>,
    /// `X̄_A − X̄_B`.
    pub difference: F,
    /// `d_b` for replicates where both groups are non-degenerate.
    pub replicate_differences: Vec<F>,
    pub summary: VarianceSummary<F>,
    /// Sorted `(d, rank / B')` pairs.
    pub ecdf: Vec<(F, F)>,
}

pub fn contrast<F: Real>(
    result: &BootstrapResult<F>,
    a: &[String],
    b: &[String],
    level: f64,
) -> Result<Contrast<F>, EngineError> {
    let ga = result.group(a).ok_or_else(|| EngineError::MissingGroup(a.to_vec()))?;
    let gb = result.group(b).ok_or_else(|| EngineError::MissingGroup(b.to_vec()))?;
    let difference = ga.mean - gb.mean;
    let diffs: Vec<F> =
        ga.replicate_means.iter().zip(&gb.replicate_means).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
    let dropped = result.replicates - diffs.len();
    let delta = if diffs.is_empty() {
        F::zero()
    } else {
        diffs.iter().fold(F::zero(), |acc, &d| acc + (d - difference) * (d - difference))
            / F::of_f64(diffs.len() as f64)
    };
    let summary = summarize(difference, &diffs, delta, dropped, level)?;
    let mut sorted = diffs.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
    let total = F::of_f64(sorted.len() as f64);
    let ecdf = sorted.iter().enumerate().map(|(k, &d)| (d, F::of_f64((k + 1) as f64) / total)).collect();
    Ok(Contrast { a: a.to_vec(), b: b.to_vec(), difference, replicate_differences: diffs, summary, ecdf })
}

/// Collapses rows to one per distinct projection on `outer`, with value
/// `T = Σ X` and multiplicity `M = Σ M_i`.
///
/// Factor positions used for weight hashing are preserved, so a product
/// bootstrap on the collapsed data reweights exactly like an outer-only
/// bootstrap of the original rows. Group labels must be constant within each
/// outer cell.
pub fn collapse_nested(ds: &Dataset, outer: FactorSubset) -> Result<Dataset, EngineError> {
    if outer.is_empty() || !outer.fits(ds.r()) {
        return Err(EngineError::InvalidOuter(outer.label()));
    }
    let members: Vec<usize> = outer.members().collect();
    let mut cells: Vec<(usize, ExactSum, u64)> = Vec::new();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    for i in 0..ds.len() {
        let ids = ds.level_ids(i);
        let key: Vec<u32> = members.iter().map(|&j| ids[j]).collect();
        let next = cells.len();
        let c = *index.entry(key).or_insert(next);
        if c == next {
            cells.push((i, ExactSum::new(), 0));
        } else if (0..ds.group_names().len()).any(|g| ds.group_label(i, g) != ds.group_label(cells[c].0, g)) {
            return Err(EngineError::GroupNotNested);
        }
        cells[c].1.add(ds.value(i));
        cells[c].2 += ds.count(i);
    }
    let names: Vec<String> = members.iter().map(|&j| ds.factor_names()[j].clone()).collect();
    let mut b = DatasetBuilder::new(names, ds.group_names().to_vec());
    for (first, total, count) in &cells {
        let obs = Observation {
            levels: members.iter().map(|&j| ds.level_bytes(*first, j).to_vec()).collect(),
            value: total.value(),
            group: ds.group_labels(*first),
        };
        b.push_row(&obs, *count).expect("rows of a valid dataset are valid");
    }
    let keys = members.iter().map(|&j| ds.factor_key(j) as u32).collect();
    Ok(b.finish_unchecked().with_counts().with_factor_keys(keys))
}

/// Predicted variance of the naive-bootstrap variance estimators over the
/// weights, with the data held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityPrediction {
    /// For the delta-form estimator.
    pub delta: f64,
    /// For the replicate sample variance; needs `B ≥ 2`.
    pub s2: Option<f64>,
}

/// `σ⁴τ⁴/(BN²)·(2 + κ(κ_x+3)/N)`, and the same with `2B/(B−1)` in place of 2.
pub fn stability_prediction(
    sigma_sq: f64,
    kappa_x: f64,
    family: WeightFamily,
    replicates: usize,
    n: usize,
) -> StabilityPrediction {
    let tau_sq = family.tau_sq();
    let b = replicates as f64;
    let nf = n as f64;
    let scale = sigma_sq * sigma_sq * tau_sq * tau_sq / (b * nf * nf);
    let extra = family.kurtosis() * (kappa_x + 3.0) / nf;
    StabilityPrediction {
        delta: scale * (2.0 + extra),
        s2: (replicates >= 2).then(|| scale * (2.0 * b / (b - 1.0) + extra)),
    }
}
