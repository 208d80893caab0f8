//! Definition-level reference computations for small datasets, a Monte Carlo
//! harness, and the verification suites built from them.
//!
//! Everything here works from pair sums over all ordered pairs of rows and
//! shares no code path with the projection-table statistics in
//! [`crate::diagnostics`], which is what makes the comparisons meaningful.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{read_csv, Dataset, IngestOptions, Schema};
use crate::diagnostics::{self, duplication_profile};
use crate::engine::{self, collapse_nested, run_bootstrap_with, run_naive, stability_prediction, RunOptions};
use crate::error::OracleError;
use crate::exact_sum::ExactSum;
use crate::scalar::{relative_error, CompensatedSum, Scalar};
use crate::simulator::{Pattern, PatternKind, PatternSpec, TruthRecord, TruthSpec};
use crate::subset::FactorSubset;
use crate::weights::{derive_seed, WeightConfig, WeightFamily};

/// Largest dataset accepted by the quadratic-time oracles.
pub const BRUTE_LIMIT: usize = 2000;

fn check_size(ds: &Dataset) -> Result<(), OracleError> {
    if ds.len() > BRUTE_LIMIT {
        return Err(OracleError::TooLarge { n: ds.len(), limit: BRUTE_LIMIT });
    }
    Ok(())
}

fn match_mask(ds: &Dataset, i: usize, k: usize) -> FactorSubset {
    let (a, b) = (ds.level_ids(i), ds.level_ids(k));
    FactorSubset::from_members((0..ds.r()).filter(|&j| a[j] == b[j]))
}

/// Per-row match counts `N_{i,u}` and `N_{i,k}` from the pair definition.
#[derive(Debug, Clone)]
pub struct BruteCounts {
    pub r: usize,
    pub n: usize,
    /// `N_{i,u}`, row-major `N × 2^r`.
    pub nu: Vec<u64>,
    /// `N_{i,k}`, row-major `N × (r+1)`.
    pub nk: Vec<u64>,
    /// Number of ordered pairs with `|M| = k` and `u ⊆ M`, row-major `(r+1) × 2^r`.
    pub pairs_ku: Vec<u64>,
}

impl BruteCounts {
    pub fn compute(ds: &Dataset) -> Result<Self, OracleError> {
        check_size(ds)?;
        let (r, n) = (ds.r(), ds.len());
        let s = 1usize << r;
        let mut nu = vec![0u64; n * s];
        let mut nk = vec![0u64; n * (r + 1)];
        let mut pairs_ku = vec![0u64; (r + 1) * s];
        for i in 0..n {
            for k in 0..n {
                let m = match_mask(ds, i, k);
                nk[i * (r + 1) + m.len()] += 1;
                for u in m.subsets() {
                    nu[i * s + u.index()] += 1;
                    pairs_ku[m.len() * s + u.index()] += 1;
                }
            }
        }
        Ok(Self { r, n, nu, nk, pairs_ku })
    }

    pub fn n_iu(&self, i: usize, u: FactorSubset) -> u64 {
        self.nu[i * (1 << self.r) + u.index()]
    }

    pub fn n_ik(&self, i: usize, k: usize) -> u64 {
        self.nk[i * (self.r + 1) + k]
    }
}

/// `ρ_k`, `ν_{k,u}`, `ν̃_{k,u}` and `ν_u` from explicit pair loops.
#[derive(Debug, Clone)]
pub struct BruteMatchStatistics<T> {
    pub r: usize,
    pub n: usize,
    pub rho: Vec<T>,
    /// Row-major `(r+1) × 2^r`.
    pub nu_ku: Vec<T>,
    /// Row-major `(r+1) × 2^r`.
    pub nu_tilde_ku: Vec<T>,
    /// Indexed by mask.
    pub nu: Vec<T>,
}

pub fn brute_match_statistics<T: Scalar>(ds: &Dataset) -> Result<BruteMatchStatistics<T>, OracleError> {
    let c = BruteCounts::compute(ds)?;
    let (r, n) = (c.r, c.n);
    let s = 1usize << r;
    let nn = n as u128;
    let rho = (0..=r).map(|k| T::from_ratio(c.pairs_ku[k * s] as i128, nn * nn)).collect();
    let nu_ku = c.pairs_ku.iter().map(|&x| T::from_ratio(x as i128, nn)).collect();
    let mut nu_tilde_ku = Vec::with_capacity((r + 1) * s);
    for k in 0..=r {
        for u in 0..s {
            let total: u128 = (0..n).map(|i| c.nu[i * s + u] as u128 * c.n_ik(i, k) as u128).sum();
            nu_tilde_ku.push(T::from_ratio(total as i128, nn * nn));
        }
    }
    let nu = (0..s).map(|u| T::from_ratio((0..n).map(|i| c.nu[i * s + u] as i128).sum(), nn)).collect();
    Ok(BruteMatchStatistics { r, n, rho, nu_ku, nu_tilde_ku, nu })
}

/// `E_RE(Y_i Y_k)` with `Y = X − X̄`, from the pair-level covariance identity:
/// `Σ_u (1{i_u = k_u} σ²_{i,u} − ν_{i,u} σ²_{i,u} − ν_{k,u} σ²_{k,u} + avg_i(ν_{i,u} σ²_{i,u}))`.
pub fn expected_re_cross_moment<T: Scalar>(
    ds: &Dataset,
    counts: &BruteCounts,
    i: usize,
    k: usize,
    sigma_sq: &dyn Fn(usize, FactorSubset) -> T,
) -> T {
    let n = counts.n;
    let nn = n as u128;
    let m = match_mask(ds, i, k);
    let mut acc = CompensatedSum::new();
    for u in FactorSubset::all(counts.r).skip(1) {
        let avg: CompensatedSum<T> =
            (0..n).map(|l| T::from_ratio(counts.n_iu(l, u) as i128, nn) * sigma_sq(l, u)).collect();
        if u.is_subset_of(m) {
            acc.add(sigma_sq(i, u));
        }
        acc.add(-(T::from_ratio(counts.n_iu(i, u) as i128, nn) * sigma_sq(i, u)));
        acc.add(-(T::from_ratio(counts.n_iu(k, u) as i128, nn) * sigma_sq(k, u)));
        acc.add(avg.value() / T::of_usize(n));
    }
    acc.value()
}

/// `E_RE(Var̃_PW(X̄*)) = (1/N²) Σ_i Σ_k E_RE(Y_i Y_k) (1+τ²)^{|M_{ik}|}`.
///
/// The cross moments come from centering the covariance matrix
/// `C_{ik} = Σ_{∅≠u⊆M_{ik}} σ²_{i,u}` on both sides:
/// `E(Y_i Y_k) = C_{ik} − c_i/N − c_k/N + s/N²` with row sums `c` and total `s`.
pub fn brute_pairwise_variance<T: Scalar>(
    ds: &Dataset,
    sigma_sq: &dyn Fn(usize, FactorSubset) -> T,
    tau_sq: T,
) -> Result<T, OracleError> {
    check_size(ds)?;
    let (r, n) = (ds.r(), ds.len());
    let base = T::one() + tau_sq;
    let pows: Vec<T> = (0..=r).map(|k| base.powi(k as u32)).collect();
    let mut row_c = vec![CompensatedSum::<T>::new(); n];
    let mut row_p = vec![CompensatedSum::<T>::new(); n];
    let mut weighted = CompensatedSum::<T>::new();
    for i in 0..n {
        for k in 0..n {
            let m = match_mask(ds, i, k);
            let c: CompensatedSum<T> = m.subsets().skip(1).map(|u| sigma_sq(i, u)).collect();
            let c = c.value();
            let p = pows[m.len()].clone();
            weighted.add(c.clone() * p.clone());
            row_c[i].add(c);
            row_p[i].add(p);
        }
    }
    let nt = T::of_usize(n);
    let row_c: Vec<T> = row_c.iter().map(CompensatedSum::value).collect();
    let row_p: Vec<T> = row_p.iter().map(CompensatedSum::value).collect();
    let total_c: CompensatedSum<T> = row_c.iter().cloned().collect();
    let total_p: CompensatedSum<T> = row_p.iter().cloned().collect();
    let cross: CompensatedSum<T> = row_c.iter().zip(&row_p).map(|(c, p)| c.clone() * p.clone()).collect();
    let two = T::one() + T::one();
    let sum = weighted.value() - two * cross.value() / nt.clone()
        + total_c.value() * total_p.value() / (nt.clone() * nt.clone());
    Ok(sum / (nt.clone() * nt))
}

/// The same quantity summed pair by pair from [`expected_re_cross_moment`].
pub fn pairwise_variance_from_cross_moments<T: Scalar>(
    ds: &Dataset,
    sigma_sq: &dyn Fn(usize, FactorSubset) -> T,
    tau_sq: T,
) -> Result<T, OracleError> {
    let counts = BruteCounts::compute(ds)?;
    let base = T::one() + tau_sq;
    let n = ds.len();
    let mut acc = CompensatedSum::new();
    for i in 0..n {
        for k in 0..n {
            let p = base.powi(match_mask(ds, i, k).len() as u32);
            acc.add(expected_re_cross_moment(ds, &counts, i, k, sigma_sq) * p);
        }
    }
    let nt = T::of_usize(n);
    Ok(acc.value() / (nt.clone() * nt))
}

/// `γ_u` from the pair definition: `N` times the pairwise variance with
/// `σ²_v = 1{v = u}`.
pub fn brute_pairwise_gain<T: Scalar>(ds: &Dataset, u: FactorSubset, tau_sq: T) -> Result<T, OracleError> {
    let unit = move |_: usize, v: FactorSubset| if v == u { T::one() } else { T::zero() };
    Ok(brute_pairwise_variance(ds, &unit, tau_sq)? * T::of_usize(ds.len()))
}

/// Homoscedastic components as a `σ²(i, u)` callback.
pub fn homoscedastic<T: Scalar>(sigma_sq: &[f64]) -> impl Fn(usize, FactorSubset) -> T + '_ {
    move |_, u| T::from_f64(sigma_sq[u.index()]).expect("finite variance")
}

/// Variance components of a simulated dataset as a `σ²(i, u)` callback.
pub fn from_truth(truth: &TruthRecord) -> impl Fn(usize, FactorSubset) -> f64 + '_ {
    move |i, u| truth.sigma_sq_at(i, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveMode {
    Resample,
    Reweight { tau_sq: f64 },
}

/// Expected naive bootstrap variance `(1/N) Σ_u σ²_u (1 − ν_u/N)`, times `τ²`
/// for reweighting.
pub fn naive_expectation(ds: &Dataset, sigma_sq: &[f64], mode: NaiveMode) -> f64 {
    let d = duplication_profile::<f64>(ds);
    let n = ds.len() as f64;
    let base: f64 =
        FactorSubset::all(ds.r()).skip(1).map(|u| sigma_sq[u.index()] * (1.0 - d.nu(u) / n)).sum::<f64>() / n;
    match mode {
        NaiveMode::Resample => base,
        NaiveMode::Reweight { tau_sq } => tau_sq * base,
    }
}

/// Mean of a Monte Carlo sample with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

/// Sample variance of a Monte Carlo sample with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McVariance {
    pub variance: f64,
    pub se: f64,
    pub reps: usize,
}

/// Runs `f(seed_k)` for `reps` derived seeds in parallel; results are in
/// repetition order, so the output does not depend on the thread count.
pub fn monte_carlo_samples(reps: usize, seed: u64, f: impl Fn(u64) -> f64 + Sync) -> Vec<f64> {
    (0..reps as u64).into_par_iter().map(|k| f(derive_seed(seed, k))).collect()
}

pub fn mean_with_se(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<ExactSum>().value() / n;
    let ss = xs.iter().map(|x| (x - mean).powi(2)).collect::<ExactSum>().value();
    let var = if xs.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    McEstimate { mean, se: (var / n).sqrt(), reps: xs.len() }
}

/// Unbiased sample variance with a standard error from the fourth central moment.
pub fn variance_with_se(xs: &[f64]) -> McVariance {
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<ExactSum>().value() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).collect::<ExactSum>().value() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).collect::<ExactSum>().value() / n;
    let variance = m2 * n / (n - 1.0);
    let se = ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
    McVariance { variance, se, reps: xs.len() }
}

pub fn monte_carlo(reps: usize, seed: u64, f: impl Fn(u64) -> f64 + Sync) -> McEstimate {
    mean_with_se(&monte_carlo_samples(reps, seed, f))
}

/// Estimator evaluated on each simulated dataset by [`mc_estimator_expectation`].
#[derive(Debug, Clone, Copy)]
pub enum Estimator {
    /// Delta-form product-bootstrap variance; the seed field is replaced per draw.
    ProductDelta(WeightConfig),
    /// Delta-form naive-bootstrap variance.
    NaiveDelta { family: WeightFamily, replicates: usize },
    /// The sample mean itself.
    Mean,
}

/// Mean and standard error of `estimator` over `data_draws` simulated datasets.
pub fn mc_estimator_expectation(
    pattern: &Pattern,
    truth: &TruthSpec,
    estimator: Estimator,
    data_draws: usize,
    seed: u64,
) -> McEstimate {
    monte_carlo(data_draws, seed, |s| {
        let sim = pattern.simulate(truth, s).expect("valid truth spec");
        let ds = &sim.dataset;
        match estimator {
            Estimator::Mean => ds.values().iter().sum::<f64>() / ds.len() as f64,
            Estimator::ProductDelta(config) => {
                let config = WeightConfig { master_seed: derive_seed(s, 0x5eed), ..config };
                let res =
                    run_bootstrap_with::<f64>(ds, &config, &[], RunOptions { shards: 1 }).expect("bootstrap runs");
                res.groups[0].delta_variance
            }
            Estimator::NaiveDelta { family, replicates } => {
                let res =
                    run_naive::<f64>(ds, family, replicates, derive_seed(s, 0x5eed), &[]).expect("bootstrap runs");
                res.groups[0].delta_variance
            }
        }
    })
}

/// One checked quantity.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub quantity: String,
    pub formula: f64,
    pub reference: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: String,
    pub passed: bool,
}

impl OracleReport {
    /// Passes when the relative error is at most `tol`.
    pub fn relative(suite: &str, quantity: impl Into<String>, formula: f64, reference: f64, tol: f64) -> Self {
        let rel = relative_error(formula, reference);
        Self {
            suite: suite.into(),
            quantity: quantity.into(),
            formula,
            reference,
            abs_error: (formula - reference).abs(),
            rel_error: rel,
            tolerance: format!("rel <= {tol:e}"),
            passed: rel <= tol,
        }
    }

    /// Passes when the formula lies within `k` standard errors of a Monte Carlo
    /// estimate.
    pub fn monte_carlo(suite: &str, quantity: impl Into<String>, formula: f64, estimate: f64, se: f64, k: f64) -> Self {
        let abs = (formula - estimate).abs();
        Self {
            suite: suite.into(),
            quantity: quantity.into(),
            formula,
            reference: estimate,
            abs_error: abs,
            rel_error: relative_error(formula, estimate),
            tolerance: format!("|diff| <= {k} se (se = {se:.3e})"),
            passed: abs <= k * se,
        }
    }

    /// Passes when `value` lies in `[lower, upper]`.
    pub fn within(suite: &str, quantity: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        let gap = if value < lower {
            lower - value
        } else if value > upper {
            value - upper
        } else {
            0.0
        };
        let nearest = if value < lower { lower } else { upper };
        Self {
            suite: suite.into(),
            quantity: quantity.into(),
            formula: value,
            reference: nearest,
            abs_error: gap,
            rel_error: gap / nearest.abs().max(1e-30),
            tolerance: format!("in [{lower:.6e}, {upper:.6e}]"),
            passed: gap == 0.0,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: formula={:.12e} reference={:.12e} rel_err={:.3e} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.quantity,
            self.formula,
            self.reference,
            self.rel_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identities,
    Gains,
    Naive,
    Stability,
    Het,
    Nested,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Identities, Suite::Gains, Suite::Naive, Suite::Stability, Suite::Het, Suite::Nested];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Gains => "gains",
            Suite::Naive => "naive",
            Suite::Stability => "stability",
            Suite::Het => "het",
            Suite::Nested => "nested",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            format!("unknown suite `{s}`; expected one of identities, gains, naive, stability, het, nested")
        })
    }
}

const FIXTURES: [(&str, &str); 3] = [
    ("d3", include_str!("../fixtures/d3.csv")),
    ("grid_3x4", include_str!("../fixtures/grid_3x4.csv")),
    ("sparse_r3", include_str!("../fixtures/sparse_r3.csv")),
];

/// The small datasets shipped with the crate, by name.
pub fn fixtures() -> Vec<(&'static str, Dataset)> {
    FIXTURES
        .iter()
        .map(|(name, text)| {
            let header: Vec<String> = text.lines().next().unwrap_or_default().split(',').map(str::to_string).collect();
            let factors: Vec<String> = header.iter().filter(|h| *h != "value").cloned().collect();
            let ds = read_csv(text.as_bytes(), &Schema::new(factors, "value"), IngestOptions::default())
                .expect("fixtures are valid");
            (*name, ds)
        })
        .collect()
}

fn random_pattern(seed: u64, r: usize, n: usize, explicit: bool) -> Pattern {
    let levels: Vec<usize> = (0..r).map(|j| 6 + 5 * j + (seed as usize % 7)).collect();
    let capacity: usize = levels.iter().product();
    let n = n.min(capacity * 2 / 3).max(1);
    let kind = if explicit {
        let mut state = derive_seed(seed, 99);
        let mut next = move |m: usize| {
            state = derive_seed(state, 1);
            (state % m as u64) as u32
        };
        let mut indices: Vec<Vec<u32>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while indices.len() < n {
            let t: Vec<u32> = levels.iter().map(|&l| next(l)).collect();
            if seen.insert(t.clone()) {
                indices.push(t);
            }
        }
        PatternKind::ExplicitMask { indices }
    } else {
        PatternKind::SparseZipf { levels: levels.iter().map(|l| l * 3).collect(), exponents: vec![1.1; r], n }
    };
    Pattern::generate(&PatternSpec::new(kind, seed)).expect("pattern parameters are feasible")
}

/// Small random patterns alternating sparse Zipf and explicit masks, `r ∈ {1,2,3}`.
pub fn sweep_patterns(count: usize, seed: u64, max_n: usize) -> Vec<Pattern> {
    (0..count)
        .map(|k| {
            let s = derive_seed(seed, k as u64);
            let n = 5 + (s as usize % (max_n - 4));
            random_pattern(s, 1 + k % 3, n, k % 2 == 1)
        })
        .collect()
}

/// Variance components with every nonempty subset present.
pub fn sweep_sigma(r: usize, variant: usize) -> Vec<f64> {
    FactorSubset::all(r)
        .map(|u| if u.is_empty() { 0.0 } else { 0.25 + ((u.index() * 7 + variant * 3) % 5) as f64 * 0.5 })
        .collect()
}

/// Runs one verification suite on the shipped fixtures and small simulations.
pub fn run_suite(suite: Suite) -> Vec<OracleReport> {
    match suite {
        Suite::Identities => suite_identities(),
        Suite::Gains => suite_gains(),
        Suite::Naive => suite_naive(),
        Suite::Stability => suite_stability(),
        Suite::Het => suite_het(),
        Suite::Nested => suite_nested(),
    }
}

fn suite_identities() -> Vec<OracleReport> {
    let name = "identities";
    let mut out = Vec::new();
    let mut datasets = fixtures();
    for (k, p) in sweep_patterns(12, 11, 120).into_iter().enumerate() {
        datasets.push((if k % 2 == 0 { "sweep_zipf" } else { "sweep_mask" }, p.dataset().clone()));
    }
    for (label, ds) in &datasets {
        let brute = brute_match_statistics::<f64>(ds).expect("small");
        let (d, m) = diagnostics::profiles::<f64>(ds);
        let s = 1 << ds.r();
        let mut worst: f64 = 0.0;
        for k in 0..=ds.r() {
            worst = worst.max(relative_error(m.rho[k], brute.rho[k]));
            for u in 0..s {
                let u_set = FactorSubset::from_mask(u as u16);
                worst = worst.max(relative_error(*m.nu_ku(k, u_set), brute.nu_ku[k * s + u]));
                worst = worst.max(relative_error(*m.nu_tilde_ku(k, u_set), brute.nu_tilde_ku[k * s + u]));
            }
        }
        for u in FactorSubset::all(ds.r()) {
            worst = worst.max(relative_error(*d.nu(u), brute.nu[u.index()]));
        }
        out.push(
            OracleReport::relative(
                name,
                format!("{label} (N={}, r={}) match statistics", ds.len(), ds.r()),
                worst,
                0.0,
                0.0,
            )
            .with_abs(worst, 1e-12),
        );

        let sigma = sweep_sigma(ds.r(), 0);
        let counts = BruteCounts::compute(ds).expect("small");
        let f = homoscedastic::<f64>(&sigma);
        let mut total = CompensatedSum::new();
        let mut scale = CompensatedSum::new();
        for i in 0..ds.len() {
            for k in 0..ds.len() {
                let v = expected_re_cross_moment(ds, &counts, i, k, &f);
                scale.add(v.abs());
                total.add(v);
            }
        }
        out.push(
            OracleReport::relative(name, format!("{label} sum of E(Y_i Y_k) over all pairs"), total.value(), 0.0, 0.0)
                .with_abs(total.value().abs(), 1e-10 * scale.value().max(1.0)),
        );
    }
    out
}

impl OracleReport {
    /// Replaces the pass criterion with `|error| <= tol` (for zero references).
    pub fn with_abs(mut self, error: f64, tol: f64) -> Self {
        self.abs_error = error.abs();
        self.tolerance = format!("abs <= {tol:e}");
        self.passed = error.abs() <= tol;
        self
    }
}

fn suite_gains() -> Vec<OracleReport> {
    let name = "gains";
    let mut out = Vec::new();

    // exact arithmetic on the smallest fixture
    let (_, d3) = fixtures().into_iter().next().expect("d3 fixture");
    let (d, m) = diagnostics::profiles::<crate::Exact>(&d3);
    let gains = diagnostics::exact_gains(&m, &d, crate::Exact::from_ratio(1, 1)).expect("tau > 0");
    let brute = brute_pairwise_gain::<crate::Exact>(&d3, FactorSubset::singleton(0), crate::Exact::from_ratio(1, 1))
        .expect("small");
    out.push(
        OracleReport::relative(name, "d3 gamma_{1} exact rational", gains[1].to_f64_lossy(), brute.to_f64_lossy(), 0.0)
            .with_abs(if gains[1] == brute { 0.0 } else { 1.0 }, 0.0),
    );

    let mut datasets: Vec<(String, Dataset)> = fixtures().into_iter().map(|(n, d)| (n.to_string(), d)).collect();
    for (k, p) in sweep_patterns(20, 23, 150).into_iter().enumerate() {
        datasets.push((format!("sweep{k}"), p.dataset().clone()));
    }
    for (label, ds) in &datasets {
        let (d, m) = diagnostics::profiles::<f64>(ds);
        for (variant, tau_sq) in [(0usize, 1.0f64), (1, 0.5), (2, 3.0)] {
            let sigma = sweep_sigma(ds.r(), variant);
            let gains = diagnostics::exact_gains(&m, &d, tau_sq).expect("tau > 0");
            let fast = diagnostics::expected_product_variance(&gains, &sigma, ds.len());
            let brute = brute_pairwise_variance(ds, &homoscedastic::<f64>(&sigma), tau_sq).expect("small");
            out.push(OracleReport::relative(
                name,
                format!("{label} (N={}, r={}) tau2={tau_sq} sum gamma sigma2 / N", ds.len(), ds.r()),
                fast,
                brute,
                1e-10,
            ));
        }
        let approx = diagnostics::approx_gains(&d, 1.0).expect("tau > 0");
        let bounds = diagnostics::gain_bounds(&d, 1.0).expect("tau = 1");
        let gains = diagnostics::exact_gains(&m, &d, 1.0).expect("tau > 0");
        for u in FactorSubset::all(ds.r()).skip(1) {
            let a = &approx[u.index()];
            out.push(OracleReport::within(
                name,
                format!("{label} gamma_{} within approximation radius", u.label()),
                gains[u.index()],
                a.point - a.radius - 1e-9,
                a.point + a.radius + 1e-9,
            ));
            let nu = *d.nu(u);
            let (lo, hi) = bounds[u.index()];
            out.push(OracleReport::within(
                name,
                format!("{label} gamma_{} / nu within bounds", u.label()),
                gains[u.index()] / nu,
                lo - 1e-9,
                hi + 1e-9,
            ));
        }
    }
    out
}

fn suite_naive() -> Vec<OracleReport> {
    let name = "naive";
    let pattern = Pattern::generate(&PatternSpec::new(
        PatternKind::SparseZipf { levels: vec![40, 60], exponents: vec![1.2, 0.9], n: 150 },
        4,
    ))
    .expect("feasible");
    let sigma = vec![0.0, 1.0, 0.5, 0.8];
    let truth = TruthSpec::homoscedastic(0.0, sigma.clone());
    let mut out = Vec::new();
    for family in [WeightFamily::DoubleOrNothing, WeightFamily::Exp1] {
        let est = mc_estimator_expectation(&pattern, &truth, Estimator::NaiveDelta { family, replicates: 20 }, 600, 17);
        let expect = naive_expectation(pattern.dataset(), &sigma, NaiveMode::Reweight { tau_sq: family.tau_sq() });
        out.push(OracleReport::monte_carlo(
            name,
            format!("naive delta expectation ({family})"),
            expect,
            est.mean,
            est.se,
            5.0,
        ));
    }
    let d3 = &fixtures()[0].1;
    out.push(OracleReport::relative(
        name,
        "d3 naive expectation",
        naive_expectation(d3, &[0.0, 1.0, 1.0, 1.0], NaiveMode::Resample),
        14.0 / 27.0,
        1e-14,
    ));
    out
}

/// Fixed heavy-tailed data used by the stability checks.
pub fn stability_data(n: usize, outliers: usize, outlier_value: f64) -> Dataset {
    let idx: Vec<Vec<u32>> = (0..n as u32).map(|i| vec![i]).collect();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if i < outliers {
                sign * outlier_value
            } else {
                sign * (1.0 + (i % 3) as f64 * 0.25)
            }
        })
        .collect();
    crate::data::dataset_from_indices(&idx, &values).expect("distinct indices")
}

/// Empirical variance of the naive delta-form and `s²` estimates over
/// `meta_reps` independent weight seeds, with the data held fixed.
pub fn naive_stability(
    ds: &Dataset,
    family: WeightFamily,
    replicates: usize,
    meta_reps: usize,
    seed: u64,
) -> (McVariance, McVariance) {
    let runs: Vec<(f64, f64)> = (0..meta_reps as u64)
        .into_par_iter()
        .map(|k| {
            let res = run_naive::<f64>(ds, family, replicates, derive_seed(seed, k), &[]).expect("bootstrap runs");
            let s = engine::variance_summary(&res.groups[0], 0.95).expect("replicates kept");
            (s.delta, s.s2.unwrap_or(f64::NAN))
        })
        .collect();
    let delta: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let s2: Vec<f64> = runs.iter().map(|r| r.1).collect();
    (variance_with_se(&delta), variance_with_se(&s2))
}

fn suite_stability() -> Vec<OracleReport> {
    let name = "stability";
    let ds = stability_data(200, 2, 20.0);
    let res = run_naive::<f64>(&ds, WeightFamily::Poisson1, 2, 0, &[]).expect("runs");
    let g = &res.groups[0];
    let (sigma_sq, kappa_x) = (g.data_variance, g.data_kurtosis.expect("nonconstant data"));
    let mut out = Vec::new();
    for family in [WeightFamily::DoubleOrNothing, WeightFamily::Poisson1, WeightFamily::Exp1] {
        let (delta, _) = naive_stability(&ds, family, 50, 300, 5);
        let pred = stability_prediction(sigma_sq, kappa_x, family, 50, ds.len());
        out.push(OracleReport::monte_carlo(
            name,
            format!("Var of delta estimate ({family})"),
            pred.delta,
            delta.variance,
            delta.se,
            5.0,
        ));
    }
    out
}

fn suite_het() -> Vec<OracleReport> {
    let name = "het";
    let mut out = Vec::new();
    for (k, p) in sweep_patterns(9, 41, 80).into_iter().enumerate() {
        let sim = p.simulate(&TruthSpec::heteroscedastic(0.0, 0.5, 2.0), derive_seed(41, k as u64)).expect("valid");
        let ds = &sim.dataset;
        let counts = diagnostics::MatchCounts::compute(ds);
        let sigma = from_truth(&sim.truth);
        let report = diagnostics::het_gains(&counts, 1.0, Some(&sigma)).expect("positive variances");
        let totals = report.totals.expect("variances supplied");
        let brute = brute_pairwise_variance(ds, &sigma, 1.0).expect("small");
        let via_moments = pairwise_variance_from_cross_moments(ds, &sigma, 1.0).expect("small");
        let label = format!("sweep{k} (N={}, r={})", ds.len(), ds.r());
        out.push(OracleReport::relative(
            name,
            format!("{label} het totals vs centered covariance"),
            totals.expected_bootstrap_variance,
            brute,
            1e-10,
        ));
        out.push(OracleReport::relative(
            name,
            format!("{label} het totals vs cross moments"),
            totals.expected_bootstrap_variance,
            via_moments,
            1e-10,
        ));
        let truth = crate::simulator::true_mean_variance(ds, &sim.truth);
        out.push(OracleReport::relative(name, format!("{label} true variance"), totals.true_variance, truth, 1e-12));
    }
    out
}

fn suite_nested() -> Vec<OracleReport> {
    let name = "nested";
    let mut out = Vec::new();
    for k in 0..4u64 {
        let ds = nested_dataset(derive_seed(7, k), 40, 3);
        let outer = FactorSubset::from_members([0, 1]);
        let collapsed = collapse_nested(&ds, outer).expect("outer factors valid");
        let config = WeightConfig::new(WeightFamily::Exp1, derive_seed(8, k), outer, 30);
        let a = run_bootstrap_with::<f64>(&ds, &config, &[], RunOptions { shards: 2 }).expect("runs");
        let cfg_c = WeightConfig { active_factors: FactorSubset::full(2), ..config };
        let b = run_bootstrap_with::<f64>(&collapsed, &cfg_c, &[], RunOptions { shards: 3 }).expect("runs");
        let worst = a.groups[0]
            .replicate_means
            .iter()
            .zip(&b.groups[0].replicate_means)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => relative_error(*y, *x),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        out.push(
            OracleReport::relative(
                name,
                format!("nested draw {k}: collapsed vs outer-only replicate means"),
                worst,
                0.0,
                0.0,
            )
            .with_abs(worst, 1e-12),
        );
    }
    out
}

/// Random data with two crossed outer factors and a nested replicate factor.
pub fn nested_dataset(seed: u64, cells: usize, max_reps: usize) -> Dataset {
    use crate::data::{dataset_from_observations, Observation};
    let mut obs = Vec::new();
    let mut state = seed;
    let mut next = move || {
        state = derive_seed(state, 1);
        state
    };
    let mut seen = std::collections::HashSet::new();
    while seen.len() < cells {
        let a = next() % 12;
        let b = next() % 15;
        if !seen.insert((a, b)) {
            continue;
        }
        let reps = 1 + next() % max_reps as u64;
        for rep in 0..reps {
            let value = (next() >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0;
            obs.push(Observation::new(&[a.to_string(), b.to_string(), format!("rep{rep}")], value));
        }
    }
    dataset_from_observations(&["a", "b", "rep"], &[], &obs, IngestOptions::default()).expect("distinct rows")
}
