//! Dataset-structure statistics and bootstrap gain coefficients.
//!
//! Everything here is derived from integer match counts. For observation `i`
//! and subset `u`, `N_{i,u}` counts observations agreeing with `i` on every
//! factor in `u`. Those counts come from per-subset projection tables in
//! `O(N·2^r)` time; counts of observations agreeing on *exactly* a subset `w`
//! follow by Möbius inversion over the subset lattice, so no pair loop is ever
//! needed. All sums are accumulated in wide integers and only divided by `N`
//! or `N²` at the end, which makes the statistics exact in rational mode and
//! independent of sharding.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::DiagnosticsError;
use crate::scalar::{CompensatedSum, Scalar};
use crate::subset::{superset_mobius_in_place, superset_sum_in_place, FactorSubset};

/// Per-subset multiplicity tables: for each `u`, how many rows share each
/// `u`-projection. Tables from different shards merge by key-wise addition.
#[derive(Debug, Clone)]
pub struct ProjectionTables {
    r: usize,
    tables: Vec<HashMap<Vec<u32>, u64>>,
}

impl ProjectionTables {
    pub fn empty(r: usize) -> Self {
        Self { r, tables: vec![HashMap::new(); 1 << r] }
    }

    /// Tables for the rows in `rows`.
    pub fn from_rows(ds: &Dataset, rows: Range<usize>) -> Self {
        let r = ds.r();
        let mut out = Self::empty(r);
        let mut key = Vec::with_capacity(r);
        for i in rows {
            let ids = ds.level_ids(i);
            for u in FactorSubset::all(r) {
                key.clear();
                key.extend(u.members().map(|j| ids[j]));
                let table = &mut out.tables[u.index()];
                match table.get_mut(key.as_slice()) {
                    Some(c) => *c += 1,
                    None => {
                        table.insert(key.clone(), 1);
                    }
                }
            }
        }
        out
    }

    pub fn merge(mut self, other: Self) -> Self {
        assert_eq!(self.r, other.r);
        for (mine, theirs) in self.tables.iter_mut().zip(other.tables) {
            for (k, c) in theirs {
                *mine.entry(k).or_insert(0) += c;
            }
        }
        self
    }

    fn count(&self, u: FactorSubset, key: &[u32]) -> u64 {
        self.tables[u.index()].get(key).copied().unwrap_or(0)
    }
}

/// Exact integer match counts for a dataset.
#[derive(Debug, Clone)]
pub struct MatchCounts {
    r: usize,
    n: usize,
    /// `N_{i,u}`, row-major `N × 2^r`.
    per_obs_nu: Vec<u64>,
    /// `N_{i,k}` (matches in exactly `k` factors), row-major `N × (r+1)`.
    per_obs_k: Vec<u64>,
    /// `Σ_i N_{i,u}`.
    sum_nu: Vec<u128>,
    /// `Σ_i N^=_{i,w}` where `N^=` counts exact agreement sets.
    sum_exact: Vec<i128>,
    /// `Σ_i N_{i,k}`.
    sum_k: Vec<u128>,
    /// `Σ_i N_{i,u} N_{i,k}`, row-major `(r+1) × 2^r`.
    cross: Vec<u128>,
    /// `max_i max_j N_{i,{j}}`.
    max_singleton: u64,
    /// `n_{ℓ,j}`: per factor, count of each interned level.
    level_counts: Vec<Vec<u64>>,
}

struct RowPass {
    per_obs_nu: Vec<u64>,
    per_obs_k: Vec<u64>,
    sum_nu: Vec<u128>,
    sum_exact: Vec<i128>,
    sum_k: Vec<u128>,
    cross: Vec<u128>,
    max_singleton: u64,
}

impl MatchCounts {
    pub fn compute(ds: &Dataset) -> Self {
        Self::compute_sharded(ds, 1)
    }

    /// Same result for every `shards ≥ 1`; shards are processed in parallel.
    pub fn compute_sharded(ds: &Dataset, shards: usize) -> Self {
        let n = ds.len();
        let r = ds.r();
        let ranges = shard_ranges(n, shards.max(1));
        let tables = ranges
            .par_iter()
            .map(|rg| ProjectionTables::from_rows(ds, rg.clone()))
            .reduce(|| ProjectionTables::empty(r), ProjectionTables::merge);

        let passes: Vec<RowPass> = ranges.par_iter().map(|rg| row_pass(ds, &tables, rg.clone())).collect();
        let s = 1usize << r;
        let mut out = MatchCounts {
            r,
            n,
            per_obs_nu: Vec::with_capacity(n * s),
            per_obs_k: Vec::with_capacity(n * (r + 1)),
            sum_nu: vec![0; s],
            sum_exact: vec![0; s],
            sum_k: vec![0; r + 1],
            cross: vec![0; (r + 1) * s],
            max_singleton: 0,
            level_counts: Vec::with_capacity(r),
        };
        for p in passes {
            out.per_obs_nu.extend(p.per_obs_nu);
            out.per_obs_k.extend(p.per_obs_k);
            add_into(&mut out.sum_nu, &p.sum_nu);
            add_into(&mut out.sum_exact, &p.sum_exact);
            add_into(&mut out.sum_k, &p.sum_k);
            add_into(&mut out.cross, &p.cross);
            out.max_singleton = out.max_singleton.max(p.max_singleton);
        }
        for j in 0..r {
            let mut counts = vec![0u64; ds.level_table(j).len()];
            for (key, c) in &tables.tables[FactorSubset::singleton(j).index()] {
                counts[key[0] as usize] = *c;
            }
            out.level_counts.push(counts);
        }
        out
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `N_{i,u}` for every subset `u`, indexed by mask.
    pub fn obs_nu(&self, i: usize) -> &[u64] {
        let s = 1 << self.r;
        &self.per_obs_nu[i * s..(i + 1) * s]
    }

    /// `N_{i,k}` for `k = 0..=r`.
    pub fn obs_k(&self, i: usize) -> &[u64] {
        &self.per_obs_k[i * (self.r + 1)..(i + 1) * (self.r + 1)]
    }

    /// `N^=_{i,w}`: rows agreeing with row `i` on exactly the factors in `w`.
    pub fn obs_exact(&self, i: usize) -> Vec<i64> {
        let mut e: Vec<i64> = self.obs_nu(i).iter().map(|&c| c as i64).collect();
        superset_mobius_in_place(&mut e);
        e
    }

    pub fn level_counts(&self) -> &[Vec<u64>] {
        &self.level_counts
    }
}

fn add_into<T: Copy + std::ops::AddAssign>(acc: &mut [T], x: &[T]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += *b;
    }
}

/// Splits `0..n` into `shards` contiguous ranges of near-equal length.
pub fn shard_ranges(n: usize, shards: usize) -> Vec<Range<usize>> {
    let shards = shards.clamp(1, n.max(1));
    (0..shards).map(|s| (s * n / shards)..((s + 1) * n / shards)).collect()
}

fn row_pass(ds: &Dataset, tables: &ProjectionTables, rows: Range<usize>) -> RowPass {
    let r = ds.r();
    let s = 1usize << r;
    let len = rows.len();
    let mut p = RowPass {
        per_obs_nu: Vec::with_capacity(len * s),
        per_obs_k: Vec::with_capacity(len * (r + 1)),
        sum_nu: vec![0; s],
        sum_exact: vec![0; s],
        sum_k: vec![0; r + 1],
        cross: vec![0; (r + 1) * s],
        max_singleton: 0,
    };
    let mut key = Vec::with_capacity(r);
    let mut nu = vec![0u64; s];
    let mut exact = vec![0i64; s];
    let mut by_k = vec![0u64; r + 1];
    for i in rows {
        let ids = ds.level_ids(i);
        for u in FactorSubset::all(r) {
            key.clear();
            key.extend(u.members().map(|j| ids[j]));
            nu[u.index()] = tables.count(u, &key);
        }
        for (e, &c) in exact.iter_mut().zip(&nu) {
            *e = c as i64;
        }
        superset_mobius_in_place(&mut exact);
        by_k.iter_mut().for_each(|x| *x = 0);
        for (w, &e) in exact.iter().enumerate() {
            debug_assert!(e >= 0);
            by_k[(w as u16).count_ones() as usize] += e as u64;
        }
        for j in 0..r {
            p.max_singleton = p.max_singleton.max(nu[1 << j]);
        }
        for u in 0..s {
            p.sum_nu[u] += nu[u] as u128;
            p.sum_exact[u] += exact[u] as i128;
            for (k, &nk) in by_k.iter().enumerate() {
                p.cross[k * s + u] += nu[u] as u128 * nk as u128;
            }
        }
        for (k, &nk) in by_k.iter().enumerate() {
            p.sum_k[k] += nk as u128;
        }
        p.per_obs_nu.extend_from_slice(&nu);
        p.per_obs_k.extend_from_slice(&by_k);
    }
    p
}

/// `ν_u`, `ε`, `η` and per-factor level counts.
#[derive(Debug, Clone, Serialize)]
pub struct DuplicationProfile<T> {
    pub r: usize,
    pub n: usize,
    /// `ν_u` indexed by subset mask; `ν_∅ = N`, `ν_[r] = 1`.
    pub nu: Vec<T>,
    /// Largest fraction of observations sharing one level of one factor.
    pub epsilon: T,
    /// `max ν_v/ν_u` over `∅ ⊊ u ⊊ v`; zero when there is no such pair (`r = 1`).
    pub eta: T,
    /// False when `r = 1` and `eta` is the placeholder zero.
    pub eta_defined: bool,
    #[serde(skip)]
    pub level_counts: Vec<Vec<u64>>,
}

impl<T: Scalar> DuplicationProfile<T> {
    pub fn from_counts(c: &MatchCounts) -> Self {
        let n = c.n as u128;
        let nu: Vec<T> = c.sum_nu.iter().map(|&s| T::from_ratio(s as i128, n)).collect();
        let epsilon = T::from_ratio(c.max_singleton as i128, n);
        let mut eta = T::zero();
        let mut eta_defined = false;
        for v in FactorSubset::all(c.r) {
            for u in v.subsets() {
                if u.is_empty() || u == v {
                    continue;
                }
                eta_defined = true;
                let ratio = T::from_ratio(c.sum_nu[v.index()] as i128, c.sum_nu[u.index()]);
                eta = eta.max_of(ratio);
            }
        }
        Self { r: c.r, n: c.n, nu, epsilon, eta, eta_defined, level_counts: c.level_counts.clone() }
    }

    pub fn nu(&self, u: FactorSubset) -> &T {
        &self.nu[u.index()]
    }
}

/// `ρ_k`, `ν_{k,u}`, `ν̃_{k,u}` plus the per-observation counts behind them.
#[derive(Debug, Clone)]
pub struct MatchProfile<T> {
    pub r: usize,
    pub n: usize,
    /// Fraction of ordered pairs agreeing in exactly `k` factors.
    pub rho: Vec<T>,
    /// `ν_{k,u}`, row-major `(r+1) × 2^r`.
    pub nu_ku: Vec<T>,
    /// `ν̃_{k,u}`, row-major `(r+1) × 2^r`.
    pub nu_tilde_ku: Vec<T>,
    pub counts: MatchCounts,
}

impl<T: Scalar> MatchProfile<T> {
    pub fn from_counts(c: MatchCounts) -> Self {
        let r = c.r;
        let s = 1usize << r;
        let n = c.n as u128;
        let n_obs = c.n;
        let n2 = n * n;
        let rho = c.sum_k.iter().map(|&x| T::from_ratio(x as i128, n2)).collect();
        let mut nu_ku = Vec::with_capacity((r + 1) * s);
        for k in 0..=r {
            // Σ_{w ⊇ u, |w| = k} Σ_i N^=_{i,w}
            let mut rank_k: Vec<i128> =
                (0..s).map(|w| if (w as u16).count_ones() as usize == k { c.sum_exact[w] } else { 0 }).collect();
            superset_sum_in_place(&mut rank_k);
            nu_ku.extend(rank_k.into_iter().map(|x| T::from_ratio(x, n)));
        }
        let nu_tilde_ku = c.cross.iter().map(|&x| T::from_ratio(x as i128, n2)).collect();
        Self { r, n: n_obs, rho, nu_ku, nu_tilde_ku, counts: c }
    }

    pub fn nu_ku(&self, k: usize, u: FactorSubset) -> &T {
        &self.nu_ku[k * (1 << self.r) + u.index()]
    }

    pub fn nu_tilde_ku(&self, k: usize, u: FactorSubset) -> &T {
        &self.nu_tilde_ku[k * (1 << self.r) + u.index()]
    }
}

pub fn duplication_profile<T: Scalar>(ds: &Dataset) -> DuplicationProfile<T> {
    DuplicationProfile::from_counts(&MatchCounts::compute(ds))
}

pub fn match_profile<T: Scalar>(ds: &Dataset) -> MatchProfile<T> {
    MatchProfile::from_counts(MatchCounts::compute(ds))
}

/// Both profiles from one counting pass.
pub fn profiles<T: Scalar>(ds: &Dataset) -> (DuplicationProfile<T>, MatchProfile<T>) {
    let counts = MatchCounts::compute(ds);
    let dup = DuplicationProfile::from_counts(&counts);
    (dup, MatchProfile::from_counts(counts))
}

fn check_tau_sq<T: Scalar>(tau_sq: &T) -> Result<(), DiagnosticsError> {
    if *tau_sq > T::zero() {
        Ok(())
    } else {
        Err(DiagnosticsError::InvalidTauSq(tau_sq.to_f64_lossy()))
    }
}

/// Exact gain coefficients
/// `γ_u = Σ_k (1+τ²)^k (ν_{k,u} − 2ν̃_{k,u} + ρ_k ν_u)`, indexed by mask
/// (entry 0 unused and zero).
pub fn exact_gains<T: Scalar>(
    m: &MatchProfile<T>,
    d: &DuplicationProfile<T>,
    tau_sq: T,
) -> Result<Vec<T>, DiagnosticsError> {
    check_tau_sq(&tau_sq)?;
    let c = T::one() + tau_sq;
    let pows: Vec<T> = (0..=m.r).map(|k| c.powi(k as u32)).collect();
    let two = T::one() + T::one();
    Ok(FactorSubset::all(m.r)
        .map(|u| {
            if u.is_empty() {
                return T::zero();
            }
            let nu_u = d.nu(u).clone();
            let mut acc = CompensatedSum::new();
            for (k, pk) in pows.iter().enumerate() {
                acc.add(pk.clone() * m.nu_ku(k, u).clone());
                acc.add(-(pk.clone() * two.clone() * m.nu_tilde_ku(k, u).clone()));
                acc.add(pk.clone() * m.rho[k].clone() * nu_u.clone());
            }
            acc.value()
        })
        .collect())
}

/// Interpretable approximation to one gain coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct ApproxGain<T> {
    /// `ν_u((1+τ²)^{|u|} − 1) + Σ_{v⊋u} (1+τ²)^{|u|} (τ²)^{|v−u|} ν_v`.
    pub point: T,
    /// `|θ_u|` bound multiplying `ν_u ε`.
    pub theta_bound: T,
    /// Additive error radius `ν_u · θ_bound · ε`.
    pub radius: T,
}

/// Bound on `|θ_u|`: `max((1+τ²)((1+τ²)^r − 1)/τ², 2((1+τ²)^r − 1))`.
///
/// Both expressions equal `2^{r+1} − 2` at `τ² = 1`.
pub fn theta_bound<T: Scalar>(r: usize, tau_sq: &T) -> T {
    let c = T::one() + tau_sq.clone();
    let cr1 = c.powi(r as u32) - T::one();
    let a = c * cr1.clone() / tau_sq.clone();
    let b = (T::one() + T::one()) * cr1;
    a.max_of(b)
}

pub fn approx_gains<T: Scalar>(d: &DuplicationProfile<T>, tau_sq: T) -> Result<Vec<ApproxGain<T>>, DiagnosticsError> {
    check_tau_sq(&tau_sq)?;
    let r = d.r;
    let c = T::one() + tau_sq.clone();
    let theta = theta_bound(r, &tau_sq);
    Ok(FactorSubset::all(r)
        .map(|u| {
            if u.is_empty() {
                return ApproxGain { point: T::zero(), theta_bound: T::zero(), radius: T::zero() };
            }
            let cu = c.powi(u.len() as u32);
            let nu_u = d.nu(u).clone();
            let mut acc = CompensatedSum::new();
            acc.add(nu_u.clone() * (cu.clone() - T::one()));
            for v in u.supersets(r).filter(|&v| v != u) {
                let extra = v.difference(u).len() as u32;
                acc.add(cu.clone() * tau_sq.powi(extra) * d.nu(v).clone());
            }
            let radius = nu_u * theta.clone() * d.epsilon.clone();
            ApproxGain { point: acc.value(), theta_bound: theta.clone(), radius }
        })
        .collect())
}

/// Lower and upper bounds on `γ_u / ν_u` for `τ² = 1`, indexed by mask.
///
/// The upper bound uses exponent `r − |u|` on `(1 + 2η)`, the largest value
/// the exponent can take.
pub fn gain_bounds<T: Scalar>(d: &DuplicationProfile<T>, tau_sq: T) -> Result<Vec<(T, T)>, DiagnosticsError> {
    if tau_sq != T::one() {
        return Err(DiagnosticsError::BoundsUnavailable(tau_sq.to_f64_lossy()));
    }
    let r = d.r;
    let two = T::one() + T::one();
    let slack = (two.powi(r as u32 + 1) - two.clone()) * d.epsilon.clone();
    let spread = T::one() + two.clone() * d.eta.clone();
    Ok(FactorSubset::all(r)
        .map(|u| {
            if u.is_empty() {
                return (T::zero(), T::zero());
            }
            let pu = two.powi(u.len() as u32);
            let lower = pu.clone() - T::one() - slack.clone();
            let upper = pu * spread.powi((r - u.len()) as u32) - T::one() + slack.clone();
            (lower, upper)
        })
        .collect())
}

/// Exact, approximate and bounded gain coefficients for one `τ²`.
#[derive(Debug, Clone, Serialize)]
pub struct GainReport<T> {
    pub tau_sq: T,
    pub exact: Vec<T>,
    pub approx: Vec<ApproxGain<T>>,
    /// Present only for `τ² = 1`.
    pub bounds: Option<Vec<(T, T)>>,
}

pub fn gain_report<T: Scalar>(
    d: &DuplicationProfile<T>,
    m: &MatchProfile<T>,
    tau_sq: T,
) -> Result<GainReport<T>, DiagnosticsError> {
    let exact = exact_gains(m, d, tau_sq.clone())?;
    let approx = approx_gains(d, tau_sq.clone())?;
    let bounds = gain_bounds(d, tau_sq.clone()).ok();
    Ok(GainReport { tau_sq, exact, approx, bounds })
}

/// Per-observation gain coefficients for the heteroscedastic model.
#[derive(Debug, Clone)]
pub struct HetGainReport<T> {
    pub r: usize,
    pub n: usize,
    pub tau_sq: T,
    /// `γ_{i,u}`, row-major `N × 2^r` (column 0 unused).
    pub gains: Vec<T>,
    /// `ν̄_k = (1/N) Σ_i ν_{i,k}`.
    pub nu_bar: Vec<T>,
    pub totals: Option<HetTotals<T>>,
}

/// Variance totals when per-observation component variances are supplied.
#[derive(Debug, Clone)]
pub struct HetTotals<T> {
    /// `Σ_i γ_{i,u} σ²_{i,u}` per subset.
    pub gamma_sigma: Vec<T>,
    /// `Σ_i ν_{i,u} σ²_{i,u}` per subset.
    pub nu_sigma: Vec<T>,
    /// `Var(X̄) = (1/N) Σ_u Σ_i ν_{i,u} σ²_{i,u}`.
    pub true_variance: T,
    /// `E(Var̃_PW) = (1/N) Σ_u Σ_i γ_{i,u} σ²_{i,u}`.
    pub expected_bootstrap_variance: T,
}

impl<T: Scalar> HetGainReport<T> {
    pub fn gain(&self, i: usize, u: FactorSubset) -> &T {
        &self.gains[i * (1 << self.r) + u.index()]
    }
}

/// Heteroscedastic gains `γ_{i,u} = Σ_k (1+τ²)^k (ν_{i,k,u} − 2ν_{i,k}ν_{i,u} + ν̄_k ν_{i,u})`.
///
/// `sigma_sq(i, u)` supplies `σ²_{i,u}` for nonempty `u`; when present the
/// variance totals are filled in.
pub fn het_gains<T: Scalar>(
    counts: &MatchCounts,
    tau_sq: T,
    sigma_sq: Option<&dyn Fn(usize, FactorSubset) -> T>,
) -> Result<HetGainReport<T>, DiagnosticsError> {
    check_tau_sq(&tau_sq)?;
    let r = counts.r;
    let n = counts.n;
    let s = 1usize << r;
    let nn = n as u128;
    let c = T::one() + tau_sq.clone();
    let pows: Vec<T> = (0..=r).map(|k| c.powi(k as u32)).collect();
    let nu_bar: Vec<T> = counts.sum_k.iter().map(|&x| T::from_ratio(x as i128, nn * nn)).collect();
    let two = T::one() + T::one();

    let mut gains = Vec::with_capacity(n * s);
    let mut gamma_sigma = vec![CompensatedSum::<T>::new(); s];
    let mut nu_sigma = vec![CompensatedSum::<T>::new(); s];
    let mut rank_k = vec![0i64; s];
    let mut nu_iku = vec![0i64; (r + 1) * s];
    for i in 0..n {
        let exact = counts.obs_exact(i);
        for k in 0..=r {
            for (w, slot) in rank_k.iter_mut().enumerate() {
                *slot = if (w as u16).count_ones() as usize == k { exact[w] } else { 0 };
            }
            superset_sum_in_place(&mut rank_k);
            nu_iku[k * s..(k + 1) * s].copy_from_slice(&rank_k);
        }
        let obs_nu = counts.obs_nu(i);
        let obs_k = counts.obs_k(i);
        for u in FactorSubset::all(r) {
            if u.is_empty() {
                gains.push(T::zero());
                continue;
            }
            let nu_iu = T::from_ratio(obs_nu[u.index()] as i128, nn);
            let mut acc = CompensatedSum::new();
            for k in 0..=r {
                let nu_ik = T::from_ratio(obs_k[k] as i128, nn);
                let term = T::from_ratio(nu_iku[k * s + u.index()] as i128, nn) - two.clone() * nu_ik * nu_iu.clone()
                    + nu_bar[k].clone() * nu_iu.clone();
                acc.add(pows[k].clone() * term);
            }
            let g = acc.value();
            if let Some(f) = sigma_sq {
                let v = f(i, u);
                if v.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) || !v.to_f64_lossy().is_finite() {
                    return Err(DiagnosticsError::NonPositiveVariance { observation: i, subset: u.label() });
                }
                gamma_sigma[u.index()].add(g.clone() * v.clone());
                nu_sigma[u.index()].add(nu_iu * v);
            }
            gains.push(g);
        }
    }
    let totals = sigma_sq.map(|_| {
        let gamma_sigma: Vec<T> = gamma_sigma.iter().map(CompensatedSum::value).collect();
        let nu_sigma: Vec<T> = nu_sigma.iter().map(CompensatedSum::value).collect();
        let nt = T::of_usize(n);
        let true_variance = nu_sigma.iter().skip(1).cloned().collect::<CompensatedSum<T>>().value() / nt.clone();
        let expected_bootstrap_variance =
            gamma_sigma.iter().skip(1).cloned().collect::<CompensatedSum<T>>().value() / nt;
        HetTotals { gamma_sigma, nu_sigma, true_variance, expected_bootstrap_variance }
    });
    Ok(HetGainReport { r, n, tau_sq, gains, nu_bar, totals })
}

/// `Var(X̄) = (1/N) Σ_{u≠∅} ν_u σ²_u` for the homoscedastic model.
pub fn mean_variance<T: Scalar>(d: &DuplicationProfile<T>, sigma_sq: &[T]) -> T {
    let acc: CompensatedSum<T> =
        FactorSubset::all(d.r).skip(1).map(|u| d.nu(u).clone() * sigma_sq[u.index()].clone()).collect();
    acc.value() / T::of_usize(d.n)
}

/// `E(Var̃_PW(X̄*)) = (1/N) Σ_{u≠∅} γ_u σ²_u`.
pub fn expected_product_variance<T: Scalar>(gains: &[T], sigma_sq: &[T], n: usize) -> T {
    let acc: CompensatedSum<T> = gains.iter().zip(sigma_sq).skip(1).map(|(g, s)| g.clone() * s.clone()).collect();
    acc.value() / T::of_usize(n)
}
