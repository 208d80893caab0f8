use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossboot::data::dataset_from_indices;
use crossboot::diagnostics::{self, het_gains, MatchCounts};
use crossboot::engine::{run_bootstrap_with, run_with_source, ProductWeights, RunOptions, ScaledWeights};
use crossboot::oracle::{brute_match_statistics, brute_pairwise_gain};
use crossboot::scalar::relative_error;
use crossboot::{Dataset, Exact, FactorSubset, Scalar, WeightConfig, WeightFamily};

/// A random pattern of `n` distinct tuples over small level sets, so that
/// levels repeat often.
fn random_dataset(r: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<u32> = (0..r).map(|_| rng.gen_range(2..=9)).collect();
    let capacity: usize = levels.iter().map(|&l| l as usize).product();
    let n = n.min(capacity);
    let mut seen = std::collections::HashSet::new();
    let mut idx = Vec::new();
    while idx.len() < n {
        let t: Vec<u32> = levels.iter().map(|&l| rng.gen_range(0..l)).collect();
        if seen.insert(t.clone()) {
            idx.push(t);
        }
    }
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    dataset_from_indices(&idx, &values).unwrap()
}

fn dataset_strategy(max_n: usize) -> impl Strategy<Value = Dataset> {
    (1usize..=3, 1usize..=max_n, any::<u64>()).prop_map(|(r, n, seed)| random_dataset(r, n, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn match_statistics_marginals(ds in dataset_strategy(60)) {
        let (d, m) = diagnostics::profiles::<Exact>(&ds);
        let rho_total = m.rho.iter().fold(Exact::from_ratio(0, 1), |a, b| a + b.clone());
        prop_assert_eq!(rho_total, Exact::from_ratio(1, 1));
        for u in FactorSubset::all(ds.r()) {
            let nu = d.nu(u).clone();
            let a = (0..=ds.r()).fold(Exact::from_ratio(0, 1), |s, k| s + m.nu_ku(k, u).clone());
            let b = (0..=ds.r()).fold(Exact::from_ratio(0, 1), |s, k| s + m.nu_tilde_ku(k, u).clone());
            prop_assert_eq!(&a, &nu);
            prop_assert_eq!(&b, &nu);
            for v in u.supersets(ds.r()) {
                prop_assert!(d.nu(v) <= d.nu(u));
            }
        }

        let (df, mf) = diagnostics::profiles::<f64>(&ds);
        let rho: f64 = mf.rho.iter().sum();
        prop_assert!((rho - 1.0).abs() <= 1e-12);
        for u in FactorSubset::all(ds.r()) {
            let a: f64 = (0..=ds.r()).map(|k| *mf.nu_ku(k, u)).sum();
            prop_assert!(relative_error(a, *df.nu(u)) <= 1e-12);
        }
    }

    #[test]
    fn projection_statistics_match_pair_loops(ds in dataset_strategy(60)) {
        let brute = brute_match_statistics::<Exact>(&ds).unwrap();
        let (d, m) = diagnostics::profiles::<Exact>(&ds);
        prop_assert_eq!(&brute.rho, &m.rho);
        prop_assert_eq!(&brute.nu_ku, &m.nu_ku);
        prop_assert_eq!(&brute.nu_tilde_ku, &m.nu_tilde_ku);
        prop_assert_eq!(&brute.nu, &d.nu);
    }

    #[test]
    fn exact_gains_match_pair_definition(ds in dataset_strategy(40), tau_num in 1i128..8) {
        let tau_sq = Exact::from_ratio(tau_num, 4);
        let (d, m) = diagnostics::profiles::<Exact>(&ds);
        let gains = diagnostics::exact_gains(&m, &d, tau_sq.clone()).unwrap();
        for u in FactorSubset::all(ds.r()).skip(1) {
            let brute = brute_pairwise_gain(&ds, u, tau_sq.clone()).unwrap();
            prop_assert_eq!(&gains[u.index()], &brute);
        }
    }

    #[test]
    fn gain_sandwich(ds in dataset_strategy(80)) {
        let (d, m) = diagnostics::profiles::<f64>(&ds);
        let gains = diagnostics::exact_gains(&m, &d, 1.0).unwrap();
        let bounds = diagnostics::gain_bounds(&d, 1.0).unwrap();
        for u in FactorSubset::all(ds.r()).skip(1) {
            let (lo, hi) = bounds[u.index()];
            let nu = *d.nu(u);
            prop_assert!(lo * nu <= gains[u.index()] + 1e-9);
            prop_assert!(gains[u.index()] <= hi * nu + 1e-9);
        }
    }

    #[test]
    fn het_with_constant_variance_is_homoscedastic(ds in dataset_strategy(80), s in 0.1f64..4.0) {
        let (d, m) = diagnostics::profiles::<f64>(&ds);
        let gains = diagnostics::exact_gains(&m, &d, 1.0).unwrap();
        let sigma: Vec<f64> = FactorSubset::all(ds.r()).map(|u| if u.is_empty() { 0.0 } else { s }).collect();
        let homo = diagnostics::expected_product_variance(&gains, &sigma, ds.len());
        let constant = move |_: usize, _: FactorSubset| s;
        let het = het_gains(&MatchCounts::compute(&ds), 1.0, Some(&constant)).unwrap();
        let totals = het.totals.unwrap();
        prop_assert!(relative_error(totals.expected_bootstrap_variance, homo) <= 1e-10);
        prop_assert!(relative_error(totals.true_variance, diagnostics::mean_variance(&d, &sigma)) <= 1e-10);
    }

    #[test]
    fn bootstrap_invariant_to_order_and_shards(
        ds in dataset_strategy(80),
        seed in any::<u64>(),
        shards in 1usize..6,
        rotate in 0usize..80,
    ) {
        let config = WeightConfig::new(WeightFamily::Exp1, seed, FactorSubset::full(ds.r()), 16);
        let base = run_bootstrap_with::<f64>(&ds, &config, &[], RunOptions { shards: 1 }).unwrap();
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.rotate_left(rotate % ds.len());
        order.reverse();
        let moved = run_bootstrap_with::<f64>(&ds.permuted(&order), &config, &[], RunOptions { shards }).unwrap();
        let (a, b) = (&base.groups[0], &moved.groups[0]);
        prop_assert_eq!(&a.t_star, &b.t_star);
        prop_assert_eq!(&a.n_star, &b.n_star);
        prop_assert_eq!(a.delta_variance.to_bits(), b.delta_variance.to_bits());
    }

    #[test]
    fn replicate_means_invariant_to_per_replicate_scaling(
        ds in dataset_strategy(60),
        scale in prop::collection::vec(0.01f64..100.0, 8),
    ) {
        let config = WeightConfig::new(WeightFamily::Poisson1, 5, FactorSubset::full(ds.r()), 8);
        let product = ProductWeights::new(&ds, &config).unwrap();
        let plain = run_with_source::<f64>(&ds, &product, &[], RunOptions { shards: 2 }).unwrap();
        let scaled = ScaledWeights { inner: &product, scale };
        let scaled = run_with_source::<f64>(&ds, &scaled, &[], RunOptions { shards: 2 }).unwrap();
        for (a, b) in plain.groups[0].replicate_means.iter().zip(&scaled.groups[0].replicate_means) {
            match (a, b) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "degeneracy changed under scaling"),
            }
        }
    }

    #[test]
    fn shift_moves_means_and_keeps_variances(ds in dataset_strategy(60), c in -50.0f64..50.0) {
        let config = WeightConfig::new(WeightFamily::DoubleOrNothing, 9, FactorSubset::full(ds.r()), 12);
        let shifted = ds.with_values(ds.values().iter().map(|x| x + c).collect()).unwrap();
        let a = run_bootstrap_with::<f64>(&ds, &config, &[], RunOptions { shards: 1 }).unwrap();
        let b = run_bootstrap_with::<f64>(&shifted, &config, &[], RunOptions { shards: 1 }).unwrap();
        let (ga, gb) = (&a.groups[0], &b.groups[0]);
        for (x, y) in ga.replicate_means.iter().zip(&gb.replicate_means) {
            if let (Some(x), Some(y)) = (x, y) {
                prop_assert!((x + c - y).abs() <= 1e-12 * (x.abs() + c.abs()).max(1.0));
            }
        }
        let scale = ds.values().iter().map(|x| x * x).sum::<f64>() / ds.len() as f64 + c * c;
        prop_assert!((ga.delta_variance - gb.delta_variance).abs() <= 1e-12 * scale.max(1.0));
    }
}

#[test]
fn data_restriction_coherence() {
    let ds = random_dataset(3, 120, 17);
    for i in 0..ds.len() {
        for v in FactorSubset::all(3) {
            let pv = ds.project(i, v);
            for u in v.subsets() {
                let pu = ds.project(i, u);
                let from_v: Vec<&[u8]> =
                    v.members().zip(&pv).filter(|(j, _)| u.contains(*j)).map(|(_, l)| *l).collect();
                assert_eq!(pu, from_v);
            }
        }
    }
}
