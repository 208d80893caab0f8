//! Monte Carlo checks of the weight families, the simulator and the stability
//! formula. All seeds are fixed.

use crossboot::data::dataset_from_indices;
use crossboot::engine::{run_bootstrap_with, stability_prediction, RunOptions};
use crossboot::oracle::{monte_carlo_samples, naive_stability, stability_data};
use crossboot::weights::{derive_seed, raw_level_weight};
use crossboot::{FactorSubset, Pattern, PatternKind, PatternSpec, TruthSpec, WeightConfig, WeightFamily};

const SAMPLES: usize = 1_000_000;

fn level_weights(family: WeightFamily, factor: usize, replicate: u64, offset: usize) -> Vec<f64> {
    (0..SAMPLES).map(|k| raw_level_weight(family, 7, factor, (k + offset).to_string().as_bytes(), replicate)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn families() -> [WeightFamily; 4] {
    [
        WeightFamily::DoubleOrNothing,
        WeightFamily::Poisson1,
        WeightFamily::Exp1,
        WeightFamily::ScaledBernoulli { tau_sq: 0.5 },
    ]
}

#[test]
fn weight_moments_at_one_million_levels() {
    let n = SAMPLES as f64;
    for family in families() {
        let w = level_weights(family, 0, 0, 0);
        let tau_sq = family.tau_sq();
        let m = mean(&w);
        assert!((m - 1.0).abs() <= 4.0 * (tau_sq / n).sqrt(), "{family}: mean {m}");
        let var = w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        // the second term covers centering at the sample mean (a 4 SE mean error)
        let tol = 4.0 * tau_sq * ((family.kurtosis() + 2.0) / n).sqrt() + 16.0 * tau_sq / n;
        assert!((var - tau_sq).abs() <= tol, "{family}: variance {var} vs {tau_sq} (tol {tol:e})");
    }
}

#[test]
fn weight_streams_are_uncorrelated() {
    let limit = 3.0 / (SAMPLES as f64).sqrt();
    for family in [WeightFamily::DoubleOrNothing, WeightFamily::Exp1] {
        let base = level_weights(family, 0, 0, 0);
        let next_replicate = level_weights(family, 0, 1, 0);
        let other_factor = level_weights(family, 1, 0, 0);
        let next_level = level_weights(family, 0, 0, 1);
        for (label, other) in [("replicate", &next_replicate), ("factor", &other_factor), ("level", &next_level)] {
            let c = correlation(&base, other);
            assert!(c.abs() < limit, "{family} across {label}: correlation {c}");
        }
    }
}

#[test]
fn simulated_covariance_follows_shared_effects() {
    // rows 0 and k share exactly the factors in `shared`
    let pattern = Pattern::generate(&PatternSpec::new(
        PatternKind::ExplicitMask {
            indices: vec![vec![0, 0, 0], vec![0, 1, 1], vec![0, 0, 1], vec![1, 0, 0], vec![1, 1, 1]],
        },
        0,
    ))
    .unwrap();
    let sigma = vec![0.0, 1.0, 0.5, 0.25, 0.4, 0.3, 0.2, 0.6];
    let truth = TruthSpec::homoscedastic(2.0, sigma.clone());
    let draws = 10_000;
    for (k, shared) in [(1usize, vec![0]), (2, vec![0, 1]), (3, vec![1, 2]), (4, vec![])] {
        let u = FactorSubset::from_members(shared);
        let expected: f64 = u.subsets().skip(1).map(|v| sigma[v.index()]).sum();
        let products = monte_carlo_samples(draws, derive_seed(3, k as u64), |s| {
            let (x, _) = pattern.draw(&truth, s).unwrap();
            (x[0] - 2.0) * (x[k] - 2.0)
        });
        let m = mean(&products);
        let sd = (products.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
        let se = sd / (draws as f64).sqrt();
        assert!((m - expected).abs() <= 4.0 * se, "shared {}: {m} vs {expected} (se {se})", u.label());
    }
}

#[test]
fn replicate_variance_stability_matches_prediction() {
    let ds = stability_data(200, 2, 20.0);
    let n = ds.len() as f64;
    let values = ds.values();
    let m = values.iter().sum::<f64>() / n;
    let sigma_sq = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let kappa_x = values.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n / (sigma_sq * sigma_sq) - 3.0;
    for (k, family) in
        [WeightFamily::DoubleOrNothing, WeightFamily::Poisson1, WeightFamily::Exp1].into_iter().enumerate()
    {
        let (delta, s2) = naive_stability(&ds, family, 50, 200, derive_seed(5, k as u64));
        let pred = stability_prediction(sigma_sq, kappa_x, family, 50, ds.len());
        assert!((delta.variance - pred.delta).abs() <= 5.0 * delta.se, "{family} delta: {delta:?} vs {}", pred.delta);
        let pred_s2 = pred.s2.unwrap();
        assert!((s2.variance - pred_s2).abs() <= 5.0 * s2.se, "{family} s2: {s2:?} vs {pred_s2}");
    }
}

#[test]
fn double_or_nothing_rarely_degenerates() {
    // 40 distinct levels per factor: a replicate is degenerate only if every
    // observed cell has a zero factor weight
    let idx: Vec<Vec<u32>> =
        (0..40u32).flat_map(|a| (0..40u32).map(move |b| vec![a, b])).filter(|t| (t[0] + t[1]) % 3 == 0).collect();
    let values = vec![1.0; idx.len()];
    let ds = dataset_from_indices(&idx, &values).unwrap();
    let config = WeightConfig::new(WeightFamily::DoubleOrNothing, 77, FactorSubset::full(2), 20_000);
    let res = run_bootstrap_with::<f64>(&ds, &config, &[], RunOptions::default()).unwrap();
    assert_eq!(res.groups[0].dropped, 0);
}
