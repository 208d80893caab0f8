use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use crossboot::engine::{self, NaiveWeights, RunOptions};
use crossboot::oracle::{self, Suite};
use crossboot::report::{self, RunDescription};
use crossboot::simulator::{self, EffectDistribution, GroupAssignment, PatternKind, PatternSpec, TruthSpec};
use crossboot::{
    diagnostics, BootstrapResult, Dataset, FactorSubset, IngestOptions, Schema, WeightConfig, WeightFamily,
};

use crate::args::{
    BootstrapArgs, CollapseArgs, ContrastArgs, DiagnoseArgs, EffectChoice, InputArgs, PatternChoice, Scheme,
    SimulateArgs, VerifyArgs, WeightArgs,
};

/// Files a command read and wrote, plus its exit status.
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Nonzero when a verification step failed.
    pub status: u8,
}

impl Outcome {
    fn ok(inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        Self { inputs, outputs, status: 0 }
    }
}

pub fn load_dataset(input: &InputArgs) -> Result<Dataset> {
    let schema = Schema {
        factors: input.factors.clone(),
        value: input.value.clone(),
        groups: input.groups.clone(),
        count: input.count.clone(),
    };
    let options = IngestOptions { replicates: input.replicate_mode };
    let file = File::open(&input.input).with_context(|| format!("opening {}", input.input.display()))?;
    let is_jsonl = input.input.extension().is_some_and(|e| e == "jsonl" || e == "ndjson");
    let ds = if is_jsonl {
        crossboot::read_jsonl(BufReader::new(file), &schema, options)
    } else {
        crossboot::read_csv(BufReader::new(file), &schema, options)
    };
    ds.with_context(|| format!("reading {}", input.input.display()))
}

fn factor_set(ds: &Dataset, names: &[String]) -> Result<FactorSubset> {
    let mut u = FactorSubset::EMPTY;
    for name in names {
        let j = ds.factor_index(name).ok_or_else(|| anyhow!("unknown factor `{name}`"))?;
        u = u.with(j);
    }
    Ok(u)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

struct BootstrapRun {
    result: BootstrapResult<f64>,
    description: RunDescription,
}

fn run_weights(input: &InputArgs, weights: &WeightArgs, shards: usize) -> Result<BootstrapRun> {
    let ds = load_dataset(input)?;
    let family: WeightFamily = weights.family.parse()?;
    let options = RunOptions { shards };
    let (result, active, fingerprint) = match weights.scheme {
        Scheme::Product => {
            let active = match &weights.active_factors {
                Some(names) => factor_set(&ds, names)?,
                None => FactorSubset::full(ds.r()),
            };
            let config = WeightConfig::new(family, weights.seed, active, weights.replicates);
            let result = engine::run_bootstrap_with::<f64>(&ds, &config, &input.groups, options)?;
            (result, active, config.fingerprint())
        }
        Scheme::Naive => {
            if weights.active_factors.is_some() {
                bail!("--active-factors applies to the product scheme only");
            }
            if weights.replicates == 0 {
                bail!("at least one replicate is required");
            }
            let source = NaiveWeights { family, master_seed: weights.seed, replicates: weights.replicates };
            let result = engine::run_with_source::<f64>(&ds, &source, &input.groups, options)?;
            (result, FactorSubset::full(ds.r()), engine::WeightSource::fingerprint(&source))
        }
    };
    let description = RunDescription {
        scheme: match weights.scheme {
            Scheme::Product => "product",
            Scheme::Naive => "naive",
        }
        .into(),
        family: family.to_string(),
        master_seed: weights.seed,
        replicates: weights.replicates,
        active_factors: active.members().map(|j| ds.factor_names()[j].clone()).collect(),
        fingerprint: format!("{fingerprint:016x}"),
    };
    Ok(BootstrapRun { result, description })
}

pub fn bootstrap(args: &BootstrapArgs, shards: usize) -> Result<Outcome> {
    let run = run_weights(&args.input, &args.weights, shards)?;
    ensure_dir(&args.out)?;
    let summary = report::summary_document(&run.result, run.description, args.weights.level)?;
    let summary_path = args.out.join("summary.json");
    write_text(&summary_path, &report::to_json(&summary))?;
    let replicates_path = args.out.join("replicates.csv");
    report::write_replicates(&run.result, create(&replicates_path)?)?;
    for g in &summary.groups {
        let label = if g.label.is_empty() { "all".to_string() } else { g.label.join(",") };
        println!(
            "{label}: mean {:.6} delta-se {:.6} ci [{:.6}, {:.6}] dropped {}",
            g.mean,
            g.summary.delta.sqrt(),
            g.summary.percentile_ci.0,
            g.summary.percentile_ci.1,
            g.summary.dropped
        );
    }
    Ok(Outcome::ok(vec![args.input.input.clone()], vec![summary_path, replicates_path]))
}

fn parse_label(text: &str, grouping: &[String]) -> Result<Vec<String>> {
    let label: Vec<String> = if grouping.is_empty() && text.is_empty() {
        Vec::new()
    } else {
        text.split(',').map(|s| s.trim().to_string()).collect()
    };
    if label.len() != grouping.len() {
        bail!("group label `{text}` has {} parts but there are {} grouping columns", label.len(), grouping.len());
    }
    Ok(label)
}

pub fn contrast(args: &ContrastArgs, shards: usize) -> Result<Outcome> {
    let a = parse_label(&args.a, &args.input.groups)?;
    let b = parse_label(&args.b, &args.input.groups)?;
    let run = run_weights(&args.input, &args.weights, shards)?;
    let c = engine::contrast(&run.result, &a, &b, args.weights.level)?;
    ensure_dir(&args.out)?;
    let doc = report::contrast_document(&c, run.description);
    let contrast_path = args.out.join("contrast.json");
    write_text(&contrast_path, &report::to_json(&doc))?;
    let ecdf_path = args.out.join("ecdf.csv");
    report::write_ecdf(&c, create(&ecdf_path)?)?;
    println!(
        "{} - {}: difference {:.6} ci [{:.6}, {:.6}] over {} replicates",
        args.a, args.b, c.difference, c.summary.percentile_ci.0, c.summary.percentile_ci.1, c.summary.replicates_used
    );
    Ok(Outcome::ok(vec![args.input.input.clone()], vec![contrast_path, ecdf_path]))
}

pub fn diagnose(args: &DiagnoseArgs, shards: usize) -> Result<Outcome> {
    let ds = load_dataset(&args.input)?;
    let counts = diagnostics::MatchCounts::compute_sharded(&ds, shards);
    let d = diagnostics::DuplicationProfile::<f64>::from_counts(&counts);
    let m = diagnostics::MatchProfile::<f64>::from_counts(counts);
    let gains = diagnostics::gain_report(&d, &m, args.tau_sq)?;
    let names = ds.factor_names();
    let mut nu = BTreeMap::new();
    let mut gain_table = serde_json::Map::new();
    for u in FactorSubset::all(ds.r()).skip(1) {
        let label = u.named_label(names);
        nu.insert(label.clone(), *d.nu(u));
        let a = &gains.approx[u.index()];
        let mut entry = json!({
            "exact": gains.exact[u.index()],
            "approx": a.point,
            "theta_bound": a.theta_bound,
            "radius": a.radius,
            "naive_ratio": gains.exact[u.index()] / (args.tau_sq * (1.0 - d.nu(u) / ds.len() as f64)),
        });
        if let Some(bounds) = &gains.bounds {
            entry["lower"] = json!(bounds[u.index()].0 * d.nu(u));
            entry["upper"] = json!(bounds[u.index()].1 * d.nu(u));
        }
        gain_table.insert(label, entry);
    }
    let factors: Vec<_> = d
        .level_counts
        .iter()
        .zip(names)
        .map(|(c, name)| json!({ "name": name, "levels": c.len(), "max_count": c.iter().max().copied().unwrap_or(0) }))
        .collect();
    let doc = json!({
        "n": ds.len(),
        "r": ds.r(),
        "factors": factors,
        "nu": nu,
        "epsilon": d.epsilon,
        "eta": if d.eta_defined { json!(d.eta) } else { json!(null) },
        "rho": m.rho,
        "tau_sq": args.tau_sq,
        "gains": gain_table,
    });
    ensure_dir(&args.out)?;
    let path = args.out.join("diagnostics.json");
    write_text(&path, &report::to_json(&doc))?;
    println!("N = {}, r = {}, epsilon = {:.6}", ds.len(), ds.r(), d.epsilon);
    for u in FactorSubset::all(ds.r()).skip(1) {
        println!("  {:<24} nu {:>14.4} gamma {:>14.4}", u.named_label(names), d.nu(u), gains.exact[u.index()]);
    }
    Ok(Outcome::ok(vec![args.input.input.clone()], vec![path]))
}

fn read_mask(path: &Path) -> Result<Vec<Vec<u32>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let tuple = rec
            .iter()
            .map(|f| f.trim().parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: line {}: expected non-negative integers", path.display(), k + 1))?;
        out.push(tuple);
    }
    Ok(out)
}

fn per_factor<T: Copy>(values: &[T], r: usize, default: T, what: &str) -> Result<Vec<T>> {
    match values.len() {
        0 => Ok(vec![default; r]),
        1 => Ok(vec![values[0]; r]),
        n if n == r => Ok(values.to_vec()),
        n => bail!("{n} values for --{what}, expected 1 or {r}"),
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let kind = match args.pattern {
        PatternChoice::Zipf => {
            let r = args.r.ok_or_else(|| anyhow!("--r is required for the zipf pattern"))?;
            let n = args.n.ok_or_else(|| anyhow!("--n is required for the zipf pattern"))?;
            PatternKind::SparseZipf {
                levels: per_factor(&args.levels, r, n.max(2), "levels")?,
                exponents: per_factor(&args.exponents, r, 1.1, "exponents")?,
                n,
            }
        }
        PatternChoice::Grid => {
            if args.sizes.is_empty() {
                bail!("--sizes is required for the grid pattern");
            }
            PatternKind::CompleteGrid { sizes: args.sizes.clone() }
        }
        PatternChoice::Mask => {
            let path = args.mask.as_ref().ok_or_else(|| anyhow!("--mask is required for the mask pattern"))?;
            inputs.push(path.clone());
            PatternKind::ExplicitMask { indices: read_mask(path)? }
        }
    };
    let mut spec = PatternSpec::new(kind, args.pattern_seed.unwrap_or(args.seed));
    if let Some(count) = args.groups {
        spec = spec.with_groups(GroupAssignment::Random { count });
    }
    let pattern = simulator::Pattern::generate(&spec)?;
    let r = pattern.r();
    let truth = match (&args.sigma, &args.het) {
        (Some(_), Some(_)) => bail!("give either --sigma or --het, not both"),
        (Some(text), None) => {
            let map: BTreeMap<String, f64> =
                serde_json::from_str(text).context("--sigma must be a JSON object of subset labels to variances")?;
            let sigma = simulator::sigma_from_labels(r, map.iter().map(|(k, v)| (k.as_str(), *v)))?;
            TruthSpec::homoscedastic(args.mu, sigma)
        }
        (None, Some(range)) => TruthSpec::heteroscedastic(args.mu, range[0], range[1]),
        (None, None) => bail!("one of --sigma or --het is required"),
    }
    .with_effects(match args.effects {
        EffectChoice::Gaussian => EffectDistribution::Gaussian,
        EffectChoice::Uniform => EffectDistribution::Uniform,
    });
    let sim = pattern.simulate(&truth, args.seed)?;
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    sim.dataset.write_csv(create(&args.out)?)?;
    let mut truth_doc = sim.truth.to_json(sim.dataset.factor_names());
    truth_doc["true_mean_variance"] = json!(simulator::true_mean_variance(&sim.dataset, &sim.truth));
    truth_doc["pattern"] = serde_json::to_value(&spec)?;
    let truth_path = dir.join("truth.json");
    write_text(&truth_path, &report::to_json(&truth_doc))?;
    println!("wrote {} rows to {}", sim.dataset.len(), args.out.display());
    Ok(Outcome::ok(inputs, vec![args.out.clone(), truth_path]))
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome> {
    let suites: Vec<Suite> = if args.suite.is_empty() || args.suite.iter().any(|s| s == "all") {
        Suite::ALL.to_vec()
    } else {
        args.suite.iter().map(|s| s.parse::<Suite>().map_err(|e| anyhow!(e))).collect::<Result<_>>()?
    };
    let mut reports = Vec::new();
    for suite in suites {
        for r in oracle::run_suite(suite) {
            println!("{r}");
            reports.push(r);
        }
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", reports.len());
    let mut outputs = Vec::new();
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        let path = dir.join("verify_report.json");
        write_text(&path, &report::to_json(&reports))?;
        outputs.push(path);
    }
    Ok(Outcome { inputs: Vec::new(), outputs, status: if failed > 0 { 3 } else { 0 } })
}

pub fn collapse(args: &CollapseArgs) -> Result<Outcome> {
    let ds = load_dataset(&args.input)?;
    let outer = factor_set(&ds, &args.outer)?;
    let collapsed = engine::collapse_nested(&ds, outer)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    collapsed.write_csv(create(&args.out)?)?;
    println!("collapsed {} rows into {} cells", ds.len(), collapsed.len());
    Ok(Outcome::ok(vec![args.input.input.clone()], vec![args.out.clone()]))
}
