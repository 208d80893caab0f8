//! Serialized outputs: `summary.json`, `replicates.csv`, `contrast.json` and
//! `ecdf.csv`.
//!
//! The documents contain only quantities that are invariant to row order and
//! sharding, so identical inputs give byte-identical files.

use std::io::Write;

use serde::Serialize;

use crate::engine::{variance_summary, BootstrapResult, Contrast, VarianceSummary};
use crate::error::EngineError;
use crate::scalar::Real;

/// Run parameters echoed into the summary document.
#[derive(Debug, Clone, Serialize)]
pub struct RunDescription {
    /// `product` or `naive`.
    pub scheme: String,
    pub family: String,
    pub master_seed: u64,
    pub replicates: usize,
    /// Reweighted factor names (every factor for the naive scheme).
    pub active_factors: Vec<String>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary<F> {
    pub label: Vec<String>,
    pub rows: u64,
    pub count: u64,
    pub mean: F,
    pub data_variance: F,
    #[serde(flatten)]
    pub summary: VarianceSummary<F>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryDocument<F> {
    pub run: RunDescription,
    pub grouping: Vec<String>,
    pub level: f64,
    pub groups: Vec<GroupSummary<F>>,
}

pub fn summary_document<F: Real + Serialize>(
    result: &BootstrapResult<F>,
    run: RunDescription,
    level: f64,
) -> Result<SummaryDocument<F>, EngineError> {
    let groups = result
        .groups
        .iter()
        .map(|g| {
            Ok(GroupSummary {
                label: g.label.clone(),
                rows: g.rows,
                count: g.count,
                mean: g.mean,
                data_variance: g.data_variance,
                summary: variance_summary(g, level)?,
            })
        })
        .collect::<Result<_, EngineError>>()?;
    Ok(SummaryDocument { run, grouping: result.grouping.clone(), level, groups })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output documents serialize");
    s.push('\n');
    s
}

fn group_key(label: &[String]) -> String {
    if label.is_empty() {
        "all".to_string()
    } else {
        label.join(",")
    }
}

/// One row per (group, replicate): `group,b,t_star,n_star,mean`; `mean` is
/// empty for degenerate replicates.
pub fn write_replicates<F: Real, W: Write>(result: &BootstrapResult<F>, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "b", "t_star", "n_star", "mean"])?;
    for g in &result.groups {
        let key = group_key(&g.label);
        for b in 0..result.replicates {
            let mean = g.replicate_means[b].map(|m| m.into().to_string()).unwrap_or_default();
            w.write_record([
                key.clone(),
                b.to_string(),
                g.t_star[b].into().to_string(),
                g.n_star[b].into().to_string(),
                mean,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `d,ecdf` rows of a contrast.
pub fn write_ecdf<F: Real, W: Write>(contrast: &Contrast<F>, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d", "ecdf"])?;
    for (d, p) in &contrast.ecdf {
        w.write_record([(*d).into().to_string(), (*p).into().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastDocument<F> {
    pub run: RunDescription,
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub difference: F,
    #[serde(flatten)]
    pub summary: VarianceSummary<F>,
}

pub fn contrast_document<F: Real + Serialize>(contrast: &Contrast<F>, run: RunDescription) -> ContrastDocument<F> {
    ContrastDocument {
        run,
        a: contrast.a.clone(),
        b: contrast.b.clone(),
        difference: contrast.difference,
        summary: contrast.summary.clone(),
    }
}
