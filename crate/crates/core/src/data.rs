//! Dataset representation: interned factor levels, response values and
//! optional fixed-effect group labels.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::subset::{FactorSubset, MAX_FACTORS};

/// Name given to the synthetic factor appended in replicate mode.
pub const REPLICATE_FACTOR: &str = "replicate";

/// Interning table mapping opaque level identifiers to dense ids.
#[derive(Debug, Clone, Default)]
pub struct LevelTable {
    ids: HashMap<Box<[u8]>, u32>,
    names: Vec<Box<[u8]>>,
}

impl LevelTable {
    pub fn intern(&mut self, level: &[u8]) -> u32 {
        if let Some(&id) = self.ids.get(level) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(level.into());
        self.ids.insert(level.into(), id);
        id
    }

    pub fn get(&self, level: &[u8]) -> Option<u32> {
        self.ids.get(level).copied()
    }

    pub fn name(&self, id: u32) -> &[u8] {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One input record before interning.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub levels: Vec<Vec<u8>>,
    pub value: f64,
    pub group: Vec<String>,
}

impl Observation {
    pub fn new<L: AsRef<[u8]>>(levels: &[L], value: f64) -> Self {
        Self { levels: levels.iter().map(|l| l.as_ref().to_vec()).collect(), value, group: Vec::new() }
    }

    pub fn with_group<G: Into<String>>(mut self, group: impl IntoIterator<Item = G>) -> Self {
        self.group = group.into_iter().map(Into::into).collect();
        self
    }
}

/// Column names used to read records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Schema {
    pub factors: Vec<String>,
    pub value: String,
    #[serde(default)]
    pub groups: Vec<String>,
    /// Optional multiplicity column, as written for collapsed nested data.
    #[serde(default)]
    pub count: Option<String>,
}

impl Schema {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = S>, value: impl Into<String>) -> Self {
        Self {
            factors: factors.into_iter().map(Into::into).collect(),
            value: value.into(),
            groups: Vec::new(),
            count: None,
        }
    }

    pub fn with_groups<S: Into<String>>(mut self, groups: impl IntoIterator<Item = S>) -> Self {
        self.groups = groups.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Accept repeated full indices by appending a tie-breaking factor.
    pub replicates: bool,
}

/// An immutable set of observations on `r` crossed factors.
///
/// Each observation has a value, a multiplicity (1 unless the dataset was
/// produced by [`crate::engine::collapse_nested`]) and a label per group column.
#[derive(Debug, Clone)]
pub struct Dataset {
    factor_names: Vec<String>,
    group_names: Vec<String>,
    levels: Vec<LevelTable>,
    group_levels: Vec<LevelTable>,
    index: Vec<u32>,
    groups: Vec<u32>,
    values: Vec<f64>,
    counts: Option<Vec<u64>>,
    factor_keys: Vec<u32>,
}

impl Dataset {
    pub fn r(&self) -> usize {
        self.factor_names.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn level_table(&self, factor: usize) -> &LevelTable {
        &self.levels[factor]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Multiplicity `M` of row `i` (1 for ordinary observations).
    pub fn count(&self, i: usize) -> u64 {
        self.counts.as_ref().map_or(1, |c| c[i])
    }

    pub fn has_counts(&self) -> bool {
        self.counts.is_some()
    }

    /// Total multiplicity `Σ M`; equals `N` for ordinary data.
    pub fn total_count(&self) -> u64 {
        self.counts.as_ref().map_or(self.len() as u64, |c| c.iter().sum())
    }

    /// Interned level ids of row `i`, one per factor.
    pub fn level_ids(&self, i: usize) -> &[u32] {
        let r = self.r();
        &self.index[i * r..(i + 1) * r]
    }

    pub fn level_bytes(&self, i: usize, factor: usize) -> &[u8] {
        self.levels[factor].name(self.level_ids(i)[factor])
    }

    pub fn group_label(&self, i: usize, column: usize) -> &str {
        let id = self.groups[i * self.group_names.len() + column];
        std::str::from_utf8(self.group_levels[column].name(id)).expect("group labels are utf-8")
    }

    pub fn group_labels(&self, i: usize) -> Vec<String> {
        (0..self.group_names.len()).map(|c| self.group_label(i, c).to_string()).collect()
    }

    pub fn group_column(&self, name: &str) -> Option<usize> {
        self.group_names.iter().position(|g| g == name)
    }

    /// Identity of factor `j` in the weight hash. Equal to `j` except for
    /// datasets produced by collapsing, which keep the original positions so
    /// that collapsed and uncollapsed runs draw the same weights.
    pub fn factor_key(&self, j: usize) -> usize {
        self.factor_keys[j] as usize
    }

    /// Makes the multiplicity column explicit even when every count is 1.
    pub(crate) fn with_counts(mut self) -> Dataset {
        if self.counts.is_none() {
            self.counts = Some(vec![1; self.len()]);
        }
        self
    }

    pub(crate) fn with_factor_keys(mut self, keys: Vec<u32>) -> Dataset {
        assert_eq!(keys.len(), self.r());
        self.factor_keys = keys;
        self
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factor_names.iter().position(|f| f == name)
    }

    /// Levels of row `i` restricted to the factors in `u`, in factor order.
    pub fn project(&self, i: usize, u: FactorSubset) -> Vec<&[u8]> {
        u.members().map(|j| self.level_bytes(i, j)).collect()
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            levels: (0..self.r()).map(|j| self.level_bytes(i, j).to_vec()).collect(),
            value: self.values[i],
            group: self.group_labels(i),
        }
    }

    /// Copy of the dataset with the response values replaced.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Dataset, DataError> {
        if values.len() != self.len() {
            return Err(DataError::LengthMismatch { expected: self.len(), found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue { record: pos + 1 });
        }
        Ok(Dataset { values, ..self.clone() })
    }

    /// Rows in the given order; used to check order invariance.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        let mut b = DatasetBuilder::new(self.factor_names.clone(), self.group_names.clone());
        for &i in order {
            b.push_row(&self.observation(i), self.count(i)).expect("rows of a valid dataset are valid");
        }
        b.finish_unchecked().with_factor_keys(self.factor_keys.clone())
    }

    /// Appends a factor that enumerates `1, 2, …` within each repeated full index,
    /// making all full indices unique.
    pub fn add_replicate_factor(&self) -> Dataset {
        let r = self.r();
        assert!(r < MAX_FACTORS, "no room for a replicate factor");
        let mut names = self.factor_names.clone();
        names.push(REPLICATE_FACTOR.to_string());
        let mut seen: HashMap<&[u32], u64> = HashMap::new();
        let mut b = DatasetBuilder::new(names, self.group_names.clone());
        for i in 0..self.len() {
            let k = seen.entry(self.level_ids(i)).or_insert(0);
            *k += 1;
            let mut obs = self.observation(i);
            obs.levels.push(k.to_string().into_bytes());
            b.push_row(&obs, self.count(i)).expect("valid row");
        }
        let mut keys = self.factor_keys.clone();
        keys.push(keys.iter().max().map_or(0, |k| k + 1));
        b.finish_unchecked().with_factor_keys(keys)
    }

    /// Writes the dataset as CSV with the given schema's column names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.factor_names.clone();
        header.extend(self.group_names.iter().cloned());
        header.push("value".to_string());
        if self.counts.is_some() {
            header.push("count".to_string());
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> =
                (0..self.r()).map(|j| String::from_utf8_lossy(self.level_bytes(i, j)).into_owned()).collect();
            rec.extend(self.group_labels(i));
            rec.push(format!("{}", self.values[i]));
            if let Some(c) = &self.counts {
                rec.push(c[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The schema matching [`Dataset::write_csv`] output.
    pub fn csv_schema(&self) -> Schema {
        Schema {
            factors: self.factor_names.clone(),
            value: "value".to_string(),
            groups: self.group_names.clone(),
            count: self.counts.as_ref().map(|_| "count".to_string()),
        }
    }
}

/// Incremental construction of a [`Dataset`] with validation.
#[derive(Debug)]
pub struct DatasetBuilder {
    factor_names: Vec<String>,
    group_names: Vec<String>,
    levels: Vec<LevelTable>,
    group_levels: Vec<LevelTable>,
    index: Vec<u32>,
    groups: Vec<u32>,
    values: Vec<f64>,
    counts: Vec<u64>,
    any_count: bool,
}

impl DatasetBuilder {
    pub fn new(factor_names: Vec<String>, group_names: Vec<String>) -> Self {
        let r = factor_names.len();
        let g = group_names.len();
        Self {
            factor_names,
            group_names,
            levels: vec![LevelTable::default(); r],
            group_levels: vec![LevelTable::default(); g],
            index: Vec::new(),
            groups: Vec::new(),
            values: Vec::new(),
            counts: Vec::new(),
            any_count: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn push(&mut self, obs: &Observation) -> Result<(), DataError> {
        self.push_row(obs, 1)
    }

    /// Adds a row with multiplicity `count` (its value is the row total).
    pub fn push_row(&mut self, obs: &Observation, count: u64) -> Result<(), DataError> {
        let record = self.values.len() + 1;
        if obs.levels.len() != self.factor_names.len() {
            return Err(DataError::Arity { record, expected: self.factor_names.len(), found: obs.levels.len() });
        }
        if obs.group.len() != self.group_names.len() {
            return Err(DataError::Arity { record, expected: self.group_names.len(), found: obs.group.len() });
        }
        if !obs.value.is_finite() {
            return Err(DataError::NonFiniteValue { record });
        }
        for (j, level) in obs.levels.iter().enumerate() {
            if level.is_empty() {
                return Err(DataError::EmptyLevel { record, column: self.factor_names[j].clone() });
            }
        }
        for (j, level) in obs.levels.iter().enumerate() {
            let id = self.levels[j].intern(level);
            self.index.push(id);
        }
        for (c, label) in obs.group.iter().enumerate() {
            let id = self.group_levels[c].intern(label.as_bytes());
            self.groups.push(id);
        }
        self.values.push(obs.value);
        self.counts.push(count);
        self.any_count |= count != 1;
        Ok(())
    }

    /// Validates and returns the dataset. Repeated full indices are an error
    /// unless `replicates` is set, in which case a replicate factor is appended.
    pub fn finish(self, options: IngestOptions) -> Result<Dataset, DataError> {
        let r = self.factor_names.len();
        if r == 0 {
            return Err(DataError::NoFactors);
        }
        if r > MAX_FACTORS {
            return Err(DataError::TooManyFactors { r });
        }
        if self.values.is_empty() {
            return Err(DataError::Empty);
        }
        let mut first: HashMap<&[u32], usize> = HashMap::with_capacity(self.values.len());
        let mut duplicate = None;
        for (i, key) in self.index.chunks(r).enumerate() {
            if let Some(&prev) = first.get(key) {
                duplicate = Some((i + 1, prev + 1));
                break;
            }
            first.insert(key, i);
        }
        drop(first);
        let ds = self.finish_unchecked();
        match (duplicate, options.replicates) {
            (_, true) => {
                if r == MAX_FACTORS {
                    return Err(DataError::TooManyFactors { r: r + 1 });
                }
                Ok(ds.add_replicate_factor())
            }
            (Some((record, first_record)), false) => Err(DataError::DuplicateIndex { record, first_record }),
            (None, false) => Ok(ds),
        }
    }

    pub(crate) fn finish_unchecked(self) -> Dataset {
        let r = self.factor_names.len();
        Dataset {
            factor_names: self.factor_names,
            group_names: self.group_names,
            levels: self.levels,
            group_levels: self.group_levels,
            index: self.index,
            groups: self.groups,
            values: self.values,
            counts: if self.any_count { Some(self.counts) } else { None },
            factor_keys: (0..r as u32).collect(),
        }
    }
}

/// Builds a dataset from in-memory observations.
pub fn dataset_from_observations(
    factor_names: &[&str],
    group_names: &[&str],
    observations: &[Observation],
    options: IngestOptions,
) -> Result<Dataset, DataError> {
    let mut b = DatasetBuilder::new(
        factor_names.iter().map(|s| s.to_string()).collect(),
        group_names.iter().map(|s| s.to_string()).collect(),
    );
    for obs in observations {
        b.push(obs)?;
    }
    b.finish(options)
}

/// Builds an ungrouped dataset from integer index tuples; factors are named
/// `f1..fr`.
pub fn dataset_from_indices(indices: &[Vec<u32>], values: &[f64]) -> Result<Dataset, DataError> {
    assert_eq!(indices.len(), values.len());
    let r = indices.first().map_or(0, Vec::len);
    let mut b = DatasetBuilder::new((1..=r).map(|j| format!("f{j}")).collect(), Vec::new());
    for (idx, &v) in indices.iter().zip(values) {
        let levels: Vec<String> = idx.iter().map(u32::to_string).collect();
        b.push(&Observation::new(&levels, v))?;
    }
    b.finish(IngestOptions::default())
}

fn parse_value(text: &str, record: usize, column: &str) -> Result<f64, DataError> {
    let v: f64 = text.trim().parse().map_err(|_| DataError::UnparsableValue {
        record,
        column: column.to_string(),
        text: text.to_string(),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFiniteValue { record });
    }
    Ok(v)
}

fn parse_count(text: &str, record: usize, column: &str) -> Result<u64, DataError> {
    text.trim().parse().map_err(|_| DataError::UnparsableValue {
        record,
        column: column.to_string(),
        text: text.to_string(),
    })
}

/// Reads CSV records (header row required) into a dataset.
pub fn read_csv<R: Read>(reader: R, schema: &Schema, options: IngestOptions) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { record: 0, column: name.to_string() })
    };
    let factor_cols = schema.factors.iter().map(|f| col(f)).collect::<Result<Vec<_>, _>>()?;
    let group_cols = schema.groups.iter().map(|g| col(g)).collect::<Result<Vec<_>, _>>()?;
    let value_col = col(&schema.value)?;
    let count_col = schema.count.as_deref().map(col).transpose()?;

    let mut b = DatasetBuilder::new(schema.factors.clone(), schema.groups.clone());
    for (n, rec) in rdr.records().enumerate() {
        let record = n + 1;
        let rec = rec?;
        let field = |c: usize, name: &str| -> Result<&str, DataError> {
            rec.get(c).ok_or_else(|| DataError::MissingColumn { record, column: name.to_string() })
        };
        let levels = factor_cols
            .iter()
            .zip(&schema.factors)
            .map(|(&c, name)| field(c, name).map(|s| s.as_bytes().to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let group = group_cols
            .iter()
            .zip(&schema.groups)
            .map(|(&c, name)| field(c, name).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let value = parse_value(field(value_col, &schema.value)?, record, &schema.value)?;
        let count = match (count_col, &schema.count) {
            (Some(c), Some(name)) => parse_count(field(c, name)?, record, name)?,
            _ => 1,
        };
        b.push_row(&Observation { levels, value, group }, count)?;
    }
    b.finish(options)
}

fn json_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Reads JSON Lines records (one object per line, blank lines skipped).
pub fn read_jsonl<R: BufRead>(reader: R, schema: &Schema, options: IngestOptions) -> Result<Dataset, DataError> {
    let mut b = DatasetBuilder::new(schema.factors.clone(), schema.groups.clone());
    let mut record = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        record += 1;
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|source| DataError::Json { record, source })?;
        let get = |name: &str| -> Result<String, DataError> {
            obj.get(name)
                .and_then(json_text)
                .ok_or_else(|| DataError::MissingColumn { record, column: name.to_string() })
        };
        let levels = schema.factors.iter().map(|f| get(f).map(String::into_bytes)).collect::<Result<Vec<_>, _>>()?;
        let group = schema.groups.iter().map(|g| get(g)).collect::<Result<Vec<_>, _>>()?;
        let value = parse_value(&get(&schema.value)?, record, &schema.value)?;
        let count = match &schema.count {
            Some(name) => parse_count(&get(name)?, record, name)?,
            None => 1,
        };
        b.push_row(&Observation { levels, value, group }, count)?;
    }
    b.finish(options)
}
