use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("record {record}: missing column `{column}`")]
    MissingColumn { record: usize, column: String },
    #[error("record {record}: cannot parse `{text}` in column `{column}` as a number")]
    UnparsableValue { record: usize, column: String, text: String },
    #[error("record {record}: value is not finite")]
    NonFiniteValue { record: usize },
    #[error("record {record}: empty level in column `{column}`")]
    EmptyLevel { record: usize, column: String },
    #[error("record {record}: expected {expected} fields, found {found}")]
    Arity { record: usize, expected: usize, found: usize },
    #[error("record {record} repeats the full index of record {first_record} (enable replicate mode to accept ties)")]
    DuplicateIndex { record: usize, first_record: usize },
    #[error("dataset has no observations")]
    Empty,
    #[error("dataset has no factors")]
    NoFactors,
    #[error("{r} factors requested, at most 16 are supported")]
    TooManyFactors { r: usize },
    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("record {record}: invalid JSON: {source}")]
    Json { record: usize, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("factor {factor} is not in the active factor set")]
    InactiveFactor { factor: usize },
    #[error("product reweighting needs at least one active factor")]
    NoActiveFactors,
    #[error("active factor {factor} out of range for {r} factors")]
    FactorOutOfRange { factor: usize, r: usize },
    #[error("weight variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("at least one replicate is required")]
    NoReplicates,
    #[error("unknown weight family `{0}`")]
    UnknownFamily(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("gain bounds are only available for tau^2 = 1 (got {0})")]
    BoundsUnavailable(f64),
    #[error("variance for observation {observation}, subset {subset} is not positive and finite")]
    NonPositiveVariance { observation: usize, subset: String },
    #[error("weight variance must be positive, got {0}")]
    InvalidTauSq(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("group {0:?} has no observations")]
    EmptyGroup(Vec<String>),
    #[error("every replicate of group {0:?} has zero total weight")]
    AllReplicatesDegenerate(Vec<String>),
    #[error("need at least {needed} non-degenerate replicates, have {have}")]
    InsufficientReplicates { needed: usize, have: usize },
    #[error("group {0:?} not present in the result")]
    MissingGroup(Vec<String>),
    #[error("accumulators were built with different configurations")]
    ConfigMismatch,
    #[error("unknown group column `{0}`")]
    UnknownGroupColumn(String),
    #[error("outer factor set {0} is not valid for this dataset")]
    InvalidOuter(String),
    #[error("group labels vary within one outer cell")]
    GroupNotNested,
    #[error(transparent)]
    Weight(#[from] WeightError),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("brute-force oracle limited to N <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },
}
