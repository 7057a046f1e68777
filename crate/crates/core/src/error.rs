use thiserror::Error;

use crate::panel::Year;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // panel structure
    #[error("panel has no observations")]
    EmptyPanel,
    #[error("duplicate observation for unit {unit} in year {year}")]
    DuplicateKey { unit: String, year: Year },
    #[error("treatment of unit {unit} switches off in year {year}; treatment must be absorbing")]
    NonAbsorbing { unit: String, year: Year },
    #[error("outcome {value} for unit {unit} in year {year} is not 0 or 1")]
    NonBinaryOutcome { unit: String, year: Year, value: f64 },
    #[error("non-finite value in column {column} for unit {unit} in year {year}")]
    NonFinite {
        unit: String,
        year: Year,
        column: String,
    },
    #[error("unit {unit}: {reason}")]
    InconsistentCohort { unit: String, reason: String },
    #[error("unit {unit} is already treated in the initial period {year}")]
    TreatedInInitialPeriod { unit: String, year: Year },
    #[error("unit {unit} carries covariates {found:?}, expected {expected:?}")]
    InconsistentCovariates {
        unit: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("unknown unit {0}")]
    UnknownUnit(String),
    #[error("unknown covariate {0}")]
    UnknownCovariate(String),

    // reconstruction
    #[error("respondent {0} has unknown smoking status")]
    UnknownStatus(String),
    #[error("respondent {id}: {reason}")]
    InconsistentAges { id: String, reason: String },
    #[error("respondent id {0} appears more than once")]
    DuplicateRespondent(String),
    #[error("policy table has no row for region {region} in year {year}")]
    MissingPolicyYear { region: String, year: Year },

    // policy coding
    #[error("cannot parse date {value:?}: {reason}")]
    DateParse { value: String, reason: String },
    #[error("more than one {kind} event for region {region}")]
    DuplicateEvent { region: String, kind: String },
    #[error("unknown policy kind {0:?}")]
    UnknownPolicyKind(String),

    // estimation
    #[error("no treated cohort in the panel")]
    NoTreatedUnits,
    #[error("cohort {g} is not present in the cohort index")]
    UnknownCohort { g: Year },
    #[error("cell (g={g}, t={t}): {reason}")]
    InfeasibleCell { g: Year, t: Year, reason: String },
    #[error("cell (g={g}, t={t}): empty comparison set")]
    EmptyComparisonSet { g: Year, t: Year },
    #[error("cell (g={g}, t={t}): no treated units observed in both periods")]
    EmptyTreatedSet { g: Year, t: Year },
    #[error("propensity score {max_score:.6} reaches the trim bound {bound:.6}; common support fails")]
    PropensityOverflow { max_score: f64, bound: f64 },
    #[error("singular design: {0}")]
    Singular(String),
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },
    #[error("{units} treated unit(s) have fewer than {required} pre-treatment periods")]
    InsufficientPretreatment { units: usize, required: usize },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("year {0} is not covered by the factor estimate")]
    MissingFactorYear(Year),

    // aggregation and inference
    #[error("missing group-time effect for cohort {g} at event time {e}")]
    MissingCell { g: Year, e: i32 },
    #[error("degenerate aggregation weights at event time {0}")]
    WeightDegenerate(i32),
    #[error("window {label} needs event time {e}, which is not available")]
    WindowOutOfRange { label: String, e: i32 },
    #[error("clustered variance needs at least two clusters")]
    SingleCluster,
    #[error("{failed} of {reps} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, reps: usize },
    #[error("bootstrap stratum {0:?} is empty")]
    EmptyStratum(String),

    // simulation and configuration
    #[error("infeasible simulation spec: {0}")]
    InfeasibleSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // io
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
