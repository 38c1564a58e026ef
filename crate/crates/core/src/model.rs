//! Domain types shared by every analysis stage.
//!
//! Runs, biases, response records, score matrices and labelings live here.
//! Everything is immutable once constructed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown bias name `{0}`")]
    UnknownBias(String),
    #[error("run `{0}` is a seeded replica but carries no seed")]
    MissingSeed(String),
    #[error("run `{0}` is an original full finetune but carries a seed")]
    UnexpectedSeed(String),
    #[error("run id `{0}` does not follow `<pretrain>-<instruction>-s<seed>` or `<pretrain>-<instruction>-org`")]
    BadRunId(String),
    #[error("score {value} for feature `{row}` / run `{col}` is outside [-1, 1]")]
    OutOfRange { row: String, col: String, value: f64 },
    #[error("duplicate feature label `{0}`")]
    DuplicateFeature(String),
    #[error("duplicate run id `{0}`")]
    DuplicateRun(String),
    #[error("matrix shape mismatch: {rows} rows x {cols} cols but {values} values")]
    Shape { rows: usize, cols: usize, values: usize },
    #[error("labeling needs exactly two groups, found {0}")]
    GroupCount(usize),
    #[error("orientation must be -1 or +1, got {0}")]
    BadOrientation(i64),
    #[error("significance threshold needs n >= 2, got {0}")]
    ThresholdSampleSize(u64),
    #[error("significance threshold needs sigma > 0 and 0 < p < 1 (sigma={sigma}, p={p})")]
    ThresholdParams { sigma: f64, p: f64 },
}

/// How a run came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    SeededReplica,
    OriginalFullFinetune,
    External,
}

/// Identity of one evaluated model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelRun {
    pub run_id: String,
    pub pretrain_id: String,
    pub instruction_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u32>,
    pub origin: Origin,
}

impl ModelRun {
    pub fn new(
        run_id: impl Into<String>,
        pretrain_id: impl Into<String>,
        instruction_id: impl Into<String>,
        seed: Option<u32>,
        origin: Origin,
    ) -> Result<Self, ModelError> {
        let run = Self {
            run_id: run_id.into(),
            pretrain_id: pretrain_id.into(),
            instruction_id: instruction_id.into(),
            seed,
            origin,
        };
        run.check()?;
        Ok(run)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        match (self.origin, self.seed) {
            (Origin::SeededReplica, None) => Err(ModelError::MissingSeed(self.run_id.clone())),
            (Origin::OriginalFullFinetune, Some(_)) => Err(ModelError::UnexpectedSeed(self.run_id.clone())),
            _ => Ok(()),
        }
    }

    /// Parses the `<pretrain>-<instruction>-s<seed>` / `<pretrain>-<instruction>-org`
    /// column convention. The pretrain part may itself contain hyphens.
    pub fn from_run_id(run_id: &str) -> Result<Self, ModelError> {
        let bad = || ModelError::BadRunId(run_id.to_string());
        let (rest, tag) = run_id.rsplit_once('-').ok_or_else(bad)?;
        let (pretrain, instruction) = rest.rsplit_once('-').ok_or_else(bad)?;
        if pretrain.is_empty() || instruction.is_empty() {
            return Err(bad());
        }
        let (seed, origin) = if tag == "org" {
            (None, Origin::OriginalFullFinetune)
        } else if let Some(num) = tag.strip_prefix('s') {
            (Some(num.parse().map_err(|_| bad())?), Origin::SeededReplica)
        } else {
            return Err(bad());
        };
        Self::new(run_id, pretrain, instruction, seed, origin)
    }
}

/// Scoring form used by a bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasKind {
    ScalePair,
    Proportion,
}

/// Bias names in reporting order. The first 30 are the scenario-structured
/// scale-pair biases, then Certainty and Belief Valid, then Belief Invalid,
/// which is scorable but not part of bias vectors.
pub const BIAS_CATALOG: [&str; 33] = [
    "Anchoring",
    "Anthropomorphism",
    "Availability Heuristic",
    "Bandwagon Effect",
    "Confirmation Bias",
    "Conservatism",
    "Disposition Effect",
    "Endowment Effect",
    "Escalation of Commitment",
    "Framing Effect",
    "Fundamental Attribution Error",
    "Halo Effect",
    "Hindsight Bias",
    "Hyperbolic Discounting",
    "Illusion of Control",
    "In-Group Bias",
    "Information Bias",
    "Loss Aversion",
    "Mental Accounting",
    "Negativity Bias",
    "Not Invented Here",
    "Optimism Bias",
    "Planning Fallacy",
    "Reactance",
    "Risk Compensation",
    "Self-Serving Bias",
    "Social Desirability Bias",
    "Status-Quo Bias",
    "Stereotyping",
    "Survivorship Bias",
    "Certainty",
    "Belief Valid",
    "Belief Invalid",
];

pub const SCALE_PAIR_COUNT: usize = 30;
pub const VECTOR_BIAS_COUNT: usize = 32;

// Short forms seen in printed tables.
const ALIASES: &[(&str, &str)] = &[
    ("anchoring bias", "Anchoring"),
    ("availability h", "Availability Heuristic"),
    ("escalation of c", "Escalation of Commitment"),
    ("fundamental a e", "Fundamental Attribution Error"),
    ("not invented here syndrome", "Not Invented Here"),
    ("self serving", "Self-Serving Bias"),
    ("social desirability", "Social Desirability Bias"),
    ("survivorship", "Survivorship Bias"),
    ("certainty effect", "Certainty"),
    ("conservatism bias", "Conservatism"),
    ("status quo", "Status-Quo Bias"),
];

fn normalize_name(s: &str) -> String {
    let mapped: String =
        s.trim().chars().map(|c| if c == '-' || c == '_' || c == '.' { ' ' } else { c.to_ascii_lowercase() }).collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BiasId(u8);

impl BiasId {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < BIAS_CATALOG.len()).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        BIAS_CATALOG[self.index()]
    }

    pub fn kind(self) -> BiasKind {
        if self.index() < SCALE_PAIR_COUNT {
            BiasKind::ScalePair
        } else {
            BiasKind::Proportion
        }
    }

    /// Whether the bias is a feature of bias-level vectors (all but Belief Invalid).
    pub fn in_vectors(self) -> bool {
        self.index() < VECTOR_BIAS_COUNT
    }

    pub fn all() -> impl Iterator<Item = BiasId> {
        (0..BIAS_CATALOG.len()).map(|i| BiasId(i as u8))
    }

    pub fn vector_biases() -> impl Iterator<Item = BiasId> {
        (0..VECTOR_BIAS_COUNT).map(|i| BiasId(i as u8))
    }

    pub fn scale_pair_biases() -> impl Iterator<Item = BiasId> {
        (0..SCALE_PAIR_COUNT).map(|i| BiasId(i as u8))
    }
}

impl FromStr for BiasId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = normalize_name(s);
        if let Some(i) = BIAS_CATALOG.iter().position(|n| normalize_name(n) == wanted) {
            return Ok(BiasId(i as u8));
        }
        ALIASES
            .iter()
            .find(|(alias, _)| *alias == wanted)
            .and_then(|(_, canon)| BIAS_CATALOG.iter().position(|n| n == canon))
            .map(|i| BiasId(i as u8))
            .ok_or_else(|| ModelError::UnknownBias(s.to_string()))
    }
}

impl fmt::Display for BiasId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Debug for BiasId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BiasId({})", self.name())
    }
}

impl Serialize for BiasId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for BiasId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Answer scale of a response record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// 7-point Likert scale, values 1..=7.
    Likert7,
    /// 11-point percentage scale, values 0, 10, ..., 100.
    Percent11,
    /// Categorical choice against a target option (proportion biases).
    TargetChoice,
}

impl Scale {
    pub fn on_grid(self, value: f64) -> bool {
        match self {
            Scale::Likert7 => value.fract() == 0.0 && (1.0..=7.0).contains(&value),
            Scale::Percent11 => (0.0..=100.0).contains(&value) && value.fract() == 0.0 && (value as i64) % 10 == 0,
            Scale::TargetChoice => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Control,
    Treatment,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Control => "control",
            Condition::Treatment => "treatment",
        })
    }
}

/// Orientation `k` of the expected effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation(i8);

impl Orientation {
    pub const POSITIVE: Orientation = Orientation(1);
    pub const NEGATIVE: Orientation = Orientation(-1);

    pub fn new(k: i64) -> Result<Self, ModelError> {
        match k {
            1 => Ok(Self::POSITIVE),
            -1 => Ok(Self::NEGATIVE),
            other => Err(ModelError::BadOrientation(other)),
        }
    }

    pub fn sign(self) -> f64 {
        f64::from(self.0)
    }

    pub fn flipped(self) -> Self {
        Orientation(-self.0)
    }
}

impl Serialize for Orientation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.0)
    }
}

impl<'de> Deserialize<'de> for Orientation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let k = i64::deserialize(d)?;
        Orientation::new(k).map_err(serde::de::Error::custom)
    }
}

/// One model answer to one prompt condition.
///
/// A record with neither `answer_value` nor `answer_option` is a non-response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub run_id: String,
    pub bias: BiasId,
    pub scenario_id: u32,
    pub instance_id: u32,
    pub condition: Condition,
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_option: Option<String>,
    pub k: Orientation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_option: Option<String>,
}

impl ResponseRecord {
    pub fn is_response(&self) -> bool {
        match self.scale {
            Scale::TargetChoice => self.answer_option.is_some(),
            _ => self.answer_value.is_some(),
        }
    }

    pub fn instance_key(&self) -> InstanceKey {
        InstanceKey {
            run_id: self.run_id.clone(),
            bias: self.bias,
            scenario_id: self.scenario_id,
            instance_id: self.instance_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub run_id: String,
    pub bias: BiasId,
    pub scenario_id: u32,
    pub instance_id: u32,
}

impl fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run `{}`, bias `{}`, scenario {}, instance {}",
            self.run_id, self.bias, self.scenario_id, self.instance_id
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    BiasLevel,
    ScenarioLevel,
}

/// Row label of a scenario-level feature.
pub fn scenario_label(bias: BiasId, scenario_id: u32) -> String {
    format!("{}::{}", bias.name(), scenario_id)
}

/// Splits a scenario-level label back into its bias and scenario.
pub fn parse_scenario_label(label: &str) -> Option<(BiasId, u32)> {
    let (bias, scenario) = label.rsplit_once("::")?;
    Some((bias.parse().ok()?, scenario.parse().ok()?))
}

/// Features x runs matrix of scores in [-1, 1] with explicit missing entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    granularity: Granularity,
    rows: Vec<String>,
    cols: Vec<String>,
    values: Vec<Option<f64>>,
}

impl ScoreMatrix {
    /// `values` is row-major. Negative zero is folded to zero.
    pub fn new(
        granularity: Granularity,
        rows: Vec<String>,
        cols: Vec<String>,
        values: Vec<Option<f64>>,
    ) -> Result<Self, ModelError> {
        if values.len() != rows.len() * cols.len() {
            return Err(ModelError::Shape { rows: rows.len(), cols: cols.len(), values: values.len() });
        }
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.as_str()) {
                return Err(ModelError::DuplicateFeature(r.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &cols {
            if !seen.insert(c.as_str()) {
                return Err(ModelError::DuplicateRun(c.clone()));
            }
        }
        let mut values = values;
        for (i, v) in values.iter_mut().enumerate() {
            if let Some(x) = v {
                if !(-1.0..=1.0).contains(x) {
                    return Err(ModelError::OutOfRange {
                        row: rows[i / cols.len()].clone(),
                        col: cols[i % cols.len()].clone(),
                        value: *x,
                    });
                }
                *x += 0.0;
            }
        }
        Ok(Self { granularity, rows, cols, values })
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn rows(&self) -> &[String] {
        &self.rows
    }

    pub fn cols(&self) -> &[String] {
        &self.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn row_index(&self, label: &str) -> Option<usize> {
        self.rows.iter().position(|r| r == label)
    }

    pub fn col_index(&self, run_id: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == run_id)
    }

    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.cols.len() + col]
    }

    pub fn get(&self, row: &str, run_id: &str) -> Option<f64> {
        self.at(self.row_index(row)?, self.col_index(run_id)?)
    }

    pub fn row_values(&self, row: usize) -> &[Option<f64>] {
        let n = self.cols.len();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn column_values(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.rows.len()).map(|r| self.at(r, col)).collect()
    }

    /// Locates the row holding `bias` at bias level, tolerating table aliases.
    pub fn bias_row(&self, bias: BiasId) -> Option<usize> {
        self.rows.iter().position(|r| r.parse::<BiasId>().map(|b| b == bias).unwrap_or(false))
    }

    /// Column-wise concatenation; row sets must match exactly in order.
    pub fn hconcat(&self, other: &ScoreMatrix) -> Result<ScoreMatrix, ModelError> {
        if self.rows != other.rows {
            return Err(ModelError::Shape {
                rows: self.rows.len(),
                cols: self.cols.len() + other.cols.len(),
                values: 0,
            });
        }
        let mut cols = self.cols.clone();
        cols.extend(other.cols.iter().cloned());
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        for r in 0..self.rows.len() {
            values.extend_from_slice(self.row_values(r));
            values.extend_from_slice(other.row_values(r));
        }
        ScoreMatrix::new(self.granularity, self.rows.clone(), cols, values)
    }

    /// Keeps only the listed runs, in the given order.
    pub fn select_cols(&self, run_ids: &[String]) -> Option<ScoreMatrix> {
        let idx: Vec<usize> = run_ids.iter().map(|r| self.col_index(r)).collect::<Option<_>>()?;
        let mut values = Vec::with_capacity(self.rows.len() * idx.len());
        for r in 0..self.rows.len() {
            values.extend(idx.iter().map(|&c| self.at(r, c)));
        }
        ScoreMatrix::new(self.granularity, self.rows.clone(), run_ids.to_vec(), values).ok()
    }
}

/// One model's bias fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVector {
    pub run_id: String,
    pub features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Positive,
    Neutral,
    Negative,
}

impl Direction {
    pub fn mirror(self) -> Self {
        match self {
            Direction::Positive => Direction::Negative,
            Direction::Neutral => Direction::Neutral,
            Direction::Negative => Direction::Positive,
        }
    }
}

/// Bound below which a score is indistinguishable from zero under a
/// two-sample z-test with `n` samples per group and standard deviation at most `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceThreshold {
    pub n: u64,
    pub sigma: f64,
    pub p: f64,
    pub threshold: f64,
}

impl SignificanceThreshold {
    pub fn derive(n: u64, sigma: f64, p: f64) -> Result<Self, ModelError> {
        if n < 2 {
            return Err(ModelError::ThresholdSampleSize(n));
        }
        if !(sigma > 0.0 && sigma.is_finite() && p > 0.0 && p < 1.0) {
            return Err(ModelError::ThresholdParams { sigma, p });
        }
        let z = crate::stats::two_sided_z(p);
        let threshold = z * (2.0 * sigma * sigma / n as f64).sqrt();
        Ok(Self { n, sigma, p, threshold })
    }

    pub fn categorize(&self, score: f64) -> Direction {
        if score > self.threshold {
            Direction::Positive
        } else if score < -self.threshold {
            Direction::Negative
        } else {
            Direction::Neutral
        }
    }

    pub fn is_significant(&self, score: f64) -> bool {
        score.abs() > self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Pretraining,
    Instruction,
    Random,
    Kmeans,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Pretraining => "Pretraining",
            Scheme::Instruction => "Instruction",
            Scheme::Random => "Random",
            Scheme::Kmeans => "K-Means",
        })
    }
}

/// Two-way cluster assignment aligned with a run order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    pub scheme: Scheme,
    pub labels: Vec<u8>,
}

impl Labeling {
    pub fn new(scheme: Scheme, labels: Vec<u8>) -> Self {
        Self { scheme, labels }
    }

    /// Labels runs by a key; the first key seen becomes cluster 0.
    pub fn by_key<'a>(scheme: Scheme, keys: impl IntoIterator<Item = &'a str>) -> Result<Self, ModelError> {
        let mut order: Vec<&str> = Vec::new();
        let mut labels = Vec::new();
        for key in keys {
            let idx = match order.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            labels.push(idx as u8);
        }
        if order.len() != 2 {
            return Err(ModelError::GroupCount(order.len()));
        }
        Ok(Self { scheme, labels })
    }

    pub fn by_pretraining(runs: &[ModelRun]) -> Result<Self, ModelError> {
        Self::by_key(Scheme::Pretraining, runs.iter().map(|r| r.pretrain_id.as_str()))
    }

    pub fn by_instruction(runs: &[ModelRun]) -> Result<Self, ModelError> {
        Self::by_key(Scheme::Instruction, runs.iter().map(|r| r.instruction_id.as_str()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_sizes(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    /// Number of runs whose label differs from `other`, minimised over the
    /// label swap.
    pub fn disagreements(&self, other: &Labeling) -> usize {
        let d = self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count();
        d.min(self.labels.len() - d)
    }
}

/// A single problem found by [`validate_study`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "kebab-case")]
pub enum Issue {
    DuplicateRunId { run_id: String },
    UnknownRunId { run_id: String },
    UnpairedInstance { key: InstanceKey, missing: Condition },
    DuplicateRecord { key: InstanceKey, condition: Condition },
    MismatchedPair { key: InstanceKey },
    OffGridValue { key: InstanceKey, condition: Condition, value: String },
    MissingTargetOption { key: InstanceKey, condition: Condition },
    EmptyConditionGroup { run_id: String, bias: BiasId, missing: Condition },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::DuplicateRunId { run_id } => write!(f, "duplicate run id `{run_id}`"),
            Issue::UnknownRunId { run_id } => write!(f, "records reference unknown run `{run_id}`"),
            Issue::UnpairedInstance { key, missing } => {
                write!(f, "unpaired instance ({key}): no {missing} record")
            }
            Issue::DuplicateRecord { key, condition } => {
                write!(f, "duplicate {condition} record ({key})")
            }
            Issue::MismatchedPair { key } => {
                write!(f, "control/treatment disagree on scale or k ({key})")
            }
            Issue::OffGridValue { key, condition, value } => {
                write!(f, "off-grid value {value} in {condition} record ({key})")
            }
            Issue::MissingTargetOption { key, condition } => {
                write!(f, "missing target_option in {condition} record ({key})")
            }
            Issue::EmptyConditionGroup { run_id, bias, missing } => {
                write!(f, "run `{run_id}`, bias `{bias}` has no {missing} records")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub runs: usize,
    pub records: usize,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks study integrity. Issues come back sorted, so the report does not
/// depend on record order.
pub fn validate_study<'a, I>(runs: &[ModelRun], records: I) -> ValidationReport
where
    I: IntoIterator<Item = &'a ResponseRecord>,
{
    let mut issues = BTreeSet::new();
    let mut known = BTreeSet::new();
    for run in runs {
        if !known.insert(run.run_id.as_str()) {
            issues.insert(Issue::DuplicateRunId { run_id: run.run_id.clone() });
        }
    }

    let mut pairs: BTreeMap<InstanceKey, [Vec<&ResponseRecord>; 2]> = BTreeMap::new();
    let mut groups: BTreeMap<(String, BiasId), [usize; 2]> = BTreeMap::new();
    let mut n_records = 0;
    for rec in records {
        n_records += 1;
        if !runs.is_empty() && !known.contains(rec.run_id.as_str()) {
            issues.insert(Issue::UnknownRunId { run_id: rec.run_id.clone() });
        }
        let key = rec.instance_key();
        let slot = rec.condition as usize;
        match rec.bias.kind() {
            BiasKind::ScalePair => {
                if let Some(v) = rec.answer_value {
                    if !rec.scale.on_grid(v) {
                        issues.insert(Issue::OffGridValue {
                            key: key.clone(),
                            condition: rec.condition,
                            value: v.to_string(),
                        });
                    }
                }
                pairs.entry(key).or_default()[slot].push(rec);
            }
            BiasKind::Proportion => {
                if rec.target_option.is_none() {
                    issues.insert(Issue::MissingTargetOption { key, condition: rec.condition });
                }
                groups.entry((rec.run_id.clone(), rec.bias)).or_default()[slot] += 1;
            }
        }
    }

    for (key, [control, treatment]) in &pairs {
        for (recs, cond) in [(control, Condition::Control), (treatment, Condition::Treatment)] {
            if recs.len() > 1 {
                issues.insert(Issue::DuplicateRecord { key: key.clone(), condition: cond });
            }
        }
        match (control.first(), treatment.first()) {
            (Some(c), Some(t)) => {
                if c.scale != t.scale || c.k != t.k {
                    issues.insert(Issue::MismatchedPair { key: key.clone() });
                }
            }
            (None, _) => {
                issues.insert(Issue::UnpairedInstance { key: key.clone(), missing: Condition::Control });
            }
            (_, None) => {
                issues.insert(Issue::UnpairedInstance { key: key.clone(), missing: Condition::Treatment });
            }
        }
    }
    for ((run_id, bias), [control, treatment]) in groups {
        for (count, missing) in [(control, Condition::Control), (treatment, Condition::Treatment)] {
            if count == 0 {
                issues.insert(Issue::EmptyConditionGroup { run_id: run_id.clone(), bias, missing });
            }
        }
    }

    ValidationReport { runs: runs.len(), records: n_records, issues: issues.into_iter().collect() }
}
