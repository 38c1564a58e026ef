//! Seed-variance analysis.
//!
//! Replicas finetuned identically except for the random seed form a
//! [`SeedGroup`]. For each bias we measure the spread across seeds, and check
//! whether seed aggregates (mean, median, majority direction) still agree
//! with the original fully finetuned model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BiasId, BiasKind, Direction, ModelError, ModelRun, Origin, ScoreMatrix, SignificanceThreshold};
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RandomnessError {
    #[error("standard deviation needs at least 2 seed scores, got {0}")]
    TooFewSeeds(usize),
    #[error("seed group {0} has no reference run")]
    MissingReference(String),
    #[error("run `{0}` not found in score matrix")]
    MissingRun(String),
    #[error("correlation needs at least 3 paired values, got {0}")]
    TooFewPairs(usize),
    #[error("correlation undefined: one side has zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sample standard deviation of one bias across seeds (divisor K-1).
pub fn seed_std(scores: &[f64]) -> Result<f64, RandomnessError> {
    stats::sample_std(scores).ok_or(RandomnessError::TooFewSeeds(scores.len()))
}

pub fn neutrality_threshold(n: u64, sigma: f64, p: f64) -> Result<SignificanceThreshold, RandomnessError> {
    Ok(SignificanceThreshold::derive(n, sigma, p)?)
}

/// Per-bias sample sizes for neutrality thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdTable {
    pub default_n: u64,
    pub sigma: f64,
    pub p: f64,
    #[serde(default)]
    pub per_bias: BTreeMap<String, u64>,
}

impl Default for ThresholdTable {
    fn default() -> Self {
        Self { default_n: 1000, sigma: 1.0, p: 0.05, per_bias: BTreeMap::new() }
    }
}

impl ThresholdTable {
    pub fn n_for(&self, bias: BiasId) -> u64 {
        self.per_bias
            .iter()
            .find(|(name, _)| name.parse::<BiasId>().map(|b| b == bias).unwrap_or(false))
            .map_or(self.default_n, |(_, n)| *n)
    }

    pub fn for_bias(&self, bias: BiasId) -> Result<SignificanceThreshold, RandomnessError> {
        neutrality_threshold(self.n_for(bias), self.sigma, self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub direction: Direction,
    /// Set when the top count is shared; the direction is then neutral.
    pub tie: bool,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

/// Most frequent direction across seeds. Ties resolve to neutral.
pub fn majority_direction(scores: &[f64], threshold: &SignificanceThreshold) -> MajorityVote {
    let (mut pos, mut neu, mut neg) = (0, 0, 0);
    for &s in scores {
        match threshold.categorize(s) {
            Direction::Positive => pos += 1,
            Direction::Neutral => neu += 1,
            Direction::Negative => neg += 1,
        }
    }
    let top = pos.max(neu).max(neg);
    let leaders = [pos, neu, neg].iter().filter(|&&c| c == top).count();
    let (direction, tie) = if leaders > 1 {
        (Direction::Neutral, true)
    } else if pos == top {
        (Direction::Positive, false)
    } else if neg == top {
        (Direction::Negative, false)
    } else {
        (Direction::Neutral, false)
    };
    MajorityVote { direction, tie, positive: pos, neutral: neu, negative: neg }
}

/// Seeded replicas of one (pretrain, instruction) cell plus the optional
/// original full finetune they are compared against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedGroup {
    pub pretrain_id: String,
    pub instruction_id: String,
    pub members: Vec<String>,
    pub reference: Option<String>,
}

impl SeedGroup {
    pub fn name(&self) -> String {
        format!("{}-{}", self.pretrain_id, self.instruction_id)
    }

    /// Groups seeded replicas by (pretrain, instruction), ordered by first
    /// appearance, members ordered by seed.
    pub fn from_roster(runs: &[ModelRun]) -> Vec<SeedGroup> {
        let mut groups: Vec<SeedGroup> = Vec::new();
        let mut seeds: Vec<Vec<(u32, String)>> = Vec::new();
        for run in runs {
            let pos =
                groups.iter().position(|g| g.pretrain_id == run.pretrain_id && g.instruction_id == run.instruction_id);
            let idx = match pos {
                Some(i) => i,
                None => {
                    groups.push(SeedGroup {
                        pretrain_id: run.pretrain_id.clone(),
                        instruction_id: run.instruction_id.clone(),
                        members: Vec::new(),
                        reference: None,
                    });
                    seeds.push(Vec::new());
                    groups.len() - 1
                }
            };
            match run.origin {
                Origin::SeededReplica => seeds[idx].push((run.seed.unwrap_or(0), run.run_id.clone())),
                Origin::OriginalFullFinetune => groups[idx].reference = Some(run.run_id.clone()),
                Origin::External => {}
            }
        }
        for (g, mut s) in groups.iter_mut().zip(seeds) {
            s.sort();
            g.members = s.into_iter().map(|(_, id)| id).collect();
        }
        groups.retain(|g| !g.members.is_empty());
        groups
    }
}

/// Which biases the summary percentages count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementScope {
    /// The 30 scenario-structured scale-pair biases.
    #[default]
    ScalePair,
    /// Every vector bias present in the matrix.
    All,
}

impl AgreementScope {
    fn includes(self, bias: BiasId) -> bool {
        match self {
            AgreementScope::ScalePair => bias.kind() == BiasKind::ScalePair,
            AgreementScope::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub bias: BiasId,
    pub seed_scores: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub threshold: f64,
    pub reference: f64,
    pub reference_direction: Direction,
    pub majority: MajorityVote,
    pub majority_agree: bool,
    pub agg_similar: bool,
    pub in_summary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub group: String,
    pub reference: String,
    pub rows: Vec<AgreementRow>,
    pub scope: AgreementScope,
    pub summary_biases: usize,
    pub majority_pct: f64,
    pub agg_pct: f64,
    /// Mean |seed mean - reference| over the summary biases.
    pub avg_diff_mean: f64,
    /// Mean |seed median - reference| over the summary biases.
    pub avg_diff_median: f64,
}

fn seed_scores(matrix: &ScoreMatrix, row: usize, cols: &[usize]) -> Vec<f64> {
    cols.iter().filter_map(|&c| matrix.at(row, c)).collect()
}

fn columns(matrix: &ScoreMatrix, runs: &[String]) -> Result<Vec<usize>, RandomnessError> {
    runs.iter().map(|r| matrix.col_index(r).ok_or_else(|| RandomnessError::MissingRun(r.clone()))).collect()
}

/// Compares seed aggregates with the reference model, bias by bias.
///
/// A bias is majority-agreeing when the seeds' majority direction equals the
/// reference's direction, and aggregate-similar when it is majority-agreeing
/// or the seed mean or median lies within the neutrality threshold of the
/// reference score.
pub fn aggregate_agreement(
    group: &SeedGroup,
    matrix: &ScoreMatrix,
    thresholds: &ThresholdTable,
    scope: AgreementScope,
) -> Result<AgreementReport, RandomnessError> {
    let reference = group.reference.clone().ok_or_else(|| RandomnessError::MissingReference(group.name()))?;
    let ref_col = matrix.col_index(&reference).ok_or_else(|| RandomnessError::MissingRun(reference.clone()))?;
    let cols = columns(matrix, &group.members)?;

    let mut rows = Vec::new();
    for bias in BiasId::vector_biases() {
        let Some(r) = matrix.bias_row(bias) else { continue };
        let Some(reference_score) = matrix.at(r, ref_col) else { continue };
        let scores = seed_scores(matrix, r, &cols);
        if scores.is_empty() {
            continue;
        }
        let thr = thresholds.for_bias(bias)?;
        let mean = stats::mean(&scores);
        let median = stats::median(&scores);
        let majority = majority_direction(&scores, &thr);
        let reference_direction = thr.categorize(reference_score);
        let majority_agree = majority.direction == reference_direction;
        let agg_similar = majority_agree
            || (mean - reference_score).abs() < thr.threshold
            || (median - reference_score).abs() < thr.threshold;
        rows.push(AgreementRow {
            bias,
            std: stats::sample_std(&scores).unwrap_or(0.0),
            seed_scores: scores,
            mean,
            median,
            threshold: thr.threshold,
            reference: reference_score,
            reference_direction,
            majority,
            majority_agree,
            agg_similar,
            in_summary: scope.includes(bias),
        });
    }

    let counted: Vec<&AgreementRow> = rows.iter().filter(|r| r.in_summary).collect();
    let n = counted.len();
    let pct = |f: fn(&AgreementRow) -> bool| {
        if n == 0 {
            0.0
        } else {
            100.0 * counted.iter().filter(|r| f(r)).count() as f64 / n as f64
        }
    };
    let avg = |f: fn(&AgreementRow) -> f64| {
        if n == 0 {
            0.0
        } else {
            counted.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    Ok(AgreementReport {
        group: group.name(),
        reference,
        scope,
        summary_biases: n,
        majority_pct: pct(|r| r.majority_agree),
        agg_pct: pct(|r| r.agg_similar),
        avg_diff_mean: avg(|r| (r.mean - r.reference).abs()),
        avg_diff_median: avg(|r| (r.median - r.reference).abs()),
        rows,
    })
}

/// Named set of matrix rows compared as one block (e.g. biases vs. MMLU).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGroup {
    pub name: String,
    pub features: Vec<String>,
}

impl MetricGroup {
    /// Vector biases present in `matrix`.
    pub fn biases(matrix: &ScoreMatrix) -> Self {
        let features =
            BiasId::vector_biases().filter_map(|b| matrix.bias_row(b).map(|r| matrix.rows()[r].clone())).collect();
        Self { name: "biases".into(), features }
    }

    /// Every row that is not a known bias.
    pub fn non_bias(matrix: &ScoreMatrix, name: &str) -> Self {
        let features = matrix.rows().iter().filter(|r| r.parse::<BiasId>().is_err()).cloned().collect();
        Self { name: name.into(), features }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVariability {
    pub seed_group: String,
    pub metric_group: String,
    pub metrics: usize,
    pub mean_std: f64,
}

/// Mean over metrics of the per-metric seed standard deviation, for each
/// metric group. Metrics with fewer than two seed values are skipped.
pub fn variability_comparison(
    group: &SeedGroup,
    matrix: &ScoreMatrix,
    metric_groups: &[MetricGroup],
) -> Result<Vec<GroupVariability>, RandomnessError> {
    let cols = columns(matrix, &group.members)?;
    let mut out = Vec::new();
    for mg in metric_groups {
        let stds: Vec<f64> = mg
            .features
            .iter()
            .filter_map(|f| matrix.row_index(f))
            .filter_map(|r| stats::sample_std(&seed_scores(matrix, r, &cols)))
            .collect();
        out.push(GroupVariability {
            seed_group: group.name(),
            metric_group: mg.name.clone(),
            metrics: stds.len(),
            mean_std: if stds.is_empty() { 0.0 } else { stats::mean(&stds) },
        });
    }
    Ok(out)
}

/// Pearson correlation between reference scores and seed-mean scores.
pub fn seed_mean_correlation(reference: &[f64], seed_mean: &[f64]) -> Result<f64, RandomnessError> {
    let n = reference.len().min(seed_mean.len());
    if n < 3 || reference.len() != seed_mean.len() {
        return Err(RandomnessError::TooFewPairs(n));
    }
    stats::pearson(reference, seed_mean).ok_or(RandomnessError::ZeroVariance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub group: String,
    pub reference: String,
    pub biases: usize,
    pub pearson: f64,
}

/// Correlation of the reference run with the seed mean over the vector biases.
pub fn group_correlation(group: &SeedGroup, matrix: &ScoreMatrix) -> Result<GroupCorrelation, RandomnessError> {
    let reference = group.reference.clone().ok_or_else(|| RandomnessError::MissingReference(group.name()))?;
    let ref_col = matrix.col_index(&reference).ok_or_else(|| RandomnessError::MissingRun(reference.clone()))?;
    let cols = columns(matrix, &group.members)?;
    let mut refs = Vec::new();
    let mut means = Vec::new();
    for bias in BiasId::vector_biases() {
        let Some(r) = matrix.bias_row(bias) else { continue };
        let (Some(rv), scores) = (matrix.at(r, ref_col), seed_scores(matrix, r, &cols)) else { continue };
        if scores.is_empty() {
            continue;
        }
        refs.push(rv);
        means.push(stats::mean(&scores));
    }
    Ok(GroupCorrelation {
        group: group.name(),
        reference,
        biases: refs.len(),
        pearson: seed_mean_correlation(&refs, &means)?,
    })
}

/// Step-1 results for every seed group of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomnessReport {
    pub agreement: Vec<AgreementReport>,
    pub variability: Vec<GroupVariability>,
    pub correlations: Vec<GroupCorrelation>,
}

pub fn analyze(
    runs: &[ModelRun],
    matrix: &ScoreMatrix,
    thresholds: &ThresholdTable,
    scope: AgreementScope,
) -> Result<RandomnessReport, RandomnessError> {
    let groups = SeedGroup::from_roster(runs);
    let metric_groups = [MetricGroup::biases(matrix), MetricGroup::non_bias(matrix, "other")];
    let mut report = RandomnessReport { agreement: Vec::new(), variability: Vec::new(), correlations: Vec::new() };
    for g in &groups {
        report.variability.extend(variability_comparison(g, matrix, &metric_groups)?);
        if g.reference.is_some() {
            report.agreement.push(aggregate_agreement(g, matrix, thresholds, scope)?);
            report.correlations.push(group_correlation(g, matrix)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Granularity;
    use approx::assert_abs_diff_eq;

    fn thr() -> SignificanceThreshold {
        neutrality_threshold(1000, 1.0, 0.05).unwrap()
    }

    #[test]
    fn std_examples() {
        assert_abs_diff_eq!(seed_std(&[0.14, -0.03, 0.02]).unwrap(), 0.09, epsilon = 0.005);
        assert_abs_diff_eq!(seed_std(&[0.66, 0.32, 0.60]).unwrap(), 0.18, epsilon = 0.005);
        assert_eq!(seed_std(&[0.3, 0.3, 0.3]).unwrap(), 0.0);
        assert_eq!(seed_std(&[0.3]), Err(RandomnessError::TooFewSeeds(1)));
    }

    #[test]
    fn threshold_examples() {
        assert_abs_diff_eq!(thr().threshold, 0.088, epsilon = 0.001);
        assert_abs_diff_eq!(neutrality_threshold(2, 1.0, 0.05).unwrap().threshold, 1.96, epsilon = 1e-4);
        assert_abs_diff_eq!(neutrality_threshold(250, 1.0, 0.05).unwrap().threshold, 0.175, epsilon = 0.001);
        assert!(neutrality_threshold(1, 1.0, 0.05).is_err());
    }

    #[test]
    fn majority_examples() {
        let v = majority_direction(&[0.14, -0.03, 0.02], &thr());
        assert_eq!((v.direction, v.tie), (Direction::Neutral, false));
        assert_eq!((v.positive, v.neutral, v.negative), (1, 2, 0));
        assert_eq!(majority_direction(&[0.5, 0.5, 0.5], &thr()).direction, Direction::Positive);
        let tie = majority_direction(&[0.2, -0.2, 0.01], &thr());
        assert_eq!((tie.direction, tie.tie), (Direction::Neutral, true));
    }

    fn tiny_matrix() -> (Vec<ModelRun>, ScoreMatrix) {
        let cols = ["m-d-s1", "m-d-s2", "m-d-s3", "m-d-org"];
        let runs = cols.iter().map(|c| ModelRun::from_run_id(c).unwrap()).collect();
        // Planning Fallacy row from the OLMo-Tulu block plus an MMLU-like row.
        let m = ScoreMatrix::new(
            Granularity::BiasLevel,
            vec!["Planning Fallacy".into(), "Framing Effect".into(), "MMLU".into()],
            cols.iter().map(|s| s.to_string()).collect(),
            vec![
                Some(0.09),
                Some(0.09),
                Some(-0.16),
                Some(0.07),
                Some(0.66),
                Some(0.32),
                Some(0.60),
                Some(0.35),
                Some(0.45),
                Some(0.46),
                Some(0.45),
                Some(0.47),
            ],
        )
        .unwrap();
        (runs, m)
    }

    #[test]
    fn planning_fallacy_agg_without_majority() {
        let (runs, m) = tiny_matrix();
        let groups = SeedGroup::from_roster(&runs);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].members, vec!["m-d-s1", "m-d-s2", "m-d-s3"]);
        let rep = aggregate_agreement(&groups[0], &m, &ThresholdTable::default(), AgreementScope::All).unwrap();
        let pf = &rep.rows[1];
        assert_eq!(pf.bias.name(), "Planning Fallacy");
        assert!(!pf.majority_agree);
        assert!(pf.agg_similar);
        assert_abs_diff_eq!(pf.mean, 0.02 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.majority_pct, 50.0);
        assert_abs_diff_eq!(rep.agg_pct, 100.0);
    }

    #[test]
    fn missing_reference_is_error() {
        let g = SeedGroup {
            pretrain_id: "a".into(),
            instruction_id: "b".into(),
            members: vec!["x".into()],
            reference: None,
        };
        let (_, m) = tiny_matrix();
        assert!(matches!(
            aggregate_agreement(&g, &m, &ThresholdTable::default(), AgreementScope::All),
            Err(RandomnessError::MissingReference(_))
        ));
    }

    #[test]
    fn variability_groups() {
        let (runs, m) = tiny_matrix();
        let g = &SeedGroup::from_roster(&runs)[0];
        let groups = [MetricGroup::biases(&m), MetricGroup::non_bias(&m, "mmlu")];
        let v = variability_comparison(g, &m, &groups).unwrap();
        let pf = seed_std(&[0.09, 0.09, -0.16]).unwrap();
        let fr = seed_std(&[0.66, 0.32, 0.60]).unwrap();
        assert_abs_diff_eq!(v[0].mean_std, (pf + fr) / 2.0, epsilon = 1e-12);
        assert_eq!(v[1].metrics, 1);
        assert!(v[0].mean_std > v[1].mean_std);

        let flat =
            ScoreMatrix::new(Granularity::BiasLevel, vec!["Anchoring".into()], g.members.clone(), vec![Some(0.1); 3])
                .unwrap();
        let v = variability_comparison(g, &flat, &[MetricGroup::biases(&flat)]).unwrap();
        assert_abs_diff_eq!(v[0].mean_std, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn correlation_examples() {
        let x = [0.1, 0.4, -0.2, 0.3];
        assert_abs_diff_eq!(seed_mean_correlation(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(seed_mean_correlation(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(seed_mean_correlation(&x, &[0.2; 4]), Err(RandomnessError::ZeroVariance));
        assert_eq!(seed_mean_correlation(&x[..2], &x[..2]), Err(RandomnessError::TooFewPairs(2)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn std_translation_and_scale(v in prop::collection::vec(-1.0f64..1.0, 2..8), shift in -5.0f64..5.0, c in 0.1f64..10.0) {
                let base = seed_std(&v).unwrap();
                let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
                let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
                prop_assert!((seed_std(&shifted).unwrap() - base).abs() < 1e-9);
                prop_assert!((seed_std(&scaled).unwrap() - c * base).abs() < 1e-9);
            }

            #[test]
            fn threshold_monotone(n in 2u64..100_000, sigma in 0.1f64..3.0) {
                let a = neutrality_threshold(n, sigma, 0.05).unwrap().threshold;
                prop_assert!(neutrality_threshold(n + 1, sigma, 0.05).unwrap().threshold < a);
                prop_assert!(neutrality_threshold(n, sigma * 1.01, 0.05).unwrap().threshold > a);
            }

            #[test]
            fn majority_permutation_invariant(v in prop::collection::vec(-1.0f64..1.0, 1..7), rot in 0usize..7) {
                let t = thr();
                let a = majority_direction(&v, &t);
                let mut w = v.clone();
                w.reverse();
                let r = rot % w.len();
                w.rotate_left(r);
                prop_assert_eq!(a, majority_direction(&w, &t));
            }

            #[test]
            fn correlation_affine_invariant(v in prop::collection::vec(-1.0f64..1.0, 3..20), w in prop::collection::vec(-1.0f64..1.0, 3..20), a in 0.1f64..5.0, b in -2.0f64..2.0) {
                let n = v.len().min(w.len());
                let (v, w) = (&v[..n], &w[..n]);
                if let Ok(r) = seed_mean_correlation(v, w) {
                    let moved: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                    prop_assert!((seed_mean_correlation(&moved, w).unwrap() - r).abs() < 1e-9);
                }
            }
        }
    }
}
