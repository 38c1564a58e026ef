//! Cross-tuning attribution.
//!
//! Each run becomes a bias vector; competing two-way labelings (by
//! pretraining backbone, by instruction dataset, random, K-Means) are scored
//! with cluster validity indices, tested against label permutations, and the
//! vectors are projected to two dimensions for inspection.

mod kmeans;
mod metrics;
mod pca;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    parse_scenario_label, BiasId, BiasKind, BiasVector, Direction, Granularity, Labeling, ModelError, ModelRun, Scheme,
    ScoreMatrix, SignificanceThreshold,
};
use crate::rng;

pub use kmeans::{kmeans_reference, lloyd, KMeansConfig, KMeansReference, KMeansRunSummary};
pub use metrics::{ClusterQuality, Geometry, Metric, SignificanceFlags};
pub use pca::{pca_project, PcaProjection, PcaRoute};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("labeling has {labels} entries but there are {points} vectors")]
    LabelLength { labels: usize, points: usize },
    #[error("cluster label {0} is not 0 or 1")]
    LabelValue(u8),
    #[error("labeling leaves a cluster empty")]
    EmptyCluster,
    #[error("silhouette undefined for {0} points in two clusters")]
    SilhouetteUndefined(usize),
    #[error("no features left after dropping missing entries")]
    NoFeatures,
    #[error("need at least {needed} vectors, got {got}")]
    TooFewVectors { needed: usize, got: usize },
    #[error("no K-Means run produced two non-empty clusters")]
    KMeansFailed,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Bias vectors of several runs over one shared, ordered feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSet {
    pub runs: Vec<String>,
    pub features: Vec<String>,
    /// One row per run.
    pub data: Vec<Vec<f64>>,
}

impl VectorSet {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn vectors(&self) -> Vec<BiasVector> {
        self.runs
            .iter()
            .zip(&self.data)
            .map(|(run, row)| BiasVector {
                run_id: run.clone(),
                features: self.features.iter().cloned().zip(row.iter().copied()).collect(),
            })
            .collect()
    }

    /// Restricts to the listed runs, in the given order.
    pub fn select(&self, runs: &[String]) -> Option<VectorSet> {
        let data = runs
            .iter()
            .map(|r| self.runs.iter().position(|x| x == r).map(|i| self.data[i].clone()))
            .collect::<Option<Vec<_>>>()?;
        Some(VectorSet { runs: runs.to_vec(), features: self.features.clone(), data })
    }

    /// Per-feature z-scores across runs; constant features become 0.
    pub fn standardized(&self) -> VectorSet {
        let n = self.len() as f64;
        let mut data = self.data.clone();
        for f in 0..self.dim() {
            let mean = self.data.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = self.data.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            for row in &mut data {
                row[f] = if sd > 0.0 { (row[f] - mean) / sd } else { 0.0 };
            }
        }
        VectorSet { runs: self.runs.clone(), features: self.features.clone(), data }
    }

    pub fn geometry(&self) -> Geometry<'_> {
        Geometry::new(&self.data)
    }
}

/// Vectors built from a matrix, plus the features that had to be dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltVectors {
    pub vectors: VectorSet,
    pub dropped: Vec<String>,
}

fn is_vector_feature(label: &str, granularity: Granularity) -> bool {
    match granularity {
        Granularity::BiasLevel => label.parse::<BiasId>().map(|b| b.in_vectors()).unwrap_or(false),
        Granularity::ScenarioLevel => parse_scenario_label(label).is_some_and(|(b, _)| b.kind() == BiasKind::ScalePair),
    }
}

/// One vector per matrix column.
///
/// Bias level keeps the 32 vector biases (other rows such as MMLU are not
/// features); scenario level keeps the scale-pair bias scenarios. A feature
/// missing for any run is dropped for every run.
pub fn build_bias_vectors(matrix: &ScoreMatrix) -> Result<BuiltVectors, AttributionError> {
    let mut features = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (r, label) in matrix.rows().iter().enumerate() {
        if !is_vector_feature(label, matrix.granularity()) {
            continue;
        }
        let values = matrix.row_values(r);
        if values.iter().all(Option::is_none) {
            log::warn!("feature `{label}` is missing for every run; dropped");
            dropped.push(label.clone());
        } else if values.iter().any(Option::is_none) {
            dropped.push(label.clone());
        } else {
            features.push(label.clone());
            rows.push(r);
        }
    }
    if features.is_empty() {
        return Err(AttributionError::NoFeatures);
    }
    let data =
        (0..matrix.n_cols()).map(|c| rows.iter().map(|&r| matrix.at(r, c).unwrap_or_default()).collect()).collect();
    Ok(BuiltVectors { vectors: VectorSet { runs: matrix.cols().to_vec(), features, data }, dropped })
}

pub fn cluster_quality(vectors: &VectorSet, labeling: &Labeling) -> Result<ClusterQuality, AttributionError> {
    vectors.geometry().quality(&labeling.labels)
}

/// How permuted labels are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationMode {
    /// Shuffle the given labels, keeping cluster sizes.
    #[default]
    SizePreserving,
    /// Draw each label uniformly, redrawing until both clusters are non-empty.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub level: f64,
    pub mode: PermutationMode,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self { permutations: 100, level: 0.95, mode: PermutationMode::SizePreserving, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOutcome {
    pub metric: Metric,
    pub observed: f64,
    pub permuted: Vec<f64>,
    /// Fraction of permutations the observed value strictly beats.
    pub beaten_fraction: f64,
    pub significant: bool,
}

fn permuted_labels(base: &[u8], mode: PermutationMode, rng: &mut impl Rng) -> Vec<u8> {
    match mode {
        PermutationMode::SizePreserving => {
            let mut l = base.to_vec();
            l.shuffle(rng);
            l
        }
        PermutationMode::Uniform => loop {
            let l: Vec<u8> = (0..base.len()).map(|_| u8::from(rng.random::<bool>())).collect();
            if l.contains(&0) && l.contains(&1) {
                break l;
            }
        },
    }
}

/// Permutation test of every metric at once, sharing the permuted labelings.
///
/// Trial `t` draws from its own stream, so results do not depend on
/// evaluation order. A metric is significant when the observed value is
/// strictly better than at least `level` of the permuted values.
pub fn permutation_test_all(
    vectors: &VectorSet,
    labeling: &Labeling,
    config: &PermutationConfig,
) -> Result<Vec<PermutationOutcome>, AttributionError> {
    let geom = vectors.geometry();
    let observed = geom.quality(&labeling.labels)?;
    let mut permuted: Vec<Vec<f64>> = vec![Vec::with_capacity(config.permutations); Metric::ALL.len()];
    for t in 0..config.permutations {
        let mut r = rng::stream(config.seed, rng::DOMAIN_PERMUTATION, t as u32);
        let labels = permuted_labels(&labeling.labels, config.mode, &mut r);
        let q = geom.quality(&labels)?;
        for (slot, m) in permuted.iter_mut().zip(Metric::ALL) {
            slot.push(q.get(m));
        }
    }
    Ok(Metric::ALL
        .iter()
        .zip(permuted)
        .map(|(&metric, values)| {
            let obs = observed.get(metric);
            let beaten = values.iter().filter(|&&v| metric.better(obs, v)).count();
            let beaten_fraction = if values.is_empty() { 0.0 } else { beaten as f64 / values.len() as f64 };
            PermutationOutcome {
                metric,
                observed: obs,
                beaten_fraction,
                significant: !values.is_empty() && beaten_fraction >= config.level,
                permuted: values,
            }
        })
        .collect())
}

pub fn permutation_test(
    vectors: &VectorSet,
    labeling: &Labeling,
    metric: Metric,
    config: &PermutationConfig,
) -> Result<PermutationOutcome, AttributionError> {
    let all = permutation_test_all(vectors, labeling, config)?;
    Ok(all.into_iter().find(|o| o.metric == metric).expect("every metric is tested"))
}

/// Quality with significance flags attached.
pub fn tested_quality(
    vectors: &VectorSet,
    labeling: &Labeling,
    config: &PermutationConfig,
) -> Result<ClusterQuality, AttributionError> {
    let mut q = cluster_quality(vectors, labeling)?;
    let mut flags = SignificanceFlags::default();
    for o in permutation_test_all(vectors, labeling, config)? {
        flags.set(o.metric, o.significant);
    }
    q.significance = Some(flags);
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub mean: ClusterQuality,
    pub trials: Vec<ClusterQuality>,
}

/// Averages metrics over size-preserving random relabelings of `template`.
pub fn random_baseline(
    vectors: &VectorSet,
    template: &Labeling,
    trials: usize,
    seed: u64,
) -> Result<RandomBaseline, AttributionError> {
    if vectors.len() < 4 {
        return Err(AttributionError::TooFewVectors { needed: 4, got: vectors.len() });
    }
    let geom = vectors.geometry();
    let mut out = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut r = rng::stream(seed, rng::DOMAIN_RANDOM_BASELINE, t as u32);
        let labels = permuted_labels(&template.labels, PermutationMode::SizePreserving, &mut r);
        out.push(geom.quality(&labels)?);
    }
    let mean = ClusterQuality::mean_of(&out).ok_or(AttributionError::TooFewVectors { needed: 1, got: 0 })?;
    Ok(RandomBaseline { mean, trials: out })
}

/// A bias score with the per-group sample size behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledScore {
    pub bias: String,
    pub score: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub bias: String,
    pub score_a: f64,
    pub score_b: f64,
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub direction_a: Direction,
    pub direction_b: Direction,
    pub separated: bool,
}

/// Flags biases where both models score significantly and in opposite
/// directions. Biases present on only one side are skipped.
pub fn separation_check(
    a: &[SampledScore],
    b: &[SampledScore],
    sigma: f64,
    p: f64,
) -> Result<Vec<SeparationRow>, AttributionError> {
    let mut rows = Vec::new();
    for sa in a {
        let Some(sb) = b.iter().find(|s| s.bias == sa.bias) else { continue };
        let ta = SignificanceThreshold::derive(sa.n, sigma, p)?;
        let tb = SignificanceThreshold::derive(sb.n, sigma, p)?;
        let (da, db) = (ta.categorize(sa.score), tb.categorize(sb.score));
        let separated =
            ta.is_significant(sa.score) && tb.is_significant(sb.score) && da != Direction::Neutral && da.mirror() == db;
        rows.push(SeparationRow {
            bias: sa.bias.clone(),
            score_a: sa.score,
            score_b: sb.score,
            threshold_a: ta.threshold,
            threshold_b: tb.threshold,
            direction_a: da,
            direction_b: db,
            separated,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub cluster: u8,
    pub members: Vec<String>,
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub scheme: Scheme,
    pub features: Vec<String>,
    pub clusters: Vec<ClusterProfile>,
}

/// Mean score per feature within each cluster.
pub fn cluster_bias_profile(vectors: &VectorSet, labeling: &Labeling) -> Result<BiasProfile, AttributionError> {
    if labeling.len() != vectors.len() {
        return Err(AttributionError::LabelLength { labels: labeling.len(), points: vectors.len() });
    }
    let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labeling.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let clusters = groups
        .into_iter()
        .map(|(cluster, idx)| {
            let means = (0..vectors.dim())
                .map(|f| idx.iter().map(|&i| vectors.data[i][f]).sum::<f64>() / idx.len() as f64)
                .collect();
            ClusterProfile { cluster, members: idx.iter().map(|&i| vectors.runs[i].clone()).collect(), means }
        })
        .collect();
    Ok(BiasProfile { scheme: labeling.scheme, features: vectors.features.clone(), clusters })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRow {
    pub scheme: Scheme,
    pub quality: ClusterQuality,
}

/// Table-style comparison of the four labelings at one granularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringReport {
    pub granularity: Granularity,
    pub runs: Vec<String>,
    pub features: usize,
    pub dropped_features: usize,
    pub rows: Vec<ClusteringRow>,
    pub kmeans_labels: Vec<u8>,
    pub kmeans_seed: u64,
    pub kmeans_disagreements_with_pretraining: usize,
    pub kmeans_ari_with_pretraining: f64,
}

impl ClusteringReport {
    pub fn row(&self, scheme: Scheme) -> Option<&ClusterQuality> {
        self.rows.iter().find(|r| r.scheme == scheme).map(|r| &r.quality)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringOptions {
    pub permutation: PermutationConfig,
    pub random_trials: usize,
    pub kmeans: KMeansConfig,
    pub standardize: bool,
}

impl Default for ClusteringOptions {
    fn default() -> Self {
        Self {
            permutation: PermutationConfig::default(),
            random_trials: 5,
            kmeans: KMeansConfig::default(),
            standardize: false,
        }
    }
}

/// Runs the full labeling comparison on prepared vectors.
///
/// `runs` must describe the vectors' runs in the same order.
pub fn compare_labelings(
    built: &BuiltVectors,
    runs: &[ModelRun],
    granularity: Granularity,
    options: &ClusteringOptions,
) -> Result<ClusteringReport, AttributionError> {
    let vectors = if options.standardize { built.vectors.standardized() } else { built.vectors.clone() };
    let pretraining = Labeling::by_pretraining(runs)?;
    let instruction = Labeling::by_instruction(runs)?;
    if pretraining.len() != vectors.len() {
        return Err(AttributionError::LabelLength { labels: pretraining.len(), points: vectors.len() });
    }
    let random = random_baseline(&vectors, &pretraining, options.random_trials, options.permutation.seed)?;
    let km = kmeans_reference(&vectors, &options.kmeans)?;
    let mut rows = vec![ClusteringRow { scheme: Scheme::Random, quality: random.mean }];
    for labeling in [&instruction, &pretraining, &km.labeling] {
        rows.push(ClusteringRow {
            scheme: labeling.scheme,
            quality: tested_quality(&vectors, labeling, &options.permutation)?,
        });
    }
    Ok(ClusteringReport {
        granularity,
        runs: vectors.runs.clone(),
        features: vectors.dim(),
        dropped_features: built.dropped.len(),
        rows,
        kmeans_disagreements_with_pretraining: km.labeling.disagreements(&pretraining),
        kmeans_ari_with_pretraining: crate::stats::adjusted_rand_index(&km.labeling.labels, &pretraining.labels),
        kmeans_labels: km.labeling.labels,
        kmeans_seed: km.chosen_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: &[&str], cols: &[&str], values: Vec<Option<f64>>, g: Granularity) -> ScoreMatrix {
        ScoreMatrix::new(
            g,
            rows.iter().map(|s| s.to_string()).collect(),
            cols.iter().map(|s| s.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn vectors_skip_non_bias_rows_and_missing_features() {
        let m = matrix(
            &["Anchoring", "MMLU", "Framing Effect", "Belief Invalid", "Certainty"],
            &["a", "b"],
            vec![
                Some(0.1),
                Some(0.2),
                Some(0.5),
                Some(0.5),
                None,
                Some(0.3),
                Some(0.4),
                Some(0.4),
                Some(0.0),
                Some(0.1),
            ],
            Granularity::BiasLevel,
        );
        let built = build_bias_vectors(&m).unwrap();
        assert_eq!(built.vectors.features, vec!["Anchoring", "Certainty"]);
        assert_eq!(built.dropped, vec!["Framing Effect"]);
        assert_eq!(built.vectors.data, vec![vec![0.1, 0.0], vec![0.2, 0.1]]);
    }

    #[test]
    fn single_run_passes_through() {
        let m = matrix(&["Anchoring", "Halo Effect"], &["only"], vec![Some(0.1), Some(-0.2)], Granularity::BiasLevel);
        let v = build_bias_vectors(&m).unwrap().vectors.vectors();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].features, vec![("Anchoring".to_string(), 0.1), ("Halo Effect".to_string(), -0.2)]);
    }

    #[test]
    fn scenario_level_shape() {
        let mut rows = Vec::new();
        for b in BiasId::scale_pair_biases() {
            for s in 0..200 {
                rows.push(crate::model::scenario_label(b, s));
            }
        }
        rows.push(crate::model::scenario_label("Certainty".parse().unwrap(), 0));
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let m = matrix(&refs, &["a", "b"], vec![Some(0.0); rows.len() * 2], Granularity::ScenarioLevel);
        let built = build_bias_vectors(&m).unwrap();
        assert_eq!(built.vectors.dim(), 6000);
    }

    #[test]
    fn permutation_extremes() {
        // Two far blobs: the true labels beat every size-preserving shuffle
        // except the label swap, which ties and so is not "beaten".
        let mut data = Vec::new();
        for i in 0..6 {
            data.push(vec![i as f64 * 0.01, 0.0]);
        }
        for i in 0..6 {
            data.push(vec![10.0 + i as f64 * 0.01, 0.0]);
        }
        let vs =
            VectorSet { runs: (0..12).map(|i| i.to_string()).collect(), features: vec!["x".into(), "y".into()], data };
        let lab = Labeling::new(Scheme::Pretraining, [0u8; 6].into_iter().chain([1u8; 6]).collect());
        let out = permutation_test(&vs, &lab, Metric::Silhouette, &PermutationConfig::default()).unwrap();
        assert!(out.significant);
        assert_eq!(out.permuted.len(), 100);

        // Observed equal to the permutation median is not significant.
        let mid = Labeling::new(Scheme::Random, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let o = permutation_test(&vs, &mid, Metric::Silhouette, &PermutationConfig::default()).unwrap();
        let mut sorted = o.permuted.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(o.observed <= sorted[95]);
        assert!(!o.significant);
    }

    #[test]
    fn uniform_mode_keeps_both_clusters() {
        let mut r = rng::stream(3, 9, 0);
        for _ in 0..200 {
            let l = permuted_labels(&[0, 0, 1], PermutationMode::Uniform, &mut r);
            assert!(l.contains(&0) && l.contains(&1));
        }
    }

    #[test]
    fn random_baseline_identical_points() {
        let vs = VectorSet {
            runs: (0..6).map(|i| i.to_string()).collect(),
            features: vec!["x".into()],
            data: vec![vec![0.2]; 6],
        };
        let lab = Labeling::new(Scheme::Pretraining, vec![0, 0, 0, 1, 1, 1]);
        let b = random_baseline(&vs, &lab, 5, 0).unwrap();
        assert_eq!(b.mean.silhouette, 0.0);
        assert_eq!(b.trials.len(), 5);
        let small = vs.select(&["0".into(), "1".into(), "2".into()]).unwrap();
        assert!(random_baseline(&small, &Labeling::new(Scheme::Pretraining, vec![0, 0, 1]), 5, 0).is_err());
    }

    #[test]
    fn separation_rules() {
        let s = |bias: &str, score| SampledScore { bias: bias.into(), score, n: 1000 };
        let rows = separation_check(
            &[s("Certainty", -0.13), s("Neutral", 0.01), s("Same", 0.3)],
            &[s("Certainty", 0.17), s("Neutral", -0.02), s("Same", 0.5)],
            1.0,
            0.05,
        )
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.separated).collect::<Vec<_>>(), vec![true, false, false]);
    }

    #[test]
    fn profiles() {
        let vs = VectorSet {
            runs: vec!["a".into(), "b".into(), "c".into()],
            features: vec!["f".into(), "g".into()],
            data: vec![vec![0.1, 0.2], vec![0.3, 0.6], vec![-0.5, 0.0]],
        };
        let singletons = Labeling::new(Scheme::Random, vec![0, 1, 1]);
        let p = cluster_bias_profile(&vs, &singletons).unwrap();
        assert_eq!(p.clusters[0].means, vec![0.1, 0.2]);
        assert_abs_diff_eq!(p.clusters[1].means[0], -0.1, epsilon = 1e-12);
        // merged profile is the size-weighted mean of the parts
        let merged = cluster_bias_profile(&vs, &Labeling::new(Scheme::Random, vec![0, 0, 0])).unwrap();
        let weighted = (p.clusters[0].means[1] * 1.0 + p.clusters[1].means[1] * 2.0) / 3.0;
        assert_abs_diff_eq!(merged.clusters[0].means[1], weighted, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rotate(points: &[Vec<f64>], angle: f64) -> Vec<Vec<f64>> {
            let (s, c) = angle.sin_cos();
            points.iter().map(|p| vec![c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]).collect()
        }

        proptest! {
            #[test]
            fn invariant_under_rigid_motion(
                pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 5..12),
                shift in -3.0f64..3.0,
                angle in 0.0f64..std::f64::consts::TAU,
                scale in 0.1f64..10.0,
            ) {
                let n = pts.len();
                let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
                let base = Geometry::new(&pts).quality(&labels).unwrap();
                let moved: Vec<Vec<f64>> = rotate(&pts, angle).into_iter().map(|p| p.into_iter().map(|x| x + shift).collect()).collect();
                let q = Geometry::new(&moved).quality(&labels).unwrap();
                prop_assert!((q.silhouette - base.silhouette).abs() < 1e-9);
                prop_assert!((q.davies_bouldin - base.davies_bouldin).abs() < 1e-7 * (1.0 + base.davies_bouldin));
                prop_assert!((q.mean_intra_distance - base.mean_intra_distance).abs() < 1e-9);
                prop_assert!((q.mean_inter_distance - base.mean_inter_distance).abs() < 1e-9);
                let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect();
                let s = Geometry::new(&scaled).quality(&labels).unwrap();
                prop_assert!((s.silhouette - base.silhouette).abs() < 1e-9);
            }
        }
    }
}
