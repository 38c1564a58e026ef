//! Two-cluster K-Means (Lloyd iterations, k-means++ seeding).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionError, VectorSet};
use crate::model::{Labeling, Scheme};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    /// Number of independently seeded runs; run `i` uses seed `i`.
    pub runs: u32,
    pub max_iter: usize,
    /// Attempts per run when an initialization collapses to one cluster.
    pub max_reseeds: u32,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { runs: 30, max_iter: 300, max_reseeds: 10 }
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn init_plus_plus(points: &[Vec<f64>], rng: &mut impl Rng) -> Option<[Vec<f64>; 2]> {
    let first = points[rng.random_range(0..points.len())].clone();
    let weights: Vec<f64> = points.iter().map(|p| sq(p, &first)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut pick = points.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 && target < *w {
            pick = i;
            break;
        }
        target -= w;
    }
    if weights[pick] <= 0.0 {
        pick = weights.iter().rposition(|w| *w > 0.0)?;
    }
    Some([first, points[pick].clone()])
}

/// One Lloyd run from a k-means++ start. `None` if a cluster ends up empty.
pub fn lloyd(points: &[Vec<f64>], max_iter: usize, rng: &mut impl Rng) -> Option<Vec<u8>> {
    if points.len() < 2 {
        return None;
    }
    let mut centroids = init_plus_plus(points, rng)?;
    let dim = points[0].len();
    let mut labels: Vec<u8> = Vec::new();
    for _ in 0..max_iter.max(1) {
        let next: Vec<u8> = points.iter().map(|p| u8::from(sq(p, &centroids[1]) < sq(p, &centroids[0]))).collect();
        if next == labels {
            break;
        }
        labels = next;
        let mut sums = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l as usize] += 1;
            for (acc, x) in sums[l as usize].iter_mut().zip(p) {
                *acc += x;
            }
        }
        if counts.contains(&0) {
            return None;
        }
        for k in 0..2 {
            centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
        }
    }
    // canonical form: the first point is in cluster 0
    if labels[0] == 1 {
        labels.iter_mut().for_each(|l| *l = 1 - *l);
    }
    Some(labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansRunSummary {
    pub seed: u64,
    pub silhouette: f64,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansReference {
    pub labeling: Labeling,
    pub chosen_seed: u64,
    pub runs: Vec<KMeansRunSummary>,
}

/// Runs K-Means with seeds `0..runs` and returns the median run by
/// silhouette (the lower median for an even count; ties go to the lower
/// seed), so the reported partition is representative rather than the best
/// of many restarts.
pub fn kmeans_reference(vectors: &VectorSet, config: &KMeansConfig) -> Result<KMeansReference, AttributionError> {
    let geom = vectors.geometry();
    let mut runs = Vec::new();
    for seed in 0..u64::from(config.runs) {
        for attempt in 0..config.max_reseeds.max(1) {
            let mut r = rng::stream(seed, rng::DOMAIN_KMEANS, attempt);
            if let Some(labels) = lloyd(&vectors.data, config.max_iter, &mut r) {
                let silhouette = geom.quality(&labels)?.silhouette;
                runs.push(KMeansRunSummary { seed, silhouette, labels });
                break;
            }
        }
    }
    if runs.is_empty() {
        return Err(AttributionError::KMeansFailed);
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].silhouette.total_cmp(&runs[b].silhouette).then(runs[a].seed.cmp(&runs[b].seed)));
    let chosen = &runs[order[(order.len() - 1) / 2]];
    Ok(KMeansReference {
        labeling: Labeling::new(Scheme::Kmeans, chosen.labels.clone()),
        chosen_seed: chosen.seed,
        runs,
    })
}

/// Total within-cluster squared distance, the quantity Lloyd iterations
/// never increase.
#[cfg(test)]
fn inertia(points: &[Vec<f64>], labels: &[u8]) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for k in 0..2u8 {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        let c: Vec<f64> = (0..dim).map(|f| members.iter().map(|p| p[f]).sum::<f64>() / members.len() as f64).collect();
        total += members.iter().map(|p| sq(p, &c)).sum::<f64>();
    }
    total
}
