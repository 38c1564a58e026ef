//! Cluster validity indices for a two-way labeling under Euclidean distance.

use serde::{Deserialize, Serialize};

use super::AttributionError;

/// Cluster-quality metrics reported per labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Silhouette,
    CalinskiHarabasz,
    DaviesBouldin,
    MeanIntraDistance,
    MeanInterDistance,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Silhouette,
        Metric::CalinskiHarabasz,
        Metric::DaviesBouldin,
        Metric::MeanIntraDistance,
        Metric::MeanInterDistance,
    ];

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Silhouette | Metric::CalinskiHarabasz | Metric::MeanInterDistance)
    }

    /// Whether `a` is strictly better than `b` for this metric.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Metric::Silhouette => "Silhouette",
            Metric::CalinskiHarabasz => "Calinski.",
            Metric::DaviesBouldin => "Davies.",
            Metric::MeanIntraDistance => "Intra D.",
            Metric::MeanInterDistance => "Inter D.",
        }
    }
}

/// Which metrics passed the permutation test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceFlags {
    pub silhouette: bool,
    pub calinski_harabasz: bool,
    pub davies_bouldin: bool,
    pub mean_intra_distance: bool,
    pub mean_inter_distance: bool,
}

impl SignificanceFlags {
    pub fn get(&self, metric: Metric) -> bool {
        match metric {
            Metric::Silhouette => self.silhouette,
            Metric::CalinskiHarabasz => self.calinski_harabasz,
            Metric::DaviesBouldin => self.davies_bouldin,
            Metric::MeanIntraDistance => self.mean_intra_distance,
            Metric::MeanInterDistance => self.mean_inter_distance,
        }
    }

    pub fn set(&mut self, metric: Metric, value: bool) {
        let slot = match metric {
            Metric::Silhouette => &mut self.silhouette,
            Metric::CalinskiHarabasz => &mut self.calinski_harabasz,
            Metric::DaviesBouldin => &mut self.davies_bouldin,
            Metric::MeanIntraDistance => &mut self.mean_intra_distance,
            Metric::MeanInterDistance => &mut self.mean_inter_distance,
        };
        *slot = value;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuality {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    pub mean_intra_distance: f64,
    pub mean_inter_distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<SignificanceFlags>,
}

impl ClusterQuality {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Silhouette => self.silhouette,
            Metric::CalinskiHarabasz => self.calinski_harabasz,
            Metric::DaviesBouldin => self.davies_bouldin,
            Metric::MeanIntraDistance => self.mean_intra_distance,
            Metric::MeanInterDistance => self.mean_inter_distance,
        }
    }

    /// Component-wise mean; significance flags are dropped.
    pub fn mean_of(items: &[ClusterQuality]) -> Option<ClusterQuality> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&ClusterQuality) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(ClusterQuality {
            silhouette: avg(|q| q.silhouette),
            calinski_harabasz: avg(|q| q.calinski_harabasz),
            davies_bouldin: avg(|q| q.davies_bouldin),
            mean_intra_distance: avg(|q| q.mean_intra_distance),
            mean_inter_distance: avg(|q| q.mean_inter_distance),
            significance: None,
        })
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Points plus their pairwise distances, computed once and reused across
/// relabelings.
pub struct Geometry<'a> {
    points: &'a [Vec<f64>],
    dist: Vec<f64>,
}

impl<'a> Geometry<'a> {
    pub fn new(points: &'a [Vec<f64>]) -> Self {
        let n = points.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = euclidean(&points[i], &points[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Self { points, dist }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.points.len() + j]
    }

    fn check(&self, labels: &[u8]) -> Result<[usize; 2], AttributionError> {
        if labels.len() != self.len() {
            return Err(AttributionError::LabelLength { labels: labels.len(), points: self.len() });
        }
        let mut sizes = [0usize; 2];
        for &l in labels {
            if l > 1 {
                return Err(AttributionError::LabelValue(l));
            }
            sizes[l as usize] += 1;
        }
        if sizes.contains(&0) {
            return Err(AttributionError::EmptyCluster);
        }
        if self.len() <= 2 {
            return Err(AttributionError::SilhouetteUndefined(self.len()));
        }
        Ok(sizes)
    }

    /// Mean over points of (b - a) / max(a, b); points in singleton clusters
    /// and points with a = b = 0 contribute 0.
    fn silhouette(&self, labels: &[u8], sizes: [usize; 2]) -> f64 {
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            let own = labels[i] as usize;
            if sizes[own] == 1 {
                continue;
            }
            let mut sums = [0.0f64; 2];
            for j in 0..n {
                if j != i {
                    sums[labels[j] as usize] += self.d(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = sums[1 - own] / sizes[1 - own] as f64;
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
        total / n as f64
    }

    fn centroids(&self, labels: &[u8], sizes: [usize; 2]) -> [Vec<f64>; 2] {
        let dim = self.points[0].len();
        let mut c = [vec![0.0; dim], vec![0.0; dim]];
        for (p, &l) in self.points.iter().zip(labels) {
            for (acc, x) in c[l as usize].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for k in 0..2 {
            for v in &mut c[k] {
                *v /= sizes[k] as f64;
            }
        }
        c
    }

    pub fn quality(&self, labels: &[u8]) -> Result<ClusterQuality, AttributionError> {
        let sizes = self.check(labels)?;
        let n = self.len();
        let silhouette = self.silhouette(labels, sizes);

        let centroids = self.centroids(labels, sizes);
        let dim = self.points[0].len();
        let overall: Vec<f64> = (0..dim).map(|f| self.points.iter().map(|p| p[f]).sum::<f64>() / n as f64).collect();
        let between: f64 = (0..2)
            .map(|k| sizes[k] as f64 * centroids[k].iter().zip(&overall).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        let mut within = 0.0;
        let mut scatter = [0.0f64; 2];
        for (p, &l) in self.points.iter().zip(labels) {
            let d = euclidean(p, &centroids[l as usize]);
            within += d * d;
            scatter[l as usize] += d;
        }
        let calinski_harabasz = if within == 0.0 { 1.0 } else { between * (n - 2) as f64 / within };
        let centroid_gap = euclidean(&centroids[0], &centroids[1]);
        let davies_bouldin = if centroid_gap == 0.0 {
            0.0
        } else {
            (scatter[0] / sizes[0] as f64 + scatter[1] / sizes[1] as f64) / centroid_gap
        };

        let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..n {
            for j in (i + 1)..n {
                if labels[i] == labels[j] {
                    intra += self.d(i, j);
                    n_intra += 1;
                } else {
                    inter += self.d(i, j);
                    n_inter += 1;
                }
            }
        }
        Ok(ClusterQuality {
            silhouette,
            calinski_harabasz,
            davies_bouldin,
            mean_intra_distance: if n_intra == 0 { 0.0 } else { intra / n_intra as f64 },
            mean_inter_distance: inter / n_inter as f64,
            significance: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(v: &[[f64; 2]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn two_tight_pairs_hand_computed() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let q = Geometry::new(&p).quality(&[0, 0, 1, 1]).unwrap();
        // a(i) = 1 for every point; b(i) is the mean distance to the far pair.
        let far_a = (200f64.sqrt() + 221f64.sqrt()) / 2.0;
        let far_b = (181f64.sqrt() + 200f64.sqrt()) / 2.0;
        let oracle = ((far_a - 1.0) / far_a + (far_b - 1.0) / far_b) / 2.0;
        assert_abs_diff_eq!(q.silhouette, oracle, epsilon = 1e-12);
        assert!(q.silhouette > 0.9);
        assert_abs_diff_eq!(q.mean_intra_distance, 1.0, epsilon = 1e-12);
        // centroids (0, .5) and (10, 10.5): between = 4 * 50, within = 4 * .25
        assert_abs_diff_eq!(q.calinski_harabasz, 200.0 * 2.0 / 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q.davies_bouldin, 1.0 / 200f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn identical_points_give_zero_silhouette() {
        let p = vec![vec![0.3, 0.3]; 6];
        let q = Geometry::new(&p).quality(&[0, 1, 0, 1, 0, 1]).unwrap();
        assert_eq!(q.silhouette, 0.0);
        assert_eq!(q.davies_bouldin, 0.0);
        assert_eq!(q.calinski_harabasz, 1.0);
    }

    #[test]
    fn errors() {
        let p = pts(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let g = Geometry::new(&p);
        assert!(matches!(g.quality(&[0, 0, 0]), Err(AttributionError::EmptyCluster)));
        assert!(matches!(g.quality(&[0, 1]), Err(AttributionError::LabelLength { .. })));
        let two = pts(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(Geometry::new(&two).quality(&[0, 1]), Err(AttributionError::SilhouetteUndefined(2))));
    }

    #[test]
    fn singleton_cluster_contributes_zero() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [5.0, 5.0]]);
        let q = Geometry::new(&p).quality(&[0, 0, 1]).unwrap();
        let b0 = 50f64.sqrt();
        let b1 = 41f64.sqrt();
        let oracle = ((b0 - 1.0) / b0 + (b1 - 1.0) / b1) / 3.0;
        assert_abs_diff_eq!(q.silhouette, oracle, epsilon = 1e-12);
    }
}
