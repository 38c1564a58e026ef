//! Two-component PCA of bias vectors (centered, unscaled).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{AttributionError, VectorSet};

/// Which eigenproblem to solve. Both give the same projection; the Gram
/// route is cheaper when there are more features than runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaRoute {
    #[default]
    Auto,
    Covariance,
    Gram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub runs: Vec<String>,
    pub features: Vec<String>,
    /// Share of total variance carried by each component.
    pub explained_variance_ratio: [f64; 2],
    /// Ratios for every component, non-increasing.
    pub spectrum: Vec<f64>,
    /// One `[pc1, pc2]` pair per run.
    pub coords: Vec<[f64; 2]>,
    /// Unit-length component directions over the features.
    pub components: [Vec<f64>; 2],
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors =
        DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

pub fn pca_project(vectors: &VectorSet, route: PcaRoute) -> Result<PcaProjection, AttributionError> {
    let n = vectors.len();
    let m = vectors.dim();
    if n < 2 {
        return Err(AttributionError::TooFewVectors { needed: 2, got: n });
    }
    if m == 0 {
        return Err(AttributionError::NoFeatures);
    }
    let mut x = DMatrix::from_fn(n, m, |i, j| vectors.data[i][j]);
    for j in 0..m {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let dof = (n - 1) as f64;
    let use_gram = match route {
        PcaRoute::Auto => m > n,
        PcaRoute::Covariance => false,
        PcaRoute::Gram => true,
    };

    let (eigenvalues, mut components) = if use_gram {
        let (values, u) = sorted_eigen(&x * x.transpose() / dof);
        let mut comps = Vec::new();
        for k in 0..2 {
            let v = if k < values.len() && values[k] > 0.0 {
                let raw = x.transpose() * u.column(k);
                let norm = raw.norm();
                raw / norm
            } else {
                nalgebra::DVector::zeros(m)
            };
            comps.push(v.iter().copied().collect::<Vec<f64>>());
        }
        (values, comps)
    } else {
        let (values, v) = sorted_eigen(x.transpose() * &x / dof);
        let comps = (0..2).map(|k| if k < m { v.column(k).iter().copied().collect() } else { vec![0.0; m] }).collect();
        (values, comps)
    };

    // Fix the sign so the largest-magnitude entry of each component is positive.
    for c in &mut components {
        let mut pivot = 0;
        for (i, v) in c.iter().enumerate() {
            if v.abs() > c[pivot].abs() {
                pivot = i;
            }
        }
        if c[pivot] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }

    let total: f64 = eigenvalues.iter().sum();
    let ratio = |k: usize| if total > 0.0 && k < eigenvalues.len() { eigenvalues[k] / total } else { 0.0 };
    let coords = (0..n)
        .map(|i| {
            let row = x.row(i);
            let project = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [project(&components[0]), project(&components[1])]
        })
        .collect();
    let [c0, c1]: [Vec<f64>; 2] = components.try_into().expect("two components");
    Ok(PcaProjection {
        runs: vectors.runs.clone(),
        features: vectors.features.clone(),
        explained_variance_ratio: [ratio(0), ratio(1)],
        spectrum: (0..eigenvalues.len()).map(ratio).collect(),
        coords,
        components: [c0, c1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_set(n: usize, m: usize, seed: u64) -> VectorSet {
        let mut r = rng::stream(seed, 77, 0);
        VectorSet {
            runs: (0..n).map(|i| format!("r{i}")).collect(),
            features: (0..m).map(|i| format!("f{i}")).collect(),
            data: (0..n).map(|_| (0..m).map(|_| r.random_range(-1.0..1.0)).collect()).collect(),
        }
    }

    #[test]
    fn routes_agree() {
        for (n, m) in [(14, 32), (14, 300), (6, 4)] {
            let vs = random_set(n, m, (n * m) as u64);
            let a = pca_project(&vs, PcaRoute::Covariance).unwrap();
            let b = pca_project(&vs, PcaRoute::Gram).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(a.explained_variance_ratio[k], b.explained_variance_ratio[k], epsilon = 1e-9);
                for i in 0..n {
                    assert_abs_diff_eq!(a.coords[i][k], b.coords[i][k], epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn line_data_is_one_dimensional() {
        // Points on a line: all variance on PC1, and PC1 recovers positions.
        let vs = VectorSet {
            runs: (0..5).map(|i| i.to_string()).collect(),
            features: vec!["x".into(), "y".into()],
            data: (0..5).map(|i| vec![i as f64 * 3.0, i as f64 * 4.0]).collect(),
        };
        let p = pca_project(&vs, PcaRoute::Auto).unwrap();
        assert_abs_diff_eq!(p.explained_variance_ratio[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.explained_variance_ratio[1], 0.0, epsilon = 1e-12);
        for (i, c) in p.coords.iter().enumerate() {
            assert_abs_diff_eq!(c[0], (i as f64 - 2.0) * 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_preserves_variance_share() {
        let vs = random_set(10, 6, 5);
        let p = pca_project(&vs, PcaRoute::Auto).unwrap();
        let n = vs.len() as f64;
        let total: f64 = (0..vs.dim())
            .map(|f| {
                let mean = vs.data.iter().map(|r| r[f]).sum::<f64>() / n;
                vs.data.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>()
            })
            .sum();
        for k in 0..2 {
            let along: f64 = p.coords.iter().map(|c| c[k] * c[k]).sum();
            assert_abs_diff_eq!(along / total, p.explained_variance_ratio[k], epsilon = 1e-9);
        }
        assert!(p.explained_variance_ratio[0] >= p.explained_variance_ratio[1]);
    }

    #[test]
    fn spectrum_sums_to_one() {
        for (n, m) in [(14, 32), (5, 40)] {
            let p = pca_project(&random_set(n, m, 11), PcaRoute::Auto).unwrap();
            assert_abs_diff_eq!(p.spectrum.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert!(p.spectrum.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn feature_order_does_not_change_distances() {
        let vs = random_set(8, 5, 3);
        let order = [3, 0, 4, 1, 2];
        let shuffled = VectorSet {
            runs: vs.runs.clone(),
            features: order.iter().map(|&i| vs.features[i].clone()).collect(),
            data: vs.data.iter().map(|r| order.iter().map(|&i| r[i]).collect()).collect(),
        };
        let a = pca_project(&vs, PcaRoute::Auto).unwrap();
        let b = pca_project(&shuffled, PcaRoute::Auto).unwrap();
        let dist = |p: &PcaProjection, i: usize, j: usize| {
            ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt()
        };
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(dist(&a, i, j), dist(&b, i, j), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn too_few_runs() {
        let vs = random_set(1, 3, 0);
        assert!(pca_project(&vs, PcaRoute::Auto).is_err());
    }
}
