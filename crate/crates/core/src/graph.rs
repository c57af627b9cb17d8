//! kNN graph construction and Laplacian machinery.
//!
//! A cloud becomes a graph by connecting each point to its k nearest
//! neighbors and weighting edges with a Gaussian kernel,
//! `w_ij = exp(-||x_i - x_j||^2 / sigma^2)`, then symmetrizing by union so no
//! vertex is ever disconnected. Filtering operates on the rescaled normalized
//! Laplacian `2 L / lambda_max - I`, whose spectrum lies in `[-1, 1]`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::pointcloud::PointCloud;
use crate::sparse::SparseSym;
use crate::{Error, Result};

/// Rule for choosing the Gaussian kernel width `sigma^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaPolicy {
    /// Mean of the squared distances over all retained directed kNN pairs.
    /// Scale-adaptive and parameter-free; the default.
    MeanSquaredDistance,
    /// Fixed `sigma^2`, for ablation.
    Fixed(f64),
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::MeanSquaredDistance
    }
}

/// Symmetric weighted adjacency of a kNN graph. Weights lie in `(0, 1]` and
/// the diagonal is empty.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    pub adjacency: SparseSym,
}

impl WeightedGraph {
    pub fn vertex_count(&self) -> usize {
        self.adjacency.dim()
    }
}

/// Normalized Laplacian rescaled to `2 L / lambda_max - I`, together with the
/// `lambda_max` estimate that produced it.
#[derive(Clone, Debug)]
pub struct RescaledLaplacian {
    pub matrix: SparseSym,
    pub lambda_max: f64,
}

impl RescaledLaplacian {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// Build the union-symmetrized Gaussian-weighted kNN graph of a cloud.
///
/// Each vertex contributes directed edges to its `k` nearest neighbors
/// (self excluded, distance ties broken by index); an undirected edge exists
/// if either direction was selected, and both directions carry the same
/// kernel weight. Duplicate points are legal and produce weight-1 edges.
pub fn knn_graph(cloud: &PointCloud, k: usize, sigma: SigmaPolicy) -> Result<WeightedGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::KnnTooLarge { k, n });
    }
    if let SigmaPolicy::Fixed(s) = sigma {
        if s <= 0.0 {
            return Err(Error::NonPositiveSigma);
        }
    }

    // Exact brute-force kNN; n stays small enough that this is both fast and
    // free of approximate-search nondeterminism.
    let mut pair_dist: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut sum_d2 = 0.0f64;
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scratch.clear();
        let pi = cloud.points[i];
        for (j, pj) in cloud.points.iter().enumerate() {
            if j != i {
                scratch.push((pi.dist2(pj), j as u32));
            }
        }
        let kth = k - 1;
        scratch.select_nth_unstable_by(kth, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        for &(d2, j) in &scratch[..=kth] {
            sum_d2 += d2;
            let key = if (i as u32) < j { (i as u32, j) } else { (j, i as u32) };
            pair_dist.entry(key).or_insert(d2);
        }
    }

    let sigma2 = match sigma {
        SigmaPolicy::Fixed(s) => s,
        SigmaPolicy::MeanSquaredDistance => sum_d2 / (n * k) as f64,
    };

    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &d2) in &pair_dist {
        // exp(0) = 1 also covers the sigma2 = 0 case of fully coincident input.
        let w = if d2 == 0.0 { 1.0 } else { (-d2 / sigma2).exp() };
        rows[i as usize].push((j, w));
        rows[j as usize].push((i, w));
    }
    Ok(WeightedGraph { adjacency: SparseSym::from_rows(n, rows) })
}

/// Normalized Laplacian `I - D^{-1/2} W D^{-1/2}`. Symmetric, unit diagonal,
/// spectrum contained in `[0, 2]`.
pub fn normalized_laplacian(graph: &WeightedGraph) -> Result<SparseSym> {
    let n = graph.vertex_count();
    let degrees = graph.adjacency.row_sums();
    for (i, &d) in degrees.iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::IsolatedVertex(i));
        }
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((i as u32, 1.0));
    }
    for (i, j, w) in graph.adjacency.iter_entries() {
        if i < j {
            let v = -w * inv_sqrt[i] * inv_sqrt[j];
            rows[i].push((j as u32, v));
            rows[j].push((i as u32, v));
        }
    }
    Ok(SparseSym::from_rows(n, rows))
}

pub const DEFAULT_LAMBDA_TOL: f64 = 1e-3;
pub const DEFAULT_LAMBDA_MAX_ITER: usize = 200;

/// Estimate the largest eigenvalue of a symmetric PSD matrix by power
/// iteration with a deterministic start vector.
///
/// Converged means the residual `||L v - lambda v||` dropped below
/// `tol * lambda`; for a symmetric matrix that places an eigenvalue within
/// `tol * lambda` of the estimate, and the Rayleigh quotient never exceeds
/// the true maximum. If the iteration does not converge the safe upper bound
/// 2 for normalized Laplacians is returned.
pub fn estimate_lambda_max(l: &SparseSym, tol: f64, max_iter: usize) -> f64 {
    let n = l.dim();
    if n == 0 {
        return 2.0;
    }
    // The start vector must be a smooth, permutation-equivariant function of
    // the matrix itself: relabeling the vertices then has no effect on the
    // estimate beyond f64 rounding, which keeps graph pipelines permutation
    // invariant. Row sums give per-vertex structure; the sine decorrelates
    // them from any particular eigenvector.
    let mut v: Vec<f64> =
        l.row_sums().iter().map(|&s| 1.0 + 0.5 * (1000.0 * s).sin()).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut lv = vec![0.0f64; n];
    for _ in 0..max_iter {
        l.matvec_f64(&v, &mut lv);
        let lambda: f64 = v.iter().zip(&lv).map(|(a, b)| a * b).sum();
        if lambda > 0.0 {
            let residual: f64 = lv
                .iter()
                .zip(&v)
                .map(|(a, b)| {
                    let r = a - lambda * b;
                    r * r
                })
                .sum::<f64>()
                .sqrt();
            // The residual bounds the distance to the nearest eigenvalue,
            // not to lambda_max; demand a clearly smaller residual so the
            // returned estimate sits within tol of the true maximum. The
            // Rayleigh quotient never overshoots, and near-degenerate cases
            // that stall here land on the safe fallback.
            if residual <= 0.125 * tol * lambda {
                return lambda;
            }
        }
        let nlv = norm(&lv);
        if nlv == 0.0 {
            // L v = 0: the iterate sits in the kernel; restart direction.
            return 2.0;
        }
        for (a, b) in v.iter_mut().zip(&lv) {
            *a = b / nlv;
        }
    }
    2.0
}

/// Rescale a normalized Laplacian to `2 L / lambda_max - I`.
pub fn rescale_laplacian(l: &SparseSym, lambda_max: f64) -> Result<RescaledLaplacian> {
    if lambda_max <= 0.0 {
        return Err(Error::NonPositiveLambdaMax);
    }
    let scale = 2.0 / lambda_max;
    let n = l.dim();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    let mut has_diag = vec![false; n];
    for (i, j, v) in l.iter_entries() {
        let mut value = v * scale;
        if i == j {
            value -= 1.0;
            has_diag[i] = true;
        }
        rows[i].push((j as u32, value));
    }
    for (i, seen) in has_diag.iter().enumerate() {
        if !seen {
            rows[i].push((i as u32, -1.0));
        }
    }
    Ok(RescaledLaplacian { matrix: SparseSym::from_rows(n, rows), lambda_max })
}

/// Full pipeline: kNN graph, normalized Laplacian, `lambda_max` estimate,
/// rescaling. This is what the model runs per cloud.
pub fn rescaled_laplacian_for(
    cloud: &PointCloud,
    k: usize,
    sigma: SigmaPolicy,
) -> Result<RescaledLaplacian> {
    let graph = knn_graph(cloud, k, sigma)?;
    let lap = normalized_laplacian(&graph)?;
    let lambda = estimate_lambda_max(&lap, DEFAULT_LAMBDA_TOL, DEFAULT_LAMBDA_MAX_ITER);
    rescale_laplacian(&lap, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use crate::pointcloud::Point3;
    use crate::rng::rng_from;
    use rand::Rng;

    fn cloud_of(coords: &[[f32; 3]]) -> PointCloud {
        PointCloud {
            points: coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect(),
            label: None,
        }
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = rng_from(seed);
        PointCloud {
            points: (0..n).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect(),
            label: None,
        }
    }

    #[test]
    fn knn_rejects_k_geq_n() {
        let c = random_cloud(5, 1);
        assert!(knn_graph(&c, 5, SigmaPolicy::default()).is_err());
        assert!(knn_graph(&c, 4, SigmaPolicy::default()).is_ok());
    }

    #[test]
    fn coincident_points_weight_one() {
        let c = cloud_of(&[[0.0; 3], [0.0; 3], [5.0, 0.0, 0.0]]);
        let g = knn_graph(&c, 1, SigmaPolicy::default()).unwrap();
        assert_eq!(g.adjacency.entry(0, 1), 1.0);
        assert_eq!(g.adjacency.entry(1, 0), 1.0);
    }

    #[test]
    fn collinear_union_symmetrization() {
        // Points at x = 0, 1, 3 with k = 1: nearest of 0 is 1, of 1 is 0, of
        // 2 is 1. The union keeps edges {0,1} and {1,2}.
        let c = cloud_of(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let g = knn_graph(&c, 1, SigmaPolicy::default()).unwrap();
        assert!(g.adjacency.entry(0, 1) > 0.0);
        assert!(g.adjacency.entry(1, 0) > 0.0);
        assert!(g.adjacency.entry(1, 2) > 0.0);
        assert!(g.adjacency.entry(2, 1) > 0.0);
        assert_eq!(g.adjacency.entry(0, 2), 0.0);
        assert_eq!(g.adjacency.nnz(), 4);
    }

    #[test]
    fn adjacency_is_exactly_symmetric_with_unit_bound() {
        let c = random_cloud(40, 9);
        let g = knn_graph(&c, 6, SigmaPolicy::default()).unwrap();
        assert!(g.adjacency.is_symmetric());
        for (i, j, w) in g.adjacency.iter_entries() {
            assert_ne!(i, j, "no self loops");
            assert!(w > 0.0 && w <= 1.0, "weight {w} outside (0,1]");
        }
    }

    #[test]
    fn laplacian_of_single_edge() {
        let c = cloud_of(&[[0.0; 3], [0.0; 3]]);
        // Duplicate pair: weight 1 edge, L = [[1,-1],[-1,1]].
        let g = knn_graph(&c, 1, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        assert_eq!(l.entry(0, 0), 1.0);
        assert_eq!(l.entry(1, 1), 1.0);
        assert_eq!(l.entry(0, 1), -1.0);
        let eig = sym_eigen(&l.to_dense()).unwrap();
        assert!((eig.values[0] - 0.0).abs() < 1e-9);
        assert!((eig.values[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn laplacian_kernel_vector() {
        // L (D^{1/2} 1) = 0 for connected components.
        let c = random_cloud(25, 4);
        let g = knn_graph(&c, 4, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let deg = g.adjacency.row_sums();
        let v: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
        let mut out = vec![0.0; 25];
        l.matvec_f64(&v, &mut out);
        let vnorm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for o in &out {
            assert!(o.abs() / vnorm < 1e-6, "kernel residual {o}");
        }
    }

    #[test]
    fn laplacian_spectrum_in_unit_interval() {
        let c = random_cloud(20, 13);
        let g = knn_graph(&c, 3, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        assert!(l.is_symmetric());
        for i in 0..20 {
            assert!((l.entry(i, i) - 1.0).abs() < 1e-7);
        }
        let eig = sym_eigen(&l.to_dense()).unwrap();
        assert!(eig.values[0] > -1e-9);
        assert!(*eig.values.last().unwrap() < 2.0 + 1e-9);
    }

    #[test]
    fn lambda_max_on_known_matrices() {
        // Single weight-1 edge: lambda_max = 2.
        let c = cloud_of(&[[0.0; 3], [0.0; 3]]);
        let g = knn_graph(&c, 1, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let lam = estimate_lambda_max(&l, 1e-3, 200);
        assert!((lam - 2.0).abs() < 0.002, "lambda {lam}");

        let ident = SparseSym::identity(6);
        let lam = estimate_lambda_max(&ident, 1e-3, 200);
        assert!((lam - 1.0).abs() < 0.001);
    }

    #[test]
    fn lambda_max_matches_dense_oracle() {
        let c = random_cloud(30, 21);
        let g = knn_graph(&c, 5, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let lam = estimate_lambda_max(&l, 1e-3, 200);
        let eig = sym_eigen(&l.to_dense()).unwrap();
        let exact = *eig.values.last().unwrap();
        assert!((lam - exact).abs() / exact < 1e-3, "lam {lam} vs exact {exact}");
    }

    #[test]
    fn rescale_identity() {
        let ident = SparseSym::identity(4);
        let r = rescale_laplacian(&ident, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.matrix.entry(i, j) - want).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn rescale_two_vertex_edge() {
        let c = cloud_of(&[[0.0; 3], [0.0; 3]]);
        let g = knn_graph(&c, 1, SigmaPolicy::default()).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let r = rescale_laplacian(&l, 2.0).unwrap();
        assert!((r.matrix.entry(0, 0) - 0.0).abs() < 1e-7);
        assert!((r.matrix.entry(0, 1) + 1.0).abs() < 1e-7);
        let eig = sym_eigen(&r.matrix.to_dense()).unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-7);
        assert!((eig.values[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn rescale_rejects_nonpositive_lambda() {
        let ident = SparseSym::identity(3);
        assert!(rescale_laplacian(&ident, 0.0).is_err());
        assert!(rescale_laplacian(&ident, -1.0).is_err());
    }

    #[test]
    fn rescaled_spectrum_within_slack() {
        for seed in 0..5u64 {
            let c = random_cloud(24, 100 + seed);
            let r = rescaled_laplacian_for(&c, 4, SigmaPolicy::default()).unwrap();
            let eig = sym_eigen(&r.matrix.to_dense()).unwrap();
            assert!(eig.values[0] >= -1.002, "low eig {}", eig.values[0]);
            assert!(*eig.values.last().unwrap() <= 1.002, "high eig {}", eig.values.last().unwrap());
            assert!(r.lambda_max > 0.0 && r.lambda_max <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn rigid_motion_invariance() {
        let c = random_cloud(30, 55);
        let g = knn_graph(&c, 5, SigmaPolicy::default()).unwrap();
        let mut rng = rng_from(77);
        // Random rotation from a normalized quaternion plus a translation.
        let (q0, q1, q2, q3): (f64, f64, f64, f64) = {
            let mut draw = || rng.gen::<f64>() * 2.0 - 1.0;
            let (a, b, c2, d) = (draw(), draw(), draw(), draw());
            let n = (a * a + b * b + c2 * c2 + d * d).sqrt();
            (a / n, b / n, c2 / n, d / n)
        };
        let rot = [
            [1.0 - 2.0 * (q2 * q2 + q3 * q3), 2.0 * (q1 * q2 - q0 * q3), 2.0 * (q1 * q3 + q0 * q2)],
            [2.0 * (q1 * q2 + q0 * q3), 1.0 - 2.0 * (q1 * q1 + q3 * q3), 2.0 * (q2 * q3 - q0 * q1)],
            [2.0 * (q1 * q3 - q0 * q2), 2.0 * (q2 * q3 + q0 * q1), 1.0 - 2.0 * (q1 * q1 + q2 * q2)],
        ];
        let t = [0.7f64, -1.3, 2.2];
        let moved = PointCloud {
            points: c
                .points
                .iter()
                .map(|p| {
                    let v = [p.x as f64, p.y as f64, p.z as f64];
                    Point3::new(
                        (rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2] + t[0]) as f32,
                        (rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2] + t[1]) as f32,
                        (rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2] + t[2]) as f32,
                    )
                })
                .collect(),
            label: None,
        };
        let g2 = knn_graph(&moved, 5, SigmaPolicy::default()).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let d = (g.adjacency.entry(i, j) - g2.adjacency.entry(i, j)).abs();
                assert!(d < 1e-5, "weight drifted by {d} at ({i},{j})");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let c = random_cloud(18, 31);
        let g = knn_graph(&c, 3, SigmaPolicy::default()).unwrap();
        // Reverse permutation.
        let perm: Vec<usize> = (0..18).rev().collect();
        let permuted = PointCloud {
            points: perm.iter().map(|&i| c.points[i]).collect(),
            label: None,
        };
        let g2 = knn_graph(&permuted, 3, SigmaPolicy::default()).unwrap();
        for a in 0..18 {
            for b in 0..18 {
                assert_eq!(
                    g2.adjacency.entry(a, b),
                    g.adjacency.entry(perm[a], perm[b]),
                    "permutation mismatch at ({a},{b})"
                );
            }
        }
    }
}
