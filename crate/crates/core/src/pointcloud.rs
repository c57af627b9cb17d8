//! Point-cloud geometry: unit-sphere normalization, farthest point sampling,
//! and uniform sampling of triangle-mesh surfaces.
//!
//! Coordinates are stored as `f32`; centroids, distances and areas are
//! accumulated in `f64` to bound drift. All functions are pure.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::linalg::FeatureMatrix;
use crate::rng::rng_from;
use crate::{Error, Result};

/// A single 3D point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

impl Point3 {
    pub fn new(x: f32, y: f32, z: f32) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        let (x, y, z) = (self.x as f64, self.y as f64, self.z as f64);
        (x * x + y * y + z * z).sqrt()
    }

    /// Squared Euclidean distance, accumulated in `f64`.
    pub fn dist2(&self, other: &Point3) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        let dz = self.z as f64 - other.z as f64;
        dx * dx + dy * dy + dz * dz
    }
}

/// An ordered set of points with an optional class label.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub label: Option<u16>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, label: Option<u16>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self { points, label })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The three coordinate signals as an `n x 3` feature matrix.
    pub fn coordinate_features(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            data.push(p.x);
            data.push(p.y);
            data.push(p.z);
        }
        FeatureMatrix::from_vec(self.points.len(), 3, data)
    }

    /// Cloud restricted to the given indices, label preserved.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        }
    }

    pub fn centroid(&self) -> (f64, f64, f64) {
        let mut cx = 0.0f64;
        let mut cy = 0.0f64;
        let mut cz = 0.0f64;
        for p in &self.points {
            cx += p.x as f64;
            cy += p.y as f64;
            cz += p.z as f64;
        }
        let n = self.points.len() as f64;
        (cx / n, cy / n, cz / n)
    }

    pub fn max_norm(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Center the cloud on its centroid and scale so the farthest point sits on
/// the unit sphere. Point order and label are preserved.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (cx, cy, cz) = cloud.centroid();
    let mut max_r2 = 0.0f64;
    for p in &cloud.points {
        let dx = p.x as f64 - cx;
        let dy = p.y as f64 - cy;
        let dz = p.z as f64 - cz;
        max_r2 = max_r2.max(dx * dx + dy * dy + dz * dz);
    }
    let scale = max_r2.sqrt();
    if scale == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    let inv = 1.0 / scale;
    let points = cloud
        .points
        .iter()
        .map(|p| {
            Point3::new(
                ((p.x as f64 - cx) * inv) as f32,
                ((p.y as f64 - cy) * inv) as f32,
                ((p.z as f64 - cz) * inv) as f32,
            )
        })
        .collect();
    Ok(PointCloud { points, label: cloud.label })
}

/// Farthest point sampling with a randomized initial point.
///
/// Returns `m` distinct indices. After the seeded first pick, each further
/// index maximizes the minimum distance to everything already selected
/// (greedy max-min); distance ties break toward the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let first = rng_from(seed).gen_range(0..cloud.len());
    farthest_point_sample_from(cloud, m, first)
}

/// Farthest point sampling with an explicit initial index.
pub fn farthest_point_sample_from(
    cloud: &PointCloud,
    m: usize,
    first: usize,
) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m > n {
        return Err(Error::SampleCountExceedsPoints { requested: m, available: n });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    assert!(first < n, "initial index out of range");

    let mut selected = Vec::with_capacity(m);
    selected.push(first);
    // min_dist[i] = squared distance from point i to the nearest selected point.
    let mut min_dist = vec![f64::INFINITY; n];
    let mut last = first;
    while selected.len() < m {
        let last_point = cloud.points[last];
        let mut best_idx = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for (i, (p, d)) in cloud.points.iter().zip(min_dist.iter_mut()).enumerate() {
            let dl = p.dist2(&last_point);
            if dl < *d {
                *d = dl;
            }
            // Strict comparison keeps the lowest index on ties.
            if *d > best_dist {
                best_dist = *d;
                best_idx = i;
            }
        }
        selected.push(best_idx);
        last = best_idx;
    }
    Ok(selected)
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validate that every face index is in range.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (f, face) in faces.iter().enumerate() {
            for &idx in face {
                if idx >= vertices.len() {
                    return Err(Error::FaceIndexOutOfRange {
                        face: f,
                        index: idx,
                        vertex_count: vertices.len(),
                    });
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    fn face_area(&self, face: &[usize; 3]) -> f64 {
        let a = self.vertices[face[0]];
        let b = self.vertices[face[1]];
        let c = self.vertices[face[2]];
        let ux = b.x as f64 - a.x as f64;
        let uy = b.y as f64 - a.y as f64;
        let uz = b.z as f64 - a.z as f64;
        let vx = c.x as f64 - a.x as f64;
        let vy = c.y as f64 - a.y as f64;
        let vz = c.z as f64 - a.z as f64;
        let cx = uy * vz - uz * vy;
        let cy = uz * vx - ux * vz;
        let cz = ux * vy - uy * vx;
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }
}

/// Draw `n` points uniformly from the mesh surface: faces are chosen with
/// probability proportional to area, then a uniform barycentric point is
/// placed on the winning triangle. Deterministic for a fixed seed.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let areas: Vec<f64> = mesh.faces.iter().map(|f| mesh.face_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroSurfaceArea);
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0f64;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }

    let mut rng = rng_from(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.gen::<f64>() * total;
        let face_idx = match cumulative.partition_point(|&c| c <= target) {
            i if i >= mesh.faces.len() => mesh.faces.len() - 1,
            i => i,
        };
        let face = &mesh.faces[face_idx];
        let a = mesh.vertices[face[0]];
        let b = mesh.vertices[face[1]];
        let c = mesh.vertices[face[2]];
        let mut u = rng.gen::<f64>();
        let mut v = rng.gen::<f64>();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let px = a.x as f64 + u * (b.x as f64 - a.x as f64) + v * (c.x as f64 - a.x as f64);
        let py = a.y as f64 + u * (b.y as f64 - a.y as f64) + v * (c.y as f64 - a.y as f64);
        let pz = a.z as f64 + u * (b.z as f64 - a.z as f64) + v * (c.z as f64 - a.z as f64);
        points.push(Point3::new(px as f32, py as f32, pz as f32));
    }
    Ok(PointCloud { points, label: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_of(coords: &[[f32; 3]]) -> PointCloud {
        PointCloud {
            points: coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect(),
            label: None,
        }
    }

    #[test]
    fn normalize_two_points() {
        let c = cloud_of(&[[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let n = normalize_unit_sphere(&c).unwrap();
        assert_eq!(n.points[0], Point3::new(1.0, 0.0, 0.0));
        assert_eq!(n.points[1], Point3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn normalize_fixed_point() {
        let c = cloud_of(&[[1.0, 0.0, 0.0], [-0.5, 0.5, 0.0], [-0.5, -0.5, 0.0]]);
        // Already centered with max norm 1.
        let n = normalize_unit_sphere(&c).unwrap();
        for (a, b) in n.points.iter().zip(&c.points) {
            assert!((a.x - b.x).abs() < 1e-6);
            assert!((a.y - b.y).abs() < 1e-6);
            assert!((a.z - b.z).abs() < 1e-6);
        }
    }

    #[test]
    fn normalize_random_cloud_contracts() {
        // Oracle: recompute centroid and max norm after the call.
        let mut rng = rng_from(42);
        let points: Vec<Point3> = (0..100)
            .map(|_| {
                Point3::new(
                    rng.gen::<f32>() * 4.0 - 1.0,
                    rng.gen::<f32>() * 2.0 + 3.0,
                    rng.gen::<f32>() * 5.0,
                )
            })
            .collect();
        let n = normalize_unit_sphere(&PointCloud { points, label: Some(3) }).unwrap();
        let (cx, cy, cz) = n.centroid();
        assert!((cx * cx + cy * cy + cz * cz).sqrt() < 1e-6);
        assert!((n.max_norm() - 1.0).abs() < 1e-6);
        assert_eq!(n.label, Some(3));
    }

    #[test]
    fn normalize_degenerate_rejected() {
        let c = cloud_of(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert_eq!(normalize_unit_sphere(&c), Err(Error::DegenerateCloud));
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = rng_from(7);
        let points: Vec<Point3> =
            (0..40).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let once = normalize_unit_sphere(&PointCloud { points, label: None }).unwrap();
        let twice = normalize_unit_sphere(&once).unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            assert!((a.x - b.x).abs() < 1e-6);
            assert!((a.y - b.y).abs() < 1e-6);
            assert!((a.z - b.z).abs() < 1e-6);
        }
    }

    /// Brute-force max-min reference: checks that each selected index (after
    /// the first) maximizes the minimum distance to the prior selection.
    fn assert_maxmin(cloud: &PointCloud, picks: &[usize]) {
        for step in 1..picks.len() {
            let chosen = picks[step];
            let prior = &picks[..step];
            let d_of = |i: usize| -> f64 {
                prior.iter().map(|&s| cloud.points[i].dist2(&cloud.points[s])).fold(f64::INFINITY, f64::min)
            };
            let chosen_d = d_of(chosen);
            for i in 0..cloud.len() {
                if prior.contains(&i) || i == chosen {
                    continue;
                }
                let d = d_of(i);
                assert!(
                    d < chosen_d || (d == chosen_d && chosen < i),
                    "step {step}: index {i} (d={d}) beats chosen {chosen} (d={chosen_d})"
                );
            }
        }
    }

    #[test]
    fn fps_three_collinear() {
        let c = cloud_of(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let picks = farthest_point_sample_from(&c, 2, 0).unwrap();
        assert_eq!(picks, vec![0, 2]);
        assert_maxmin(&c, &picks);
    }

    #[test]
    fn fps_square_corners() {
        let c = cloud_of(&[[1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0]]);
        let picks = farthest_point_sample_from(&c, 2, 0).unwrap();
        assert_eq!(picks, vec![0, 3], "diagonal is the farthest pair");
    }

    #[test]
    fn fps_full_sample_is_permutation() {
        let mut rng = rng_from(11);
        let points: Vec<Point3> =
            (0..20).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let c = PointCloud { points, label: None };
        let mut picks = farthest_point_sample(&c, 20, 5).unwrap();
        picks.sort_unstable();
        assert_eq!(picks, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fps_deterministic_and_maxmin_on_random_cloud() {
        let mut rng = rng_from(3);
        let points: Vec<Point3> =
            (0..30).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let c = PointCloud { points, label: None };
        let a = farthest_point_sample(&c, 12, 99).unwrap();
        let b = farthest_point_sample(&c, 12, 99).unwrap();
        assert_eq!(a, b);
        assert_maxmin(&c, &a);
    }

    #[test]
    fn fps_rejects_oversample() {
        let c = cloud_of(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        assert!(farthest_point_sample(&c, 3, 0).is_err());
    }

    #[test]
    fn fps_min_pairwise_distance_monotone() {
        // Greedy max-min: the min pairwise distance of the selected set never
        // grows as m grows.
        let mut rng = rng_from(17);
        let points: Vec<Point3> =
            (0..40).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let c = PointCloud { points, label: None };
        let min_pairwise = |picks: &[usize]| -> f64 {
            let mut best = f64::INFINITY;
            for (i, &a) in picks.iter().enumerate() {
                for &b in &picks[i + 1..] {
                    best = best.min(c.points[a].dist2(&c.points[b]));
                }
            }
            best
        };
        let mut prev = f64::INFINITY;
        for m in 2..=40 {
            let picks = farthest_point_sample_from(&c, m, 4).unwrap();
            let d = min_pairwise(&picks);
            assert!(d <= prev + 1e-12, "min pairwise distance grew at m={m}");
            prev = d;
        }
    }

    #[test]
    fn fps_permutation_invariance() {
        let mut rng = rng_from(23);
        let points: Vec<Point3> =
            (0..25).map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let c = PointCloud { points: points.clone(), label: None };
        // Reverse the point order; the forced first index moves accordingly.
        let reversed = PointCloud { points: points.iter().rev().copied().collect(), label: None };
        let picks = farthest_point_sample_from(&c, 10, 3).unwrap();
        let picks_rev = farthest_point_sample_from(&reversed, 10, 25 - 1 - 3).unwrap();
        let mut set_a: Vec<_> = picks.iter().map(|&i| c.points[i]).map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())).collect();
        let mut set_b: Vec<_> = picks_rev.iter().map(|&i| reversed.points[i]).map(|p| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())).collect();
        set_a.sort_unstable();
        set_b.sort_unstable();
        assert_eq!(set_a, set_b, "same geometric point set");
    }

    #[test]
    fn mesh_validation() {
        let verts = vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        assert!(TriangleMesh::new(verts.clone(), vec![[0, 1, 2]]).is_ok());
        let err = TriangleMesh::new(verts, vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(err, Error::FaceIndexOutOfRange { index: 3, .. }));
    }

    #[test]
    fn surface_samples_stay_in_triangle_plane() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 1.0),
                Point3::new(2.0, 0.0, 1.0),
                Point3::new(0.0, 2.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cloud = sample_mesh_surface(&mesh, 1000, 5).unwrap();
        assert_eq!(cloud.len(), 1000);
        for p in &cloud.points {
            assert!((p.z - 1.0).abs() < 1e-6);
            // Inside the triangle x >= 0, y >= 0, x + y <= 2.
            assert!(p.x >= -1e-6 && p.y >= -1e-6 && p.x + p.y <= 2.0 + 1e-5);
        }
    }

    #[test]
    fn surface_sampling_respects_area_ratio() {
        // Two triangles with area ratio 3:1 (z = 0 plane vs z = 1 plane).
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(3.0, 0.0, 0.0),
                Point3::new(0.0, 2.0, 0.0), // area 3
                Point3::new(0.0, 0.0, 1.0),
                Point3::new(1.0, 0.0, 1.0),
                Point3::new(0.0, 2.0, 1.0), // area 1
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 10_000;
        let cloud = sample_mesh_surface(&mesh, n, 12).unwrap();
        let big = cloud.points.iter().filter(|p| p.z.abs() < 0.5).count();
        let share = big as f64 / n as f64;
        assert!((share - 0.75).abs() < 0.02, "share {share}");
    }

    #[test]
    fn unit_square_sampling_mean() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let cloud = sample_mesh_surface(&mesh, 10_000, 31).unwrap();
        let (cx, cy, cz) = cloud.centroid();
        assert!((cx - 0.5).abs() < 0.02);
        assert!((cy - 0.5).abs() < 0.02);
        assert!(cz.abs() < 1e-6);
    }

    #[test]
    fn zero_area_mesh_rejected() {
        let mesh = TriangleMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(sample_mesh_surface(&mesh, 10, 0), Err(Error::ZeroSurfaceArea));
    }

    #[test]
    fn per_face_counts_within_binomial_bounds() {
        // 3-sigma binomial check on per-face counts for a 4-face mesh.
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 2.0),
                Point3::new(2.0, 0.0, 2.0),
                Point3::new(0.0, 1.0, 2.0),
                Point3::new(0.0, 0.0, 4.0),
                Point3::new(1.0, 0.0, 4.0),
                Point3::new(0.0, 3.0, 4.0),
                Point3::new(0.0, 0.0, 6.0),
                Point3::new(2.0, 0.0, 6.0),
                Point3::new(0.0, 3.0, 6.0),
            ],
            vec![[0, 1, 2], [3, 4, 5], [6, 7, 8], [9, 10, 11]],
        )
        .unwrap();
        let n = 20_000usize;
        let cloud = sample_mesh_surface(&mesh, n, 77).unwrap();
        let planes = [0.0f32, 2.0, 4.0, 6.0];
        let areas = [0.5f64, 1.0, 1.5, 3.0];
        let total: f64 = areas.iter().sum();
        for (plane, area) in planes.iter().zip(&areas) {
            let count = cloud.points.iter().filter(|p| (p.z - plane).abs() < 0.5).count();
            let p = area / total;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (count as f64 - n as f64 * p).abs() < 3.0 * sigma,
                "face at z={plane}: count {count} expected {}",
                n as f64 * p
            );
        }
    }
}
