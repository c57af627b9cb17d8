//! Datasets: the labeled-cloud container, the synthetic four-primitive
//! corpus, the mesh/cloud preprocessing pipeline, and epoch batching.
//!
//! The synthetic classes (sphere, cube, cylinder, torus) are uniform surface
//! samples with a random rotation and Gaussian coordinate noise per
//! instance, normalized to the unit sphere. They are a desk-scale corpus
//! that exercises every part of the classifier.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::pointcloud::{
    farthest_point_sample, normalize_unit_sphere, sample_mesh_surface, Point3, PointCloud,
    TriangleMesh,
};
use crate::rng::{mix, mix3, rng_from};
use crate::{Error, Result};

/// A labeled collection of clouds plus the ordered class names.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Instances per class; errors if any cloud is unlabeled or out of range.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let c = self.class_count();
        let mut counts = vec![0usize; c];
        for cloud in &self.clouds {
            match cloud.label {
                Some(l) if (l as usize) < c => counts[l as usize] += 1,
                Some(l) => {
                    return Err(Error::LabelOutOfRange { label: l as usize, class_count: c })
                }
                None => return Err(Error::LabelOutOfRange { label: usize::MAX, class_count: c }),
            }
        }
        Ok(counts)
    }
}

/// The four synthetic primitives, in label order.
pub const SYNTH_CLASS_NAMES: [&str; 4] = ["sphere", "cube", "cylinder", "torus"];

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; rejects the measure-zero origin draw.
    loop {
        let u: f64 = rng.gen();
        if u > 1e-300 {
            let v: f64 = rng.gen();
            return (-2.0 * u.ln()).sqrt() * (2.0 * core::f64::consts::PI * v).cos();
        }
    }
}

/// Uniform random rotation matrix from a normalized Gaussian quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (w, x, y, z) = loop {
        let q = (gaussian(rng), gaussian(rng), gaussian(rng), gaussian(rng));
        let n = (q.0 * q.0 + q.1 * q.1 + q.2 * q.2 + q.3 * q.3).sqrt();
        if n > 1e-12 {
            break (q.0 / n, q.1 / n, q.2 / n, q.3 / n);
        }
    };
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn sample_primitive(class: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match class {
        // Sphere surface: normalized Gaussian triple.
        0 => loop {
            let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        },
        // Cube surface: equal-area faces, pick one and place uniformly.
        1 => {
            let face = rng.gen_range(0..6u8);
            let a = rng.gen::<f64>() * 2.0 - 1.0;
            let b = rng.gen::<f64>() * 2.0 - 1.0;
            match face {
                0 => [1.0, a, b],
                1 => [-1.0, a, b],
                2 => [a, 1.0, b],
                3 => [a, -1.0, b],
                4 => [a, b, 1.0],
                _ => [a, b, -1.0],
            }
        }
        // Cylinder with caps, radius 1, height 2: area-weighted side/caps.
        2 => {
            let side_area = 2.0 * core::f64::consts::PI * 2.0;
            let cap_area = core::f64::consts::PI;
            let pick = rng.gen::<f64>() * (side_area + 2.0 * cap_area);
            if pick < side_area {
                let angle = rng.gen::<f64>() * core::f64::consts::TAU;
                [angle.cos(), angle.sin(), rng.gen::<f64>() * 2.0 - 1.0]
            } else {
                // Uniform disc via sqrt radius.
                let r = rng.gen::<f64>().sqrt();
                let angle = rng.gen::<f64>() * core::f64::consts::TAU;
                let z = if pick < side_area + cap_area { 1.0 } else { -1.0 };
                [r * angle.cos(), r * angle.sin(), z]
            }
        }
        // Torus R = 1, r = 0.35: rejection on the minor angle so the surface
        // density is uniform.
        _ => {
            let (major_r, minor_r) = (1.0f64, 0.35f64);
            let u = rng.gen::<f64>() * core::f64::consts::TAU;
            let v = loop {
                let v = rng.gen::<f64>() * core::f64::consts::TAU;
                let accept = (major_r + minor_r * v.cos()) / (major_r + minor_r);
                if rng.gen::<f64>() < accept {
                    break v;
                }
            };
            [
                (major_r + minor_r * v.cos()) * u.cos(),
                (major_r + minor_r * v.cos()) * u.sin(),
                minor_r * v.sin(),
            ]
        }
    }
}

/// Generate the synthetic dataset: the first `class_count` primitives,
/// `per_class` instances each, `n_points` surface samples per instance,
/// rotated uniformly at random, jittered by Gaussian noise, and normalized
/// to the unit sphere.
pub fn synth_generate_classes(
    class_count: usize,
    per_class: usize,
    n_points: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if per_class == 0 || n_points == 0 {
        return Err(Error::InvalidConfig(String::from(
            "per_class and n_points must be positive",
        )));
    }
    if class_count == 0 || class_count > SYNTH_CLASS_NAMES.len() {
        return Err(Error::InvalidConfig(String::from("class_count must lie in 1..=4")));
    }
    let mut clouds = Vec::with_capacity(class_count * per_class);
    for class in 0..class_count {
        for instance in 0..per_class {
            let mut rng = rng_from(mix3(seed, class as u64, instance as u64));
            let rot = random_rotation(&mut rng);
            // All four primitives are centrally symmetric, so emitting each
            // sample with its mirror image keeps the instance centroid at the
            // origin; normalization then leaves surface geometry intact.
            let mut points: Vec<Point3> = Vec::with_capacity(n_points);
            while points.len() < n_points {
                let p = sample_primitive(class, &mut rng);
                let rotated = [
                    rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
                    rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
                    rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
                ];
                for signed in [1.0f64, -1.0] {
                    if points.len() == n_points {
                        break;
                    }
                    points.push(Point3::new(
                        (signed * rotated[0] + noise_sigma * gaussian(&mut rng)) as f32,
                        (signed * rotated[1] + noise_sigma * gaussian(&mut rng)) as f32,
                        (signed * rotated[2] + noise_sigma * gaussian(&mut rng)) as f32,
                    ));
                }
            }
            let cloud = PointCloud { points, label: Some(class as u16) };
            clouds.push(normalize_unit_sphere(&cloud)?);
        }
    }
    Ok(Dataset {
        clouds,
        class_names: SYNTH_CLASS_NAMES[..class_count].iter().map(|&s| String::from(s)).collect(),
    })
}

/// All four primitive classes.
pub fn synth_generate(
    per_class: usize,
    n_points: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_generate_classes(SYNTH_CLASS_NAMES.len(), per_class, n_points, noise_sigma, seed)
}

/// Number of surface samples drawn from a mesh before farthest subsampling.
pub const DEFAULT_SURFACE_SAMPLES: usize = 2048;
/// Points kept per object after preprocessing.
pub const DEFAULT_TARGET_POINTS: usize = 1024;

/// Mesh pipeline: sample the surface uniformly, normalize to the unit
/// sphere, reduce by farthest point sampling, and renormalize so the output
/// again touches the unit sphere.
pub fn preprocess_mesh(
    mesh: &TriangleMesh,
    surface_samples: usize,
    target_n: usize,
    seed: u64,
) -> Result<PointCloud> {
    let sampled = sample_mesh_surface(mesh, surface_samples, mix(seed, 0x51))?;
    preprocess_cloud(&sampled, target_n, seed)
}

/// Cloud pipeline: normalize, farthest point sample down to `target_n`,
/// renormalize. Labels are preserved.
pub fn preprocess_cloud(cloud: &PointCloud, target_n: usize, seed: u64) -> Result<PointCloud> {
    let normalized = normalize_unit_sphere(cloud)?;
    let picks = farthest_point_sample(&normalized, target_n, mix(seed, 0xf5))?;
    normalize_unit_sphere(&normalized.select(&picks))
}

/// Deterministic epoch batching: Fisher-Yates shuffle keyed by
/// `(shuffle_seed, epoch)`, chunked into `batch_size` groups with the final
/// short batch emitted. Every index appears exactly once per epoch.
pub fn batch_indices(
    n_items: usize,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = rng_from(mix3(shuffle_seed, 0xba7c, epoch));
    for i in (1..n_items).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// [`batch_indices`] over a dataset.
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    batch_indices(dataset.len(), batch_size, shuffle_seed, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_cardinality_and_labels() {
        let ds = synth_generate(10, 64, 0.01, 7).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.class_count(), 4);
        let counts = ds.class_counts().unwrap();
        assert_eq!(counts, vec![10, 10, 10, 10]);
        for cloud in &ds.clouds {
            assert_eq!(cloud.len(), 64);
        }
    }

    #[test]
    fn synth_noiseless_sphere_has_unit_norms() {
        let ds = synth_generate(2, 128, 0.0, 3).unwrap();
        for cloud in ds.clouds.iter().take(2) {
            assert_eq!(cloud.label, Some(0));
            for p in &cloud.points {
                assert!((p.norm() - 1.0).abs() < 1e-5, "norm {}", p.norm());
            }
        }
    }

    #[test]
    fn synth_deterministic() {
        let a = synth_generate(3, 32, 0.02, 9).unwrap();
        let b = synth_generate(3, 32, 0.02, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(3, 32, 0.02, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_rejects_zero_counts() {
        assert!(synth_generate(0, 32, 0.0, 1).is_err());
        assert!(synth_generate(2, 0, 0.0, 1).is_err());
    }

    #[test]
    fn preprocess_mesh_contract() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(4.0, 0.0, 0.0),
                Point3::new(0.0, 3.0, 0.0),
                Point3::new(0.0, 0.0, 2.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
        )
        .unwrap();
        let cloud = preprocess_mesh(&mesh, 512, 128, 5).unwrap();
        assert_eq!(cloud.len(), 128);
        assert!((cloud.max_norm() - 1.0).abs() < 1e-6);
        let (cx, cy, cz) = cloud.centroid();
        assert!((cx * cx + cy * cy + cz * cz).sqrt() < 1e-6);
    }

    #[test]
    fn preprocess_cloud_full_size_is_normalization_only() {
        let mut rng = rng_from(6);
        let cloud = PointCloud {
            points: (0..50)
                .map(|_| Point3::new(rng.gen::<f32>() * 3.0, rng.gen(), rng.gen()))
                .collect(),
            label: Some(2),
        };
        let out = preprocess_cloud(&cloud, 50, 11).unwrap();
        assert_eq!(out.len(), 50);
        assert_eq!(out.label, Some(2));
        // FPS with m = n permutes; the normalized point sets must agree.
        let direct = normalize_unit_sphere(&cloud).unwrap();
        let renorm = normalize_unit_sphere(&direct).unwrap();
        let key = |p: &Point3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        let mut a: Vec<_> = out.points.iter().map(key).collect();
        let mut b: Vec<_> = renorm.points.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn preprocess_deterministic() {
        let ds = synth_generate(1, 96, 0.01, 13).unwrap();
        let a = preprocess_cloud(&ds.clouds[0], 48, 21).unwrap();
        let b = preprocess_cloud(&ds.clouds[0], 48, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batches_partition_every_epoch() {
        for (n, bs, sizes) in [(56usize, 28usize, vec![28usize, 28]), (30, 28, vec![28, 2])] {
            let batches = batch_indices(n, bs, 3, 0);
            let got: Vec<usize> = batches.iter().map(|b| b.len()).collect();
            assert_eq!(got, sizes);
            let mut all: Vec<usize> = batches.into_iter().flatten().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batches_differ_across_epochs_but_not_runs() {
        let a = batch_indices(40, 7, 5, 0);
        let b = batch_indices(40, 7, 5, 0);
        let c = batch_indices(40, 7, 5, 1);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn class_counts_validates_labels() {
        let mut ds = synth_generate(2, 16, 0.0, 2).unwrap();
        ds.clouds[0].label = Some(9);
        assert!(ds.class_counts().is_err());
        ds.clouds[0].label = None;
        assert!(ds.class_counts().is_err());
    }
}
