//! Isotropic Gaussian blobs around fixed centers.

use super::TheoryParams;
use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::vector::{sq_dist, Vector};

#[derive(Debug, Clone)]
pub struct Blobs {
    pub points: Vec<Vector>,
    pub labels: Vec<ClusterId>,
    pub centers: Vec<Vector>,
    /// `sigma` is the root total variance `σ_coord·√d`; `delta` the smallest
    /// center separation.
    pub params: TheoryParams,
}

/// Centers drawn uniformly from the box `[-half_width, half_width]^d`.
pub fn random_centers(k: usize, d: usize, half_width: f64, seed: u64) -> Vec<Vector> {
    let mut rng = RngStream::root(seed, Purpose::Custom(0xB10B));
    (0..k)
        .map(|_| Vector::new((0..d).map(|_| half_width * (2.0 * rng.uniform() - 1.0)).collect()))
        .collect()
}

/// Smallest pairwise distance between centers (infinite for a single center).
pub fn min_separation(centers: &[Vector]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            best = best.min(sq_dist(&centers[i], &centers[j]).sqrt());
        }
    }
    best
}

/// `per_cluster` points from `N(center_k, σ²I)` for each of the `k` centers,
/// cluster-major. `sigma` is the per-coordinate standard deviation.
pub fn make_blobs(
    k: usize,
    per_cluster: usize,
    sigma: f64,
    centers: &[Vector],
    seed: u64,
) -> Result<Blobs> {
    if k == 0 || per_cluster == 0 {
        return Err(Error::InvalidParameter("blobs need k >= 1 and per_cluster >= 1".into()));
    }
    if centers.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{} centers for {k} clusters",
            centers.len()
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let d = centers[0].dim();
    for c in centers {
        c.check_dim(d)?;
    }
    let mut points = Vec::with_capacity(k * per_cluster);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for (c, center) in centers.iter().enumerate() {
        for j in 0..per_cluster {
            let idx = (c * per_cluster + j) as u64;
            let mut rng = RngStream::new(seed, StreamId::new(idx, 0, Purpose::Data));
            let mut p = center.clone();
            if sigma > 0.0 {
                p.axpy(1.0, &rng.normal_vector(d, sigma));
            }
            points.push(p);
            labels.push(ClusterId(c));
        }
    }
    let sep = min_separation(centers);
    Ok(Blobs {
        points,
        labels,
        centers: centers.to_vec(),
        params: TheoryParams {
            sigma: sigma * (d as f64).sqrt(),
            delta: if sep.is_finite() { sep } else { 0.0 },
            delta_i: 1.0 / k as f64,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::mean;

    #[test]
    fn zero_sigma_is_degenerate() {
        let centers = vec![Vector::from([1.0, 2.0]), Vector::from([-3.0, 0.0])];
        let b = make_blobs(2, 5, 0.0, &centers, 1).unwrap();
        for (p, l) in b.points.iter().zip(&b.labels) {
            assert_eq!(p, &centers[l.0]);
        }
    }

    #[test]
    fn cluster_mean_near_center() {
        let centers = vec![Vector::from([4.0, -1.0])];
        let b = make_blobs(1, 10_000, 1.0, &centers, 3).unwrap();
        let m = mean(&b.points).unwrap();
        // 5σ/√n = 0.05
        assert!((&m - &centers[0]).iter().all(|e| e.abs() < 0.05), "{m:?}");
    }

    #[test]
    fn reference_configuration_shapes() {
        let centers = random_centers(10, 10, 10.0, 0);
        for sigma in [0.5, 1.0, 2.0, 4.0] {
            let b = make_blobs(10, 9, sigma, &centers, 1).unwrap();
            assert_eq!(b.points.len(), 90);
            assert!(b.points.iter().all(|p| p.dim() == 10));
        }
    }

    #[test]
    fn center_count_must_match() {
        assert!(make_blobs(3, 2, 1.0, &[Vector::zeros(2)], 0).is_err());
    }
}
