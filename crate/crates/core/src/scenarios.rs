//! Monte-Carlo drivers for the clustering studies: center error on two
//! Gaussian blobs (optionally with edge-of-ball attackers), estimation error
//! on the two-point mixture, and error-vs-rounds curves on many blobs.

use crate::analysis::center_error;
use crate::attacks::{place_edge_attackers, AttackKind, ByzantineSchedule, EdgeAttacker};
use crate::error::Result;
use crate::ids::ClusterId;
use crate::problems::{make_blobs, make_lower_bound_mixture, random_centers, MixtureComponent};
use crate::rng::{Purpose, RngStream, StreamId};
use crate::threshold::{
    assign_clusters, farthest_point_init, run_threshold_clustering, run_threshold_clustering_with,
    RadiusPolicy,
};
use crate::vector::{mean, Vector};

/// Two blobs at `±gap/2` along the first axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBlobSetup {
    pub dim: usize,
    /// Per-coordinate standard deviation.
    pub sigma: f64,
    pub gap: f64,
    pub per_cluster: usize,
    pub rounds: usize,
    /// Fraction of points replaced by edge-of-ball attackers.
    pub beta: f64,
    pub margin: f64,
}

impl Default for TwoBlobSetup {
    fn default() -> Self {
        TwoBlobSetup {
            dim: 10,
            sigma: 1.0,
            gap: 20.0,
            per_cluster: 30,
            rounds: 30,
            beta: 0.0,
            margin: 0.05,
        }
    }
}

impl TwoBlobSetup {
    pub fn centers(&self) -> Vec<Vector> {
        let mut a = Vector::zeros(self.dim);
        let mut b = Vector::zeros(self.dim);
        a[0] = -self.gap / 2.0;
        b[0] = self.gap / 2.0;
        vec![a, b]
    }

    /// `τ = √(δ σ Δ)` with `σ` the root total variance and `δ = ½`.
    pub fn policy(&self) -> RadiusPolicy {
        RadiusPolicy::theory(self.sigma * (self.dim as f64).sqrt(), self.gap, 0.5)
    }
}

/// Mean squared center error of one trial, next to the error of the
/// known-label sample mean of the honest points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobTrial {
    pub clustered: f64,
    pub oracle: f64,
}

fn seeded_first(n: usize, seed: u64) -> usize {
    RngStream::root(seed, Purpose::Init).below(n)
}

pub fn two_blob_trial(setup: &TwoBlobSetup, seed: u64) -> Result<BlobTrial> {
    let centers = setup.centers();
    let blobs = make_blobs(2, setup.per_cluster, setup.sigma, &centers, seed)?;
    let n = blobs.points.len();
    let policy = setup.policy();
    let inits = farthest_point_init(&blobs.points, 2, seeded_first(n, seed))?;
    let kind = AttackKind::EdgeOfBall { margin: setup.margin };
    let flags = ByzantineSchedule::new(setup.beta, kind).flags(n, seed);

    let honest_means: Vec<Vector> = (0..2)
        .map(|k| {
            let pts: Vec<Vector> = (0..n)
                .filter(|&i| !flags[i] && blobs.labels[i] == ClusterId(k))
                .map(|i| blobs.points[i].clone())
                .collect();
            mean(&pts)
        })
        .collect::<Result<_>>()?;
    let oracle = centers
        .iter()
        .zip(&honest_means)
        .map(|(c, m)| (c - m).norm_sq())
        .sum::<f64>()
        / 2.0;

    let run = if flags.iter().any(|&b| b) {
        let original = blobs.points.clone();
        let mut points = blobs.points.clone();
        run_threshold_clustering_with(&mut points, &inits, setup.rounds, &policy, |state, pts| {
            let attackers: Vec<EdgeAttacker> = (0..n)
                .filter(|&i| flags[i])
                .map(|i| EdgeAttacker {
                    slot: i,
                    target: assign_clusters(std::slice::from_ref(&original[i]), &state.centers)[0].0,
                    anchor: Some(honest_means[blobs.labels[i].0].clone()),
                })
                .collect();
            place_edge_attackers(state, pts, &attackers, setup.margin, &policy);
        })?
    } else {
        run_threshold_clustering(&blobs.points, &inits, setup.rounds, &policy)?
    };
    let errs = center_error(&run.state, &centers)?;
    Ok(BlobTrial {
        clustered: errs.iter().sum::<f64>() / errs.len() as f64,
        oracle,
    })
}

/// Squared error of the center matched to the first component's mean when
/// clustering `per_component` samples from each side of the two-point
/// mixture into two clusters.
pub fn mixture_trial(sigma: f64, gap: f64, per_component: usize, rounds: usize, seed: u64) -> Result<f64> {
    let mix = make_lower_bound_mixture(sigma, gap)?;
    let mut points = Vec::with_capacity(2 * per_component);
    for (c, comp) in [MixtureComponent::First, MixtureComponent::Second].into_iter().enumerate() {
        for j in 0..per_component {
            let id = StreamId::new((c * per_component + j) as u64, 0, Purpose::Data);
            points.push(Vector::scalar(mix.sample(comp, &mut RngStream::new(seed, id))));
        }
    }
    let policy = RadiusPolicy::theory(sigma, gap, 0.5);
    let inits = farthest_point_init(&points, 2, seeded_first(points.len(), seed))?;
    let run = run_threshold_clustering(&points, &inits, rounds, &policy)?;
    let truth = [
        Vector::scalar(mix.mean(MixtureComponent::First)),
        Vector::scalar(mix.mean(MixtureComponent::Second)),
    ];
    Ok(center_error(&run.state, &truth)?[0])
}

/// Many-blob setup for the error-vs-rounds study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElbowSetup {
    pub k: usize,
    pub per_cluster: usize,
    pub dim: usize,
    /// Centers are drawn from `[-half_width, half_width]^dim`.
    pub half_width: f64,
    pub percentile: f64,
    pub rounds: usize,
    pub repeats: usize,
    /// Seed of the shared centers.
    pub center_seed: u64,
}

impl Default for ElbowSetup {
    fn default() -> Self {
        ElbowSetup {
            k: 10,
            per_cluster: 9,
            dim: 10,
            half_width: 10.0,
            percentile: 10.0,
            rounds: 25,
            repeats: 10,
            center_seed: 0,
        }
    }
}

/// Mean distance of each center to its true center after `l = 0..=rounds`
/// rounds, averaged over repeats. All repeats and all `sigma` share the same
/// true centers; each repeat draws fresh points and starts center `k` at a
/// random sample of cluster `k`.
pub fn elbow_curve(setup: &ElbowSetup, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    let centers = random_centers(setup.k, setup.dim, setup.half_width, setup.center_seed);
    let policy = RadiusPolicy::percentile(setup.percentile);
    let mut curve = vec![0.0; setup.rounds + 1];
    for r in 0..setup.repeats {
        let data_seed = seed.wrapping_mul(1_000_003).wrapping_add(r as u64);
        let blobs = make_blobs(setup.k, setup.per_cluster, sigma, &centers, data_seed)?;
        let mut rng = RngStream::root(data_seed, Purpose::Init);
        let inits: Vec<Vector> = (0..setup.k)
            .map(|k| blobs.points[k * setup.per_cluster + rng.below(setup.per_cluster)].clone())
            .collect();
        let run = run_threshold_clustering(&blobs.points, &inits, setup.rounds, &policy)?;
        for (l, cs) in run.trajectory.iter().enumerate() {
            let dist: f64 = cs.iter().zip(&centers).map(|(v, c)| (v - c).norm()).sum();
            curve[l] += dist / setup.k as f64 / setup.repeats as f64;
        }
    }
    Ok(curve)
}
