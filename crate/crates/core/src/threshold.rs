//! Threshold-Clustering: robust center estimation by clipped averaging.
//!
//! Each round, every center `v_k` is replaced by the average of all `N`
//! points after clipping: a point within `τ_k` of `v_k` keeps its value, a
//! point outside is replaced by `v_k` itself. The step is therefore
//! `v_k ← v_k + (1/N) Σ_{‖z−v_k‖≤τ_k} (z − v_k)`, a convex combination of the
//! old center and the in-ball points whose length never exceeds `τ_k`.
//!
//! In-ball differences are accumulated in the canonical (lexicographic) order
//! of the points, so the result is bit-identical under any reordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::rng::RngStream;
use crate::vector::{sq_dist, Vector};

/// How the clipping radius `τ_{k,l}` is set each round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusPolicy {
    /// Constant radius. `f64::INFINITY` disables clipping.
    Fixed { tau: f64 },
    /// `τ = scale · √(δᵢ σ Δ)`.
    TheoryScaled {
        sigma: f64,
        delta: f64,
        delta_i: f64,
        scale: f64,
    },
    /// Nearest-rank `p`-th percentile of the point distances to the current center.
    Percentile { p: f64 },
}

impl RadiusPolicy {
    pub fn fixed(tau: f64) -> Self {
        RadiusPolicy::Fixed { tau }
    }

    pub fn unbounded() -> Self {
        RadiusPolicy::Fixed { tau: f64::INFINITY }
    }

    pub fn percentile(p: f64) -> Self {
        RadiusPolicy::Percentile { p }
    }

    pub fn theory(sigma: f64, delta: f64, delta_i: f64) -> Self {
        RadiusPolicy::TheoryScaled {
            sigma,
            delta,
            delta_i,
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            RadiusPolicy::Fixed { tau } if tau.is_nan() || tau < 0.0 => {
                bad(format!("fixed radius must be >= 0, got {tau}"))
            }
            RadiusPolicy::TheoryScaled {
                sigma,
                delta,
                delta_i,
                scale,
            } => {
                let tau = scale * (delta_i * sigma * delta).sqrt();
                if !(tau.is_finite() && tau >= 0.0) {
                    bad(format!(
                        "theory radius undefined for sigma={sigma}, delta={delta}, delta_i={delta_i}, scale={scale}"
                    ))
                } else {
                    Ok(())
                }
            }
            RadiusPolicy::Percentile { p } if !(p > 0.0 && p < 100.0) => {
                bad(format!("percentile must lie in (0, 100), got {p}"))
            }
            _ => Ok(()),
        }
    }

    /// Radius for a cluster currently centered at `center`.
    pub fn radius(&self, points: &[Vector], center: &Vector) -> f64 {
        match *self {
            RadiusPolicy::Fixed { tau } => tau,
            RadiusPolicy::TheoryScaled {
                sigma,
                delta,
                delta_i,
                scale,
            } => scale * (delta_i * sigma * delta).sqrt(),
            RadiusPolicy::Percentile { p } => {
                let mut scratch = Vec::with_capacity(points.len());
                percentile_in(points, center, p, &mut scratch)
            }
        }
    }
}

/// Cluster-center estimates and the radii used to produce them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterState {
    pub centers: Vec<Vector>,
    pub radii: Vec<f64>,
    pub round: usize,
}

impl CenterState {
    pub fn new(centers: Vec<Vector>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Empty("need at least one center"));
        }
        let k = centers.len();
        Ok(CenterState {
            centers,
            radii: vec![0.0; k],
            round: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

/// Result of a full run: final state plus the centers after every round
/// (`trajectory[0]` holds the initialization).
#[derive(Debug, Clone)]
pub struct ClusteringRun {
    pub state: CenterState,
    pub trajectory: Vec<Vec<Vector>>,
}

/// `z` if `‖z − v‖ ≤ τ`, else `v`.
pub fn clip_point(z: &Vector, v: &Vector, tau: f64) -> Vector {
    if inside(z, v, tau) {
        z.clone()
    } else {
        v.clone()
    }
}

#[inline]
fn inside(z: &Vector, v: &Vector, tau: f64) -> bool {
    tau == f64::INFINITY || sq_dist(z, v) <= tau * tau
}

/// One clipped-average step for a single center.
pub fn threshold_update(points: &[Vector], v_prev: &Vector, tau: f64) -> Result<Vector> {
    if points.is_empty() {
        return Err(Error::Empty("threshold update over no points"));
    }
    for p in points {
        p.check_dim(v_prev.dim())?;
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {tau}")));
    }
    let order = canonical_order(points);
    Ok(step(points, &order, v_prev, tau))
}

pub(crate) fn canonical_order(points: &[Vector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].canonical_cmp(&points[b]));
    order
}

fn step(points: &[Vector], order: &[usize], v: &Vector, tau: f64) -> Vector {
    let mut acc = Vector::zeros(v.dim());
    let mut any = false;
    for &i in order {
        let z = &points[i];
        if inside(z, v, tau) {
            any = true;
            for ((a, zj), vj) in acc.as_mut_slice().iter_mut().zip(z.iter()).zip(v.iter()) {
                *a += zj - vj;
            }
        }
    }
    let mut out = v.clone();
    if any {
        out.axpy(1.0 / points.len() as f64, &acc);
    }
    out
}

/// Nearest-rank percentile of `{‖z − center‖}`: the `⌈p·N/100⌉`-th smallest distance.
pub fn percentile_radius(points: &[Vector], center: &Vector, p: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Empty("percentile of no points"));
    }
    RadiusPolicy::Percentile { p }.validate()?;
    for z in points {
        z.check_dim(center.dim())?;
    }
    let mut scratch = Vec::with_capacity(points.len());
    Ok(percentile_in(points, center, p, &mut scratch))
}

fn percentile_in(points: &[Vector], center: &Vector, p: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(points.iter().map(|z| sq_dist(z, center)));
    let n = scratch.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    let (_, kth, _) = scratch.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    kth.sqrt()
}

/// Nearest center per point; ties go to the lowest index.
pub fn assign_clusters(points: &[Vector], centers: &[Vector]) -> Vec<ClusterId> {
    points.iter().map(|z| nearest_center(z, centers)).collect()
}

pub(crate) fn nearest_center(z: &Vector, centers: &[Vector]) -> ClusterId {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(z, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    ClusterId(best)
}

/// Runs `rounds` rounds of Threshold-Clustering from `inits`.
pub fn run_threshold_clustering(
    points: &[Vector],
    inits: &[Vector],
    rounds: usize,
    policy: &RadiusPolicy,
) -> Result<ClusteringRun> {
    let mut pts = points.to_vec();
    run_threshold_clustering_with(&mut pts, inits, rounds, policy, |_, _| {})
}

/// Like [`run_threshold_clustering`], but `adversary` may rewrite points before
/// every round given the current state (used to move Byzantine points).
pub fn run_threshold_clustering_with<F>(
    points: &mut [Vector],
    inits: &[Vector],
    rounds: usize,
    policy: &RadiusPolicy,
    mut adversary: F,
) -> Result<ClusteringRun>
where
    F: FnMut(&CenterState, &mut [Vector]),
{
    if points.is_empty() {
        return Err(Error::Empty("threshold clustering over no points"));
    }
    if rounds == 0 {
        return Err(Error::InvalidParameter("need at least one clustering round".into()));
    }
    policy.validate()?;
    let mut state = CenterState::new(inits.to_vec())?;
    let dim = state.centers[0].dim();
    for p in points.iter() {
        p.check_dim(dim)?;
    }
    for c in &state.centers {
        c.check_dim(dim)?;
    }
    let mut trajectory = Vec::with_capacity(rounds + 1);
    trajectory.push(state.centers.clone());
    let mut order = canonical_order(points);
    let mut scratch = Vec::with_capacity(points.len());
    for _ in 0..rounds {
        let before = points.to_vec();
        adversary(&state, points);
        if points.iter().zip(&before).any(|(a, b)| a != b) {
            order = canonical_order(points);
        }
        let mut next = Vec::with_capacity(state.k());
        for (k, v) in state.centers.iter().enumerate() {
            let tau = match policy {
                RadiusPolicy::Percentile { p } => percentile_in(points, v, *p, &mut scratch),
                other => other.radius(points, v),
            };
            state.radii[k] = tau;
            next.push(step(points, &order, v, tau));
        }
        state.centers = next;
        state.round += 1;
        trajectory.push(state.centers.clone());
    }
    Ok(ClusteringRun { state, trajectory })
}

/// Single-center clustering without trajectory bookkeeping. Returns the final
/// center and the last radius used.
pub(crate) fn cluster_one(
    points: &[Vector],
    init: &Vector,
    rounds: usize,
    policy: &RadiusPolicy,
    scratch: &mut Vec<f64>,
) -> (Vector, f64) {
    let order = canonical_order(points);
    let mut v = init.clone();
    let mut tau = 0.0;
    for _ in 0..rounds {
        tau = match policy {
            RadiusPolicy::Percentile { p } => percentile_in(points, &v, *p, scratch),
            other => other.radius(points, &v),
        };
        v = step(points, &order, &v, tau);
    }
    (v, tau)
}

/// Deterministic farthest-point initialization starting from `points[first]`:
/// each further center is the point farthest from those already chosen
/// (ties to the lowest index).
pub fn farthest_point_init(points: &[Vector], k: usize, first: usize) -> Result<Vec<Vector>> {
    if points.is_empty() || k == 0 {
        return Err(Error::Empty("farthest-point init needs points and k >= 1"));
    }
    if first >= points.len() {
        return Err(Error::InvalidParameter(format!("first index {first} out of range")));
    }
    let mut chosen = vec![points[first].clone()];
    let mut dist: Vec<f64> = points.iter().map(|z| sq_dist(z, &points[first])).collect();
    while chosen.len() < k {
        let mut best = 0;
        for (i, &d) in dist.iter().enumerate() {
            if d > dist[best] {
                best = i;
            }
        }
        let c = points[best].clone();
        for (d, z) in dist.iter_mut().zip(points) {
            *d = d.min(sq_dist(z, &c));
        }
        chosen.push(c);
    }
    Ok(chosen)
}

/// `k` distinct points chosen uniformly at random.
pub fn random_init(points: &[Vector], k: usize, rng: &mut RngStream) -> Result<Vec<Vector>> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot pick {k} distinct initial centers from {} points",
            points.len()
        )));
    }
    Ok(rng
        .sample_indices(points.len(), k)
        .into_iter()
        .map(|i| points[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::mean;
    use proptest::prelude::*;

    fn s(x: f64) -> Vector {
        Vector::scalar(x)
    }

    #[test]
    fn clip_examples() {
        let v = Vector::from([0.0, 0.0]);
        assert_eq!(clip_point(&v, &v, 0.0), v);
        assert_eq!(clip_point(&Vector::from([3.0, 0.0]), &v, 3.0), Vector::from([3.0, 0.0]));
        assert_eq!(clip_point(&Vector::from([5.0, 0.0]), &v, 3.0), v);
    }

    #[test]
    fn update_examples() {
        let pts = vec![s(0.0), s(1.0), s(10.0)];
        let v = threshold_update(&pts, &s(0.0), 2.0).unwrap();
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);

        // everything inside: plain mean
        let v = threshold_update(&pts, &s(0.0), 100.0).unwrap();
        assert!((v[0] - mean(&pts).unwrap()[0]).abs() < 1e-12);

        // nothing inside: unchanged
        let v = threshold_update(&pts, &s(-50.0), 1.0).unwrap();
        assert_eq!(v, s(-50.0));
    }

    #[test]
    fn update_errors() {
        assert!(threshold_update(&[], &s(0.0), 1.0).is_err());
        assert!(threshold_update(&[Vector::zeros(2)], &s(0.0), 1.0).is_err());
        assert!(threshold_update(&[s(1.0)], &s(0.0), -1.0).is_err());
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_radius(&[s(7.0)], &s(0.0), 37.0).unwrap(), 7.0);
        let pts: Vec<Vector> = (1..=10).map(|i| s(i as f64)).collect();
        assert_eq!(percentile_radius(&pts, &s(0.0), 20.0).unwrap(), 2.0);
        assert_eq!(percentile_radius(&[s(3.0), s(3.0)], &s(3.0), 50.0).unwrap(), 0.0);
        assert!(percentile_radius(&pts, &s(0.0), 0.0).is_err());
        assert!(percentile_radius(&pts, &s(0.0), 100.0).is_err());
    }

    #[test]
    fn assign_examples() {
        let centers = vec![s(0.0), s(2.0), s(5.0)];
        assert_eq!(assign_clusters(&[s(5.0)], &centers), vec![ClusterId(2)]);
        assert_eq!(assign_clusters(&[s(1.0)], &centers), vec![ClusterId(0)]);
    }

    #[test]
    fn single_round_unbounded_is_mean() {
        let pts = vec![Vector::from([1.0, 2.0]), Vector::from([3.0, -1.0]), Vector::from([0.5, 0.5])];
        let run = run_threshold_clustering(&pts, &[pts[0].clone()], 1, &RadiusPolicy::unbounded()).unwrap();
        let m = mean(&pts).unwrap();
        assert!((&run.state.centers[0] - &m).norm() < 1e-12);
        assert_eq!(run.trajectory.len(), 2);
    }

    #[test]
    fn theory_radius_value() {
        let p = RadiusPolicy::theory(1.0, 20.0, 0.5);
        assert!((p.radius(&[], &s(0.0)) - 10.0f64.sqrt()).abs() < 1e-12);
        let bad = RadiusPolicy::TheoryScaled { sigma: -1.0, delta: 1.0, delta_i: 1.0, scale: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn farthest_point_picks_extremes() {
        let pts = vec![s(1.0), s(1.0), s(-1.0)];
        let c = farthest_point_init(&pts, 2, 0).unwrap();
        assert_eq!(c, vec![s(1.0), s(-1.0)]);
    }

    #[test]
    fn run_validates_inputs() {
        let pts = vec![s(1.0)];
        assert!(run_threshold_clustering(&pts, &[], 1, &RadiusPolicy::unbounded()).is_err());
        assert!(run_threshold_clustering(&pts, &[s(0.0)], 0, &RadiusPolicy::unbounded()).is_err());
        assert!(run_threshold_clustering(&[], &[s(0.0)], 1, &RadiusPolicy::unbounded()).is_err());
    }

    fn pts_strategy() -> impl Strategy<Value = Vec<Vector>> {
        prop::collection::vec(
            prop::collection::vec(-50.0f64..50.0, 3).prop_map(Vector::from),
            1..30,
        )
    }

    proptest! {
        #[test]
        fn step_is_bounded_by_radius(pts in pts_strategy(), v in prop::collection::vec(-50.0f64..50.0, 3), tau in 0.0f64..60.0) {
            let v = Vector::from(v);
            let next = threshold_update(&pts, &v, tau).unwrap();
            prop_assert!((&next - &v).norm() <= tau * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn update_is_convex_combination(pts in pts_strategy(), v in prop::collection::vec(-50.0f64..50.0, 3), tau in 0.0f64..60.0) {
            let v = Vector::from(v);
            let next = threshold_update(&pts, &v, tau).unwrap();
            let n = pts.len() as f64;
            let inside: Vec<&Vector> = pts.iter().filter(|z| (*z - &v).norm() <= tau).collect();
            // explicit weights: (1 − c/N) on v, 1/N on each in-ball point
            let w_v = 1.0 - inside.len() as f64 / n;
            prop_assert!((0.0..=1.0).contains(&w_v));
            let mut combo = v.scaled(w_v);
            for z in &inside {
                combo.axpy(1.0 / n, z);
            }
            prop_assert!((&combo - &next).norm() <= 1e-9 * (1.0 + v.norm()));
        }

        #[test]
        fn update_is_permutation_invariant(pts in pts_strategy(), tau in 0.0f64..60.0, seed in any::<u64>()) {
            let v = pts[0].clone();
            let a = threshold_update(&pts, &v, tau).unwrap();
            let mut shuffled = pts.clone();
            let mut rng = RngStream::root(seed, crate::rng::Purpose::Init);
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i + 1);
                shuffled.swap(i, j);
            }
            prop_assert_eq!(threshold_update(&shuffled, &v, tau).unwrap(), a);
        }

        #[test]
        fn fixpoint_is_stable(pts in pts_strategy(), tau in 1.0f64..30.0) {
            // Iterate to convergence; at the fixpoint the in-ball mean equals v.
            let mut v = pts[0].clone();
            for _ in 0..2000 {
                v = threshold_update(&pts, &v, tau).unwrap();
            }
            // only meaningful when no point sits within 1e-6 of the boundary
            let margin_ok = pts.iter().all(|z| ((z - &v).norm() - tau).abs() > 1e-6);
            if margin_ok {
                let again = threshold_update(&pts, &v, tau).unwrap();
                prop_assert!((&again - &v).norm() <= 1e-12 * (1.0 + v.norm()));
            }
        }
    }
}
