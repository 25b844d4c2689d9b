//! Server-side clustering of client messages: Momentum-Clustering and its
//! memoryless special case, Myopic-Clustering.

use rayon::prelude::*;

use super::{average, random_clients, Run, RunRecord, TrainerConfig};
use crate::attacks::{apply_attack, place_edge_attackers, EdgeAttacker};
use crate::error::Result;
use crate::ids::ClusterId;
use crate::problems::ProblemInstance;
use crate::rng::{Purpose, RngStream};
use crate::threshold::{
    assign_clusters, farthest_point_init, nearest_center, run_threshold_clustering_with,
};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CenterInit {
    /// Warm start from the previous round; round 1 uses `k` random clients' messages.
    WarmStart,
    /// Farthest-point traversal of the current messages, every round.
    Fresh,
}

fn server_clustering(
    name: &str,
    problem: &ProblemInstance,
    cfg: &TrainerConfig,
    alpha: f64,
    init: CenterInit,
) -> Result<RunRecord> {
    let mut run = Run::start(name, problem, cfg)?;
    let n = run.n();
    let k = cfg.clusters(problem)?;
    let mut params = problem.initial_params.clone();
    let mut momentum = vec![Vector::zeros(problem.dim()); n];
    let mut centers: Option<Vec<Vector>> = None;
    // the client with the smallest key seeds farthest-point init
    let first = (0..n).min_by_key(|&i| run.key(i)).unwrap();
    run.record_round(0, &params, None);
    let mut assignment: Vec<ClusterId> = Vec::new();
    let mut done = 0;
    for t in 1..=cfg.rounds {
        let grads: Vec<Vector> = (0..n)
            .into_par_iter()
            .map(|i| run.honest_grad(i, &params[i], t, run.key(i)))
            .collect();
        for (m, g) in momentum.iter_mut().zip(&grads) {
            if alpha == 1.0 {
                *m = g.clone();
            } else {
                m.scale(1.0 - alpha);
                m.axpy(alpha, g);
            }
        }
        let edge = run.edge_attack();
        let mut points: Vec<Vector> = Vec::with_capacity(n);
        for (i, m) in momentum.iter().enumerate() {
            if run.flags[i] && edge.is_none() {
                points.push(apply_attack(&cfg.byzantine.kind, m, None)?);
            } else {
                points.push(m.clone());
            }
        }
        let inits = match (init, centers.take()) {
            (CenterInit::WarmStart, Some(prev)) => prev,
            (CenterInit::WarmStart, None) => {
                let mut rng = RngStream::root(cfg.seed, Purpose::Init);
                random_clients(problem, k, &mut rng)
                    .into_iter()
                    .map(|i| points[i].clone())
                    .collect()
            }
            (CenterInit::Fresh, _) => farthest_point_init(&points, k, first)?,
        };
        let clustering = match edge {
            None => run_threshold_clustering_with(&mut points, &inits, cfg.cluster_rounds, &cfg.radius, |_, _| {})?,
            Some(margin) => {
                let attackers = edge_attackers(&run, &momentum, &inits);
                run_threshold_clustering_with(&mut points, &inits, cfg.cluster_rounds, &cfg.radius, |s, pts| {
                    place_edge_attackers(s, pts, &attackers, margin, &cfg.radius)
                })?
            }
        };
        let state = clustering.state;
        assignment = assign_clusters(&momentum, &state.centers);
        for (x, a) in params.iter_mut().zip(&assignment) {
            x.axpy(-cfg.eta, &state.centers[a.0]);
        }
        run.record.messages.push(2 * n as u64);
        run.record.server_states.push(state.centers.clone());
        centers = Some(state.centers);
        done = t;
        if run.check_divergence(t, &params) {
            break;
        }
        run.record_round(t, &params, Some(&assignment));
    }
    let assignment = if assignment.is_empty() { None } else { Some(assignment) };
    Ok(run.finish(params, assignment, done))
}

/// Each attacker targets the center nearest its honest message and pushes it
/// away from the honest mean of its own true cluster.
fn edge_attackers(run: &Run<'_>, honest: &[Vector], centers: &[Vector]) -> Vec<EdgeAttacker> {
    let labels = &run.problem.true_labels;
    (0..honest.len())
        .filter(|&j| run.flags[j])
        .map(|j| {
            let mates: Vec<&Vector> = (0..honest.len())
                .filter(|&i| !run.flags[i] && labels[i] == labels[j])
                .map(|i| &honest[i])
                .collect();
            EdgeAttacker {
                slot: j,
                target: nearest_center(&honest[j], centers).0,
                anchor: average(&mates).ok(),
            }
        })
        .collect()
}

/// Momentum-Clustering: clients send `m_i ← α g_i(x_i) + (1−α) m_i`, the
/// server clusters the momentums into `k` groups warm-started from the previous
/// round, and each client steps along the center nearest its momentum.
pub fn run_momentum_clustering(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    server_clustering("momentum", problem, cfg, cfg.alpha, CenterInit::WarmStart)
}

/// Myopic-Clustering: clients send the current gradient; the server clusters
/// the gradients from scratch each round and clients step along their center.
pub fn run_myopic(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    server_clustering("myopic", problem, cfg, 1.0, CenterInit::Fresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::run_fedavg;
    use crate::problems::{make_example1, make_noisy_quadratics};
    use crate::threshold::RadiusPolicy;

    #[test]
    fn myopic_gets_stuck_on_example1() {
        let p = make_example1(0.5).unwrap();
        let cfg = TrainerConfig { eta: 0.5, rounds: 200, radius: RadiusPolicy::percentile(20.0), ..Default::default() };
        let rec = run_myopic(&p, &cfg).unwrap();
        let x = &rec.final_params;
        assert!(x[0][0].abs() <= 1e-3);
        assert_eq!(x[1][0], 1.0);
        assert_eq!(x[2][0], 2.0);
        // every gradient is (numerically) zero, so all clients share one center
        let last = rec.server_states.last().unwrap();
        let a = rec.final_assignment.unwrap();
        assert!(a.iter().all(|c| last[c.0].norm() < 1e-12));
    }

    #[test]
    fn alpha_one_is_gradient_clustering() {
        let p = make_noisy_quadratics(&[Vector::scalar(-2.0), Vector::scalar(2.0)], 3, 1.0, 0.5).unwrap();
        let base = TrainerConfig {
            eta: 0.2,
            rounds: 10,
            radius: RadiusPolicy::fixed(1.0),
            batch_size: Some(1),
            alpha: 1.0,
            ..Default::default()
        };
        let a = run_momentum_clustering(&p, &base).unwrap();
        assert_eq!(a.rounds_run, 10);
        assert!(a.diverged.is_none());
    }

    #[test]
    fn identical_clients_single_cluster_is_momentum_fedavg() {
        let p = make_noisy_quadratics(&[Vector::from([1.0, 1.0])], 4, 2.0, 0.0).unwrap();
        let cfg = TrainerConfig {
            eta: 0.1,
            rounds: 25,
            alpha: 0.3,
            k: Some(1),
            radius: RadiusPolicy::unbounded(),
            ..Default::default()
        };
        let rec = run_momentum_clustering(&p, &cfg).unwrap();
        let mut x = p.initial_params[0].clone();
        let mut m = Vector::zeros(2);
        for _ in 0..25 {
            let g = p.clients[0].grad(&x);
            m.scale(0.7);
            m.axpy(0.3, &g);
            x.axpy(-0.1, &m);
        }
        for xi in &rec.final_params {
            assert_eq!(xi, &x);
        }
    }

    #[test]
    fn identical_clients_stay_identical() {
        let p = make_noisy_quadratics(&[Vector::from([0.5, -1.0])], 5, 1.0, 0.0).unwrap();
        let cfg = TrainerConfig { eta: 0.3, rounds: 20, k: Some(1), ..Default::default() };
        let rec = run_myopic(&p, &cfg).unwrap();
        for t in 0..=20 {
            let xs: Vec<f64> = rec.rows.iter().filter(|r| r.round == t).map(|r| r.grad_norm_sq).collect();
            assert!(xs.windows(2).all(|w| w[0] == w[1]));
        }
        let fed = run_fedavg(&p, &TrainerConfig { eta: 0.3, rounds: 20, ..Default::default() }).unwrap();
        assert!((&rec.final_params[0] - &fed.final_params[0]).norm() < 1e-12);
    }
}
