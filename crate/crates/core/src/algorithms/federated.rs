//! Federated-Clustering: every client clusters all peers' gradients evaluated
//! at its own parameters, keeping the cluster that contains its own gradient.

use rayon::prelude::*;

use super::{average, Run, TrainerConfig};
use crate::attacks::{place_edge_attackers, EdgeAttacker};
use crate::error::Result;
use crate::problems::ProblemInstance;
use crate::threshold::{cluster_one, run_threshold_clustering_with};
use crate::vector::{sq_dist, Vector};

/// Outcome of one client's step.
struct Step {
    center: Vector,
    /// Peers whose gradient ended inside the client's final ball.
    neighbours: Vec<usize>,
}

impl Run<'_> {
    fn fc_step(&self, i: usize, params: &[Vector], round: usize, want_neighbours: bool) -> Result<Step> {
        let x = &params[i];
        let n = self.n();
        let index = self.key(i);
        let honest: Vec<Vector> = (0..n).map(|j| self.honest_grad(j, x, round, index)).collect();
        let own = honest[i].clone();
        let mut points = Vec::with_capacity(n);
        let edge = self.edge_attack();
        for (j, g) in honest.iter().enumerate() {
            if self.flags[j] && edge.is_none() {
                points.push(crate::attacks::apply_attack(&self.cfg.byzantine.kind, g, None)?);
            } else {
                points.push(g.clone());
            }
        }
        let policy = &self.cfg.radius;
        let (center, tau) = match edge {
            None => {
                let mut scratch = Vec::new();
                cluster_one(&points, &own, self.cfg.cluster_rounds, policy, &mut scratch)
            }
            Some(margin) => {
                // attackers push the center away from the honest mean of i's true cluster
                let label = self.problem.true_labels[i];
                let mates: Vec<&Vector> = (0..n)
                    .filter(|&j| !self.flags[j] && self.problem.true_labels[j] == label)
                    .map(|j| &honest[j])
                    .collect();
                let anchor = average(&mates).ok();
                let attackers: Vec<EdgeAttacker> = (0..n)
                    .filter(|&j| self.flags[j])
                    .map(|j| EdgeAttacker { slot: j, target: 0, anchor: anchor.clone() })
                    .collect();
                let run = run_threshold_clustering_with(
                    &mut points,
                    &[own],
                    self.cfg.cluster_rounds,
                    policy,
                    |state, pts| place_edge_attackers(state, pts, &attackers, margin, policy),
                )?;
                (run.state.centers[0].clone(), run.state.radii[0])
            }
        };
        let neighbours = if want_neighbours {
            (0..n)
                .filter(|&j| tau == f64::INFINITY || sq_dist(&points[j], &center) <= tau * tau)
                .collect()
        } else {
            Vec::new()
        };
        Ok(Step { center, neighbours })
    }
}

/// Runs Federated-Clustering for `cfg.rounds` rounds.
///
/// In round `t`, client `i` collects `g_j(x_i)` from every client `j`,
/// runs `cfg.cluster_rounds` Threshold-Clustering iterations with one center
/// started at its own gradient, and steps `x_i ← x_i − η v_i`. The record's
/// `partition` holds the connected components of the final-round
/// "inside my ball" relation.
pub fn run_federated_clustering(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<crate::algorithms::RunRecord> {
    let mut run = Run::start("fc", problem, cfg)?;
    let n = run.n();
    let mut params = problem.initial_params.clone();
    run.record_round(0, &params, None);
    let mut done = 0;
    let mut neighbours = Vec::new();
    for t in 1..=cfg.rounds {
        let last = t == cfg.rounds;
        let steps: Vec<Step> = (0..n)
            .into_par_iter()
            .map(|i| run.fc_step(i, &params, t, last))
            .collect::<Result<_>>()?;
        for (x, s) in params.iter_mut().zip(&steps) {
            x.axpy(-cfg.eta, &s.center);
        }
        run.record.messages.push(2 * (n * (n - 1)) as u64);
        done = t;
        if run.check_divergence(t, &params) {
            break;
        }
        run.record_round(t, &params, None);
        if last {
            neighbours = steps.into_iter().map(|s| s.neighbours).collect();
        }
    }
    if !neighbours.is_empty() {
        run.record.partition = Some(components(&neighbours));
    }
    Ok(run.finish(params, None, done))
}

/// Connected components of the undirected graph with edges `i – j` for `j ∈ adj[i]`.
fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    for (i, list) in adj.iter().enumerate() {
        for &j in list {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_of[r] == usize::MAX {
            root_of[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_of[r]].push(i);
    }
    groups
}
