//! Clustered-FL: recursive bipartitioning by gradients at the FedAvg optimum.
//!
//! A group is trained with FedAvg until its mean gradient is small; each
//! member then reports one stochastic gradient there, and the group is split
//! in two by 2-means on those gradients. Splitting stops when the reported
//! gradients are all within `cfg.split_eps` of each other, when a group has a
//! single member, or when the number of groups reaches `k`.

use std::collections::VecDeque;

use super::{average, Run, RunRecord, TrainerConfig};
use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::problems::ProblemInstance;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::vector::{sq_dist, Vector};

const PROBE_TAG: u64 = 0xC1F1;
/// Relative tolerance under which two distances count as tied in 2-means.
const TIE_TOL: f64 = 1e-9;
const LLOYD_MAX_ITERS: usize = 100;

impl Run<'_> {
    /// FedAvg on `members` from `start`; returns the model and rounds used.
    fn fedavg_subset(&self, members: &[usize], start: &Vector, node: u64) -> Result<(Vector, usize)> {
        let mut x = start.clone();
        for r in 1..=self.cfg.fedavg_max_rounds {
            let grads = members
                .iter()
                .map(|&i| self.message(i, &x, r, node))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Vector> = grads.iter().collect();
            x.axpy(-self.cfg.eta, &average(&refs)?);
            if !x.is_finite() {
                return Err(Error::Diverged { round: r, client: members[0] });
            }
            let exact: Vec<Vector> = members.iter().map(|&i| self.problem.clients[i].grad(&x)).collect();
            let refs: Vec<&Vector> = exact.iter().collect();
            if average(&refs)?.norm() <= self.cfg.fedavg_tol {
                return Ok((x, r));
            }
        }
        Err(Error::NoConvergence(format!(
            "FedAvg on {} clients did not reach gradient norm {} in {} rounds",
            members.len(),
            self.cfg.fedavg_tol,
            self.cfg.fedavg_max_rounds
        )))
    }

    fn probe(&self, client: usize, x: &Vector, node: u64) -> Vector {
        let id = StreamId::new(self.key(client), 0, Purpose::Custom(PROBE_TAG)).with_index(node);
        let mut rng = RngStream::new(self.cfg.seed, id);
        self.problem.clients[client].stoch_grad(x, self.cfg.probe_batch, &mut rng)
    }
}

/// 2-means seeded with the farthest pair. Returns the two sides as index
/// lists into `points`, or `None` if one side would be empty.
pub(crate) fn bipartition(points: &[Vector]) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let (mut a, mut b, mut far) = (0, 1, -1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&points[i], &points[j]);
            if d > far {
                (a, b, far) = (i, j, d);
            }
        }
    }
    let mut centers = [points[a].clone(), points[b].clone()];
    let mut side = vec![0u8; n];
    for _ in 0..LLOYD_MAX_ITERS {
        let next: Vec<u8> = points
            .iter()
            .map(|z| {
                let (d0, d1) = (sq_dist(z, &centers[0]).sqrt(), sq_dist(z, &centers[1]).sqrt());
                if d1 < d0 && (d0 - d1) > TIE_TOL * d0.max(d1) {
                    1
                } else {
                    0
                }
            })
            .collect();
        let stable = next == side;
        side = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vector> = (0..n).filter(|&i| side[i] as usize == c).map(|i| &points[i]).collect();
            if let Ok(m) = average(&members) {
                *center = m;
            }
        }
        if stable {
            break;
        }
    }
    let left: Vec<usize> = (0..n).filter(|&i| side[i] == 0).collect();
    let right: Vec<usize> = (0..n).filter(|&i| side[i] == 1).collect();
    if left.is_empty() || right.is_empty() {
        None
    } else {
        Some((left, right))
    }
}

fn max_pairwise(points: &[Vector]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            m = m.max(sq_dist(&points[i], &points[j]));
        }
    }
    m.sqrt()
}

/// Runs Clustered-FL. The record's `partition` lists the final groups (each
/// sorted, ordered by smallest member) and every client's parameters are its
/// group's FedAvg model. `rounds_run` counts all FedAvg rounds spent.
pub fn run_clustered_fl(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    let mut run = Run::start("cfl", problem, cfg)?;
    run.forbid_edge_attack()?;
    let n = run.n();
    let max_groups = cfg.clusters(problem)?;
    run.record_round(0, &problem.initial_params, None);

    let mut pending: VecDeque<(Vec<usize>, Vector, u64)> = VecDeque::new();
    pending.push_back(((0..n).collect(), problem.initial_params[0].clone(), 0));
    let mut finished: Vec<(Vec<usize>, Vector)> = Vec::new();
    let mut next_node = 1u64;
    let mut total_rounds = 0;
    while let Some((members, start, node)) = pending.pop_front() {
        let (x, used) = run.fedavg_subset(&members, &start, node)?;
        total_rounds += used;
        run.record.messages.push(2 * (members.len() * used) as u64);
        let room = finished.len() + pending.len() + 1 < max_groups;
        let split = if room && members.len() >= 2 {
            let probes: Vec<Vector> = members.iter().map(|&i| run.probe(i, &x, node)).collect();
            if max_pairwise(&probes) < cfg.split_eps {
                None
            } else {
                bipartition(&probes)
            }
        } else {
            None
        };
        match split {
            Some((l, r)) => {
                for side in [l, r] {
                    let part: Vec<usize> = side.into_iter().map(|s| members[s]).collect();
                    pending.push_back((part, x.clone(), next_node));
                    next_node += 1;
                }
            }
            None => finished.push((members, x)),
        }
    }
    finished.sort_by_key(|(m, _)| m[0]);
    let mut params = vec![Vector::zeros(problem.dim()); n];
    let mut labels = vec![ClusterId(0); n];
    for (g, (members, x)) in finished.iter().enumerate() {
        for &i in members {
            params[i] = x.clone();
            labels[i] = ClusterId(g);
        }
    }
    run.record.server_states.push(finished.iter().map(|(_, x)| x.clone()).collect());
    run.record.partition = Some(finished.into_iter().map(|(m, _)| m).collect());
    run.push_rows(total_rounds.max(1), &params, Some(&labels));
    Ok(run.finish(params, Some(labels), total_rounds))
}
