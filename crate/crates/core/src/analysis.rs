//! Diagnostics: assumption estimators, center errors, clustering accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::problems::{LossOracle, ProblemInstance};
use crate::rng::{Purpose, RngStream, StreamId};
use crate::threshold::CenterState;
use crate::vector::{mean_of_refs, sq_dist, Vector};

/// Cluster-average gradient norms at or below this are treated as a shared optimum.
pub const SHARED_OPTIMUM_TOL: f64 = 1e-18;

/// `‖∇f_i(x) − ∇f̄(x)‖² / ‖∇f̄(x)‖²` for each member `i` of `cluster`, where `f̄`
/// is the average loss of the cluster. `None` marks a shared optimum (0/0).
pub fn estimate_intra_ratio(
    problem: &ProblemInstance,
    x: &Vector,
    cluster: &[usize],
) -> Result<Vec<Option<f64>>> {
    if cluster.is_empty() {
        return Err(Error::Empty("intra ratio over an empty cluster"));
    }
    x.check_dim(problem.dim())?;
    let grads: Vec<Vector> = cluster.iter().map(|&i| problem.clients[i].grad(x)).collect();
    let refs: Vec<&Vector> = grads.iter().collect();
    let avg = mean_of_refs(&refs)?;
    let denom = avg.norm_sq();
    if denom <= SHARED_OPTIMUM_TOL {
        return Ok(vec![None; cluster.len()]);
    }
    Ok(grads.iter().map(|g| Some(sq_dist(g, &avg) / denom)).collect())
}

/// `min_{i≁j} ‖∇f_i(x) − ∇f_j(x)‖²` over pairs from different true clusters.
pub fn estimate_inter_separation(problem: &ProblemInstance, x: &Vector) -> Result<f64> {
    if problem.k < 2 {
        return Err(Error::InvalidParameter("separation needs at least two clusters".into()));
    }
    x.check_dim(problem.dim())?;
    let grads: Vec<Vector> = problem.clients.iter().map(|c| c.grad(x)).collect();
    let labels = &problem.true_labels;
    let mut best = f64::INFINITY;
    for i in 0..grads.len() {
        for j in (i + 1)..grads.len() {
            if labels[i] != labels[j] {
                best = best.min(sq_dist(&grads[i], &grads[j]));
            }
        }
    }
    Ok(best)
}

/// One row of an [`AssumptionTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub client: usize,
    pub intra_ratio: Option<f64>,
    pub inter_sep: f64,
}

/// Intra-cluster ratio and inter-cluster separation along a trajectory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AssumptionTrace {
    pub rows: Vec<TraceRow>,
    /// Per round, the average over clusters of each cluster's mean ratio
    /// (undefined members excluded).
    pub mean_intra: Vec<f64>,
    /// Per round, the smallest separation seen at any cluster model.
    pub min_inter: Vec<f64>,
}

impl AssumptionTrace {
    /// Running maximum of `mean_intra` over `rounds`.
    pub fn max_intra(&self, rounds: std::ops::RangeInclusive<usize>) -> f64 {
        self.mean_intra[rounds].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_separation(&self) -> f64 {
        self.min_inter.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Writes `round,client,ratio,sep`; undefined ratios are left empty.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "round,client,ratio,sep")?;
        for r in &self.rows {
            let ratio = r.intra_ratio.map(|v| format!("{v:e}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:e}", r.round, r.client, ratio, r.inter_sep)?;
        }
        Ok(())
    }
}

/// Evaluates both estimators at per-cluster models, one entry per round.
/// `models[t][k]` is cluster `k`'s model after round `t`.
pub fn trace_assumptions(problem: &ProblemInstance, models: &[Vec<Vector>]) -> Result<AssumptionTrace> {
    let clusters: Vec<Vec<usize>> = (0..problem.k).map(|k| problem.members(ClusterId(k))).collect();
    let mut trace = AssumptionTrace::default();
    for (t, xs) in models.iter().enumerate() {
        if xs.len() != problem.k {
            return Err(Error::InvalidParameter(format!(
                "round {t}: {} models for {} clusters",
                xs.len(),
                problem.k
            )));
        }
        let seps: Vec<f64> = xs
            .iter()
            .map(|x| estimate_inter_separation(problem, x))
            .collect::<Result<_>>()?;
        let sep_min = seps.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut cluster_means = Vec::new();
        for (k, members) in clusters.iter().enumerate() {
            let ratios = estimate_intra_ratio(problem, &xs[k], members)?;
            let defined: Vec<f64> = ratios.iter().flatten().copied().collect();
            if !defined.is_empty() {
                cluster_means.push(defined.iter().sum::<f64>() / defined.len() as f64);
            }
            for (&i, r) in members.iter().zip(ratios) {
                trace.rows.push(TraceRow {
                    round: t,
                    client: i,
                    intra_ratio: r,
                    inter_sep: seps[k],
                });
            }
        }
        let avg = if cluster_means.is_empty() {
            0.0
        } else {
            cluster_means.iter().sum::<f64>() / cluster_means.len() as f64
        };
        trace.mean_intra.push(avg);
        trace.min_inter.push(sep_min);
    }
    Ok(trace)
}

/// Squared distance of each true mean to its matched center, under the
/// matching that minimizes the total.
pub fn center_error(state: &CenterState, true_means: &[Vector]) -> Result<Vec<f64>> {
    let k = true_means.len();
    if state.centers.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{} centers but {} true means",
            state.centers.len(),
            k
        )));
    }
    let cost: Vec<Vec<f64>> = true_means
        .iter()
        .map(|m| {
            state
                .centers
                .iter()
                .map(|c| squared_or_err(m, c))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let assignment = min_cost_assignment(&cost);
    Ok(assignment.iter().enumerate().map(|(m, &c)| cost[m][c]).collect())
}

/// Per-cluster error without matching: center `k` against mean `k`.
pub fn center_error_identity(state: &CenterState, true_means: &[Vector]) -> Result<Vec<f64>> {
    if state.centers.len() != true_means.len() {
        return Err(Error::InvalidParameter("center/mean count mismatch".into()));
    }
    state
        .centers
        .iter()
        .zip(true_means)
        .map(|(c, m)| squared_or_err(m, c))
        .collect()
}

fn squared_or_err(a: &Vector, b: &Vector) -> Result<f64> {
    crate::vector::squared_distance(a, b)
}

/// Empirical `E‖m − E m‖²` of the momentum recursion `m ← α g + (1−α) m`
/// at a fixed point `x`. Each draw runs an independent chain for `⌈5/α⌉`
/// steps from `m = 0`.
pub fn momentum_variance_probe(
    oracle: &dyn LossOracle,
    x: &Vector,
    alpha: f64,
    batch_size: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if draws < 2 {
        return Err(Error::InvalidParameter("need at least two draws".into()));
    }
    let steps = (5.0 / alpha).ceil() as usize;
    let finals: Vec<Vector> = (0..draws)
        .map(|r| {
            let mut rng = RngStream::new(seed, StreamId::new(r as u64, 0, Purpose::Gradient));
            let mut m = Vector::zeros(x.dim());
            for _ in 0..steps {
                let g = oracle.stoch_grad(x, batch_size, &mut rng);
                m.scale(1.0 - alpha);
                m.axpy(alpha, &g);
            }
            m
        })
        .collect();
    let refs: Vec<&Vector> = finals.iter().collect();
    let center = mean_of_refs(&refs)?;
    let ss: f64 = finals.iter().map(|m| sq_dist(m, &center)).sum();
    Ok(ss / (draws - 1) as f64)
}

/// Largest fraction of agreeing labels over all relabelings of `assigned`.
pub fn clustering_accuracy(assigned: &[ClusterId], truth: &[ClusterId]) -> Result<f64> {
    if assigned.len() != truth.len() {
        return Err(Error::InvalidParameter(format!(
            "{} assignments for {} labels",
            assigned.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("accuracy of an empty labeling"));
    }
    let ka = assigned.iter().map(|c| c.0).max().unwrap() + 1;
    let kt = truth.iter().map(|c| c.0).max().unwrap() + 1;
    let k = ka.max(kt);
    let mut counts = vec![vec![0.0f64; k]; k];
    for (a, t) in assigned.iter().zip(truth) {
        counts[a.0][t.0] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|row| row.iter().map(|c| -c).collect()).collect();
    let perm = min_cost_assignment(&cost);
    let agree: f64 = perm.iter().enumerate().map(|(a, &t)| counts[a][t]).sum();
    Ok(agree / truth.len() as f64)
}

/// Minimum-cost perfect matching on a square cost matrix; `out[row] = column`.
/// Enumerates permutations up to size 8, Hungarian method beyond.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n <= 8 {
        brute_force_assignment(cost)
    } else {
        hungarian(cost)
    }
}

fn brute_force_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = f64::INFINITY;
    permute(&mut perm, 0, cost, &mut best, &mut best_cost);
    best
}

fn permute(perm: &mut Vec<usize>, at: usize, cost: &[Vec<f64>], best: &mut Vec<usize>, best_cost: &mut f64) {
    if at == perm.len() {
        let c: f64 = perm.iter().enumerate().map(|(r, &col)| cost[r][col]).sum();
        if c < *best_cost {
            *best_cost = c;
            best.clone_from(perm);
        }
        return;
    }
    for i in at..perm.len() {
        perm.swap(at, i);
        permute(perm, at + 1, cost, best, best_cost);
        perm.swap(at, i);
    }
}

/// O(n³) Hungarian method with potentials.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is a virtual sink
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for col in 1..=n {
                if !used[col] {
                    let cur = cost[r - 1][col - 1] - u[r] - v[col];
                    if cur < minv[col] {
                        minv[col] = cur;
                        way[col] = col0;
                    }
                    if minv[col] < delta {
                        delta = minv[col];
                        col1 = col;
                    }
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            out[owner[col] - 1] = col - 1;
        }
    }
    out
}

/// Share of the total decrease left at the elbow.
pub const DEFAULT_ELBOW_FRACTION: f64 = 0.5;

/// Elbow of a decreasing curve: the first index `l` at which the excess over
/// the curve's minimum has shrunk to `fraction` of its starting value,
/// `f(l) − min f ≤ fraction · (f(0) − min f)`. A curve that never drops below
/// its start has its elbow at 0.
pub fn elbow_index(curve: &[f64], fraction: f64) -> Result<usize> {
    if curve.len() < 2 {
        return Err(Error::InvalidParameter("elbow needs at least two points".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("elbow fraction must lie in (0, 1), got {fraction}")));
    }
    if curve.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("elbow curve has non-finite values".into()));
    }
    let min = curve.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = curve[0] - min;
    if span <= 0.0 {
        return Ok(0);
    }
    Ok(curve.iter().position(|&v| v - min <= fraction * span).unwrap_or(curve.len() - 1))
}
