//! Reference trainers: Local, Global (FedAvg) and GroundTruth.

use rayon::prelude::*;

use super::{average, Run, RunRecord, TrainerConfig};
use crate::error::Result;
use crate::ids::ClusterId;
use crate::problems::ProblemInstance;
use crate::vector::Vector;

/// Independent SGD on every client.
pub fn run_local(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    let mut run = Run::start("local", problem, cfg)?;
    let n = run.n();
    let mut params = problem.initial_params.clone();
    run.record_round(0, &params, None);
    let mut done = 0;
    for t in 1..=cfg.rounds {
        let grads: Vec<Vector> = (0..n)
            .into_par_iter()
            .map(|i| run.honest_grad(i, &params[i], t, run.key(i)))
            .collect();
        for (x, g) in params.iter_mut().zip(&grads) {
            x.axpy(-cfg.eta, g);
        }
        run.record.messages.push(0);
        done = t;
        if run.check_divergence(t, &params) {
            break;
        }
        run.record_round(t, &params, None);
    }
    Ok(run.finish(params, None, done))
}

/// One model per group, each trained on the mean message of its members.
fn run_grouped(name: &str, problem: &ProblemInstance, cfg: &TrainerConfig, labels: Vec<ClusterId>, k: usize) -> Result<RunRecord> {
    let mut run = Run::start(name, problem, cfg)?;
    run.forbid_edge_attack()?;
    let n = run.n();
    let groups: Vec<Vec<usize>> = (0..k).map(|c| (0..n).filter(|&i| labels[i].0 == c).collect()).collect();
    let mut models: Vec<Vector> = groups.iter().map(|g| problem.initial_params[g[0]].clone()).collect();
    let spread = |models: &[Vector]| -> Vec<Vector> { labels.iter().map(|c| models[c.0].clone()).collect() };
    run.record.server_states.push(models.clone());
    run.record_round(0, &spread(&models), Some(&labels));
    let mut done = 0;
    for t in 1..=cfg.rounds {
        let steps: Vec<Vector> = groups
            .par_iter()
            .zip(models.par_iter())
            .map(|(members, x)| {
                let msgs = members.iter().map(|&i| run.message(i, x, t, run.key(i))).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Vector> = msgs.iter().collect();
                average(&refs)
            })
            .collect::<Result<_>>()?;
        for (x, g) in models.iter_mut().zip(&steps) {
            x.axpy(-cfg.eta, g);
        }
        run.record.messages.push(2 * n as u64);
        run.record.server_states.push(models.clone());
        done = t;
        let params = spread(&models);
        if run.check_divergence(t, &params) {
            break;
        }
        run.record_round(t, &params, Some(&labels));
    }
    let params = spread(&models);
    Ok(run.finish(params, Some(labels), done))
}

/// FedAvg with full participation: a single model on the mean of all messages.
pub fn run_fedavg(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    run_grouped("global", problem, cfg, vec![ClusterId(0); problem.n_clients()], 1)
}

/// One model per true cluster, trained on its members' mean message.
pub fn run_ground_truth(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    run_grouped("gt", problem, cfg, problem.true_labels.clone(), problem.k)
}
