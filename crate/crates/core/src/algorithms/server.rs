//! Loss-based K-model baselines: IFCA and HypCluster.
//!
//! The server keeps `k` models. Each round every client picks the model with
//! the lowest loss on its data (ties to the lowest index) and the selected
//! models are refit on their members.

use serde::{Deserialize, Serialize};

use super::{average, Run, RunRecord, TrainerConfig};
use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::problems::ProblemInstance;
use crate::rng::{Purpose, RngStream};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IfcaOption {
    /// Server averages member gradients at the model.
    GradientAveraging,
    /// Members run `local_steps` gradient steps; the server averages the results.
    ModelAveraging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Refit {
    Ifca(IfcaOption),
    /// Centralized gradient descent on the members' average loss.
    Centralized,
}

/// Starting models: the problem's `cluster_inits` if given, otherwise the
/// first client's start perturbed by independent standard normal noise.
fn initial_models(problem: &ProblemInstance, k: usize, seed: u64) -> Result<Vec<Vector>> {
    if let Some(inits) = &problem.cluster_inits {
        if inits.len() != k {
            return Err(Error::Config(format!(
                "problem provides {} initial models but k = {k}",
                inits.len()
            )));
        }
        return Ok(inits.clone());
    }
    let mut rng = RngStream::root(seed, Purpose::Init);
    let base = &problem.initial_params[0];
    Ok((0..k)
        .map(|_| {
            let mut x = base.clone();
            x.axpy(1.0, &rng.normal_vector(base.dim(), 1.0));
            x
        })
        .collect())
}

fn select(problem: &ProblemInstance, models: &[Vector]) -> Result<Vec<ClusterId>> {
    problem
        .clients
        .iter()
        .map(|c| {
            let mut best = (0, f64::INFINITY);
            for (k, x) in models.iter().enumerate() {
                let v = c.value(x).ok_or_else(|| {
                    Error::Config("loss-based assignment needs loss values; this problem only defines gradients".into())
                })?;
                if v < best.1 {
                    best = (k, v);
                }
            }
            Ok(ClusterId(best.0))
        })
        .collect()
}

fn run_k_models(name: &str, problem: &ProblemInstance, cfg: &TrainerConfig, refit: Refit) -> Result<RunRecord> {
    let mut run = Run::start(name, problem, cfg)?;
    run.forbid_edge_attack()?;
    let n = run.n();
    let k = cfg.clusters(problem)?;
    let mut models = initial_models(problem, k, cfg.seed)?;
    run.record.server_states.push(models.clone());
    let mut assignment = select(problem, &models)?;
    let per_client = |models: &[Vector], a: &[ClusterId]| -> Vec<Vector> { a.iter().map(|c| models[c.0].clone()).collect() };
    run.record_round(0, &per_client(&models, &assignment), Some(&assignment));
    let mut done = 0;
    for t in 1..=cfg.rounds {
        assignment = select(problem, &models)?;
        for (c, model) in models.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignment[i].0 == c).collect();
            if members.is_empty() {
                continue;
            }
            let stream = |step: usize| ((c as u64) << 32) | step as u64;
            match refit {
                Refit::Ifca(IfcaOption::GradientAveraging) => {
                    let grads = members.iter().map(|&i| run.message(i, model, t, stream(0))).collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&Vector> = grads.iter().collect();
                    model.axpy(-cfg.eta, &average(&refs)?);
                }
                Refit::Ifca(IfcaOption::ModelAveraging) => {
                    let mut locals = Vec::with_capacity(members.len());
                    for &i in &members {
                        let mut y = model.clone();
                        for s in 0..cfg.local_steps {
                            let g = run.message(i, &y, t, stream(s))?;
                            y.axpy(-cfg.eta, &g);
                        }
                        locals.push(y);
                    }
                    let refs: Vec<&Vector> = locals.iter().collect();
                    *model = average(&refs)?;
                }
                Refit::Centralized => {
                    for s in 0..cfg.local_steps {
                        let grads = members.iter().map(|&i| run.message(i, model, t, stream(s))).collect::<Result<Vec<_>>>()?;
                        let refs: Vec<&Vector> = grads.iter().collect();
                        model.axpy(-cfg.eta, &average(&refs)?);
                    }
                }
            }
        }
        run.record.messages.push((n * k + n) as u64);
        run.record.server_states.push(models.clone());
        done = t;
        let params = per_client(&models, &assignment);
        if run.check_divergence(t, &params) {
            break;
        }
        run.record_round(t, &params, Some(&assignment));
    }
    let params = per_client(&models, &assignment);
    Ok(run.finish(params, Some(assignment), done))
}

/// IFCA with the given server update option. `cfg.local_steps` applies to
/// model averaging.
pub fn run_ifca(problem: &ProblemInstance, cfg: &TrainerConfig, option: IfcaOption) -> Result<RunRecord> {
    let name = match option {
        IfcaOption::GradientAveraging => "ifca1",
        IfcaOption::ModelAveraging => "ifca2",
    };
    run_k_models(name, problem, cfg, Refit::Ifca(option))
}

/// HypCluster: loss-based assignment alternating with `cfg.local_steps`
/// steps of gradient descent on each cluster's member average.
pub fn run_hypcluster(problem: &ProblemInstance, cfg: &TrainerConfig) -> Result<RunRecord> {
    run_k_models("hypcluster", problem, cfg, Refit::Centralized)
}
