//! Training loops.
//!
//! Personalized, clustering-based methods:
//! [`run_federated_clustering`], [`run_momentum_clustering`], [`run_myopic`].
//! Server-side K-model baselines: [`run_ifca`], [`run_hypcluster`],
//! [`run_clustered_fl`]. Reference points: [`run_local`], [`run_fedavg`],
//! [`run_ground_truth`].
//!
//! Every loop returns a [`RunRecord`]. A run that produces non-finite
//! parameters stops early and reports the round in [`RunRecord::diverged`].

mod baselines;
mod clustered_fl;
mod federated;
mod momentum;
mod server;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, AttackKind, ByzantineSchedule};
use crate::error::{Error, Result};
use crate::ids::{ClientId, ClusterId};
use crate::problems::ProblemInstance;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::threshold::RadiusPolicy;
use crate::vector::{mean_of_refs, Vector};

pub use baselines::{run_fedavg, run_ground_truth, run_local};
pub use clustered_fl::run_clustered_fl;
pub use federated::run_federated_clustering;
pub use momentum::{run_momentum_clustering, run_myopic};
pub use server::{run_hypcluster, run_ifca, IfcaOption};

/// Parameters above this norm count as divergence.
const DIVERGENCE_NORM: f64 = 1e100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Learning rate.
    pub eta: f64,
    /// Training rounds `T`.
    pub rounds: usize,
    /// Threshold-Clustering iterations per training round.
    pub cluster_rounds: usize,
    pub radius: RadiusPolicy,
    /// Mini-batch size; `None` uses exact gradients.
    pub batch_size: Option<usize>,
    /// Momentum weight on the fresh gradient.
    pub alpha: f64,
    /// Number of clusters for server-side methods; defaults to the true count.
    pub k: Option<usize>,
    pub seed: u64,
    /// Local gradient steps per round (IFCA option II, HypCluster).
    pub local_steps: usize,
    /// Clustered-FL stops splitting when all probe gradients lie within this distance.
    pub split_eps: f64,
    /// Clustered-FL's FedAvg sub-runs stop once the mean exact gradient norm drops below this.
    pub fedavg_tol: f64,
    pub fedavg_max_rounds: usize,
    /// Batch size of the single gradient each client reports to Clustered-FL.
    pub probe_batch: usize,
    pub byzantine: ByzantineSchedule,
    /// Emit client rows every this many rounds (the final round is always recorded).
    pub record_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            eta: 0.1,
            rounds: 100,
            cluster_rounds: 10,
            radius: RadiusPolicy::percentile(20.0),
            batch_size: None,
            alpha: 1.0,
            k: None,
            seed: 0,
            local_steps: 1,
            split_eps: 1e-3,
            fedavg_tol: 1e-6,
            fedavg_max_rounds: 10_000,
            probe_batch: 1,
            byzantine: ByzantineSchedule::default(),
            record_every: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if self.rounds == 0 || self.cluster_rounds == 0 || self.local_steps == 0 {
            return bad("rounds, cluster_rounds and local_steps must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.batch_size == Some(0) || self.probe_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.k == Some(0) {
            return bad("k must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        self.radius.validate()?;
        self.byzantine.validate()
    }

    fn clusters(&self, problem: &ProblemInstance) -> Result<usize> {
        let k = self.k.unwrap_or(problem.k);
        if k > problem.n_clients() {
            return Err(Error::InvalidParameter(format!(
                "k = {k} exceeds the {} clients",
                problem.n_clients()
            )));
        }
        Ok(k)
    }
}

/// Per-client training state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: ClientId,
    pub params: Vector,
    pub momentum: Vector,
    pub byzantine: bool,
    pub attack: AttackKind,
    pub true_cluster: ClusterId,
}

/// Metrics for one client after one round. Round 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub round: usize,
    pub client: usize,
    /// `‖∇f_i(x_i)‖²` with the exact gradient.
    pub grad_norm_sq: f64,
    pub loss: Option<f64>,
    /// Loss on fresh data from the client's distribution.
    pub eval_loss: Option<f64>,
    /// `‖x_i − x*_{k_i}‖²` when the cluster optima are known.
    pub optimum_error: Option<f64>,
    pub assignment: Option<ClusterId>,
    pub byzantine: bool,
}

/// Long-format CSV header used by [`RunRecord::write_csv_rows`].
pub const CSV_HEADER: &str = "experiment,algo,seed,round,client,metric,value";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub rows: Vec<ClientRow>,
    /// Messages exchanged in each round (index 0 is round 1).
    pub messages: Vec<u64>,
    pub final_params: Vec<Vector>,
    pub final_assignment: Option<Vec<ClusterId>>,
    /// Server-side models or cluster centers after each round, when the method has them.
    pub server_states: Vec<Vec<Vector>>,
    /// Final partition of clients (Clustered-FL).
    pub partition: Option<Vec<Vec<usize>>>,
    pub byzantine: Vec<bool>,
    /// `(round, client)` of the first non-finite parameter.
    pub diverged: Option<(usize, usize)>,
    pub rounds_run: usize,
}

impl RunRecord {
    fn new(algorithm: &str, byzantine: Vec<bool>) -> Self {
        RunRecord {
            algorithm: algorithm.to_string(),
            byzantine,
            ..Default::default()
        }
    }

    pub fn last_round(&self) -> usize {
        self.rows.last().map(|r| r.round).unwrap_or(0)
    }

    /// Rows of the last recorded round.
    pub fn final_rows(&self) -> impl Iterator<Item = &ClientRow> {
        let last = self.last_round();
        self.rows.iter().filter(move |r| r.round == last)
    }

    /// Mean evaluation loss of honest clients at the end; infinite after divergence.
    pub fn final_mean_eval_loss(&self) -> f64 {
        if self.diverged.is_some() {
            return f64::INFINITY;
        }
        mean_honest(self.final_rows().filter_map(|r| r.eval_loss.map(|v| (r.byzantine, v))))
    }

    /// Mean over honest clients of `(1/T) Σ_t ‖∇f_i(x_{i,t−1})‖²` over recorded rounds before the last.
    pub fn mean_time_avg_grad_norm_sq(&self) -> f64 {
        if self.diverged.is_some() {
            return f64::INFINITY;
        }
        let last = self.last_round();
        mean_honest(
            self.rows
                .iter()
                .filter(|r| r.round < last)
                .map(|r| (r.byzantine, r.grad_norm_sq)),
        )
    }

    pub fn total_messages(&self) -> u64 {
        self.messages.iter().sum()
    }

    /// Appends long-format rows (no header). Round-level message counts use an empty client field.
    pub fn write_csv_rows<W: Write>(&self, mut w: W, experiment: &str, seed: u64) -> io::Result<()> {
        let algo = &self.algorithm;
        for r in &self.rows {
            let mut put = |metric: &str, value: String| {
                writeln!(w, "{experiment},{algo},{seed},{},{},{metric},{value}", r.round, r.client)
            };
            put("grad_norm_sq", format!("{:e}", r.grad_norm_sq))?;
            if let Some(v) = r.loss {
                put("loss", format!("{v:e}"))?;
            }
            if let Some(v) = r.eval_loss {
                put("eval_loss", format!("{v:e}"))?;
            }
            if let Some(v) = r.optimum_error {
                put("optimum_error", format!("{v:e}"))?;
            }
            if let Some(c) = r.assignment {
                put("assignment", c.to_string())?;
            }
            put("byzantine", (r.byzantine as u8).to_string())?;
        }
        for (t, m) in self.messages.iter().enumerate() {
            writeln!(w, "{experiment},{algo},{seed},{},,messages,{m}", t + 1)?;
        }
        Ok(())
    }
}

fn mean_honest(it: impl Iterator<Item = (bool, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (byz, v) in it {
        if !byz {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Shared per-run context.
pub(crate) struct Run<'a> {
    pub problem: &'a ProblemInstance,
    pub cfg: &'a TrainerConfig,
    pub flags: Vec<bool>,
    pub record: RunRecord,
}

impl<'a> Run<'a> {
    pub fn start(name: &str, problem: &'a ProblemInstance, cfg: &'a TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        let flags = byzantine_flags(problem, &cfg.byzantine, cfg.seed);
        Ok(Run {
            problem,
            cfg,
            record: RunRecord::new(name, flags.clone()),
            flags,
        })
    }

    pub fn n(&self) -> usize {
        self.problem.n_clients()
    }

    fn gradient_stream(&self, client: usize, round: usize, index: u64) -> RngStream {
        let id = StreamId::new(self.problem.stream_keys[client], round as u64, Purpose::Gradient)
            .with_index(index);
        RngStream::new(self.cfg.seed, id)
    }

    /// Client `client`'s honest gradient at `x`. Distinct `index` values give
    /// independent mini-batches within one round.
    pub fn honest_grad(&self, client: usize, x: &Vector, round: usize, index: u64) -> Vector {
        let oracle = &self.problem.clients[client];
        match self.cfg.batch_size {
            None => oracle.grad(x),
            Some(b) => oracle.stoch_grad(x, b, &mut self.gradient_stream(client, round, index)),
        }
    }

    /// The message `client` sends: honest, or transformed if it is Byzantine.
    /// Context-dependent attacks must be handled by the caller.
    pub fn message(&self, client: usize, x: &Vector, round: usize, index: u64) -> Result<Vector> {
        let g = self.honest_grad(client, x, round, index);
        if self.flags[client] {
            apply_attack(&self.cfg.byzantine.kind, &g, None)
        } else {
            Ok(g)
        }
    }

    pub fn key(&self, client: usize) -> u64 {
        self.problem.stream_keys[client]
    }

    pub fn edge_attack(&self) -> Option<f64> {
        match self.cfg.byzantine.kind {
            AttackKind::EdgeOfBall { margin } if self.flags.iter().any(|&b| b) => Some(margin),
            _ => None,
        }
    }

    pub fn forbid_edge_attack(&self) -> Result<()> {
        if self.edge_attack().is_some() {
            return Err(Error::Config(format!(
                "{} has no clustering ball for an edge-of-ball attacker",
                self.record.algorithm
            )));
        }
        Ok(())
    }

    pub fn should_record(&self, round: usize) -> bool {
        round.is_multiple_of(self.cfg.record_every) || round == self.cfg.rounds
    }

    /// Appends one row per client for `round`.
    pub fn record_round(&mut self, round: usize, params: &[Vector], assignment: Option<&[ClusterId]>) {
        if self.should_record(round) {
            self.push_rows(round, params, assignment);
        }
    }

    pub fn push_rows(&mut self, round: usize, params: &[Vector], assignment: Option<&[ClusterId]>) {
        let optima = self.problem.cluster_optima.as_ref();
        for (i, x) in params.iter().enumerate() {
            let oracle = &self.problem.clients[i];
            let label = self.problem.true_labels[i];
            self.record.rows.push(ClientRow {
                round,
                client: i,
                grad_norm_sq: oracle.grad(x).norm_sq(),
                loss: oracle.value(x),
                eval_loss: oracle.eval_loss(x),
                optimum_error: optima.map(|o| crate::vector::sq_dist(x, &o[label.0])),
                assignment: assignment.map(|a| a[i]),
                byzantine: self.flags[i],
            });
        }
    }

    /// Marks divergence if any parameter is non-finite or huge. Returns true if diverged.
    pub fn check_divergence(&mut self, round: usize, params: &[Vector]) -> bool {
        for (i, x) in params.iter().enumerate() {
            if !x.is_finite() || x.norm() > DIVERGENCE_NORM {
                self.record.diverged = Some((round, i));
                return true;
            }
        }
        false
    }

    pub fn finish(mut self, params: Vec<Vector>, assignment: Option<Vec<ClusterId>>, rounds_run: usize) -> RunRecord {
        self.record.final_params = params;
        self.record.final_assignment = assignment;
        self.record.rounds_run = rounds_run;
        self.record
    }
}

/// Byzantine flags chosen among stream keys, so they follow clients under relabeling.
pub(crate) fn byzantine_flags(problem: &ProblemInstance, schedule: &ByzantineSchedule, seed: u64) -> Vec<bool> {
    let n = problem.n_clients();
    let by_key = schedule.flags(n, seed);
    let mut keys: Vec<(u64, usize)> = problem.stream_keys.iter().copied().zip(0..n).collect();
    keys.sort_unstable();
    let mut out = vec![false; n];
    for (rank, &(_, pos)) in keys.iter().enumerate() {
        out[pos] = by_key[rank];
    }
    out
}

/// `k` distinct client positions chosen at random, by stream key.
pub(crate) fn random_clients(problem: &ProblemInstance, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let n = problem.n_clients();
    let mut keys: Vec<(u64, usize)> = problem.stream_keys.iter().copied().zip(0..n).collect();
    keys.sort_unstable();
    rng.sample_indices(n, k).into_iter().map(|r| keys[r].1).collect()
}

/// Canonical-order mean of borrowed vectors.
pub(crate) fn average(vs: &[&Vector]) -> Result<Vector> {
    mean_of_refs(vs)
}
