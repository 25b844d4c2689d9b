//! Problem instances: loss oracles and client populations.
//!
//! Every client is a [`LossOracle`]. A [`ProblemInstance`] bundles the
//! population with ground-truth cluster labels and whatever constants are
//! known about it ([`TheoryParams`]).

mod blobs;
mod lower_bound;
mod regression;
mod toy;

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::rng::RngStream;
use crate::vector::Vector;

pub use blobs::{make_blobs, min_separation, random_centers, Blobs};
pub use lower_bound::{make_lower_bound_mixture, LowerBoundMixture, MixtureComponent};
pub use regression::{make_synthetic_regression, LinearRegression, RegressionSpec};
pub use toy::{
    make_example1, make_example2, make_example3, make_noisy_quadratics, KnotLoss,
    NoisyQuadratic, Quadratic, ShiftedIdentityGradient, TwoPointGradient,
};

/// How much data backs an oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSize {
    /// Closed-form loss; stochastic gradients come from an explicit noise law.
    Analytic,
    Samples(usize),
}

/// A client's loss function `f_i`.
pub trait LossOracle: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Loss value, or `None` for oracles that only define gradients.
    fn value(&self, x: &Vector) -> Option<f64>;

    /// Exact (expected) gradient.
    fn grad(&self, x: &Vector) -> Vector;

    /// Mini-batch stochastic gradient: the average of `batch_size` independent
    /// single-sample gradients. Deterministic oracles return [`Self::grad`].
    fn stoch_grad(&self, x: &Vector, batch_size: usize, rng: &mut RngStream) -> Vector {
        let _ = (batch_size, rng);
        self.grad(x)
    }

    fn dataset_size(&self) -> DatasetSize {
        DatasetSize::Analytic
    }

    /// Loss used for reporting personalized performance. Data-backed oracles
    /// return the loss on fresh samples from the client's distribution.
    fn eval_loss(&self, x: &Vector) -> Option<f64> {
        self.value(x)
    }

    /// Raw samples `(features, target)` for data dumps.
    fn samples(&self) -> Option<(&[Vector], &[f64])> {
        None
    }
}

/// Constants describing a problem, where known. Zero means unknown.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TheoryParams {
    /// Within-cluster standard deviation of the clustered quantity.
    pub sigma: f64,
    /// Separation between clusters.
    pub delta: f64,
    /// Smallest fraction of the population sharing a client's cluster.
    pub delta_i: f64,
    /// Fraction of malicious clients.
    pub beta_i: f64,
    /// Intra-cluster similarity constant.
    pub a: f64,
    /// Inter-cluster separation slack.
    pub d: f64,
    /// Smoothness constant.
    pub l: f64,
    /// Strong-convexity constant.
    pub mu: f64,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(0.0..=1.0).contains(&self.delta_i) {
            return bad("delta_i must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.beta_i) {
            return bad("beta_i must lie in [0, 1]");
        }
        if self.sigma < 0.0 || self.delta < 0.0 || self.a < 0.0 || self.d < 0.0 {
            return bad("sigma, delta, A and D must be nonnegative");
        }
        if !(self.l >= self.mu && self.mu >= 0.0) {
            return bad("need L >= mu >= 0");
        }
        Ok(())
    }
}

/// A client population with ground truth.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub clients: Vec<Arc<dyn LossOracle>>,
    pub true_labels: Vec<ClusterId>,
    pub k: usize,
    pub params: TheoryParams,
    /// Starting parameters per client.
    pub initial_params: Vec<Vector>,
    /// Optional starting models for server-side K-model baselines (IFCA, HypCluster).
    pub cluster_inits: Option<Vec<Vector>>,
    /// Shared minimizer of each cluster, when known.
    pub cluster_optima: Option<Vec<Vector>>,
    /// Per-client key for random streams. Follows the client's data when the
    /// population is permuted.
    pub stream_keys: Vec<u64>,
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        clients: Vec<Arc<dyn LossOracle>>,
        true_labels: Vec<ClusterId>,
        initial_params: Vec<Vector>,
        params: TheoryParams,
    ) -> Result<Self> {
        let n = clients.len();
        if n == 0 {
            return Err(Error::Empty("problem has no clients"));
        }
        if true_labels.len() != n || initial_params.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} clients but {} labels and {} initial parameters",
                n,
                true_labels.len(),
                initial_params.len()
            )));
        }
        let dim = clients[0].dim();
        for c in &clients {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.dim(),
                });
            }
        }
        for x in &initial_params {
            x.check_dim(dim)?;
        }
        let k = true_labels.iter().map(|c| c.0).max().unwrap() + 1;
        for j in 0..k {
            if !true_labels.iter().any(|c| c.0 == j) {
                return Err(Error::InvalidParameter(format!(
                    "cluster labels must cover 0..{k}; {j} is missing"
                )));
            }
        }
        params.validate()?;
        Ok(ProblemInstance {
            name: name.into(),
            clients,
            true_labels,
            k,
            params,
            initial_params,
            cluster_inits: None,
            cluster_optima: None,
            stream_keys: (0..n as u64).collect(),
        })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    /// Clients of cluster `k`, in index order.
    pub fn members(&self, k: ClusterId) -> Vec<usize> {
        (0..self.n_clients())
            .filter(|&i| self.true_labels[i] == k)
            .collect()
    }

    pub fn has_loss_values(&self) -> bool {
        let probe = Vector::zeros(self.dim());
        self.clients.iter().all(|c| c.value(&probe).is_some())
    }

    /// Reorders clients so that new client `j` is old client `perm[j]`.
    /// Stream keys travel with the clients.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_clients();
        let mut seen = vec![false; n];
        if perm.len() != n || !perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidParameter("not a permutation".into()));
        }
        let mut out = self.clone();
        out.clients = perm.iter().map(|&p| self.clients[p].clone()).collect();
        out.true_labels = perm.iter().map(|&p| self.true_labels[p]).collect();
        out.initial_params = perm.iter().map(|&p| self.initial_params[p].clone()).collect();
        out.stream_keys = perm.iter().map(|&p| self.stream_keys[p]).collect();
        Ok(out)
    }

    /// Writes one row per sample: `client_id,cluster_id,f0..f{d-1},target`.
    /// Only data-backed clients contribute rows.
    pub fn write_samples_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.dim();
        let mut header = vec!["client_id".to_string(), "cluster_id".to_string()];
        header.extend((0..d).map(|j| format!("f{j}")));
        header.push("target".into());
        writeln!(w, "{}", header.join(","))?;
        for (i, c) in self.clients.iter().enumerate() {
            if let Some((feats, targets)) = c.samples() {
                for (a, y) in feats.iter().zip(targets) {
                    let cols: Vec<String> = a.iter().map(|v| format!("{v:e}")).collect();
                    writeln!(w, "{},{},{},{:e}", i, self.true_labels[i], cols.join(","), y)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_must_cover_clusters() {
        let q: Arc<dyn LossOracle> = Arc::new(Quadratic::new(Vector::zeros(1), 1.0));
        let err = ProblemInstance::new(
            "bad",
            vec![q.clone(), q],
            vec![ClusterId(0), ClusterId(2)],
            vec![Vector::zeros(1); 2],
            TheoryParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn theory_params_validation() {
        let mut p = TheoryParams::default();
        assert!(p.validate().is_ok());
        p.delta_i = 1.5;
        assert!(p.validate().is_err());
        p.delta_i = 0.5;
        p.mu = 2.0;
        p.l = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn permutation_moves_keys() {
        let p = make_example1(0.5).unwrap();
        let q = p.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(q.stream_keys, vec![2, 0, 1]);
        assert_eq!(q.true_labels, vec![ClusterId(1), ClusterId(0), ClusterId(0)]);
        assert!(p.permuted(&[0, 0, 1]).is_err());
    }

    #[test]
    fn csv_dump_has_one_row_per_sample() {
        let p = make_synthetic_regression(&RegressionSpec { k: 2, n_i: 2, d: 3, n: 2, seed: 1 }).unwrap();
        let mut buf = Vec::new();
        p.write_samples_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "client_id,cluster_id,f0,f1,f2,target");
        assert_eq!(lines.len(), 1 + 4 * 2);
        assert_eq!(lines[1].split(',').count(), 6);
    }
}
