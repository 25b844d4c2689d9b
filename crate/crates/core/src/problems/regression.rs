//! Clustered synthetic linear regression.
//!
//! Client `i` in cluster `k` holds a `d × n` design whose entries are drawn
//! i.i.d. from `N(k + 1, 1)` and targets `y = Aᵀ x*_k`, with `x*_k ~ N(0, I)`
//! drawn once per cluster. The loss is `(1/(2n))‖Aᵀx − y‖²`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{DatasetSize, LossOracle, ProblemInstance, TheoryParams};
use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::rng::{Purpose, RngStream, StreamId};
use crate::vector::Vector;

#[derive(Debug, Clone)]
pub struct LinearRegression {
    samples: Vec<Vector>,
    targets: Vec<f64>,
    /// `(m, x*)` when rows are known to follow `a ~ N(m·1, I)` and `y = aᵀx*`.
    population: Option<(f64, Vector)>,
}

impl LinearRegression {
    /// `samples[s]` is the feature vector of sample `s`.
    pub fn new(samples: Vec<Vector>, targets: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("regression needs at least one sample"));
        }
        if samples.len() != targets.len() {
            return Err(Error::InvalidParameter(format!(
                "{} samples but {} targets",
                samples.len(),
                targets.len()
            )));
        }
        let d = samples[0].dim();
        for s in &samples {
            s.check_dim(d)?;
        }
        Ok(LinearRegression {
            samples,
            targets,
            population: None,
        })
    }

    pub fn with_population(mut self, mean_shift: f64, optimum: Vector) -> Self {
        self.population = Some((mean_shift, optimum));
        self
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    fn residual(&self, s: usize, x: &Vector) -> f64 {
        self.samples[s].dot(x) - self.targets[s]
    }

    fn grad_over<I: Iterator<Item = usize>>(&self, x: &Vector, idx: I, count: usize) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for s in idx {
            g.axpy(self.residual(s, x), &self.samples[s]);
        }
        g.scale(1.0 / count as f64);
        g
    }

    /// Extreme eigenvalues `(λ_min, λ_max)` of the Hessian `Σ a aᵀ / n`.
    pub fn hessian_extremes(&self) -> (f64, f64) {
        let h = self.hessian();
        let eig = SymmetricEigen::new(h).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub(crate) fn hessian(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.n_samples() as f64;
        let mut h = DMatrix::<f64>::zeros(d, d);
        for a in &self.samples {
            for r in 0..d {
                for c in 0..d {
                    h[(r, c)] += a[r] * a[c] / n;
                }
            }
        }
        h
    }
}

impl LossOracle for LinearRegression {
    fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    fn value(&self, x: &Vector) -> Option<f64> {
        let n = self.n_samples();
        let sse: f64 = (0..n).map(|s| self.residual(s, x).powi(2)).sum();
        Some(sse / (2.0 * n as f64))
    }

    fn grad(&self, x: &Vector) -> Vector {
        self.grad_over(x, 0..self.n_samples(), self.n_samples())
    }

    /// Gradient on `batch_size` samples drawn uniformly without replacement.
    fn stoch_grad(&self, x: &Vector, batch_size: usize, rng: &mut RngStream) -> Vector {
        let n = self.n_samples();
        let b = batch_size.max(1);
        if b >= n {
            return self.grad(x);
        }
        let idx = rng.sample_indices(n, b);
        self.grad_over(x, idx.into_iter(), b)
    }

    fn dataset_size(&self) -> DatasetSize {
        DatasetSize::Samples(self.n_samples())
    }

    /// Expected loss on a fresh sample, `½ E[(aᵀ(x − x*))²] = ½(‖e‖² + m²(1ᵀe)²)`.
    fn eval_loss(&self, x: &Vector) -> Option<f64> {
        match &self.population {
            Some((m, opt)) => {
                let e = x - opt;
                let s: f64 = e.iter().sum();
                Some(0.5 * (e.norm_sq() + m * m * s * s))
            }
            None => self.value(x),
        }
    }

    fn samples(&self) -> Option<(&[Vector], &[f64])> {
        Some((&self.samples, &self.targets))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressionSpec {
    pub k: usize,
    pub n_i: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            k: 4,
            n_i: 75,
            d: 10,
            n: 9,
            seed: 0,
        }
    }
}

/// Builds `k · n_i` clients, cluster-major. Requires `d > n`.
pub fn make_synthetic_regression(spec: &RegressionSpec) -> Result<ProblemInstance> {
    let RegressionSpec { k, n_i, d, n, seed } = *spec;
    if d <= n {
        return Err(Error::InvalidParameter(format!(
            "need more dimensions than local samples (d = {d}, n = {n})"
        )));
    }
    if k == 0 || n_i == 0 || n == 0 {
        return Err(Error::InvalidParameter("k, n_i and n must be positive".into()));
    }
    let optima: Vec<Vector> = (0..k)
        .map(|c| {
            let id = StreamId::new(u64::MAX, c as u64, Purpose::Data);
            RngStream::new(seed, id).normal_vector(d, 1.0)
        })
        .collect();

    let mut clients: Vec<Arc<dyn LossOracle>> = Vec::with_capacity(k * n_i);
    let mut labels = Vec::with_capacity(k * n_i);
    let (mut l_max, mut mu_min) = (0.0f64, f64::INFINITY);
    for (c, opt) in optima.iter().enumerate() {
        let shift = (c + 1) as f64;
        for j in 0..n_i {
            let client = c * n_i + j;
            let mut rng = RngStream::new(seed, StreamId::new(client as u64, 0, Purpose::Data));
            let samples: Vec<Vector> = (0..n)
                .map(|_| Vector::new((0..d).map(|_| shift + rng.normal()).collect()))
                .collect();
            let targets = samples.iter().map(|a| a.dot(opt)).collect();
            let oracle = LinearRegression::new(samples, targets)?.with_population(shift, opt.clone());
            let (lo, hi) = oracle.hessian_extremes();
            l_max = l_max.max(hi);
            mu_min = mu_min.min(lo);
            clients.push(Arc::new(oracle));
            labels.push(ClusterId(c));
        }
    }
    let total = clients.len();
    let mut p = ProblemInstance::new(
        "synthetic_regression",
        clients,
        labels,
        vec![Vector::zeros(d); total],
        TheoryParams {
            delta_i: 1.0 / k as f64,
            l: l_max,
            mu: mu_min.min(l_max),
            ..Default::default()
        },
    )?;
    p.cluster_optima = Some(optima);
    Ok(p)
}
