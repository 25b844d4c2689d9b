//! Closed-form oracles and the three small counter-example populations.

use std::sync::Arc;

use super::{DatasetSize, LossOracle, ProblemInstance, TheoryParams};
use crate::error::{Error, Result};
use crate::ids::ClusterId;
use crate::rng::RngStream;
use crate::vector::Vector;

/// `f(x) = (c/2)‖x − a‖²`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub center: Vector,
    pub curvature: f64,
}

impl Quadratic {
    pub fn new(center: Vector, curvature: f64) -> Self {
        Quadratic { center, curvature }
    }
}

impl LossOracle for Quadratic {
    fn dim(&self) -> usize {
        self.center.dim()
    }

    fn value(&self, x: &Vector) -> Option<f64> {
        Some(0.5 * self.curvature * (x - &self.center).norm_sq())
    }

    fn grad(&self, x: &Vector) -> Vector {
        (x - &self.center).scaled(self.curvature)
    }
}

/// The one-dimensional loss with a flat saddle at `x = 1`:
/// cubic-quartic below the knot, `(x−1)²/(2η) + 1` above it.
#[derive(Debug, Clone)]
pub struct KnotLoss {
    pub eta: f64,
}

impl LossOracle for KnotLoss {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &Vector) -> Option<f64> {
        let u = x[0] - 1.0;
        Some(if u < 0.0 {
            4.0 * u.powi(3) + 3.0 * u.powi(4) + 1.0
        } else {
            u * u / (2.0 * self.eta) + 1.0
        })
    }

    fn grad(&self, x: &Vector) -> Vector {
        let u = x[0] - 1.0;
        Vector::scalar(if u < 0.0 {
            12.0 * u * u + 12.0 * u.powi(3)
        } else {
            u / self.eta
        })
    }
}

/// Gradient-only oracle `g(x) = x − shift` (no loss value is defined).
#[derive(Debug, Clone)]
pub struct ShiftedIdentityGradient {
    pub shift: f64,
}

impl LossOracle for ShiftedIdentityGradient {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, _x: &Vector) -> Option<f64> {
        None
    }

    fn grad(&self, x: &Vector) -> Vector {
        Vector::scalar(x[0] - self.shift)
    }
}

/// Gradient-only oracle returning `x` or `x − 1` with probability ½ each.
#[derive(Debug, Clone, Default)]
pub struct TwoPointGradient;

impl LossOracle for TwoPointGradient {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, _x: &Vector) -> Option<f64> {
        None
    }

    fn grad(&self, x: &Vector) -> Vector {
        Vector::scalar(x[0] - 0.5)
    }

    fn stoch_grad(&self, x: &Vector, batch_size: usize, rng: &mut RngStream) -> Vector {
        let b = batch_size.max(1);
        let shifts: f64 = (0..b).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).sum();
        Vector::scalar(x[0] - shifts / b as f64)
    }

    fn dataset_size(&self) -> DatasetSize {
        DatasetSize::Samples(2)
    }
}

/// Quadratic with additive isotropic Gaussian gradient noise of total
/// variance `noise_var` per sample (`E‖g − ∇f‖² = noise_var`).
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    pub base: Quadratic,
    pub noise_var: f64,
}

impl LossOracle for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn value(&self, x: &Vector) -> Option<f64> {
        self.base.value(x)
    }

    fn grad(&self, x: &Vector) -> Vector {
        self.base.grad(x)
    }

    fn stoch_grad(&self, x: &Vector, batch_size: usize, rng: &mut RngStream) -> Vector {
        // The mean of b i.i.d. N(0, s²I) draws is N(0, s²/b I).
        let d = self.dim() as f64;
        let std = (self.noise_var / (d * batch_size.max(1) as f64)).sqrt();
        let mut g = self.base.grad(x);
        g.axpy(1.0, &rng.normal_vector(self.dim(), std));
        g
    }
}

fn arc<T: LossOracle + 'static>(o: T) -> Arc<dyn LossOracle> {
    Arc::new(o)
}

/// Three 1-D clients: `x²/(6η)`, the knot loss, `(x−2)²/(2η)`; clusters {0,1},{2};
/// everyone starts at 1.5.
pub fn make_example1(eta: f64) -> Result<ProblemInstance> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let clients = vec![
        arc(Quadratic::new(Vector::scalar(0.0), 1.0 / (3.0 * eta))),
        arc(KnotLoss { eta }),
        arc(Quadratic::new(Vector::scalar(2.0), 1.0 / eta)),
    ];
    let labels = vec![ClusterId(0), ClusterId(0), ClusterId(1)];
    let mut p = ProblemInstance::new(
        "example1",
        clients,
        labels,
        vec![Vector::scalar(1.5); 3],
        TheoryParams {
            delta_i: 1.0 / 3.0,
            ..Default::default()
        },
    )?;
    p.cluster_optima = Some(vec![Vector::scalar(0.0), Vector::scalar(2.0)]);
    Ok(p)
}

/// Two 1-D clients `(x+½)²` and `(x−½)²` in separate clusters. Clients start
/// at 0; the server-side K-model baselines start from models (−1.5, 0).
pub fn make_example2() -> Result<ProblemInstance> {
    let clients = vec![
        arc(Quadratic::new(Vector::scalar(-0.5), 2.0)),
        arc(Quadratic::new(Vector::scalar(0.5), 2.0)),
    ];
    let mut p = ProblemInstance::new(
        "example2",
        clients,
        vec![ClusterId(0), ClusterId(1)],
        vec![Vector::scalar(0.0); 2],
        TheoryParams {
            delta: 2.0,
            delta_i: 0.5,
            l: 2.0,
            mu: 2.0,
            ..Default::default()
        },
    )?;
    p.cluster_inits = Some(vec![Vector::scalar(-1.5), Vector::scalar(0.0)]);
    p.cluster_optima = Some(vec![Vector::scalar(-0.5), Vector::scalar(0.5)]);
    Ok(p)
}

/// Three gradient-only clients `x`, `x − ½` and the two-point law; clusters {0},{1,2}.
pub fn make_example3() -> Result<ProblemInstance> {
    let clients = vec![
        arc(ShiftedIdentityGradient { shift: 0.0 }),
        arc(ShiftedIdentityGradient { shift: 0.5 }),
        arc(TwoPointGradient),
    ];
    let mut p = ProblemInstance::new(
        "example3",
        clients,
        vec![ClusterId(0), ClusterId(1), ClusterId(1)],
        vec![Vector::scalar(0.0); 3],
        TheoryParams {
            sigma: 0.5,
            delta_i: 1.0 / 3.0,
            l: 1.0,
            mu: 1.0,
            ..Default::default()
        },
    )?;
    p.cluster_optima = Some(vec![Vector::scalar(0.0), Vector::scalar(0.5)]);
    Ok(p)
}

/// `per_cluster` identical noisy quadratics around each center, curvature
/// `curvature`, gradient noise variance `noise_var`; everyone starts at 0.
pub fn make_noisy_quadratics(
    centers: &[Vector],
    per_cluster: usize,
    curvature: f64,
    noise_var: f64,
) -> Result<ProblemInstance> {
    if centers.is_empty() || per_cluster == 0 {
        return Err(Error::Empty("noisy quadratics need centers and members"));
    }
    let dim = centers[0].dim();
    let mut clients = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        c.check_dim(dim)?;
        for _ in 0..per_cluster {
            clients.push(arc(NoisyQuadratic {
                base: Quadratic::new(c.clone(), curvature),
                noise_var,
            }));
            labels.push(ClusterId(k));
        }
    }
    let n = clients.len();
    let mut min_gap = f64::INFINITY;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            min_gap = min_gap.min(curvature * (&centers[i] - &centers[j]).norm());
        }
    }
    let mut p = ProblemInstance::new(
        "noisy_quadratics",
        clients,
        labels,
        vec![Vector::zeros(dim); n],
        TheoryParams {
            sigma: noise_var.sqrt(),
            delta: if min_gap.is_finite() { min_gap } else { 0.0 },
            delta_i: 1.0 / centers.len() as f64,
            l: curvature,
            mu: curvature,
            ..Default::default()
        },
    )?;
    p.cluster_optima = Some(centers.to_vec());
    Ok(p)
}
