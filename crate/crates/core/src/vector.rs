//! Dense real vectors.
//!
//! Every model parameter, gradient, momentum and clustered point in the engine
//! is a [`Vector`]. Reductions over sets of vectors ([`mean`], the clipped
//! update in [`crate::threshold`]) sum in a canonical order that depends only
//! on the values, so results are bit-identical under any permutation of the
//! inputs.

use std::cmp::Ordering;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(coords: Vec<f64>) -> Self {
        Vector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Vector(vec![value; dim])
    }

    pub fn scalar(value: f64) -> Self {
        Vector(vec![value])
    }

    /// Unit vector along coordinate `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[axis] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Vector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.0 {
            *s *= alpha;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|x| x * alpha).collect())
    }

    /// Unit vector in the direction of `self`, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self.scaled(1.0 / n))
    }

    /// Lexicographic total order on coordinates; the canonical summation order.
    pub fn canonical_cmp(&self, other: &Vector) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.dim().cmp(&other.dim())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Vector {
    fn from(v: [f64; N]) -> Self {
        Vector(v.to_vec())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &Vector {
    type Output = Vector;
    fn add(self, rhs: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), rhs.dim());
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Vector {
    type Output = Vector;
    fn sub(self, rhs: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), rhs.dim());
        Vector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &Vector {
    type Output = Vector;
    fn mul(self, rhs: f64) -> Vector {
        self.scaled(rhs)
    }
}

impl Neg for &Vector {
    type Output = Vector;
    fn neg(self) -> Vector {
        Vector(self.0.iter().map(|x| -x).collect())
    }
}

/// Squared Euclidean distance. Errors on dimension mismatch.
pub fn squared_distance(a: &Vector, b: &Vector) -> Result<f64> {
    b.check_dim(a.dim())?;
    Ok(sq_dist(a, b))
}

/// Unchecked squared distance for hot loops where dimensions are already validated.
#[inline]
pub(crate) fn sq_dist(a: &Vector, b: &Vector) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Coordinate-wise arithmetic mean.
///
/// Points are visited in canonical order and accumulated as a running mean,
/// so the result does not depend on input order and `k` copies of `v` average
/// to exactly `v`.
pub fn mean(points: &[Vector]) -> Result<Vector> {
    let refs: Vec<&Vector> = points.iter().collect();
    mean_of_refs(&refs)
}

pub(crate) fn mean_of_refs(points: &[&Vector]) -> Result<Vector> {
    let first = points.first().ok_or(Error::Empty("mean of no points"))?;
    let dim = first.dim();
    for p in points {
        p.check_dim(dim)?;
    }
    let mut order: Vec<&Vector> = points.to_vec();
    order.sort_by(|a, b| a.canonical_cmp(b));
    let mut acc = order[0].clone();
    for (k, p) in order.iter().enumerate().skip(1) {
        let w = 1.0 / (k as f64 + 1.0);
        for (a, z) in acc.0.iter_mut().zip(&p.0) {
            *a += (z - *a) * w;
        }
    }
    Ok(acc)
}
