//! Two-point mixtures that no estimator can separate.
//!
//! `D₁` puts mass `p` on `δ` and `1 − p` on `0`; `D₂` is the mirror image.
//! Both have variance `σ²` and their means are `Δ` apart, where
//! `p = ½ − Δ / (2√(4σ² + Δ²))` and `δ = Δ / (1 − 2p)`. Any estimate of the
//! mean of `D₁` built from unlabeled mixture samples incurs squared error at
//! least `σ⁴/(4Δ²)` once `Δ² ≥ 2σ²`.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureComponent {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundMixture {
    pub sigma: f64,
    pub gap: f64,
    pub p: f64,
    /// Nonzero support point `δ`.
    pub support: f64,
    /// `σ⁴ / (4Δ²)`.
    pub floor: f64,
}

impl LowerBoundMixture {
    pub fn mean(&self, c: MixtureComponent) -> f64 {
        match c {
            MixtureComponent::First => self.p * self.support,
            MixtureComponent::Second => (1.0 - self.p) * self.support,
        }
    }

    pub fn variance(&self) -> f64 {
        self.support * self.support * self.p * (1.0 - self.p)
    }

    pub fn sample(&self, c: MixtureComponent, rng: &mut RngStream) -> f64 {
        let hit = match c {
            MixtureComponent::First => self.p,
            MixtureComponent::Second => 1.0 - self.p,
        };
        if rng.bernoulli(hit) {
            self.support
        } else {
            0.0
        }
    }
}

pub fn make_lower_bound_mixture(sigma: f64, gap: f64) -> Result<LowerBoundMixture> {
    if !(sigma >= 0.0 && gap > 0.0 && sigma.is_finite() && gap.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need sigma >= 0 and gap > 0, got sigma = {sigma}, gap = {gap}"
        )));
    }
    if gap * gap < 2.0 * sigma * sigma {
        return Err(Error::InvalidParameter(format!(
            "lower-bound construction needs gap² >= 2σ² (gap = {gap}, sigma = {sigma})"
        )));
    }
    let p = 0.5 - gap / (2.0 * (4.0 * sigma * sigma + gap * gap).sqrt());
    let support = gap / (1.0 - 2.0 * p);
    Ok(LowerBoundMixture {
        sigma,
        gap,
        p,
        support,
        floor: sigma.powi(4) / (4.0 * gap * gap),
    })
}
