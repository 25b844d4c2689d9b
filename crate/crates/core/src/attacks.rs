//! Byzantine client behaviors.
//!
//! A flagged client replaces every message it sends with the output of
//! [`apply_attack`]. Flags are drawn once per run from the seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};
use crate::threshold::{CenterState, RadiusPolicy};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    /// Sends `scale · g`.
    LargeGradient { scale: f64 },
    /// Sends `−g`.
    SignFlip,
    /// Sits just inside the clipping ball: `v + (1 − margin) τ u`.
    EdgeOfBall { margin: f64 },
}

impl AttackKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttackKind::LargeGradient { scale } if !(scale > 0.0 && scale.is_finite()) => Err(
                Error::InvalidParameter(format!("attack scale must be positive, got {scale}")),
            ),
            AttackKind::EdgeOfBall { margin } if !(margin > 0.0 && margin < 1.0) => Err(
                Error::InvalidParameter(format!("edge-of-ball margin must lie in (0, 1), got {margin}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether the attack needs to see the receiver's clustering state.
    pub fn needs_context(&self) -> bool {
        matches!(self, AttackKind::EdgeOfBall { .. })
    }
}

/// What an omniscient attacker knows about the receiving cluster.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub center: &'a Vector,
    pub radius: f64,
    /// Preferred push direction (need not be normalized). Defaults to the first axis.
    pub direction: Option<&'a Vector>,
}

/// Transforms an honest message into the attacker's message.
pub fn apply_attack(
    kind: &AttackKind,
    honest: &Vector,
    context: Option<&AttackContext<'_>>,
) -> Result<Vector> {
    match *kind {
        AttackKind::None => Ok(honest.clone()),
        AttackKind::LargeGradient { scale } => Ok(honest.scaled(scale)),
        AttackKind::SignFlip => Ok(-honest),
        AttackKind::EdgeOfBall { margin } => {
            let ctx = context.ok_or_else(|| {
                Error::Config("edge-of-ball attack needs the current center and radius".into())
            })?;
            let dim = ctx.center.dim();
            let u = ctx
                .direction
                .and_then(|d| d.normalized())
                .unwrap_or_else(|| Vector::unit(dim, 0));
            u.check_dim(dim)?;
            let mut out = ctx.center.clone();
            if ctx.radius.is_finite() {
                out.axpy((1.0 - margin) * ctx.radius, &u);
            }
            Ok(out)
        }
    }
}

/// Which clients are Byzantine and how they behave.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ByzantineSchedule {
    pub beta: f64,
    pub kind: AttackKind,
}

impl ByzantineSchedule {
    pub fn new(beta: f64, kind: AttackKind) -> Self {
        ByzantineSchedule { beta, kind }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        self.kind.validate()
    }

    /// Number of flagged clients out of `n`: `⌊βn⌋`.
    pub fn count(&self, n: usize) -> usize {
        // guard against 0.1 * 30 = 2.9999999999999996
        ((self.beta * n as f64) + 1e-9).floor() as usize
    }

    /// Per-client flags, fixed by `seed`.
    pub fn flags(&self, n: usize, seed: u64) -> Vec<bool> {
        let mut out = vec![false; n];
        let m = self.count(n).min(n);
        if m == 0 || matches!(self.kind, AttackKind::None) {
            return out;
        }
        let mut rng = RngStream::root(seed, Purpose::Byzantine);
        for i in rng.sample_indices(n, m) {
            out[i] = true;
        }
        out
    }
}

/// A Byzantine point that re-positions itself at the edge of one cluster's ball.
#[derive(Debug, Clone)]
pub struct EdgeAttacker {
    /// Index of the attacker's point in the clustered set.
    pub slot: usize,
    /// Center the attacker targets.
    pub target: usize,
    /// Point the attacker pushes the center away from (typically the honest mean).
    pub anchor: Option<Vector>,
}

/// Moves every attacker to `v + (1 − margin) τ u`, where `v` is its target
/// center, `τ` the radius `policy` gives that center on the current points
/// and `u` points from the anchor toward `v`.
pub fn place_edge_attackers(
    state: &CenterState,
    points: &mut [Vector],
    attackers: &[EdgeAttacker],
    margin: f64,
    policy: &RadiusPolicy,
) {
    let kind = AttackKind::EdgeOfBall { margin };
    let radii: Vec<f64> = state.centers.iter().map(|c| policy.radius(points, c)).collect();
    for a in attackers {
        let center = &state.centers[a.target];
        let dir = a.anchor.as_ref().map(|m| center - m);
        let ctx = AttackContext {
            center,
            radius: radii[a.target],
            direction: dir.as_ref(),
        };
        if let Ok(p) = apply_attack(&kind, center, Some(&ctx)) {
            points[a.slot] = p;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold::clip_point;

    #[test]
    fn sign_flip_and_large_gradient() {
        let g = Vector::from([2.0, -1.0]);
        assert_eq!(apply_attack(&AttackKind::SignFlip, &g, None).unwrap(), Vector::from([-2.0, 1.0]));
        let g = Vector::from([1.0, 0.0]);
        let big = apply_attack(&AttackKind::LargeGradient { scale: 100.0 }, &g, None).unwrap();
        assert_eq!(big, Vector::from([100.0, 0.0]));
        assert_eq!(apply_attack(&AttackKind::None, &g, None).unwrap(), g);
    }

    #[test]
    fn edge_of_ball_survives_clipping() {
        let v = Vector::from([0.0, 0.0]);
        let u = Vector::from([1.0, 0.0]);
        let ctx = AttackContext { center: &v, radius: 3.0, direction: Some(&u) };
        let a = apply_attack(&AttackKind::EdgeOfBall { margin: 0.01 }, &v, Some(&ctx)).unwrap();
        assert!((a[0] - 2.97).abs() < 1e-12 && a[1] == 0.0);
        assert_eq!(clip_point(&a, &v, 3.0), a);
    }

    #[test]
    fn edge_of_ball_requires_context() {
        let g = Vector::from([1.0]);
        let err = apply_attack(&AttackKind::EdgeOfBall { margin: 0.1 }, &g, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn flag_count_and_determinism() {
        let s = ByzantineSchedule::new(0.1, AttackKind::SignFlip);
        let f = s.flags(30, 4);
        assert_eq!(f.iter().filter(|&&b| b).count(), 3);
        assert_eq!(f, s.flags(30, 4));
        assert!(ByzantineSchedule::new(0.0, AttackKind::SignFlip).flags(30, 4).iter().all(|b| !b));
        assert!(ByzantineSchedule::new(1.5, AttackKind::SignFlip).validate().is_err());
        assert!(AttackKind::EdgeOfBall { margin: 1.0 }.validate().is_err());
        assert!(AttackKind::LargeGradient { scale: 0.0 }.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn edge_of_ball_stays_in_ball(
            c in proptest::collection::vec(-10.0f64..10.0, 3),
            dir in proptest::collection::vec(-1.0f64..1.0, 3),
            tau in 0.0f64..20.0,
            eps in 0.001f64..0.999,
        ) {
            let v = Vector::from(c);
            let u = Vector::from(dir);
            let ctx = AttackContext { center: &v, radius: tau, direction: Some(&u) };
            let a = apply_attack(&AttackKind::EdgeOfBall { margin: eps }, &v, Some(&ctx)).unwrap();
            let r = (&a - &v).norm();
            proptest::prop_assert!(r <= tau + 1e-12);
            proptest::prop_assert!(r >= (1.0 - 2.0 * eps) * tau - 1e-12);
        }
    }
}
