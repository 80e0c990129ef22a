use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::logistic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgnitionParams {
    pub lambda: f64,
    pub g: f64,
    pub beta: f64,
    pub theta_a: f64,
    pub t_max: usize,
    pub tol: f64,
}

impl Default for IgnitionParams {
    fn default() -> Self {
        IgnitionParams {
            lambda: 0.5,
            g: 8.0,
            beta: 4.0,
            theta_a: 6.0,
            t_max: 500,
            tol: 1e-12,
        }
    }
}

impl IgnitionParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda, self.g, self.beta, self.theta_a, self.tol]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("ignition parameters must be finite".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0,1], got {}", self.lambda)));
        }
        if self.t_max < 1 {
            return Err(Error::Config("t_max must be >= 1".into()));
        }
        if self.tol <= 0.0 {
            return Err(Error::Config("tol must be > 0".into()));
        }
        Ok(())
    }

    /// One step of the amplitude gate `a ↦ σ(g·a + β·u − θ_a)`.
    pub fn amplitude_step(&self, a: f64, u: f64) -> f64 {
        logistic(self.g * a + self.beta * u - self.theta_a)
    }
}

/// Amplitude reached from `a0` by iterating the gate alone, independent of
/// the content loop. Used as the reference curve for ignition sweeps.
pub fn amplitude_orbit(p: &IgnitionParams, a0: f64, u: f64) -> f64 {
    let mut a = a0;
    for _ in 0..p.t_max {
        let next = p.amplitude_step(a, u);
        let done = (next - a).abs() < p.tol;
        a = next;
        if done {
            break;
        }
    }
    a
}

/// Smallest root in `[lo, hi]` of `σ(g·a + β·u − θ_a) − a`, found by
/// scanning for the first sign change and bisecting it. Starting from
/// `a0 = 0` the gate climbs monotonically to exactly this fixed point.
pub fn lowest_fixed_point(p: &IgnitionParams, u: f64) -> f64 {
    let f = |a: f64| p.amplitude_step(a, u) - a;
    const SCAN: usize = 10_000;
    let (mut lo, mut hi) = (0.0, 1.0);
    for s in 0..SCAN {
        let a = (s + 1) as f64 / SCAN as f64;
        if f(a) <= 0.0 {
            lo = s as f64 / SCAN as f64;
            hi = a;
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> IgnitionParams {
        IgnitionParams { t_max: 10_000, ..Default::default() }
    }

    #[test]
    fn no_input_stays_low() {
        let p = reference();
        let a = amplitude_orbit(&p, 0.0, 0.0);
        assert!(a < 0.5);
        assert!((a - lowest_fixed_point(&p, 0.0)).abs() < 1e-9);
        assert!((a - p.amplitude_step(a, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn full_input_ignites() {
        let p = reference();
        let a = amplitude_orbit(&p, 0.0, 1.0);
        assert!(a >= 0.5);
        assert!((a - lowest_fixed_point(&p, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn bistable_at_intermediate_input() {
        let p = reference();
        let low = amplitude_orbit(&p, 0.0, 0.3);
        let high = amplitude_orbit(&p, 1.0, 0.3);
        assert!(low < 0.5 && high > 0.5);
    }

    #[test]
    fn validation() {
        assert!(IgnitionParams { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(IgnitionParams { t_max: 0, ..Default::default() }.validate().is_err());
        assert!(IgnitionParams { tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(IgnitionParams { g: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(IgnitionParams::default().validate().is_ok());
    }
}
