//! Hard-concrete gates: a stretched, clamped logistic relaxation of a
//! Bernoulli variable, parameterized by its logit.

use crate::error::{domain, Result};
use crate::math::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateParams {
    /// Temperature.
    pub beta: f64,
    /// Lower stretch bound, below zero.
    pub gamma: f64,
    /// Upper stretch bound, above one.
    pub zeta: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams { beta: 2.0 / 3.0, gamma: -0.1, zeta: 1.1 }
    }
}

impl GateParams {
    pub fn new(beta: f64, gamma: f64, zeta: f64) -> Result<Self> {
        if !(beta > 0.0) || !(gamma < 0.0) || !(zeta > 1.0) {
            return Err(domain("gate parameters need beta > 0, gamma < 0, zeta > 1"));
        }
        Ok(GateParams { beta, gamma, zeta })
    }

    /// `beta * ln(-gamma / zeta)`, the logit shift of the nonzero probability.
    #[inline]
    fn shift(&self) -> f64 {
        self.beta * libm::log(-self.gamma / self.zeta)
    }

    #[inline]
    fn inner(&self, logit: f64, u: f64) -> f64 {
        sigmoid((libm::log(u / (1.0 - u)) + logit) / self.beta)
    }
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(domain(alloc::format!("gate noise u must lie in (0, 1), got {u}")))
    }
}

/// Relaxed gate value in `[0, 1]` for noise `u`.
pub fn sample_gate(logit: f64, u: f64, gp: &GateParams) -> Result<f64> {
    check_u(u)?;
    let s = gp.inner(logit, u);
    Ok((s * (gp.zeta - gp.gamma) + gp.gamma).clamp(0.0, 1.0))
}

/// Probability that the gate is nonzero.
pub fn prob_nonzero(logit: f64, gp: &GateParams) -> f64 {
    sigmoid(logit - gp.shift())
}

/// Derivative of [`prob_nonzero`] with respect to the logit.
pub fn prob_nonzero_grad(logit: f64, gp: &GateParams) -> f64 {
    let p = prob_nonzero(logit, gp);
    p * (1.0 - p)
}

/// Derivative of [`sample_gate`] with respect to the logit; zero wherever
/// the clamp is active.
pub fn gate_grad_logit(logit: f64, u: f64, gp: &GateParams) -> Result<f64> {
    check_u(u)?;
    let s = gp.inner(logit, u);
    let stretched = s * (gp.zeta - gp.gamma) + gp.gamma;
    if stretched <= 0.0 || stretched >= 1.0 {
        return Ok(0.0);
    }
    Ok((gp.zeta - gp.gamma) / gp.beta * s * (1.0 - s))
}

/// Gate value and its logit derivative in one evaluation. `u` must already
/// be validated.
#[inline]
pub(crate) fn gate_and_grad(logit: f64, u: f64, gp: &GateParams) -> (f64, f64) {
    let s = gp.inner(logit, u);
    let stretched = s * (gp.zeta - gp.gamma) + gp.gamma;
    if stretched <= 0.0 {
        (0.0, 0.0)
    } else if stretched >= 1.0 {
        (1.0, 0.0)
    } else {
        (stretched, (gp.zeta - gp.gamma) / gp.beta * s * (1.0 - s))
    }
}
