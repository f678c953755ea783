//! Multi-bang penalty with box constraints, total variation, and the
//! proximal maps used by the primal-dual iteration.

use serde::{Deserialize, Serialize};

use crate::assembly::GradientOperator;
use crate::error::{Error, Result};
use crate::observation::Observation;

/// Strictly increasing admissible coefficient values `u_1 < ... < u_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MultiBangLevels(Vec<f64>);

impl MultiBangLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config("at least two multi-bang levels are required".into()));
        }
        if levels.iter().any(|v| !v.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "multi-bang levels must be finite and strictly increasing: {levels:?}"
            )));
        }
        Ok(Self(levels))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Scalar penalty `g(t)`: `+inf` outside `[u_1, u_m]`, otherwise
    /// `((u_i + u_{i+1}) t - u_i u_{i+1}) / 2` on `[u_i, u_{i+1}]`.
    pub fn scalar(&self, t: f64) -> f64 {
        let u = &self.0;
        if !(t >= self.min() && t <= self.max()) {
            return f64::INFINITY;
        }
        let i = u.partition_point(|&v| v <= t).clamp(1, u.len() - 1);
        let (a, b) = (u[i - 1], u[i]);
        0.5 * ((a + b) * t - a * b)
    }

    /// Scalar proximal map of `w -> gamma_alpha g(w)`.
    pub fn prox_scalar(&self, v: f64, gamma_alpha: f64) -> f64 {
        let u = &self.0;
        let m = u.len();
        if gamma_alpha == 0.0 {
            return v.clamp(self.min(), self.max());
        }
        let c = 0.5 * gamma_alpha;
        for i in 0..m {
            // Plateau of u_i, with the sentinels u_0 = -inf and u_{m+1} = +inf.
            let lower = if i == 0 {
                f64::NEG_INFINITY
            } else {
                (1.0 + c) * u[i] + c * u[i - 1]
            };
            let upper = if i + 1 == m {
                f64::INFINITY
            } else {
                (1.0 + c) * u[i] + c * u[i + 1]
            };
            if v >= lower && v <= upper {
                return u[i];
            }
            if i + 1 < m && v > upper && v < (1.0 + c) * u[i + 1] + c * u[i] {
                return v - c * (u[i] + u[i + 1]);
            }
        }
        // Only reachable for NaN input.
        v
    }
}

impl TryFrom<Vec<f64>> for MultiBangLevels {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MultiBangLevels> for Vec<f64> {
    fn from(l: MultiBangLevels) -> Self {
        l.0
    }
}

/// `sum_i d_i g(u_i)`
pub fn multibang_value(u: &[f64], levels: &MultiBangLevels, weights: &[f64]) -> f64 {
    u.iter()
        .zip(weights)
        .map(|(&v, d)| d * levels.scalar(v))
        .sum()
}

/// Componentwise prox of `gamma_alpha G` in the lumped-mass geometry.
pub fn multibang_prox(v: &[f64], gamma_alpha: f64, levels: &MultiBangLevels) -> Vec<f64> {
    v.iter().map(|&x| levels.prox_scalar(x, gamma_alpha)).collect()
}

/// `sum_K |(A_h u)_K|_2`
pub fn tv_value(u: &[f64], grad: &GradientOperator) -> f64 {
    grad.apply(u)
        .chunks_exact(2)
        .map(|q| q[0].hypot(q[1]))
        .sum()
}

/// Per-triangle radial projection onto `{|psi_K|_2 <= beta}`; `psi` is flattened.
pub fn project_dual_ball(psi: &[f64], beta: f64) -> Vec<f64> {
    let mut out = psi.to_vec();
    project_dual_ball_in_place(&mut out, beta);
    out
}

pub fn project_dual_ball_in_place(psi: &mut [f64], beta: f64) {
    for q in psi.chunks_exact_mut(2) {
        let norm = q[0].hypot(q[1]);
        if norm > beta {
            let s = if norm > 0.0 { beta / norm } else { 0.0 };
            q[0] *= s;
            q[1] *= s;
        }
    }
}

/// `(r + gamma_f (y_new - y_d)) / (1 + gamma_f)`
pub fn prox_fstar_residual(
    r: &Observation,
    gamma_f: f64,
    y_new: &Observation,
    y_d: &Observation,
) -> Result<Observation> {
    let shift = y_new.lincomb(gamma_f, y_d, -gamma_f)?;
    Ok(r.lincomb(1.0 / (1.0 + gamma_f), &shift, 1.0 / (1.0 + gamma_f))?)
}
