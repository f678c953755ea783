//! Nonlinear primal-dual proximal splitting for the coefficient problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::forward::ControlGeometry;
use crate::forward::ForwardOperator;
use crate::observation::Observation;
use crate::prox::{
    multibang_value, project_dual_ball_in_place, prox_fstar_residual, tv_value, MultiBangLevels,
};
use crate::sparse::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizes {
    pub gamma_f: f64,
    pub gamma_g: f64,
}

impl StepSizes {
    pub fn new(gamma_f: f64, gamma_g: f64) -> Result<Self> {
        let s = Self { gamma_f, gamma_g };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_f > 0.0 && self.gamma_f.is_finite() && self.gamma_g > 0.0 && self.gamma_g.is_finite()) {
            return Err(Error::Config(format!(
                "step sizes must be positive and finite (gamma_f = {}, gamma_g = {})",
                self.gamma_f, self.gamma_g
            )));
        }
        Ok(())
    }

    /// `(gamma_f gamma_g L, gamma_f gamma_g L^2)` for an operator norm estimate `L`;
    /// the usual sufficient condition asks for the second one to be below 1.
    pub fn condition(&self, opnorm: f64) -> (f64, f64) {
        let g = self.gamma_f * self.gamma_g;
        (g * opnorm, g * opnorm * opnorm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdpsParams {
    pub alpha: f64,
    pub beta: f64,
    pub levels: MultiBangLevels,
    pub steps: StepSizes,
    #[serde(default)]
    pub geometry: ControlGeometry,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
}

fn default_check_every() -> usize {
    10
}

impl PdpsParams {
    pub fn validate(&self) -> Result<()> {
        self.steps.validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Config(format!("tolerance must be >= 0, got {}", self.tol)));
        }
        if self.check_every == 0 {
            return Err(Error::Config("check_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdpsState {
    pub u: Vec<f64>,
    /// Extrapolated control `2 u^{k} - u^{k-1}` from the last step.
    pub u_bar: Vec<f64>,
    pub r: Observation,
    /// Flattened per-triangle dual vectors.
    pub psi: Vec<f64>,
    pub iteration: usize,
}

impl PdpsState {
    /// `u = 0`, `r = 0`, `psi = 0`.
    pub fn initial(op: &ForwardOperator) -> Self {
        let n = op.control().dim();
        Self {
            u: vec![0.0; n],
            u_bar: vec![0.0; n],
            r: op.observation().zeros(),
            psi: vec![0.0; 2 * op.tv_gradient().num_triangles()],
            iteration: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub iteration: usize,
    pub objective: f64,
    pub primal: f64,
    pub observation: f64,
    pub dual: f64,
    pub sum: f64,
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct PdpsOutcome {
    /// Final control, or the best checked iterate when not converged.
    pub u: Vec<f64>,
    /// Nodal coefficient `u_hat + E u` on the whole mesh.
    pub coefficient: Vec<f64>,
    pub history: Vec<ResidualReport>,
    pub converged: bool,
    pub iterations: usize,
    pub state: PdpsState,
}

impl PdpsOutcome {
    pub fn final_report(&self) -> Option<&ResidualReport> {
        self.history.last()
    }
}

/// Objective `1/2 |S(u) - y_d|_O^2 + alpha G(u) + beta TV(u)` given `S(u)`.
pub fn objective(
    op: &ForwardOperator,
    y_d: &Observation,
    params: &PdpsParams,
    u: &[f64],
    s_u: &Observation,
) -> Result<f64> {
    let misfit = s_u.lincomb(1.0, y_d, -1.0)?;
    let mut value = 0.5 * op.observation().inner(&misfit, &misfit)?;
    let penalty = multibang_value(u, &params.levels, op.control().weights());
    if penalty.is_infinite() {
        return Ok(f64::INFINITY);
    }
    value += params.alpha * penalty;
    if params.beta > 0.0 {
        value += params.beta * tv_value(u, op.tv_gradient());
    }
    Ok(value)
}

/// One iteration from `state`, plus the residuals of `state` (which come for
/// free from the quantities the step computes anyway).
pub fn pdps_step_with_report(
    op: &ForwardOperator,
    y_d: &Observation,
    params: &PdpsParams,
    state: &PdpsState,
) -> Result<(PdpsState, ResidualReport)> {
    let cs = op.control();
    let grad = op.tv_gradient();
    let StepSizes { gamma_f, gamma_g } = params.steps;
    let fail = |e: Error| match e {
        Error::Unstable { .. } | Error::Factorization | Error::NonPositiveCoefficient { .. } => {
            Error::Solver {
                iteration: state.iteration,
                source: Box::new(e),
            }
        }
        other => other,
    };

    let lin = op.linearize(&state.u).map_err(fail)?;
    let g = lin.apply_ds_adjoint(&state.r).map_err(fail)?;
    let tv_t = grad.apply_transpose(&state.psi);

    let mut u_new = Vec::with_capacity(state.u.len());
    match params.geometry {
        ControlGeometry::Lumped => {
            let ga = gamma_g * params.alpha;
            for (((u, g), t), d) in state.u.iter().zip(&g.nodal).zip(&tv_t).zip(cs.weights()) {
                let v = u - gamma_g * (g + t / d);
                u_new.push(params.levels.prox_scalar(v, ga));
            }
        }
        ControlGeometry::Euclidean => {
            let ga = gamma_g * params.alpha;
            for (((u, g), t), d) in state.u.iter().zip(&g.nodal).zip(&tv_t).zip(cs.weights()) {
                let v = u - gamma_g * (g * d + t);
                u_new.push(params.levels.prox_scalar(v, ga));
            }
        }
    }
    let u_bar: Vec<f64> = u_new.iter().zip(&state.u).map(|(a, b)| 2.0 * a - b).collect();

    let y_bar = op.apply_s(&u_bar).map_err(fail)?;
    let r_new = prox_fstar_residual(&state.r, gamma_f, &y_bar, y_d)?;
    let mut psi_new = state.psi.clone();
    let q = grad.apply(&u_bar);
    for (p, q) in psi_new.iter_mut().zip(&q) {
        *p += gamma_f * q;
    }
    project_dual_ball_in_place(&mut psi_new, params.beta);

    // Residuals of the fixed-point system at the incoming state.
    let diff: Vec<f64> = state.u.iter().zip(&u_new).map(|(a, b)| a - b).collect();
    let primal = cs.norm(&diff);
    let s_u = lin.observed();
    let r_fixed = prox_fstar_residual(&state.r, gamma_f, s_u, y_d)?;
    let r_diff = state.r.lincomb(1.0, &r_fixed, -1.0)?;
    let observation = op.observation().norm(&r_diff)?;
    let mut psi_fixed = state.psi.clone();
    for (p, q) in psi_fixed.iter_mut().zip(grad.apply(&state.u)) {
        *p += gamma_f * q;
    }
    project_dual_ball_in_place(&mut psi_fixed, params.beta);
    let dual = {
        let d: Vec<f64> = state.psi.iter().zip(&psi_fixed).map(|(a, b)| a - b).collect();
        dot(&d, &d).sqrt()
    };
    let obj = objective(op, y_d, params, &state.u, s_u)?;
    let report = ResidualReport {
        iteration: state.iteration,
        objective: obj,
        primal,
        observation,
        dual,
        sum: primal + observation + dual,
    };
    if !(report.sum.is_finite() && obj.is_finite()) || u_new.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: state.iteration,
        });
    }

    let next = PdpsState {
        u: u_new,
        u_bar,
        r: r_new,
        psi: psi_new,
        iteration: state.iteration + 1,
    };
    Ok((next, report))
}

pub fn pdps_step(
    op: &ForwardOperator,
    y_d: &Observation,
    params: &PdpsParams,
    state: &PdpsState,
) -> Result<PdpsState> {
    Ok(pdps_step_with_report(op, y_d, params, state)?.0)
}

/// Residuals of the fixed-point system at `state`.
pub fn residuals(
    op: &ForwardOperator,
    y_d: &Observation,
    params: &PdpsParams,
    state: &PdpsState,
) -> Result<ResidualReport> {
    Ok(pdps_step_with_report(op, y_d, params, state)?.1)
}

pub fn run(op: &ForwardOperator, y_d: &Observation, params: &PdpsParams) -> Result<PdpsOutcome> {
    run_with(op, y_d, params, |_| {})
}

/// Runs from the zero state, calling `on_check` after every residual evaluation.
pub fn run_with<F: FnMut(&ResidualReport)>(
    op: &ForwardOperator,
    y_d: &Observation,
    params: &PdpsParams,
    mut on_check: F,
) -> Result<PdpsOutcome> {
    params.validate()?;
    let mut state = PdpsState::initial(op);
    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut converged = false;
    while state.iteration < params.max_iter {
        let k = state.iteration;
        let (next, report) = pdps_step_with_report(op, y_d, params, &state)?;
        if k > 0 && k % params.check_every == 0 {
            history.push(report);
            on_check(&report);
            if best.as_ref().is_none_or(|(s, _)| report.sum < *s) {
                best = Some((report.sum, state.u.clone()));
            }
            if report.sum <= params.tol {
                converged = true;
                break;
            }
        }
        state = next;
    }
    let u = match (&best, converged) {
        (Some((_, u)), false) => u.clone(),
        _ => state.u.clone(),
    };
    let coefficient = op.coefficient(&u)?;
    Ok(PdpsOutcome {
        u,
        coefficient,
        history,
        converged,
        iterations: state.iteration,
        state,
    })
}
