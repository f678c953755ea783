//! The control-to-observation map, its derivative, and the adjoint-based
//! gradient in the lumped-mass control geometry.

use serde::{Deserialize, Serialize};

use crate::assembly::GradientOperator;
use crate::error::{Error, Result};
use crate::mesh::{ControlSpace, Mesh};
use crate::observation::{Observation, ObservationOperator};
use crate::sparse::dot;
use crate::stepper::{SpaceTimeField, Stepper, TimeGrid, WaveProblem};

/// Inner product used on the control space for gradients and the prox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlGeometry {
    /// Lumped-mass weights `d_i`; gradients carry the Riesz factor `D^{-1}`.
    #[default]
    Lumped,
    /// Gradient terms as plain coefficient vectors (partial derivatives and
    /// `A_h^T psi`) with the componentwise prox weight `gamma alpha`.
    Euclidean,
}

/// Tridiagonal temporal coupling `K = (1/6 - sigma) tau^2 A_tau + M_tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalKMatrix {
    tau: f64,
    sigma: f64,
    steps: usize,
}

impl TemporalKMatrix {
    pub fn new(grid: &TimeGrid, sigma: f64) -> Self {
        Self {
            tau: grid.tau(),
            sigma,
            steps: grid.steps(),
        }
    }

    pub fn size(&self) -> usize {
        self.steps + 1
    }

    pub fn entry(&self, i: usize, l: usize) -> f64 {
        let n = self.steps;
        if i == l {
            if i == 0 || i == n {
                self.tau * (0.5 - self.sigma)
            } else {
                self.tau * (1.0 - 2.0 * self.sigma)
            }
        } else if i.abs_diff(l) == 1 && i <= n && l <= n {
            self.tau * self.sigma
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.size();
        nalgebra::DMatrix::from_fn(n, n, |i, l| self.entry(i, l))
    }
}

/// Gradient `dS(u)^* o`: the per-triangle density and its nodal Riesz
/// representative in the lumped-mass inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    /// One value per control triangle.
    pub raw: Vec<f64>,
    /// `g_j = (1/d_j) sum_{K containing j} |K|/3 raw_K`
    pub nodal: Vec<f64>,
}

impl GradientField {
    /// Euclidean representative `d_j g_j`, i.e. the partial derivatives.
    pub fn euclidean(&self, control: &ControlSpace) -> Vec<f64> {
        self.nodal
            .iter()
            .zip(control.weights())
            .map(|(g, d)| g * d)
            .collect()
    }
}

/// Everything needed to evaluate `S`, `dS` and `dS^*` on one scenario.
#[derive(Debug)]
pub struct ForwardOperator {
    problem: WaveProblem,
    control: ControlSpace,
    offset: Vec<f64>,
    observation: ObservationOperator,
    grad: GradientOperator,
    kmatrix: TemporalKMatrix,
    /// For each control triangle: mesh triangle and local control indices of its vertices.
    control_triangles: Vec<(usize, [Option<usize>; 3])>,
}

impl ForwardOperator {
    /// `offset` is the nodal background coefficient on the whole mesh.
    pub fn new(
        problem: WaveProblem,
        control: ControlSpace,
        offset: Vec<f64>,
        observation: ObservationOperator,
    ) -> Result<Self> {
        let mesh = problem.mesh();
        if offset.len() != mesh.num_nodes() {
            return Err(Error::Dimension {
                context: "background coefficient",
                expected: mesh.num_nodes(),
                got: offset.len(),
            });
        }
        if observation.grid() != problem.grid() {
            return Err(Error::Config("observation and state use different time grids".into()));
        }
        let grad = GradientOperator::new(mesh, &control);
        let kmatrix = TemporalKMatrix::new(problem.grid(), problem.sigma());
        let control_triangles = control
            .triangles()
            .iter()
            .map(|&k| (k, mesh.triangle(k).map(|v| control.local_index(v))))
            .collect();
        Ok(Self {
            problem,
            control,
            offset,
            observation,
            grad,
            kmatrix,
            control_triangles,
        })
    }

    pub fn problem(&self) -> &WaveProblem {
        &self.problem
    }

    pub fn mesh(&self) -> &Mesh {
        self.problem.mesh()
    }

    pub fn control(&self) -> &ControlSpace {
        &self.control
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn observation(&self) -> &ObservationOperator {
        &self.observation
    }

    /// The discrete gradient `A_h` on the control space.
    pub fn tv_gradient(&self) -> &GradientOperator {
        &self.grad
    }

    pub fn kmatrix(&self) -> &TemporalKMatrix {
        &self.kmatrix
    }

    /// Nodal coefficient `u_hat + E u`.
    pub fn coefficient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_control(u)?;
        let mut c = self.offset.clone();
        for (&node, v) in self.control.nodes().iter().zip(u) {
            c[node] += v;
        }
        Ok(c)
    }

    fn check_control(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.control.dim() {
            return Err(Error::Dimension {
                context: "control vector",
                expected: self.control.dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Factorizes at `u` and solves the forward problem once.
    pub fn linearize(&self, u: &[f64]) -> Result<Linearization<'_>> {
        let coeff = self.coefficient(u)?;
        let stepper = self.problem.stepper(&coeff)?;
        let state = stepper.forward()?;
        let observed = self.observation.observe(&state)?;
        Ok(Linearization {
            op: self,
            stepper,
            state,
            observed,
        })
    }

    pub fn apply_s(&self, u: &[f64]) -> Result<Observation> {
        Ok(self.linearize(u)?.observed)
    }

    pub fn apply_ds(&self, u: &[f64], du: &[f64]) -> Result<Observation> {
        self.linearize(u)?.apply_ds(du)
    }

    pub fn apply_ds_adjoint(&self, u: &[f64], o: &Observation) -> Result<GradientField> {
        self.linearize(u)?.apply_ds_adjoint(o)
    }

    /// Power-iteration estimate of the norm of `du -> (dS(u) du, A_h du)`
    /// into the observation space times Euclidean triangle vectors, with the
    /// control space normed according to `geometry`.
    pub fn estimate_opnorm(&self, u: &[f64], geometry: ControlGeometry, iterations: usize) -> Result<f64> {
        let lin = self.linearize(u)?;
        let n = self.control.dim();
        let norm_of = |x: &[f64]| match geometry {
            ControlGeometry::Lumped => self.control.norm(x),
            ControlGeometry::Euclidean => dot(x, x).sqrt(),
        };
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * 37 % 101) as f64 / 101.0)).collect();
        let mut estimate: f64 = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = norm_of(&x);
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let o = lin.apply_ds(&x)?;
            let q = self.grad.apply(&x);
            let value = self.observation.inner(&o, &o)? + dot(&q, &q);
            estimate = estimate.max(value.max(0.0).sqrt());
            let mut next = lin.apply_ds_adjoint(&o)?.nodal;
            let weights = self.control.weights();
            for ((v, t), d) in next.iter_mut().zip(self.grad.apply_transpose(&q)).zip(weights) {
                match geometry {
                    ControlGeometry::Lumped => *v += t / d,
                    ControlGeometry::Euclidean => *v = *v * d + t,
                }
            }
            x = next;
        }
        Ok(estimate)
    }
}

/// Forward solution and factorized step matrix at a fixed control.
#[derive(Debug)]
pub struct Linearization<'a> {
    op: &'a ForwardOperator,
    stepper: Stepper<'a>,
    state: SpaceTimeField,
    observed: Observation,
}

impl<'a> Linearization<'a> {
    pub fn state(&self) -> &SpaceTimeField {
        &self.state
    }

    /// `S(u)`
    pub fn observed(&self) -> &Observation {
        &self.observed
    }

    pub fn into_observed(self) -> Observation {
        self.observed
    }

    pub fn stepper(&self) -> &Stepper<'a> {
        &self.stepper
    }

    pub fn apply_ds(&self, du: &[f64]) -> Result<Observation> {
        let dcoeff = self.op.control.extend(du, self.op.mesh().num_nodes());
        self.op.check_control(du)?;
        let dy = self.stepper.linearized(&dcoeff, &self.state)?;
        self.op.observation.observe(&dy)
    }

    /// Solves the adjoint equation for `o`; returns `p^0, ..., p^N` with `p^N = 0`.
    pub fn adjoint_state(&self, o: &Observation) -> Result<SpaceTimeField> {
        let loads = self.op.observation.adjoint(o)?;
        self.stepper.adjoint(&loads)
    }

    pub fn apply_ds_adjoint(&self, o: &Observation) -> Result<GradientField> {
        let p = self.adjoint_state(o)?;
        Ok(self.contract(&p))
    }

    /// `raw_K = -sum_{i,l} K_il grad y^i . grad p^l` on the control triangles,
    /// followed by the lumped-mass Riesz map.
    fn contract(&self, p: &SpaceTimeField) -> GradientField {
        let op = self.op;
        let mesh = op.mesh();
        let k = &op.kmatrix;
        let steps = k.size() - 1;
        let tris = &op.control_triangles;
        let grads = |levels: &[f64]| -> Vec<[f64; 2]> {
            tris.iter().map(|&(t, _)| mesh.gradient(t, levels)).collect()
        };
        // p^N = 0, so only levels 0..N-1 of the adjoint contribute.
        let gp: Vec<Vec<[f64; 2]>> = (0..steps).map(|l| grads(p.level(l))).collect();
        let mut raw = vec![0.0; tris.len()];
        for i in 0..=steps {
            let gy = grads(self.state.level(i));
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(steps - 1);
            for l in lo..=hi {
                let w = k.entry(i, l);
                if w == 0.0 {
                    continue;
                }
                for ((r, a), b) in raw.iter_mut().zip(&gy).zip(&gp[l]) {
                    *r -= w * (a[0] * b[0] + a[1] * b[1]);
                }
            }
        }
        let weights = op.control.weights();
        let mut nodal = vec![0.0; weights.len()];
        for (&(t, locals), r) in tris.iter().zip(&raw) {
            let share = mesh.area(t) / 3.0 * r;
            for l in locals.into_iter().flatten() {
                nodal[l] += share;
            }
        }
        for (g, d) in nodal.iter_mut().zip(weights) {
            *g /= d;
        }
        GradientField { raw, nodal }
    }
}
