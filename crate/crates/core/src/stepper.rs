//! Stabilized space-time P1 x P1 discretization of the wave equation, written
//! as a three-level recursion.
//!
//! With `S = M + sigma tau^2 A(c)`, `C = 2M - (1 - 2 sigma) tau^2 A(c)` and
//! `R = M - (1/2 - sigma) tau^2 A(c)`, the scheme reads
//!
//! ```text
//! S y^1     = R y^0 + tau b_0
//! S y^{j+1} = C y^j - S y^{j-1} + tau b_j,      1 <= j < N
//! ```
//!
//! which is the space-time system tested against `phi e_j`, `j < N`, scaled by
//! `tau`. Forward, linearized and adjoint solves all reuse one factorization
//! of `S` per coefficient. The adjoint sweep applies the exact transpose of the
//! block lower-triangular space-time matrix.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::assembly::{assemble_mass, assemble_stiffness, stiffness_action_add};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::source::{ForceLoads, ForcingSpec, DEFAULT_PANELS};
use crate::sparse::{dot, NodePattern, SparseOperator, SpdSolver};

/// Uniform grid `t_i = i tau` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0 && final_time.is_finite()) || steps == 0 {
            return Err(Error::Config(format!(
                "time grid needs T > 0 and at least one step (T = {final_time}, N = {steps})"
            )));
        }
        Ok(Self { final_time, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    /// Number of steps `N`; there are `N + 1` time nodes.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.final_time
        } else {
            i as f64 * self.tau()
        }
    }

    /// Tridiagonal temporal mass matrix `int e_i e_j dt` applied to a sequence.
    pub fn mass_weights(&self, i: usize, j: usize) -> f64 {
        let tau = self.tau();
        let n = self.steps;
        if i == j {
            if i == 0 || i == n {
                tau / 3.0
            } else {
                2.0 * tau / 3.0
            }
        } else if i.abs_diff(j) == 1 {
            tau / 6.0
        } else {
            0.0
        }
    }
}

/// Coefficients `y^0, ..., y^N` of a field that is P1 in space and in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    levels: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn new(levels: Vec<Vec<f64>>) -> Self {
        Self { levels }
    }

    pub fn zeros(num_levels: usize, dim: usize) -> Self {
        Self {
            levels: vec![vec![0.0; dim]; num_levels],
        }
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels.first().map_or(0, Vec::len)
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }

    pub fn max_abs(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Euclidean inner product over all levels.
    pub fn dot(&self, other: &SpaceTimeField) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| dot(a, b))
            .sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        self.levels
            .iter_mut()
            .flatten()
            .for_each(|v| *v *= alpha);
    }
}

/// Initial displacement or velocity.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialField {
    #[default]
    Zero,
    /// Nodal values of a P1 function.
    Nodal(Vec<f64>),
    /// Precomputed load vector `(f, phi_i)`.
    Load(Vec<f64>),
}

/// Counters of the expensive linear-algebra events.
#[derive(Debug, Default)]
pub struct SolveStats {
    factorizations: AtomicUsize,
    forward: AtomicUsize,
    adjoint: AtomicUsize,
    linearized: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveCounts {
    pub factorizations: usize,
    pub forward: usize,
    pub adjoint: usize,
    pub linearized: usize,
}

impl std::ops::Sub for SolveCounts {
    type Output = SolveCounts;
    fn sub(self, rhs: Self) -> Self {
        SolveCounts {
            factorizations: self.factorizations - rhs.factorizations,
            forward: self.forward - rhs.forward,
            adjoint: self.adjoint - rhs.adjoint,
            linearized: self.linearized - rhs.linearized,
        }
    }
}

impl SolveStats {
    pub fn snapshot(&self) -> SolveCounts {
        SolveCounts {
            factorizations: self.factorizations.load(Ordering::Relaxed),
            forward: self.forward.load(Ordering::Relaxed),
            adjoint: self.adjoint.load(Ordering::Relaxed),
            linearized: self.linearized.load(Ordering::Relaxed),
        }
    }
}

/// Safety factor applied to the CFL time-step bound when `sigma < 1/4`.
pub const CFL_SAFETY: f64 = 0.9;

/// Coefficient-independent part of the discrete wave equation.
#[derive(Debug)]
pub struct WaveProblem {
    mesh: Mesh,
    pattern: NodePattern,
    mass: SparseOperator,
    mass_solver: SpdSolver,
    grid: TimeGrid,
    sigma: f64,
    forces: ForceLoads,
    y0: Vec<f64>,
    y1_load: Vec<f64>,
    check_cfl: bool,
    stats: SolveStats,
}

impl WaveProblem {
    pub fn new(
        mesh: Mesh,
        grid: TimeGrid,
        sigma: f64,
        forcing: &ForcingSpec,
        y0: &InitialField,
        y1: &InitialField,
    ) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
        }
        let pattern = NodePattern::new(&mesh);
        let mass = assemble_mass(&mesh, &pattern);
        let mass_solver = mass.cholesky()?;
        let forces = ForceLoads::new(&mesh, forcing, &grid, DEFAULT_PANELS)?;
        let n = mesh.num_nodes();
        let load = |f: &InitialField, what: &'static str| -> Result<Vec<f64>> {
            match f {
                InitialField::Zero => Ok(vec![0.0; n]),
                InitialField::Nodal(v) | InitialField::Load(v) if v.len() != n => {
                    Err(Error::Dimension {
                        context: what,
                        expected: n,
                        got: v.len(),
                    })
                }
                InitialField::Nodal(v) => Ok(mass.mul(v)),
                InitialField::Load(v) => Ok(v.clone()),
            }
        };
        let y0_load = load(y0, "initial displacement")?;
        let y1_load = load(y1, "initial velocity")?;
        let y0 = mass_solver.solve(&y0_load);
        Ok(Self {
            mesh,
            pattern,
            mass,
            mass_solver,
            grid,
            sigma,
            forces,
            y0,
            y1_load,
            check_cfl: true,
            stats: SolveStats::default(),
        })
    }

    /// Disables the refusal to run explicit-type schemes above the CFL bound.
    pub fn without_cfl_guard(mut self) -> Self {
        self.check_cfl = false;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn pattern(&self) -> &NodePattern {
        &self.pattern
    }

    pub fn mass(&self) -> &SparseOperator {
        &self.mass
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn forces(&self) -> &ForceLoads {
        &self.forces
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    /// `S_0 y_0`, the L2 projection of the initial displacement.
    pub fn initial_state(&self) -> &[f64] {
        &self.y0
    }

    /// L2 projection onto the P1 space of a load vector `(f, phi_i)`.
    pub fn project(&self, load: &[f64]) -> Vec<f64> {
        self.mass_solver.solve(load)
    }

    /// Power-iteration estimate of the largest eigenvalue of `M^{-1} A(coeff)`.
    pub fn spectral_radius(&self, stiffness: &SparseOperator, iterations: usize) -> f64 {
        let n = self.mesh.num_nodes();
        // Deterministic, non-smooth start vector.
        let mut x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 104_729) as f64 / 104_729.0 - 0.5).collect();
        let mut lambda = 0.0;
        for _ in 0..iterations {
            let ax = stiffness.mul(&x);
            let mx = self.mass.mul(&x);
            let num = dot(&x, &ax);
            let den = dot(&x, &mx);
            if den <= 0.0 {
                break;
            }
            lambda = num / den;
            x = self.mass_solver.solve(&ax);
            let norm = dot(&x, &self.mass.mul(&x)).sqrt();
            if norm == 0.0 {
                break;
            }
            x.iter_mut().for_each(|v| *v /= norm);
        }
        lambda
    }

    /// Largest admissible time step for `sigma < 1/4`, including the safety factor.
    pub fn cfl_limit(&self, stiffness: &SparseOperator) -> f64 {
        let lambda = self.spectral_radius(stiffness, 200);
        let deficit = 1.0 - 4.0 * self.sigma;
        if deficit <= 0.0 || lambda <= 0.0 {
            f64::INFINITY
        } else {
            CFL_SAFETY * 2.0 / (deficit * lambda).sqrt()
        }
    }

    /// Assembles and factorizes the step matrix for a nodal coefficient.
    pub fn stepper(&self, coeff: &[f64]) -> Result<Stepper<'_>> {
        let stiffness = assemble_stiffness(&self.mesh, &self.pattern, coeff)?;
        if self.check_cfl && self.sigma < 0.25 {
            let limit = self.cfl_limit(&stiffness);
            if self.grid.tau() > limit {
                return Err(Error::Cfl {
                    tau: self.grid.tau(),
                    limit,
                    sigma: self.sigma,
                });
            }
        }
        let tau2 = self.grid.tau().powi(2);
        let s = self.sigma;
        let system = self.mass.combine(1.0, &stiffness, s * tau2);
        let centre = self.mass.combine(2.0, &stiffness, -(1.0 - 2.0 * s) * tau2);
        let first = self.mass.combine(1.0, &stiffness, -(0.5 - s) * tau2);
        let solver = system.cholesky()?;
        self.stats.factorizations.fetch_add(1, Ordering::Relaxed);
        Ok(Stepper {
            problem: self,
            coeff: coeff.to_vec(),
            stiffness,
            system,
            centre,
            first,
            solver,
        })
    }
}

/// Factorized step matrix for one coefficient.
#[derive(Debug)]
pub struct Stepper<'a> {
    problem: &'a WaveProblem,
    coeff: Vec<f64>,
    stiffness: SparseOperator,
    system: SparseOperator,
    centre: SparseOperator,
    first: SparseOperator,
    solver: SpdSolver,
}

impl<'a> Stepper<'a> {
    pub fn problem(&self) -> &'a WaveProblem {
        self.problem
    }

    pub fn coefficient(&self) -> &[f64] {
        &self.coeff
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    /// `S = M + sigma tau^2 A`
    pub fn system_matrix(&self) -> &SparseOperator {
        &self.system
    }

    /// Runs the recursion from `y0`; `rhs(j, levels, out)` adds `tau b_j` to
    /// `out` and may read the already computed levels `0..=j`.
    fn march<F>(&self, y0: Vec<f64>, mut rhs: F) -> Result<SpaceTimeField>
    where
        F: FnMut(usize, &[Vec<f64>], &mut [f64]),
    {
        let steps = self.problem.grid.steps();
        let n = y0.len();
        let mut levels = Vec::with_capacity(steps + 1);
        levels.push(y0);
        let mut buf = vec![0.0; n];
        for j in 0..steps {
            if j == 0 {
                self.first.apply(&levels[0], &mut buf);
            } else {
                self.centre.apply(&levels[j], &mut buf);
            }
            rhs(j, &levels, &mut buf);
            self.solver.solve_in_place(&mut buf);
            if j > 0 {
                for (b, prev) in buf.iter_mut().zip(&levels[j - 1]) {
                    *b -= prev;
                }
            }
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable { step: j + 1 });
            }
            levels.push(buf.clone());
        }
        Ok(SpaceTimeField::new(levels))
    }

    /// Forward solve with the problem's forcing and initial data.
    pub fn forward(&self) -> Result<SpaceTimeField> {
        let p = self.problem;
        p.stats.forward.fetch_add(1, Ordering::Relaxed);
        let tau = p.grid.tau();
        self.march(p.y0.clone(), |j, _, out| {
            if j == 0 {
                for (o, l) in out.iter_mut().zip(&p.y1_load) {
                    *o += tau * l;
                }
            }
            p.forces.add_step(j, tau, out);
        })
    }

    /// Solves the space-time system with zero initial state and right-hand
    /// side rows `b_0, ..., b_{N-1}` (unscaled, i.e. as tested against `phi e_j`).
    pub fn solve_rows(&self, rows: &[Vec<f64>]) -> Result<SpaceTimeField> {
        let tau = self.problem.grid.tau();
        let n = self.problem.mesh.num_nodes();
        self.march(vec![0.0; n], |j, _, out| {
            for (o, b) in out.iter_mut().zip(&rows[j]) {
                *o += tau * b;
            }
        })
    }

    /// Derivative of the forward solution in direction of the nodal coefficient
    /// perturbation `dcoeff`, given the forward solution `y` for this coefficient.
    pub fn linearized(&self, dcoeff: &[f64], y: &SpaceTimeField) -> Result<SpaceTimeField> {
        let p = self.problem;
        p.stats.linearized.fetch_add(1, Ordering::Relaxed);
        let tau2 = p.grid.tau().powi(2);
        let s = p.sigma;
        let n = p.mesh.num_nodes();
        let mut combo = vec![0.0; n];
        self.march(vec![0.0; n], |j, _, out| {
            if j == 0 {
                for i in 0..n {
                    combo[i] = (0.5 - s) * y.levels[0][i] + s * y.levels[1][i];
                }
            } else {
                for i in 0..n {
                    combo[i] = s * y.levels[j - 1][i]
                        + (1.0 - 2.0 * s) * y.levels[j][i]
                        + s * y.levels[j + 1][i];
                }
            }
            stiffness_action_add(&p.mesh, dcoeff, &combo, -tau2, out);
        })
    }

    /// Discrete adjoint: solves `L^T p = G` for the block lower-triangular
    /// space-time matrix `L`, with `p^N = 0`. `loads[i]` is `G^i`; `loads[0]`
    /// is not used.
    pub fn adjoint(&self, loads: &[Vec<f64>]) -> Result<SpaceTimeField> {
        let p = self.problem;
        p.stats.adjoint.fetch_add(1, Ordering::Relaxed);
        let steps = p.grid.steps();
        if loads.len() != steps + 1 {
            return Err(Error::Dimension {
                context: "adjoint loads",
                expected: steps + 1,
                got: loads.len(),
            });
        }
        let tau = p.grid.tau();
        let n = p.mesh.num_nodes();
        let mut levels = vec![vec![0.0; n]; steps + 1];
        let mut buf = vec![0.0; n];
        // Column i of L^T: S p^{i-1} - C p^i + S p^{i+1} = tau G^i.
        for i in (1..=steps).rev() {
            self.centre.apply(&levels[i], &mut buf);
            for (b, g) in buf.iter_mut().zip(&loads[i]) {
                *b += tau * g;
            }
            self.solver.solve_in_place(&mut buf);
            if i + 1 <= steps {
                for (b, next) in buf.iter_mut().zip(&levels[i + 1]) {
                    *b -= next;
                }
            }
            if buf.iter().any(|v| !v.is_finite()) {
                return Err(Error::Unstable { step: i - 1 });
            }
            levels[i - 1].copy_from_slice(&buf);
        }
        Ok(SpaceTimeField::new(levels))
    }
}
