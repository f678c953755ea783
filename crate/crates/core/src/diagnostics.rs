//! Numerical self-checks of the forward operator: adjoint identity, Taylor
//! remainder of the linearization, finite-difference gradient and the
//! step-size condition.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::forward::{ControlGeometry, ForwardOperator};
use crate::observation::Observation;
use crate::pdps::StepSizes;

pub const ADJOINT_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const SLOPE_MIN: f64 = 1.9;
pub const SLOPE_MAX: f64 = 2.1;
/// Finite-difference steps tried per direction; the best agreement is reported.
pub const FD_SWEEP: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Which adjoint to test. `Corrupted` perturbs the gradient on purpose so the
/// report can be seen to fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointHook {
    #[default]
    Exact,
    Corrupted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointRow {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs| / (|dS du|_O |o|_O)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorRow {
    pub h: f64,
    pub remainder: f64,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientRow {
    pub direction: String,
    /// Step along the direction, scaled so the largest control change is `eps`.
    pub eps: f64,
    pub finite_difference: f64,
    pub adjoint: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub adjoint: Vec<AdjointRow>,
    pub taylor: Vec<TaylorRow>,
    pub gradient: Vec<GradientRow>,
    pub geometry: ControlGeometry,
    pub opnorm: f64,
    pub steps: StepSizes,
}

impl DiagnosticReport {
    pub fn adjoint_passed(&self) -> bool {
        self.adjoint.iter().all(|r| r.rel_error < ADJOINT_TOL)
    }

    /// Slopes over the three smallest step pairs; larger steps are still
    /// dominated by higher-order terms and are shown for reference only.
    pub fn taylor_slopes(&self) -> Vec<f64> {
        let slopes: Vec<f64> = self.taylor.iter().filter_map(|r| r.slope).collect();
        slopes[slopes.len().saturating_sub(3)..].to_vec()
    }

    pub fn taylor_passed(&self) -> bool {
        let s = self.taylor_slopes();
        !s.is_empty() && s.iter().all(|v| (SLOPE_MIN..=SLOPE_MAX).contains(v))
    }

    pub fn gradient_passed(&self) -> bool {
        self.gradient.iter().all(|r| r.rel_error < GRADIENT_TOL)
    }

    pub fn passed(&self) -> bool {
        self.adjoint_passed() && self.taylor_passed() && self.gradient_passed()
    }

    pub fn condition(&self) -> (f64, f64) {
        self.steps.condition(self.opnorm)
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl fmt::Display for DiagnosticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "adjoint identity <dS du, o>_O = <du, dS* o>_D (tol {ADJOINT_TOL:.0e})")?;
        writeln!(f, "{:>4} {:>24} {:>24} {:>12} {:>6}", "#", "lhs", "rhs", "rel", "")?;
        for (i, r) in self.adjoint.iter().enumerate() {
            writeln!(
                f,
                "{:>4} {:>24.16e} {:>24.16e} {:>12.3e} {:>6}",
                i,
                r.lhs,
                r.rhs,
                r.rel_error,
                verdict(r.rel_error < ADJOINT_TOL)
            )?;
        }
        writeln!(f)?;
        writeln!(f, "taylor remainder |S(u + h du) - S(u) - h dS du|_O (slope in [{SLOPE_MIN}, {SLOPE_MAX}])")?;
        writeln!(f, "{:>12} {:>14} {:>8}", "h", "remainder", "slope")?;
        for r in &self.taylor {
            let slope = r.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
            writeln!(f, "{:>12.4e} {:>14.6e} {:>8}", r.h, r.remainder, slope)?;
        }
        writeln!(f, "slopes checked: {:?} {}", self.taylor_slopes(), verdict(self.taylor_passed()))?;
        writeln!(f)?;
        writeln!(f, "gradient of 1/2 |S(u) - y_d|_O^2 vs central differences (tol {GRADIENT_TOL:.0e})")?;
        writeln!(f, "{:>10} {:>8} {:>22} {:>22} {:>12} {:>6}", "direction", "eps", "fd", "adjoint", "rel", "")?;
        for r in &self.gradient {
            writeln!(
                f,
                "{:>10} {:>8.0e} {:>22.14e} {:>22.14e} {:>12.3e} {:>6}",
                r.direction,
                r.eps,
                r.finite_difference,
                r.adjoint,
                r.rel_error,
                verdict(r.rel_error < GRADIENT_TOL)
            )?;
        }
        writeln!(f)?;
        let (lin, sq) = self.condition();
        writeln!(f, "operator norm estimate ({:?} geometry): {:.6e}", self.geometry, self.opnorm)?;
        writeln!(
            f,
            "gamma_f = {:e}, gamma_g = {:e}: gamma_f gamma_g L = {:.4e}, gamma_f gamma_g L^2 = {:.4e}",
            self.steps.gamma_f, self.steps.gamma_g, lin, sq
        )?;
        write!(f, "overall: {}", verdict(self.passed()))
    }
}

fn random_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_observation(op: &ForwardOperator, rng: &mut ChaCha20Rng) -> Observation {
    let o = op.observation().zeros();
    let rows = o.rows().iter().map(|r| random_vec(r.len(), -1.0, 1.0, rng)).collect();
    Observation::new(o.kind(), rows)
}

fn axpy(u: &[f64], h: f64, du: &[f64]) -> Vec<f64> {
    u.iter().zip(du).map(|(a, b)| a + h * b).collect()
}

/// Runs all checks at random points drawn from `seed`. Controls are drawn in
/// `[-0.3, 0.3]` so the coefficient stays positive for offsets near one.
pub fn run(
    op: &ForwardOperator,
    steps: StepSizes,
    geometry: ControlGeometry,
    seed: u64,
    hook: AdjointHook,
) -> Result<DiagnosticReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = op.control().dim();
    let corrupt = |g: &mut Vec<f64>| {
        if hook == AdjointHook::Corrupted {
            for (i, v) in g.iter_mut().enumerate() {
                *v *= 1.0 + 1e-3 * ((i % 7) as f64 + 1.0);
            }
        }
    };

    let mut adjoint = Vec::new();
    for _ in 0..3 {
        let u = random_vec(n, -0.3, 0.3, &mut rng);
        let du = random_vec(n, -1.0, 1.0, &mut rng);
        let o = random_observation(op, &mut rng);
        let lin = op.linearize(&u)?;
        let ds = lin.apply_ds(&du)?;
        let lhs = op.observation().inner(&ds, &o)?;
        let mut g = lin.apply_ds_adjoint(&o)?.nodal;
        corrupt(&mut g);
        let rhs = op.control().inner(&g, &du);
        let scale = op.observation().norm(&ds)? * op.observation().norm(&o)?;
        let rel_error = if scale > 0.0 { (lhs - rhs).abs() / scale } else { (lhs - rhs).abs() };
        adjoint.push(AdjointRow { lhs, rhs, rel_error });
    }

    let u = random_vec(n, -0.3, 0.3, &mut rng);
    let du = random_vec(n, -1.0, 1.0, &mut rng);
    let lin = op.linearize(&u)?;
    let s0 = lin.observed().clone();
    let ds = lin.apply_ds(&du)?;
    let mut taylor: Vec<TaylorRow> = Vec::new();
    for k in 0..7 {
        let h = 0.4 / f64::powi(2.0, k);
        let s = op.apply_s(&axpy(&u, h, &du))?;
        let rem = s.lincomb(1.0, &s0, -1.0)?.lincomb(1.0, &ds, -h)?;
        let remainder = op.observation().norm(&rem)?;
        let slope = taylor.last().map(|p| (p.remainder / remainder).log2());
        taylor.push(TaylorRow { h, remainder, slope });
    }

    // Data near the model output so the misfit has a representative size.
    let noise = random_observation(op, &mut rng);
    let y_d = s0.lincomb(1.0, &noise, 0.5 * s0.max_abs())?;
    let misfit = |v: &[f64]| -> Result<f64> {
        let r = op.apply_s(v)?.lincomb(1.0, &y_d, -1.0)?;
        Ok(0.5 * op.observation().inner(&r, &r)?)
    };
    let mut grad = lin.apply_ds_adjoint(&s0.lincomb(1.0, &y_d, -1.0)?)?.nodal;
    corrupt(&mut grad);
    let mut directions: Vec<(String, Vec<f64>)> = (0..3)
        .map(|i| (format!("random{i}"), random_vec(n, -1.0, 1.0, &mut rng)))
        .collect();
    for j in [0, n / 2, n - 1] {
        let mut e = vec![0.0; n];
        e[j] = 1.0 / op.control().weights()[j];
        directions.push((format!("node{j}"), e));
    }
    let mut gradient = Vec::new();
    for (name, d) in directions {
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let adj = op.control().inner(&grad, &d);
        let mut best: Option<GradientRow> = None;
        for eps in FD_SWEEP {
            let h = eps / scale;
            let fd = (misfit(&axpy(&u, h, &d))? - misfit(&axpy(&u, -h, &d))?) / (2.0 * h);
            let rel_error = (fd - adj).abs() / fd.abs().max(adj.abs()).max(f64::MIN_POSITIVE);
            if best.as_ref().is_none_or(|b| rel_error < b.rel_error) {
                best = Some(GradientRow { direction: name.clone(), eps, finite_difference: fd, adjoint: adj, rel_error });
            }
        }
        gradient.extend(best);
    }

    let opnorm = op.estimate_opnorm(&vec![0.0; n], geometry, 30)?;
    Ok(DiagnosticReport { adjoint, taylor, gradient, geometry, opnorm, steps })
}
