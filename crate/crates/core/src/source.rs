//! Point sources with Ricker time signatures and their time-integrated loads
//! against the temporal hat functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::assembly::{point_source_load, SparseVec};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::stepper::TimeGrid;

/// Ricker wavelet `a (1 - 2 pi^2 h^2 (t - t0)^2) exp(-pi^2 h^2 (t - t0)^2)`.
pub fn ricker(t: f64, a: f64, h: f64, t0: f64) -> f64 {
    let s = (PI * h * (t - t0)).powi(2);
    a * (1.0 - 2.0 * s) * (-s).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Amplitude {
    Ricker { a: f64, h: f64, t0: f64 },
    Constant { value: f64 },
}

impl Amplitude {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Amplitude::Ricker { a, h, t0 } => ricker(t, a, h, t0),
            Amplitude::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub location: [f64; 2],
    pub placement: Placement,
    pub amplitude: Amplitude,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    #[serde(default)]
    pub sources: Vec<PointSource>,
}

impl ForcingSpec {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        let dom = mesh.domain();
        let (hx, hy) = mesh.spacing();
        let eps = 1e-9 * hx.min(hy);
        for (i, s) in self.sources.iter().enumerate() {
            let p = s.location;
            if !dom.contains_closed(p, eps) {
                return Err(Error::OutsideDomain { x: p[0], y: p[1] });
            }
            let on_boundary = (p[0] - dom.x[0]).abs() <= eps
                || (p[0] - dom.x[1]).abs() <= eps
                || (p[1] - dom.y[0]).abs() <= eps
                || (p[1] - dom.y[1]).abs() <= eps;
            if s.placement == Placement::Boundary && !on_boundary {
                return Err(Error::Config(format!(
                    "boundary source {i} at ({}, {}) is not on the boundary",
                    p[0], p[1]
                )));
            }
        }
        Ok(())
    }
}

/// Five-point Gauss-Legendre rule on [-1, 1].
const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664_0, 0.236_926_885_056_189_1),
];

/// Default number of Gauss panels per time interval.
pub const DEFAULT_PANELS: usize = 4;

/// `int f e_i dt` for every temporal hat `e_i`, by composite five-point Gauss
/// quadrature with `panels` panels per time interval.
pub fn hat_integrals<F: Fn(f64) -> f64>(f: F, grid: &TimeGrid, panels: usize) -> Vec<f64> {
    let n = grid.steps();
    let tau = grid.tau();
    let panels = panels.max(1);
    let mut out = vec![0.0; n + 1];
    for j in 0..n {
        let t0 = grid.time(j);
        let width = tau / panels as f64;
        let (mut down, mut up) = (0.0, 0.0);
        for p in 0..panels {
            let a = t0 + p as f64 * width;
            for &(x, w) in &GAUSS5 {
                let t = a + 0.5 * width * (x + 1.0);
                let ft = f(t) * w * 0.5 * width;
                let s = (t - t0) / tau;
                up += ft * s;
                down += ft * (1.0 - s);
            }
        }
        out[j] += down;
        out[j + 1] += up;
    }
    out
}

/// Time-integrated source loads `F^i = sum_k (int f_k e_i dt) delta_{x_k}`.
#[derive(Debug, Clone)]
pub struct ForceLoads {
    loads: Vec<SparseVec>,
    /// `coeffs[k][i] = int f_k e_i dt`
    coeffs: Vec<Vec<f64>>,
}

impl ForceLoads {
    pub fn new(mesh: &Mesh, forcing: &ForcingSpec, grid: &TimeGrid, panels: usize) -> Result<Self> {
        forcing.validate(mesh)?;
        let mut loads = Vec::with_capacity(forcing.sources.len());
        let mut coeffs = Vec::with_capacity(forcing.sources.len());
        for s in &forcing.sources {
            loads.push(point_source_load(mesh, s.location)?);
            let amp = s.amplitude;
            coeffs.push(hat_integrals(|t| amp.eval(t), grid, panels));
        }
        Ok(Self { loads, coeffs })
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }

    /// `out += alpha * F^i`
    pub fn add_step(&self, i: usize, alpha: f64, out: &mut [f64]) {
        for (load, c) in self.loads.iter().zip(&self.coeffs) {
            if c[i] != 0.0 {
                load.add_to(alpha * c[i], out);
            }
        }
    }

    pub fn dense(&self, i: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.add_step(i, 1.0, &mut out);
        out
    }
}
