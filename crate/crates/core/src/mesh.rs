//! Structured triangulations of axis-aligned rectangles and the control
//! subspace of P1 functions supported in a control rectangle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a coordinate lies on a mesh line.
const ALIGN_TOL: f64 = 1e-9;

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self {
            x: [x0, x1],
            y: [y0, y1],
        }
    }

    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width() > 0.0 && self.height() > 0.0 && self.area().is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateRect {
                x0: self.x[0],
                x1: self.x[1],
                y0: self.y[0],
                y1: self.y[1],
            })
        }
    }

    /// Open-set membership.
    pub fn contains_open(&self, p: [f64; 2]) -> bool {
        p[0] > self.x[0] && p[0] < self.x[1] && p[1] > self.y[0] && p[1] < self.y[1]
    }

    /// Closed-set membership with an absolute slack `eps`.
    pub fn contains_closed(&self, p: [f64; 2], eps: f64) -> bool {
        p[0] >= self.x[0] - eps
            && p[0] <= self.x[1] + eps
            && p[1] >= self.y[0] - eps
            && p[1] <= self.y[1] + eps
    }

    pub fn contains_rect(&self, other: &Rect, eps: f64) -> bool {
        self.contains_closed([other.x[0], other.y[0]], eps)
            && self.contains_closed([other.x[1], other.y[1]], eps)
    }
}

/// Structured triangulation: every grid cell is split along its
/// lower-left to upper-right diagonal.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Rect,
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    areas: Vec<f64>,
    /// Gradients of the three local hat functions, per triangle.
    gradients: Vec<[[f64; 2]; 3]>,
}

impl Mesh {
    pub fn rectangle(domain: Rect, nx: usize, ny: usize) -> Result<Self> {
        domain.validate()?;
        if nx < 2 || ny < 2 {
            return Err(Error::TooFewNodes { nx, ny });
        }
        let hx = domain.width() / (nx - 1) as f64;
        let hy = domain.height() / (ny - 1) as f64;

        let mut nodes = Vec::with_capacity(nx * ny);
        let mut boundary = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            // Pin the last coordinate to the rectangle edge to avoid drift.
            let y = if j + 1 == ny {
                domain.y[1]
            } else {
                domain.y[0] + j as f64 * hy
            };
            for i in 0..nx {
                let x = if i + 1 == nx {
                    domain.x[1]
                } else {
                    domain.x[0] + i as f64 * hx
                };
                nodes.push([x, y]);
                boundary.push(i == 0 || j == 0 || i + 1 == nx || j + 1 == ny);
            }
        }

        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let n00 = j * nx + i;
                let n10 = n00 + 1;
                let n01 = n00 + nx;
                let n11 = n01 + 1;
                triangles.push([n00, n10, n11]);
                triangles.push([n00, n11, n01]);
            }
        }

        let mut areas = Vec::with_capacity(triangles.len());
        let mut gradients = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let (area, grads) = p1_geometry(tri.map(|v| nodes[v]));
            areas.push(area);
            gradients.push(grads);
        }

        Ok(Self {
            domain,
            nx,
            ny,
            hx,
            hy,
            nodes,
            triangles,
            boundary,
            areas,
            gradients,
        })
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.hx, self.hy)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        self.nodes[i]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, k: usize) -> [usize; 3] {
        self.triangles[k]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn area(&self, k: usize) -> f64 {
        self.areas[k]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Constant gradients of the three vertex hat functions on triangle `k`.
    pub fn basis_gradients(&self, k: usize) -> &[[f64; 2]; 3] {
        &self.gradients[k]
    }

    pub fn centroid(&self, k: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[k].map(|v| self.nodes[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradient of the P1 function with nodal values `values` on triangle `k`.
    pub fn gradient(&self, k: usize, values: &[f64]) -> [f64; 2] {
        let tri = &self.triangles[k];
        let g = &self.gradients[k];
        let mut out = [0.0; 2];
        for a in 0..3 {
            let v = values[tri[a]];
            out[0] += v * g[a][0];
            out[1] += v * g[a][1];
        }
        out
    }

    /// Finds a triangle containing `p` and the barycentric coordinates of `p`
    /// with respect to its vertices.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, [f64; 3])> {
        let eps = ALIGN_TOL * self.domain.width().max(self.domain.height());
        if !p.iter().all(|c| c.is_finite()) || !self.domain.contains_closed(p, eps) {
            return Err(Error::OutsideDomain { x: p[0], y: p[1] });
        }
        let sx = (p[0] - self.domain.x[0]) / self.hx;
        let sy = (p[1] - self.domain.y[0]) / self.hy;
        let i = (sx.floor().max(0.0) as usize).min(self.nx - 2);
        let j = (sy.floor().max(0.0) as usize).min(self.ny - 2);
        let s = (sx - i as f64).clamp(0.0, 1.0);
        let t = (sy - j as f64).clamp(0.0, 1.0);
        let cell = 2 * (j * (self.nx - 1) + i);
        if s >= t {
            // (n00, n10, n11)
            Ok((cell, [1.0 - s, s - t, t]))
        } else {
            // (n00, n11, n01)
            Ok((cell + 1, [1.0 - t, s, t - s]))
        }
    }

    /// Whether `v` lies on a grid line along the given axis (0 = x, 1 = y).
    fn on_grid_line(&self, axis: usize, v: f64) -> bool {
        let (origin, h, n) = match axis {
            0 => (self.domain.x[0], self.hx, self.nx),
            _ => (self.domain.y[0], self.hy, self.ny),
        };
        let s = (v - origin) / h;
        let r = s.round();
        (s - r).abs() < ALIGN_TOL * (n as f64) && r >= 0.0 && r <= (n - 1) as f64
    }

    /// Checks that `rect` is a proper rectangle inside the domain.
    pub fn check_inside(&self, rect: &Rect, what: &str) -> Result<()> {
        rect.validate()?;
        let eps = ALIGN_TOL * self.domain.width().max(self.domain.height());
        if self.domain.contains_rect(rect, eps) {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} is not contained in the domain")))
        }
    }

    /// Whether the edges of `rect` coincide with mesh lines.
    pub fn is_aligned(&self, rect: &Rect) -> bool {
        self.on_grid_line(0, rect.x[0])
            && self.on_grid_line(0, rect.x[1])
            && self.on_grid_line(1, rect.y[0])
            && self.on_grid_line(1, rect.y[1])
    }

    /// Checks that `rect` lies in the domain and that its edges coincide with mesh lines.
    pub fn check_aligned(&self, rect: &Rect, what: &str) -> Result<()> {
        rect.validate()?;
        let eps = ALIGN_TOL * self.domain.width().max(self.domain.height());
        let inside = self.domain.contains_rect(rect, eps);
        let aligned = self.on_grid_line(0, rect.x[0])
            && self.on_grid_line(0, rect.x[1])
            && self.on_grid_line(1, rect.y[0])
            && self.on_grid_line(1, rect.y[1]);
        if inside && aligned {
            Ok(())
        } else {
            Err(Error::Misaligned {
                what: what.to_string(),
            })
        }
    }

    /// Triangles whose interior lies inside `rect` (decided by centroid, exact
    /// for aligned rectangles).
    pub fn triangles_in(&self, rect: &Rect) -> Vec<usize> {
        (0..self.num_triangles())
            .filter(|&k| rect.contains_open(self.centroid(k)))
            .collect()
    }

    /// Nodes in the closure of `rect`.
    pub fn nodes_in_closure(&self, rect: &Rect) -> Vec<usize> {
        let eps = ALIGN_TOL * self.hx.min(self.hy);
        (0..self.num_nodes())
            .filter(|&i| rect.contains_closed(self.nodes[i], eps))
            .collect()
    }
}

/// Area and hat-function gradients of a positively oriented triangle.
fn p1_geometry(v: [[f64; 2]; 3]) -> (f64, [[f64; 2]; 3]) {
    let [a, b, c] = v;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let inv = 1.0 / det;
    // grad phi_a is the rotated opposite edge scaled by 1/det.
    let grads = [
        [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
        [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
        [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
    ];
    (0.5 * det, grads)
}

/// Nodal P1 functions supported in the closure of a control rectangle.
///
/// A node is a control degree of freedom when every triangle incident to it
/// lies inside the control rectangle, so that extension by zero stays
/// continuous across the rectangle's boundary.
#[derive(Debug, Clone)]
pub struct ControlSpace {
    rect: Rect,
    nodes: Vec<usize>,
    local_index: Vec<Option<usize>>,
    triangles: Vec<usize>,
    weights: Vec<f64>,
}

impl ControlSpace {
    pub fn new(mesh: &Mesh, rect: Rect) -> Result<Self> {
        mesh.check_inside(&rect, "control domain")?;
        let triangles = mesh.triangles_in(&rect);

        let mut inside = vec![false; mesh.num_triangles()];
        for &k in &triangles {
            inside[k] = true;
        }
        let mut incident = vec![0usize; mesh.num_nodes()];
        let mut incident_inside = vec![0usize; mesh.num_nodes()];
        let mut lumped = vec![0.0; mesh.num_nodes()];
        for (k, tri) in mesh.triangles().iter().enumerate() {
            for &v in tri {
                incident[v] += 1;
                if inside[k] {
                    incident_inside[v] += 1;
                    lumped[v] += mesh.area(k) / 3.0;
                }
            }
        }

        let mut nodes = Vec::new();
        let mut local_index = vec![None; mesh.num_nodes()];
        let mut weights = Vec::new();
        for v in 0..mesh.num_nodes() {
            if incident[v] > 0 && incident[v] == incident_inside[v] {
                local_index[v] = Some(nodes.len());
                nodes.push(v);
                weights.push(lumped[v]);
            }
        }

        Ok(Self {
            rect,
            nodes,
            local_index,
            triangles,
            weights,
        })
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    /// Number of control degrees of freedom.
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Global node ids of the control degrees of freedom.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn local_index(&self, node: usize) -> Option<usize> {
        self.local_index[node]
    }

    /// Triangles inside the control rectangle.
    pub fn triangles(&self) -> &[usize] {
        &self.triangles
    }

    /// Lumped mass weights `d_i`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Extension by zero to a nodal field on the whole mesh.
    pub fn extend(&self, u: &[f64], num_nodes: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_nodes];
        for (&node, &v) in self.nodes.iter().zip(u) {
            out[node] = v;
        }
        out
    }

    /// Restriction of a nodal field to the control degrees of freedom.
    pub fn restrict(&self, field: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&n| field[n]).collect()
    }

    /// Inner product weighted by the lumped masses.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(d, (x, y))| d * x * y)
            .sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }
}
