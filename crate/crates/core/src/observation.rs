//! Observation operators (subdomain restriction and patch means), their
//! adjoints, the observation inner product, and the synthetic noise models.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assembly::{patch_mean_weights, SparseVec};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Rect};
use crate::stepper::{SpaceTimeField, TimeGrid};

/// Where and how the state is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationGeometry {
    /// Nodal values on the triangles inside a subdomain.
    Restriction { region: Rect },
    /// Time series of the mean over each patch.
    PatchMean { patches: Vec<Rect> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    Restriction,
    PatchMean,
}

impl ObservationKind {
    pub fn name(self) -> &'static str {
        match self {
            ObservationKind::Restriction => "restriction",
            ObservationKind::PatchMean => "patch_mean",
        }
    }
}

/// Observed data at the time nodes: `rows[i][c]` is channel `c` at `t_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    kind: ObservationKind,
    rows: Vec<Vec<f64>>,
}

impl Observation {
    pub fn new(kind: ObservationKind, rows: Vec<Vec<f64>>) -> Self {
        Self { kind, rows }
    }

    pub fn zeros(kind: ObservationKind, num_times: usize, width: usize) -> Self {
        Self {
            kind,
            rows: vec![vec![0.0; width]; num_times],
        }
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_times(&self) -> usize {
        self.rows.len()
    }

    /// Number of channels (observed nodes or patches).
    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Values of one channel over time.
    pub fn series(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[c]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    fn check_same_shape(&self, other: &Observation) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::ObservationKind {
                expected: self.kind.name(),
            });
        }
        if self.num_times() != other.num_times() {
            return Err(Error::Dimension {
                context: "observation time nodes",
                expected: self.num_times(),
                got: other.num_times(),
            });
        }
        if self.width() != other.width() {
            return Err(Error::Dimension {
                context: "observation channels",
                expected: self.width(),
                got: other.width(),
            });
        }
        Ok(())
    }

    /// `alpha * self + beta * other`
    pub fn lincomb(&self, alpha: f64, other: &Observation, beta: f64) -> Result<Observation> {
        self.check_same_shape(other)?;
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect())
            .collect();
        Ok(Observation::new(self.kind, rows))
    }

    pub fn scaled(&self, alpha: f64) -> Observation {
        let rows = self
            .rows
            .iter()
            .map(|r| r.iter().map(|v| alpha * v).collect())
            .collect();
        Observation::new(self.kind, rows)
    }
}

/// A P1 mass matrix on a sub-mesh, applied element by element.
#[derive(Debug, Clone)]
struct LocalMass {
    elements: Vec<([usize; 3], f64)>,
}

impl LocalMass {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &(tri, area) in &self.elements {
            let c = area / 12.0;
            let s = x[tri[0]] + x[tri[1]] + x[tri[2]];
            for &a in &tri {
                out[a] += c * (x[a] + s);
            }
        }
    }

    fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(tri, area) in &self.elements {
            let c = area / 12.0;
            let sy = y[tri[0]] + y[tri[1]] + y[tri[2]];
            for &a in &tri {
                acc += c * x[a] * (y[a] + sy);
            }
        }
        acc
    }
}

#[derive(Debug, Clone)]
enum Channels {
    Restriction { nodes: Vec<usize>, mass: LocalMass },
    PatchMean { weights: Vec<SparseVec> },
}

/// The observation operator `B` on a fixed mesh and time grid.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    channels: Channels,
    grid: TimeGrid,
    num_nodes: usize,
}

impl ObservationOperator {
    pub fn new(mesh: &Mesh, grid: TimeGrid, geometry: &ObservationGeometry) -> Result<Self> {
        let channels = match geometry {
            ObservationGeometry::Restriction { region } => {
                mesh.check_inside(region, "observation domain")?;
                let triangles = mesh.triangles_in(region);
                let mut nodes: Vec<usize> =
                    triangles.iter().flat_map(|&k| mesh.triangle(k)).collect();
                nodes.sort_unstable();
                nodes.dedup();
                let mut local = vec![usize::MAX; mesh.num_nodes()];
                for (l, &n) in nodes.iter().enumerate() {
                    local[n] = l;
                }
                let elements = triangles
                    .into_iter()
                    .map(|k| (mesh.triangle(k).map(|v| local[v]), mesh.area(k)))
                    .collect();
                Channels::Restriction {
                    nodes,
                    mass: LocalMass { elements },
                }
            }
            ObservationGeometry::PatchMean { patches } => {
                if patches.is_empty() {
                    return Err(Error::Config("at least one observation patch is required".into()));
                }
                let weights = patches
                    .iter()
                    .map(|p| patch_mean_weights(mesh, p))
                    .collect::<Result<_>>()?;
                Channels::PatchMean { weights }
            }
        };
        Ok(Self {
            channels,
            grid,
            num_nodes: mesh.num_nodes(),
        })
    }

    pub fn kind(&self) -> ObservationKind {
        match self.channels {
            Channels::Restriction { .. } => ObservationKind::Restriction,
            Channels::PatchMean { .. } => ObservationKind::PatchMean,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        match &self.channels {
            Channels::Restriction { nodes, .. } => nodes.len(),
            Channels::PatchMean { weights } => weights.len(),
        }
    }

    /// Global node ids of the restriction channels (empty for patch means).
    pub fn observed_nodes(&self) -> &[usize] {
        match &self.channels {
            Channels::Restriction { nodes, .. } => nodes,
            Channels::PatchMean { .. } => &[],
        }
    }

    pub fn zeros(&self) -> Observation {
        Observation::zeros(self.kind(), self.grid.num_nodes(), self.width())
    }

    fn observe_level(&self, y: &[f64]) -> Vec<f64> {
        match &self.channels {
            Channels::Restriction { nodes, .. } => nodes.iter().map(|&n| y[n]).collect(),
            Channels::PatchMean { weights } => weights.iter().map(|w| w.dot(y)).collect(),
        }
    }

    pub fn observe(&self, y: &SpaceTimeField) -> Result<Observation> {
        if y.num_levels() != self.grid.num_nodes() || y.dim() != self.num_nodes {
            return Err(Error::Dimension {
                context: "observed field",
                expected: self.grid.num_nodes() * self.num_nodes,
                got: y.num_levels() * y.dim(),
            });
        }
        let rows = y.levels().iter().map(|l| self.observe_level(l)).collect();
        Ok(Observation::new(self.kind(), rows))
    }

    fn check(&self, o: &Observation) -> Result<()> {
        if o.kind() != self.kind() {
            return Err(Error::ObservationKind {
                expected: self.kind().name(),
            });
        }
        if o.num_times() != self.grid.num_nodes() || o.width() != self.width() {
            return Err(Error::Dimension {
                context: "observation",
                expected: self.grid.num_nodes() * self.width(),
                got: o.num_times() * o.width(),
            });
        }
        Ok(())
    }

    fn spatial_form(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.channels {
            Channels::Restriction { mass, .. } => mass.form(a, b),
            Channels::PatchMean { .. } => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// Observation inner product: temporal P1 mass times the spatial mass on
    /// the observed region (restriction) or the plain sum over patches.
    pub fn inner(&self, a: &Observation, b: &Observation) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        let n = self.grid.steps();
        let mut acc = 0.0;
        for i in 0..=n {
            acc += self.grid.mass_weights(i, i) * self.spatial_form(&a.rows[i], &b.rows[i]);
            if i < n {
                let w = self.grid.mass_weights(i, i + 1);
                acc += w * self.spatial_form(&a.rows[i], &b.rows[i + 1]);
                acc += w * self.spatial_form(&a.rows[i + 1], &b.rows[i]);
            }
        }
        Ok(acc)
    }

    pub fn norm(&self, o: &Observation) -> Result<f64> {
        Ok(self.inner(o, o)?.max(0.0).sqrt())
    }

    /// Temporal loads `G^i` with `<B y, o> = sum_i y^i . G^i` for every field `y`.
    pub fn adjoint(&self, o: &Observation) -> Result<Vec<Vec<f64>>> {
        self.check(o)?;
        let n = self.grid.steps();
        let width = self.width();
        let mut loads = Vec::with_capacity(n + 1);
        let mut mixed = vec![0.0; width];
        let mut weighted = vec![0.0; width];
        for i in 0..=n {
            mixed.fill(0.0);
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n);
            for l in lo..=hi {
                let w = self.grid.mass_weights(i, l);
                for (m, v) in mixed.iter_mut().zip(&o.rows[l]) {
                    *m += w * v;
                }
            }
            let mut g = vec![0.0; self.num_nodes];
            match &self.channels {
                Channels::Restriction { nodes, mass } => {
                    mass.apply(&mixed, &mut weighted);
                    for (&node, v) in nodes.iter().zip(&weighted) {
                        g[node] = *v;
                    }
                }
                Channels::PatchMean { weights } => {
                    for (w, v) in weights.iter().zip(&mixed) {
                        w.add_to(*v, &mut g);
                    }
                }
            }
            loads.push(g);
        }
        Ok(loads)
    }
}

/// `o + level ||o||_inf xi` with independent standard normal `xi`.
pub fn add_noise_gaussian(o: &Observation, level: f64, seed: u64) -> Result<Observation> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Config(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(o.clone());
    }
    let scale = level * o.max_abs();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows = o
        .rows()
        .iter()
        .map(|r| {
            r.iter()
                .map(|v| {
                    let xi: f64 = rng.sample(StandardNormal);
                    v + scale * xi
                })
                .collect()
        })
        .collect();
    Ok(Observation::new(o.kind(), rows))
}

/// `o_k + delta eta_k r_k(t)` with `r_k(t) = sum_i m_ik / i cos(4 pi t - s_ik pi)`
/// and `eta_k = ||o_k||_inf / ||r_k||_inf`, both maxima taken over the time nodes.
pub fn add_noise_cosine(
    o: &Observation,
    grid: &TimeGrid,
    delta: f64,
    terms: usize,
    seed: u64,
) -> Result<Observation> {
    if o.kind() != ObservationKind::PatchMean {
        return Err(Error::ObservationKind {
            expected: "patch_mean",
        });
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("delta must lie in [0, 1], got {delta}")));
    }
    if o.num_times() != grid.num_nodes() {
        return Err(Error::Dimension {
            context: "noisy observation time nodes",
            expected: grid.num_nodes(),
            got: o.num_times(),
        });
    }
    if delta == 0.0 {
        return Ok(o.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = o.rows().to_vec();
    for k in 0..o.width() {
        let coeffs: Vec<(f64, f64)> = (0..terms)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let r: Vec<f64> = (0..grid.num_nodes())
            .map(|i| {
                let t = grid.time(i);
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, &(m, s))| m / (j + 1) as f64 * (4.0 * PI * t - s * PI).cos())
                    .sum()
            })
            .collect();
        let o_max = o.rows().iter().fold(0.0, |m: f64, row| m.max(row[k].abs()));
        let r_max = r.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if o_max == 0.0 || r_max == 0.0 {
            return Err(Error::ZeroSeries { series: k });
        }
        let eta = o_max / r_max;
        for (row, rv) in rows.iter_mut().zip(&r) {
            row[k] += delta * eta * rv;
        }
    }
    Ok(Observation::new(o.kind(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn mesh() -> Mesh {
        Mesh::rectangle(Rect::new(-1.0, 1.0, -1.0, 1.0), 11, 11).unwrap()
    }

    fn random_field(m: &Mesh, grid: &TimeGrid, rng: &mut ChaCha8Rng) -> SpaceTimeField {
        SpaceTimeField::new(
            (0..grid.num_nodes())
                .map(|_| (0..m.num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        )
    }

    fn patches() -> ObservationGeometry {
        ObservationGeometry::PatchMean {
            patches: (0..5)
                .map(|i| {
                    let o = -1.0 + 0.4 * i as f64;
                    Rect::new(o, o + 0.4, 0.6, 1.0)
                })
                .collect(),
        }
    }

    fn restriction() -> ObservationGeometry {
        ObservationGeometry::Restriction {
            region: Rect::new(-1.0, 1.0, 0.4, 1.0),
        }
    }

    #[test]
    fn zero_and_constant_fields() {
        let m = mesh();
        let grid = TimeGrid::new(2.0, 6).unwrap();
        let op = ObservationOperator::new(&m, grid, &patches()).unwrap();
        let zero = SpaceTimeField::zeros(7, m.num_nodes());
        assert_eq!(op.observe(&zero).unwrap().max_abs(), 0.0);
        let c = SpaceTimeField::new(vec![vec![1.25; m.num_nodes()]; 7]);
        let o = op.observe(&c).unwrap();
        assert!(o.rows().iter().flatten().all(|v| (v - 1.25).abs() < 1e-14));
    }

    #[test]
    fn restriction_ignores_fields_outside_region() {
        let m = mesh();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let op = ObservationOperator::new(&m, grid, &restriction()).unwrap();
        let levels = (0..4)
            .map(|_| m.nodes().iter().map(|p| if p[1] < 0.3 { 1.0 } else { 0.0 }).collect())
            .collect();
        let o = op.observe(&SpaceTimeField::new(levels)).unwrap();
        assert_eq!(o.max_abs(), 0.0);
        assert_eq!(o.width(), 11 * 4);
    }

    #[test]
    fn constant_series_norm() {
        let m = mesh();
        let grid = TimeGrid::new(3.0, 9).unwrap();
        let op = ObservationOperator::new(
            &m,
            grid,
            &ObservationGeometry::PatchMean {
                patches: vec![Rect::new(-0.2, 0.2, 0.6, 1.0)],
            },
        )
        .unwrap();
        let c = 0.7;
        let o = Observation::new(ObservationKind::PatchMean, vec![vec![c]; 10]);
        assert!((op.inner(&o, &o).unwrap() - c * c * 3.0).abs() < 1e-14);
    }

    #[test]
    fn inner_product_matches_space_time_quadrature() {
        let m = Mesh::rectangle(Rect::new(0.0, 1.0, 0.0, 1.0), 4, 4).unwrap();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let region = Rect::new(0.0, 1.0, 1.0 / 3.0, 1.0);
        let op = ObservationOperator::new(&m, grid, &ObservationGeometry::Restriction { region })
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = op.observe(&random_field(&m, &grid, &mut rng)).unwrap();
        let b = op.observe(&random_field(&m, &grid, &mut rng)).unwrap();

        // Oracle: tensor Gauss quadrature (3 points in time, 3 in space) of the
        // space-time interpolants over the region.
        let nodes = op.observed_nodes().to_vec();
        let value = |o: &Observation, k: usize, bary: [f64; 3], t: f64| -> f64 {
            let i = ((t / grid.tau()).floor() as usize).min(grid.steps() - 1);
            let s = t / grid.tau() - i as f64;
            let tri = m.triangle(k);
            let at = |row: &Vec<f64>| -> f64 {
                (0..3)
                    .map(|a| bary[a] * row[nodes.iter().position(|&n| n == tri[a]).unwrap()])
                    .sum()
            };
            (1.0 - s) * at(&o.rows()[i]) + s * at(&o.rows()[i + 1])
        };
        let gt = [
            (-(0.6f64).sqrt(), 5.0 / 9.0),
            (0.0, 8.0 / 9.0),
            ((0.6f64).sqrt(), 5.0 / 9.0),
        ];
        let gs = [
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ];
        let mut oracle = 0.0;
        for k in m.triangles_in(&region) {
            for i in 0..grid.steps() {
                for &(x, wt) in &gt {
                    let t = grid.time(i) + 0.5 * grid.tau() * (x + 1.0);
                    for bary in gs {
                        let w = wt * 0.5 * grid.tau() * m.area(k) / 3.0;
                        oracle += w * value(&a, k, bary, t) * value(&b, k, bary, t);
                    }
                }
            }
        }
        let ip = op.inner(&a, &b).unwrap();
        assert!((ip - oracle).abs() <= 1e-12 * oracle.abs().max(1e-3), "{ip} vs {oracle}");
        assert!(op.inner(&a, &a).unwrap() > 0.0);
    }

    #[test]
    fn adjoint_identity_both_kinds() {
        let m = mesh();
        let grid = TimeGrid::new(1.5, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for geom in [patches(), restriction()] {
            let op = ObservationOperator::new(&m, grid, &geom).unwrap();
            let y = random_field(&m, &grid, &mut rng);
            let o = op.observe(&random_field(&m, &grid, &mut rng)).unwrap();
            let lhs = op.inner(&op.observe(&y).unwrap(), &o).unwrap();
            let g = op.adjoint(&o).unwrap();
            let rhs: f64 = y
                .levels()
                .iter()
                .zip(&g)
                .map(|(a, b)| a.iter().zip(b).map(|(x, z)| x * z).sum::<f64>())
                .sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_of_zero_and_time_delta() {
        let m = mesh();
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let op = ObservationOperator::new(
            &m,
            grid,
            &ObservationGeometry::PatchMean {
                patches: vec![Rect::new(-0.2, 0.2, 0.6, 1.0)],
            },
        )
        .unwrap();
        let g = op.adjoint(&op.zeros()).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
        let mut o = op.zeros();
        o.rows[3][0] = 1.0;
        let g = op.adjoint(&o).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let nonzero = gi.iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, (2..=4).contains(&i), "time node {i}");
        }
    }

    #[test]
    fn gaussian_noise_properties() {
        let o = Observation::new(
            ObservationKind::Restriction,
            (0..1000).map(|i| (0..100).map(|c| ((i * c) as f64).sin()).collect()).collect(),
        );
        assert_eq!(add_noise_gaussian(&o, 0.0, 1).unwrap(), o);
        let a = add_noise_gaussian(&o, 0.1, 42).unwrap();
        let b = add_noise_gaussian(&o, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let scale = 0.1 * o.max_abs();
        let diffs: Vec<f64> = a
            .rows()
            .iter()
            .flatten()
            .zip(o.rows().iter().flatten())
            .map(|(x, y)| (x - y) / scale)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((0.95..=1.05).contains(&std), "std {std}");
    }

    #[test]
    fn cosine_noise_normalization() {
        let grid = TimeGrid::new(3.0, 40).unwrap();
        let rows: Vec<Vec<f64>> = (0..41)
            .map(|i| (0..4).map(|k| ((i + 3 * k) as f64 * 0.3).sin() * (k + 1) as f64).collect())
            .collect();
        let o = Observation::new(ObservationKind::PatchMean, rows);
        assert_eq!(add_noise_cosine(&o, &grid, 0.0, 10, 5).unwrap(), o);
        let delta = 0.05;
        let noisy = add_noise_cosine(&o, &grid, delta, 10, 5).unwrap();
        assert_eq!(noisy, add_noise_cosine(&o, &grid, delta, 10, 5).unwrap());
        let diff = noisy.lincomb(1.0, &o, -1.0).unwrap();
        for k in 0..4 {
            let sup_noise = diff.series(k).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            let sup_obs = o.series(k).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            assert!((sup_noise - delta * sup_obs).abs() <= 1e-12 * delta * sup_obs);
        }

        let restr = Observation::new(ObservationKind::Restriction, vec![vec![1.0]; 41]);
        assert!(add_noise_cosine(&restr, &grid, 0.1, 10, 5).is_err());
        let mut zero_rows = o.rows().to_vec();
        zero_rows.iter_mut().for_each(|r| r[2] = 0.0);
        let z = Observation::new(ObservationKind::PatchMean, zero_rows);
        assert!(matches!(
            add_noise_cosine(&z, &grid, 0.1, 10, 5),
            Err(Error::ZeroSeries { series: 2 })
        ));
    }
}
