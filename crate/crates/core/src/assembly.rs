//! Space-level P1 operators: mass, coefficient-weighted stiffness, the
//! area-weighted gradient map on the control space, and load vectors.

use crate::error::{Error, Result};
use crate::mesh::{ControlSpace, Mesh, Rect};
use crate::sparse::{NodePattern, SparseOperator};

/// Sparse vector given as `(node, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * x[i]).sum()
    }

    /// `out += alpha * self`
    pub fn add_to(&self, alpha: f64, out: &mut [f64]) {
        for &(i, v) in &self.entries {
            out[i] += alpha * v;
        }
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.add_to(1.0, &mut out);
        out
    }
}

/// Exact P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh, pattern: &NodePattern) -> SparseOperator {
    pattern.assemble(mesh.num_triangles(), |k| {
        let c = mesh.area(k) / 12.0;
        Some([
            [2.0 * c, c, c],
            [c, 2.0 * c, c],
            [c, c, 2.0 * c],
        ])
    })
}

/// Element stiffness `mean(coeff) |K| grad phi_a . grad phi_b`; exact for P1 coefficients.
fn stiffness_element(mesh: &Mesh, k: usize, coeff: &[f64]) -> [[f64; 3]; 3] {
    let tri = mesh.triangle(k);
    let mean = (coeff[tri[0]] + coeff[tri[1]] + coeff[tri[2]]) / 3.0;
    let g = mesh.basis_gradients(k);
    let w = mean * mesh.area(k);
    let mut e = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            e[a][b] = w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
        }
    }
    e
}

/// Stiffness matrix `A(coeff)` for a strictly positive nodal coefficient.
pub fn assemble_stiffness(
    mesh: &Mesh,
    pattern: &NodePattern,
    coeff: &[f64],
) -> Result<SparseOperator> {
    if coeff.len() != mesh.num_nodes() {
        return Err(Error::Dimension {
            context: "stiffness coefficient",
            expected: mesh.num_nodes(),
            got: coeff.len(),
        });
    }
    if let Some((node, &value)) = coeff
        .iter()
        .enumerate()
        .find(|(_, &c)| !(c > 0.0 && c.is_finite()))
    {
        return Err(Error::NonPositiveCoefficient { node, value });
    }
    Ok(pattern.assemble(mesh.num_triangles(), |k| {
        Some(stiffness_element(mesh, k, coeff))
    }))
}

/// `out += alpha * A(coeff) y` for an arbitrary (possibly sign-changing) coefficient,
/// skipping triangles where the coefficient vanishes.
pub fn stiffness_action_add(mesh: &Mesh, coeff: &[f64], y: &[f64], alpha: f64, out: &mut [f64]) {
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let mean = (coeff[tri[0]] + coeff[tri[1]] + coeff[tri[2]]) / 3.0;
        if mean == 0.0 {
            continue;
        }
        let grad = mesh.gradient(k, y);
        let g = mesh.basis_gradients(k);
        let w = alpha * mean * mesh.area(k);
        for a in 0..3 {
            out[tri[a]] += w * (grad[0] * g[a][0] + grad[1] * g[a][1]);
        }
    }
}

/// Row sums of the mass matrix, `int phi_i dx`.
pub fn lumped_areas(mesh: &Mesh) -> Vec<f64> {
    let mut d = vec![0.0; mesh.num_nodes()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        for &v in tri {
            d[v] += mesh.area(k) / 3.0;
        }
    }
    d
}

/// Load vector `(f, phi_i)` by the edge-midpoint rule (exact for quadratics).
pub fn function_load<F: Fn([f64; 2]) -> f64>(mesh: &Mesh, f: F) -> Vec<f64> {
    let mut out = vec![0.0; mesh.num_nodes()];
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|v| mesh.node(v));
        let mid = |a: usize, b: usize| [(p[a][0] + p[b][0]) / 2.0, (p[a][1] + p[b][1]) / 2.0];
        // midpoint opposite vertex a
        let fm = [f(mid(1, 2)), f(mid(0, 2)), f(mid(0, 1))];
        let w = mesh.area(k) / 3.0;
        for a in 0..3 {
            // phi_a is 1/2 on the two adjacent edge midpoints, 0 on the opposite one.
            let s: f64 = (0..3).filter(|&m| m != a).map(|m| 0.5 * fm[m]).sum();
            out[tri[a]] += w * s;
        }
    }
    out
}

/// Point evaluation functional `phi_i(x)` of a Dirac source.
pub fn point_source_load(mesh: &Mesh, x: [f64; 2]) -> Result<SparseVec> {
    let (k, bary) = mesh.locate(x)?;
    let tri = mesh.triangle(k);
    let entries = (0..3)
        .filter(|&a| bary[a] != 0.0)
        .map(|a| (tri[a], bary[a]))
        .collect();
    Ok(SparseVec { entries })
}

/// Weights `w` with `w . y = mean of y_h over the patch`, integrated exactly
/// over the intersection of every triangle with the patch.
pub fn patch_mean_weights(mesh: &Mesh, patch: &Rect) -> Result<SparseVec> {
    mesh.check_inside(patch, "observation patch")?;
    let mut dense = vec![0.0; mesh.num_nodes()];
    let mut area = 0.0;
    for (k, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|v| mesh.node(v));
        let lo = |a: usize| p.iter().map(|q| q[a]).fold(f64::INFINITY, f64::min);
        let hi = |a: usize| p.iter().map(|q| q[a]).fold(f64::NEG_INFINITY, f64::max);
        if hi(0) <= patch.x[0] || lo(0) >= patch.x[1] || hi(1) <= patch.y[0] || lo(1) >= patch.y[1] {
            continue;
        }
        let poly = clip_to_rect(p.to_vec(), patch);
        let (a, c) = polygon_area_centroid(&poly);
        if a <= 0.0 {
            continue;
        }
        area += a;
        let g = mesh.basis_gradients(k);
        for (j, &v) in tri.iter().enumerate() {
            // phi_j is affine, so its integral is the area times its centroid value.
            let phi = 1.0 + g[j][0] * (c[0] - p[j][0]) + g[j][1] * (c[1] - p[j][1]);
            dense[v] += a * phi;
        }
    }
    if area <= 0.0 {
        return Err(Error::Config("observation patch has zero area".into()));
    }
    let entries = dense
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w != 0.0)
        .map(|(i, w)| (i, w / area))
        .collect();
    Ok(SparseVec { entries })
}

/// Sutherland-Hodgman clipping of a convex polygon against an axis-aligned box.
fn clip_to_rect(mut poly: Vec<[f64; 2]>, r: &Rect) -> Vec<[f64; 2]> {
    // (axis, bound, keep values >= bound)
    let planes = [(0, r.x[0], true), (0, r.x[1], false), (1, r.y[0], true), (1, r.y[1], false)];
    for (axis, bound, lower) in planes {
        if poly.is_empty() {
            break;
        }
        let inside = |q: &[f64; 2]| if lower { q[axis] >= bound } else { q[axis] <= bound };
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut q = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                q[axis] = bound;
                out.push(q);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    poly
}

fn polygon_area_centroid(poly: &[[f64; 2]]) -> (f64, [f64; 2]) {
    if poly.len() < 3 {
        return (0.0, [0.0, 0.0]);
    }
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a2 == 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    (0.5 * a2.abs(), [cx / (3.0 * a2), cy / (3.0 * a2)])
}

/// The area-weighted gradient map `u -> (|K| grad u_h|_K)_K` from control
/// degrees of freedom to per-triangle 2-vectors.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    /// For each control triangle: `(local control index, |K| grad phi)` of its
    /// vertices that are control degrees of freedom.
    rows: Vec<Vec<(usize, [f64; 2])>>,
    areas: Vec<f64>,
    num_controls: usize,
}

impl GradientOperator {
    pub fn new(mesh: &Mesh, cs: &ControlSpace) -> Self {
        let mut rows = Vec::with_capacity(cs.triangles().len());
        let mut areas = Vec::with_capacity(cs.triangles().len());
        for &k in cs.triangles() {
            let tri = mesh.triangle(k);
            let g = mesh.basis_gradients(k);
            let area = mesh.area(k);
            let row = (0..3)
                .filter_map(|a| {
                    cs.local_index(tri[a])
                        .map(|l| (l, [area * g[a][0], area * g[a][1]]))
                })
                .collect();
            rows.push(row);
            areas.push(area);
        }
        Self {
            rows,
            areas,
            num_controls: cs.dim(),
        }
    }

    /// Number of control triangles.
    pub fn num_triangles(&self) -> usize {
        self.rows.len()
    }

    pub fn num_controls(&self) -> usize {
        self.num_controls
    }

    pub fn triangle_areas(&self) -> &[f64] {
        &self.areas
    }

    /// `A_h u`, flattened as `[v_0x, v_0y, v_1x, ...]`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.rows.len()];
        for (t, row) in self.rows.iter().enumerate() {
            for &(l, g) in row {
                out[2 * t] += g[0] * u[l];
                out[2 * t + 1] += g[1] * u[l];
            }
        }
        out
    }

    /// `A_h^T psi` (Euclidean transpose).
    pub fn apply_transpose(&self, psi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_controls];
        for (t, row) in self.rows.iter().enumerate() {
            for &(l, g) in row {
                out[l] += g[0] * psi[2 * t] + g[1] * psi[2 * t + 1];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mesh(n: usize) -> Mesh {
        Mesh::rectangle(Rect::new(0.0, 1.0, 0.0, 1.0), n, n).unwrap()
    }

    /// Three-point interior Gauss rule on a triangle (degree 2).
    fn gauss3<F: Fn([f64; 3]) -> f64>(area: f64, f: F) -> f64 {
        let pts = [
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ];
        pts.iter().map(|&b| f(b)).sum::<f64>() * area / 3.0
    }

    #[test]
    fn mass_row_sums_are_lumped_areas() {
        let m = Mesh::rectangle(Rect::new(-1.0, 1.0, -1.0, 2.0), 6, 9).unwrap();
        let p = NodePattern::new(&m);
        let mass = assemble_mass(&m, &p);
        let ones = vec![1.0; m.num_nodes()];
        let rows = mass.mul(&ones);
        for (r, d) in rows.iter().zip(lumped_areas(&m)) {
            assert!((r - d).abs() < 1e-14);
        }
        assert!((mass.form(&ones, &ones) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn reference_triangle_mass_entries() {
        // The unit square with 2x2 nodes: each triangle has area 1/2, and node 1
        // (lower right) belongs only to the first triangle.
        let m = unit_mesh(2);
        let mass = assemble_mass(&m, &NodePattern::new(&m)).to_dense();
        assert!((mass[(1, 1)] - 1.0 / 12.0).abs() < 1e-15);
        assert!((mass[(1, 0)] - 1.0 / 24.0).abs() < 1e-15);
        assert!((mass[(1, 3)] - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(mass[(1, 2)], 0.0);
    }

    #[test]
    fn unit_square_total_mass() {
        let m = unit_mesh(5);
        let mass = assemble_mass(&m, &NodePattern::new(&m));
        let ones = vec![1.0; m.num_nodes()];
        assert!((mass.form(&ones, &ones) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mass_is_positive_definite_on_8x8() {
        let m = unit_mesh(8);
        let mass = assemble_mass(&m, &NodePattern::new(&m)).to_dense();
        assert!((&mass - mass.transpose()).amax() < 1e-16);
        let eig = mass.symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn stiffness_kernel_and_linearity() {
        let m = unit_mesh(6);
        let p = NodePattern::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeff: Vec<f64> = (0..m.num_nodes()).map(|_| rng.random_range(0.5..2.0)).collect();
        let a = assemble_stiffness(&m, &p, &coeff).unwrap();
        let ones = vec![1.0; m.num_nodes()];
        assert!(a.mul(&ones).iter().all(|r| r.abs() < 1e-12));
        let d = a.to_dense();
        assert!((&d - d.transpose()).amax() < 1e-14);

        let a1 = assemble_stiffness(&m, &p, &ones).unwrap();
        let a3 = assemble_stiffness(&m, &p, &vec![3.0; m.num_nodes()]).unwrap();
        for (x, y) in a3.values().iter().zip(a1.values()) {
            assert!((x - 3.0 * y).abs() < 1e-13);
        }
    }

    #[test]
    fn stiffness_matches_quadrature_oracle() {
        let m = unit_mesh(2);
        let p = NodePattern::new(&m);
        let coeff = [0.7, 1.9, 1.3, 0.4];
        let a = assemble_stiffness(&m, &p, &coeff).unwrap().to_dense();
        let mut oracle = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for k in 0..m.num_triangles() {
            let tri = m.triangle(k);
            let g = m.basis_gradients(k);
            for a in 0..3 {
                for b in 0..3 {
                    let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
                    oracle[(tri[a], tri[b])] += gauss3(m.area(k), |bary| {
                        (0..3).map(|c| bary[c] * coeff[tri[c]]).sum::<f64>() * gg
                    });
                }
            }
        }
        assert!((a - oracle).amax() < 1e-14);
    }

    #[test]
    fn stiffness_rejects_nonpositive_coefficient() {
        let m = unit_mesh(3);
        let p = NodePattern::new(&m);
        let mut c = vec![1.0; 9];
        c[4] = 0.0;
        assert!(matches!(
            assemble_stiffness(&m, &p, &c),
            Err(Error::NonPositiveCoefficient { node: 4, .. })
        ));
    }

    #[test]
    fn stiffness_action_matches_assembled() {
        let m = unit_mesh(5);
        let p = NodePattern::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let coeff: Vec<f64> = (0..m.num_nodes()).map(|_| rng.random_range(0.5..2.0)).collect();
        let y: Vec<f64> = (0..m.num_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = assemble_stiffness(&m, &p, &coeff).unwrap();
        let mut out = vec![0.0; m.num_nodes()];
        stiffness_action_add(&m, &coeff, &y, 2.0, &mut out);
        for (o, e) in out.iter().zip(a.mul(&y)) {
            assert!((o - 2.0 * e).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_operator_basic_cases() {
        let m = unit_mesh(5);
        let cs = ControlSpace::new(&m, Rect::new(0.0, 1.0, 0.0, 1.0)).unwrap();
        let grad = GradientOperator::new(&m, &cs);
        let c = vec![2.5; cs.dim()];
        assert!(grad.apply(&c).iter().all(|v| v.abs() < 1e-14));

        let x1: Vec<f64> = cs.nodes().iter().map(|&n| m.node(n)[0]).collect();
        let g = grad.apply(&x1);
        for (t, area) in grad.triangle_areas().iter().enumerate() {
            assert!((g[2 * t] - area).abs() < 1e-14);
            assert!(g[2 * t + 1].abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_operator_tv_matches_elementwise_oracle() {
        let m = Mesh::rectangle(Rect::new(0.0, 2.0, 0.0, 1.0), 7, 5).unwrap();
        let cs = ControlSpace::new(&m, Rect::new(0.0, 2.0, 0.25, 1.0)).unwrap();
        let grad = GradientOperator::new(&m, &cs);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..cs.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let au = grad.apply(&u);
        let tv: f64 = au.chunks(2).map(|v| v[0].hypot(v[1])).sum();

        // Oracle: closed-form gradient of the extended P1 function per triangle.
        let ext = cs.extend(&u, m.num_nodes());
        let oracle: f64 = cs
            .triangles()
            .iter()
            .map(|&k| {
                let [a, b, c] = m.triangle(k).map(|v| m.node(v));
                let [fa, fb, fc] = m.triangle(k).map(|v| ext[v]);
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                let gx = ((fb - fa) * (c[1] - a[1]) - (fc - fa) * (b[1] - a[1])) / det;
                let gy = ((fc - fa) * (b[0] - a[0]) - (fb - fa) * (c[0] - a[0])) / det;
                0.5 * det.abs() * gx.hypot(gy)
            })
            .sum();
        assert!((tv - oracle).abs() <= 1e-14 * oracle.max(1.0) * 10.0);
        assert!(tv > 0.0);

        // Transpose consistency.
        let psi: Vec<f64> = (0..au.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs = dot(&au, &psi);
        let rhs = dot(&u, &grad.apply_transpose(&psi));
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn point_sources() {
        let m = unit_mesh(5);
        let node = point_source_load(&m, m.node(7)).unwrap();
        assert_eq!(node.to_dense(m.num_nodes())[7], 1.0);
        assert!((node.sum() - 1.0).abs() < 1e-15);

        let mid = [(m.node(6)[0] + m.node(7)[0]) / 2.0, m.node(6)[1]];
        let d = point_source_load(&m, mid).unwrap().to_dense(m.num_nodes());
        assert!((d[6] - 0.5).abs() < 1e-14 && (d[7] - 0.5).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = [rng.random::<f64>(), rng.random::<f64>()];
            assert!((point_source_load(&m, p).unwrap().sum() - 1.0).abs() < 1e-14);
        }
        assert!(point_source_load(&m, [1.2, 0.0]).is_err());
    }

    #[test]
    fn patch_means() {
        let m = Mesh::rectangle(Rect::new(-1.0, 1.0, -1.0, 1.0), 11, 11).unwrap();
        let w = patch_mean_weights(&m, &Rect::new(-1.0, -0.6, 0.6, 1.0)).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-14);
        assert!((w.dot(&vec![3.5; m.num_nodes()]) - 3.5).abs() < 1e-14);

        // Whole-domain mean of a P1 field equals the quadrature mean.
        let whole = patch_mean_weights(&m, m.domain()).unwrap();
        let y: Vec<f64> = m.nodes().iter().map(|p| (2.0 * p[0]).sin() + p[1] * p[1]).collect();
        let oracle: f64 = (0..m.num_triangles())
            .map(|k| {
                let tri = m.triangle(k);
                gauss3(m.area(k), |b| (0..3).map(|a| b[a] * y[tri[a]]).sum())
            })
            .sum::<f64>()
            / 4.0;
        assert!((whole.dot(&y) - oracle).abs() < 1e-14);

        // Patches cutting through triangles: the mean of an affine field is its
        // value at the patch centre.
        let lin: Vec<f64> = m.nodes().iter().map(|p| 0.3 + 2.0 * p[0] - 1.5 * p[1]).collect();
        for r in [Rect::new(-0.93, -0.55, 0.61, 0.97), Rect::new(0.05, 0.12, -0.3, 0.71)] {
            let w = patch_mean_weights(&m, &r).unwrap();
            let c = [(r.x[0] + r.x[1]) / 2.0, (r.y[0] + r.y[1]) / 2.0];
            assert!((w.sum() - 1.0).abs() < 1e-13);
            assert!((w.dot(&lin) - (0.3 + 2.0 * c[0] - 1.5 * c[1])).abs() < 1e-13);
        }
        // A non-affine field against fine quadrature on the sub-rectangle.
        let r = Rect::new(-0.37, 0.44, 0.13, 0.52);
        let w = patch_mean_weights(&m, &r).unwrap();
        let n = 400;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = [
                    r.x[0] + (i as f64 + 0.5) * r.width() / n as f64,
                    r.y[0] + (j as f64 + 0.5) * r.height() / n as f64,
                ];
                let (k, b) = m.locate(p).unwrap();
                let tri = m.triangle(k);
                acc += (0..3).map(|a| b[a] * y[tri[a]]).sum::<f64>();
            }
        }
        let mean = acc / (n * n) as f64;
        assert!((w.dot(&y) - mean).abs() < 1e-4, "{} vs {mean}", w.dot(&y));

        assert!(patch_mean_weights(&m, &Rect::new(-1.0, -0.55, 0.6, 1.2)).is_err());
    }

    #[test]
    fn function_load_is_exact_for_linear_data() {
        let m = unit_mesh(4);
        let p = NodePattern::new(&m);
        let mass = assemble_mass(&m, &p);
        let x1: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        let load = function_load(&m, |p| p[0]);
        for (a, b) in load.iter().zip(mass.mul(&x1)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
