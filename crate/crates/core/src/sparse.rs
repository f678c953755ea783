//! Compressed-row operators on the node graph of a mesh and the SPD solver
//! used for every linear system.

use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CsrMatrix;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Sparsity pattern of the P1 node graph together with the scatter map from
/// local element entries to positions in the value array.
#[derive(Debug, Clone)]
pub struct NodePattern {
    pattern: SparsityPattern,
    /// `scatter[k][a][b]` is the value slot of entry (tri[a], tri[b]) of triangle `k`.
    scatter: Vec<[[usize; 3]; 3]>,
    diagonal: Vec<usize>,
}

impl NodePattern {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.num_nodes();
        let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in mesh.triangles() {
            for &a in tri {
                for &b in tri {
                    neighbours[a].push(b);
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for row in &mut neighbours {
            row.sort_unstable();
            row.dedup();
            indices.extend_from_slice(row);
            offsets.push(indices.len());
        }
        let slot = |i: usize, j: usize| -> usize {
            let row = &indices[offsets[i]..offsets[i + 1]];
            offsets[i] + row.binary_search(&j).expect("entry in node graph")
        };
        let scatter = mesh
            .triangles()
            .iter()
            .map(|tri| {
                let mut s = [[0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        s[a][b] = slot(tri[a], tri[b]);
                    }
                }
                s
            })
            .collect();
        let diagonal = (0..n).map(|i| slot(i, i)).collect();
        let pattern = SparsityPattern::try_from_offsets_and_indices(n, n, offsets, indices)
            .expect("node graph pattern is well formed");
        Self {
            pattern,
            scatter,
            diagonal,
        }
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    pub fn dim(&self) -> usize {
        self.pattern.major_dim()
    }

    /// Assembles `sum_K elem(K)` into a symmetric operator.
    pub fn assemble<F>(&self, num_triangles: usize, mut elem: F) -> SparseOperator
    where
        F: FnMut(usize) -> Option<[[f64; 3]; 3]>,
    {
        let mut values = vec![0.0; self.nnz()];
        for k in 0..num_triangles {
            if let Some(e) = elem(k) {
                let s = &self.scatter[k];
                for a in 0..3 {
                    for b in 0..3 {
                        values[s[a][b]] += e[a][b];
                    }
                }
            }
        }
        self.with_values(values)
    }

    pub fn with_values(&self, values: Vec<f64>) -> SparseOperator {
        let matrix = CsrMatrix::try_from_pattern_and_values(self.pattern.clone(), values)
            .expect("value count matches pattern");
        SparseOperator {
            matrix,
            symmetric: true,
        }
    }

    pub fn diagonal_slots(&self) -> &[usize] {
        &self.diagonal
    }
}

/// A sparse matrix in compressed row form.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    matrix: CsrMatrix<f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn csr(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn values(&self) -> &[f64] {
        self.matrix.values()
    }

    /// `out = self * x`
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.apply_add(1.0, x, out);
    }

    /// `out += alpha * self * x`
    pub fn apply_add(&self, alpha: f64, x: &[f64], out: &mut [f64]) {
        let offsets = self.matrix.row_offsets();
        let cols = self.matrix.col_indices();
        let vals = self.matrix.values();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in offsets[i]..offsets[i + 1] {
                acc += vals[p] * x[cols[p]];
            }
            *o += alpha * acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(x, &mut out);
        out
    }

    /// Bilinear form `a^T self b`.
    pub fn form(&self, a: &[f64], b: &[f64]) -> f64 {
        let offsets = self.matrix.row_offsets();
        let cols = self.matrix.col_indices();
        let vals = self.matrix.values();
        let mut acc = 0.0;
        for (i, ai) in a.iter().enumerate() {
            let mut row = 0.0;
            for p in offsets[i]..offsets[i + 1] {
                row += vals[p] * b[cols[p]];
            }
            acc += ai * row;
        }
        acc
    }

    /// `alpha * self + beta * other`, both on the same pattern.
    pub fn combine(&self, alpha: f64, other: &SparseOperator, beta: f64) -> SparseOperator {
        debug_assert_eq!(self.matrix.nnz(), other.matrix.nnz());
        let values = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let matrix =
            CsrMatrix::try_from_pattern_and_values(self.matrix.pattern().clone(), values)
                .expect("shared pattern");
        SparseOperator {
            matrix,
            symmetric: self.symmetric && other.symmetric,
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.dim(), self.dim());
        for (i, j, v) in self.matrix.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }

    /// Cholesky factorization of a symmetric positive definite operator,
    /// stored as a dense band. Mesh node numbering keeps the half bandwidth
    /// at about one grid row, for which this beats general sparse storage.
    pub fn cholesky(&self) -> Result<SpdSolver> {
        debug_assert!(self.symmetric);
        let n = self.dim();
        let mut bw = 0;
        for (i, row) in self.matrix.row_iter().enumerate() {
            if let Some(&j) = row.col_indices().first() {
                bw = bw.max(i.saturating_sub(j));
            }
        }
        let width = bw + 1;
        // Row i holds columns i - bw ..= i at offsets 0 ..= bw.
        let mut band = vec![0.0; n * width];
        for (i, row) in self.matrix.row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                if j <= i {
                    band[i * width + bw + j - i] += v;
                }
            }
        }
        let mut inv_diag = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let k0 = lo.max(j.saturating_sub(bw));
                let ri = i * width + bw - i;
                let rj = j * width + bw - j;
                let mut s = band[ri + j];
                for k in k0..j {
                    s -= band[ri + k] * band[rj + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Factorization);
                    }
                    let d = s.sqrt();
                    band[ri + i] = d;
                    inv_diag[i] = 1.0 / d;
                } else {
                    band[ri + j] = s * inv_diag[j];
                }
            }
        }
        Ok(SpdSolver { bw, band, inv_diag })
    }
}

/// A factorized SPD matrix `L L^T` with banded `L`; solves reuse the factor.
pub struct SpdSolver {
    bw: usize,
    band: Vec<f64>,
    inv_diag: Vec<f64>,
}

impl std::fmt::Debug for SpdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdSolver")
            .field("dim", &self.dim())
            .field("half_bandwidth", &self.bw)
            .finish()
    }
}

impl SpdSolver {
    pub fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.dim();
        assert_eq!(rhs.len(), n, "right-hand side length");
        let width = self.bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.band[i * width + self.bw - (i - lo)..i * width + self.bw];
            let s: f64 = row.iter().zip(&rhs[lo..i]).map(|(l, y)| l * y).sum();
            rhs[i] = (rhs[i] - s) * self.inv_diag[i];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(self.bw);
            let x = rhs[i] * self.inv_diag[i];
            rhs[i] = x;
            let row = &self.band[i * width + self.bw - (i - lo)..i * width + self.bw];
            for (y, l) in rhs[lo..i].iter_mut().zip(row) {
                *y -= l * x;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    #[test]
    fn pattern_matches_node_graph() {
        let m = Mesh::rectangle(Rect::new(0.0, 1.0, 0.0, 1.0), 4, 4).unwrap();
        let p = NodePattern::new(&m);
        // Interior nodes have 7 neighbours (self included) in this triangulation.
        let interior = 5;
        let offs = p.pattern.major_offsets();
        assert_eq!(offs[interior + 1] - offs[interior], 7);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let m = Mesh::rectangle(Rect::new(0.0, 1.0, 0.0, 1.0), 5, 4).unwrap();
        let p = NodePattern::new(&m);
        let mut values = vec![0.0; p.nnz()];
        for &d in p.diagonal_slots() {
            values[d] = 4.0;
        }
        for (k, tri) in m.triangles().iter().enumerate() {
            let s = &p.scatter[k];
            let _ = tri;
            values[s[0][1]] -= 0.1;
            values[s[1][0]] -= 0.1;
        }
        let a = p.with_values(values);
        let x: Vec<f64> = (0..a.dim()).map(|i| (i as f64).sin()).collect();
        let b = a.mul(&x);
        let sol = a.cholesky().unwrap().solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_bandwidth_and_indefinite_input() {
        let m = Mesh::rectangle(Rect::new(0.0, 1.0, 0.0, 1.0), 6, 3).unwrap();
        let p = NodePattern::new(&m);
        let mut values = vec![0.0; p.nnz()];
        for &d in p.diagonal_slots() {
            values[d] = 1.0;
        }
        let a = p.with_values(values.clone());
        assert!(a.cholesky().unwrap().solve(&vec![2.0; a.dim()]).iter().all(|&v| v == 2.0));
        values[p.diagonal_slots()[5]] = -1.0;
        assert!(matches!(p.with_values(values).cholesky(), Err(Error::Factorization)));

        let mass = crate::assembly::assemble_mass(&m, &p);
        let solver = mass.cholesky().unwrap();
        assert!(solver.half_bandwidth() <= m.nx() + 2);
        let dense = mass.to_dense();
        let b: Vec<f64> = (0..mass.dim()).map(|i| 1.0 + (i as f64).cos()).collect();
        let expect = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b.clone()));
        for (s, e) in solver.solve(&b).iter().zip(expect.iter()) {
            assert!((s - e).abs() < 1e-12 * e.abs().max(1.0));
        }
    }
}
