use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::{NnError, Result};
use crate::autodiff::SparseMatrix;
use crate::group::Representation;

/// Singular values below this (relative to the largest) span the null space.
const NULL_TOL: f64 = 1e-9;
/// Basis entries smaller than this are dropped.
const ZERO_TOL: f64 = 1e-14;

/// Orthonormal basis (Frobenius inner product) of the linear maps `B` with
/// `ρ_out(g)·B = B·ρ_in(g)` for every group element.
///
/// Direct sums are solved block by block: each (output component, input
/// component) pair gets its own small null-space problem, and the resulting
/// block bases are embedded at their offsets. Elements are stored sparsely as
/// `(row, col, value)` triples of a `dim_out × dim_in` matrix.
#[derive(Clone, Debug)]
pub struct IntertwinerBasis {
    rho_in: Representation,
    rho_out: Representation,
    elements: Vec<Vec<(usize, usize, f64)>>,
}

impl IntertwinerBasis {
    pub fn solve(rho_in: &Representation, rho_out: &Representation) -> Result<Self> {
        if rho_in.group() != rho_out.group() {
            return Err(NnError::Group(crate::group::GroupError::GroupMismatch(
                rho_in.group().to_string(),
                rho_out.group().to_string(),
            )));
        }
        let mut elements = Vec::new();
        let in_leaves = rho_in.leaves();
        for (out_off, out_leaf) in rho_out.leaves() {
            for &(in_off, in_leaf) in &in_leaves {
                for b in null_space_basis(in_leaf, out_leaf).iter() {
                    let mut entries = Vec::new();
                    for r in 0..b.nrows() {
                        for c in 0..b.ncols() {
                            let v = b[(r, c)];
                            if v.abs() > ZERO_TOL {
                                entries.push((out_off + r, in_off + c, v));
                            }
                        }
                    }
                    elements.push(entries);
                }
            }
        }
        Ok(Self {
            rho_in: rho_in.clone(),
            rho_out: rho_out.clone(),
            elements,
        })
    }

    pub fn rho_in(&self) -> &Representation {
        &self.rho_in
    }

    pub fn rho_out(&self) -> &Representation {
        &self.rho_out
    }

    pub fn count(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Vec<(usize, usize, f64)>] {
        &self.elements
    }

    pub fn dense(&self, k: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rho_out.dim(), self.rho_in.dim());
        for &(r, c, v) in &self.elements[k] {
            m[(r, c)] = v;
        }
        m
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        (0..self.count()).map(|k| self.dense(k)).collect()
    }

    /// `Σ cᵢBᵢ` as a dense matrix.
    pub fn combine(&self, coeffs: &[f64]) -> DMatrix<f64> {
        assert_eq!(coeffs.len(), self.count());
        let mut m = DMatrix::zeros(self.rho_out.dim(), self.rho_in.dim());
        for (e, &c) in self.elements.iter().zip(coeffs) {
            for &(r, col, v) in e {
                m[(r, col)] += c * v;
            }
        }
        m
    }

    /// Constant map from coefficients to the row-major flattened weight.
    pub fn realizer(&self) -> Arc<SparseMatrix> {
        let din = self.rho_in.dim();
        let entries = self
            .elements
            .iter()
            .enumerate()
            .flat_map(|(k, e)| e.iter().map(move |&(r, c, v)| (r * din + c, k, v)))
            .collect();
        Arc::new(SparseMatrix::new(
            self.rho_out.dim() * din,
            self.count(),
            entries,
        ))
    }

    /// Largest `|ρ_out(g)B − Bρ_in(g)|` over all basis elements and group elements.
    pub fn max_residual(&self) -> f64 {
        let group = self.rho_in.group();
        let mats: Vec<_> = group
            .elements()
            .map(|g| (self.rho_in.matrix(g).unwrap(), self.rho_out.matrix(g).unwrap()))
            .collect();
        let mut worst: f64 = 0.0;
        for k in 0..self.count() {
            let b = self.dense(k);
            for (ri, ro) in &mats {
                let d = ro * &b - &b * ri;
                worst = worst.max(d.amax());
            }
        }
        worst
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mats = self.matrices();
        let mut worst: f64 = 0.0;
        for (i, a) in mats.iter().enumerate() {
            for (j, b) in mats.iter().enumerate() {
                let dot = a.component_mul(b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

pub fn solve_intertwiner_basis(
    rho_in: &Representation,
    rho_out: &Representation,
) -> Result<IntertwinerBasis> {
    IntertwinerBasis::solve(rho_in, rho_out)
}

/// Stacked constraint matrix acting on row-major `vec(B)`: one block of rows
/// `ρ_out(g)B − Bρ_in(g)` per group element.
pub fn constraint_matrix(rho_in: &Representation, rho_out: &Representation) -> DMatrix<f64> {
    let (din, dout) = (rho_in.dim(), rho_out.dim());
    let n = din * dout;
    let group = rho_in.group();
    let mut c = DMatrix::zeros(group.order() * n, n);
    for (gi, g) in group.elements().enumerate() {
        let ri = rho_in.matrix(g).unwrap();
        let ro = rho_out.matrix(g).unwrap();
        for i in 0..dout {
            for j in 0..din {
                let row = gi * n + i * din + j;
                for k in 0..dout {
                    c[(row, k * din + j)] += ro[(i, k)];
                }
                for k in 0..din {
                    c[(row, i * din + k)] -= ri[(k, j)];
                }
            }
        }
    }
    c
}

type BlockCache = Vec<(Representation, Representation, Arc<Vec<DMatrix<f64>>>)>;

/// Block solutions are memoized for the whole process; networks reuse the
/// same few (input leaf, output leaf) pairs many times over.
pub(crate) fn null_space_basis(rho_in: &Representation, rho_out: &Representation) -> Arc<Vec<DMatrix<f64>>> {
    static CACHE: OnceLock<Mutex<BlockCache>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let hit = cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .iter()
        .find(|(i, o, _)| i == rho_in && o == rho_out)
        .map(|(_, _, b)| Arc::clone(b));
    if let Some(b) = hit {
        return b;
    }
    let basis = Arc::new(solve_null_space(rho_in, rho_out));
    cache
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push((rho_in.clone(), rho_out.clone(), Arc::clone(&basis)));
    basis
}

fn solve_null_space(rho_in: &Representation, rho_out: &Representation) -> Vec<DMatrix<f64>> {
    orbit_basis(rho_in, rho_out).unwrap_or_else(|| svd_null_space(rho_in, rho_out))
}

fn svd_null_space(rho_in: &Representation, rho_out: &Representation) -> Vec<DMatrix<f64>> {
    let (din, dout) = (rho_in.dim(), rho_out.dim());
    let c = constraint_matrix(rho_in, rho_out);
    let svd = c.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.max().max(1.0);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= NULL_TOL * smax)
        .map(|(k, _)| {
            let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
            // fix the sign so the largest entry is positive
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |a, x| if x.abs() > a.abs() + 1e-12 { x } else { a });
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            for x in v.iter_mut() {
                if x.abs() < ZERO_TOL {
                    *x = 0.0;
                }
            }
            DMatrix::from_row_slice(dout, din, &v)
        })
        .collect()
}

/// `ρ(g)` as a signed permutation: column `c` maps to `sign · e_{row}`.
fn signed_permutation(m: &DMatrix<f64>) -> Option<Vec<(usize, f64)>> {
    let mut seen = vec![false; m.nrows()];
    (0..m.ncols())
        .map(|c| {
            let mut hit = None;
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v.abs() < ZERO_TOL {
                    continue;
                }
                if hit.is_some() || (v.abs() - 1.0).abs() > 1e-12 || seen[r] {
                    return None;
                }
                seen[r] = true;
                hit = Some((r, v.signum()));
            }
            hit
        })
        .collect()
}

/// Sparse basis for signed-permutation representations (regular, grid, sign,
/// quarter-turn standard and their tensors). The group permutes the matrix
/// units `E_rc` up to sign, and the averaged orbit sums span the
/// intertwiners; orbits whose stabilizer flips the sign average to zero.
/// Supports are disjoint, so normalizing each sum gives an orthonormal basis.
fn orbit_basis(rho_in: &Representation, rho_out: &Representation) -> Option<Vec<DMatrix<f64>>> {
    let (din, dout) = (rho_in.dim(), rho_out.dim());
    let mut actions = Vec::new();
    for g in rho_in.group().elements() {
        let pi = signed_permutation(&rho_in.matrix(g).ok()?)?;
        let po = signed_permutation(&rho_out.matrix(g).ok()?)?;
        actions.push((pi, po));
    }
    let mut visited = vec![false; din * dout];
    let mut out = Vec::new();
    for start in 0..din * dout {
        if visited[start] {
            continue;
        }
        let (r, c) = (start / din, start % din);
        let mut b = DMatrix::<f64>::zeros(dout, din);
        for (pi, po) in &actions {
            let ((ro, so), (ci, si)) = (po[r], pi[c]);
            b[(ro, ci)] += so * si;
            visited[ro * din + ci] = true;
        }
        let norm = b.norm();
        if norm < 1e-9 {
            continue;
        }
        b /= norm;
        // same sign convention as the SVD path: largest entry positive
        if b.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() + 1e-12 { x } else { a }) < 0.0 {
            b = -b;
        }
        out.push(b);
    }
    Some(out)
}
