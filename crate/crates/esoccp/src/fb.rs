//! Fischer-Burmeister system of a mixed complementarity problem, its merit
//! function and a generalized Jacobian element.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::esoclcp::MixCp;

/// Rows with `sqrt(x^2 + f^2)` below this are treated as the FB origin.
pub const ORIGIN_TOL: f64 = 1e-14;
/// Default threshold for the index partition.
pub const PARTITION_TOL: f64 = 1e-8;

/// `sqrt(a^2 + b^2) - a - b`.
pub fn fb_scalar(a: f64, b: f64) -> f64 {
    a.hypot(b) - (a + b)
}

#[derive(Clone, Debug)]
pub struct FbSystem<P> {
    pub problem: P,
}

#[derive(Clone, Debug)]
pub struct FbJacobian {
    pub da: DVector<f64>,
    pub db: DVector<f64>,
    pub full: DMatrix<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexPartition {
    pub c: Vec<usize>,
    pub p: Vec<usize>,
    pub n: Vec<usize>,
    pub r: Vec<usize>,
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub gamma: Vec<usize>,
    pub delta: Vec<usize>,
}

impl<P: MixCp> FbSystem<P> {
    pub fn new(problem: P) -> Self {
        FbSystem { problem }
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// `(psi(x_i, F1_i))_i` stacked on `F2`.
    pub fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, y) = self.problem.split(z);
        let (f1, f2) = self.problem.eval(&x, &y);
        let k = self.problem.k();
        let mut out = DVector::zeros(self.dim());
        for i in 0..k {
            out[i] = fb_scalar(x[i], f1[i]);
        }
        out.rows_mut(k, f2.len()).copy_from(&f2);
        out
    }

    /// `[Da + Db A, Db B; C, D]`, with `(Da, Db) = (-1, -1)` on origin rows.
    pub fn jacobian(&self, z: &DVector<f64>) -> FbJacobian {
        let (x, y) = self.problem.split(z);
        let (f1, _) = self.problem.eval(&x, &y);
        let jac = self.problem.jacobian(&x, &y);
        let (k, m) = (self.problem.k(), self.problem.m());
        let mut da = DVector::zeros(k);
        let mut db = DVector::zeros(k);
        for i in 0..k {
            let r = x[i].hypot(f1[i]);
            if r < ORIGIN_TOL {
                da[i] = -1.0;
                db[i] = -1.0;
            } else {
                da[i] = x[i] / r - 1.0;
                db[i] = f1[i] / r - 1.0;
            }
        }
        let mut full = DMatrix::zeros(k + m, k + m);
        for i in 0..k {
            for j in 0..k {
                full[(i, j)] = db[i] * jac.ax[(i, j)];
            }
            full[(i, i)] += da[i];
            for j in 0..m {
                full[(i, k + j)] = db[i] * jac.by[(i, j)];
            }
        }
        full.view_mut((k, 0), (m, k)).copy_from(&jac.cx);
        full.view_mut((k, k), (m, m)).copy_from(&jac.dy);
        FbJacobian { da, db, full }
    }

    /// `0.5 |residual|^2`.
    pub fn merit(&self, z: &DVector<f64>) -> f64 {
        0.5 * self.residual(z).norm_squared()
    }

    /// `J' residual`.
    pub fn merit_gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let f = self.residual(z);
        self.jacobian(z).full.tr_mul(&f)
    }

    /// Residual, Jacobian and gradient in one pass.
    pub fn evaluate(&self, z: &DVector<f64>) -> (DVector<f64>, FbJacobian, DVector<f64>) {
        let f = self.residual(z);
        let j = self.jacobian(z);
        let g = j.full.tr_mul(&f);
        (f, j, g)
    }

    /// Complementarity/residual and nonsingularity index sets (0-based).
    pub fn partition_indices(&self, z: &DVector<f64>, tol: f64) -> IndexPartition {
        let (x, y) = self.problem.split(z);
        let (f1, _) = self.problem.eval(&x, &y);
        partition_pairs(&x, &f1, tol)
    }
}

/// Index sets of the pairs `(x_i, f_i)` at threshold `tol`.
pub fn partition_pairs(x: &DVector<f64>, f: &DVector<f64>, tol: f64) -> IndexPartition {
    let mut out = IndexPartition::default();
    for i in 0..x.len() {
        let (xi, fi) = (x[i], f[i]);
        if xi >= -tol && fi >= -tol && (xi * fi).abs() <= tol {
            out.c.push(i);
        } else {
            out.r.push(i);
            if xi > tol && fi > tol {
                out.p.push(i);
            } else {
                out.n.push(i);
            }
        }
        let x0 = xi.abs() <= tol;
        let f0 = fi.abs() <= tol;
        if x0 && fi > tol {
            out.alpha.push(i);
        } else if x0 && f0 {
            out.beta.push(i);
        } else if xi > tol && f0 {
            out.gamma.push(i);
        } else {
            out.delta.push(i);
        }
    }
    out
}
