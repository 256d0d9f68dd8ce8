//! Cones used throughout: nonnegative orthant, Lorentz cone, the extended
//! second order cone `L(k, l) = {(x, u) : x >= |u| e}` and its dual
//! `M(k, l) = {(x, u) : e'x >= |u|, x >= 0}`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};

/// Default slack allowed on the defining inequalities.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeSpec {
    NonnegOrthant(usize),
    Lorentz(usize),
    Esoc(usize, usize),
    DualEsoc(usize, usize),
}

impl ConeSpec {
    /// Builds a cone, rejecting dimensions the definitions do not cover.
    pub fn new_checked(self) -> Result<Self> {
        match self {
            ConeSpec::NonnegOrthant(n) if n >= 1 => Ok(self),
            ConeSpec::Lorentz(n) if n >= 2 => Ok(self),
            ConeSpec::Esoc(k, l) | ConeSpec::DualEsoc(k, l) if k >= 2 && l >= 1 => Ok(self),
            _ => Err(Error::InvalidInput(format!("unsupported cone dimensions {self:?}"))),
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ConeSpec::NonnegOrthant(n) | ConeSpec::Lorentz(n) => n,
            ConeSpec::Esoc(k, l) | ConeSpec::DualEsoc(k, l) => k + l,
        }
    }

    pub fn dual(&self) -> ConeSpec {
        match *self {
            ConeSpec::Esoc(k, l) => ConeSpec::DualEsoc(k, l),
            ConeSpec::DualEsoc(k, l) => ConeSpec::Esoc(k, l),
            other => other,
        }
    }

    /// Largest violation of the defining inequalities (0 when inside).
    pub fn violation(&self, z: &DVector<f64>) -> Result<f64> {
        dim_check(z.len() == self.dim(), || {
            format!("{self:?} expects length {}, got {}", self.dim(), z.len())
        })?;
        let v = match *self {
            ConeSpec::NonnegOrthant(_) => (-z.min()).max(0.0),
            ConeSpec::Lorentz(_) => {
                let tail = z.rows(1, z.len() - 1).norm();
                (tail - z[0]).max(0.0)
            }
            ConeSpec::Esoc(k, l) => {
                let un = z.rows(k, l).norm();
                (un - z.rows(0, k).min()).max(0.0)
            }
            ConeSpec::DualEsoc(k, l) => {
                let x = z.rows(0, k);
                let un = z.rows(k, l).norm();
                (-x.min()).max(un - x.sum()).max(0.0)
            }
        };
        Ok(v)
    }
}

/// Membership with the default slack.
pub fn contains(cone: ConeSpec, z: &DVector<f64>) -> Result<bool> {
    contains_tol(cone, z, MEMBERSHIP_TOL)
}

pub fn contains_tol(cone: ConeSpec, z: &DVector<f64>, tol: f64) -> Result<bool> {
    Ok(cone.violation(z)? <= tol)
}

/// Moreau parts of a vector with respect to the Lorentz cone.
#[derive(Clone, Debug, PartialEq)]
pub struct MoreauParts {
    pub plus: DVector<f64>,
    pub minus: DVector<f64>,
    pub abs: DVector<f64>,
}

/// `x = plus - minus`, `plus` the projection onto the Lorentz cone and
/// `minus` the projection of `-x`; `abs = plus + minus`.
pub fn lorentz_moreau(x: &DVector<f64>) -> Result<MoreauParts> {
    dim_check(x.len() >= 2, || format!("Lorentz vectors need length >= 2, got {}", x.len()))?;
    let n = x.len();
    let x1 = x[0];
    let tail = x.rows(1, n - 1).into_owned();
    let nt = tail.norm();
    if nt <= x1 {
        return Ok(MoreauParts { plus: x.clone(), minus: DVector::zeros(n), abs: x.clone() });
    }
    if nt <= -x1 {
        return Ok(MoreauParts { plus: DVector::zeros(n), minus: -x, abs: -x });
    }
    // |x1| < |tail|, so nt > 0 here.
    let s = (x1 + nt) / (2.0 * nt);
    let mut plus = DVector::zeros(n);
    plus[0] = s * nt;
    plus.rows_mut(1, n - 1).copy_from(&(&tail * s));
    let minus = &plus - x;
    let mut abs = DVector::zeros(n);
    abs[0] = nt;
    abs.rows_mut(1, n - 1).copy_from(&(&tail * (x1.abs() * sign0(x1) / nt)));
    Ok(MoreauParts { plus, minus, abs })
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Componentwise `|x|` split for the orthant: `(max(x,0), max(-x,0), |x|)`.
pub fn orthant_moreau(x: &DVector<f64>) -> MoreauParts {
    MoreauParts {
        plus: x.map(|v| v.max(0.0)),
        minus: x.map(|v| (-v).max(0.0)),
        abs: x.abs(),
    }
}

/// `max(violation(z, K), violation(w, K*), |<z, w>|)`.
pub fn complementarity_residual(cone: ConeSpec, z: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    dim_check(z.len() == w.len(), || format!("pair lengths {} and {}", z.len(), w.len()))?;
    let vz = cone.violation(z)?;
    let vw = cone.dual().violation(w)?;
    Ok(vz.max(vw).max(z.dot(w).abs()))
}
