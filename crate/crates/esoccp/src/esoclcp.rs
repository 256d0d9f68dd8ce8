//! Linear complementarity problems on `L(k, l)` and their reformulation as a
//! mixed complementarity problem on the nonnegative orthant.
//!
//! With `t = |u|` and `x = x~ + t e` the problem becomes: find `(x~, u, t)`
//! with `0 <= x~ _|_ F1 >= 0` and `F2 = 0`, where
//! `F1 = A(x~ + te) + Bu + p` and
//! `F2 = ((tC + u e'A)(x~ + te) + u e'(Bu + p) + t(Du + q); t^2 - |u|^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cones::{contains_tol, ConeSpec};
use crate::error::{dim_check, Error, Result};
use crate::linalg;

/// Condition number above which a block is reported as near singular.
pub const NEAR_SINGULAR_COND: f64 = 1e12;
/// `u` counts as nonzero above this norm.
pub const U_ZERO_TOL: f64 = 1e-10;

/// `T = (A B; C D)`, `r = (p; q)` on `L(k, l)`.
#[derive(Clone, Debug)]
pub struct EsocLcpInstance {
    pub k: usize,
    pub l: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub cond_t: f64,
    pub cond_a: f64,
    pub cond_d: f64,
}

impl EsocLcpInstance {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        p: DVector<f64>,
        q: DVector<f64>,
    ) -> Result<Self> {
        let k = a.nrows();
        let l = d.nrows();
        dim_check(k >= 2 && l >= 1, || format!("need k >= 2 and l >= 1, got k={k}, l={l}"))?;
        dim_check(a.ncols() == k, || format!("A is {}x{}", a.nrows(), a.ncols()))?;
        dim_check(b.shape() == (k, l), || format!("B is {:?}, expected ({k}, {l})", b.shape()))?;
        dim_check(c.shape() == (l, k), || format!("C is {:?}, expected ({l}, {k})", c.shape()))?;
        dim_check(d.ncols() == l, || format!("D is {}x{}", d.nrows(), d.ncols()))?;
        dim_check(p.len() == k && q.len() == l, || format!("p has {}, q has {}", p.len(), q.len()))?;
        let all_finite = [&a, &b, &c, &d].iter().all(|m| m.iter().all(|v| v.is_finite()))
            && p.iter().chain(q.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        let mut inst = EsocLcpInstance { k, l, a, b, c, d, p, q, cond_t: 0.0, cond_a: 0.0, cond_d: 0.0 };
        inst.refresh_conditioning();
        Ok(inst)
    }

    /// Splits `T` ((k+l) square) and `r` into blocks.
    pub fn from_t_r(t: &DMatrix<f64>, r: &DVector<f64>, k: usize, l: usize) -> Result<Self> {
        let n = k + l;
        dim_check(t.shape() == (n, n) && r.len() == n, || {
            format!("T is {:?}, r has {}, expected n = {n}", t.shape(), r.len())
        })?;
        Self::new(
            t.view((0, 0), (k, k)).into_owned(),
            t.view((0, k), (k, l)).into_owned(),
            t.view((k, 0), (l, k)).into_owned(),
            t.view((k, k), (l, l)).into_owned(),
            r.rows(0, k).into_owned(),
            r.rows(k, l).into_owned(),
        )
    }

    pub fn refresh_conditioning(&mut self) {
        self.cond_t = linalg::cond(&self.t());
        self.cond_a = linalg::cond(&self.a);
        self.cond_d = linalg::cond(&self.d);
    }

    pub fn near_singular(&self) -> bool {
        [self.cond_t, self.cond_a, self.cond_d].iter().any(|&c| !(c <= NEAR_SINGULAR_COND))
    }

    pub fn n(&self) -> usize {
        self.k + self.l
    }

    pub fn t(&self) -> DMatrix<f64> {
        let (k, l) = (self.k, self.l);
        let mut t = DMatrix::zeros(k + l, k + l);
        t.view_mut((0, 0), (k, k)).copy_from(&self.a);
        t.view_mut((0, k), (k, l)).copy_from(&self.b);
        t.view_mut((k, 0), (l, k)).copy_from(&self.c);
        t.view_mut((k, k), (l, l)).copy_from(&self.d);
        t
    }

    pub fn r(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.n());
        r.rows_mut(0, self.k).copy_from(&self.p);
        r.rows_mut(self.k, self.l).copy_from(&self.q);
        r
    }

    /// `F(x, u) = T (x; u) + r`, returned as `(y, v)`.
    pub fn eval_f(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = &self.a * x + &self.b * u + &self.p;
        let v = &self.c * x + &self.d * u + &self.q;
        (y, v)
    }

    pub fn cone(&self) -> ConeSpec {
        ConeSpec::Esoc(self.k, self.l)
    }
}

/// The 5x5 instance on `L(3, 2)` with the known rational solution
/// `(428/285, 325/1147, 1716/1657, 333/2693, -619/2428)`.
pub fn demo_instance() -> EsocLcpInstance {
    let t = DMatrix::from_row_slice(
        5,
        5,
        &[
            41., -3., -31., 18., 19., //
            28., 22., -33., 25., -29., //
            -23., -29., 11., -21., -43., //
            -9., -31., -20., -12., 47., //
            -8., 46., 50., -22., 21.,
        ],
    );
    let r = DVector::from_column_slice(&[-26., 4., 23., 44., -19.]);
    EsocLcpInstance::from_t_r(&t, &r, 3, 2).expect("static data")
}

/// Known solution `(x, u)` of [`demo_instance`].
pub fn demo_solution() -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_column_slice(&[428. / 285., 325. / 1147., 1716. / 1657.]),
        DVector::from_column_slice(&[333. / 2693., -619. / 2428.]),
    )
}

/// Jacobian blocks of a mixed problem with complementarity variables `x`
/// (size k) and free variables `y` (size m).
#[derive(Clone, Debug)]
pub struct MixJacobian {
    /// d F1 / d x, k x k.
    pub ax: DMatrix<f64>,
    /// d F1 / d y, k x m.
    pub by: DMatrix<f64>,
    /// d F2 / d x, m x k.
    pub cx: DMatrix<f64>,
    /// d F2 / d y, m x m.
    pub dy: DMatrix<f64>,
}

/// `0 <= x _|_ F1(x, y) >= 0`, `F2(x, y) = 0`, with `dim F2 = dim y`.
pub trait MixCp {
    fn k(&self) -> usize;
    fn m(&self) -> usize;
    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
    fn jacobian(&self, x: &DVector<f64>, y: &DVector<f64>) -> MixJacobian;

    fn dim(&self) -> usize {
        self.k() + self.m()
    }

    /// Splits a stacked point into `(x, y)`.
    fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, self.k()).into_owned(), z.rows(self.k(), self.m()).into_owned())
    }
}

/// Plain orthant LCP `0 <= x _|_ Mx + q >= 0` as a mixed problem with no
/// free block.
#[derive(Clone, Debug)]
pub struct OrthantLcp {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl MixCp for OrthantLcp {
    fn k(&self) -> usize {
        self.q.len()
    }
    fn m(&self) -> usize {
        0
    }
    fn eval(&self, x: &DVector<f64>, _y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.m * x + &self.q, DVector::zeros(0))
    }
    fn jacobian(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> MixJacobian {
        let k = self.k();
        MixJacobian {
            ax: self.m.clone(),
            by: DMatrix::zeros(k, 0),
            cx: DMatrix::zeros(0, k),
            dy: DMatrix::zeros(0, 0),
        }
    }
}

/// The smooth reformulation in the variables `(x~, u, t)`.
#[derive(Clone, Debug)]
pub struct MixCpInstance {
    pub source: EsocLcpInstance,
    ae: DVector<f64>,
    ce: DVector<f64>,
    eta: nalgebra::RowDVector<f64>,
    etb: nalgebra::RowDVector<f64>,
    eae: f64,
}

/// Builds the reformulated mixed problem.
pub fn reformulate_vi(inst: &EsocLcpInstance) -> MixCpInstance {
    let e = DVector::from_element(inst.k, 1.0);
    let ae = &inst.a * &e;
    MixCpInstance {
        ce: &inst.c * &e,
        eta: e.transpose() * &inst.a,
        etb: e.transpose() * &inst.b,
        eae: ae.sum(),
        ae,
        source: inst.clone(),
    }
}

impl MixCpInstance {
    /// Splits `(x~, u, t)`.
    pub fn parts(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>, f64) {
        let (k, l) = (self.source.k, self.source.l);
        (z.rows(0, k).into_owned(), z.rows(k, l).into_owned(), z[k + l])
    }

    pub fn stack(x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut z = DVector::zeros(x.len() + u.len() + 1);
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), u.len()).copy_from(u);
        z[x.len() + u.len()] = t;
        z
    }

    /// `(x~, u, t) = (x - |u| e, u, |u|)`.
    pub fn forward(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let t = u.norm();
        Self::stack(&x.add_scalar(-t), u, t)
    }

    pub fn f1(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, u, t) = self.parts(z);
        self.f1_parts(&x, &u, t)
    }

    pub fn f2(&self, z: &DVector<f64>) -> DVector<f64> {
        let (x, u, t) = self.parts(z);
        let f1 = self.f1_parts(&x, &u, t);
        self.f2_parts(&x, &u, t, &f1)
    }

    fn f1_parts(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64) -> DVector<f64> {
        let s = &self.source;
        &s.a * x + &self.ae * t + &s.b * u + &s.p
    }

    // With s = x~ + te and g = e'F1 the first block is t(Cs + Du + q) + g u.
    fn f2_parts(&self, x: &DVector<f64>, u: &DVector<f64>, t: f64, f1: &DVector<f64>) -> DVector<f64> {
        let s = &self.source;
        let l = s.l;
        let g = f1.sum();
        let v = &s.c * x + &self.ce * t + &s.d * u + &s.q;
        let mut out = DVector::zeros(l + 1);
        out.rows_mut(0, l).copy_from(&(v * t + u * g));
        out[l] = t * t - u.norm_squared();
        out
    }

    /// Jacobian blocks at `(x~, u, t)`: `A`, `(B, Ae)`, `(tC + u e'A; 0)` and
    /// `[(e'F1) I + u e'B + tD, Cx~ + 2tCe + u e'Ae + Du + q; -2u', 2t]`.
    pub fn jacobian_blocks(&self, z: &DVector<f64>) -> MixJacobian {
        let (x, y) = self.split(z);
        self.jacobian(&x, &y)
    }
}

impl MixCp for MixCpInstance {
    fn k(&self) -> usize {
        self.source.k
    }

    fn m(&self) -> usize {
        self.source.l + 1
    }

    fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let l = self.source.l;
        let u = y.rows(0, l).into_owned();
        let t = y[l];
        let f1 = self.f1_parts(x, &u, t);
        let f2 = self.f2_parts(x, &u, t, &f1);
        (f1, f2)
    }

    fn jacobian(&self, x: &DVector<f64>, y: &DVector<f64>) -> MixJacobian {
        let s = &self.source;
        let (k, l) = (s.k, s.l);
        let u = y.rows(0, l).into_owned();
        let t = y[l];
        let f1 = self.f1_parts(x, &u, t);
        let g = f1.sum();

        let mut by = DMatrix::zeros(k, l + 1);
        by.view_mut((0, 0), (k, l)).copy_from(&s.b);
        by.set_column(l, &self.ae);

        let mut cx = DMatrix::zeros(l + 1, k);
        cx.view_mut((0, 0), (l, k)).copy_from(&(&s.c * t + &u * &self.eta));

        let mut dy = DMatrix::zeros(l + 1, l + 1);
        let du = DMatrix::identity(l, l) * g + &u * &self.etb + &s.d * t;
        dy.view_mut((0, 0), (l, l)).copy_from(&du);
        let dt = &s.c * x + &self.ce * (2.0 * t) + &u * self.eae + &s.d * &u + &s.q;
        dy.view_mut((0, l), (l, 1)).copy_from(&dt);
        for j in 0..l {
            dy[(l, j)] = -2.0 * u[j];
        }
        dy[(l, l)] = 2.0 * t;

        MixJacobian { ax: s.a.clone(), by, cx, dy }
    }
}

/// `(x~, u, t) -> (x~ + t e, u)`.
pub fn back_map(z: &DVector<f64>, k: usize, l: usize) -> Result<(DVector<f64>, DVector<f64>)> {
    dim_check(z.len() == k + l + 1, || format!("expected {} entries, got {}", k + l + 1, z.len()))?;
    let t = z[k + l];
    if t < 0.0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!("t = {t} must be nonnegative")));
    }
    Ok((z.rows(0, k).add_scalar(t), z.rows(k, l).into_owned()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairCase {
    I,
    II,
    III,
    IV,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairClassification {
    pub case: PairCase,
    pub lambda: Option<f64>,
}

fn orthant_pair_ok(x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
    x.min() >= -tol && y.min() >= -tol && x.dot(y).abs() <= tol
}

/// Which case of the complementarity description of `C(L(k, l))` the pair
/// `((x, u), (y, v))` falls into, or `None` if it is not complementary.
pub fn classify_pair(
    x: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    tol: f64,
) -> Result<PairClassification> {
    dim_check(x.len() == y.len() && u.len() == v.len(), || {
        format!("x/y lengths {}/{}, u/v lengths {}/{}", x.len(), y.len(), u.len(), v.len())
    })?;
    let nu = u.norm();
    let nv = v.norm();
    let none = PairClassification { case: PairCase::None, lambda: None };
    let out = match (nu > U_ZERO_TOL, nv > U_ZERO_TOL) {
        (false, false) => {
            if orthant_pair_ok(x, y, tol) {
                PairClassification { case: PairCase::I, lambda: None }
            } else {
                none
            }
        }
        (false, true) => {
            if y.sum() >= nv - tol && orthant_pair_ok(x, y, tol) {
                PairClassification { case: PairCase::II, lambda: None }
            } else {
                none
            }
        }
        (true, false) => {
            if x.min() >= nu - tol && orthant_pair_ok(x, y, tol) {
                PairClassification { case: PairCase::III, lambda: None }
            } else {
                none
            }
        }
        (true, true) => {
            let lambda = y.sum() / nu;
            let collinear = (v + u * lambda).norm() <= tol * (1.0 + nv);
            let shifted = x.add_scalar(-nu);
            if lambda > 0.0
                && collinear
                && (y.sum() - nv).abs() <= tol * (1.0 + nv)
                && orthant_pair_ok(&shifted, y, tol * (1.0 + y.norm()))
            {
                PairClassification { case: PairCase::IV, lambda: Some(lambda) }
            } else {
                none
            }
        }
    };
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ItemIReport {
    pub holds: bool,
    /// Largest orthant complementarity violation of `(x, Ax + p)`.
    pub lcp_residual: f64,
    /// `e'(Ax + p) - |Cx + q|`, must be nonnegative.
    pub cone_slack: f64,
}

/// Checks the `u = 0` characterization: `x` solves the orthant LCP
/// `(A, p)` and `e'(Ax + p) >= |Cx + q|`.
pub fn reformulate_i(inst: &EsocLcpInstance, x: &DVector<f64>, tol: f64) -> Result<ItemIReport> {
    dim_check(x.len() == inst.k, || format!("x has {}, expected {}", x.len(), inst.k))?;
    let y = &inst.a * x + &inst.p;
    let v = &inst.c * x + &inst.q;
    let lcp_residual = (-x.min()).max(-y.min()).max(x.dot(&y).abs()).max(0.0);
    let cone_slack = y.sum() - v.norm();
    Ok(ItemIReport { holds: lcp_residual <= tol && cone_slack >= -tol, lcp_residual, cone_slack })
}

/// Verification tolerance for a candidate solution of the original problem.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub in_l: bool,
    pub in_m: bool,
    pub gap: f64,
    pub passed: bool,
}

/// Checks `(x, u) in L`, `F(x, u) in M` and `|<(x, u), F(x, u)>|`, all at `tol`.
pub fn verify_solution_tol(
    inst: &EsocLcpInstance,
    x: &DVector<f64>,
    u: &DVector<f64>,
    tol: f64,
) -> Result<VerifyReport> {
    dim_check(x.len() == inst.k && u.len() == inst.l, || {
        format!("x has {}, u has {}, expected {} and {}", x.len(), u.len(), inst.k, inst.l)
    })?;
    let (y, v) = inst.eval_f(x, u);
    let z = MixCpInstance::stack(x, u, 0.0).rows(0, inst.n()).into_owned();
    let w = MixCpInstance::stack(&y, &v, 0.0).rows(0, inst.n()).into_owned();
    let in_l = contains_tol(ConeSpec::Esoc(inst.k, inst.l), &z, tol)?;
    let in_m = contains_tol(ConeSpec::DualEsoc(inst.k, inst.l), &w, tol)?;
    let gap = z.dot(&w).abs();
    Ok(VerifyReport { in_l, in_m, gap, passed: in_l && in_m && gap <= tol })
}

pub fn verify_solution(inst: &EsocLcpInstance, x: &DVector<f64>, u: &DVector<f64>) -> Result<VerifyReport> {
    verify_solution_tol(inst, x, u, VERIFY_TOL)
}
