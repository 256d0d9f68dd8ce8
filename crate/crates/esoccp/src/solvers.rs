//! Semismooth Newton, Levenberg-Marquardt and an FB line-search method for
//! the FB system, plus Schur complement regularity diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esoclcp::{
    reformulate_vi, verify_solution, EsocLcpInstance, MixCp, MixCpInstance, VerifyReport, NEAR_SINGULAR_COND,
};
use crate::fb::{FbSystem, IndexPartition};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub lm_mu0: f64,
    pub lm_decay: f64,
    pub lm_mu_floor: f64,
    /// Relative residual allowed in the Newton linear system; 0 solves exactly.
    pub eta0: f64,
    /// Descent test constant: the Newton direction must give `g'd <= -rho |d|`.
    pub rho: f64,
    /// Armijo constant.
    pub gamma: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_backtrack: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_iter: 100,
            lm_mu0: 1e-2,
            lm_decay: 1e-1,
            lm_mu_floor: 1e-15,
            eta0: 0.0,
            rho: 1e-8,
            gamma: 1e-4,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_backtrack: 60,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.lm_mu0 > 0.0
            && self.lm_decay > 0.0
            && self.lm_decay < 1.0
            && self.lm_mu_floor >= 0.0
            && (0.0..1.0).contains(&self.eta0)
            && self.rho >= 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.wolfe_c1 > 0.0
            && self.wolfe_c1 < self.wolfe_c2
            && self.wolfe_c2 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    LinearSolveFailed,
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub merit: f64,
    pub grad_norm: f64,
    pub mu: f64,
    /// Norm of the step that produced this iterate (0 for the start point).
    pub step_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    pub status: SolverStatus,
    /// Number of steps taken.
    pub iterations: usize,
}

impl SolverTrace {
    fn new() -> Self {
        SolverTrace { records: Vec::new(), status: SolverStatus::MaxIter, iterations: 0 }
    }

    pub fn final_merit(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.merit)
    }

    /// CSV with header `iter,merit,grad_norm,mu,step_norm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "merit", "grad_norm", "mu", "step_norm"])?;
        for r in &self.records {
            wr.write_record([
                r.iter.to_string(),
                format!("{:e}", r.merit),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.mu),
                format!("{:e}", r.step_norm),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_start(z0: &DVector<f64>, n: usize) -> Result<()> {
    if z0.len() != n {
        return Err(Error::Dimension(format!("start point has {} entries, expected {n}", z0.len())));
    }
    if !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("start point is not finite".into()));
    }
    Ok(())
}

/// Conjugate gradients on the normal equations, stopped once
/// `|J d + f| <= eta |f|`. Returns `None` if that is not reached.
fn inexact_solve(j: &DMatrix<f64>, f: &DVector<f64>, eta: f64) -> Option<DVector<f64>> {
    let n = j.ncols();
    let target = eta * f.norm();
    let mut d = DVector::zeros(n);
    let mut r = -f.clone();
    let mut s = j.tr_mul(&r);
    let mut p = s.clone();
    let mut gamma = s.norm_squared();
    for _ in 0..(4 * n).max(10) {
        if r.norm() <= target {
            return Some(d);
        }
        let q = j * &p;
        let qq = q.norm_squared();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        d += &p * alpha;
        r -= &q * alpha;
        s = j.tr_mul(&r);
        let gn = s.norm_squared();
        p = &s + &p * (gn / gamma);
        gamma = gn;
    }
    (r.norm() <= target).then_some(d)
}

/// Semismooth Newton: `J d = -F` until `|F| <= tol`.
pub fn newton_inexact<P: MixCp>(
    sys: &FbSystem<P>,
    z0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, SolverTrace)> {
    cfg.validate()?;
    check_start(z0, sys.dim())?;
    let mut z = z0.clone();
    let mut trace = SolverTrace::new();
    let mut step_norm = 0.0;
    for iter in 0..=cfg.max_iter {
        let (f, j, g) = sys.evaluate(&z);
        trace.records.push(IterRecord {
            iter,
            merit: 0.5 * f.norm_squared(),
            grad_norm: g.norm(),
            mu: 0.0,
            step_norm,
        });
        if f.norm() <= cfg.tol {
            trace.status = SolverStatus::Converged;
            return Ok((z, trace));
        }
        if iter == cfg.max_iter {
            break;
        }
        let d = if cfg.eta0 > 0.0 {
            inexact_solve(&j.full, &f, cfg.eta0).or_else(|| linalg::lu_solve(&j.full, &(-&f)))
        } else {
            linalg::lu_solve(&j.full, &(-&f))
        };
        let Some(d) = d else {
            trace.status = SolverStatus::LinearSolveFailed;
            return Ok((z, trace));
        };
        step_norm = d.norm();
        z += d;
        trace.iterations += 1;
    }
    trace.status = SolverStatus::MaxIter;
    Ok((z, trace))
}

/// Levenberg-Marquardt: `(J'J + mu I) d = -J'F`, `mu <- max(mu * decay, floor)`.
pub fn lm<P: MixCp>(sys: &FbSystem<P>, z0: &DVector<f64>, cfg: &SolverConfig) -> Result<(DVector<f64>, SolverTrace)> {
    cfg.validate()?;
    check_start(z0, sys.dim())?;
    let n = sys.dim();
    let mut z = z0.clone();
    let mut mu = cfg.lm_mu0;
    let mut trace = SolverTrace::new();
    let mut step_norm = 0.0;
    for iter in 0..=cfg.max_iter {
        let (f, j, g) = sys.evaluate(&z);
        trace.records.push(IterRecord {
            iter,
            merit: 0.5 * f.norm_squared(),
            grad_norm: g.norm(),
            mu,
            step_norm,
        });
        if f.norm() <= cfg.tol {
            trace.status = SolverStatus::Converged;
            return Ok((z, trace));
        }
        if iter == cfg.max_iter {
            break;
        }
        let mut h = j.full.tr_mul(&j.full);
        for i in 0..n {
            h[(i, i)] += mu;
        }
        let d = linalg::lu_solve(&h, &(-&g)).or_else(|| h.clone().cholesky().map(|c| c.solve(&(-&g))));
        let Some(d) = d else {
            trace.status = SolverStatus::LinearSolveFailed;
            return Ok((z, trace));
        };
        step_norm = d.norm();
        z += d;
        trace.iterations += 1;
        mu = (mu * cfg.lm_decay).max(cfg.lm_mu_floor);
    }
    trace.status = SolverStatus::MaxIter;
    Ok((z, trace))
}

/// Newton direction with steepest-descent fallback and Armijo backtracking
/// on `0.5 |F|^2`, stopped at `|grad| <= tol`.
pub fn fb_line_search<P: MixCp>(
    sys: &FbSystem<P>,
    z0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, SolverTrace)> {
    cfg.validate()?;
    check_start(z0, sys.dim())?;
    let mut z = z0.clone();
    let mut trace = SolverTrace::new();
    let mut step_norm = 0.0;
    for iter in 0..=cfg.max_iter {
        let (f, j, g) = sys.evaluate(&z);
        let theta = 0.5 * f.norm_squared();
        trace.records.push(IterRecord { iter, merit: theta, grad_norm: g.norm(), mu: 0.0, step_norm });
        if g.norm() <= cfg.tol {
            trace.status = SolverStatus::Converged;
            return Ok((z, trace));
        }
        if iter == cfg.max_iter {
            break;
        }
        let d = match linalg::lu_solve(&j.full, &(-&f)) {
            Some(d) if g.dot(&d) <= -cfg.rho * d.norm() => d,
            _ => -&g,
        };
        let slope = g.dot(&d);
        let mut accepted = None;
        for i in 0..=cfg.max_backtrack {
            let step = 0.5_f64.powi(i as i32);
            let trial = &z + &d * step;
            if sys.merit(&trial) <= theta + cfg.gamma * step * slope {
                accepted = Some((trial, step));
                break;
            }
        }
        let Some((next, step)) = accepted else {
            trace.status = SolverStatus::Stalled;
            return Ok((z, trace));
        };
        step_norm = d.norm() * step;
        z = next;
        trace.iterations += 1;
    }
    trace.status = SolverStatus::MaxIter;
    Ok((z, trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Newton,
    Lm,
    LineSearch,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverKind::Newton),
            "lm" => Ok(SolverKind::Lm),
            "line-search" | "linesearch" | "ls" => Ok(SolverKind::LineSearch),
            _ => Err(Error::InvalidInput(format!("unknown solver {s:?}"))),
        }
    }
}

pub fn run_solver<P: MixCp>(
    kind: SolverKind,
    sys: &FbSystem<P>,
    z0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, SolverTrace)> {
    match kind {
        SolverKind::Newton => newton_inexact(sys, z0, cfg),
        SolverKind::Lm => lm(sys, z0, cfg),
        SolverKind::LineSearch => fb_line_search(sys, z0, cfg),
    }
}

#[derive(Clone, Debug)]
pub struct EsocSolution {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// Final point `(x~, u, t)` of the reformulated problem.
    pub z: DVector<f64>,
    pub trace: SolverTrace,
    pub verify: Option<VerifyReport>,
}

/// Solves the LCP over `L(k, l)` through its reformulation.
///
/// `z0` is `(x~, u, t)`; with `None` the start is `x~ = e`, `u = e` and
/// `t = |u|`. Starting with `t = 0` and small `u` tends to converge to
/// points with `u = 0`, `t = 0` that solve the reformulated system but not
/// the original problem, hence the coupling. The result is checked against
/// the original problem when the solver converged and `t >= 0`.
pub fn solve_esoclcp(
    inst: &EsocLcpInstance,
    kind: SolverKind,
    z0: Option<&DVector<f64>>,
    cfg: &SolverConfig,
) -> Result<EsocSolution> {
    let mix = reformulate_vi(inst);
    let start = match z0 {
        Some(z) => z.clone(),
        None => {
            let u = DVector::from_element(inst.l, 1.0);
            MixCpInstance::stack(&DVector::from_element(inst.k, 1.0), &u, u.norm())
        }
    };
    let sys = FbSystem::new(mix);
    let (z, trace) = run_solver(kind, &sys, &start, cfg)?;
    let (k, l) = (inst.k, inst.l);
    let t = z[k + l];
    let u = z.rows(k, l).into_owned();
    let x = z.rows(0, k).add_scalar(t);
    let verify = if trace.status == SolverStatus::Converged && t >= 0.0 {
        Some(verify_solution(inst, &x, &u)?)
    } else {
        None
    };
    Ok(EsocSolution { x, u, z, trace, verify })
}

/// `A - B D^-1 C`.
pub fn schur_complement(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if d.nrows() == 0 {
        return Ok(a.clone());
    }
    if !(linalg::cond(d) <= NEAR_SINGULAR_COND) {
        return Err(Error::SchurUnavailable);
    }
    let mut dinv_c = DMatrix::zeros(c.nrows(), c.ncols());
    for col in 0..c.ncols() {
        let x = linalg::lu_solve(d, &c.column(col).into_owned()).ok_or(Error::SchurUnavailable)?;
        dinv_c.set_column(col, &x);
    }
    Ok(a - b * dinv_c)
}

/// Schur complement of the mixed problem's Jacobian at `z` with respect to
/// the free block.
pub fn mix_schur<P: MixCp>(sys: &FbSystem<P>, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (x, y) = sys.problem.split(z);
    let j = sys.problem.jacobian(&x, &y);
    schur_complement(&j.ax, &j.by, &j.cx, &j.dy)
}

#[derive(Clone, Debug)]
pub struct RegularityReport {
    pub schur: DMatrix<f64>,
    pub signed_s0: bool,
    pub fb_regular_certified: bool,
    pub lp_witness: Option<DVector<f64>>,
}

/// Builds `Xi = Lambda S Lambda` with `Lambda = +1 on P, -1 on N, 0 on C` and
/// decides whether some `u >= 0`, `e'u = 1` has `Xi u >= 0`.
pub fn signed_s0_test(schur: &DMatrix<f64>, part: &IndexPartition) -> Result<RegularityReport> {
    let k = schur.nrows();
    if schur.ncols() != k {
        return Err(Error::Dimension(format!("schur complement is {:?}", schur.shape())));
    }
    let mut lam = DVector::<f64>::zeros(k);
    for &i in &part.p {
        if i >= k {
            return Err(Error::Dimension(format!("index {i} out of range {k}")));
        }
        lam[i] = 1.0;
    }
    for &i in &part.n {
        if i >= k {
            return Err(Error::Dimension(format!("index {i} out of range {k}")));
        }
        lam[i] = -1.0;
    }
    let xi = DMatrix::from_fn(k, k, |i, j| lam[i] * schur[(i, j)] * lam[j]);
    let witness = s0_witness(&xi);
    Ok(RegularityReport {
        schur: schur.clone(),
        signed_s0: witness.is_some(),
        fb_regular_certified: witness.is_some(),
        lp_witness: witness,
    })
}

/// A point of `{u >= 0, e'u = 1, m u >= 0}`, preferring the barycenter.
pub fn s0_witness(m: &DMatrix<f64>) -> Option<DVector<f64>> {
    let k = m.nrows();
    if k == 0 {
        return None;
    }
    let center = DVector::from_element(k, 1.0 / k as f64);
    if (m * &center).min() >= 0.0 {
        return Some(center);
    }
    linalg::simplex_s0_point(m).filter(|u| (m * u).min() >= -1e-9)
}

/// Schur complement, index partition and signed S0 verdict at `z`.
pub fn regularity_report<P: MixCp>(sys: &FbSystem<P>, z: &DVector<f64>, tol: f64) -> Result<RegularityReport> {
    let s = mix_schur(sys, z)?;
    let part = sys.partition_indices(z, tol);
    signed_s0_test(&s, &part)
}
