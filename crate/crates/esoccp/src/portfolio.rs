//! Mean-variance, mean-absolute deviation and mean-Euclidean norm portfolio
//! models over a finite scenario set.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Floor applied to `|U_j' w|` in the MAD fixed point.
pub const MAD_FLOOR: f64 = 1e-8;

const PROB_TOL: f64 = 1e-12;

/// Scenario returns `R` (assets by scenarios), probabilities `f` and risk
/// aversion `c0`, with the derived mean return and deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct PortfolioInstance {
    pub returns: DMatrix<f64>,
    pub f: DVector<f64>,
    pub c0: f64,
    pub r: DVector<f64>,
    /// Columns `U_j = R_j - r`.
    pub u: DMatrix<f64>,
    pub u_norms: DVector<f64>,
}

impl PortfolioInstance {
    pub fn new(returns: DMatrix<f64>, f: DVector<f64>, c0: f64) -> Result<Self> {
        let (n, t) = returns.shape();
        if n < 2 || t < 1 {
            return Err(Error::Dimension(format!("need at least 2 assets and 1 scenario, got {n} x {t}")));
        }
        if f.len() != t {
            return Err(Error::Dimension(format!("{} probabilities for {t} scenarios", f.len())));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::InvalidInput(format!("c0 = {c0} must be positive")));
        }
        if returns.iter().chain(f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite return or probability".into()));
        }
        if f.iter().any(|&p| p < 0.0) || (f.sum() - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidInput(format!("probabilities must be nonnegative and sum to 1 (sum {})", f.sum())));
        }
        let r = &returns * &f;
        let mut u = returns.clone();
        for mut col in u.column_iter_mut() {
            col -= &r;
        }
        let u_norms = DVector::from_iterator(t, u.column_iter().map(|c| c.norm()));
        Ok(PortfolioInstance { returns, f, c0, r, u, u_norms })
    }

    /// The instance used to show the item-(iii) condition can fail.
    pub fn example_item_iii() -> Self {
        let returns = DMatrix::from_row_slice(
            3,
            5,
            &[
                0.10, 0.70, 0.80, 0.80, 1.00, //
                0.30, 0.80, 0.60, 0.40, 0.70, //
                0.50, 0.60, 0.50, 0.00, 0.60,
            ],
        );
        let f = DVector::from_column_slice(&[0.01, 0.14, 0.27, 0.12, 0.46]);
        PortfolioInstance::new(returns, f, 4.0).expect("static data")
    }

    pub fn n(&self) -> usize {
        self.returns.nrows()
    }

    pub fn t(&self) -> usize {
        self.returns.ncols()
    }

    pub fn r_bar(&self) -> f64 {
        self.r.mean()
    }

    /// `c0 sum_j |U_j| f_j`.
    pub fn spread(&self) -> f64 {
        self.c0 * self.u_norms.dot(&self.f)
    }

    /// Scenario covariance `sum_j f_j U_j U_j'`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n(), self.n());
        for (j, col) in self.u.column_iter().enumerate() {
            s += col * col.transpose() * self.f[j];
        }
        s
    }
}

/// Closed-form minimizer of `c0 w' S w - r' w` subject to `e' w = 1`.
pub fn mv_solve(r: &DVector<f64>, sigma: &DMatrix<f64>, c0: f64) -> Result<DVector<f64>> {
    let n = r.len();
    if sigma.shape() != (n, n) {
        return Err(Error::Dimension(format!("covariance is {:?}, returns have {n}", sigma.shape())));
    }
    if !(c0 > 0.0) {
        return Err(Error::InvalidInput(format!("c0 = {c0} must be positive")));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("covariance is not positive definite".into()))?;
    let e = DVector::from_element(n, 1.0);
    let si_e = chol.solve(&e);
    let si_r = chol.solve(r);
    let ese = e.dot(&si_e);
    let esr = e.dot(&si_r);
    if !(ese > 0.0) || !ese.is_finite() {
        return Err(Error::Singular("e' S^-1 e is not positive".into()));
    }
    Ok((si_r - &si_e * (esr / ese)) / (2.0 * c0) + si_e / ese)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadResult {
    pub w: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `|w_last - w_prev|`.
    pub step: f64,
}

/// One application of the MAD fixed-point map.
pub fn mad_map(inst: &PortfolioInstance, w: &DVector<f64>) -> Result<DVector<f64>> {
    let n = inst.n();
    let mut binv = DMatrix::zeros(n, n);
    for (j, col) in inst.u.column_iter().enumerate() {
        let dev = col.dot(w).abs().max(MAD_FLOOR);
        binv += col * col.transpose() * (inst.f[j] / dev);
    }
    let e = DVector::from_element(n, 1.0);
    let solve = |b: &DVector<f64>| {
        linalg::lu_solve(&binv, b).ok_or_else(|| {
            Error::Singular(format!(
                "MAD matrix sum f_j U_j U_j' / |U_j' w| is singular ({} scenarios, {n} assets)",
                inst.t()
            ))
        })
    };
    let be = solve(&e)?;
    let br = solve(&inst.r)?;
    let ebe = e.dot(&be);
    let ebr = e.dot(&br);
    Ok((br - &be * (ebr / ebe)) / inst.c0 + be / ebe)
}

/// Fixed-point iteration of the MAD stationarity condition.
pub fn mad_iterate(inst: &PortfolioInstance, w0: &DVector<f64>, max_iter: usize, tol: f64) -> Result<MadResult> {
    let n = inst.n();
    if inst.t() < n {
        return Err(Error::InvalidInput(format!("MAD needs at least as many scenarios as assets ({} < {n})", inst.t())));
    }
    if w0.len() != n || (w0.sum() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput("w0 must have one weight per asset and sum to 1".into()));
    }
    let mut w = w0.clone();
    let mut step = f64::INFINITY;
    for it in 1..=max_iter {
        let next = mad_map(inst, &w)?;
        step = (&next - &w).norm();
        w = next;
        if step <= tol {
            return Ok(MadResult { w: w.iter().copied().collect(), iterations: it, converged: true, step });
        }
    }
    Ok(MadResult { w: w.iter().copied().collect(), iterations: max_iter, converged: false, step })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenFeasibility {
    pub iv_ok: bool,
    /// `1 - |r - r_bar e|^2 / (c0 sum |U_j| f_j)^2`.
    pub iv_value: f64,
    pub iii_ok: bool,
    /// `r_bar + (c0 sum |U_j| f_j)^2 - |r|^2`.
    pub iii_value: f64,
}

pub fn men_feasibility(inst: &PortfolioInstance) -> MenFeasibility {
    let s = inst.spread();
    let excess = inst.r.add_scalar(-inst.r_bar()).norm_squared();
    let iv_value = if s > 0.0 { 1.0 - excess / (s * s) } else { f64::NAN };
    let iii_value = if s > 0.0 { inst.r_bar() + s * s - inst.r.norm_squared() } else { f64::NAN };
    MenFeasibility { iv_ok: iv_value > 0.0, iv_value, iii_ok: iii_value >= 0.0, iii_value }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenSolution {
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub feasible: bool,
    pub kkt_residual: f64,
    pub multipliers: MenMultipliers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MenMultipliers {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
}

/// Analytical MEN weights `(r - r_bar e) / sqrt(n (S^2 - |r - r_bar e|^2)) + e / n`
/// with `S = c0 sum |U_j| f_j`.
pub fn men_solve(inst: &PortfolioInstance) -> Result<MenSolution> {
    let feas = men_feasibility(inst);
    if !feas.iv_ok {
        return Err(Error::Infeasible { iv_value: feas.iv_value });
    }
    let n = inst.n() as f64;
    let s = inst.spread();
    let excess = inst.r.add_scalar(-inst.r_bar());
    let denom = (n * (s * s - excess.norm_squared())).sqrt();
    let w = &excess / denom + DVector::from_element(inst.n(), 1.0 / n);
    let y = &inst.u_norms * w.norm();
    let (kkt_residual, multipliers) = men_kkt(inst, &w, &y);
    Ok(MenSolution {
        w: w.iter().copied().collect(),
        y: y.iter().copied().collect(),
        feasible: true,
        kkt_residual,
        multipliers,
    })
}

/// Largest violation of the MEN optimality conditions at `(y, w)`, with the
/// multipliers recovered from the point: `theta_j = c0 |U_j| f_j` (ties go
/// to this branch), `lambda = (c0 U' f - e' theta) / |w|`, and `mu` the least
/// squares fit of stationarity.
pub fn men_kkt(inst: &PortfolioInstance, w: &DVector<f64>, y: &DVector<f64>) -> (f64, MenMultipliers) {
    let n = inst.n();
    let wn = w.norm();
    let cap = inst.u_norms.component_mul(&inst.f) * inst.c0;
    let theta = cap.clone();
    let z = &cap - &theta;
    let lambda = if wn > 0.0 { z.sum() / wn } else { f64::INFINITY };
    let st = theta.sum();
    let base = -&inst.r + w * (st / wn) + w * lambda;
    let mu = -base.sum() / n as f64;
    let v = -&inst.r + w * (st / wn) + DVector::from_element(n, mu);
    let mut res: f64 = 0.0;
    res = res.max((&v + w * lambda).amax());
    res = res.max((z.sum() - v.norm()).abs());
    for j in 0..inst.t() {
        let xj = if inst.u_norms[j] > 0.0 { y[j] / inst.u_norms[j] - wn } else { 0.0 };
        res = res.max((-xj).max(0.0)).max((-z[j]).max(0.0)).max((xj * z[j]).abs());
    }
    res = res.max((w.sum() - 1.0).abs());
    (res, MenMultipliers { theta: theta.iter().copied().collect(), lambda, mu })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub n: usize,
    pub t: usize,
    pub c0: f64,
    pub trials: usize,
    pub iii_rate: f64,
    pub iv_rate: f64,
}

/// Random instance with uniform `[0, 1]` returns and normalized uniform
/// probabilities.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, t: usize, c0: f64) -> Result<PortfolioInstance> {
    let returns = DMatrix::from_fn(n, t, |_, _| rng.random::<f64>());
    let mut f = DVector::from_fn(t, |_, _| rng.random::<f64>() + f64::MIN_POSITIVE);
    f /= f.sum();
    // Renormalize once more so the sum is 1 to rounding.
    let s = f.sum();
    f /= s;
    PortfolioInstance::new(returns, f, c0)
}

/// Hold-rates of the item-(iii) and item-(iv) conditions over random
/// instances. Trial `i` of every configuration uses stream `i` of the seed.
pub fn probability_experiment(
    n_list: &[usize],
    t_list: &[usize],
    c0_list: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<ProbabilityRow>> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        for &t in t_list {
            for &c0 in c0_list {
                let verdicts: Vec<(bool, bool)> = (0..trials)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(i as u64);
                        let inst = random_instance(&mut rng, n, t, c0)?;
                        let f = men_feasibility(&inst);
                        Ok((f.iii_ok, f.iv_ok))
                    })
                    .collect::<Result<_>>()?;
                let iii = verdicts.iter().filter(|v| v.0).count();
                let iv = verdicts.iter().filter(|v| v.1).count();
                rows.push(ProbabilityRow {
                    n,
                    t,
                    c0,
                    trials,
                    iii_rate: iii as f64 / trials as f64,
                    iv_rate: iv as f64 / trials as f64,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_derived_values() {
        let inst = PortfolioInstance::example_item_iii();
        let r = [0.871, 0.647, 0.5];
        for i in 0..3 {
            assert!((inst.r[i] - r[i]).abs() < 1e-12);
        }
        assert!((inst.r_bar() - 0.6727).abs() < 1e-4);
        let f = men_feasibility(&inst);
        assert!((f.iii_value + 0.0294).abs() < 5e-4);
        assert!(!f.iii_ok);
        assert!((f.iv_value - 0.9037).abs() < 5e-4);
        assert!(f.iv_ok);
    }

    #[test]
    fn men_example_weights() {
        let inst = PortfolioInstance::example_item_iii();
        let sol = men_solve(&inst).unwrap();
        let expect = [0.4748, 0.3150, 0.2102];
        for i in 0..3 {
            assert!((sol.w[i] - expect[i]).abs() < 1e-4, "{:?}", sol.w);
        }
        assert!((sol.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual < 1e-9);
    }

    #[test]
    fn single_scenario_is_guarded() {
        let inst = PortfolioInstance::new(DMatrix::from_column_slice(2, 1, &[0.1, 0.2]), DVector::from_element(1, 1.0), 2.0).unwrap();
        let f = men_feasibility(&inst);
        assert!(!f.iv_ok && !f.iii_ok);
        assert!(matches!(men_solve(&inst), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn mv_identity_covariance() {
        let r = DVector::from_column_slice(&[0.1, 0.3, 0.2]);
        let w = mv_solve(&r, &DMatrix::identity(3, 3), 2.0).unwrap();
        let expect = r.add_scalar(-r.mean()) / 4.0 + DVector::from_element(3, 1.0 / 3.0);
        assert!((w - expect).amax() < 1e-14);
    }

    #[test]
    fn mv_rejects_singular() {
        let r = DVector::from_column_slice(&[0.1, 0.3]);
        assert!(mv_solve(&r, &DMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn mad_mirrored_fixed_point() {
        // r + (d, -d), r - (d, -d), r + (d, d), r - (d, d) with r = (0.1, 0.1).
        let returns = DMatrix::from_row_slice(2, 4, &[0.15, 0.05, 0.15, 0.05, 0.05, 0.15, 0.15, 0.05]);
        let inst = PortfolioInstance::new(returns, DVector::from_element(4, 0.25), 1.0).unwrap();
        let w0 = DVector::from_element(2, 0.5);
        // Two deviations vanish at e/2, so the floor is active.
        let next = mad_map(&inst, &w0).unwrap();
        assert!((next - w0).amax() < 1e-12);
    }

    #[test]
    fn mad_example_converges() {
        let inst = PortfolioInstance::example_item_iii();
        let w0 = DVector::from_element(3, 1.0 / 3.0);
        let res = mad_iterate(&inst, &w0, 500, 1e-10).unwrap();
        assert!((res.w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let w = DVector::from_column_slice(&res.w);
        if res.converged {
            assert!((mad_map(&inst, &w).unwrap() - w).norm() < 1e-9);
        }
    }

    #[test]
    fn mad_needs_enough_scenarios() {
        let inst = PortfolioInstance::new(DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.1, 0.2, 0.4]), DVector::from_element(2, 0.5), 1.0).unwrap();
        assert!(mad_iterate(&inst, &DVector::from_element(3, 1.0 / 3.0), 10, 1e-8).is_err());
    }

    #[test]
    fn experiment_is_reproducible() {
        let a = probability_experiment(&[3], &[5], &[2.0], 1, 9).unwrap();
        let b = probability_experiment(&[3], &[5], &[2.0], 1, 9).unwrap();
        assert_eq!(a, b);
    }
}
