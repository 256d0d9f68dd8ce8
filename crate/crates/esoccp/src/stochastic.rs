//! Stochastic problems on `L(k, l)` through CVaR minimization of the
//! per-scenario FB merit, with CHKS smoothing and sample average
//! approximation over growing batches.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esoclcp::EsocLcpInstance;
use crate::fb::ORIGIN_TOL;
use crate::linalg;
use crate::solvers::SolverConfig;

/// Entry of `(T, r)` that receives a random term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    A(usize, usize),
    B(usize, usize),
    C(usize, usize),
    D(usize, usize),
    P(usize),
    Q(usize),
}

impl Target {
    /// Parses `A[i][j]`, `B[i][j]`, `C[i][j]`, `D[i][j]`, `p[i]` or `q[i]`
    /// (0-based).
    pub fn parse(s: &str) -> Result<Target> {
        let bad = || Error::InvalidInput(format!("bad perturbation target {s:?}"));
        let s = s.trim();
        let (head, rest) = s.split_at(s.find('[').ok_or_else(bad)?);
        let idx: Vec<usize> = rest
            .split(|c| c == '[' || c == ']')
            .filter(|p| !p.is_empty())
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (head, idx.as_slice()) {
            ("A", [i, j]) => Ok(Target::A(*i, *j)),
            ("B", [i, j]) => Ok(Target::B(*i, *j)),
            ("C", [i, j]) => Ok(Target::C(*i, *j)),
            ("D", [i, j]) => Ok(Target::D(*i, *j)),
            ("p", [i]) => Ok(Target::P(*i)),
            ("q", [i]) => Ok(Target::Q(*i)),
            _ => Err(bad()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Target::A(i, j) => format!("A[{i}][{j}]"),
            Target::B(i, j) => format!("B[{i}][{j}]"),
            Target::C(i, j) => format!("C[{i}][{j}]"),
            Target::D(i, j) => format!("D[{i}][{j}]"),
            Target::P(i) => format!("p[{i}]"),
            Target::Q(i) => format!("q[{i}]"),
        }
    }

    /// Position in the stacked `(T, r)`: `Ok((row, Some(col)))` for `T`,
    /// `(row, None)` for `r`.
    fn locate(&self, k: usize, l: usize) -> Result<(usize, Option<usize>)> {
        let (r, c, rows, cols) = match *self {
            Target::A(i, j) => (i, Some(j), k, k),
            Target::B(i, j) => (i, Some(k + j), k, k + l),
            Target::C(i, j) => (k + i, Some(j), k + l, k),
            Target::D(i, j) => (k + i, Some(k + j), k + l, k + l),
            Target::P(i) => (i, None, k, 0),
            Target::Q(i) => (k + i, None, k + l, 0),
        };
        let row_ok = match *self {
            Target::C(..) | Target::D(..) | Target::Q(_) => r < rows && r >= k,
            _ => r < rows,
        };
        let col_ok = match (c, *self) {
            (None, _) => true,
            (Some(c), Target::B(..) | Target::D(..)) => c < cols && c >= k,
            (Some(c), _) => c < cols,
        };
        if row_ok && col_ok {
            Ok((r, c))
        } else {
            Err(Error::InvalidInput(format!("target {} outside k={k}, l={l}", self.label())))
        }
    }
}

/// `entry += scale * w` with `w ~ Normal(mean, sd)`, one independent draw
/// per perturbation and scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub target: Target,
    pub mean: f64,
    pub sd: f64,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioModel {
    pub base: EsocLcpInstance,
    pub perturbations: Vec<Perturbation>,
    pub seed: u64,
    slots: Vec<(usize, Option<usize>)>,
}

/// Scenario draws, row-major `n x m` with `m` the number of perturbations.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub omegas: Vec<f64>,
    pub m: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        if self.m == 0 {
            self.omegas.len()
        } else {
            self.omegas.len() / self.m
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scenario(&self, i: usize) -> &[f64] {
        &self.omegas[i * self.m..(i + 1) * self.m]
    }
}

impl ScenarioModel {
    pub fn new(base: EsocLcpInstance, perturbations: Vec<Perturbation>, seed: u64) -> Result<Self> {
        let slots = perturbations
            .iter()
            .map(|p| {
                if !(p.sd >= 0.0 && p.sd.is_finite() && p.mean.is_finite() && p.scale.is_finite()) {
                    return Err(Error::InvalidInput(format!("bad distribution for {}", p.target.label())));
                }
                p.target.locate(base.k, base.l)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScenarioModel { base, perturbations, seed, slots })
    }

    /// The model with `w1` in `A[0][0]`, `2 w2` in `C[0][2]` and `-w3` in
    /// `p[1]` on top of [`crate::esoclcp::demo_instance`], all `w ~ N(0, 1)`.
    pub fn demo(seed: u64) -> Self {
        let n = |target, scale| Perturbation { target, mean: 0.0, sd: 1.0, scale };
        ScenarioModel::new(
            crate::esoclcp::demo_instance(),
            vec![n(Target::A(0, 0), 1.0), n(Target::C(0, 2), 2.0), n(Target::P(1), -1.0)],
            seed,
        )
        .expect("static model")
    }

    pub fn m(&self) -> usize {
        self.perturbations.len()
    }

    /// Draws `n` scenarios from stream `stream` of the model seed.
    pub fn sample_batch(&self, n: usize, stream: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let m = self.m();
        let mut omegas = Vec::with_capacity(n * m);
        for _ in 0..n {
            for p in &self.perturbations {
                let w: f64 = StandardNormal.sample(&mut rng);
                omegas.push(p.mean + p.sd * w);
            }
        }
        Batch { omegas, m }
    }

    /// Stacked `(T(w), r(w))`.
    pub fn t_r(&self, omega: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let mut t = self.base.t();
        let mut r = self.base.r();
        for ((p, &(row, col)), &w) in self.perturbations.iter().zip(&self.slots).zip(omega) {
            match col {
                Some(c) => t[(row, c)] += p.scale * w,
                None => r[row] += p.scale * w,
            }
        }
        (t, r)
    }

    pub fn instance(&self, omega: &[f64]) -> Result<EsocLcpInstance> {
        let (t, r) = self.t_r(omega);
        EsocLcpInstance::from_t_r(&t, &r, self.base.k, self.base.l)
    }
}

/// `(t + sqrt(t^2 + 4 mu^2)) / 2`.
pub fn chks(t: f64, mu: f64) -> f64 {
    0.5 * (t + (t * t + 4.0 * mu * mu).sqrt())
}

/// Derivative of [`chks`] in `t`.
pub fn chks_prime(t: f64, mu: f64) -> f64 {
    let r = (t * t + 4.0 * mu * mu).sqrt();
    if r == 0.0 {
        0.5
    } else {
        0.5 * (1.0 + t / r)
    }
}

/// Empirical VaR (upper order statistic at `ceil((1 - alpha) N)`) and CVaR
/// (mean of the `N - ceil((1 - alpha) N) + 1` largest losses).
pub fn var_cvar_empirical(losses: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::InvalidInput("empty loss list".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} outside (0, 1)")));
    }
    let mut v = losses.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let idx = (((1.0 - alpha) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let idx = idx.min(n);
    let var = v[idx - 1];
    let tail = &v[idx - 1..];
    let cvar = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok((var, cvar))
}

/// Step length rule of the inner loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Sufficient decrease and curvature conditions.
    Wolfe,
    /// Sufficient decrease only, halving from a unit step.
    Armijo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvarConfig {
    pub alpha: f64,
    /// Smoothing parameter of the first stage.
    pub mu_smooth: f64,
    /// Factor applied to the smoothing parameter between stages.
    pub mu_decay: f64,
    pub mu_floor: f64,
    pub sample_sizes: Vec<usize>,
    pub theta0: f64,
    /// LM shift in the averaged-Jacobian direction.
    pub lm_nu: f64,
    /// Inner stop: largest `|dN/dz_i|`.
    pub inner_tol: f64,
    pub k_max: usize,
    /// Outer stop on `|z_j - z_(j-1)|`.
    pub epsilon: f64,
    /// Start each stage from the previous stage's point instead of `z0`.
    pub warm_start: bool,
    pub line_search: StepRule,
    /// Re-minimize the threshold over `Theta` after every step; otherwise it
    /// stays at `theta0`.
    pub update_threshold: bool,
}

impl Default for CvarConfig {
    fn default() -> Self {
        CvarConfig {
            alpha: 0.05,
            mu_smooth: 1e-2,
            mu_decay: 0.5,
            mu_floor: 1e-8,
            sample_sizes: vec![10, 100, 1000, 10_000, 100_000],
            theta0: 0.0,
            lm_nu: 1e-4,
            inner_tol: 1e-6,
            k_max: 100,
            epsilon: 1e-4,
            warm_start: false,
            update_threshold: true,
            line_search: StepRule::Wolfe,
        }
    }
}

impl CvarConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes_ok = !self.sample_sizes.is_empty()
            && self.sample_sizes[0] >= 1
            && self.sample_sizes.windows(2).all(|w| w[0] < w[1]);
        let ok = self.alpha > 0.0
            && self.alpha < 1.0
            && self.mu_smooth > 0.0
            && self.mu_decay > 0.0
            && self.mu_decay <= 1.0
            && self.mu_floor >= 0.0
            && self.lm_nu >= 0.0
            && self.inner_tol > 0.0
            && self.epsilon >= 0.0
            && self.theta0.is_finite();
        if ok && sizes_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid CVaR configuration {self:?}")))
        }
    }

    pub fn mu_at_stage(&self, j: usize) -> f64 {
        (self.mu_smooth * self.mu_decay.powi(j as i32)).max(self.mu_floor)
    }
}

/// Per-scenario FB system of the reformulated problem, evaluated on flat
/// buffers.
#[derive(Clone, Debug)]
pub struct ScenarioEvaluator {
    k: usize,
    l: usize,
    t0: Vec<f64>,
    r0: Vec<f64>,
    deltas: Vec<(usize, f64)>,
}

/// Merit, FB residual and Jacobian (row-major, `dim x dim`) of one scenario.
#[derive(Clone, Debug)]
pub struct ScenarioPoint {
    pub theta: f64,
    pub residual: Vec<f64>,
    pub jacobian: Vec<f64>,
}

impl ScenarioEvaluator {
    pub fn new(model: &ScenarioModel) -> Self {
        let (k, l) = (model.base.k, model.base.l);
        let n = k + l;
        let t = model.base.t();
        let t0 = (0..n * n).map(|i| t[(i / n, i % n)]).collect();
        let r0 = model.base.r().iter().copied().collect();
        let deltas = model
            .perturbations
            .iter()
            .zip(&model.slots)
            .map(|(p, &(row, col))| match col {
                Some(c) => (row * n + c, p.scale),
                None => (n * n + row, p.scale),
            })
            .collect();
        ScenarioEvaluator { k, l, t0, r0, deltas }
    }

    pub fn dim(&self) -> usize {
        self.k + self.l + 1
    }

    /// Evaluates scenario `omega` at `z = (x~, u, t)` into `out`.
    pub fn eval(&self, z: &[f64], omega: &[f64], tr: &mut Vec<f64>, out: &mut ScenarioPoint) {
        let (k, l) = (self.k, self.l);
        let n = k + l;
        let dim = n + 1;
        tr.clear();
        tr.extend_from_slice(&self.t0);
        tr.extend_from_slice(&self.r0);
        for (&(pos, scale), &w) in self.deltas.iter().zip(omega) {
            tr[pos] += scale * w;
        }
        let (tm, r) = tr.split_at(n * n);
        let at = |i: usize, j: usize| tm[i * n + j];
        let x = &z[..k];
        let u = &z[k..n];
        let t = z[n];

        out.residual.clear();
        out.residual.resize(dim, 0.0);
        out.jacobian.clear();
        out.jacobian.resize(dim * dim, 0.0);
        let f = &mut out.residual;
        let jac = &mut out.jacobian;

        // F1 = A(x~ + te) + Bu + p, ae = Ae.
        let mut f1 = [0.0_f64; 64];
        let mut ae = [0.0_f64; 64];
        let big = k > 64;
        let mut f1v = Vec::new();
        let mut aev = Vec::new();
        if big {
            f1v.resize(k, 0.0);
            aev.resize(k, 0.0);
        }
        let (f1s, aes): (&mut [f64], &mut [f64]) =
            if big { (&mut f1v, &mut aev) } else { (&mut f1[..k], &mut ae[..k]) };
        for i in 0..k {
            let mut s = r[i];
            let mut e = 0.0;
            for j in 0..k {
                s += at(i, j) * x[j];
                e += at(i, j);
            }
            s += e * t;
            for j in 0..l {
                s += at(i, k + j) * u[j];
            }
            f1s[i] = s;
            aes[i] = e;
        }
        let g: f64 = f1s.iter().sum();
        let eae: f64 = aes.iter().sum();

        for i in 0..k {
            let (xi, fi) = (x[i], f1s[i]);
            let rad = xi.hypot(fi);
            f[i] = rad - xi - fi;
            let (da, db) = if rad < ORIGIN_TOL { (-1.0, -1.0) } else { (xi / rad - 1.0, fi / rad - 1.0) };
            let row = &mut jac[i * dim..(i + 1) * dim];
            for j in 0..k {
                row[j] = db * at(i, j);
            }
            row[i] += da;
            for j in 0..l {
                row[k + j] = db * at(i, k + j);
            }
            row[n] = db * aes[i];
        }

        // Column sums e'A and e'B.
        for a in 0..l {
            let ra = k + a;
            let mut ce = 0.0;
            let mut v = r[ra];
            for j in 0..k {
                ce += at(ra, j);
                v += at(ra, j) * x[j];
            }
            v += ce * t;
            for b in 0..l {
                v += at(ra, k + b) * u[b];
            }
            f[ra] = t * v + g * u[a];
            let row = ra * dim;
            for j in 0..k {
                let mut eta_j = 0.0;
                for i in 0..k {
                    eta_j += at(i, j);
                }
                jac[row + j] = t * at(ra, j) + u[a] * eta_j;
            }
            for b in 0..l {
                let mut etb_b = 0.0;
                for i in 0..k {
                    etb_b += at(i, k + b);
                }
                let diag = if a == b { g } else { 0.0 };
                jac[row + k + b] = diag + u[a] * etb_b + t * at(ra, k + b);
            }
            jac[row + n] = v + t * ce + u[a] * eae;
        }
        let un2: f64 = u.iter().map(|v| v * v).sum();
        f[n] = t * t - un2;
        let row = n * dim;
        for b in 0..l {
            jac[row + k + b] = -2.0 * u[b];
        }
        jac[row + n] = 2.0 * t;

        out.theta = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
    }

    /// Scenario merit only.
    pub fn theta(&self, z: &[f64], omega: &[f64]) -> f64 {
        let mut tr = Vec::new();
        let mut p = ScenarioPoint { theta: 0.0, residual: Vec::new(), jacobian: Vec::new() };
        self.eval(z, omega, &mut tr, &mut p);
        p.theta
    }
}

/// Sums over a batch of the quantities the SAA solver needs.
#[derive(Clone, Debug)]
pub struct SaaEval {
    pub objective: f64,
    pub grad_z: DVector<f64>,
    pub grad_theta: f64,
    /// Mean Jacobian and mean residual, filled when requested.
    pub mean_jacobian: Option<DMatrix<f64>>,
    pub mean_residual: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
struct Partial {
    chks_sum: f64,
    weight_sum: f64,
    grad: Vec<f64>,
    jac: Vec<f64>,
    res: Vec<f64>,
}

const CHUNK: usize = 4096;

impl ScenarioEvaluator {
    /// Per-scenario merits at `z`, in batch order.
    pub fn thetas(&self, z: &DVector<f64>, batch: &Batch) -> Vec<f64> {
        let zs = z.as_slice();
        let idx: Vec<usize> = (0..batch.len()).collect();
        idx.par_chunks(CHUNK)
            .map(|chunk| {
                let mut tr = Vec::new();
                let mut p = ScenarioPoint { theta: 0.0, residual: Vec::new(), jacobian: Vec::new() };
                chunk
                    .iter()
                    .map(|&i| {
                        self.eval(zs, batch.scenario(i), &mut tr, &mut p);
                        p.theta
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .concat()
    }

    /// `Theta + (alpha N)^-1 sum [theta_i - Theta]_mu` with its gradient.
    /// Chunks are reduced in batch order so the result does not depend on
    /// thread scheduling.
    pub fn saa(&self, z: &DVector<f64>, theta_level: f64, alpha: f64, mu: f64, batch: &Batch, with_means: bool) -> SaaEval {
        let dim = self.dim();
        let zs = z.as_slice();
        let idx: Vec<usize> = (0..batch.len()).collect();
        let partials: Vec<Partial> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut tr = Vec::new();
                let mut p = ScenarioPoint { theta: 0.0, residual: Vec::new(), jacobian: Vec::new() };
                let mut acc = Partial {
                    chks_sum: 0.0,
                    weight_sum: 0.0,
                    grad: vec![0.0; dim],
                    jac: if with_means { vec![0.0; dim * dim] } else { Vec::new() },
                    res: if with_means { vec![0.0; dim] } else { Vec::new() },
                };
                for &i in chunk {
                    self.eval(zs, batch.scenario(i), &mut tr, &mut p);
                    let s = p.theta - theta_level;
                    acc.chks_sum += chks(s, mu);
                    let w = chks_prime(s, mu);
                    acc.weight_sum += w;
                    for r in 0..dim {
                        let fr = p.residual[r] * w;
                        if fr != 0.0 {
                            let row = &p.jacobian[r * dim..(r + 1) * dim];
                            for c in 0..dim {
                                acc.grad[c] += row[c] * fr;
                            }
                        }
                    }
                    if with_means {
                        for (a, b) in acc.jac.iter_mut().zip(&p.jacobian) {
                            *a += b;
                        }
                        for (a, b) in acc.res.iter_mut().zip(&p.residual) {
                            *a += b;
                        }
                    }
                }
                acc
            })
            .collect();
        let n = batch.len() as f64;
        let scale = 1.0 / (alpha * n);
        let mut chks_sum = 0.0;
        let mut weight_sum = 0.0;
        let mut grad = vec![0.0; dim];
        let mut jac = vec![0.0; if with_means { dim * dim } else { 0 }];
        let mut res = vec![0.0; if with_means { dim } else { 0 }];
        for p in &partials {
            chks_sum += p.chks_sum;
            weight_sum += p.weight_sum;
            for (a, b) in grad.iter_mut().zip(&p.grad) {
                *a += b;
            }
            for (a, b) in jac.iter_mut().zip(&p.jac) {
                *a += b;
            }
            for (a, b) in res.iter_mut().zip(&p.res) {
                *a += b;
            }
        }
        SaaEval {
            objective: theta_level + scale * chks_sum,
            grad_z: DVector::from_vec(grad) * scale,
            grad_theta: 1.0 - scale * weight_sum,
            mean_jacobian: with_means.then(|| DMatrix::from_row_slice(dim, dim, &jac) / n),
            mean_residual: with_means.then(|| DVector::from_vec(res) / n),
        }
    }
}

/// SAA objective at `(z, Theta)`.
pub fn saa_objective(model: &ScenarioModel, cfg: &CvarConfig, mu: f64, z: &DVector<f64>, theta: f64, batch: &Batch) -> Result<f64> {
    check_batch(model, z, batch)?;
    Ok(ScenarioEvaluator::new(model).saa(z, theta, cfg.alpha, mu, batch, false).objective)
}

/// Gradient of the SAA objective, `(d/dz, d/dTheta)` stacked.
pub fn saa_gradient(
    model: &ScenarioModel,
    cfg: &CvarConfig,
    mu: f64,
    z: &DVector<f64>,
    theta: f64,
    batch: &Batch,
) -> Result<DVector<f64>> {
    check_batch(model, z, batch)?;
    let ev = ScenarioEvaluator::new(model).saa(z, theta, cfg.alpha, mu, batch, false);
    let d = z.len();
    let mut g = DVector::zeros(d + 1);
    g.rows_mut(0, d).copy_from(&ev.grad_z);
    g[d] = ev.grad_theta;
    Ok(g)
}

fn check_batch(model: &ScenarioModel, z: &DVector<f64>, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty scenario batch".into()));
    }
    if batch.m != model.m() {
        return Err(Error::Dimension(format!("batch has {} draws per scenario, model {}", batch.m, model.m())));
    }
    if z.len() != model.base.n() + 1 {
        return Err(Error::Dimension(format!("z has {}, expected {}", z.len(), model.base.n() + 1)));
    }
    Ok(())
}

/// Minimizes `Theta + (alpha N)^-1 sum chks(theta_i - Theta)` over `Theta`.
/// The derivative is increasing in `Theta`, so bisection on it is exact up to
/// rounding.
pub fn optimal_threshold(thetas: &[f64], alpha: f64, mu: f64) -> f64 {
    let n = thetas.len() as f64;
    let deriv = |th: f64| 1.0 - thetas.iter().map(|&v| chks_prime(v - th, mu)).sum::<f64>() / (alpha * n);
    let lo0 = thetas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 10.0 * mu + 1e-12 * (1.0 + hi0.abs());
    let (mut lo, mut hi) = (lo0 - pad, hi0 + pad);
    let mut widen = 1.0;
    while deriv(lo) > 0.0 {
        lo -= widen;
        widen *= 2.0;
    }
    widen = 1.0;
    while deriv(hi) < 0.0 {
        hi += widen;
        widen *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `|(1/N) sum <(x, u), F(x, u, w_i)>|` at `z = (x~, u, t)`.
pub fn aloc(model: &ScenarioModel, z: &DVector<f64>, batch: &Batch) -> Result<f64> {
    Ok(gap_stats(model, z, batch)?.0)
}

/// `(1/N) sum |<(x, u), F(x, u, w_i)>|`.
pub fn aloc_abs(model: &ScenarioModel, z: &DVector<f64>, batch: &Batch) -> Result<f64> {
    Ok(gap_stats(model, z, batch)?.1)
}

fn gap_stats(model: &ScenarioModel, z: &DVector<f64>, batch: &Batch) -> Result<(f64, f64)> {
    check_batch(model, z, batch)?;
    let (k, l) = (model.base.k, model.base.l);
    let n = k + l;
    let t = z[n];
    let mut w = DVector::zeros(n);
    w.rows_mut(0, k).copy_from(&z.rows(0, k).add_scalar(t));
    w.rows_mut(k, l).copy_from(&z.rows(k, l));
    let (t0, r0) = (model.base.t(), model.base.r());
    let base_gap = w.dot(&(&t0 * &w + &r0));
    // The gap is affine in each draw: gap_i = base_gap + sum_m scale_m w_m coeff_m.
    let coeffs: Vec<f64> = model
        .slots
        .iter()
        .zip(&model.perturbations)
        .map(|(&(row, col), p)| p.scale * w[row] * col.map_or(1.0, |c| w[c]))
        .collect();
    let mut signed = 0.0;
    let mut abs = 0.0;
    for i in 0..batch.len() {
        let g = base_gap + batch.scenario(i).iter().zip(&coeffs).map(|(o, c)| o * c).sum::<f64>();
        signed += g;
        abs += g.abs();
    }
    let nb = batch.len() as f64;
    Ok(((signed / nb).abs(), abs / nb))
}

/// Deterministic instance with the expected coefficients. `n = None` uses the
/// analytic means; otherwise the sample mean of `n` draws from stream 0.
pub fn ev_baseline(model: &ScenarioModel, n: Option<usize>) -> Result<EsocLcpInstance> {
    let means: Vec<f64> = match n {
        None => model.perturbations.iter().map(|p| p.mean).collect(),
        Some(0) => return Err(Error::InvalidInput("sample size must be positive".into())),
        Some(n) => {
            let b = model.sample_batch(n, u64::MAX);
            let m = model.m();
            let mut acc = vec![0.0; m];
            for i in 0..n {
                for (a, o) in acc.iter_mut().zip(b.scenario(i)) {
                    *a += o;
                }
            }
            acc.iter().map(|a| a / n as f64).collect()
        }
    };
    model.instance(&means)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub n: usize,
    pub mu: f64,
    /// `(x~, u, t)`.
    pub z: Vec<f64>,
    /// `(x, u)` with `x = x~ + t e`.
    pub solution: Vec<f64>,
    /// `F(x, u, w)` at the expected coefficients.
    pub f_mean: Vec<f64>,
    pub theta: f64,
    pub objective: f64,
    pub grad_inf: f64,
    pub aloc: f64,
    pub aloc_abs: f64,
    pub inner_iterations: usize,
    pub status: StageStatus,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaaReport {
    pub stages: Vec<StageReport>,
    /// Outer loop stopped because consecutive stage points were within epsilon.
    pub stopped_early: bool,
}

impl SaaReport {
    pub fn last(&self) -> &StageReport {
        self.stages.last().expect("at least one stage")
    }
}

/// Line-search smoothing SAA. Each stage draws a fresh batch, fixes the
/// smoothing parameter, and alternates an exact threshold update with a
/// Wolfe step along the averaged-Jacobian LM direction (or the negative
/// gradient when that is not a descent direction).
pub fn solve_saa(
    model: &ScenarioModel,
    cfg: &CvarConfig,
    solver_cfg: &SolverConfig,
    z0: &DVector<f64>,
) -> Result<(DVector<f64>, f64, SaaReport)> {
    cfg.validate()?;
    solver_cfg.validate()?;
    let ev = ScenarioEvaluator::new(model);
    let dim = ev.dim();
    if z0.len() != dim || !z0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(format!("start point must be {dim} finite values")));
    }
    let mean_inst = ev_baseline(model, None)?;
    let mut stages = Vec::new();
    let mut prev: Option<DVector<f64>> = None;
    let mut theta = cfg.theta0;
    let mut stopped_early = false;
    for (j, &n) in cfg.sample_sizes.iter().enumerate() {
        let clock = Instant::now();
        let batch = model.sample_batch(n, j as u64);
        let mu = cfg.mu_at_stage(j);
        let start = match (&prev, cfg.warm_start) {
            (Some(p), true) => p.clone(),
            _ => z0.clone(),
        };
        let (y, th, eval, iters, status) = run_stage(&ev, cfg, solver_cfg, mu, &batch, start)?;
        theta = th;
        let (k, l) = (model.base.k, model.base.l);
        let mut sol = DVector::zeros(k + l);
        sol.rows_mut(0, k).copy_from(&y.rows(0, k).add_scalar(y[k + l]));
        sol.rows_mut(k, l).copy_from(&y.rows(k, l));
        let (fy, fv) = mean_inst.eval_f(&sol.rows(0, k).into_owned(), &sol.rows(k, l).into_owned());
        let f_mean: Vec<f64> = fy.iter().chain(fv.iter()).copied().collect();
        let (al, al_abs) = gap_stats(model, &y, &batch)?;
        stages.push(StageReport {
            stage: j + 1,
            n,
            mu,
            z: y.iter().copied().collect(),
            solution: sol.iter().copied().collect(),
            f_mean,
            theta: th,
            objective: eval.objective,
            grad_inf: eval.grad_z.amax(),
            aloc: al,
            aloc_abs: al_abs,
            inner_iterations: iters,
            status,
            runtime_s: clock.elapsed().as_secs_f64(),
        });
        if let Some(p) = &prev {
            if (&y - p).norm() < cfg.epsilon {
                prev = Some(y);
                stopped_early = j + 1 < cfg.sample_sizes.len();
                break;
            }
        }
        prev = Some(y);
    }
    let z = prev.expect("at least one stage");
    Ok((z, theta, SaaReport { stages, stopped_early }))
}

/// Root of the batch-averaged FB residual `(1/N) sum F(z, w_i) = 0`, found
/// with LM steps on the averaged Jacobian (the direction of [`solve_saa`]
/// taken with unit steps). Returns the point, the final residual norm and the
/// iteration count.
pub fn solve_mean_fb(
    model: &ScenarioModel,
    batch: &Batch,
    z0: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, f64, usize)> {
    cfg.validate()?;
    check_batch(model, z0, batch)?;
    let ev = ScenarioEvaluator::new(model);
    let dim = ev.dim();
    let mut z = z0.clone();
    let mut mu = cfg.lm_mu0;
    for iter in 0..=cfg.max_iter {
        let e = ev.saa(&z, 0.0, 1.0, 1.0, batch, true);
        let a = e.mean_jacobian.expect("requested");
        let f = e.mean_residual.expect("requested");
        if f.norm() <= cfg.tol || iter == cfg.max_iter {
            return Ok((z, f.norm(), iter));
        }
        let mut h = a.tr_mul(&a);
        for i in 0..dim {
            h[(i, i)] += mu;
        }
        let Some(d) = linalg::lu_solve(&h, &(-a.tr_mul(&f))) else {
            return Err(Error::Singular("averaged LM system".into()));
        };
        z += d;
        mu = (mu * cfg.lm_decay).max(cfg.lm_mu_floor);
    }
    unreachable!()
}

type StageOut = (DVector<f64>, f64, SaaEval, usize, StageStatus);

fn run_stage(
    ev: &ScenarioEvaluator,
    cfg: &CvarConfig,
    scfg: &SolverConfig,
    mu: f64,
    batch: &Batch,
    start: DVector<f64>,
) -> Result<StageOut> {
    let alpha = cfg.alpha;
    let dim = ev.dim();
    let mut y = start;
    let level = |y: &DVector<f64>| {
        if cfg.update_threshold {
            optimal_threshold(&ev.thetas(y, batch), alpha, mu)
        } else {
            cfg.theta0
        }
    };
    let mut theta = level(&y);
    let mut eval = ev.saa(&y, theta, alpha, mu, batch, true);
    let mut status = StageStatus::MaxIter;
    let mut iters = 0;
    for _ in 0..cfg.k_max {
        if eval.grad_z.amax() <= cfg.inner_tol {
            status = StageStatus::Converged;
            break;
        }
        let g = eval.grad_z.clone();
        let abar = eval.mean_jacobian.as_ref().expect("requested");
        let fbar = eval.mean_residual.as_ref().expect("requested");
        let mut h = abar.tr_mul(abar);
        for i in 0..dim {
            h[(i, i)] += cfg.lm_nu;
        }
        let d = match linalg::lu_solve(&h, &(-abar.tr_mul(fbar))) {
            Some(d) if g.dot(&d) <= -scfg.rho * d.norm() => d,
            _ => -&g,
        };
        let step = match cfg.line_search {
            StepRule::Wolfe => wolfe_search(ev, &y, &d, theta, alpha, mu, batch, &eval, scfg),
            StepRule::Armijo => armijo_search(ev, &y, &d, theta, alpha, mu, batch, &eval, scfg),
        };
        let Some(s) = step else {
            status = StageStatus::LineSearchFailed;
            break;
        };
        y += &d * s;
        iters += 1;
        theta = level(&y);
        eval = ev.saa(&y, theta, alpha, mu, batch, true);
    }
    if status == StageStatus::MaxIter && eval.grad_z.amax() <= cfg.inner_tol {
        status = StageStatus::Converged;
    }
    Ok((y, theta, eval, iters, status))
}

#[allow(clippy::too_many_arguments)]
fn armijo_search(
    ev: &ScenarioEvaluator,
    y: &DVector<f64>,
    d: &DVector<f64>,
    theta: f64,
    alpha: f64,
    mu: f64,
    batch: &Batch,
    at0: &SaaEval,
    scfg: &SolverConfig,
) -> Option<f64> {
    let g0 = at0.grad_z.dot(d);
    if !(g0 < 0.0) {
        return None;
    }
    let mut s = 1.0;
    for _ in 0..=scfg.max_backtrack {
        let f = ev.saa(&(y + d * s), theta, alpha, mu, batch, false).objective;
        if f <= at0.objective + scfg.wolfe_c1 * s * g0 {
            return Some(s);
        }
        s *= 0.5;
    }
    None
}

/// Step satisfying the Wolfe conditions on `s -> N(y + s d, Theta)`, by
/// bracketing and bisection-style zoom.
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    ev: &ScenarioEvaluator,
    y: &DVector<f64>,
    d: &DVector<f64>,
    theta: f64,
    alpha: f64,
    mu: f64,
    batch: &Batch,
    at0: &SaaEval,
    scfg: &SolverConfig,
) -> Option<f64> {
    let f0 = at0.objective;
    let g0 = at0.grad_z.dot(d);
    if !(g0 < 0.0) {
        return None;
    }
    let (c1, c2) = (scfg.wolfe_c1, scfg.wolfe_c2);
    let phi = |s: f64| {
        let e = ev.saa(&(y + d * s), theta, alpha, mu, batch, false);
        (e.objective, e.grad_z.dot(d))
    };
    let mut lo = 0.0;
    let mut f_lo = f0;
    let mut hi = f64::INFINITY;
    let mut s = 1.0;
    let mut best_armijo: Option<f64> = None;
    for _ in 0..60 {
        let (fs, gs) = phi(s);
        if !fs.is_finite() || fs > f0 + c1 * s * g0 || fs >= f_lo && lo > 0.0 {
            hi = s;
        } else {
            best_armijo = Some(s);
            if gs >= c2 * g0 {
                return Some(s);
            }
            lo = s;
            f_lo = fs;
        }
        s = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * s };
        if hi.is_finite() && hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    best_armijo
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fb::FbSystem;
    use crate::esoclcp::reformulate_vi;

    #[test]
    fn chks_examples() {
        assert!((chks(0.0, 0.5) - 0.5).abs() < 1e-15);
        for t in [-1.0, 0.0, 2.0] {
            assert_eq!(chks(t, 0.0), t.max(0.0));
        }
        assert!((chks(3.0, 1.0) - (3.0 + 13f64.sqrt()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn var_cvar_examples() {
        let l: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(var_cvar_empirical(&l, 0.05).unwrap(), (95.0, 97.5));
        assert_eq!(var_cvar_empirical(&[3.0; 7], 0.1).unwrap(), (3.0, 3.0));
        assert!(var_cvar_empirical(&[], 0.1).is_err());
    }

    #[test]
    fn target_parsing() {
        assert_eq!(Target::parse("A[0][0]").unwrap(), Target::A(0, 0));
        assert_eq!(Target::parse("p[1]").unwrap(), Target::P(1));
        assert!(Target::parse("Z[1]").is_err());
        assert!(Target::parse("A[0]").is_err());
    }

    #[test]
    fn fast_evaluator_matches_generic_fb_system() {
        let model = ScenarioModel::demo(3);
        let ev = ScenarioEvaluator::new(&model);
        let batch = model.sample_batch(5, 0);
        let z = DVector::from_column_slice(&[1.1, 0.2, 0.7, 0.1, -0.3, 0.4]);
        for i in 0..batch.len() {
            let inst = model.instance(batch.scenario(i)).unwrap();
            let sys = FbSystem::new(reformulate_vi(&inst));
            let f = sys.residual(&z);
            let j = sys.jacobian(&z).full;
            let mut tr = Vec::new();
            let mut p = ScenarioPoint { theta: 0.0, residual: vec![], jacobian: vec![] };
            ev.eval(z.as_slice(), batch.scenario(i), &mut tr, &mut p);
            for r in 0..6 {
                assert!((f[r] - p.residual[r]).abs() < 1e-10);
                for c in 0..6 {
                    assert!((j[(r, c)] - p.jacobian[r * 6 + c]).abs() < 1e-10, "({r},{c})");
                }
            }
            assert!((sys.merit(&z) - p.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_minimizes() {
        let th: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs() * 3.0).collect();
        let (alpha, mu) = (0.1, 1e-3);
        let obj = |t: f64| t + th.iter().map(|v| chks(v - t, mu)).sum::<f64>() / (alpha * th.len() as f64);
        let best = optimal_threshold(&th, alpha, mu);
        for dt in [-1e-3, 1e-3, -0.1, 0.1] {
            assert!(obj(best) <= obj(best + dt) + 1e-12);
        }
    }
}
