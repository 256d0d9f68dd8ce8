//! Quasi-convexity of `q_A(x) = <Ax, x>` on spherically convex sets spanned by
//! the nonnegative orthant or the Lorentz cone.
//!
//! `q_A` is spherically quasi-convex on the cone `K` iff every sublevel set
//! `[phi_A <= c] = {x in int K : <Ax, x> <= c |x|^2}` of the Rayleigh quotient is
//! convex. The analyzer either proves that from one of the known sufficient
//! conditions, exhibits three points breaking convexity of some sublevel set, or
//! says it cannot tell.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cones::{lorentz_moreau, orthant_moreau, ConeSpec};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

/// Relative threshold below which two eigenvalues are treated as equal.
pub const EIG_CLUSTER_TOL: f64 = 1e-9;
/// Off-diagonal entries above this make a matrix fail the Z-matrix test.
pub const Z_MATRIX_TOL: f64 = 1e-12;
/// Slack used when deciding copositivity (scaled by `max(1, max |a_ij|)`).
pub const COPOSITIVE_TOL: f64 = 1e-10;
/// Required gap `phi(mid) - c` and interior slack of a witness.
pub const WITNESS_MARGIN: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcConfig {
    /// Largest dimension for exact orthant copositivity (support enumeration).
    pub n_limit: usize,
    /// Directions sampled in the cone for the W-cone diagnostic and witness search.
    pub samples: usize,
    pub seed: u64,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig { n_limit: 12, samples: 100_000, seed: 0x5eed }
    }
}

/// Ascending eigenvalues with an orthonormal eigenbasis (columns of `vectors`).
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub matrix: DMatrix<f64>,
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Distinct eigenvalues (cluster means) with their multiplicities.
    pub clusters: Vec<(f64, usize)>,
}

impl SpectralData {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(a)?;
        let (values, vectors) = sym_eigen(a);
        let n = values.len();
        let tol = EIG_CLUSTER_TOL * values[n - 1].abs().max(1.0);
        let mut clusters: Vec<(f64, usize, f64)> = Vec::new();
        for &v in values.iter() {
            match clusters.last_mut() {
                Some((sum, m, first)) if (v - *first).abs() <= tol => {
                    *sum += v;
                    *m += 1;
                }
                _ => clusters.push((v, 1, v)),
            }
        }
        let clusters = clusters.into_iter().map(|(s, m, _)| (s / m as f64, m)).collect();
        Ok(SpectralData { matrix: (a + a.transpose()) * 0.5, values, vectors, clusters })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn distinct(&self) -> usize {
        self.clusters.len()
    }

    pub fn smallest_simple(&self) -> bool {
        self.clusters[0].1 == 1
    }

    /// `lambda_i` with multiplicity, 1-based as in the usual notation.
    pub fn lambda(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    /// `v^i`, 1-based.
    pub fn v(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i - 1).into_owned()
    }

    fn scale(&self) -> f64 {
        self.values[0].abs().max(self.values[self.n() - 1].abs()).max(1.0)
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Dimension(format!("matrix must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!("matrix is not symmetric (max |a_ij - a_ji| = {asym:e})")));
    }
    Ok(())
}

/// The cone `L_c = {x : <v1, x> >= sqrt(sum_i theta_i(c) <v^i, x>^2)}`.
#[derive(Clone, Debug)]
pub struct ConeLc {
    pub anchor: DVector<f64>,
    pub thetas: Vec<f64>,
    pub c: f64,
    rest: DMatrix<f64>,
}

impl ConeLc {
    /// Requires `lambda_1` simple and `lambda_1 < c <= lambda_2`.
    pub fn new(spec: &SpectralData, c: f64) -> Result<Self> {
        let n = spec.n();
        if !spec.smallest_simple() || n < 2 {
            return Err(Error::InvalidInput("L_c needs a simple smallest eigenvalue".into()));
        }
        let (l1, l2) = (spec.lambda(1), spec.lambda(2));
        if !(c > l1 && c <= l2) {
            return Err(Error::InvalidInput(format!("level {c} outside ({l1}, {l2}]")));
        }
        let thetas = (2..=n).map(|i| ((spec.lambda(i) - c) / (c - l1)).max(0.0)).collect();
        Ok(ConeLc { anchor: spec.v(1), thetas, c, rest: spec.vectors.columns(1, n - 1).into_owned() })
    }

    /// Signed slack `<v1, x> - sqrt(sum theta_i <v^i, x>^2)`.
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        let coords = self.rest.tr_mul(x);
        let r: f64 = coords.iter().zip(&self.thetas).map(|(y, t)| t * y * y).sum();
        self.anchor.dot(x) - r.sqrt()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.slack(x) >= -1e-12 * x.norm()
    }

    /// Membership in `L_c U -L_c`.
    pub fn contains_either(&self, x: &DVector<f64>) -> bool {
        self.contains(x) || self.contains(&-x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    QuasiConvex,
    NotQuasiConvex,
    Undecided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "condition")]
pub enum SubdualCondition {
    /// Two distinct eigenvalues, the smaller simple with eigenvector in K*.
    TwoEigenvalues,
    /// Spectrum `(lambda, mu, ..., mu, eta)` with
    /// `v1 - sqrt((eta - mu)/(mu - lambda)) |v^n| in K*`.
    SpikedPair,
    /// `lambda_n <= lambda_2 + alpha (lambda_2 - lambda_1)`.
    EigenvalueSpread { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Certificate {
    ConstantFunction,
    TwoEigenvalueCharacterization,
    /// `lambda_2 I - A` is K-copositive and `v1 in K*`. On the Lorentz cone
    /// `rho` is the multiplier making `lambda_2 I - A - rho J` PSD.
    CopositiveShift { rho: Option<f64> },
    SubdualSufficient(SubdualCondition),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    /// Closed form for diagonal matrices: `e^i + t_i e^k`, `e^j + t_j e^k`.
    DiagonalPair,
    /// Segment between two canonical vectors where `a_ij > 0`.
    CanonicalPair,
    /// Local construction around a point of `{<(A - cI)x, x> = 0}` when
    /// `A - cI` has two negative eigenvalues.
    Saddle,
    /// Two points of the sublevel set on opposite sides of `v1`'s hyperplane.
    OppositeSheets,
}

/// `phi(a0) <= level`, `phi(a1) <= level`, `phi(mid) > level`, all in int K.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub a0: Vec<f64>,
    pub a1: Vec<f64>,
    pub mid: Vec<f64>,
    pub level: f64,
    pub phi_a0: f64,
    pub phi_a1: f64,
    pub phi_mid: f64,
    pub construction: WitnessKind,
}

impl Witness {
    fn build(a: &DMatrix<f64>, a0: DVector<f64>, a1: DVector<f64>, kind: WitnessKind) -> Self {
        let mid = (&a0 + &a1) * 0.5;
        let (p0, p1, pm) = (phi(a, &a0), phi(a, &a1), phi(a, &mid));
        Witness {
            a0: a0.as_slice().to_vec(),
            a1: a1.as_slice().to_vec(),
            mid: mid.as_slice().to_vec(),
            level: p0.max(p1),
            phi_a0: p0,
            phi_a1: p1,
            phi_mid: pm,
            construction: kind,
        }
    }

    /// Re-evaluates the three inequalities and interior membership from scratch.
    pub fn verify(&self, a: &DMatrix<f64>, cone: ConeSpec) -> bool {
        let n = a.nrows();
        if self.a0.len() != n || self.a1.len() != n {
            return false;
        }
        let a0 = DVector::from_column_slice(&self.a0);
        let a1 = DVector::from_column_slice(&self.a1);
        let mid = (&a0 + &a1) * 0.5;
        let inside = [&a0, &a1, &mid].iter().all(|x| interior_slack(cone, x) >= WITNESS_MARGIN);
        inside
            && phi(a, &a0) <= self.level
            && phi(a, &a1) <= self.level
            && phi(a, &mid) - self.level >= WITNESS_MARGIN
    }
}

/// Sampled view of `W = (L_{lambda_2} U -L_{lambda_2}) cap int K` against `v1`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WConeStatus {
    pub samples: usize,
    pub in_w: usize,
    pub positive: usize,
    pub negative: usize,
    /// `<v1, .>` never changed sign on the sampled part of W. Not a proof.
    pub sign_constant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Constant,
    TwoEigenvalues,
    MultipleSmallest,
    Certificate,
    NotZMatrix,
    DiagonalPattern,
    WitnessSearch,
    Exhausted,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct QcDiagnostics {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// `v1` or `-v1` lies in K* (only meaningful when `lambda_1` is simple).
    pub v1_in_dual: Option<bool>,
    pub z_matrix: Option<bool>,
    /// `lambda_2 I - A` is K-copositive.
    pub shifted_copositive: Option<bool>,
    /// Largest value of `phi_A` found on K.
    pub phi_max: Option<f64>,
    pub w_cone: Option<WConeStatus>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcVerdict {
    pub verdict: Verdict,
    pub rule: Rule,
    pub certificate: Option<Certificate>,
    pub witness: Option<Witness>,
    pub diagnostics: QcDiagnostics,
}

pub fn z_matrix_test(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] <= Z_MATRIX_TOL))
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)].abs() <= Z_MATRIX_TOL))
}

/// Rayleigh quotient `<Ax, x> / |x|^2`.
pub fn rayleigh(a: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    if a.nrows() != x.len() || a.ncols() != x.len() {
        return Err(Error::Dimension(format!("matrix {}x{} vs vector {}", a.nrows(), a.ncols(), x.len())));
    }
    if x.norm() == 0.0 {
        return Err(Error::InvalidInput("rayleigh quotient undefined at 0".into()));
    }
    Ok(phi(a, x))
}

fn phi(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (a * x).dot(x) / x.norm_squared()
}

/// `x in int K` and `phi_A(x) <= c`.
pub fn sublevel_member(a: &DMatrix<f64>, cone: ConeSpec, x: &DVector<f64>, c: f64) -> Result<bool> {
    check_cone(cone, x.len())?;
    let v = rayleigh(a, x)?;
    Ok(interior_slack(cone, x) > 0.0 && v <= c)
}

fn check_cone(cone: ConeSpec, n: usize) -> Result<()> {
    match cone {
        ConeSpec::NonnegOrthant(m) | ConeSpec::Lorentz(m) if m == n => Ok(()),
        ConeSpec::NonnegOrthant(_) | ConeSpec::Lorentz(_) => {
            Err(Error::Dimension(format!("{cone:?} does not match dimension {n}")))
        }
        _ => Err(Error::InvalidInput(format!("{cone:?}: only the orthant and the Lorentz cone are supported"))),
    }
}

/// Distance-like interior measure of `x / |x|`; positive iff `x in int K`.
fn interior_slack(cone: ConeSpec, x: &DVector<f64>) -> f64 {
    let nx = x.norm();
    if nx == 0.0 {
        return f64::NEG_INFINITY;
    }
    match cone {
        ConeSpec::Lorentz(_) => (x[0] - x.rows(1, x.len() - 1).norm()) / (nx * std::f64::consts::SQRT_2),
        _ => x.min() / nx,
    }
}

fn in_dual(cone: ConeSpec, v: &DVector<f64>) -> bool {
    // Both supported cones are self-dual.
    cone.violation(v).map(|viol| viol <= DUAL_TOL * v.norm().max(1.0)).unwrap_or(false)
}

fn cone_abs(cone: ConeSpec, v: &DVector<f64>) -> DVector<f64> {
    match cone {
        ConeSpec::Lorentz(_) => lorentz_moreau(v).map(|p| p.abs).unwrap_or_else(|_| v.abs()),
        _ => orthant_moreau(v).abs,
    }
}

fn project(cone: ConeSpec, v: &DVector<f64>) -> DVector<f64> {
    match cone {
        ConeSpec::Lorentz(_) => lorentz_moreau(v).map(|p| p.plus).unwrap_or_else(|_| v.clone()),
        _ => orthant_moreau(v).plus,
    }
}

fn center(cone: ConeSpec, n: usize) -> DVector<f64> {
    match cone {
        ConeSpec::Lorentz(_) => {
            let mut e = DVector::zeros(n);
            e[0] = 1.0;
            e
        }
        _ => DVector::from_element(n, 1.0 / (n as f64).sqrt()),
    }
}

/// Normalizes `x` and pushes it by `delta` toward the cone's center.
fn nudge(cone: ConeSpec, x: &DVector<f64>, delta: f64) -> DVector<f64> {
    x / x.norm() + center(cone, x.len()) * delta
}

/// Exact copositivity on the nonnegative orthant for `n <= n_limit`.
///
/// The minimum of `<Ax, x>` over unit `x >= 0` is attained at a point whose
/// restriction to its support is an eigenvector of the principal submatrix;
/// a minimizer of smallest support has a positive such eigenvector. All
/// `2^n - 1` supports are enumerated.
pub fn orthant_copositive(a: &DMatrix<f64>, n_limit: usize) -> Result<bool> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n > n_limit {
        return Err(Error::Undecidable { n, limit: n_limit });
    }
    let (v, _) = orthant_extreme(a, false);
    Ok(v >= -COPOSITIVE_TOL * a.amax().max(1.0))
}

/// Minimum (`maximize = false`) or maximum of `phi_A` over the orthant with
/// a unit point attaining it.
fn orthant_extreme(a: &DMatrix<f64>, maximize: bool) -> (f64, DVector<f64>) {
    let n = a.nrows();
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut best = (f64::INFINITY, DVector::zeros(n));
    for mask in 1usize..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let sub = a.select_rows(idx.iter()).select_columns(idx.iter()) * sign;
        let (vals, vecs) = sym_eigen(&sub);
        for k in 0..idx.len() {
            if vals[k] >= best.0 {
                break;
            }
            let mut col = vecs.column(k).into_owned();
            if col.max() <= 1e-10 {
                col = -col;
            }
            if col.min() < -1e-10 {
                continue;
            }
            let mut x = DVector::zeros(n);
            for (p, &i) in idx.iter().enumerate() {
                x[i] = col[p].max(0.0);
            }
            best = (vals[k], x / col.norm());
            break;
        }
    }
    (sign * best.0, best.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzCopositivity {
    pub copositive: bool,
    pub rho: Option<f64>,
}

/// Copositivity on the Lorentz cone: some `rho >= 0` makes `A - rho J` PSD,
/// `J = diag(1, -1, ..., -1)`. `rho -> lambda_min(A - rho J)` is concave, so
/// its maximizer on `[0, 2|A|]` is located by bisection on the slope
/// `-<v, J v>` of the bottom eigenvector.
pub fn lorentz_copositive(a: &DMatrix<f64>) -> Result<LorentzCopositivity> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("the Lorentz cone needs n >= 2".into()));
    }
    let shifted = |rho: f64| {
        let mut m = a.clone();
        m[(0, 0)] -= rho;
        for i in 1..n {
            m[(i, i)] += rho;
        }
        let (vals, vecs) = sym_eigen(&m);
        let v = vecs.column(0);
        let jv = v[0] * v[0] - v.rows(1, n - 1).norm_squared();
        (vals[0], -jv)
    };
    let rho_max = 2.0 * a.norm().max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = (0.0, rho_max);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for (rho, (f, _)) in [(0.0, shifted(0.0)), (rho_max, shifted(rho_max))] {
        if f > best.0 {
            best = (f, rho);
        }
    }
    if shifted(0.0).1 > 0.0 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (f, slope) = shifted(mid);
            if f > best.0 {
                best = (f, mid);
            }
            if slope > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * rho_max {
                break;
            }
        }
    }
    let copositive = best.0 >= -COPOSITIVE_TOL * a.amax().max(1.0);
    Ok(LorentzCopositivity { copositive, rho: copositive.then_some(best.1) })
}

/// Maximum of `phi_A` on the Lorentz cone: either an eigenvector inside the
/// cone or a boundary point `(1, w)/sqrt 2`, `|w| = 1`, the latter from the
/// trust-region problem `max w'Bw + 2b'w` on the unit sphere.
fn lorentz_extreme(a: &DMatrix<f64>, maximize: bool) -> (f64, DVector<f64>) {
    let n = a.nrows();
    let sign = if maximize { 1.0 } else { -1.0 };
    let a = a * sign;
    let cone = ConeSpec::Lorentz(n);
    let (vals, vecs) = sym_eigen(&a);
    let mut best = (f64::NEG_INFINITY, DVector::zeros(n));
    for k in 0..n {
        let v = vecs.column(k).into_owned();
        for cand in [v.clone(), -v] {
            if in_dual(cone, &cand) && vals[k] > best.0 {
                best = (vals[k], cand);
            }
        }
    }
    let b = a.view((1, 0), (n - 1, 1)).column(0).into_owned();
    let bb = a.view((1, 1), (n - 1, n - 1)).into_owned();
    let w = sphere_quadratic_max(&bb, &b);
    let mut x = DVector::zeros(n);
    x[0] = 1.0;
    x.rows_mut(1, n - 1).copy_from(&w);
    x /= x.norm();
    let val = phi(&a, &x);
    if val > best.0 {
        best = (val, x);
    }
    (sign * best.0, best.1)
}

/// `argmax w'Bw + 2b'w` over `|w| = 1`.
fn sphere_quadratic_max(bm: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = b.len();
    let (vals, vecs) = sym_eigen(bm);
    // Work in the eigenbasis, largest eigenvalue first.
    let alpha: Vec<f64> = (0..m).rev().map(|i| vals[i]).collect();
    let q: Vec<DVector<f64>> = (0..m).rev().map(|i| vecs.column(i).into_owned()).collect();
    let beta: Vec<f64> = q.iter().map(|qi| qi.dot(b)).collect();
    let bn = b.norm();
    let top = alpha[0];
    let cluster = 1e-12 * alpha[0].abs().max(alpha[m - 1].abs()).max(1.0);
    let in_top: Vec<bool> = alpha.iter().map(|&a| top - a <= cluster).collect();
    let top_beta: f64 = beta.iter().zip(&in_top).filter(|(_, &t)| t).map(|(b, _)| b * b).sum();
    let assemble = |sigma: f64, skip_top: bool| {
        let mut w = DVector::zeros(m);
        for i in 0..m {
            if skip_top && in_top[i] {
                continue;
            }
            w += &q[i] * (beta[i] / (sigma - alpha[i]));
        }
        w
    };
    if bn == 0.0 {
        return q[0].clone();
    }
    if top_beta <= (1e-14 * bn).powi(2) {
        let wp = assemble(top, true);
        let r = wp.norm_squared();
        if r <= 1.0 {
            return wp + &q[0] * (1.0 - r).sqrt();
        }
    }
    let (mut lo, mut hi) = (top, top + bn);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let nrm = assemble(mid, false).norm_squared();
        if nrm > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = assemble(hi, false);
    w.clone() / w.norm()
}

fn cone_extreme(a: &DMatrix<f64>, cone: ConeSpec, maximize: bool, cfg: &QcConfig) -> Option<(f64, DVector<f64>)> {
    match cone {
        ConeSpec::Lorentz(_) => Some(lorentz_extreme(a, maximize)),
        _ if a.nrows() <= cfg.n_limit => Some(orthant_extreme(a, maximize)),
        _ => None,
    }
}

/// Checks, in order, the two-eigenvalue condition, the spiked-pair condition and
/// the eigenvalue-spread condition; returns the first one satisfied.
pub fn subdual_sufficient(spec: &SpectralData, cone: ConeSpec) -> Option<SubdualCondition> {
    let n = spec.n();
    check_cone(cone, n).ok()?;
    if n < 2 || !spec.smallest_simple() || spec.distinct() < 2 {
        return None;
    }
    let v1 = spec.v(1);
    let orient = [v1.clone(), -v1];
    let tol = EIG_CLUSTER_TOL * spec.scale();
    if spec.distinct() == 2 && orient.iter().any(|v| in_dual(cone, v)) {
        return Some(SubdualCondition::TwoEigenvalues);
    }
    let c = &spec.clusters;
    if n >= 3 && c.len() == 3 && c[0].1 == 1 && c[2].1 == 1 {
        let (l, mu, eta) = (c[0].0, c[1].0, c[2].0);
        let r = ((eta - mu) / (mu - l)).sqrt();
        let vn_abs = cone_abs(cone, &spec.v(n));
        if orient.iter().any(|v| in_dual(cone, &(v - &vn_abs * r))) {
            return Some(SubdualCondition::SpikedPair);
        }
    }
    let (l1, l2, ln) = (spec.lambda(1), spec.lambda(2), spec.lambda(n));
    for v in &orient {
        let alpha = match cone {
            ConeSpec::Lorentz(_) => {
                let gap = v[0] - v.rows(1, n - 1).norm();
                if gap <= 0.0 {
                    continue;
                }
                gap * gap / 2.0
            }
            _ => {
                let m = v.min();
                if m <= 0.0 {
                    continue;
                }
                m * m
            }
        };
        if ln <= l2 + alpha * (l2 - l1) + tol {
            return Some(SubdualCondition::EigenvalueSpread { alpha });
        }
    }
    None
}

/// Witness construction with the default configuration.
pub fn witness_construct(spec: &SpectralData, cone: ConeSpec) -> Result<Witness> {
    witness_construct_with(spec, cone, &QcConfig::default())
}

/// Tries, in order: the diagonal closed form, a canonical-vector pair, the
/// saddle construction, and points on opposite sides of `v1`'s hyperplane.
/// Only witnesses that re-verify are returned.
pub fn witness_construct_with(spec: &SpectralData, cone: ConeSpec, cfg: &QcConfig) -> Result<Witness> {
    check_cone(cone, spec.n())?;
    let mut search = WitnessSearch::new(spec, cone, cfg);
    search.run().ok_or_else(|| Error::WitnessUnavailable("no construction produced a verified witness".into()))
}

const NUDGES: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

struct WitnessSearch<'a> {
    spec: &'a SpectralData,
    cone: ConeSpec,
    cfg: &'a QcConfig,
    samples: Option<Vec<DVector<f64>>>,
    phi_max: Option<f64>,
}

impl<'a> WitnessSearch<'a> {
    fn new(spec: &'a SpectralData, cone: ConeSpec, cfg: &'a QcConfig) -> Self {
        WitnessSearch { spec, cone, cfg, samples: None, phi_max: None }
    }

    fn a(&self) -> &DMatrix<f64> {
        &self.spec.matrix
    }

    fn run(&mut self) -> Option<Witness> {
        self.diagonal()
            .or_else(|| self.canonical_pair())
            .or_else(|| self.saddle())
            .or_else(|| self.sheets())
    }

    fn samples(&mut self) -> &[DVector<f64>] {
        if self.samples.is_none() {
            self.samples = Some(sample_interior(self.cone, self.spec.n(), self.cfg.samples, self.cfg.seed));
        }
        self.samples.as_deref().unwrap()
    }

    fn accept(&self, w: Witness) -> Option<Witness> {
        w.verify(self.a(), self.cone).then_some(w)
    }

    /// Diagonal matrix on the orthant: shift by `c` between the second smallest
    /// eigenvalue and a larger one, so `A - cI = diag(d)` has `d_i, d_j < 0 < d_k`.
    /// Then `e^i + t_i e^k` with `t_i = sqrt(-d_i / d_k)` sits on the level set,
    /// and the sum of the two points has value `2 sqrt(d_i d_j) > 0`.
    fn diagonal(&self) -> Option<Witness> {
        let a = self.a();
        let n = self.spec.n();
        if !matches!(self.cone, ConeSpec::NonnegOrthant(_)) || !is_diagonal(a) || n < 3 {
            return None;
        }
        if self.spec.distinct() < 3 && self.spec.smallest_simple() {
            return None;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&p, &q| a[(p, p)].total_cmp(&a[(q, q)]));
        let (i, j, k) = (idx[0], idx[1], idx[n - 1]);
        let (li, lj, lk) = (a[(i, i)], a[(j, j)], a[(k, k)]);
        let tol = EIG_CLUSTER_TOL * self.spec.scale();
        if lk - lj <= tol {
            return None;
        }
        let c = if lj < 0.0 && lk > 0.0 { 0.0 } else { 0.5 * (lj + lk) };
        let ti = ((c - li) / (lk - c)).sqrt();
        let tj = ((c - lj) / (lk - c)).sqrt();
        let mut p = DVector::zeros(n);
        p[i] = 1.0;
        p[k] = ti;
        let mut q = DVector::zeros(n);
        q[j] = 1.0;
        q[k] = tj;
        NUDGES.iter().find_map(|&d| {
            let e = center(self.cone, n) * d;
            self.accept(Witness::build(a, &p + &e, &q + &e, WitnessKind::DiagonalPair))
        })
    }

    /// Orthant, `a_ij > 0`: `phi` on the arc from `e^i` to `e^j` peaks strictly
    /// above both ends.
    fn canonical_pair(&self) -> Option<Witness> {
        let a = self.a();
        if !matches!(self.cone, ConeSpec::NonnegOrthant(_)) || z_matrix_test(a) {
            return None;
        }
        let n = a.nrows();
        let (mut bi, mut bj) = (0, 1);
        for i in 0..n {
            for j in i + 1..n {
                if a[(i, j)] > a[(bi, bj)] {
                    (bi, bj) = (i, j);
                }
            }
        }
        let ei = DVector::from_fn(n, |r, _| if r == bi { 1.0 } else { 0.0 });
        let ej = DVector::from_fn(n, |r, _| if r == bj { 1.0 } else { 0.0 });
        NUDGES.iter().find_map(|&d| {
            let y = nudge(self.cone, &ei, d);
            let z = nudge(self.cone, &ej, d);
            pair_witness(a, &y, &z, WitnessKind::CanonicalPair).and_then(|w| self.accept(w))
        })
    }

    fn extreme(&mut self, maximize: bool) -> (f64, DVector<f64>) {
        if let Some(r) = cone_extreme(self.a(), self.cone, maximize, self.cfg) {
            return r;
        }
        let a = self.a().clone();
        let sign = if maximize { 1.0 } else { -1.0 };
        let best = self
            .samples()
            .iter()
            .max_by(|x, y| (sign * phi(&a, x)).total_cmp(&(sign * phi(&a, y))))
            .cloned()
            .unwrap_or_else(|| DVector::from_element(a.nrows(), 1.0));
        (phi(&a, &best), best)
    }

    /// Needs a point of K with `phi > lambda_2`. Picking `c` strictly between,
    /// `B = A - cI` has two negative eigenvalues and the zero set of
    /// `<Bx, x>` crosses int K at some `xbar`. Along a direction `d` tangent to
    /// that zero set with `<Bd, d> < 0`, the points `xbar + eta g +- eps d`
    /// are in the sublevel set while their midpoint is not.
    fn saddle(&mut self) -> Option<Witness> {
        let (ymax, y) = self.extreme(true);
        self.phi_max = Some(ymax);
        let n = self.spec.n();
        let l2 = self.spec.lambda(2);
        let tol = EIG_CLUSTER_TOL * self.spec.scale();
        if ymax <= l2 + tol {
            return None;
        }
        let (_, z) = self.extreme(false);
        let a = self.a().clone();
        for &d in &NUDGES {
            let yn = nudge(self.cone, &y, d);
            let zn = nudge(self.cone, &z, d);
            let (fy, fz) = (phi(&a, &yn), phi(&a, &zn));
            let lo = l2.max(fz);
            if fy <= lo + tol {
                continue;
            }
            let c = lo + 0.5 * (fy - lo);
            let mut bm = a.clone();
            for i in 0..n {
                bm[(i, i)] -= c;
            }
            let q = |x: &DVector<f64>| (&bm * x).dot(x);
            let (mut s0, mut s1) = (0.0, 1.0);
            let seg = |s: f64| &zn * (1.0 - s) + &yn * s;
            if q(&seg(0.0)) >= 0.0 || q(&seg(1.0)) <= 0.0 {
                continue;
            }
            for _ in 0..200 {
                let m = 0.5 * (s0 + s1);
                if q(&seg(m)) <= 0.0 {
                    s0 = m;
                } else {
                    s1 = m;
                }
            }
            let xbar = seg(0.5 * (s0 + s1)).normalize();
            let g = &bm * &xbar;
            let gn = g.norm();
            if gn <= 1e-12 * self.spec.scale() {
                continue;
            }
            let gh = &g / gn;
            let proj = DMatrix::identity(n, n) - &gh * gh.transpose();
            let (pv, pvec) = sym_eigen(&(&proj * &bm * &proj));
            let mut dir = pvec.column(0).into_owned();
            dir -= &gh * gh.dot(&dir);
            if pv[0] >= 0.0 || dir.norm() < 0.5 {
                continue;
            }
            dir = dir.normalize();
            let curv = (&bm * &dir).dot(&dir);
            if curv >= 0.0 {
                continue;
            }
            let mut eps = 0.5 * interior_slack(self.cone, &xbar).min(1.0);
            for _ in 0..30 {
                let eta = eps * eps * curv.abs() / (4.0 * gn);
                let base = &xbar + &gh * eta;
                let p = &base + &dir * eps;
                let m = &base - &dir * eps;
                if let Some(w) = self.accept(Witness::build(&a, p.clone(), m.clone(), WitnessKind::Saddle)) {
                    return Some(pair_witness(&a, &p, &m, WitnessKind::Saddle)
                        .and_then(|w2| self.accept(w2))
                        .filter(|w2| w2.phi_mid - w2.level > w.phi_mid - w.level)
                        .unwrap_or(w));
                }
                eps *= 0.5;
            }
        }
        None
    }

    /// Points of `[phi < lambda_2]` with `<v1, y> > 0 > <v1, z>`: the segment
    /// crosses `v1`'s hyperplane where `phi >= lambda_2`.
    fn sheets(&mut self) -> Option<Witness> {
        if !self.spec.smallest_simple() || self.spec.n() < 2 {
            return None;
        }
        let a = self.a().clone();
        let v1 = self.spec.v(1);
        let l2 = self.spec.lambda(2);
        let tol = EIG_CLUSTER_TOL * self.spec.scale();
        let mut pos: Vec<DVector<f64>> = Vec::new();
        let mut neg: Vec<DVector<f64>> = Vec::new();
        for (v, side) in [(v1.clone(), 0), (-v1.clone(), 1)] {
            let p = project(self.cone, &v);
            if p.norm() > 1e-12 {
                if side == 0 { pos.push(p) } else { neg.push(p) }
            }
        }
        let mut cand: Vec<(f64, DVector<f64>)> = self
            .samples()
            .iter()
            .filter(|x| phi(&a, x) < l2 - tol)
            .map(|x| (v1.dot(x), x.clone()))
            .collect();
        cand.sort_by(|p, q| p.0.total_cmp(&q.0));
        neg.extend(cand.iter().take(4).filter(|(s, _)| *s < 0.0).map(|(_, x)| x.clone()));
        pos.extend(cand.iter().rev().take(4).filter(|(s, _)| *s > 0.0).map(|(_, x)| x.clone()));
        for &d in &NUDGES {
            for y in &pos {
                for z in &neg {
                    let (yn, zn) = (nudge(self.cone, y, d), nudge(self.cone, z, d));
                    if let Some(w) = pair_witness(&a, &yn, &zn, WitnessKind::OppositeSheets).and_then(|w| self.accept(w)) {
                        return Some(w);
                    }
                }
            }
        }
        None
    }
}

/// Scans `phi` along the segment from `y` to `z` and returns the witness whose
/// midpoint is the segment point of largest `phi`.
fn pair_witness(a: &DMatrix<f64>, y: &DVector<f64>, z: &DVector<f64>, kind: WitnessKind) -> Option<Witness> {
    let y = y.normalize();
    let z = z.normalize();
    let f = |s: f64| phi(a, &(&y * (1.0 - s) + &z * s));
    let grid = 256;
    let (mut bs, mut bf) = (0.5, f(0.5));
    for i in 1..grid {
        let s = i as f64 / grid as f64;
        let v = f(s);
        if v > bf {
            (bs, bf) = (s, v);
        }
    }
    let h = 1.0 / grid as f64;
    let (mut lo, mut hi) = ((bs - h).max(1e-9), (bs + h).min(1.0 - 1e-9));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let s = 0.5 * (lo + hi);
    let s = if f(s) >= bf { s } else { bs };
    let w = Witness::build(a, &y * (2.0 * (1.0 - s)), &z * (2.0 * s), kind);
    (w.phi_mid > w.level).then_some(w)
}

/// Unit directions spread over int K, drawn from a seeded generator.
fn sample_interior(cone: ConeSpec, n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match cone {
            ConeSpec::Lorentz(_) => {
                let tail = x.rows(1, n - 1).norm();
                if tail == 0.0 {
                    continue;
                }
                let r: f64 = rng.random::<f64>().powf(1.0 / (n - 1).max(1) as f64);
                let scale = r / tail;
                x.rows_mut(1, n - 1).scale_mut(scale);
                x[0] = 1.0;
            }
            _ => x.apply(|v| *v = v.abs()),
        }
        let nx = x.norm();
        if nx > 0.0 && interior_slack(cone, &x) > 0.0 {
            out.push(x / nx);
        }
    }
    out
}

fn w_cone_status(spec: &SpectralData, samples: &[DVector<f64>]) -> Option<WConeStatus> {
    let lc = ConeLc::new(spec, spec.lambda(2)).ok()?;
    let v1 = spec.v(1);
    let mut st = WConeStatus { samples: samples.len(), ..Default::default() };
    for x in samples {
        if !lc.contains_either(x) {
            continue;
        }
        st.in_w += 1;
        let s = v1.dot(x);
        if s > 1e-12 {
            st.positive += 1;
        } else if s < -1e-12 {
            st.negative += 1;
        }
    }
    st.sign_constant = st.positive == 0 || st.negative == 0;
    Some(st)
}

/// Full decision cascade with the default configuration.
pub fn qc_analyze(a: &DMatrix<f64>, cone: ConeSpec) -> Result<QcVerdict> {
    qc_analyze_with(a, cone, &QcConfig::default())
}

pub fn qc_analyze_with(a: &DMatrix<f64>, cone: ConeSpec, cfg: &QcConfig) -> Result<QcVerdict> {
    let spec = SpectralData::new(a)?;
    qc_analyze_spectral(&spec, cone, cfg)
}

/// The cascade on precomputed spectral data.
pub fn qc_analyze_spectral(spec: &SpectralData, cone: ConeSpec, cfg: &QcConfig) -> Result<QcVerdict> {
    let n = spec.n();
    check_cone(cone, n)?;
    let orthant = matches!(cone, ConeSpec::NonnegOrthant(_));
    let a = &spec.matrix;
    let mut diag = QcDiagnostics {
        eigenvalues: spec.values.as_slice().to_vec(),
        multiplicities: spec.clusters.iter().map(|c| c.1).collect(),
        z_matrix: orthant.then(|| z_matrix_test(a)),
        ..Default::default()
    };
    let proven = |rule, cert, diag| {
        Ok(QcVerdict { verdict: Verdict::QuasiConvex, rule, certificate: Some(cert), witness: None, diagnostics: diag })
    };
    let mut search = WitnessSearch::new(spec, cone, cfg);
    let refuted = |rule, search: &mut WitnessSearch, mut diag: QcDiagnostics| {
        let w = search.run();
        diag.phi_max = diag.phi_max.or(search.phi_max);
        let verdict = if w.is_some() { Verdict::NotQuasiConvex } else { Verdict::Undecided };
        if w.is_none() {
            diag.note = Some("necessary condition fails but no witness was verified".into());
        }
        Ok(QcVerdict { verdict, rule, certificate: None, witness: w, diagnostics: diag })
    };

    if spec.distinct() == 1 {
        return proven(Rule::Constant, Certificate::ConstantFunction, diag);
    }
    if !spec.smallest_simple() {
        return refuted(Rule::MultipleSmallest, &mut search, diag);
    }
    let v1 = spec.v(1);
    let v1_dual = in_dual(cone, &v1) || in_dual(cone, &-v1.clone());
    diag.v1_in_dual = Some(v1_dual);
    if spec.distinct() == 2 {
        if v1_dual {
            return proven(Rule::TwoEigenvalues, Certificate::TwoEigenvalueCharacterization, diag);
        }
        return refuted(Rule::TwoEigenvalues, &mut search, diag);
    }

    let mut shifted = a * -1.0;
    for i in 0..n {
        shifted[(i, i)] += spec.lambda(2);
    }
    let (copositive, rho) = match cone {
        ConeSpec::Lorentz(_) => {
            let r = lorentz_copositive(&shifted)?;
            (Some(r.copositive), r.rho)
        }
        _ => (orthant_copositive(&shifted, cfg.n_limit).ok(), None),
    };
    diag.shifted_copositive = copositive;
    if v1_dual {
        if let Some(cond) = subdual_sufficient(spec, cone) {
            return cross_check(proven(Rule::Certificate, Certificate::SubdualSufficient(cond), diag)?, a);
        }
        if copositive == Some(true) {
            return cross_check(proven(Rule::Certificate, Certificate::CopositiveShift { rho }, diag)?, a);
        }
    }

    if orthant && diag.z_matrix == Some(false) {
        return refuted(Rule::NotZMatrix, &mut search, diag);
    }
    if orthant && is_diagonal(a) {
        return refuted(Rule::DiagonalPattern, &mut search, diag);
    }
    if let Some(w) = search.run() {
        diag.phi_max = search.phi_max;
        return Ok(QcVerdict {
            verdict: Verdict::NotQuasiConvex,
            rule: Rule::WitnessSearch,
            certificate: None,
            witness: Some(w),
            diagnostics: diag,
        });
    }
    diag.phi_max = search.phi_max;
    diag.w_cone = w_cone_status(spec, search.samples());
    diag.note = Some(if copositive == Some(true) && !v1_dual {
        "lambda_2 I - A is copositive and +-v1 is outside K*, so q_A is not quasi-convex, but no witness was verified".into()
    } else {
        "no sufficient condition holds and no witness was found".into()
    });
    Ok(QcVerdict { verdict: Verdict::Undecided, rule: Rule::Exhausted, certificate: None, witness: None, diagnostics: diag })
}

/// On the orthant a quasi-convex `q_A` forces a Z-matrix; a certificate that
/// contradicts this is withdrawn.
fn cross_check(mut v: QcVerdict, a: &DMatrix<f64>) -> Result<QcVerdict> {
    if v.verdict == Verdict::QuasiConvex && v.diagnostics.z_matrix == Some(false) {
        debug_assert!(false, "quasi-convex certificate on a non-Z matrix");
        v.verdict = Verdict::Undecided;
        v.certificate = None;
        v.diagnostics.note = Some(format!("certificate conflicts with the Z-matrix test (n = {})", a.nrows()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn householder(n: usize) -> DMatrix<f64> {
        let v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        DMatrix::identity(n, n) - &v * v.transpose() * 2.0
    }

    #[test]
    fn z_matrix_examples() {
        assert!(z_matrix_test(&DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])));
        assert!(!z_matrix_test(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])));
        assert!(z_matrix_test(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 7.0]))));
    }

    #[test]
    fn orthant_copositive_examples() {
        assert!(orthant_copositive(&DMatrix::identity(3, 3), 12).unwrap());
        assert!(!orthant_copositive(&DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]), 12).unwrap());
        assert!(matches!(
            orthant_copositive(&DMatrix::identity(13, 13), 12),
            Err(Error::Undecidable { n: 13, limit: 12 })
        ));
    }

    #[test]
    fn lorentz_copositive_examples() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, -1.0]));
        let r = lorentz_copositive(&j).unwrap();
        assert!(r.copositive);
        assert_relative_eq!(r.rho.unwrap(), 1.0, epsilon = 1e-8);
        assert!(!lorentz_copositive(&-DMatrix::<f64>::identity(3, 3)).unwrap().copositive);
    }

    #[test]
    fn rayleigh_examples() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(rayleigh(&a, &DVector::from_vec(vec![0.0, 1.0])).unwrap(), 3.0);
        assert!(rayleigh(&a, &DVector::zeros(2)).is_err());
        let x = DVector::from_vec(vec![0.3, -1.2]);
        assert_relative_eq!(rayleigh(&a, &x).unwrap(), rayleigh(&a, &(&x * 2.0)).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn householder_is_quasi_convex() {
        for n in [3, 5, 8] {
            let v = qc_analyze(&householder(n), ConeSpec::NonnegOrthant(n)).unwrap();
            assert_eq!(v.verdict, Verdict::QuasiConvex);
            assert_eq!(v.certificate, Some(Certificate::TwoEigenvalueCharacterization));
        }
    }

    #[test]
    fn diagonal_witness_closed_form() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, 1.0]));
        let spec = SpectralData::new(&a).unwrap();
        let w = witness_construct(&spec, ConeSpec::NonnegOrthant(3)).unwrap();
        assert_eq!(w.construction, WitnessKind::DiagonalPair);
        assert!(w.verify(&a, ConeSpec::NonnegOrthant(3)));
        let s = DVector::from_column_slice(&w.a0) + DVector::from_column_slice(&w.a1);
        assert_relative_eq!((&a * &s).dot(&s), 2.0, epsilon = 1e-4);
        assert!(w.level.abs() < 1e-4);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-4.0, -1.0, 1.0]));
        let w = witness_construct(&SpectralData::new(&a).unwrap(), ConeSpec::NonnegOrthant(3)).unwrap();
        let s = DVector::from_column_slice(&w.a0) + DVector::from_column_slice(&w.a1);
        assert_relative_eq!((&a * &s).dot(&s), 4.0, epsilon = 1e-4);
        assert_relative_eq!(w.a0[2], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn no_witness_for_quasi_convex_psd() {
        for d in [vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 2.0]] {
            let a = DMatrix::from_diagonal(&DVector::from_vec(d));
            let spec = SpectralData::new(&a).unwrap();
            assert!(matches!(
                witness_construct(&spec, ConeSpec::NonnegOrthant(3)),
                Err(Error::WitnessUnavailable(_))
            ));
        }
    }

    #[test]
    fn non_symmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(qc_analyze(&a, ConeSpec::NonnegOrthant(2)).is_err());
    }

    #[test]
    fn sphere_quadratic_matches_brute_force() {
        let bm = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, -2.0]);
        let b = DVector::from_vec(vec![0.3, -0.7]);
        let w = sphere_quadratic_max(&bm, &b);
        let h = |w: &DVector<f64>| (&bm * w).dot(w) + 2.0 * b.dot(w);
        let brute = (0..20000)
            .map(|i| {
                let t = i as f64 / 20000.0 * std::f64::consts::TAU;
                h(&DVector::from_vec(vec![t.cos(), t.sin()]))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(w.norm(), 1.0, epsilon = 1e-12);
        assert!((h(&w) - brute).abs() < 1e-6);
    }
}
