#![allow(dead_code)]

use esoccp::cones::ConeSpec;
use esoccp::esoclcp::EsocLcpInstance;
use esoccp::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(lo..hi))
}

pub fn uniform_mat(r: &mut ChaCha8Rng, m: usize, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| r.random_range(lo..hi))
}

/// Random point of L(k, l): `x = |u| e + s`, `s >= 0`.
pub fn esoc_point(r: &mut ChaCha8Rng, k: usize, l: usize) -> (DVector<f64>, DVector<f64>) {
    let u = uniform_vec(r, l, -2.0, 2.0);
    let x = uniform_vec(r, k, 0.0, 1.5).add_scalar(u.norm());
    (x, u)
}

/// Instance with `T = I + 0.2 R`, strongly monotone for the sizes used here.
pub fn monotone_instance(r: &mut ChaCha8Rng, k: usize, l: usize) -> EsocLcpInstance {
    let n = k + l;
    let t = DMatrix::identity(n, n) + uniform_mat(r, n, n, -1.0, 1.0) * (0.2 / n as f64);
    let rv = uniform_vec(r, n, -2.0, 2.0);
    EsocLcpInstance::from_t_r(&t, &rv, k, l).unwrap()
}

pub fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

/// Central differences of a vector function, one column per coordinate.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = f(z).len();
    let mut j = DMatrix::zeros(m, z.len());
    for c in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[c] += h;
        zm[c] -= h;
        j.set_column(c, &((f(&zp) - f(&zm)) / (2.0 * h)));
    }
    j
}

/// Solution of the demo instance computed by LM from the coupled start
/// (merit about 1e-17); the printed rationals are only good to about 1e-5.
pub fn computed_solution() -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    use esoccp::solvers::{solve_esoclcp, SolverConfig, SolverKind};
    let cfg = SolverConfig { tol: 1e-12, ..SolverConfig::default() };
    let s = solve_esoclcp(&esoccp::esoclcp::demo_instance(), SolverKind::Lm, None, &cfg).unwrap();
    (s.x, s.u, s.z)
}

pub fn from_spectrum(vecs: &[DVector<f64>], vals: &[f64]) -> DMatrix<f64> {
    let n = vals.len();
    let mut a = DMatrix::zeros(n, n);
    for (v, &l) in vecs.iter().zip(vals) {
        a += v * v.transpose() * l;
    }
    (&a + a.transpose()) * 0.5
}

pub fn unit(n: usize, i: usize) -> DVector<f64> {
    DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 })
}

pub fn householder(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    DMatrix::identity(n, n) - v * v.transpose() * (2.0 / v.norm_squared())
}

/// `v1 = (e1 + en)/sqrt 2`, `vn = (e1 - en)/sqrt 2`, middle vectors canonical.
pub fn spiked(n: usize, l: f64, mu: f64, eta: f64) -> DMatrix<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut vecs = vec![(unit(n, 0) + unit(n, n - 1)) * s];
    let mut vals = vec![l];
    for i in 1..n - 1 {
        vecs.push(unit(n, i));
        vals.push(mu);
    }
    vecs.push((unit(n, 0) - unit(n, n - 1)) * s);
    vals.push(eta);
    from_spectrum(&vecs, &vals)
}

/// `v1 = e/sqrt n` and `v^j = (e1 - (n+1-j) e^j + sum_{i>j} e^i) / sqrt((n+1-j) + (n+1-j)^2)`.
pub fn spread_family(vals: &[f64]) -> DMatrix<f64> {
    let n = vals.len();
    let mut vecs = vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())];
    for j in 2..=n {
        let m = (n + 1 - j) as f64;
        let mut v = unit(n, 0);
        v[j - 1] -= m;
        for i in j..n {
            v[i] += 1.0;
        }
        vecs.push(v / (m + m * m).sqrt());
    }
    from_spectrum(&vecs, vals)
}

pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

pub fn sample_cone(cone: ConeSpec, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let mut x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match cone {
            ConeSpec::Lorentz(_) => {
                let tail = x.rows(1, n - 1).norm();
                let r: f64 = rng.random::<f64>().powf(1.0 / (n - 1) as f64);
                x.rows_mut(1, n - 1).scale_mut(r / tail);
                x[0] = 1.0;
                if r < 1.0 {
                    return x;
                }
            }
            _ => {
                x.apply(|v| *v = v.abs());
                if x.min() > 0.0 {
                    return x;
                }
            }
        }
    }
}

pub fn phi(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (a * x).dot(x) / x.norm_squared()
}

/// Midpoint failures of sampled sublevel sets: 50 levels, 1e4 pairs each.
pub fn sublevel_violations(a: &DMatrix<f64>, cone: ConeSpec, seed: u64) -> usize {
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, DVector<f64>)> =
        (0..20_000).map(|_| sample_cone(cone, n, &mut rng)).map(|x| (phi(a, &x), x)).collect();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut bad = 0;
    for _ in 0..50 {
        let c = lo + (hi - lo) * rng.random::<f64>();
        let inside: Vec<&DVector<f64>> = pts.iter().filter(|p| p.0 <= c).map(|p| &p.1).collect();
        if inside.len() < 2 {
            continue;
        }
        for _ in 0..10_000 {
            let x = inside[rng.random_range(0..inside.len())];
            let y = inside[rng.random_range(0..inside.len())];
            // Random positive scalings: the sublevel set is a cone.
            let s: f64 = rng.random_range(0.1..10.0);
            let m = x + y * s;
            if phi(a, &m) > c + 1e-12 * (1.0 + c.abs()) {
                bad += 1;
            }
        }
    }
    bad
}
