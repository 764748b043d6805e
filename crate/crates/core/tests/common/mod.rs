//! Dense reference implementation of the thermal master equation, built
//! without the sparse superoperator path.
#![allow(dead_code)]

use cqed_core::device::DeviceParams;
use cqed_core::C64;
use faer::linalg::solvers::Solve;
use faer::Mat;

const I: C64 = C64::new(0.0, 1.0);

/// Row-major square matrix.
#[derive(Clone)]
pub struct Dense {
    pub n: usize,
    pub v: Vec<C64>,
}

impl Dense {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            v: vec![C64::new(0.0, 0.0); n * n],
        }
    }
    pub fn at(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.v[i * self.n + j]
    }
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.v[i * self.n + j]
    }
    pub fn mul(&self, o: &Self) -> Self {
        let mut r = Self::zeros(self.n);
        for i in 0..self.n {
            for k in 0..self.n {
                let a = self.get(i, k);
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..self.n {
                    r.v[i * self.n + j] += a * o.get(k, j);
                }
            }
        }
        r
    }
    pub fn dag(&self) -> Self {
        let mut r = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                *r.at(i, j) = self.get(j, i).conj();
            }
        }
        r
    }
    pub fn lin(&self, a: C64, o: &Self, b: C64) -> Self {
        Self {
            n: self.n,
            v: self
                .v
                .iter()
                .zip(&o.v)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }
}

pub struct Model {
    pub h: Dense,
    pub channels: Vec<(Dense, f64)>,
}

/// Hamiltonian and jump operators in the frame rotating at ω_r.
pub fn dense_model(p: &DeviceParams, n_th: f64, nc: usize, nt: usize, dephasing: bool) -> Model {
    let d = nc * nt;
    let idx = |n: usize, m: usize| n * nt + m;
    let levels = p.transmon_levels(nt);
    let ratios: Vec<f64> = (1..nt).map(|l| (l as f64).sqrt()).collect();
    let wr = p.cavity_frequency;
    let mut h = Dense::zeros(d);
    let mut a = Dense::zeros(d);
    let mut s = Dense::zeros(d);
    let mut nq = Dense::zeros(d);
    for n in 0..nc {
        for m in 0..nt {
            *h.at(idx(n, m), idx(n, m)) = C64::new(levels[m] - m as f64 * wr, 0.0);
            *nq.at(idx(n, m), idx(n, m)) = C64::new(m as f64, 0.0);
            if n > 0 {
                *a.at(idx(n - 1, m), idx(n, m)) = C64::new((n as f64).sqrt(), 0.0);
            }
            if m > 0 {
                *s.at(idx(n, m - 1), idx(n, m)) = C64::new(ratios[m - 1], 0.0);
            }
        }
    }
    let coupling = a.dag().mul(&s).lin(
        C64::new(p.coupling, 0.0),
        &a.mul(&s.dag()),
        C64::new(p.coupling, 0.0),
    );
    let h = h.lin(C64::new(1.0, 0.0), &coupling, C64::new(1.0, 0.0));
    let mut channels = vec![
        (a.clone(), (n_th + 1.0) * p.kappa),
        (a.dag(), n_th * p.kappa),
        (s, p.gamma),
    ];
    if dephasing {
        channels.push((nq, p.gamma_phi.unwrap()));
    }
    Model { h, channels }
}

pub fn apply(m: &Model, rho: &Dense) -> Dense {
    let one = C64::new(1.0, 0.0);
    let comm = m.h.mul(rho).lin(one, &rho.mul(&m.h), -one);
    let mut out = comm.lin(-I, &comm, C64::new(0.0, 0.0));
    for (c, rate) in &m.channels {
        let cd = c.dag();
        let cdc = cd.mul(c);
        let jump = c.mul(rho).mul(&cd);
        let anti = cdc.mul(rho).lin(one, &rho.mul(&cdc), one);
        let dis = jump.lin(one, &anti, C64::new(-0.5, 0.0));
        out = out.lin(one, &dis, C64::new(*rate, 0.0));
    }
    out
}

/// Superoperator on column-stacked vec(ρ), built one basis matrix at a time.
pub fn dense_liouvillian(m: &Model) -> Mat<C64> {
    let d = m.h.n;
    let mut l = Mat::<C64>::zeros(d * d, d * d);
    for col in 0..d * d {
        let (i, k) = (col % d, col / d);
        let mut e = Dense::zeros(d);
        *e.at(i, k) = C64::new(1.0, 0.0);
        let le = apply(m, &e);
        for q in 0..d {
            for p in 0..d {
                l[(p + q * d, col)] = le.get(p, q);
            }
        }
    }
    l
}

pub struct Eig {
    pub values: Vec<C64>,
    pub vectors: Mat<C64>,
}

pub fn eig(l: &Mat<C64>) -> Eig {
    let e = l.eigen().expect("dense eigendecomposition");
    let n = l.nrows();
    Eig {
        values: (0..n).map(|k| e.S()[k]).collect(),
        vectors: e.U().to_owned(),
    }
}

pub fn dense_steady_state(e: &Eig, d: usize) -> Vec<C64> {
    let k = (0..e.values.len())
        .min_by(|&a, &b| e.values[a].norm().total_cmp(&e.values[b].norm()))
        .unwrap();
    let v: Vec<C64> = (0..d * d).map(|i| e.vectors[(i, k)]).collect();
    let tr: C64 = (0..d).map(|i| v[i * (d + 1)]).sum();
    v.iter().map(|x| x / tr).collect()
}

pub fn dense_evolve(e: &Eig, rho0: &[C64], t: f64) -> Vec<C64> {
    let n = rho0.len();
    let b = Mat::from_fn(n, 1, |i, _| rho0[i]);
    let c = e.vectors.partial_piv_lu().solve(&b);
    let scaled = Mat::from_fn(n, 1, |i, _| c[(i, 0)] * (e.values[i] * t).exp());
    let x = &e.vectors * &scaled;
    (0..n).map(|i| x[(i, 0)]).collect()
}

pub fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
