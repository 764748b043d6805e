//! Derivative-free bracketed minimization in one variable.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Brent's method (golden section with parabolic interpolation) on `[a, b]`.
///
/// The endpoints are evaluated as well, so a minimum sitting on the boundary
/// is returned exactly rather than approached to within the tolerance.
pub fn brent<F>(mut f: F, a: f64, b: f64, x_tol: f64, max_iter: usize) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("invalid bracket [{a}, {b}]")));
    }
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut evaluations = 0usize;
    let mut eval = |x: f64, evaluations: &mut usize| -> Result<f64> {
        *evaluations += 1;
        let v = f(x)?;
        if v.is_nan() {
            return Err(Error::NonConvergence(format!("objective is NaN at {x}")));
        }
        Ok(v)
    };

    let (mut lo, mut hi) = (a, b);
    let mut x = lo + GOLD * (hi - lo);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x, &mut evaluations)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let xm = 0.5 * (lo + hi);
        let tol1 = x_tol + 1e-10 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (hi - lo) {
            converged = true;
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { lo - x } else { hi - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = eval(u, &mut evaluations)?;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "Brent minimization did not converge in {max_iter} iterations (bracket [{lo}, {hi}])"
        )));
    }
    let mut best = Minimum {
        x,
        fx,
        iterations,
        evaluations,
    };
    for edge in [a, b] {
        if (edge - best.x).abs() <= 4.0 * x_tol + 1e-3 * (b - a) {
            let fe = eval(edge, &mut evaluations)?;
            if fe <= best.fx {
                best.x = edge;
                best.fx = fe;
            }
        }
    }
    best.evaluations = evaluations;
    Ok(best)
}

/// Solution of a linear least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coef: Vec<f64>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// `(AᵀWA)⁻¹`, row-major.
    pub unscaled_covariance: Vec<f64>,
}

/// Minimizes `Σ w_i (y_i − Σ_k c_k cols[k][i])²` by a QR factorization of the
/// weighted design (modified Gram–Schmidt, applied twice).
pub fn linear_lstsq(cols: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let p = cols.len();
    let n = y.len();
    if p == 0 || cols.iter().any(|c| c.len() != n) || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Dimension(
            "design columns, data and weights must share a length".into(),
        ));
    }
    if n < p {
        return Err(Error::RankDeficient(format!(
            "{n} observations for {p} coefficients"
        )));
    }
    let sw: Vec<f64> = match weights {
        Some(w) => {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Domain(
                    "weights must be finite and non-negative".into(),
                ));
            }
            w.iter().map(|v| v.sqrt()).collect()
        }
        None => vec![1.0; n],
    };
    let mut q: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| c.iter().zip(&sw).map(|(a, s)| a * s).collect())
        .collect();
    let mut r = vec![0.0; p * p];
    for k in 0..p {
        let col_norm = q[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for j in 0..k {
                let proj: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
                r[j * p + k] += proj;
                let (head, tail) = q.split_at_mut(k);
                tail[0]
                    .iter_mut()
                    .zip(&head[j])
                    .for_each(|(b, a)| *b -= proj * a);
            }
        }
        let nk = q[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nk > 1e-12 * col_norm) || nk == 0.0 {
            return Err(Error::RankDeficient(format!(
                "design column {k} is linearly dependent"
            )));
        }
        r[k * p + k] = nk;
        q[k].iter_mut().for_each(|v| *v /= nk);
    }
    let yw: Vec<f64> = y.iter().zip(&sw).map(|(a, s)| a * s).collect();
    let qty: Vec<f64> = q
        .iter()
        .map(|qk| qk.iter().zip(&yw).map(|(a, b)| a * b).sum())
        .collect();
    let coef = back_substitute(&r, p, &qty);
    let rss = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|k| coef[k] * cols[k][i]).sum();
            let res = (y[i] - fit) * sw[i];
            res * res
        })
        .sum();
    // R⁻¹ column by column, then (RᵀR)⁻¹ = R⁻¹R⁻ᵀ
    let mut rinv = vec![0.0; p * p];
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = back_substitute(&r, p, &e);
        for i in 0..p {
            rinv[i * p + j] = col[i];
        }
    }
    let mut cov = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            cov[i * p + j] = (0..p).map(|k| rinv[i * p + k] * rinv[j * p + k]).sum();
        }
    }
    Ok(LinearFit {
        coef,
        rss,
        unscaled_covariance: cov,
    })
}

fn back_substitute(r: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r[i * p + j] * x[j]).sum();
        x[i] = (b[i] - s) / r[i * p + i];
    }
    x
}
