use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Fixed point of the discrete-time Riccati recursion and its gain.
#[derive(Clone, Debug)]
pub struct LqrSolution {
    /// State feedback gain; the control is `u = −K x`.
    pub gain: DMatrix<f64>,
    pub riccati: DMatrix<f64>,
    pub spectral_radius: f64,
    /// `‖P − RiccatiStep(P)‖∞` at return.
    pub residual: f64,
}

impl LqrSolution {
    /// `clip(−K s)` to `[−1, 1]`.
    pub fn action(&self, s: &[f64]) -> Vec<f64> {
        let x = DMatrix::from_column_slice(s.len(), 1, s);
        let u = -(&self.gain * x);
        u.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
    }
}

fn gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Config("R + BᵀPB is singular".into()))?;
    Ok(s_inv * bt_p * a)
}

/// `Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = gain(a, b, r, p)?;
    let at_p = a.transpose() * p;
    Ok(q + &at_p * a - at_p * b * k)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Spectral radius estimate `‖Mᵏ‖^{1/k}` for `k = 2^squarings`, by repeated
/// squaring with renormalisation.
pub fn spectral_radius(m: &DMatrix<f64>, squarings: u32) -> f64 {
    let mut cur = m.clone();
    let mut log_scale = 0.0;
    for _ in 0..squarings {
        let n = cur.norm();
        if n == 0.0 {
            return 0.0;
        }
        cur /= n;
        log_scale = 2.0 * (log_scale + n.ln());
        cur = &cur * &cur;
    }
    let n = cur.norm();
    if n == 0.0 {
        return 0.0;
    }
    ((log_scale + n.ln()) / 2f64.powi(squarings as i32)).exp()
}

/// Iterates the Riccati recursion from `P = Q` until `‖ΔP‖∞ < tol`.
pub fn solve_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    iters: usize,
    tol: f64,
) -> Result<LqrSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Config("LQR matrix dimensions are inconsistent".into()));
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..iters {
        let next = riccati_step(a, b, q, r, &p)?;
        residual = max_abs(&(&next - &p));
        p = next;
        if residual < tol {
            let k = gain(a, b, r, &p)?;
            let closed = a - b * &k;
            // Symmetrise away round-off.
            let p = (&p + p.transpose()) * 0.5;
            return Ok(LqrSolution {
                spectral_radius: spectral_radius(&closed, 40),
                gain: k,
                riccati: p,
                residual,
            });
        }
    }
    Err(Error::LqrNotConverged { iters, residual })
}

/// Double-integrator matrices and the quadratic cost of the point-mass task.
pub fn pointmass_system(dt: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0, dt, 0.0,
        0.0, 1.0, 0.0, dt,
        0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        0.0, 0.0,
        dt, 0.0,
        0.0, dt,
    ]);
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.1, 0.1]));
    let r = DMatrix::identity(2, 2) * 0.01;
    (a, b, q, r)
}
