//! Discrete Riccati reference for linear dynamics with a quadratic terminal
//! reward.
//!
//! Dynamics `x_{k+1} = F x_k + dt·u_k` with `F = I + dt·A`, cost
//! `Σ_k ½ dt |u_k|² + c_T |x_n − y|²`. The value function is
//! `V_k(x) = ½ xᵀ P_k x + q_kᵀ x + c_k`; the backward sweep gives the exact
//! optimum of the discrete problem.

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LqrSolution {
    /// `V_0(x_0)`.
    pub cost: f64,
    pub controls: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

/// Solves the problem above with terminal weight `c_T = terminal_weight`.
/// `a` is row-major `d × d`.
pub fn solve(
    a: &[f64],
    dim: usize,
    dt: f64,
    n: usize,
    target: &[f64],
    terminal_weight: f64,
    x0: &[f64],
) -> Result<LqrSolution> {
    ensure!(
        a.len() == dim * dim && target.len() == dim && x0.len() == dim,
        "shape mismatch"
    );
    ensure!(
        n >= 1 && dt > 0.0,
        "need at least one step of positive length"
    );
    let eye = DMatrix::<f64>::identity(dim, dim);
    let f = &eye + DMatrix::from_row_slice(dim, dim, a) * dt;
    let b = &eye * dt;
    let y = DVector::from_column_slice(target);

    let mut p = &eye * (2.0 * terminal_weight);
    let mut q = &y * (-2.0 * terminal_weight);
    let mut c = terminal_weight * y.dot(&y);
    // feedback u_k = −K_k x − k_k, stored backwards
    let mut gains = Vec::with_capacity(n);
    for _ in 0..n {
        let s = &eye * dt + b.transpose() * &p * &b;
        let s_inv = s.try_inverse().context("singular Riccati step")?;
        let bt_p = b.transpose() * &p;
        let k_mat = &s_inv * &bt_p * &f;
        let k_vec = &s_inv * (b.transpose() * &q);
        let fpb = f.transpose() * &p * &b;
        let p_next = f.transpose() * &p * &f - &fpb * &s_inv * fpb.transpose();
        let bq = b.transpose() * &q;
        c -= 0.5 * bq.dot(&(&s_inv * &bq));
        q = f.transpose() * &q - &fpb * &s_inv * &bq;
        // symmetrize against round-off drift
        p = (&p_next + p_next.transpose()) * 0.5;
        gains.push((k_mat, k_vec));
    }
    gains.reverse();

    let mut x = DVector::from_column_slice(x0);
    let cost = 0.5 * x.dot(&(&p * &x)) + q.dot(&x) + c;
    let mut states = vec![x.as_slice().to_vec()];
    let mut controls = Vec::with_capacity(n);
    for (k_mat, k_vec) in &gains {
        let u = -(k_mat * &x) - k_vec;
        x = &f * &x + &b * &u;
        controls.push(u.as_slice().to_vec());
        states.push(x.as_slice().to_vec());
    }
    Ok(LqrSolution {
        cost,
        controls,
        states,
    })
}

/// Cost of an arbitrary control sequence under the same dynamics.
pub fn evaluate(
    a: &[f64],
    dim: usize,
    dt: f64,
    target: &[f64],
    terminal_weight: f64,
    x0: &[f64],
    controls: &[Vec<f64>],
) -> f64 {
    let f = DMatrix::<f64>::identity(dim, dim) + DMatrix::from_row_slice(dim, dim, a) * dt;
    let mut x = DVector::from_column_slice(x0);
    let mut energy = 0.0;
    for u in controls {
        let u = DVector::from_column_slice(u);
        energy += 0.5 * dt * u.dot(&u);
        x = &f * &x + &u * dt;
    }
    let e = x - DVector::from_column_slice(target);
    energy + terminal_weight * e.dot(&e)
}
