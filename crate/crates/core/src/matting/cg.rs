use super::{MattingError, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    /// Relative residual target ‖b − Ax‖ / ‖b‖.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for a symmetric positive definite
/// operator `a`. `observe` sees every iterate, starting with `x0`.
pub fn conjugate_gradient(
    a: impl Fn(&[f64], &mut [f64]),
    diagonal: &[f64],
    b: &[f64],
    x0: Vec<f64>,
    opts: CgOptions,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<CgSolution, MattingError> {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = x0;
    observe(0, &x);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = diagonal.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();

    let mut ax = vec![0.0; n];
    a(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut residual = norm(&r) / b_norm;
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(MattingError::NotConverged { iterations, residual });
        }
        a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(MattingError::NotConverged { iterations, residual });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        observe(iterations, &x);
        residual = norm(&r) / b_norm;
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    // Report the true residual rather than the recursively updated one.
    a(&x, &mut ax);
    let true_r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    Ok(CgSolution {
        x,
        iterations,
        relative_residual: norm(&true_r) / b_norm,
    })
}

/// Solves `(M + λI) d = λ·target`, warm-started at `target`.
pub fn solve_soft_matting(
    m: &SparseMatrix,
    target: &[f64],
    lambda: f64,
    opts: CgOptions,
) -> Result<CgSolution, MattingError> {
    solve_soft_matting_observed(m, target, lambda, opts, |_, _| {})
}

pub fn solve_soft_matting_observed(
    m: &SparseMatrix,
    target: &[f64],
    lambda: f64,
    opts: CgOptions,
    observe: impl FnMut(usize, &[f64]),
) -> Result<CgSolution, MattingError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(MattingError::Parameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if target.len() != m.dim() {
        return Err(MattingError::Dimension {
            expected: m.dim(),
            got: target.len(),
        });
    }
    let b: Vec<f64> = target.iter().map(|t| lambda * t).collect();
    let diagonal: Vec<f64> = m.diagonal().iter().map(|d| d + lambda).collect();
    let op = |v: &[f64], out: &mut [f64]| {
        m.matvec_into(v, out);
        out.iter_mut().zip(v).for_each(|(o, vi)| *o += lambda * vi);
    };
    conjugate_gradient(op, &diagonal, &b, target.to_vec(), opts, observe)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
