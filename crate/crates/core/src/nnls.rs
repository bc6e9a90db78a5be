//! Lawson–Hanson active-set solver for non-negative least squares.

use nalgebra::{DMatrix, DVector};

/// Solution of `min ||A x - b||₂` subject to `x >= 0`.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: f64,
}

fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    let z = svd.solve(b, 1e-14).expect("svd computed with both factors");
    let mut full = DVector::zeros(a.ncols());
    for (k, &j) in passive.iter().enumerate() {
        full[j] = z[k];
    }
    full
}

pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let n = a.ncols();
    let tol = 1e-13 * a.norm().max(1.0);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|j| !passive.contains(j))
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = candidate else { break };
        if w[t] <= tol {
            break;
        }
        passive.push(t);

        loop {
            let z = solve_passive(a, b, &passive);
            if passive.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut blocking = None;
            for &j in &passive {
                if z[j] <= 0.0 {
                    let denom = x[j] - z[j];
                    let step = if denom > 0.0 { x[j] / denom } else { 0.0 };
                    if step < alpha {
                        alpha = step;
                        blocking = Some(j);
                    }
                }
            }
            x = &x + (&z - &x) * alpha;
            if let Some(j) = blocking {
                x[j] = 0.0;
            }
            passive.retain(|&j| x[j] > tol * 1e-3);
            for j in 0..n {
                if !passive.contains(&j) {
                    x[j] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }

    let residual = (a * &x - b).norm();
    NnlsSolution { x, residual }
}
