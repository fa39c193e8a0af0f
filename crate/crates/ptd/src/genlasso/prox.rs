//! Proximal operators: soft thresholding, the exact O(n) dynamic-programming
//! fused-lasso solver, Euclidean projection onto the L1 ball, and the
//! specialized trend-filtering ADMM.

use crate::banded::ridge_gram_cholesky;
use crate::error::{Error, Result};
use crate::penalty::trend_filter_op;
use crate::vecmath::{axpy, norm2};

use super::SolverSettings;

/// Componentwise `sign(y) * max(|y| - lambda, 0)`.
pub fn soft_threshold(y: &[f64], lambda: f64) -> Vec<f64> {
    y.iter()
        .map(|&v| {
            let a = v.abs() - lambda;
            if a > 0.0 {
                v.signum() * a
            } else {
                0.0
            }
        })
        .collect()
}

/// Exact minimizer of `1/2 ||y - b||^2 + lambda * sum_i |b_{i+1} - b_i|`
/// by dynamic programming over the piecewise-linear derivative messages.
/// Runs in O(n).
pub fn fused_lasso_prox(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    if n <= 1 || lambda == 0.0 {
        return y.to_vec();
    }
    // Knot positions and the (slope, intercept) increments of the clipped
    // message derivative, kept as a deque in the middle of the arrays.
    let mut x = vec![0.0; 2 * n];
    let mut a = vec![0.0; 2 * n];
    let mut b = vec![0.0; 2 * n];
    let mut tm = vec![0.0; n - 1];
    let mut tp = vec![0.0; n - 1];
    let mut beta = vec![0.0; n];

    tm[0] = y[0] - lambda;
    tp[0] = y[0] + lambda;
    let mut l = n - 1;
    let mut r = n;
    x[l] = tm[0];
    x[r] = tp[0];
    a[l] = 1.0;
    b[l] = -y[0] + lambda;
    a[r] = -1.0;
    b[r] = y[0] + lambda;
    let mut afirst = 1.0;
    let mut bfirst = -lambda - y[1];
    let mut alast = -1.0;
    let mut blast = -lambda + y[1];

    for k in 1..n - 1 {
        // walk up from the left until the derivative exceeds -lambda
        let mut alo = afirst;
        let mut blo = bfirst;
        let mut lo = l;
        while lo <= r && alo * x[lo] + blo < -lambda {
            alo += a[lo];
            blo += b[lo];
            lo += 1;
        }
        tm[k] = (-lambda - blo) / alo;
        l = lo - 1;
        x[l] = tm[k];

        // walk down from the right until the derivative drops below lambda
        let mut ahi = alast;
        let mut bhi = blast;
        let mut hi = r as isize;
        while hi >= l as isize && -ahi * x[hi as usize] - bhi > lambda {
            ahi += a[hi as usize];
            bhi += b[hi as usize];
            hi -= 1;
        }
        tp[k] = (lambda + bhi) / (-ahi);
        r = (hi + 1) as usize;
        x[r] = tp[k];

        a[l] = alo;
        b[l] = blo + lambda;
        a[r] = ahi;
        b[r] = bhi + lambda;
        afirst = 1.0;
        bfirst = -lambda - y[k + 1];
        alast = -1.0;
        blast = -lambda + y[k + 1];
    }

    // last coefficient minimizes the full objective
    let mut alo = afirst;
    let mut blo = bfirst;
    let mut lo = l;
    while lo <= r && alo * x[lo] + blo < 0.0 {
        alo += a[lo];
        blo += b[lo];
        lo += 1;
    }
    beta[n - 1] = -blo / alo;
    for k in (0..n - 1).rev() {
        beta[k] = beta[k + 1].clamp(tm[k], tp[k]);
    }
    beta
}

/// Euclidean projection onto `{ z : ||z||_1 <= c }` via sorting.
pub fn project_l1_ball(v: &[f64], c: f64) -> Vec<f64> {
    assert!(c > 0.0, "l1 ball radius must be positive");
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= c {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - c) / (j as f64 + 1.0);
        if m - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|&x| {
            let a = x.abs() - theta;
            if a > 0.0 {
                x.signum() * a
            } else {
                0.0
            }
        })
        .collect()
}

/// Approximate minimizer of `1/2 ||y - b||^2 + lambda ||D_{tf,k} b||_1`
/// for trend filtering of order k >= 1, by ADMM on the split
/// `alpha = D_{tf,k-1} b`: the b-update is a banded ridge solve and the
/// alpha-update is a fused-lasso prox. Deterministic cold start at
/// `alpha = 0`, dual `= 0`.
pub fn tf_admm_prox(y: &[f64], k: usize, lambda: f64, settings: &SolverSettings) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "tf_admm_prox needs order k >= 1; use fused_lasso_prox for k = 0".into(),
        ));
    }
    let n = y.len();
    if n < k + 2 {
        return Err(Error::InvalidArgument(format!(
            "trend filtering of order {k} needs length >= {}, got {n}",
            k + 2
        )));
    }
    if lambda == 0.0 {
        return Ok(y.to_vec());
    }
    let rho = settings.rho;
    let split = trend_filter_op(n, k - 1)?;
    let m = split.n_rows();
    let chol = ridge_gram_cholesky(&split, rho)?;

    let mut alpha = vec![0.0; m];
    let mut dual = vec![0.0; m];
    let mut beta = vec![0.0; n];
    let tol = settings.tol;
    let mut primal_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;

    for _ in 0..settings.max_iter {
        // b-update: (I + rho D^T D) b = y + rho D^T (alpha - dual)
        let mut rhs: Vec<f64> = alpha.iter().zip(&dual).map(|(a, u)| a - u).collect();
        rhs = split.apply_transpose(&rhs)?;
        for (r, &yi) in rhs.iter_mut().zip(y) {
            *r = yi + rho * *r;
        }
        beta = chol.solve(&rhs);

        let db = split.apply(&beta)?;
        let mut target: Vec<f64> = db.iter().zip(&dual).map(|(d, u)| d + u).collect();
        let alpha_new = fused_lasso_prox(&target, lambda / rho);

        // dual residual rho * D^T (alpha_new - alpha)
        for (t, (an, ao)) in target.iter_mut().zip(alpha_new.iter().zip(&alpha)) {
            *t = an - ao;
        }
        let dual_vec = split.apply_transpose(&target)?;
        dual_res = rho * norm2(&dual_vec);

        alpha = alpha_new;
        let mut r = db.clone();
        axpy(&mut r, -1.0, &alpha);
        primal_res = norm2(&r);
        for (u, ri) in dual.iter_mut().zip(&r) {
            *u += ri;
        }

        let eps_pri = (m as f64).sqrt() * tol + tol * norm2(&db).max(norm2(&alpha));
        let scaled_dual: Vec<f64> = dual.iter().map(|u| rho * u).collect();
        let eps_dual = (n as f64).sqrt() * tol + tol * norm2(&split.apply_transpose(&scaled_dual)?);
        if primal_res <= eps_pri && dual_res <= eps_dual {
            return Ok(beta);
        }
    }
    Err(Error::NonConvergence(format!(
        "tf_admm_prox: {} iterations, primal residual {primal_res:.3e}, dual residual {dual_res:.3e}",
        settings.max_iter
    )))
}
