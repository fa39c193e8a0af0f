//! Projection-based ADMM for the constrained block update, kept only as a
//! comparison method. The iteration normalizes a linear term for u, projects
//! the slack onto the L1 ball and takes a dual ascent step; the returned u
//! is unit norm by construction but is not guaranteed to satisfy
//! `||D u||_1 <= c`, which is exactly the deficiency the comparison runs
//! measure.

use crate::error::{Error, Result};
use crate::penalty::DifferenceOp;
use crate::vecmath::{dist2, norm2};

use super::SolverSettings;

pub fn zhu_admm_update(
    x: &[f64],
    op: &DifferenceOp,
    c: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    if c <= 0.0 {
        return Err(Error::InvalidArgument("zhu_admm_update: c must be positive".into()));
    }
    if x.len() != op.n_cols() {
        return Err(Error::DimensionMismatch(
            "zhu_admm_update: x length does not match operator".into(),
        ));
    }
    let xn = norm2(x);
    if xn == 0.0 {
        return Err(Error::InvalidArgument("zhu_admm_update: x must be nonzero".into()));
    }
    let e = settings.e_bound.unwrap_or_else(|| op.spectral_upper_bound());
    let rho = settings.rho;
    let m = op.n_rows();

    let mut u: Vec<f64> = x.iter().map(|v| v / xn).collect();
    let mut alpha = vec![0.0; m];
    let mut alpha_prev = vec![0.0; m];

    for _ in 0..settings.max_iter {
        // u-update: normalized linear term
        let delta: Vec<f64> = alpha.iter().zip(&alpha_prev).map(|(a, p)| a - p).collect();
        let dt = op.apply_transpose(&delta)?;
        let lin: Vec<f64> = x
            .iter()
            .zip(&dt)
            .zip(&u)
            .map(|((xi, di), ui)| 0.5 * xi - di + 0.5 * rho * e * ui)
            .collect();
        let lin_norm = norm2(&lin);
        if lin_norm == 0.0 {
            break;
        }
        let u_next: Vec<f64> = lin.iter().map(|v| v / lin_norm).collect();

        // z-update: L1-ball projection of D u + alpha / rho
        let du = op.apply(&u_next)?;
        let target: Vec<f64> = du.iter().zip(&alpha).map(|(d, a)| d + a / rho).collect();
        let z = super::project_l1_ball(&target, c);

        // dual ascent
        alpha_prev = alpha.clone();
        for ((a, d), zi) in alpha.iter_mut().zip(&du).zip(&z) {
            *a += rho * (d - zi);
        }

        let change = dist2(&u_next, &u);
        u = u_next;
        if change < settings.tol {
            break;
        }
    }
    Ok(u)
}
