//! Single-vector solvers: the generalized-lasso dual path with the
//! boundary-solution update for the constrained formulation, proximal
//! solvers for the penalized formulation, and the projection-based ADMM
//! kept for comparison runs.

mod dual_path;
mod prox;
mod zhu;

pub use dual_path::{dual_path, DualPath, PathSegment};
pub use prox::{fused_lasso_prox, project_l1_ball, soft_threshold, tf_admm_prox};
pub use zhu::zhu_admm_update;

use crate::error::{Error, Result};
use crate::penalty::{DifferenceOp, OpKind};
use crate::vecmath::{norm2, normalized};

/// Iterative-solver settings shared by the ADMM routines.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// ADMM penalty parameter.
    pub rho: f64,
    /// Residual tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Scalar E with E*I >= D^T D; computed as ||D||_1 * ||D||_inf when unset.
    pub e_bound: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            tol: 1e-6,
            max_iter: 5000,
            e_bound: None,
        }
    }
}

/// `argmin_b 1/2 ||y - b||^2 + lambda ||D b||_1`, dispatching on the operator
/// family: identity -> soft threshold, first difference -> fused-lasso DP,
/// trend filter -> ADMM, forest graph -> dual-path prox.
pub fn genlasso_prox(
    y: &[f64],
    op: &DifferenceOp,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    if y.len() != op.n_cols() {
        return Err(Error::DimensionMismatch(format!(
            "genlasso_prox: y has length {}, operator expects {}",
            y.len(),
            op.n_cols()
        )));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("genlasso_prox: lambda must be >= 0".into()));
    }
    if lambda == 0.0 {
        return Ok(y.to_vec());
    }
    match op.kind() {
        OpKind::Identity => Ok(soft_threshold(y, lambda)),
        OpKind::FirstDifference => Ok(fused_lasso_prox(y, lambda)),
        OpKind::TrendFilter { order } => tf_admm_prox(y, *order, lambda, settings),
        OpKind::GraphIncidence => {
            let path = dual_path(op, y)?;
            let gamma = path.gamma_at(lambda)?;
            let fit = op.apply_transpose(&gamma)?;
            Ok(y.iter().zip(&fit).map(|(a, b)| a - b).collect())
        }
    }
}

/// Solves the constrained block update
/// `max x^T u  s.t. ||u||_2 <= 1, ||D u||_1 <= c`
/// via the dual path: `u* = (x - D^T gamma_hat(lambda*)) / ||...||_2`
/// with `lambda*` minimizing `||x - D^T gamma_hat(lambda)||_2 + lambda c`.
pub fn constrained_update(x: &[f64], op: &DifferenceOp, c: f64) -> Result<Vec<f64>> {
    if c <= 0.0 {
        return Err(Error::InvalidArgument("constrained_update: c must be positive".into()));
    }
    if norm2(x) == 0.0 {
        return Err(Error::InvalidArgument("constrained_update: x must be nonzero".into()));
    }
    let path = dual_path(op, x)?;
    let lambda_star = path.select_lambda_star(op, x, c)?;
    let gamma = path.gamma_at(lambda_star)?;
    let fit = op.apply_transpose(&gamma)?;
    let resid: Vec<f64> = x.iter().zip(&fit).map(|(a, b)| a - b).collect();
    normalized(&resid).ok_or_else(|| {
        Error::DegenerateTarget(
            "constrained_update: residual at lambda* is zero (x in Range(D^T))".into(),
        )
    })
}

/// Solves the penalized block update
/// `min -x^T u + lambda ||D u||_1  s.t. ||u||_2 <= 1`
/// as the normalized generalized-lasso prox of `x`.
pub fn unconstrained_update(
    x: &[f64],
    op: &DifferenceOp,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    if norm2(x) == 0.0 {
        return Err(Error::InvalidArgument("unconstrained_update: x must be nonzero".into()));
    }
    let prox = genlasso_prox(x, op, lambda, settings)?;
    normalized(&prox).ok_or(Error::OverPenalized {
        what: format!("update with lambda = {lambda}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{first_difference, graph_incidence, identity_op, trend_filter_op};
    use crate::vecmath::{dist2, norm1, norm2};
    use rand::{Rng, SeedableRng};

    #[test]
    fn prox_dispatch_identity_and_zero_lambda() {
        let settings = SolverSettings::default();
        let y = [2.0, -1.0, 0.2];
        let op = identity_op(3).unwrap();
        let got = genlasso_prox(&y, &op, 0.7, &settings).unwrap();
        assert_eq!(got, soft_threshold(&y, 0.7));
        for op in [
            identity_op(3).unwrap(),
            first_difference(3).unwrap(),
            trend_filter_op(3, 1).unwrap(),
        ] {
            assert_eq!(genlasso_prox(&y, &op, 0.0, &settings).unwrap(), y.to_vec());
        }
    }

    #[test]
    fn chain_graph_prox_equals_fused_prox() {
        let settings = SolverSettings::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(2..=12);
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lambda = rng.gen_range(0.01..1.5);
            let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
            let graph = graph_incidence(n, &edges).unwrap();
            let got = genlasso_prox(&y, &graph, lambda, &settings).unwrap();
            let want = fused_lasso_prox(&y, lambda);
            assert!(dist2(&got, &want) < 1e-8, "dist {}", dist2(&got, &want));
        }
    }

    #[test]
    fn primal_dual_identity_all_kinds() {
        // prox(y, lambda) == y - D^T gamma_hat(lambda) along the path
        let settings = SolverSettings {
            tol: 1e-10,
            max_iter: 100_000,
            ..SolverSettings::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let ops = vec![
            identity_op(6).unwrap(),
            first_difference(8).unwrap(),
            trend_filter_op(8, 1).unwrap(),
        ];
        for op in &ops {
            for _ in 0..10 {
                let y: Vec<f64> = (0..op.n_cols()).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let path = dual_path(op, &y).unwrap();
                let lam_top = path.kinks().last().copied().unwrap_or(1.0);
                for _ in 0..4 {
                    let lambda = rng.gen_range(0.0..lam_top * 1.2 + 0.1);
                    let prox = genlasso_prox(&y, op, lambda, &settings).unwrap();
                    let gamma = path.gamma_at(lambda).unwrap();
                    let fit = op.apply_transpose(&gamma).unwrap();
                    let alt: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
                    assert!(
                        dist2(&prox, &alt) < 1e-6,
                        "kind {:?} lambda {lambda}: dist {}",
                        op.kind(),
                        dist2(&prox, &alt)
                    );
                }
            }
        }
    }

    #[test]
    fn prox_penalty_monotone_in_lambda() {
        let settings = SolverSettings::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        for op in [
            identity_op(8).unwrap(),
            first_difference(8).unwrap(),
            trend_filter_op(8, 1).unwrap(),
        ] {
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut prev = f64::INFINITY;
            for i in 0..12 {
                let lambda = 0.05 * (i as f64);
                let p = genlasso_prox(&y, &op, lambda, &settings).unwrap();
                let pen = op.penalty_value(&p).unwrap();
                assert!(pen <= prev + 1e-7, "penalty not monotone at lambda {lambda}");
                prev = pen;
            }
        }
    }

    #[test]
    fn constrained_update_orthogonal_target() {
        let op = first_difference(3).unwrap();
        let x = [1.0, 1.0, 1.0];
        for c in [0.1, 1.0, 10.0] {
            let u = constrained_update(&x, &op, c).unwrap();
            let want = 1.0 / 3.0_f64.sqrt();
            for v in &u {
                assert!((v - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constrained_update_inactive_l1_is_projection() {
        let op = identity_op(2).unwrap();
        let u = constrained_update(&[3.0, 4.0], &op, 1.5).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-9 && (u[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn constrained_update_feasibility_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let ops = vec![
            identity_op(6).unwrap(),
            first_difference(6).unwrap(),
            trend_filter_op(6, 1).unwrap(),
        ];
        for op in &ops {
            for _ in 0..50 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let c = rng.gen_range(0.05..3.0);
                match constrained_update(&x, op, c) {
                    Ok(u) => {
                        assert!((norm2(&u) - 1.0).abs() < 1e-10);
                        let pen = op.penalty_value(&u).unwrap();
                        assert!(pen <= c + 1e-6, "penalty {pen} > c {c}");
                    }
                    Err(Error::DegenerateTarget(_)) => {}
                    Err(e) => panic!("unexpected error {e}"),
                }
            }
        }
    }

    #[test]
    fn unconstrained_update_examples() {
        let settings = SolverSettings::default();
        let op = identity_op(2).unwrap();
        // lambda = 0 -> x / ||x||
        let u = unconstrained_update(&[3.0, 4.0], &op, 0.0, &settings).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-12);
        // soft threshold [2,-1] at 1 -> [1,0] -> normalized [1,0]
        let u2 = unconstrained_update(&[2.0, -1.0], &op, 1.0, &settings).unwrap();
        assert!((u2[0] - 1.0).abs() < 1e-12 && u2[1].abs() < 1e-12);
        // over-penalized
        assert!(matches!(
            unconstrained_update(&[0.5, -0.2], &op, 10.0, &settings),
            Err(Error::OverPenalized { .. })
        ));
    }

    #[test]
    fn unconstrained_update_agrees_with_dual_path() {
        let settings = SolverSettings::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let op = first_difference(7).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lambda = 0.3;
            let got = unconstrained_update(&x, &op, lambda, &settings).unwrap();
            let path = dual_path(&op, &x).unwrap();
            let gamma = path.gamma_at(lambda).unwrap();
            let fit = op.apply_transpose(&gamma).unwrap();
            let resid: Vec<f64> = x.iter().zip(&fit).map(|(a, b)| a - b).collect();
            let want = crate::vecmath::normalized(&resid).unwrap();
            assert!(dist2(&got, &want) < 1e-6);
        }
    }

    #[test]
    fn constrained_update_degenerate_errors() {
        let op = identity_op(2).unwrap();
        assert!(constrained_update(&[0.0, 0.0], &op, 1.0).is_err());
        assert!(constrained_update(&[1.0, 1.0], &op, 0.0).is_err());
    }

    #[test]
    fn l1_norm_of_constrained_solution_tracks_radius() {
        // with identity D and small c the solution's L1 norm should sit at c
        let op = identity_op(3).unwrap();
        let x = [3.0, 2.0, 0.5];
        let c = 1.2;
        let u = constrained_update(&x, &op, c).unwrap();
        assert!((norm1(&u) - c).abs() < 1e-6, "l1 {}", norm1(&u));
    }
}
