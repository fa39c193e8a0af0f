//! Cross-validation for the penalty weights: entry-holdout CV over whole
//! decomposition fits, and the adaptive per-update scheme that tunes a
//! single generalized-lasso regression by coordinate splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decompose::{derive_seed, Mode, ParafacModel, PenaltyConfig};
use crate::error::{Error, Result};
use crate::genlasso::{genlasso_prox, SolverSettings};
use crate::penalty::{first_difference, identity_op, trend_filter_op, DifferenceOp, OpKind};
use crate::tensor::Tensor3;

/// One CV cell: configuration x replicate.
#[derive(Debug, Clone)]
pub struct CvScore {
    pub config_id: usize,
    pub rep: usize,
    /// Mean squared prediction error on the held-out entries; infinite when
    /// the fit failed (for example over-penalization).
    pub mse: f64,
}

/// Full CV outcome: per-cell scores, per-config means and the winner.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_index: usize,
    pub scores: Vec<CvScore>,
    pub mean_mse: Vec<f64>,
}

/// Decomposition hook used by [`cv_entry_holdout`]: fits the masked training
/// tensor under one penalty configuration with the given seed.
pub type CvFit<'a> = dyn Fn(&Tensor3, &PenaltyConfig, u64) -> Result<ParafacModel> + Sync + 'a;

const HOLDOUT_RETRIES: usize = 20;

/// Entry-holdout cross-validation: per replicate, a random fraction of the
/// observed entries is hidden, each grid configuration is fit on the rest,
/// and the configuration with the smallest mean held-out MSE wins. Ties are
/// broken by the smallest total penalty weight, then by grid order.
/// Replicate/configuration cells are independent; `jobs > 1` evaluates them
/// in parallel with identical results.
pub fn cv_entry_holdout(
    y: &Tensor3,
    grid: &[PenaltyConfig],
    holdout_frac: f64,
    reps: usize,
    seed: u64,
    jobs: usize,
    fit: &CvFit<'_>,
) -> Result<CvOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("cv_entry_holdout: empty grid".into()));
    }
    if !(0.0..1.0).contains(&holdout_frac) || holdout_frac == 0.0 {
        return Err(Error::InvalidArgument(
            "cv_entry_holdout: holdout_frac must be in (0, 1)".into(),
        ));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("cv_entry_holdout: reps must be >= 1".into()));
    }

    let mut splits = Vec::with_capacity(reps);
    for rep in 0..reps {
        let holdout = sample_holdout(y, holdout_frac, derive_seed(seed, &[0xC0DE, rep as u64]))?;
        splits.push(split_tensor(y, &holdout)?);
    }
    let cells: Vec<(usize, usize)> = (0..reps)
        .flat_map(|rep| (0..grid.len()).map(move |c| (rep, c)))
        .collect();
    let eval = |&(rep, config_id): &(usize, usize)| -> CvScore {
        let (train, heldout_idx) = &splits[rep];
        let fit_seed = derive_seed(seed, &[0xF17, rep as u64, config_id as u64]);
        let mse = match fit(train, &grid[config_id], fit_seed) {
            Ok(model) => holdout_mse(y, &model, heldout_idx),
            Err(_) => f64::INFINITY,
        };
        CvScore { config_id, rep, mse }
    };
    let scores: Vec<CvScore> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(eval).collect()
        })
    } else {
        cells.iter().map(eval).collect()
    };

    let mut mean_mse = vec![0.0; grid.len()];
    for s in &scores {
        mean_mse[s.config_id] += s.mse / reps as f64;
    }
    let mut best = 0usize;
    for i in 1..grid.len() {
        let better = mean_mse[i] < mean_mse[best]
            || (mean_mse[i] == mean_mse[best]
                && grid[i].total_value() < grid[best].total_value());
        if better {
            best = i;
        }
    }
    Ok(CvOutcome {
        best_index: best,
        scores,
        mean_mse,
    })
}

/// Chooses the held-out flat indices among observed entries, resampling when
/// the holdout empties a fiber that had observations.
fn sample_holdout(y: &Tensor3, frac: f64, seed: u64) -> Result<Vec<usize>> {
    let observed: Vec<usize> = match y.mask() {
        Some(m) => m
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect(),
        None => (0..y.values().len()).collect(),
    };
    let n_obs = observed.len();
    let n_hold = ((n_obs as f64 * frac).round() as usize).clamp(1, n_obs.saturating_sub(1));
    if n_hold == 0 || n_hold >= n_obs {
        return Err(Error::InvalidArgument(
            "cv_entry_holdout: not enough observed entries to hold any out".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..HOLDOUT_RETRIES {
        let mut pool = observed.clone();
        pool.shuffle(&mut rng);
        let holdout: Vec<usize> = pool[..n_hold].to_vec();
        if !holdout_empties_fiber(y, &holdout) {
            return Ok(holdout);
        }
    }
    Err(Error::InvalidArgument(format!(
        "cv_entry_holdout: every resample within {HOLDOUT_RETRIES} tries left a fully-missing fiber; lower holdout_frac"
    )))
}

/// True if removing `holdout` leaves some previously-observed fiber (in any
/// of the three modes) with no observed entries.
fn holdout_empties_fiber(y: &Tensor3, holdout: &[usize]) -> bool {
    let (l_dim, t_dim, s_dim) = y.dims();
    let held: std::collections::HashSet<usize> = holdout.iter().copied().collect();
    // counts per fiber: mode-1 fibers indexed by (t,s), mode-2 by (l,s), mode-3 by (l,t)
    let mut had = [vec![false; t_dim * s_dim], vec![false; l_dim * s_dim], vec![false; l_dim * t_dim]];
    let mut has = [vec![false; t_dim * s_dim], vec![false; l_dim * s_dim], vec![false; l_dim * t_dim]];
    for s in 0..s_dim {
        for t in 0..t_dim {
            for l in 0..l_dim {
                let flat = l + l_dim * (t + t_dim * s);
                if !y.is_observed(l, t, s) {
                    continue;
                }
                let fibers = [t + t_dim * s, l + l_dim * s, l + l_dim * t];
                let kept = !held.contains(&flat);
                for (axis, &f) in fibers.iter().enumerate() {
                    had[axis][f] = true;
                    if kept {
                        has[axis][f] = true;
                    }
                }
            }
        }
    }
    for axis in 0..3 {
        for (had_f, has_f) in had[axis].iter().zip(&has[axis]) {
            if *had_f && !*has_f {
                return true;
            }
        }
    }
    false
}

fn split_tensor(y: &Tensor3, holdout: &[usize]) -> Result<(Tensor3, Vec<usize>)> {
    let n = y.values().len();
    let mut mask: Vec<bool> = match y.mask() {
        Some(m) => m.to_vec(),
        None => vec![true; n],
    };
    for &i in holdout {
        mask[i] = false;
    }
    let train = Tensor3::with_mask(y.dims(), y.values().to_vec(), mask)?;
    Ok((train, holdout.to_vec()))
}

fn holdout_mse(y: &Tensor3, model: &ParafacModel, heldout: &[usize]) -> f64 {
    let (l_dim, t_dim, _) = y.dims();
    let mut sum = 0.0;
    for &flat in heldout {
        let l = flat % l_dim;
        let t = (flat / l_dim) % t_dim;
        let s = flat / (l_dim * t_dim);
        let mut pred = 0.0;
        for term in model.terms() {
            pred += term.d * term.u[l] * term.v[t] * term.w[s];
        }
        let diff = y.values()[flat] - pred;
        sum += diff * diff;
    }
    sum / heldout.len() as f64
}

/// Adaptive per-update tuning: randomly splits the coordinates of the
/// target vector, solves the penalized regression on the training
/// coordinates (compressed onto their own grid), predicts the test
/// coordinates by linear interpolation against coordinate index (constant
/// extrapolation past the ends), and returns the grid weight with the
/// smallest test MSE.
pub fn cv_adaptive(
    x_target: &[f64],
    op: &DifferenceOp,
    lambda_grid: &[f64],
    split_frac: f64,
    seed: u64,
    settings: &SolverSettings,
) -> Result<f64> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("cv_adaptive: empty lambda grid".into()));
    }
    if lambda_grid.len() == 1 {
        return Ok(lambda_grid[0]);
    }
    if !(0.0..1.0).contains(&split_frac) || split_frac == 0.0 {
        return Err(Error::InvalidArgument("cv_adaptive: split_frac must be in (0, 1)".into()));
    }
    let n = x_target.len();
    if n != op.n_cols() {
        return Err(Error::DimensionMismatch(
            "cv_adaptive: target length does not match operator".into(),
        ));
    }
    let min_train = match op.kind() {
        OpKind::Identity => 1,
        OpKind::FirstDifference => 2,
        OpKind::TrendFilter { order } => order + 2,
        OpKind::GraphIncidence => {
            return Err(Error::Unsupported(
                "cv_adaptive interpolates on an ordered grid; graph penalties are not supported".into(),
            ))
        }
    };
    let n_test = ((n as f64 * split_frac).round() as usize).clamp(1, n.saturating_sub(min_train));
    if n - n_test < min_train {
        return Err(Error::InvalidArgument(format!(
            "cv_adaptive: training split too small for this penalty (needs {min_train} coordinates)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    let x_train: Vec<f64> = train.iter().map(|&i| x_target[i]).collect();
    let m = train.len();
    let sub_op = match op.kind() {
        OpKind::Identity => identity_op(m)?,
        OpKind::FirstDifference => first_difference(m)?,
        OpKind::TrendFilter { order } => trend_filter_op(m, *order)?,
        OpKind::GraphIncidence => unreachable!(),
    };

    let mut best = (lambda_grid[0], f64::INFINITY);
    for &lambda in lambda_grid {
        let beta = match genlasso_prox(&x_train, &sub_op, lambda, settings) {
            Ok(b) => b,
            Err(_) => continue,
        };
        let mut sse = 0.0;
        for &t_idx in &test {
            let pred = interpolate(&train, &beta, t_idx);
            let diff = x_target[t_idx] - pred;
            sse += diff * diff;
        }
        let mse = sse / test.len() as f64;
        if mse < best.1 {
            best = (lambda, mse);
        }
    }
    if best.1.is_infinite() {
        return Err(Error::OverPenalized {
            what: "cv_adaptive: every grid weight failed to fit".into(),
        });
    }
    Ok(best.0)
}

/// Linear interpolation of `(positions, values)` at `at`, constant beyond
/// the first/last position.
fn interpolate(positions: &[usize], values: &[f64], at: usize) -> f64 {
    debug_assert!(!positions.is_empty());
    let p = positions.partition_point(|&i| i < at);
    if p == 0 {
        return values[0];
    }
    if p == positions.len() {
        return values[positions.len() - 1];
    }
    let (x0, x1) = (positions[p - 1] as f64, positions[p] as f64);
    let t = (at as f64 - x0) / (x1 - x0);
    values[p - 1] * (1.0 - t) + values[p] * t
}

/// Builds a [`crate::decompose::LambdaChooser`]-compatible closure running
/// [`cv_adaptive`] with seeds derived from the call's mode and target, so a
/// given update always draws the same split.
pub fn adaptive_chooser(
    lambda_grid: Vec<f64>,
    split_frac: f64,
    seed: u64,
    settings: SolverSettings,
) -> impl Fn(Mode, &[f64], &DifferenceOp) -> Result<f64> + Sync {
    move |mode, target, op| {
        let mode_tag = match mode {
            Mode::U => 1u64,
            Mode::V => 2,
            Mode::W => 3,
        };
        let call_seed = derive_seed(seed, &[0xADA0, mode_tag, hash_bits(target)]);
        cv_adaptive(target, op, &lambda_grid, split_frac, call_seed, &settings)
    }
}

fn hash_bits(x: &[f64]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for v in x {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::{rank1_unconstrained, FitOptions, ModePenalty};
    use crate::tensor::outer3;
    use crate::vecmath::normalized;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fit_hook(
        settings: SolverSettings,
    ) -> impl Fn(&Tensor3, &PenaltyConfig, u64) -> Result<ParafacModel> + Sync {
        move |train, config, seed| {
            let opts = FitOptions {
                seed,
                ..FitOptions::default()
            };
            let fit = rank1_unconstrained(train, config, &opts, &settings, None)?;
            Ok(ParafacModel::new(vec![fit.term()]))
        }
    }

    #[test]
    fn single_config_grid_returns_it() {
        let u = normalized(&[1.0, 2.0, 0.5]).unwrap();
        let v = normalized(&[1.0, -1.0, 0.0, 2.0]).unwrap();
        let w = normalized(&[0.3, 1.0, 1.0]).unwrap();
        let y = outer3(&u, &v, &w, 4.0).unwrap();
        let grid = vec![PenaltyConfig::none()];
        let out = cv_entry_holdout(&y, &grid, 0.2, 2, 7, 1, &fit_hook(SolverSettings::default())).unwrap();
        assert_eq!(out.best_index, 0);
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.mean_mse.len(), 1);
    }

    #[test]
    fn zero_beats_huge_penalty_on_noiseless_rank_one() {
        let u = normalized(&[1.0, 1.0, -1.0, 0.2]).unwrap();
        let v = normalized(&(0..8).map(|i| (i as f64 * 0.7).sin()).collect::<Vec<_>>()).unwrap();
        let w = normalized(&[1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let y = outer3(&u, &v, &w, 6.0).unwrap();
        let mk = |weight: f64| PenaltyConfig {
            u: ModePenalty::Weighted {
                op: identity_op(4).unwrap(),
                weight,
            },
            v: ModePenalty::Weighted {
                op: identity_op(8).unwrap(),
                weight,
            },
            w: ModePenalty::Weighted {
                op: identity_op(5).unwrap(),
                weight,
            },
        };
        let grid = vec![mk(0.0), mk(1e6)];
        let out = cv_entry_holdout(&y, &grid, 0.1, 3, 11, 1, &fit_hook(SolverSettings::default())).unwrap();
        assert_eq!(out.best_index, 0);
        assert!(out.mean_mse[1].is_infinite(), "huge weight should over-penalize");
        // winner's mean MSE is the grid minimum by construction
        let min = out.mean_mse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(out.mean_mse[out.best_index], min);
    }

    #[test]
    fn holdout_cv_is_deterministic() {
        let u = normalized(&[1.0, 2.0, 0.5]).unwrap();
        let v = normalized(&[1.0, -1.0, 0.4, 2.0]).unwrap();
        let w = normalized(&[0.3, 1.0, 1.0]).unwrap();
        let y = outer3(&u, &v, &w, 4.0).unwrap();
        let grid = vec![PenaltyConfig::none()];
        let run = || {
            cv_entry_holdout(&y, &grid, 0.25, 3, 42, 1, &fit_hook(SolverSettings::default())).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.best_index, b.best_index);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x.mse.to_bits(), y.mse.to_bits());
        }
    }

    #[test]
    fn adaptive_single_lambda_short_circuits() {
        let op = first_difference(10).unwrap();
        let x = vec![1.0; 10];
        let got = cv_adaptive(&x, &op, &[0.37], 0.2, 5, &SolverSettings::default()).unwrap();
        assert_eq!(got, 0.37);
    }

    #[test]
    fn adaptive_prefers_moderate_lambda_on_piecewise_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200;
        let mut wins = 0;
        for trial in 0..5 {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let level = if i < n / 3 {
                        0.0
                    } else if i < 2 * n / 3 {
                        1.5
                    } else {
                        -1.0
                    };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    level + 0.35 * noise
                })
                .collect();
            let op = first_difference(n).unwrap();
            let got = cv_adaptive(
                &x,
                &op,
                &[0.0, 0.7, 1e4],
                0.3,
                1000 + trial,
                &SolverSettings::default(),
            )
            .unwrap();
            if got == 0.7 {
                wins += 1;
            }
        }
        assert!(wins >= 4, "moderate lambda won only {wins}/5 splits");
    }

    #[test]
    fn adaptive_prefers_tf_smoothing_on_sinusoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let n = 80;
        let mut wins = 0;
        for trial in 0..5 {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let t = i as f64 / (n - 1) as f64;
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (2.0 * std::f64::consts::PI * t).sin() + 0.3 * noise
                })
                .collect();
            let op = trend_filter_op(n, 2).unwrap();
            let got = cv_adaptive(
                &x,
                &op,
                &[0.0, 5.0],
                0.2,
                2000 + trial,
                &SolverSettings::default(),
            )
            .unwrap();
            if got == 5.0 {
                wins += 1;
            }
        }
        assert!(wins >= 4, "smoothing weight won only {wins}/5 splits");
    }

    #[test]
    fn adaptive_rejects_graphs_and_bad_splits() {
        let op = crate::penalty::graph_incidence(4, &[(0, 1), (1, 2)]).unwrap();
        assert!(cv_adaptive(&[1.0; 4], &op, &[0.1, 0.2], 0.2, 3, &SolverSettings::default()).is_err());
        let fd = first_difference(4).unwrap();
        assert!(cv_adaptive(&[1.0; 4], &fd, &[0.1, 0.2], 0.0, 3, &SolverSettings::default()).is_err());
        assert!(cv_adaptive(&[1.0; 4], &fd, &[], 0.2, 3, &SolverSettings::default()).is_err());
    }

    #[test]
    fn interpolation_handles_edges() {
        let pos = vec![2usize, 5, 9];
        let vals = vec![1.0, 4.0, 0.0];
        assert_eq!(interpolate(&pos, &vals, 0), 1.0); // constant extrapolation left
        assert_eq!(interpolate(&pos, &vals, 11), 0.0); // right
        assert!((interpolate(&pos, &vals, 3) - 2.0).abs() < 1e-12);
        assert_eq!(interpolate(&pos, &vals, 5), 4.0);
    }

    #[test]
    fn holdout_respects_existing_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = (3, 4, 3);
        let n = 36;
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|i| i % 5 != 0).collect();
        let y = Tensor3::with_mask(dims, values, mask.clone()).unwrap();
        let holdout = sample_holdout(&y, 0.2, 4).unwrap();
        for &i in &holdout {
            assert!(mask[i], "held out an already-missing entry");
        }
    }
}
