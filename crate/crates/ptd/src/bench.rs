//! Synthetic-structure generators, the seeded simulator and the comparison
//! harness that produces the benchmark tables, plus the solver timing toy.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decompose::{
    derive_seed, fit_scale, multifactor, pmd_stack_model, power_method_init, rank1_constrained,
    rank1_unconstrained, robust_power_baseline, FitOptions, InitStrategy, ModePenalty, ParafacModel,
    PenaltyConfig, RankOneTerm,
};
use crate::error::{Error, Result};
use crate::genlasso::{zhu_admm_update, SolverSettings};
use crate::model_select::{adaptive_chooser, cv_entry_holdout};
use crate::penalty::{first_difference, identity_op, trend_filter_op, DifferenceOp};
use crate::tensor::{frobenius_error, outer3, Tensor3};
use crate::vecmath::normalized;

/// Native dimensions of the synthetic structures.
pub const NATIVE_DIMS: (usize, usize, usize) = (10, 1000, 400);

/// Dimensions after applying a scale factor: v and w lengths scale, u stays
/// at its native length of 10.
pub fn scaled_dims(scale: f64) -> (usize, usize, usize) {
    (
        NATIVE_DIMS.0,
        ((NATIVE_DIMS.1 as f64) * scale).round().max(2.0) as usize,
        ((NATIVE_DIMS.2 as f64) * scale).round().max(2.0) as usize,
    )
}

/// One rank-one term of a simulation: structure id 1..=5 and its weight.
#[derive(Debug, Clone, Copy)]
pub struct StructureTerm {
    pub id: usize,
    pub weight: f64,
}

/// Synthetic-data specification.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub structures: Vec<StructureTerm>,
    pub dims: (usize, usize, usize),
    pub sigma: f64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn single(id: usize, dims: (usize, usize, usize), sigma: f64, seed: u64) -> Self {
        Self {
            structures: vec![StructureTerm { id, weight: 1.0 }],
            dims,
            sigma,
            seed,
        }
    }
}

/// Simulated tensor together with its noiseless mean.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub observed: Tensor3,
    pub truth: Tensor3,
}

fn piecewise(n: usize, segments: &[(f64, f64)]) -> Result<Vec<f64>> {
    debug_assert!((segments.last().unwrap().0 - 1.0).abs() < 1e-12);
    let mut counts = vec![0usize; segments.len()];
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let frac = i as f64 / n as f64;
            let seg = segments
                .iter()
                .position(|&(end, _)| frac < end)
                .unwrap_or(segments.len() - 1);
            counts[seg] += 1;
            segments[seg].1
        })
        .collect();
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!(
            "dimension {n} is too small to represent all {} piecewise segments",
            segments.len()
        )));
    }
    Ok(values)
}

fn grid01(n: usize) -> impl Iterator<Item = f64> {
    let denom = (n - 1).max(1) as f64;
    (0..n).map(move |i| i as f64 / denom)
}

fn sparse_random(n: usize, nonzero_frac: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = ((n as f64) * nonzero_frac).round().max(1.0) as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut v = vec![0.0; n];
    for &i in idx.iter().take(k) {
        v[i] = StandardNormal.sample(rng);
    }
    v
}

/// Builds structure `id` (1..=5) at the given dims. Piecewise structures
/// keep their fractional segment boundaries; functional structures
/// re-evaluate their formulas on the new grid; structure 5 draws its random
/// supports from the seed.
pub fn make_structure(
    id: usize,
    dims: (usize, usize, usize),
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (l, t, s) = dims;
    if l < 2 || t < 2 || s < 2 {
        return Err(Error::InvalidArgument("structure dims must all be >= 2".into()));
    }
    match id {
        1 => Ok((
            piecewise(l, &[(0.3, 1.0), (0.6, -1.0), (1.0, 0.0)])?,
            piecewise(t, &[(0.1, 0.0), (0.5, 1.0), (1.0, 0.0)])?,
            piecewise(s, &[(0.25, -1.0), (0.5, 0.0), (1.0, 1.0)])?,
        )),
        2 => Ok((
            piecewise(l, &[(0.3, 0.0), (0.6, -1.0), (1.0, 0.0)])?,
            grid01(t).map(|x| (12.0 * std::f64::consts::PI * x).cos()).collect(),
            grid01(s).map(|x| (9.0 * std::f64::consts::PI * x).cos()).collect(),
        )),
        3 => Ok((
            piecewise(l, &[(0.4, 0.0), (0.6, -1.0), (1.0, 1.0)])?,
            grid01(t).map(|x| (x - 0.7) * (x - 0.7) + x * x).collect(),
            grid01(s)
                .enumerate()
                .map(|(i, x)| {
                    if (i as f64) / (s as f64) < 0.5 {
                        x * (0.05 - x)
                    } else {
                        x * x
                    }
                })
                .collect(),
        )),
        4 => Ok((
            piecewise(l, &[(0.5, 0.0), (1.0, 1.0)])?,
            grid01(t).map(|x| (std::f64::consts::PI * x).cos() + 0.65).collect(),
            piecewise(
                s,
                &[(0.25, 0.0), (0.375, 1.0), (0.75, 0.0), (0.875, 1.0), (1.0, 0.0)],
            )?,
        )),
        5 => {
            let mut rng_v = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5005, 2]));
            let mut rng_w = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5005, 3]));
            Ok((
                piecewise(l, &[(0.2, -1.0), (0.4, 0.0), (0.7, 1.0), (1.0, -1.0)])?,
                sparse_random(t, 0.2, &mut rng_v),
                sparse_random(s, 0.075, &mut rng_w),
            ))
        }
        other => Err(Error::InvalidArgument(format!(
            "structure id must be 1..=5, got {other}"
        ))),
    }
}

/// Sum of the specified structure outer products plus seeded Gaussian noise.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulated> {
    if spec.sigma < 0.0 {
        return Err(Error::InvalidArgument("sigma must be >= 0".into()));
    }
    if spec.structures.is_empty() {
        return Err(Error::InvalidArgument("simulation needs at least one structure".into()));
    }
    let mut truth = Tensor3::zeros(spec.dims)?;
    for (k, term) in spec.structures.iter().enumerate() {
        let (u, v, w) = make_structure(term.id, spec.dims, derive_seed(spec.seed, &[0x57, k as u64]))?;
        let component = outer3(&u, &v, &w, term.weight)?;
        let values: Vec<f64> = truth
            .values()
            .iter()
            .zip(component.values())
            .map(|(a, b)| a + b)
            .collect();
        truth = Tensor3::new(spec.dims, values)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x401]));
    let observed_values: Vec<f64> = truth
        .values()
        .iter()
        .map(|&m| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + spec.sigma * e
        })
        .collect();
    Ok(Simulated {
        observed: Tensor3::new(spec.dims, observed_values)?,
        truth,
    })
}

/// Penalty family for one mode of a benchmark method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchPenalty {
    None,
    L1,
    Fused,
    Tf(usize),
}

impl BenchPenalty {
    fn describe(&self) -> String {
        match self {
            BenchPenalty::None => "none".into(),
            BenchPenalty::L1 => "L1".into(),
            BenchPenalty::Fused => "FL".into(),
            BenchPenalty::Tf(k) => format!("TF{k}"),
        }
    }

    fn build_op(&self, n: usize) -> Result<Option<DifferenceOp>> {
        match self {
            BenchPenalty::None => Ok(None),
            BenchPenalty::L1 => Ok(Some(identity_op(n)?)),
            BenchPenalty::Fused => Ok(Some(first_difference(n)?)),
            BenchPenalty::Tf(k) => Ok(Some(trend_filter_op(n, *k)?)),
        }
    }

    /// Reference weight scale for a length-n mode at noise level sigma; the
    /// cross-validation grid scans multiples of this.
    fn base_weight(&self, n: usize, sigma: f64) -> f64 {
        let nf = n as f64;
        let s = sigma.max(0.05);
        match self {
            BenchPenalty::None => 0.0,
            BenchPenalty::L1 => s * (2.0 * nf.max(2.0).ln()).sqrt(),
            BenchPenalty::Fused => s * nf.sqrt(),
            BenchPenalty::Tf(k) => s * nf.powf(*k as f64 + 0.5),
        }
    }
}

/// Which formulation the tensor methods run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Unconstrained,
    Constrained,
}

/// One column of the comparison tables.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    /// Penalized tensor decomposition; `rank = 0` matches the scenario's
    /// number of structure terms.
    Ptd {
        penalties: [BenchPenalty; 3],
        form: Form,
        rank: usize,
    },
    /// Slice-stacking penalized matrix decomposition baseline.
    PmdStack { penalties: [BenchPenalty; 2] },
    /// Random-restart power method with deflation.
    RobustPower { n_inits: usize, n_iters: usize },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Ptd {
                penalties, form, ..
            } => {
                let tag = if *form == Form::Constrained { "cPTD" } else { "PTD" };
                format!(
                    "{tag}({},{},{})",
                    penalties[0].describe(),
                    penalties[1].describe(),
                    penalties[2].describe()
                )
            }
            MethodSpec::PmdStack { penalties } => format!(
                "PMD({},{})",
                penalties[0].describe(),
                penalties[1].describe()
            ),
            MethodSpec::RobustPower { .. } => "Anandkumar".into(),
        }
    }
}

/// Cross-validation controls for the harness.
#[derive(Debug, Clone)]
pub struct CvSpec {
    /// Multipliers applied to the per-mode base weights; one configuration
    /// per multiplier.
    pub multipliers: Vec<f64>,
    pub holdout_frac: f64,
    pub reps: usize,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            multipliers: vec![0.0, 0.1, 0.3, 1.0],
            holdout_frac: 0.1,
            reps: 1,
        }
    }
}

/// A named simulation scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub spec: SimulationSpec,
}

/// One (method, scenario) cell of a comparison table.
#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub method: String,
    pub scenario: String,
    pub mean_error: f64,
    pub stderr: f64,
    pub reps: usize,
    pub failures: usize,
    pub per_rep: Vec<f64>,
}

fn ptd_grid(
    dims: (usize, usize, usize),
    kinds: &[BenchPenalty; 3],
    form: Form,
    sigma: f64,
    multipliers: &[f64],
) -> Result<Vec<PenaltyConfig>> {
    let lens = [dims.0, dims.1, dims.2];
    let mut grid = Vec::with_capacity(multipliers.len());
    for &mult in multipliers {
        if form == Form::Constrained && mult <= 0.0 {
            // a zero radius is a degenerate constraint, not "no penalty"
            continue;
        }
        let mut modes = Vec::with_capacity(3);
        for (kind, &n) in kinds.iter().zip(&lens) {
            let pen = match kind.build_op(n)? {
                None => ModePenalty::None,
                Some(op) => {
                    let value = mult * kind.base_weight(n, sigma);
                    match form {
                        Form::Unconstrained => ModePenalty::Weighted { op, weight: value },
                        Form::Constrained => ModePenalty::Constrained { op, radius: value },
                    }
                }
            };
            modes.push(pen);
        }
        let w = modes.pop().unwrap();
        let v = modes.pop().unwrap();
        let u = modes.pop().unwrap();
        grid.push(PenaltyConfig { u, v, w });
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument(
            "the multiplier grid left no usable configurations".into(),
        ));
    }
    Ok(grid)
}

/// Fits one method to one simulated replicate (tuning by entry-holdout CV
/// where the method has penalties) and returns the Frobenius error of the
/// reconstruction against the noiseless truth.
fn run_cell_rep(
    method: &MethodSpec,
    sim: &Simulated,
    n_terms: usize,
    sigma: f64,
    cv: &CvSpec,
    seed: u64,
    settings: &SolverSettings,
) -> Result<f64> {
    let dims = sim.observed.dims();
    let estimate: Tensor3 = match method {
        MethodSpec::Ptd {
            penalties,
            form,
            rank,
        } => {
            let j = if *rank == 0 { n_terms } else { *rank };
            let grid = ptd_grid(dims, penalties, *form, sigma, &cv.multipliers)?;
            let settings = settings.clone();
            let form = *form;
            let fit_hook = move |train: &Tensor3,
                                 config: &PenaltyConfig,
                                 fit_seed: u64|
                  -> Result<ParafacModel> {
                let opts = FitOptions {
                    seed: fit_seed,
                    ..FitOptions::default()
                };
                if form == Form::Constrained {
                    if j != 1 {
                        return Err(Error::Unsupported(
                            "constrained multifactor fits are not part of the harness".into(),
                        ));
                    }
                    let fit = rank1_constrained(train, config, &opts)?;
                    Ok(ParafacModel::new(vec![fit.term()]))
                } else {
                    let fit = multifactor(train, j, std::slice::from_ref(config), &opts, &settings, None)?;
                    Ok(fit.model)
                }
            };
            let outcome = cv_entry_holdout(
                &sim.observed,
                &grid,
                cv.holdout_frac,
                cv.reps,
                derive_seed(seed, &[0xCF]),
                1,
                &fit_hook,
            )?;
            let best = &grid[outcome.best_index];
            let model = fit_hook(&sim.observed, best, derive_seed(seed, &[0xF1]))?;
            model.to_tensor(dims)?
        }
        MethodSpec::PmdStack { penalties } => {
            let base_v = penalties[0].base_weight(dims.1, sigma);
            let base_w = penalties[1].base_weight(dims.2, sigma);
            let mut grid = Vec::new();
            for &mult in &cv.multipliers {
                let v = match penalties[0].build_op(dims.1)? {
                    None => ModePenalty::None,
                    Some(op) => ModePenalty::Weighted {
                        op,
                        weight: mult * base_v,
                    },
                };
                let w = match penalties[1].build_op(dims.2)? {
                    None => ModePenalty::None,
                    Some(op) => ModePenalty::Weighted {
                        op,
                        weight: mult * base_w,
                    },
                };
                grid.push(PenaltyConfig {
                    u: ModePenalty::None,
                    v,
                    w,
                });
            }
            let settings = settings.clone();
            let fit_hook = move |train: &Tensor3,
                                 config: &PenaltyConfig,
                                 fit_seed: u64|
                  -> Result<ParafacModel> {
                let opts = FitOptions {
                    seed: fit_seed,
                    ..FitOptions::default()
                };
                pmd_stack_model(train, &config.v, &config.w, &opts, &settings)
            };
            let outcome = cv_entry_holdout(
                &sim.observed,
                &grid,
                cv.holdout_frac,
                cv.reps,
                derive_seed(seed, &[0xCF]),
                1,
                &fit_hook,
            )?;
            let best = &grid[outcome.best_index];
            let model = fit_hook(&sim.observed, best, derive_seed(seed, &[0xF1]))?;
            model.to_tensor(dims)?
        }
        MethodSpec::RobustPower { n_inits, n_iters } => {
            let model = robust_power_baseline(
                &sim.observed,
                n_terms,
                *n_inits,
                *n_iters,
                derive_seed(seed, &[0xF1]),
            )?;
            model.to_tensor(dims)?
        }
    };
    frobenius_error(&estimate, &sim.truth)
}

/// Runs every (scenario, method) cell for `reps` replicates. Replicates are
/// independent and seeded from (seed, scenario, rep) for the data and
/// (seed, scenario, method, rep) for the fits, so parallel execution with
/// `jobs > 1` produces the same table as a sequential run.
pub fn run_comparison(
    scenarios: &[Scenario],
    methods: &[MethodSpec],
    cv: &CvSpec,
    reps: usize,
    seed: u64,
    jobs: usize,
    settings: &SolverSettings,
) -> Result<Vec<ComparisonCell>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("run_comparison: reps must be >= 1".into()));
    }
    let mut tasks = Vec::new();
    for si in 0..scenarios.len() {
        for rep in 0..reps {
            for (mi, _) in methods.iter().enumerate() {
                tasks.push((si, mi, rep));
            }
        }
    }

    let run_task = |&(si, mi, rep): &(usize, usize, usize)| -> Result<f64> {
        let scenario = &scenarios[si];
        let mut spec = scenario.spec.clone();
        spec.seed = derive_seed(seed, &[0x0D, si as u64, rep as u64]);
        let sim = simulate(&spec)?;
        let cell_seed = derive_seed(seed, &[0x0E, si as u64, mi as u64, rep as u64]);
        run_cell_rep(
            &methods[mi],
            &sim,
            spec.structures.len(),
            spec.sigma,
            cv,
            cell_seed,
            settings,
        )
    };

    let results: Vec<Result<f64>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks.par_iter().map(run_task).collect()
        })
    } else {
        tasks.iter().map(run_task).collect()
    };

    let mut cells = Vec::with_capacity(scenarios.len() * methods.len());
    for (si, scenario) in scenarios.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            let mut per_rep = Vec::with_capacity(reps);
            let mut failures = 0usize;
            for (t, res) in tasks.iter().zip(&results) {
                if t.0 == si && t.1 == mi {
                    match res {
                        Ok(err) => per_rep.push(*err),
                        Err(_) => failures += 1,
                    }
                }
            }
            let n_ok = per_rep.len();
            let mean = if n_ok > 0 {
                per_rep.iter().sum::<f64>() / n_ok as f64
            } else {
                f64::NAN
            };
            let stderr = if n_ok > 1 {
                let var = per_rep.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
                    / (n_ok as f64 - 1.0);
                (var / n_ok as f64).sqrt()
            } else {
                0.0
            };
            cells.push(ComparisonCell {
                method: method.label(),
                scenario: scenario.label.clone(),
                mean_error: mean,
                stderr,
                reps: n_ok,
                failures,
                per_rep,
            });
        }
    }
    Ok(cells)
}

/// The standard method list of the single-factor comparison tables.
pub fn standard_methods() -> Vec<MethodSpec> {
    use BenchPenalty::*;
    vec![
        MethodSpec::Ptd {
            penalties: [L1, L1, L1],
            form: Form::Unconstrained,
            rank: 1,
        },
        MethodSpec::Ptd {
            penalties: [L1, Fused, Fused],
            form: Form::Unconstrained,
            rank: 1,
        },
        MethodSpec::Ptd {
            penalties: [L1, Tf(1), Fused],
            form: Form::Unconstrained,
            rank: 1,
        },
        MethodSpec::Ptd {
            penalties: [L1, Tf(1), Tf(1)],
            form: Form::Unconstrained,
            rank: 1,
        },
        MethodSpec::PmdStack {
            penalties: [L1, L1],
        },
        MethodSpec::PmdStack {
            penalties: [L1, Fused],
        },
        MethodSpec::PmdStack {
            penalties: [Fused, Fused],
        },
    ]
}

/// Methods of the multi-factor comparison.
pub fn multifactor_methods() -> Vec<MethodSpec> {
    use BenchPenalty::*;
    vec![
        MethodSpec::RobustPower {
            n_inits: 30,
            n_iters: 10,
        },
        MethodSpec::Ptd {
            penalties: [L1, Fused, Fused],
            form: Form::Unconstrained,
            rank: 0,
        },
        MethodSpec::Ptd {
            penalties: [L1, Tf(1), Tf(1)],
            form: Form::Unconstrained,
            rank: 0,
        },
    ]
}

/// One timing-toy measurement.
#[derive(Debug, Clone)]
pub struct ToyRow {
    pub method: String,
    pub size: usize,
    pub error: f64,
    pub seconds: f64,
}

/// Reconstruction-vs-time comparison of the three solver routes on a
/// rank-one smooth target: one block-update sweep each of (a) the
/// projection ADMM, (b) penalized updates with adaptively chosen weights,
/// and (c) the constrained path solver with oracle radii. The middle mode's
/// length varies over `sizes`.
pub fn toy_timing(sizes: &[usize], seed: u64, settings: &SolverSettings) -> Result<Vec<ToyRow>> {
    let mut rows = Vec::new();
    for (si, &t_len) in sizes.iter().enumerate() {
        if t_len < 4 {
            return Err(Error::InvalidArgument("toy_timing sizes must be >= 4".into()));
        }
        let (l_len, s_len) = (10usize, 400usize);
        let u_true = normalized(&piecewise(l_len, &[(0.3, 0.0), (0.6, -1.0), (1.0, 0.0)])?)
            .expect("nonzero structure");
        let v_raw: Vec<f64> = grid01(t_len)
            .map(|x| (9.0 * std::f64::consts::PI * x).cos())
            .collect();
        let v_true = normalized(&v_raw).expect("nonzero structure");
        let w_raw: Vec<f64> = grid01(s_len)
            .map(|x| (9.0 * std::f64::consts::PI * x).cos())
            .collect();
        let w_true = normalized(&w_raw).expect("nonzero structure");
        // scale restores the native magnitude of the raw structure product
        let d_true = (l_len as f64 / 2.0).sqrt().max(1.0)
            * crate::vecmath::norm2(&v_raw)
            * crate::vecmath::norm2(&w_raw);
        let truth = outer3(&u_true, &v_true, &w_true, d_true)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x70, si as u64]));
        let observed_values: Vec<f64> = truth
            .values()
            .iter()
            .map(|&m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + e
            })
            .collect();
        let y = Tensor3::new(truth.dims(), observed_values)?;

        let ops = (
            identity_op(l_len)?,
            first_difference(t_len)?,
            first_difference(s_len)?,
        );
        let radii = (
            ops.0.penalty_value(&u_true)?.max(1e-8),
            ops.1.penalty_value(&v_true)?.max(1e-8),
            ops.2.penalty_value(&w_true)?.max(1e-8),
        );
        let init_seed = derive_seed(seed, &[0x71, si as u64]);
        let init = power_method_init(&y, 10, init_seed)?;
        let one_sweep = FitOptions {
            max_sweeps: 1,
            tol: 0.0,
            seed: init_seed,
            init: InitStrategy::Given {
                u: init.0.clone(),
                v: init.1.clone(),
                w: init.2.clone(),
            },
        };

        // (a) projection ADMM on the constrained updates
        let start = Instant::now();
        let admm_fit = {
            let u = zhu_admm_update(&y.contract_mode1(&init.1, &init.2), &ops.0, radii.0, settings)?;
            let v = zhu_admm_update(&y.contract_mode2(&u, &init.2), &ops.1, radii.1, settings)?;
            let w = zhu_admm_update(&y.contract_mode3(&u, &v), &ops.2, radii.2, settings)?;
            let d = fit_scale(&y, &u, &v, &w)?;
            RankOneTerm { d, u, v, w }
        };
        let admm_secs = start.elapsed().as_secs_f64();
        rows.push(ToyRow {
            method: "zhu-admm".into(),
            size: t_len,
            error: frobenius_error(&outer3(&admm_fit.u, &admm_fit.v, &admm_fit.w, admm_fit.d)?, &truth)?,
            seconds: admm_secs,
        });

        // (b) penalized updates with per-mode adaptive weights
        let multipliers = [0.01, 0.1, 0.3, 1.0];
        let grids: [Vec<f64>; 3] = [
            multipliers
                .iter()
                .map(|m| m * BenchPenalty::L1.base_weight(l_len, 1.0))
                .collect(),
            multipliers
                .iter()
                .map(|m| m * BenchPenalty::Fused.base_weight(t_len, 1.0))
                .collect(),
            multipliers
                .iter()
                .map(|m| m * BenchPenalty::Fused.base_weight(s_len, 1.0))
                .collect(),
        ];
        let chooser_seed = derive_seed(seed, &[0x72, si as u64]);
        let inner = settings.clone();
        let chooser = move |mode: crate::decompose::Mode,
                            target: &[f64],
                            op: &DifferenceOp|
              -> Result<f64> {
            let grid = match mode {
                crate::decompose::Mode::U => &grids[0],
                crate::decompose::Mode::V => &grids[1],
                crate::decompose::Mode::W => &grids[2],
            };
            adaptive_chooser(grid.clone(), 0.2, chooser_seed, inner.clone())(mode, target, op)
        };
        let config = PenaltyConfig {
            u: ModePenalty::Weighted {
                op: ops.0.clone(),
                weight: 0.0,
            },
            v: ModePenalty::Weighted {
                op: ops.1.clone(),
                weight: 0.0,
            },
            w: ModePenalty::Weighted {
                op: ops.2.clone(),
                weight: 0.0,
            },
        };
        let start = Instant::now();
        let fit = rank1_unconstrained(&y, &config, &one_sweep, settings, Some(&chooser))?;
        let pen_secs = start.elapsed().as_secs_f64();
        rows.push(ToyRow {
            method: "unconstrained-adaptive".into(),
            size: t_len,
            error: frobenius_error(&outer3(&fit.u, &fit.v, &fit.w, fit.d)?, &truth)?,
            seconds: pen_secs,
        });

        // (c) constrained path solver with oracle radii
        let config_c = PenaltyConfig {
            u: ModePenalty::Constrained {
                op: ops.0.clone(),
                radius: radii.0,
            },
            v: ModePenalty::Constrained {
                op: ops.1.clone(),
                radius: radii.1,
            },
            w: ModePenalty::Constrained {
                op: ops.2.clone(),
                radius: radii.2,
            },
        };
        let start = Instant::now();
        let fit_c = rank1_constrained(&y, &config_c, &one_sweep)?;
        let con_secs = start.elapsed().as_secs_f64();
        rows.push(ToyRow {
            method: "constrained-oracle".into(),
            size: t_len,
            error: frobenius_error(&outer3(&fit_c.u, &fit_c.v, &fit_c.w, fit_c.d)?, &truth)?,
            seconds: con_secs,
        });
    }
    Ok(rows)
}
