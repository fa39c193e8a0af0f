//! Block-coordinate decomposition drivers: rank-1 fits in constrained and
//! penalized form, the multi-factor driver, power-method initialization,
//! the slice-stacking and robust-power baselines, and model diagnostics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genlasso::{constrained_update, unconstrained_update, SolverSettings};
use crate::penalty::DifferenceOp;
use crate::tensor::{model_residual, Tensor3};
use crate::vecmath::{dot, normalized};

/// Which factor a block update targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    U,
    V,
    W,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::U, Mode::V, Mode::W];

    pub fn name(self) -> &'static str {
        match self {
            Mode::U => "u",
            Mode::V => "v",
            Mode::W => "w",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Penalty attached to one mode: absent, a constraint radius, or a weight.
#[derive(Debug, Clone)]
pub enum ModePenalty {
    None,
    Constrained { op: DifferenceOp, radius: f64 },
    Weighted { op: DifferenceOp, weight: f64 },
}

impl ModePenalty {
    pub fn value(&self) -> f64 {
        match self {
            ModePenalty::None => 0.0,
            ModePenalty::Constrained { radius, .. } => *radius,
            ModePenalty::Weighted { weight, .. } => *weight,
        }
    }

    pub fn op(&self) -> Option<&DifferenceOp> {
        match self {
            ModePenalty::None => None,
            ModePenalty::Constrained { op, .. } | ModePenalty::Weighted { op, .. } => Some(op),
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        match self {
            ModePenalty::None => ModePenalty::None,
            ModePenalty::Constrained { op, radius } => ModePenalty::Constrained {
                op: op.clone(),
                radius: radius * factor,
            },
            ModePenalty::Weighted { op, weight } => ModePenalty::Weighted {
                op: op.clone(),
                weight: weight * factor,
            },
        }
    }
}

/// Per-mode penalties for one factor.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub u: ModePenalty,
    pub v: ModePenalty,
    pub w: ModePenalty,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self {
            u: ModePenalty::None,
            v: ModePenalty::None,
            w: ModePenalty::None,
        }
    }

    pub fn mode(&self, m: Mode) -> &ModePenalty {
        match m {
            Mode::U => &self.u,
            Mode::V => &self.v,
            Mode::W => &self.w,
        }
    }

    /// Sum of the per-mode radii/weights; used as a cross-validation tie-break.
    pub fn total_value(&self) -> f64 {
        self.u.value() + self.v.value() + self.w.value()
    }

    /// Same operators with all radii/weights multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            u: self.u.scaled(factor),
            v: self.v.scaled(factor),
            w: self.w.scaled(factor),
        }
    }

    fn validate(&self, dims: (usize, usize, usize), constrained: bool) -> Result<()> {
        let lens = [dims.0, dims.1, dims.2];
        for (mode, len) in Mode::ALL.iter().zip(lens) {
            let pen = self.mode(*mode);
            if let Some(op) = pen.op() {
                if op.n_cols() != len {
                    return Err(Error::DimensionMismatch(format!(
                        "penalty operator for mode {mode} expects length {}, tensor has {len}",
                        op.n_cols()
                    )));
                }
            }
            match pen {
                ModePenalty::Constrained { radius, .. } => {
                    if !constrained {
                        return Err(Error::InvalidArgument(format!(
                            "mode {mode} carries a constraint radius but the penalized driver was called"
                        )));
                    }
                    if *radius <= 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "mode {mode}: constraint radius must be positive"
                        )));
                    }
                }
                ModePenalty::Weighted { weight, .. } => {
                    if constrained {
                        return Err(Error::InvalidArgument(format!(
                            "mode {mode} carries a weight but the constrained driver was called"
                        )));
                    }
                    if *weight < 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "mode {mode}: penalty weight must be nonnegative"
                        )));
                    }
                }
                ModePenalty::None => {}
            }
        }
        Ok(())
    }
}

/// A fitted rank-one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneTerm {
    pub d: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

/// Rank-one fit with per-sweep diagnostics.
#[derive(Debug, Clone)]
pub struct RankOneFit {
    pub d: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub sweeps: usize,
    /// Objective value at initialization and after each sweep.
    pub objective_trace: Vec<f64>,
}

impl RankOneFit {
    pub fn term(&self) -> RankOneTerm {
        RankOneTerm {
            d: self.d,
            u: self.u.clone(),
            v: self.v.clone(),
            w: self.w.clone(),
        }
    }
}

/// Ordered list of rank-one terms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParafacModel {
    terms: Vec<RankOneTerm>,
}

impl ParafacModel {
    pub fn new(terms: Vec<RankOneTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[RankOneTerm] {
        &self.terms
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    /// Dense tensor of the model, `sum_j d_j u_j o v_j o w_j`.
    pub fn to_tensor(&self, dims: (usize, usize, usize)) -> Result<Tensor3> {
        let zero = Tensor3::zeros(dims)?;
        let resid = model_residual(&zero, self)?;
        let values = resid.values().iter().map(|v| -v).collect();
        Tensor3::new(dims, values)
    }
}

/// Multi-factor fit with the outer-loop diagnostics.
#[derive(Debug, Clone)]
pub struct MultifactorFit {
    pub model: ParafacModel,
    pub outer_loops: usize,
    pub objective_trace: Vec<f64>,
}

/// Per-update penalty-weight chooser; receives the mode, the block-update
/// target vector and the mode's operator. Used to plug adaptive
/// cross-validation into the penalized drivers.
pub type LambdaChooser<'a> = dyn Fn(Mode, &[f64], &DifferenceOp) -> Result<f64> + Sync + 'a;

/// How the factor iteration starts.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Seeded power-method sweeps (all penalties off).
    Power { iters: usize },
    /// A seeded random unit triple with no sweeps.
    Random,
    /// Explicit unit starting vectors.
    Given {
        u: Vec<f64>,
        v: Vec<f64>,
        w: Vec<f64>,
    },
}

/// Stopping and seeding controls shared by the decomposition drivers.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_sweeps: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: InitStrategy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tol: 1e-6,
            seed: 0,
            init: InitStrategy::Power { iters: 10 },
        }
    }
}

/// Deterministic seed derivation for independent sub-runs (splitmix64 mixing).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master ^ 0x6A09_E667_F3BC_C908;
    for &t in tags {
        state ^= t.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

fn unit_triple_from_seed(dims: (usize, usize, usize), seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit_vector(&mut rng, dims.0);
    let v = random_unit_vector(&mut rng, dims.1);
    let w = random_unit_vector(&mut rng, dims.2);
    (u, v, w)
}

/// Power-method initialization: penalty-free alternating normalization
/// sweeps from a seeded random unit start.
pub fn power_method_init(y: &Tensor3, iters: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if iters == 0 {
        return Err(Error::InvalidArgument("power_method_init: iters must be >= 1".into()));
    }
    if y.frobenius_norm() == 0.0 {
        return Err(Error::InvalidArgument("power_method_init: tensor is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, t, s) = y.dims();
    let mut u = random_unit_vector(&mut rng, l);
    let mut v = random_unit_vector(&mut rng, t);
    let mut w = random_unit_vector(&mut rng, s);
    for _ in 0..iters {
        u = match normalized(&y.contract_mode1(&v, &w)) {
            Some(x) => x,
            None => random_unit_vector(&mut rng, l),
        };
        v = match normalized(&y.contract_mode2(&u, &w)) {
            Some(x) => x,
            None => random_unit_vector(&mut rng, t),
        };
        w = match normalized(&y.contract_mode3(&u, &v)) {
            Some(x) => x,
            None => random_unit_vector(&mut rng, s),
        };
    }
    Ok((u, v, w))
}

/// Least-squares scale of `u o v o w` against Y over observed entries:
/// `<Y, u o v o w>_obs / ||u o v o w||^2_obs`. Without a mask and with unit
/// factors the denominator is 1, so this is exactly `Y x_1 u x_2 v x_3 w`.
pub fn fit_scale(y: &Tensor3, u: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let (l, t, s) = y.dims();
    if u.len() != l || v.len() != t || w.len() != s {
        return Err(Error::DimensionMismatch(
            "fit_scale: factor lengths do not match tensor dims".into(),
        ));
    }
    let num = y.contract3(u, v, w);
    match observed_pattern_energy(y, u, v, w) {
        Some(denom) if denom > 1e-300 => Ok(num / denom),
        Some(_) => Ok(0.0),
        None => Ok(num),
    }
}

/// `sum_obs (u_l v_t w_s)^2`, or None when the tensor has no mask.
fn observed_pattern_energy(y: &Tensor3, u: &[f64], v: &[f64], w: &[f64]) -> Option<f64> {
    let mask = y.mask()?;
    let (l_dim, t_dim, s_dim) = y.dims();
    let mut sum = 0.0;
    for s in 0..s_dim {
        let ws = w[s];
        for t in 0..t_dim {
            let f = v[t] * ws;
            let base = l_dim * (t + t_dim * s);
            for l in 0..l_dim {
                if mask[base + l] {
                    let x = f * u[l];
                    sum += x * x;
                }
            }
        }
    }
    Some(sum)
}

/// Parafac sign indeterminacy: flip (u, d) so d >= 0, then flip (u, v) so
/// the largest-magnitude entry of u is positive.
fn apply_sign_convention(d: &mut f64, u: &mut [f64], v: &mut [f64]) {
    if *d < 0.0 {
        *d = -*d;
        for x in u.iter_mut() {
            *x = -*x;
        }
    }
    let mut imax = 0;
    let mut best = -1.0;
    for (i, x) in u.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            imax = i;
        }
    }
    if u[imax] < 0.0 {
        for x in u.iter_mut() {
            *x = -*x;
        }
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn resolve_init(y: &Tensor3, opts: &FitOptions) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    match &opts.init {
        InitStrategy::Power { iters } => power_method_init(y, *iters, opts.seed),
        InitStrategy::Random => Ok(unit_triple_from_seed(y.dims(), opts.seed)),
        InitStrategy::Given { u, v, w } => {
            let (l, t, s) = y.dims();
            if u.len() != l || v.len() != t || w.len() != s {
                return Err(Error::DimensionMismatch("init vectors do not match tensor dims".into()));
            }
            Ok((u.clone(), v.clone(), w.clone()))
        }
    }
}

fn normalize_target(mode: Mode, target: &[f64]) -> Result<Vec<f64>> {
    normalized(target).ok_or_else(|| {
        Error::DegenerateTarget(format!(
            "mode {mode}: contraction target is zero; the iterate collapsed"
        ))
    })
}

fn converged(prev: f64, cur: f64, tol: f64) -> bool {
    (cur - prev).abs() <= tol * prev.abs().max(1.0)
}

/// Rank-1 fit of the constrained formulation: cyclic boundary-solution
/// updates with per-mode constraint radii. The monitored objective is the
/// multilinear form `Y x_1 u x_2 v x_3 w`, nondecreasing across updates.
pub fn rank1_constrained(y: &Tensor3, config: &PenaltyConfig, opts: &FitOptions) -> Result<RankOneFit> {
    config.validate(y.dims(), true)?;
    let (mut u, mut v, mut w) = resolve_init(y, opts)?;
    let mut trace = vec![y.contract3(&u, &v, &w)];
    let mut sweeps = 0;
    for sweep in 1..=opts.max_sweeps {
        for mode in Mode::ALL {
            let target = match mode {
                Mode::U => y.contract_mode1(&v, &w),
                Mode::V => y.contract_mode2(&u, &w),
                Mode::W => y.contract_mode3(&u, &v),
            };
            let updated = match config.mode(mode) {
                ModePenalty::None => normalize_target(mode, &target)?,
                ModePenalty::Constrained { op, radius } => constrained_update(&target, op, *radius)
                    .map_err(|e| annotate_mode(e, mode))?,
                ModePenalty::Weighted { .. } => unreachable!("validated above"),
            };
            match mode {
                Mode::U => u = updated,
                Mode::V => v = updated,
                Mode::W => w = updated,
            }
        }
        sweeps = sweep;
        let obj = y.contract3(&u, &v, &w);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if converged(prev, obj, opts.tol) {
            break;
        }
    }
    let mut d = fit_scale(y, &u, &v, &w)?;
    apply_sign_convention(&mut d, &mut u, &mut v);
    Ok(RankOneFit {
        d,
        u,
        v,
        w,
        sweeps,
        objective_trace: trace,
    })
}

fn annotate_mode(e: Error, mode: Mode) -> Error {
    match e {
        Error::OverPenalized { what } => Error::OverPenalized {
            what: format!("mode {mode} ({what})"),
        },
        Error::DegenerateTarget(msg) => Error::DegenerateTarget(format!("mode {mode}: {msg}")),
        Error::InvalidArgument(msg) => Error::InvalidArgument(format!("mode {mode}: {msg}")),
        other => other,
    }
}

struct WeightedUpdate {
    vector: Vec<f64>,
    lambda: f64,
}

fn weighted_mode_update(
    mode: Mode,
    target: &[f64],
    pen: &ModePenalty,
    settings: &SolverSettings,
    chooser: Option<&LambdaChooser<'_>>,
) -> Result<WeightedUpdate> {
    match pen {
        ModePenalty::None => Ok(WeightedUpdate {
            vector: normalize_target(mode, target)?,
            lambda: 0.0,
        }),
        ModePenalty::Weighted { op, weight } => {
            let lambda = match chooser {
                Some(f) => f(mode, target, op)?,
                None => *weight,
            };
            let vector =
                unconstrained_update(target, op, lambda, settings).map_err(|e| annotate_mode(e, mode))?;
            Ok(WeightedUpdate { vector, lambda })
        }
        ModePenalty::Constrained { .. } => Err(Error::InvalidArgument(format!(
            "mode {mode}: constrained penalty passed to the penalized driver"
        ))),
    }
}

fn penalty_term(pen: &ModePenalty, x: &[f64], lambda: f64) -> Result<f64> {
    match pen.op() {
        Some(op) => Ok(lambda * op.penalty_value(x)?),
        None => Ok(0.0),
    }
}

/// Rank-1 fit of the penalized formulation: cyclic normalized-prox updates
/// with per-mode weights (or a per-update weight chooser). The monitored
/// objective is the penalized form, nonincreasing across updates when the
/// weights are fixed.
pub fn rank1_unconstrained(
    y: &Tensor3,
    config: &PenaltyConfig,
    opts: &FitOptions,
    settings: &SolverSettings,
    chooser: Option<&LambdaChooser<'_>>,
) -> Result<RankOneFit> {
    config.validate(y.dims(), false)?;
    let (mut u, mut v, mut w) = resolve_init(y, opts)?;
    let mut lambdas = [
        config.u.value(),
        config.v.value(),
        config.w.value(),
    ];
    let objective = |u: &[f64], v: &[f64], w: &[f64], lams: &[f64; 3]| -> Result<f64> {
        Ok(-y.contract3(u, v, w)
            + penalty_term(&config.u, u, lams[0])?
            + penalty_term(&config.v, v, lams[1])?
            + penalty_term(&config.w, w, lams[2])?)
    };
    let mut trace = vec![objective(&u, &v, &w, &lambdas)?];
    let mut sweeps = 0;
    for sweep in 1..=opts.max_sweeps {
        for (idx, mode) in Mode::ALL.into_iter().enumerate() {
            let target = match mode {
                Mode::U => y.contract_mode1(&v, &w),
                Mode::V => y.contract_mode2(&u, &w),
                Mode::W => y.contract_mode3(&u, &v),
            };
            let WeightedUpdate { vector, lambda } =
                weighted_mode_update(mode, &target, config.mode(mode), settings, chooser)?;
            lambdas[idx] = lambda;
            match mode {
                Mode::U => u = vector,
                Mode::V => v = vector,
                Mode::W => w = vector,
            }
        }
        sweeps = sweep;
        let obj = objective(&u, &v, &w, &lambdas)?;
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if converged(prev, obj, opts.tol) {
            break;
        }
    }
    let mut d = fit_scale(y, &u, &v, &w)?;
    apply_sign_convention(&mut d, &mut u, &mut v);
    Ok(RankOneFit {
        d,
        u,
        v,
        w,
        sweeps,
        objective_trace: trace,
    })
}

fn shared_config<'a>(configs: &'a [PenaltyConfig], j: usize) -> &'a PenaltyConfig {
    if configs.len() == 1 {
        &configs[0]
    } else {
        &configs[j]
    }
}

/// Multi-factor decomposition: sequential power-method deflation for the
/// initial terms, then outer loops cycling over factors, where each factor's
/// vectors are updated against the cross-term-corrected targets and its
/// scale is refreshed last. Stops on relative change of the penalized
/// least-squares objective.
pub fn multifactor(
    y: &Tensor3,
    j: usize,
    configs: &[PenaltyConfig],
    opts: &FitOptions,
    settings: &SolverSettings,
    chooser: Option<&LambdaChooser<'_>>,
) -> Result<MultifactorFit> {
    let dims = y.dims();
    if j == 0 {
        return Err(Error::InvalidArgument("multifactor: J must be >= 1".into()));
    }
    if j > dims.0.min(dims.1).min(dims.2) {
        return Err(Error::InvalidArgument(format!(
            "multifactor: J = {j} exceeds the smallest tensor dimension"
        )));
    }
    if configs.len() != 1 && configs.len() != j {
        return Err(Error::InvalidArgument(format!(
            "multifactor: need 1 shared config or {j} per-factor configs, got {}",
            configs.len()
        )));
    }
    for cfg in configs {
        cfg.validate(dims, false)?;
    }

    if j == 1 {
        // empty correction sums: identical to the rank-1 driver
        let fit = rank1_unconstrained(y, shared_config(configs, 0), opts, settings, chooser)?;
        let sweeps = fit.sweeps;
        let trace = fit.objective_trace.clone();
        return Ok(MultifactorFit {
            model: ParafacModel::new(vec![fit.term()]),
            outer_loops: sweeps,
            objective_trace: trace,
        });
    }

    // sequential power-method deflation for initial terms
    let mut residual = y.clone();
    let mut terms: Vec<RankOneTerm> = Vec::with_capacity(j);
    let init_iters = match opts.init {
        InitStrategy::Power { iters } => iters,
        _ => 10,
    };
    for jj in 0..j {
        let seed = if jj == 0 {
            opts.seed
        } else {
            derive_seed(opts.seed, &[0xD5F1, jj as u64])
        };
        let (u, v, w) = power_method_init(&residual, init_iters, seed)?;
        let d = fit_scale(&residual, &u, &v, &w)?;
        subtract_scaled_outer(&mut residual, d, &u, &v, &w);
        terms.push(RankOneTerm { d, u, v, w });
    }

    let masked = y.mask().is_some();
    let mut lambdas: Vec<[f64; 3]> = (0..j)
        .map(|jj| {
            let cfg = shared_config(configs, jj);
            [cfg.u.value(), cfg.v.value(), cfg.w.value()]
        })
        .collect();

    let objective = |terms: &[RankOneTerm], lambdas: &[[f64; 3]]| -> Result<f64> {
        let model = ParafacModel::new(terms.to_vec());
        let resid = model_residual(y, &model)?;
        let mut obj = resid.frobenius_norm().powi(2);
        for (jj, term) in terms.iter().enumerate() {
            let cfg = shared_config(configs, jj);
            obj += penalty_term(&cfg.u, &term.u, lambdas[jj][0])?;
            obj += penalty_term(&cfg.v, &term.v, lambdas[jj][1])?;
            obj += penalty_term(&cfg.w, &term.w, lambdas[jj][2])?;
        }
        Ok(obj)
    };

    let mut trace = vec![objective(&terms, &lambdas)?];
    let mut outer_loops = 0;
    for outer in 1..=opts.max_sweeps {
        for j0 in 0..j {
            let cfg = shared_config(configs, j0);
            // residual of the other terms, only needed for masked targets
            let other_resid = if masked {
                let others: Vec<RankOneTerm> = terms
                    .iter()
                    .enumerate()
                    .filter(|(jj, _)| *jj != j0)
                    .map(|(_, t)| t.clone())
                    .collect();
                Some(model_residual(y, &ParafacModel::new(others))?)
            } else {
                None
            };

            for (idx, mode) in Mode::ALL.into_iter().enumerate() {
                let target = corrected_target(y, &terms, j0, mode, other_resid.as_ref());
                let WeightedUpdate { vector, lambda } =
                    weighted_mode_update(mode, &target, cfg.mode(mode), settings, chooser)
                        .map_err(|e| annotate_factor(e, j0))?;
                lambdas[j0][idx] = lambda;
                match mode {
                    Mode::U => terms[j0].u = vector,
                    Mode::V => terms[j0].v = vector,
                    Mode::W => terms[j0].w = vector,
                }
            }
            terms[j0].d = scale_update(y, &terms, j0, other_resid.as_ref());
        }
        outer_loops = outer;
        let obj = objective(&terms, &lambdas)?;
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if converged(prev, obj, opts.tol) {
            break;
        }
    }

    for term in &mut terms {
        let RankOneTerm { d, u, v, .. } = term;
        apply_sign_convention(d, u, v);
    }
    Ok(MultifactorFit {
        model: ParafacModel::new(terms),
        outer_loops,
        objective_trace: trace,
    })
}

fn annotate_factor(e: Error, j0: usize) -> Error {
    match e {
        Error::OverPenalized { what } => Error::OverPenalized {
            what: format!("factor {j0}, {what}"),
        },
        other => other,
    }
}

/// Mode contraction of Y against the other two vectors of factor j0, minus
/// the cross-term sums over the other factors. With a mask present the
/// cross-term identity does not hold, so the target is the masked
/// contraction of the residual of the other terms instead.
fn corrected_target(
    y: &Tensor3,
    terms: &[RankOneTerm],
    j0: usize,
    mode: Mode,
    other_resid: Option<&Tensor3>,
) -> Vec<f64> {
    let t0 = &terms[j0];
    if let Some(resid) = other_resid {
        return match mode {
            Mode::U => resid.contract_mode1(&t0.v, &t0.w),
            Mode::V => resid.contract_mode2(&t0.u, &t0.w),
            Mode::W => resid.contract_mode3(&t0.u, &t0.v),
        };
    }
    let mut target = match mode {
        Mode::U => y.contract_mode1(&t0.v, &t0.w),
        Mode::V => y.contract_mode2(&t0.u, &t0.w),
        Mode::W => y.contract_mode3(&t0.u, &t0.v),
    };
    for (jj, t) in terms.iter().enumerate() {
        if jj == j0 {
            continue;
        }
        let (coef, vector) = match mode {
            Mode::U => (t.d * dot(&t0.v, &t.v) * dot(&t0.w, &t.w), &t.u),
            Mode::V => (t.d * dot(&t0.u, &t.u) * dot(&t0.w, &t.w), &t.v),
            Mode::W => (t.d * dot(&t0.u, &t.u) * dot(&t0.v, &t.v), &t.w),
        };
        for (x, y) in target.iter_mut().zip(vector) {
            *x -= coef * y;
        }
    }
    target
}

fn scale_update(y: &Tensor3, terms: &[RankOneTerm], j0: usize, other_resid: Option<&Tensor3>) -> f64 {
    let t0 = &terms[j0];
    if let Some(resid) = other_resid {
        let num = resid.contract3(&t0.u, &t0.v, &t0.w);
        return match observed_pattern_energy(resid, &t0.u, &t0.v, &t0.w) {
            Some(denom) if denom > 1e-300 => num / denom,
            Some(_) => 0.0,
            None => num,
        };
    }
    let mut d = y.contract3(&t0.u, &t0.v, &t0.w);
    for (jj, t) in terms.iter().enumerate() {
        if jj == j0 {
            continue;
        }
        d -= t.d * dot(&t0.u, &t.u) * dot(&t0.v, &t.v) * dot(&t0.w, &t.w);
    }
    d
}

fn subtract_scaled_outer(y: &mut Tensor3, d: f64, u: &[f64], v: &[f64], w: &[f64]) {
    let model = ParafacModel::new(vec![RankOneTerm {
        d,
        u: u.to_vec(),
        v: v.to_vec(),
        w: w.to_vec(),
    }]);
    *y = model_residual(y, &model).expect("dims already checked");
}

/// Fraction of the (observed) squared Frobenius norm explained by the model.
pub fn variance_explained(y: &Tensor3, model: &ParafacModel) -> Result<f64> {
    let norm = y.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("variance_explained: tensor is zero".into()));
    }
    let resid = model_residual(y, model)?;
    let ve = 1.0 - (resid.frobenius_norm() / norm).powi(2);
    Ok(ve.max(0.0))
}

/// Scree rule: the smallest J whose increment in variance explained when
/// moving to J+1 falls below the threshold; J_max when no increment does.
pub fn select_rank(
    y: &Tensor3,
    j_max: usize,
    configs: &[PenaltyConfig],
    ve_gain_threshold: f64,
    opts: &FitOptions,
    settings: &SolverSettings,
) -> Result<usize> {
    if j_max == 0 {
        return Err(Error::InvalidArgument("select_rank: J_max must be >= 1".into()));
    }
    let fit_ve = |j: usize| -> Result<f64> {
        let cfgs: Vec<PenaltyConfig> = if configs.len() == 1 {
            configs.to_vec()
        } else {
            (0..j).map(|jj| configs[jj.min(configs.len() - 1)].clone()).collect()
        };
        let fit = multifactor(y, j, &cfgs, opts, settings, None)?;
        variance_explained(y, &fit.model)
    };
    let mut ve_prev = fit_ve(1)?;
    for j in 2..=j_max {
        let ve = fit_ve(j)?;
        if ve - ve_prev < ve_gain_threshold {
            return Ok(j - 1);
        }
        ve_prev = ve;
    }
    Ok(j_max)
}

/// Slice-stacking baseline as a model: a rank-1 penalized matrix fit of
/// every mode-1 slice, one term per slice with a basis vector on mode 1.
pub fn pmd_stack_model(
    y: &Tensor3,
    v_penalty: &ModePenalty,
    w_penalty: &ModePenalty,
    opts: &FitOptions,
    settings: &SolverSettings,
) -> Result<ParafacModel> {
    let (l_dim, t_dim, s_dim) = y.dims();
    for (pen, len, mode) in [(v_penalty, t_dim, Mode::V), (w_penalty, s_dim, Mode::W)] {
        if let Some(op) = pen.op() {
            if op.n_cols() != len {
                return Err(Error::DimensionMismatch(format!(
                    "pmd_stack: penalty for mode {mode} expects length {}, slice has {len}",
                    op.n_cols()
                )));
            }
        }
        if matches!(pen, ModePenalty::Constrained { .. }) {
            return Err(Error::InvalidArgument(
                "pmd_stack uses the penalized formulation; pass weights".into(),
            ));
        }
    }
    let mut terms = Vec::with_capacity(l_dim);
    let one = [1.0];
    for l in 0..l_dim {
        // slice l as a 1 x T x S tensor, preserving the mask
        let mut vals = Vec::with_capacity(t_dim * s_dim);
        let mut mask = Vec::with_capacity(t_dim * s_dim);
        let mut any_mask = false;
        for s in 0..s_dim {
            for t in 0..t_dim {
                vals.push(y.get(l, t, s));
                let obs = y.is_observed(l, t, s);
                any_mask |= !obs;
                mask.push(obs);
            }
        }
        let slice = if any_mask {
            Tensor3::with_mask((1, t_dim, s_dim), vals, mask)?
        } else {
            Tensor3::new((1, t_dim, s_dim), vals)?
        };
        if slice.frobenius_norm() == 0.0 {
            continue; // zero slice: zero estimate
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[0x51AC, l as u64]));
        let mut v = random_unit_vector(&mut rng, t_dim);
        let mut w = random_unit_vector(&mut rng, s_dim);
        // plain power start for the bilinear problem
        for _ in 0..3 {
            if let Some(x) = normalized(&slice.contract_mode2(&one, &w)) {
                v = x;
            }
            if let Some(x) = normalized(&slice.contract_mode3(&one, &v)) {
                w = x;
            }
        }
        let mut prev = f64::INFINITY;
        for _ in 0..opts.max_sweeps {
            let WeightedUpdate { vector, .. } = weighted_mode_update(
                Mode::V,
                &slice.contract_mode2(&one, &w),
                v_penalty,
                settings,
                None,
            )?;
            v = vector;
            let WeightedUpdate { vector, .. } = weighted_mode_update(
                Mode::W,
                &slice.contract_mode3(&one, &v),
                w_penalty,
                settings,
                None,
            )?;
            w = vector;
            let obj = slice.contract3(&one, &v, &w);
            if converged(prev, obj, opts.tol) {
                break;
            }
            prev = obj;
        }
        let d = fit_scale(&slice, &one, &v, &w)?;
        let mut u = vec![0.0; l_dim];
        u[l] = 1.0;
        terms.push(RankOneTerm { d, u, v, w });
    }
    Ok(ParafacModel::new(terms))
}

/// Slice-stacking baseline re-stacked into a dense tensor estimate.
pub fn pmd_stack(
    y: &Tensor3,
    v_penalty: &ModePenalty,
    w_penalty: &ModePenalty,
    opts: &FitOptions,
    settings: &SolverSettings,
) -> Result<Tensor3> {
    pmd_stack_model(y, v_penalty, w_penalty, opts, settings)?.to_tensor(y.dims())
}

/// Robust power baseline: per factor, the best of `n_inits` seeded power
/// runs on the deflated residual, keeping the start with the largest |d|.
pub fn robust_power_baseline(
    y: &Tensor3,
    j: usize,
    n_inits: usize,
    n_iters: usize,
    seed: u64,
) -> Result<ParafacModel> {
    if j == 0 || n_inits == 0 || n_iters == 0 {
        return Err(Error::InvalidArgument(
            "robust_power_baseline: J, n_inits and n_iters must be >= 1".into(),
        ));
    }
    let mut residual = y.clone();
    let mut terms = Vec::with_capacity(j);
    for j0 in 0..j {
        let mut best: Option<RankOneTerm> = None;
        for init in 0..n_inits {
            let s = derive_seed(seed, &[0x90B0, j0 as u64, init as u64]);
            let (u, v, w) = match power_method_init(&residual, n_iters, s) {
                Ok(t) => t,
                Err(_) => break, // residual collapsed to zero
            };
            let d = fit_scale(&residual, &u, &v, &w)?;
            if best.as_ref().map_or(true, |b| d.abs() > b.d.abs()) {
                best = Some(RankOneTerm { d, u, v, w });
            }
        }
        let Some(term) = best else {
            break;
        };
        subtract_scaled_outer(&mut residual, term.d, &term.u, &term.v, &term.w);
        terms.push(term);
    }
    for term in &mut terms {
        let RankOneTerm { d, u, v, .. } = term;
        apply_sign_convention(d, u, v);
    }
    Ok(ParafacModel::new(terms))
}
