use ptd::bench::{scaled_dims, simulate, SimulationSpec};
use ptd::decompose::{
    multifactor, FitOptions, ModePenalty, ParafacModel, PenaltyConfig,
};
use ptd::genlasso::SolverSettings;
use ptd::model_select::cv_entry_holdout;
use ptd::penalty::{first_difference, identity_op};
use ptd::tensor::frobenius_error;

fn main() {
    let spec = SimulationSpec::single(1, scaled_dims(0.05), 0.0, 1);
    let sim = simulate(&spec).unwrap();
    let dims = sim.observed.dims();
    println!("dims {dims:?} truth norm {}", sim.truth.frobenius_norm());

    let mk = |mult: f64| -> PenaltyConfig {
        let s = 0.05_f64;
        PenaltyConfig {
            u: ModePenalty::Weighted {
                op: identity_op(dims.0).unwrap(),
                weight: mult * s * (2.0 * (dims.0 as f64).ln()).sqrt(),
            },
            v: ModePenalty::Weighted {
                op: first_difference(dims.1).unwrap(),
                weight: mult * s * (dims.1 as f64).sqrt(),
            },
            w: ModePenalty::Weighted {
                op: first_difference(dims.2).unwrap(),
                weight: mult * s * (dims.2 as f64).sqrt(),
            },
        }
    };
    let grid: Vec<PenaltyConfig> = [0.0, 0.1, 0.3, 1.0].iter().map(|&m| mk(m)).collect();
    let settings = SolverSettings::default();
    let hook = |train: &ptd::tensor::Tensor3, config: &PenaltyConfig, seed: u64| -> ptd::Result<ParafacModel> {
        let opts = FitOptions { seed, ..FitOptions::default() };
        let fit = multifactor(train, 1, std::slice::from_ref(config), &opts, &settings, None)?;
        Ok(fit.model)
    };
    let out = cv_entry_holdout(&sim.observed, &grid, 0.1, 1, 99, 1, &hook).unwrap();
    println!("mean mses: {:?} best {}", out.mean_mse, out.best_index);

    for (i, cfg) in grid.iter().enumerate() {
        let opts = FitOptions { seed: 7, ..FitOptions::default() };
        let fit = multifactor(&sim.observed, 1, std::slice::from_ref(cfg), &opts, &settings, None).unwrap();
        let est = fit.model.to_tensor(dims).unwrap();
        println!(
            "config {i}: weights ({}, {}, {}) error {}",
            cfg.u.value(),
            cfg.v.value(),
            cfg.w.value(),
            frobenius_error(&est, &sim.truth).unwrap()
        );
    }
}
