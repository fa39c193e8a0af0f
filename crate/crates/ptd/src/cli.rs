//! Command-line interface: decomposition, simulation, cross-validation and
//! the benchmark tables, with seeded reproducibility and documented file
//! formats (tensors as plain text, models as JSON, tables as CSV).
//!
//! Exit codes: 0 on success, 2 on usage/validation errors, 3 on solver
//! errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{
    multifactor_methods, run_comparison, scaled_dims, simulate, standard_methods, toy_timing,
    CvSpec, Scenario, SimulationSpec, StructureTerm,
};
use crate::decompose::{
    multifactor, rank1_constrained, rank1_unconstrained, variance_explained, FitOptions,
    InitStrategy, ModePenalty, ParafacModel, PenaltyConfig, RankOneTerm,
};
use crate::error::{Error, Result};
use crate::genlasso::SolverSettings;
use crate::model_select::cv_entry_holdout;
use crate::penalty::{parse_penalty_spec, PenaltySpec};
use crate::tensor::{textio, Tensor3};

#[derive(Parser)]
#[command(
    name = "ptd",
    version,
    about = "Penalized Parafac decomposition of 3-way tensors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a penalized Parafac model to a tensor file.
    Decompose(DecomposeArgs),
    /// Generate a synthetic tensor from the built-in structures.
    Simulate(SimulateArgs),
    /// Entry-holdout cross-validation over a penalty grid.
    Cv(CvArgs),
    /// Benchmark tables and the solver timing comparison.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormArg {
    Unconstrained,
    Constrained,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Power,
    Random,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Input tensor file (see README for the format).
    #[arg(long)]
    input: PathBuf,
    /// Output model JSON file.
    #[arg(long)]
    output: PathBuf,
    /// Penalty per mode, e.g. `u=fused:0.5`; repeat per mode, default none.
    #[arg(long = "penalty")]
    penalties: Vec<String>,
    /// Which formulation the per-mode value parametrizes: weight (lambda)
    /// or constraint radius (c).
    #[arg(long, value_enum, default_value = "unconstrained")]
    form: FormArg,
    /// Number of rank-one factors.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "power")]
    init: InitArg,
    /// Power-method sweeps used by `--init power`.
    #[arg(long, default_value_t = 10)]
    power_iters: usize,
    /// ADMM penalty parameter for trend-filter updates.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Residual tolerance of the iterative inner solvers.
    #[arg(long, default_value_t = 1e-6)]
    solver_tol: f64,
    #[arg(long, default_value_t = 5000)]
    solver_max_iter: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Structure ids, comma separated (e.g. `1` or `1,2`).
    #[arg(long)]
    structure: String,
    /// Per-structure weights, comma separated; defaults to 1 for each.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale factor on the native 10x1000x400 dimensions.
    #[arg(long, default_value_t = 0.2)]
    scale: f64,
    /// Explicit dims `L,T,S` overriding --scale.
    #[arg(long)]
    dims: Option<String>,
    /// Output tensor file (the noisy observations).
    #[arg(long)]
    output: PathBuf,
    /// Optional second output holding the noiseless mean tensor.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    /// Penalty grid: `<kind>:<v1,v2,...>` applied to all three modes, one
    /// configuration per value; repeatable, configurations concatenate.
    #[arg(long = "grid")]
    grids: Vec<String>,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long, default_value_t = 100)]
    max_sweeps: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Output CSV score table.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    which: BenchCommand,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Single-factor comparison across structures 1-5 at sigma = 1.
    Table1(BenchCommon),
    /// Noise sweep on structure 2.
    Table2(BenchCommon),
    /// Multi-factor mixtures against the robust power baseline.
    Table3(Table3Args),
    /// Reconstruction error and wall time of the three solver routes.
    Toy(ToyArgs),
}

#[derive(Args)]
struct BenchCommon {
    #[arg(long, default_value_t = 0.2)]
    scale: f64,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Cross-validation grid multipliers, comma separated.
    #[arg(long)]
    multipliers: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct Table3Args {
    #[command(flatten)]
    common: BenchCommon,
    /// Structure ids of the mixture, comma separated.
    #[arg(long, default_value = "1,2")]
    structures: String,
}

#[derive(Args)]
struct ToyArgs {
    /// Lengths of the varying mode, comma separated.
    #[arg(long, default_value = "50,100,200,400")]
    sizes: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

/// Model file written by `ptd decompose`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: [usize; 3],
    #[serde(rename = "J")]
    pub j: usize,
    pub form: String,
    pub terms: Vec<RankOneTerm>,
    pub objective_trace: Vec<f64>,
    pub variance_explained: f64,
    pub sweeps: usize,
    pub settings: SettingsEcho,
}

/// Echo of the options a model was fit with.
#[derive(Debug, Serialize, Deserialize)]
pub struct SettingsEcho {
    pub penalties: BTreeMap<String, String>,
    pub max_sweeps: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: String,
    pub rho: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Decompose(args) => cmd_decompose(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Cv(args) => cmd_cv(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::OverPenalized { .. }
        | Error::DegenerateTarget(_)
        | Error::NonConvergence(_)
        | Error::Unsupported(_) => 3,
        Error::DimensionMismatch(_)
        | Error::InvalidArgument(_)
        | Error::Parse(_)
        | Error::Io(_) => 2,
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Parse(format!("bad {what} entry `{tok}`")))
        })
        .collect()
}

fn mode_penalty_from_spec(spec: &PenaltySpec, n: usize, form: FormArg) -> Result<ModePenalty> {
    match spec.build_op(n)? {
        None => Ok(ModePenalty::None),
        Some(op) => {
            let value = spec.value().expect("non-none spec carries a value");
            match form {
                FormArg::Unconstrained => Ok(ModePenalty::Weighted { op, weight: value }),
                FormArg::Constrained => {
                    if value <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "constraint radius must be positive".into(),
                        ));
                    }
                    Ok(ModePenalty::Constrained { op, radius: value })
                }
            }
        }
    }
}

fn parse_mode_penalties(
    penalties: &[String],
    dims: (usize, usize, usize),
    form: FormArg,
) -> Result<(PenaltyConfig, BTreeMap<String, String>)> {
    let mut specs: BTreeMap<char, PenaltySpec> = BTreeMap::new();
    for entry in penalties {
        let (mode, spec_str) = entry.split_once('=').ok_or_else(|| {
            Error::Parse(format!("penalty `{entry}` must look like `u=fused:0.5`"))
        })?;
        let mode = match mode.trim() {
            "u" => 'u',
            "v" => 'v',
            "w" => 'w',
            other => {
                return Err(Error::Parse(format!(
                    "penalty mode must be u, v or w, got `{other}`"
                )))
            }
        };
        if specs.contains_key(&mode) {
            return Err(Error::Parse(format!("duplicate penalty for mode {mode}")));
        }
        specs.insert(mode, parse_penalty_spec(spec_str)?);
    }
    let get = |m: char| specs.get(&m).cloned().unwrap_or(PenaltySpec::None);
    let (su, sv, sw) = (get('u'), get('v'), get('w'));
    let config = PenaltyConfig {
        u: mode_penalty_from_spec(&su, dims.0, form)?,
        v: mode_penalty_from_spec(&sv, dims.1, form)?,
        w: mode_penalty_from_spec(&sw, dims.2, form)?,
    };
    let mut echo = BTreeMap::new();
    for (m, s) in [('u', &su), ('v', &sv), ('w', &sw)] {
        echo.insert(m.to_string(), describe_spec(s));
    }
    Ok((config, echo))
}

fn describe_spec(spec: &PenaltySpec) -> String {
    match spec {
        PenaltySpec::None => "none".into(),
        PenaltySpec::L1 { value } => format!("l1:{value}"),
        PenaltySpec::Fused { value } => format!("fused:{value}"),
        PenaltySpec::TrendFilter { order, value } => format!("tf{order}:{value}"),
        PenaltySpec::Graph { edge_file, value } => format!("graph:{edge_file}:{value}"),
    }
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let tensor = textio::read_tensor_file(&args.input)?;
    let dims = tensor.dims();
    let (config, penalty_echo) = parse_mode_penalties(&args.penalties, dims, args.form)?;
    if args.rank == 0 {
        return Err(Error::InvalidArgument("--rank must be >= 1".into()));
    }
    let settings = SolverSettings {
        rho: args.rho,
        tol: args.solver_tol,
        max_iter: args.solver_max_iter,
        e_bound: None,
    };
    let opts = FitOptions {
        max_sweeps: args.max_sweeps,
        tol: args.tol,
        seed: args.seed,
        init: match args.init {
            InitArg::Power => InitStrategy::Power {
                iters: args.power_iters,
            },
            InitArg::Random => InitStrategy::Random,
        },
    };

    let (model, sweeps, trace, form_str) = match (args.form, args.rank) {
        (FormArg::Constrained, 1) => {
            let fit = rank1_constrained(&tensor, &config, &opts)?;
            (
                ParafacModel::new(vec![fit.term()]),
                fit.sweeps,
                fit.objective_trace,
                "constrained",
            )
        }
        (FormArg::Constrained, _) => {
            return Err(Error::InvalidArgument(
                "the constrained form only supports --rank 1; use --form unconstrained for multiple factors"
                    .into(),
            ))
        }
        (FormArg::Unconstrained, 1) => {
            let fit = rank1_unconstrained(&tensor, &config, &opts, &settings, None)?;
            (
                ParafacModel::new(vec![fit.term()]),
                fit.sweeps,
                fit.objective_trace,
                "unconstrained",
            )
        }
        (FormArg::Unconstrained, j) => {
            let fit = multifactor(
                &tensor,
                j,
                std::slice::from_ref(&config),
                &opts,
                &settings,
                None,
            )?;
            (
                fit.model,
                fit.outer_loops,
                fit.objective_trace,
                "unconstrained",
            )
        }
    };

    let ve = variance_explained(&tensor, &model)?;
    let file = ModelFile {
        dims: [dims.0, dims.1, dims.2],
        j: model.rank(),
        form: form_str.into(),
        terms: model.terms().to_vec(),
        objective_trace: trace,
        variance_explained: ve,
        sweeps,
        settings: SettingsEcho {
            penalties: penalty_echo,
            max_sweeps: args.max_sweeps,
            tol: args.tol,
            seed: args.seed,
            init: match args.init {
                InitArg::Power => "power".into(),
                InitArg::Random => "random".into(),
            },
            rho: args.rho,
            solver_tol: args.solver_tol,
            solver_max_iter: args.solver_max_iter,
        },
    };
    write_json(&args.output, &file)?;

    println!("J={}", file.j);
    for (i, term) in file.terms.iter().enumerate() {
        println!("d[{i}]={}", term.d);
    }
    println!("variance_explained={ve}");
    println!("sweeps={sweeps}");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("serialization: {e}")))?;
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let ids: Vec<usize> = parse_list(&args.structure, "structure")?;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("--structure needs at least one id".into()));
    }
    let weights: Vec<f64> = match &args.weights {
        Some(s) => parse_list(s, "weight")?,
        None => vec![1.0; ids.len()],
    };
    if weights.len() != ids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} structures but {} weights",
            ids.len(),
            weights.len()
        )));
    }
    let dims = match &args.dims {
        Some(s) => {
            let d: Vec<usize> = parse_list(s, "dims")?;
            if d.len() != 3 {
                return Err(Error::InvalidArgument("--dims must be `L,T,S`".into()));
            }
            (d[0], d[1], d[2])
        }
        None => scaled_dims(args.scale),
    };
    let spec = SimulationSpec {
        structures: ids
            .iter()
            .zip(&weights)
            .map(|(&id, &weight)| StructureTerm { id, weight })
            .collect(),
        dims,
        sigma: args.sigma,
        seed: args.seed,
    };
    let sim = simulate(&spec)?;
    textio::write_tensor_file(&args.output, &sim.observed)?;
    if let Some(truth_path) = &args.truth {
        textio::write_tensor_file(truth_path, &sim.truth)?;
    }
    println!(
        "wrote {}x{}x{} tensor ({} structures, sigma={}) to {}",
        dims.0,
        dims.1,
        dims.2,
        ids.len(),
        args.sigma,
        args.output.display()
    );
    Ok(())
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let tensor = textio::read_tensor_file(&args.input)?;
    let dims = tensor.dims();
    if args.grids.is_empty() {
        return Err(Error::InvalidArgument("at least one --grid is required".into()));
    }
    let mut grid: Vec<PenaltyConfig> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for entry in &args.grids {
        let (kind, values) = entry
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("grid `{entry}` must look like `fused:0.1,1`")))?;
        let values: Vec<f64> = parse_list(values, "grid value")?;
        for value in values {
            let spec = parse_penalty_spec(&format!("{kind}:{value}"))?;
            grid.push(PenaltyConfig {
                u: mode_penalty_from_spec(&spec, dims.0, FormArg::Unconstrained)?,
                v: mode_penalty_from_spec(&spec, dims.1, FormArg::Unconstrained)?,
                w: mode_penalty_from_spec(&spec, dims.2, FormArg::Unconstrained)?,
            });
            labels.push(describe_spec(&spec));
        }
    }
    let settings = SolverSettings::default();
    let opts_base = FitOptions {
        max_sweeps: args.max_sweeps,
        tol: args.tol,
        ..FitOptions::default()
    };
    let rank = args.rank.max(1);
    let fit_hook = move |train: &Tensor3, config: &PenaltyConfig, seed: u64| -> Result<ParafacModel> {
        let opts = FitOptions {
            seed,
            ..opts_base.clone()
        };
        let fit = multifactor(train, rank, std::slice::from_ref(config), &opts, &settings, None)?;
        Ok(fit.model)
    };
    let outcome = cv_entry_holdout(
        &tensor,
        &grid,
        args.holdout,
        args.reps,
        args.seed,
        args.jobs,
        &fit_hook,
    )?;

    let mut csv = String::from("config_id,rep,mse\n");
    for score in &outcome.scores {
        csv.push_str(&format!("{},{},{}\n", score.config_id, score.rep, score.mse));
    }
    for (config_id, mean) in outcome.mean_mse.iter().enumerate() {
        csv.push_str(&format!("{config_id},mean,{mean}\n"));
    }
    std::fs::write(&args.output, csv)?;
    println!(
        "selected config {} ({}) with mean holdout MSE {}",
        outcome.best_index, labels[outcome.best_index], outcome.mean_mse[outcome.best_index]
    );
    Ok(())
}

fn parse_multipliers(common: &BenchCommon) -> Result<CvSpec> {
    let mut cv = CvSpec::default();
    if let Some(m) = &common.multipliers {
        cv.multipliers = parse_list(m, "multiplier")?;
        if cv.multipliers.is_empty() {
            return Err(Error::InvalidArgument("--multipliers must be nonempty".into()));
        }
    }
    Ok(cv)
}

fn write_comparison_csv(path: &Path, cells: &[crate::bench::ComparisonCell]) -> Result<()> {
    let mut csv = String::from("method,scenario,mean_error,stderr,reps\n");
    for cell in cells {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.method, cell.scenario, cell.mean_error, cell.stderr, cell.reps
        ));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let settings = SolverSettings::default();
    match &args.which {
        BenchCommand::Table1(common) => {
            let cv = parse_multipliers(common)?;
            let dims = scaled_dims(common.scale);
            let scenarios: Vec<Scenario> = (1..=5)
                .map(|id| Scenario {
                    label: format!("structure-{id}"),
                    spec: SimulationSpec::single(id, dims, 1.0, 0),
                })
                .collect();
            let cells = run_comparison(
                &scenarios,
                &standard_methods(),
                &cv,
                common.reps,
                common.seed,
                common.jobs,
                &settings,
            )?;
            write_comparison_csv(&common.output, &cells)?;
            println!("wrote {} cells to {}", cells.len(), common.output.display());
        }
        BenchCommand::Table2(common) => {
            let cv = parse_multipliers(common)?;
            let dims = scaled_dims(common.scale);
            let scenarios: Vec<Scenario> = [1.25, 1.5, 1.75, 2.0, 2.25]
                .iter()
                .map(|&sigma| Scenario {
                    label: format!("structure-2 sigma={sigma}"),
                    spec: SimulationSpec::single(2, dims, sigma, 0),
                })
                .collect();
            let cells = run_comparison(
                &scenarios,
                &standard_methods(),
                &cv,
                common.reps,
                common.seed,
                common.jobs,
                &settings,
            )?;
            write_comparison_csv(&common.output, &cells)?;
            println!("wrote {} cells to {}", cells.len(), common.output.display());
        }
        BenchCommand::Table3(t3) => {
            let cv = parse_multipliers(&t3.common)?;
            let dims = scaled_dims(t3.common.scale);
            let ids: Vec<usize> = parse_list(&t3.structures, "structure")?;
            if ids.len() < 2 {
                return Err(Error::InvalidArgument(
                    "table3 needs at least two structures in the mixture".into(),
                ));
            }
            let scenarios = vec![Scenario {
                label: format!(
                    "mix-{}",
                    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
                ),
                spec: SimulationSpec {
                    structures: ids.iter().map(|&id| StructureTerm { id, weight: 1.0 }).collect(),
                    dims,
                    sigma: 1.0,
                    seed: 0,
                },
            }];
            let cells = run_comparison(
                &scenarios,
                &multifactor_methods(),
                &cv,
                t3.common.reps,
                t3.common.seed,
                t3.common.jobs,
                &settings,
            )?;
            write_comparison_csv(&t3.common.output, &cells)?;
            println!("wrote {} cells to {}", cells.len(), t3.common.output.display());
        }
        BenchCommand::Toy(toy) => {
            let sizes: Vec<usize> = parse_list(&toy.sizes, "size")?;
            let rows = toy_timing(&sizes, toy.seed, &settings)?;
            let mut csv = String::from("method,size,error,seconds\n");
            for row in &rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    row.method, row.size, row.error, row.seconds
                ));
            }
            std::fs::write(&toy.output, csv)?;
            println!("wrote {} rows to {}", rows.len(), toy.output.display());
        }
    }
    Ok(())
}
