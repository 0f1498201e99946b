//! `tot`: batch front door to the tot-core solvers.
//!
//! Every subcommand prints one JSON object on stdout. Exit codes: 0 success,
//! 1 malformed input, 2 contract violation, 3 non-convergence.

mod input;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tot_core::lp::{max_min_support_entry, solve_exact_tot, LpOptions, SCALABILITY_THRESHOLD};
use tot_core::rounding::movement_bound;
use tot_core::{
    approx_tot_detailed, entropic_bracket, entropic_tot, round_to_polytope, set_distance,
    sinkhorn_scale, validate_cost, ApproxOptions, SinkhornConfig, SinkhornTrace, Solver, Tensor,
    TotCertificate, TotError, Variant,
};

use input::{load_marginals, load_measures, load_tensor, lp_cap, write_file, CliError};

#[derive(Parser)]
#[command(
    name = "tot",
    version,
    about = "Multi-marginal optimal transport via tensor scaling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact optimum by the simplex oracle.
    SolveExact {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
        /// Write the optimal plan here.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// Entropic objective at fixed λ and ε, with its bracket.
    SolveEntropic {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        /// JSON-lines scaling trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// δ-approximate optimum with a feasible plan and certificate.
    Approx {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Greedy Sinkhorn scaling of a tensor toward the marginals.
    Scale {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
        #[arg(long)]
        epsilon: f64,
        /// Use the support-aware residual for tensors with zero entries.
        #[arg(long)]
        nonnegative: bool,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Round a near-feasible plan into the transport polytope.
    Round {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance between two lists of measures under a (weakly) bisymmetric cost.
    SetDistance {
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverKind::Exact)]
        solver: SolverKind,
        /// Accuracy for the entropic solver.
        #[arg(long, default_value_t = 0.01)]
        delta: f64,
    },
    /// Symmetry and metric checks on a cost tensor.
    ValidateCost {
        #[arg(long)]
        cost: PathBuf,
    },
    /// Whether some plan has exactly the zero pattern of the tensor.
    Scalable {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        marginals: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverKind {
    Exact,
    Entropic,
}

#[derive(Serialize)]
struct ExactOutput {
    value: f64,
    duality_gap: f64,
    pivots: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_file: Option<String>,
}

#[derive(Serialize)]
struct EntropicOutput {
    f_lambda: f64,
    bracket: [f64; 2],
    transport_cost: f64,
    lambda: f64,
    epsilon: f64,
    k_stop: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_file: Option<String>,
}

#[derive(Serialize)]
struct ApproxOutput {
    #[serde(flatten)]
    certificate: TotCertificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_file: Option<String>,
}

#[derive(Serialize)]
struct ScaleOutput {
    k_stop: Option<usize>,
    bound: f64,
    eta: f64,
    mass: f64,
    final_residual_l1: f64,
    final_marginal_l1: f64,
    scaling: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tensor_file: Option<String>,
}

#[derive(Serialize)]
struct RoundOutput {
    movement_l1: f64,
    movement_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_file: Option<String>,
}

#[derive(Serialize)]
struct ScalableOutput {
    scalable: bool,
    min_support_entry: Option<f64>,
    threshold: f64,
}

fn core(command: &'static str) -> impl Fn(TotError) -> CliError {
    move |source| CliError::Core { command, source }
}

fn lp_options() -> Result<LpOptions, CliError> {
    let mut opts = LpOptions::default();
    if let Some(cap) = lp_cap()? {
        opts.max_variables = cap;
    }
    Ok(opts)
}

fn save_tensor(path: &Option<PathBuf>, t: &Tensor) -> Result<Option<String>, CliError> {
    match path {
        Some(p) => {
            write_file(p, &t.to_json())?;
            Ok(Some(p.display().to_string()))
        }
        None => Ok(None),
    }
}

fn save_trace(path: &Path, trace: &SinkhornTrace) -> Result<(), CliError> {
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).expect("writing to memory");
    write_file(path, &String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Write the trace carried by a non-convergence error before reporting it.
fn trace_on_failure(path: &Option<PathBuf>, command: &'static str, e: TotError) -> CliError {
    if let (Some(p), TotError::NonConvergence { trace, .. }) = (path, &e) {
        if let Err(io) = save_trace(p, trace) {
            return io;
        }
    }
    CliError::Core { command, source: e }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("output types serialize")
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::SolveExact {
            cost,
            marginals,
            plan_out,
        } => {
            let c = load_tensor(&cost)?;
            let p = load_marginals(&marginals)?;
            let sol = solve_exact_tot(&c, &p, &lp_options()?).map_err(core("solve-exact"))?;
            Ok(to_json(&ExactOutput {
                value: sol.value,
                duality_gap: sol.lp.duality_gap,
                pivots: sol.lp.pivots,
                plan_file: save_tensor(&plan_out, &sol.plan)?,
            }))
        }
        Command::SolveEntropic {
            cost,
            marginals,
            lambda,
            epsilon,
            max_iter,
            plan_out,
            trace,
        } => {
            let c = load_tensor(&cost)?;
            let p = load_marginals(&marginals)?;
            let sol = entropic_tot(&c, &p, lambda, epsilon, max_iter)
                .map_err(|e| trace_on_failure(&trace, "solve-entropic", e))?;
            if let Some(t) = &trace {
                save_trace(t, &sol.scaling.trace)?;
            }
            let (lo, hi) = entropic_bracket(sol.f_lambda, lambda, c.side(), c.order());
            Ok(to_json(&EntropicOutput {
                f_lambda: sol.f_lambda,
                bracket: [lo, hi],
                transport_cost: c.inner(&sol.plan).map_err(core("solve-entropic"))?,
                lambda,
                epsilon,
                k_stop: sol.scaling.trace.k_stop,
                plan_file: save_tensor(&plan_out, &sol.plan)?,
            }))
        }
        Command::Approx {
            cost,
            marginals,
            delta,
            lambda,
            epsilon,
            max_iter,
            plan_out,
            trace,
        } => {
            let c = load_tensor(&cost)?;
            let p = load_marginals(&marginals)?;
            let opts = ApproxOptions {
                lambda,
                epsilon,
                max_iter,
            };
            let out = approx_tot_detailed(&c, &p, delta, &opts)
                .map_err(|e| trace_on_failure(&trace, "approx", e))?;
            if let (Some(t), Some(tr)) = (&trace, &out.trace) {
                save_trace(t, tr)?;
            }
            Ok(to_json(&ApproxOutput {
                plan_file: save_tensor(&plan_out, &out.plan)?,
                certificate: out.certificate,
            }))
        }
        Command::Scale {
            tensor,
            marginals,
            epsilon,
            nonnegative,
            max_iter,
            out,
            trace,
        } => {
            let a = load_tensor(&tensor)?;
            let p = load_marginals(&marginals)?;
            let variant = if nonnegative {
                Variant::NonnegativeSupport
            } else {
                Variant::Positive
            };
            let mut cfg = SinkhornConfig::new(epsilon)
                .map_err(core("scale"))?
                .with_variant(variant);
            cfg.max_iter = max_iter;
            let res =
                sinkhorn_scale(&a, &p, &cfg).map_err(|e| trace_on_failure(&trace, "scale", e))?;
            if let Some(t) = &trace {
                save_trace(t, &res.trace)?;
            }
            let tr = &res.trace;
            Ok(to_json(&ScaleOutput {
                k_stop: tr.k_stop,
                bound: tr.bound,
                eta: tr.eta,
                mass: tr.mass,
                final_residual_l1: tr.final_residual_l1,
                final_marginal_l1: tr.final_marginal_l1,
                scaling: res.scaling.vectors().to_vec(),
                tensor_file: save_tensor(&out, &res.tensor)?,
            }))
        }
        Command::Round {
            plan,
            marginals,
            out,
        } => {
            let f = load_tensor(&plan)?;
            let p = load_marginals(&marginals)?;
            let b = round_to_polytope(&f, &p).map_err(core("round"))?;
            Ok(to_json(&RoundOutput {
                movement_l1: b.l1_distance(&f).map_err(core("round"))?,
                movement_bound: movement_bound(&f, &p).map_err(core("round"))?,
                plan_file: save_tensor(&out, &b)?,
            }))
        }
        Command::SetDistance {
            cost,
            left,
            right,
            solver,
            delta,
        } => {
            let c = load_tensor(&cost)?;
            let p1 = load_measures(&left)?;
            let p2 = load_measures(&right)?;
            let solver = match solver {
                SolverKind::Exact => Solver::Exact(lp_options()?),
                SolverKind::Entropic => Solver::Entropic { delta },
            };
            let res = set_distance(&c, &p1, &p2, solver).map_err(core("set-distance"))?;
            Ok(to_json(&res))
        }
        Command::ValidateCost { cost } => {
            let c = load_tensor(&cost)?;
            Ok(to_json(&validate_cost(&c).map_err(core("validate-cost"))?))
        }
        Command::Scalable { tensor, marginals } => {
            let a = load_tensor(&tensor)?;
            let p = load_marginals(&marginals)?;
            let t = max_min_support_entry(&a, &p, &lp_options()?).map_err(core("scalable"))?;
            Ok(to_json(&ScalableOutput {
                scalable: t.is_some_and(|t| t > SCALABILITY_THRESHOLD),
                min_support_entry: t,
                threshold: SCALABILITY_THRESHOLD,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(json) => {
            println!("{json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
