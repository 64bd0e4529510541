//! Command-line front end: instance plumbing, fixed-point solves, cycle
//! tables, Monte Carlo experiments, and exact identity checks.
//!
//! Exit codes: 0 ok, 2 usage, 3 guard violation, 4 check failed, 5 io.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use naesat::bp_solver::{
    build_optimal_profile, enumerate_color_space, find_lambda_star, solve_fixed_point, BpError,
};
use naesat::cycle_effects::{
    delta_summability, delta_table, kappa_identity_check, pair_space, transfer_matrices,
    CycleError, TreeSpec,
};
use naesat::experiments::{
    cycle_moment_experiment, ez_experiment, overlap_experiment, poisson_experiment,
    w_limit_experiment, ExperimentError, ExperimentReport, ZVariant,
};
use naesat::frozen::{coarsen, free_decompose, FrozenError};
use naesat::instance::{Instance, InstanceError};
use naesat::messages::{
    build_messages, coloring_to_messages, messages_to_frozen, project_coloring, MsgError,
};
use naesat::solutions::{
    cluster_decompose, enumerate_solutions, write_clusters_csv, write_solutions_csv,
    SolutionsError,
};
use naesat::weights::{size_by_messages, WeightsError};

#[derive(Parser)]
#[command(name = "naesat", version, about = "Cluster geometry and cycle statistics for random regular NAE-SAT")]
struct Cli {
    /// Emit JSON instead of human-readable tables.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a random (d,k)-regular instance and write it as JSON.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate all solutions of an instance (n ≤ 30).
    Enumerate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decompose the solution set into Hamming clusters.
    Clusters {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the one-sided BP fixed point and report the profile functionals.
    Bp {
        #[command(flatten)]
        model: ModelArgs,
        /// Tilts to solve, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        lambda: Vec<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Locate λ*, the tilt where the tuple complexity Σ crosses zero.
    LambdaStar {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Tabulate cycle effects δ(ζ) and their variance weights to CSV.
    Delta {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 3)]
        lmax: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count anchored ζ-cycles of an instance.
    Cycles {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 3)]
        lmax: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo experiments; reports are JSON.
    #[command(subcommand)]
    Simulate(SimCmd),
    /// Exact identity checks; any failed row exits 4.
    #[command(subcommand)]
    Verify(VerifyCmd),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d: usize,
    /// Truncation L: free trees keep at most this many variables.
    #[arg(long = "trunc", visible_alias = "L")]
    trunc: usize,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 200_000)]
    max_iter: usize,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Cycle counts over random instances against the joint Poisson law.
    Poisson {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        lmax: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sink: SinkArgs,
    },
    /// Tilted cycle-moment ratios against 1 + δ_L over an n-grid.
    CycleMoment {
        /// Grid of variable counts, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "8,12,14")]
        ns: Vec<usize>,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long = "trunc", visible_alias = "L", default_value_t = 3)]
        trunc: usize,
        #[arg(long, value_enum, default_value_t = VariantArg::TruncTr)]
        variant: VariantArg,
        /// Literal words, comma-separated bit strings.
        #[arg(long, value_delimiter = ',', default_value = "00,01,0000")]
        zetas: Vec<String>,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sink: SinkArgs,
    },
    /// Sample mean of the exact solution count against 2^n(1−2^{1−k})^m.
    Ez {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sink: SinkArgs,
    },
    /// Draw the limit variable W and test its Poisson moment identities.
    WLimit {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long = "trunc", visible_alias = "L", default_value_t = 3)]
        trunc: usize,
        #[arg(long, default_value_t = 4)]
        lmax: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sink: SinkArgs,
    },
    /// Histogram |ρ| over uniform solution pairs.
    Overlap {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sink: SinkArgs,
    },
}

#[derive(Args)]
struct SinkArgs {
    /// Report destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Raw per-sample CSV destination.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Tr,
    TruncTr,
    Unit,
}

#[derive(Subcommand)]
enum VerifyCmd {
    /// Brute-force, message-product, and coloring-product cluster sizes.
    Sizes {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Frozen → message → coloring → message → frozen round trips.
    Bijection {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Explicit-summation identities for subtree, star, cycle, and link sums.
    Kappa {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Cycle word for the trace identity.
        #[arg(long, default_value = "00")]
        zeta: String,
        #[arg(long, default_value_t = 1e-9)]
        gap: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

enum CliError {
    Usage(String),
    Guard(String),
    Check(String),
    Io(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Guard(_) => "guard",
            CliError::Check(_) => "check",
            CliError::Io(_) => "io",
        }
    }

    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Guard(_) => 3,
            CliError::Check(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Guard(m) | CliError::Check(m) | CliError::Io(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Io(e.to_string())
    }
}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<SolutionsError> for CliError {
    fn from(e: SolutionsError) -> CliError {
        match e {
            SolutionsError::TooLarge(_) => CliError::Guard(e.to_string()),
            SolutionsError::Io(io) => CliError::Io(io.to_string()),
            SolutionsError::ExtraBits => CliError::Usage(e.to_string()),
        }
    }
}

impl From<FrozenError> for CliError {
    fn from(e: FrozenError) -> CliError {
        match e {
            FrozenError::TooManyFree(_) => CliError::Guard(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<MsgError> for CliError {
    fn from(e: MsgError) -> CliError {
        CliError::Check(e.to_string())
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> CliError {
        match e {
            WeightsError::TooLarge { .. } => CliError::Guard(e.to_string()),
            WeightsError::Msg(m) => m.into(),
            WeightsError::Frozen(f) => f.into(),
            WeightsError::Solutions(s) => s.into(),
            _ => CliError::Check(e.to_string()),
        }
    }
}

impl From<BpError> for CliError {
    fn from(e: BpError) -> CliError {
        match e {
            BpError::Explosion { .. } => CliError::Guard(e.to_string()),
            BpError::Parameter { .. } | BpError::Length { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Check(e.to_string()),
        }
    }
}

impl From<CycleError> for CliError {
    fn from(e: CycleError) -> CliError {
        match e {
            CycleError::Bp(b) => b.into(),
            CycleError::TooLarge(..) => CliError::Guard(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> CliError {
        match e {
            ExperimentError::Instance(i) => i.into(),
            ExperimentError::Solutions(s) => s.into(),
            ExperimentError::Frozen(f) => f.into(),
            ExperimentError::Weights(w) => w.into(),
            ExperimentError::Bp(b) => b.into(),
            ExperimentError::Cycle(c) => c.into(),
            ExperimentError::Io(io) => CliError::Io(io.to_string()),
            ExperimentError::Guard(..) | ExperimentError::TooFewSamples(..) => {
                CliError::Guard(e.to_string())
            }
            ExperimentError::NonpositiveFactor(..) => CliError::Check(e.to_string()),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .ok();
    }
    if let Err(e) = run(&cli) {
        eprintln!(
            "{}",
            json!({"error": e.kind(), "message": e.message()})
        );
        std::process::exit(e.code());
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(CliError::from),
        None => {
            print!("{text}");
            std::io::stdout().flush()?;
            Ok(())
        }
    }
}

fn load_instance(path: &Path) -> Result<Instance, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(Instance::parse_json(&text)?)
}

fn config_line(json_mode: bool, value: &serde_json::Value) -> String {
    if json_mode {
        String::new()
    } else {
        format!("# config: {value}\n")
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::Gen { n, d, k, seed, out } => {
            let inst = Instance::sample(*n, *d, *k, *seed)?;
            let text = inst.to_json();
            emit(out, &text)?;
            if out.is_some() {
                let cfg = json!({"command": "gen", "n": n, "d": d, "k": k, "seed": seed,
                                 "out": out.as_ref().unwrap().display().to_string()});
                println!("{}", if cli.json { cfg.to_string() } else { format!("# config: {cfg}") });
            }
            Ok(())
        }
        Cmd::Enumerate { instance, out } => {
            let inst = load_instance(instance)?;
            let sols = enumerate_solutions(&inst)?;
            let dec = cluster_decompose(&inst, &sols);
            let cfg = json!({"command": "enumerate", "instance": instance.display().to_string(),
                             "n": inst.n, "d": inst.d, "k": inst.k, "solutions": sols.len()});
            let mut text = config_line(cli.json, &cfg);
            if cli.json {
                let rows: Vec<String> = sols
                    .iter()
                    .map(|&s| naesat::solutions::format_assignment(inst.n, s))
                    .collect();
                text = format!("{}\n", json!({"config": cfg, "solutions": rows}));
            } else {
                let mut buf = Vec::new();
                write_solutions_csv(&mut buf, inst.n, &dec)?;
                text.push_str(&String::from_utf8(buf).expect("ascii"));
            }
            emit(out, &text)
        }
        Cmd::Clusters { instance, out } => {
            let inst = load_instance(instance)?;
            let sols = enumerate_solutions(&inst)?;
            let dec = cluster_decompose(&inst, &sols);
            let cfg = json!({"command": "clusters", "instance": instance.display().to_string(),
                             "n": inst.n, "solutions": sols.len(), "clusters": dec.clusters.len()});
            let mut text = config_line(cli.json, &cfg);
            if cli.json {
                text = format!("{}\n", json!({"config": cfg, "sizes": dec.sizes()}));
            } else {
                let mut buf = Vec::new();
                write_clusters_csv(&mut buf, inst.n, &dec)?;
                text.push_str(&String::from_utf8(buf).expect("ascii"));
            }
            emit(out, &text)
        }
        Cmd::Bp {
            model,
            lambda,
            solver,
        } => {
            let space = enumerate_color_space(model.k, model.d, model.trunc)?;
            let cfg = json!({"command": "bp", "k": model.k, "d": model.d, "trunc": model.trunc,
                             "lambda": lambda, "tol": solver.tol, "max_iter": solver.max_iter});
            let mut rows = Vec::new();
            let mut warm: Option<Vec<f64>> = None;
            for &lam in lambda {
                let fp = solve_fixed_point(&space, lam, solver.tol, solver.max_iter, warm.as_deref())?;
                let prof = build_optimal_profile(&space, &fp.q.w, lam)?;
                rows.push(json!({
                    "lambda": lam,
                    "s_star": prof.s_star,
                    "sigma": prof.sigma,
                    "f": prof.f_value,
                    "residual": fp.residual,
                    "iterations": fp.iterations,
                }));
                warm = Some(fp.q.w.clone());
            }
            if cli.json {
                println!("{}", json!({"config": cfg, "rows": rows}));
            } else {
                print!("{}", config_line(false, &cfg));
                println!(
                    "{:>8} {:>18} {:>18} {:>18} {:>12} {:>10}",
                    "lambda", "s_star", "sigma", "f", "residual", "iters"
                );
                for r in &rows {
                    println!(
                        "{:>8.4} {:>18.12} {:>18.12} {:>18.12} {:>12.3e} {:>10}",
                        r["lambda"].as_f64().unwrap(),
                        r["s_star"].as_f64().unwrap(),
                        r["sigma"].as_f64().unwrap(),
                        r["f"].as_f64().unwrap(),
                        r["residual"].as_f64().unwrap(),
                        r["iterations"].as_u64().unwrap(),
                    );
                }
            }
            Ok(())
        }
        Cmd::LambdaStar { model, solver } => {
            let space = enumerate_color_space(model.k, model.d, model.trunc)?;
            let ls = find_lambda_star(&space, solver.tol, solver.max_iter)?;
            let cfg = json!({"command": "lambda-star", "k": model.k, "d": model.d,
                             "trunc": model.trunc, "tol": solver.tol, "max_iter": solver.max_iter});
            if cli.json {
                println!(
                    "{}",
                    json!({"config": cfg, "result": serde_json::to_value(&ls).expect("serializable")})
                );
            } else {
                print!("{}", config_line(false, &cfg));
                println!("lambda_star = {:.12}", ls.lambda_star);
                println!("s_star      = {:.12}", ls.s_star);
                println!("sigma_star  = {:.3e}", ls.sigma_star);
                println!("c_star      = {:.12}", ls.c_star);
                println!("boundary    = {}", ls.boundary);
                println!("bracket     = [{:.6}, {:.6}]", ls.bracket.0, ls.bracket.1);
            }
            Ok(())
        }
        Cmd::Delta {
            model,
            lambda,
            lmax,
            solver,
            out,
        } => {
            let space = enumerate_color_space(model.k, model.d, model.trunc)?;
            let fp = solve_fixed_point(&space, *lambda, solver.tol, solver.max_iter, None)?;
            let ps = pair_space(&space, &fp.q.w, *lambda)?;
            let tr = transfer_matrices(&space, &ps);
            let table = delta_table(&tr, model.k, model.d, *lmax)?;
            let sums = delta_summability(&tr, model.k, model.d, *lmax)?;
            let cfg = json!({"command": "delta", "k": model.k, "d": model.d, "trunc": model.trunc,
                             "lambda": lambda, "lmax": lmax, "tol": solver.tol,
                             "max_iter": solver.max_iter, "residual": fp.residual});
            let mut text = format!("# config: {cfg}\n");
            text.push_str("zeta,l,mu,delta,mu_delta_sq\n");
            for row in &table {
                let zeta: String = row.zeta.iter().map(|&b| char::from(b'0' + b)).collect();
                text.push_str(&format!(
                    "{},{},{:.17e},{:.17e},{:.17e}\n",
                    zeta, row.l, row.mu, row.delta, row.weighted
                ));
            }
            emit(out, &text)?;
            if cli.json {
                let rows: Vec<_> = sums
                    .rows
                    .iter()
                    .map(|r| json!({"l": r.l, "sum": r.sum, "partial": r.partial, "root": r.root}))
                    .collect();
                println!("{}", json!({"config": cfg, "summability": rows}));
            } else if out.is_some() {
                for r in &sums.rows {
                    println!(
                        "l = {}: sum mu*delta^2 = {:.6e}, partial = {:.6e}, root = {:.6}",
                        r.l, r.sum, r.partial, r.root
                    );
                }
            }
            Ok(())
        }
        Cmd::Cycles {
            instance,
            lmax,
            out,
        } => {
            let inst = load_instance(instance)?;
            let counts = inst.enumerate_zeta_cycles(*lmax);
            let cfg = json!({"command": "cycles", "instance": instance.display().to_string(),
                             "lmax": lmax, "distinct_words": counts.len()});
            let mut text = config_line(cli.json, &cfg);
            if cli.json {
                let rows: Vec<_> = counts
                    .iter()
                    .map(|(z, c)| {
                        let zeta: String = z.iter().map(|&b| char::from(b'0' + b)).collect();
                        json!({"zeta": zeta, "count": c})
                    })
                    .collect();
                text = format!("{}\n", json!({"config": cfg, "counts": rows}));
            } else {
                text.push_str("zeta,l,count,mu\n");
                for (z, c) in &counts {
                    let zeta: String = z.iter().map(|&b| char::from(b'0' + b)).collect();
                    text.push_str(&format!(
                        "{},{},{},{:.12e}\n",
                        zeta,
                        z.len() / 2,
                        c,
                        naesat::instance::mu(z.len() / 2, inst.k, inst.d)
                    ));
                }
            }
            emit(out, &text)
        }
        Cmd::Simulate(sim) => run_simulate(cli, sim),
        Cmd::Verify(v) => run_verify(cli, v),
    }
}

fn parse_zeta(text: &str) -> Result<Vec<u8>, CliError> {
    let zeta: Vec<u8> = text
        .chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            _ => Err(CliError::Usage(format!("bad literal word {text:?}"))),
        })
        .collect::<Result<_, _>>()?;
    if zeta.is_empty() || zeta.len() % 2 != 0 {
        return Err(CliError::Usage(format!(
            "literal word {text:?} must have positive even length"
        )));
    }
    Ok(zeta)
}

/// Write the report (and raw CSV), then gate the exit code on its z-scores.
fn finish_report(
    cli: &Cli,
    mut report: ExperimentReport,
    sink: &SinkArgs,
    raw_buf: Option<Vec<u8>>,
    gate: bool,
) -> Result<(), CliError> {
    if let (Some(path), Some(buf)) = (&sink.raw, raw_buf) {
        fs::write(path, buf)?;
        report.raw_path = Some(path.display().to_string());
    }
    let text = format!("{}\n", report.to_json());
    emit(&sink.out, &text)?;
    if !cli.json && sink.out.is_some() {
        println!(
            "{}: max |z| = {:.3} over {} statistics",
            report.experiment,
            report.max_abs_z(),
            report.statistics.len()
        );
    }
    if gate && report.max_abs_z() > 4.0 {
        return Err(CliError::Check(format!(
            "{}: max |z| = {:.3} exceeds 4",
            report.experiment,
            report.max_abs_z()
        )));
    }
    Ok(())
}

fn run_simulate(cli: &Cli, sim: &SimCmd) -> Result<(), CliError> {
    match sim {
        SimCmd::Poisson {
            n,
            d,
            k,
            samples,
            lmax,
            seed,
            sink,
        } => {
            let mut raw_buf = sink.raw.as_ref().map(|_| Vec::new());
            let report = poisson_experiment(
                *n,
                *d,
                *k,
                *samples,
                *lmax,
                *seed,
                raw_buf.as_mut().map(|b| b as &mut dyn Write),
            )?;
            finish_report(cli, report, sink, raw_buf, true)
        }
        SimCmd::CycleMoment {
            ns,
            d,
            k,
            lambda,
            trunc,
            variant,
            zetas,
            samples,
            seed,
            sink,
        } => {
            let zetas: Vec<Vec<u8>> = zetas
                .iter()
                .map(|z| parse_zeta(z))
                .collect::<Result<_, _>>()?;
            let variant = match variant {
                VariantArg::Tr => ZVariant::Tr,
                VariantArg::TruncTr => ZVariant::TruncTr,
                VariantArg::Unit => ZVariant::Unit,
            };
            let mut raw_buf = sink.raw.as_ref().map(|_| Vec::new());
            let out = cycle_moment_experiment(
                ns,
                *d,
                *k,
                *lambda,
                *trunc,
                variant,
                &zetas,
                *samples,
                *seed,
                raw_buf.as_mut().map(|b| b as &mut dyn Write),
            )?;
            // trend is diagnostic-grade: always exit 0 on a written report
            finish_report(cli, out.report, sink, raw_buf, false)
        }
        SimCmd::Ez {
            n,
            d,
            k,
            samples,
            seed,
            sink,
        } => {
            let mut raw_buf = sink.raw.as_ref().map(|_| Vec::new());
            let report = ez_experiment(
                *n,
                *d,
                *k,
                *samples,
                *seed,
                raw_buf.as_mut().map(|b| b as &mut dyn Write),
            )?;
            finish_report(cli, report, sink, raw_buf, true)
        }
        SimCmd::WLimit {
            k,
            d,
            lambda,
            trunc,
            lmax,
            samples,
            seed,
            sink,
        } => {
            let mut raw_buf = sink.raw.as_ref().map(|_| Vec::new());
            let report = w_limit_experiment(
                *k,
                *d,
                *lambda,
                *trunc,
                *lmax,
                *samples,
                *seed,
                raw_buf.as_mut().map(|b| b as &mut dyn Write),
            )?;
            finish_report(cli, report, sink, raw_buf, true)
        }
        SimCmd::Overlap {
            n,
            d,
            k,
            samples,
            pairs,
            seed,
            sink,
        } => {
            let mut raw_buf = sink.raw.as_ref().map(|_| Vec::new());
            let report = overlap_experiment(
                *n,
                *d,
                *k,
                *samples,
                *pairs,
                *seed,
                raw_buf.as_mut().map(|b| b as &mut dyn Write),
            )?;
            finish_report(cli, report, sink, raw_buf, false)
        }
    }
}

fn run_verify(cli: &Cli, v: &VerifyCmd) -> Result<(), CliError> {
    match v {
        VerifyCmd::Sizes { instance } => {
            let inst = load_instance(instance)?;
            let sols = enumerate_solutions(&inst)?;
            let configs = distinct_coarsenings(&inst)?;
            let cfg = json!({"command": "verify sizes", "instance": instance.display().to_string(),
                             "solutions": sols.len(), "coarsenings": configs.len()});
            let mut rows = Vec::new();
            let mut all_ok = true;
            let mut skipped = 0usize;
            for (id, frz) in configs.iter().enumerate() {
                if free_decompose(&inst, frz).has_free_cycle() {
                    skipped += 1;
                    continue;
                }
                let brute = naesat::frozen::brute_size(&inst, frz)? as f64;
                let sizes = size_by_messages(&inst, frz)?;
                let trees: f64 = sizes.tree_weights.iter().product();
                let ok = agree(brute, sizes.global)
                    && agree(brute, sizes.coloring)
                    && agree(brute, trees);
                all_ok &= ok;
                rows.push(json!({
                    "cluster": id,
                    "brute": brute,
                    "messages": sizes.global,
                    "colorings": sizes.coloring,
                    "trees": trees,
                    "match": ok,
                }));
            }
            print_verify(cli, &cfg, &rows, skipped)?;
            if all_ok {
                Ok(())
            } else {
                Err(CliError::Check("size products disagree".into()))
            }
        }
        VerifyCmd::Bijection { instance } => {
            let inst = load_instance(instance)?;
            let configs = distinct_coarsenings(&inst)?;
            let cfg = json!({"command": "verify bijection",
                             "instance": instance.display().to_string(),
                             "coarsenings": configs.len()});
            let mut rows = Vec::new();
            let mut all_ok = true;
            let mut skipped = 0usize;
            for (id, frz) in configs.iter().enumerate() {
                if free_decompose(&inst, frz).has_free_cycle() {
                    skipped += 1;
                    continue;
                }
                let msg = build_messages(&inst, frz)?;
                let colors = project_coloring(&msg)?;
                let msg2 = coloring_to_messages(&inst, &colors)?;
                let back = messages_to_frozen(&inst, &msg2);
                let ok = msg2 == msg && back == *frz;
                all_ok &= ok;
                rows.push(json!({"cluster": id, "match": ok}));
            }
            print_verify(cli, &cfg, &rows, skipped)?;
            if all_ok {
                Ok(())
            } else {
                Err(CliError::Check("round trip is not the identity".into()))
            }
        }
        VerifyCmd::Kappa {
            model,
            lambda,
            zeta,
            gap,
            solver,
        } => {
            let zeta = parse_zeta(zeta)?;
            let space = enumerate_color_space(model.k, model.d, model.trunc)?;
            let fp = solve_fixed_point(&space, *lambda, solver.tol, solver.max_iter, None)?;
            let ps = pair_space(&space, &fp.q.w, *lambda)?;
            let tr = transfer_matrices(&space, &ps);
            let trees: Vec<(&str, TreeSpec)> = vec![
                ("cut", TreeSpec::Cut),
                ("star", TreeSpec::Var(vec![TreeSpec::Cut; model.d - 1])),
                (
                    "depth2",
                    TreeSpec::Var(
                        std::iter::once(TreeSpec::Clause(vec![TreeSpec::Cut; model.k - 1]))
                            .chain(std::iter::repeat(TreeSpec::Cut).take(model.d - 2))
                            .collect(),
                    ),
                ),
            ];
            let cfg = json!({"command": "verify kappa", "k": model.k, "d": model.d,
                             "trunc": model.trunc, "lambda": lambda,
                             "zeta": zeta.iter().map(|b| b.to_string()).collect::<String>(),
                             "gap": gap});
            let mut rows = Vec::new();
            let mut all_ok = true;
            for (name, tree) in &trees {
                let rep = kappa_identity_check(&space, &ps, &tr, tree, &zeta)?;
                let worst = rep
                    .kappa0_gap
                    .max(rep.star_gap)
                    .max(rep.cycle_gap)
                    .max(rep.link_gap)
                    .max(rep.conclusion_gap);
                let ok = worst <= *gap;
                all_ok &= ok;
                rows.push(json!({
                    "tree": name,
                    "vars": rep.tree_vars,
                    "clauses": rep.tree_clauses,
                    "kappa0_gap": rep.kappa0_gap,
                    "star_gap": rep.star_gap,
                    "cycle_gap": rep.cycle_gap,
                    "link_gap": rep.link_gap,
                    "conclusion_gap": rep.conclusion_gap,
                    "match": ok,
                }));
            }
            print_verify(cli, &cfg, &rows, 0)?;
            if all_ok {
                Ok(())
            } else {
                Err(CliError::Check(format!("a kappa identity exceeds {gap:.1e}")))
            }
        }
    }
}

/// Size agreement: integer after rounding and 1e−6 relative before it.
fn agree(brute: f64, product: f64) -> bool {
    product.round() == brute && (product - brute).abs() <= 1e-6 * brute.max(1.0)
}

fn distinct_coarsenings(inst: &Instance) -> Result<Vec<naesat::frozen::FrozenConfig>, CliError> {
    let mut out: Vec<naesat::frozen::FrozenConfig> = Vec::new();
    for x in enumerate_solutions(inst)? {
        let frz = coarsen(inst, x)?;
        if !out.contains(&frz) {
            out.push(frz);
        }
    }
    Ok(out)
}

fn print_verify(
    cli: &Cli,
    cfg: &serde_json::Value,
    rows: &[serde_json::Value],
    skipped: usize,
) -> Result<(), CliError> {
    if cli.json {
        println!(
            "{}",
            json!({"config": cfg, "rows": rows, "skipped_cyclic": skipped})
        );
    } else {
        print!("{}", config_line(false, cfg));
        for row in rows {
            println!("{row}");
        }
        if skipped > 0 {
            println!("# skipped {skipped} configurations with free cycles");
        }
        let ok = rows
            .iter()
            .filter(|r| r["match"].as_bool() == Some(true))
            .count();
        println!("# {ok}/{} rows match", rows.len());
    }
    Ok(())
}
