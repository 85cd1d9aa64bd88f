//! Experiment runner: configures a process, an estimation mode, and an
//! estimator, runs the requested reconstruction, and writes the
//! machine-readable artifacts.  All randomness derives from one seed, so
//! identical invocations produce byte-identical outputs.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use seqpt::channels::{loss_operator, make_process, Channel, ProcessName};
use seqpt::designs::{mub_design, StateDesign};
use seqpt::encoding::{derive_seed, QuditEmbedding, ReadoutModel};
use seqpt::opbasis::{bipartite_factors, standard_basis};
use seqpt::physicality::{process_fidelity, project_physical, ProjectionReport};
use seqpt::qmath::eps;
use seqpt::tomography::{
    analytic_chi, full_reconstruct, selective_reconstruct, survival_trace_target, Estimator,
    Mode, ReconstructionJson, SelectiveOptions, ShotPlan, SqptEngine,
};

#[derive(Parser)]
#[command(
    name = "seqpt",
    about = "Selective and efficient quantum process tomography",
    version
)]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the measurement state design for a dimension as JSON.
    Designs(DesignsArgs),
    /// Reconstruct every process-matrix element of one process.
    Run(RunArgs),
    /// Selective single-shot estimation of chosen elements.
    Selective(SelectiveArgs),
    /// Side-by-side SEQPT-TP / SEQPT-NTP / SQPT fidelity table.
    Compare(CompareArgs),
}

#[derive(Args, Clone, Default)]
struct ProcessOpts {
    /// System dimension (supported: primes 2,3,5,7 and the pair product 6).
    #[arg(long)]
    dim: Option<usize>,
    /// Process name: id | h01 | h12 (d=3), id | phase | swap25 (d=6).
    #[arg(long)]
    process: Option<String>,
    /// Loss probability r on the process's lossy levels.
    #[arg(long)]
    loss: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct EstimatorOpts {
    /// Estimator: exact | shots | shots:N.
    #[arg(long)]
    estimator: Option<String>,
    /// Shots per circuit (with --estimator shots).
    #[arg(long)]
    shots: Option<u64>,
    /// Aggregate readout fidelity of the register (e.g. 0.938).
    #[arg(long)]
    readout_fidelity: Option<f64>,
    /// Apply inverse-confusion readout mitigation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    mitigate: Option<bool>,
    /// Root seed; falls back to config file, then $SEQPT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DesignsArgs {
    #[arg(long)]
    dim: Option<usize>,
    /// Output directory; omitted means stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    process: ProcessOpts,
    /// Reconstruction mode: tp | ntp | bipartite-tp | bipartite-ntp.
    #[arg(long)]
    mode: Option<String>,
    #[command(flatten)]
    estimator: EstimatorOpts,
    /// Output directory for reconstruction.json and projection.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectiveArgs {
    #[command(flatten)]
    process: ProcessOpts,
    #[arg(long)]
    mode: Option<String>,
    /// Elements to estimate: nonzero | all | "i,j;i,j;…".
    #[arg(long)]
    elements: Option<String>,
    /// Sampling steps per repetition.
    #[arg(long)]
    m: Option<usize>,
    /// Number of repetitions (one CSV each).
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    estimator: EstimatorOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    process: ProcessOpts,
    #[command(flatten)]
    estimator: EstimatorOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Structured config file: every field optional, flags override.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    dim: Option<usize>,
    process: Option<String>,
    loss: Option<f64>,
    mode: Option<String>,
    estimator: Option<String>,
    shots: Option<u64>,
    readout_fidelity: Option<f64>,
    mitigate: Option<bool>,
    elements: Option<String>,
    m: Option<usize>,
    reps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| format!("cannot read config {}: {}", p.display(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| format!("invalid config {}: {}", p.display(), e))
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file)
        .or_else(|| std::env::var("SEQPT_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

/// Resolved estimator settings shared by the reconstruction subcommands.
struct ResolvedEstimator {
    estimator: Estimator,
    readout: Option<ReadoutModel>,
    mitigate: bool,
    seed: u64,
}

fn resolve_estimator(
    opts: &EstimatorOpts,
    file: &FileConfig,
    dim: usize,
) -> Result<ResolvedEstimator, String> {
    let seed = resolve_seed(opts.seed, file.seed);
    let mitigate = opts.mitigate.or(file.mitigate).unwrap_or(false);
    let readout = match opts.readout_fidelity.or(file.readout_fidelity) {
        None => None,
        Some(f) => {
            let emb = QuditEmbedding::for_dim(dim).map_err(|e| e.to_string())?;
            Some(
                ReadoutModel::from_aggregate_fidelity(f, emb.n_qubits())
                    .map_err(|e| e.to_string())?,
            )
        }
    };
    let spec = opts
        .estimator
        .clone()
        .or_else(|| file.estimator.clone())
        .unwrap_or_else(|| "exact".to_string());
    let estimator = match spec.as_str() {
        "exact" => Estimator::Exact,
        other => {
            let from_spec = match other.strip_prefix("shots") {
                Some("") => None,
                Some(rest) => match rest.strip_prefix(':') {
                    Some(n) => Some(
                        n.parse::<u64>()
                            .map_err(|_| format!("bad shot count in '{}'", other))?,
                    ),
                    None => return Err(format!("unknown estimator '{}'", other)),
                },
                None => return Err(format!("unknown estimator '{}'", other)),
            };
            // Explicit --shots wins over shots:N, which wins over config.
            let shots = opts.shots.or(from_spec).or(file.shots).unwrap_or(8192);
            Estimator::Shots(ShotPlan {
                shots,
                readout: readout.clone(),
                mitigate,
                seed,
            })
        }
    };
    Ok(ResolvedEstimator { estimator, readout, mitigate, seed })
}

struct ResolvedProcess {
    dim: usize,
    name: ProcessName,
    channel: Channel,
}

fn resolve_process(opts: &ProcessOpts, file: &FileConfig) -> Result<ResolvedProcess, String> {
    let dim = opts.dim.or(file.dim).unwrap_or(3);
    let name_str = opts
        .process
        .clone()
        .or_else(|| file.process.clone())
        .ok_or_else(|| "missing --process".to_string())?;
    let name = ProcessName::from_str(&name_str).map_err(|e| e.to_string())?;
    let loss = opts.loss.or(file.loss).unwrap_or(0.0);
    let channel = make_process(name, dim, loss).map_err(|e| e.to_string())?;
    Ok(ResolvedProcess { dim, name, channel })
}

fn resolve_mode(flag: Option<&str>, file: &FileConfig, dim: usize) -> Result<Mode, String> {
    let spec = flag
        .map(str::to_string)
        .or_else(|| file.mode.clone())
        .unwrap_or_else(|| "ntp".to_string());
    let mode = Mode::from_str(&spec).map_err(|e| e.to_string())?;
    mode.canonical_for_dim(dim).map_err(|e| e.to_string())
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {}", dir.display(), e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| format!("cannot write {}: {}", path.display(), e))
}

/// Prints a line to stdout, exiting quietly if the consumer closed the
/// pipe (e.g. `seqpt designs | head`).
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{}", line).is_err() {
        std::process::exit(0);
    }
}

fn result_line(process: ProcessName, mode: Mode, circuits: usize, shots: u64, fidelity: f64) {
    emit(&format!(
        "RESULT process={} mode={} circuits={} shots={} fidelity={:.6}",
        process, mode, circuits, shots, fidelity
    ));
}

// ---------------------------------------------------------------------
// designs
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct DesignStateJson {
    j: usize,
    m: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize)]
struct DesignJson {
    dim: usize,
    kind: &'static str,
    n_bases: usize,
    states: Vec<DesignStateJson>,
}

#[derive(Serialize)]
struct ProductDesignJson {
    dim: usize,
    kind: &'static str,
    left: DesignJson,
    right: DesignJson,
}

fn design_json(design: &StateDesign) -> DesignJson {
    let mut states = Vec::with_capacity(design.len());
    for flat in 0..design.len() {
        let (j, m) = design.label(flat);
        let amp = design.state(j, m).amplitudes();
        states.push(DesignStateJson {
            j,
            m,
            re: amp.iter().map(|a| a.re).collect(),
            im: amp.iter().map(|a| a.im).collect(),
        });
    }
    DesignJson { dim: design.dim(), kind: "mub", n_bases: design.n_bases(), states }
}

fn cmd_designs(args: &DesignsArgs, file: &FileConfig) -> Result<(), String> {
    let dim = args.dim.or(file.dim).unwrap_or(3);
    let text = match bipartite_factors(dim) {
        Some((d1, d2)) => {
            let left = mub_design(d1).map_err(|e| e.to_string())?;
            let right = mub_design(d2).map_err(|e| e.to_string())?;
            let json = ProductDesignJson {
                dim,
                kind: "product",
                left: design_json(&left),
                right: design_json(&right),
            };
            serde_json::to_string_pretty(&json).expect("serializable")
        }
        None => {
            let design = mub_design(dim).map_err(|e| e.to_string())?;
            serde_json::to_string_pretty(&design_json(&design)).expect("serializable")
        }
    };
    if let Some(dir) = args.out.as_deref().or(file.out.as_deref()) {
        write_artifact(dir, "designs.json", &text)?;
    }
    emit(&text);
    Ok(())
}

// ---------------------------------------------------------------------
// run
// ---------------------------------------------------------------------

/// Runs one full reconstruction and writes its artifacts; returns the
/// RESULT fields and whether the projection converged.
fn reconstruct_and_project(
    proc_: &ResolvedProcess,
    mode: Mode,
    estimator: &Estimator,
) -> Result<(ReconstructionJson, ProjectionReport, f64), String> {
    let basis = standard_basis(proc_.dim);
    let p_true = loss_operator(&proc_.channel, &basis).map_err(|e| e.to_string())?;
    let result = full_reconstruct(&proc_.channel, mode, &p_true, estimator)
        .map_err(|e| e.to_string())?;
    let target = if mode.is_tp() { 1.0 } else { survival_trace_target(&p_true) };
    let (projected, report) =
        project_physical(&result.chi_raw, target, eps::PROJ_TOL, eps::PROJ_MAX_ITER)
            .map_err(|e| e.to_string())?;
    let oracle = analytic_chi(&proc_.channel).map_err(|e| e.to_string())?;
    let fidelity = process_fidelity(&projected, &oracle).map_err(|e| e.to_string())?;
    Ok((ReconstructionJson::from_result(&result, Some(fidelity)), report, fidelity))
}

fn cmd_run(args: &RunArgs, file: &FileConfig) -> Result<bool, String> {
    let proc_ = resolve_process(&args.process, file)?;
    let mode = resolve_mode(args.mode.as_deref(), file, proc_.dim)?;
    let est = resolve_estimator(&args.estimator, file, proc_.dim)?;
    let (json, report, fidelity) = reconstruct_and_project(&proc_, mode, &est.estimator)?;
    let out = args
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("seqpt-out"));
    write_artifact(
        &out,
        "reconstruction.json",
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )?;
    write_artifact(
        &out,
        "projection.json",
        &serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    result_line(proc_.name, mode, json.circuits_executed, json.shots_total, fidelity);
    if !report.converged {
        eprintln!(
            "projection did not converge: residual {} after {} iterations",
            report.final_residual, report.iterations
        );
    }
    Ok(report.converged)
}

// ---------------------------------------------------------------------
// selective
// ---------------------------------------------------------------------

fn parse_elements(
    spec: &str,
    oracle: &seqpt::qmath::ComplexMatrix,
) -> Result<Vec<(usize, usize)>, String> {
    let dd = oracle.rows();
    match spec {
        "nonzero" => {
            let mut elems = Vec::new();
            for i in 0..dd {
                for j in 0..dd {
                    if oracle.get(i, j).norm() > 1e-9 {
                        elems.push((i, j));
                    }
                }
            }
            Ok(elems)
        }
        "all" => {
            let mut elems = Vec::new();
            for i in 0..dd {
                for j in 0..dd {
                    elems.push((i, j));
                }
            }
            Ok(elems)
        }
        other => {
            let mut elems = Vec::new();
            for pair in other.split(';') {
                let mut it = pair.split(',');
                let i = it
                    .next()
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .ok_or_else(|| format!("bad element pair '{}'", pair))?;
                let j = it
                    .next()
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .ok_or_else(|| format!("bad element pair '{}'", pair))?;
                if it.next().is_some() {
                    return Err(format!("bad element pair '{}'", pair));
                }
                elems.push((i, j));
            }
            Ok(elems)
        }
    }
}

fn cmd_selective(args: &SelectiveArgs, file: &FileConfig) -> Result<bool, String> {
    let proc_ = resolve_process(&args.process, file)?;
    let mode = resolve_mode(args.mode.as_deref(), file, proc_.dim)?;
    let est = resolve_estimator(&args.estimator, file, proc_.dim)?;
    let basis = standard_basis(proc_.dim);
    let p_true = loss_operator(&proc_.channel, &basis).map_err(|e| e.to_string())?;
    let oracle = analytic_chi(&proc_.channel).map_err(|e| e.to_string())?;
    let spec = args
        .elements
        .clone()
        .or_else(|| file.elements.clone())
        .unwrap_or_else(|| "nonzero".to_string());
    let elements = parse_elements(&spec, &oracle)?;
    let steps = args.m.or(file.m).unwrap_or(4000);
    let reps = args.reps.or(file.reps).unwrap_or(1);
    if reps == 0 {
        return Err("reps must be positive".to_string());
    }
    let out = args
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("seqpt-out"));

    let mut shots_total = 0u64;
    let mut final_fidelities = Vec::with_capacity(reps);
    let mut last = None;
    for rep in 0..reps {
        let opts = SelectiveOptions {
            elements: elements.clone(),
            steps,
            seed: derive_seed(est.seed, "rep", rep as u64),
            readout: est.readout.clone(),
            mitigate: est.mitigate,
        };
        let series = selective_reconstruct(&proc_.channel, mode, &p_true, &oracle, &opts)
            .map_err(|e| e.to_string())?;
        let mut csv = String::from("m,fidelity\n");
        for (k, f) in series.fidelities.iter().enumerate() {
            let _ = writeln!(csv, "{},{:.9}", k + 1, f);
        }
        write_artifact(&out, &format!("selective_rep{}.csv", rep), &csv)?;
        shots_total += series.result.shots_total;
        final_fidelities.push(*series.fidelities.last().expect("steps >= 1"));
        last = Some(series);
    }
    let last = last.expect("reps >= 1");
    let json = ReconstructionJson::from_result(
        &last.result,
        Some(*final_fidelities.last().expect("nonempty")),
    );
    write_artifact(
        &out,
        "reconstruction.json",
        &serde_json::to_string_pretty(&json).expect("serializable"),
    )?;
    write_artifact(
        &out,
        "projection.json",
        &serde_json::to_string_pretty(&last.projection).expect("serializable"),
    )?;
    let mean_final = final_fidelities.iter().sum::<f64>() / final_fidelities.len() as f64;
    result_line(
        proc_.name,
        mode,
        last.result.circuits_executed,
        shots_total,
        mean_final,
    );
    if !last.projection.converged {
        eprintln!("final projection did not converge");
    }
    Ok(last.projection.converged)
}

// ---------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct CompareRow {
    process: String,
    loss: f64,
    seqpt_tp: f64,
    seqpt_ntp: f64,
    sqpt: f64,
}

fn cmd_compare(args: &CompareArgs, file: &FileConfig) -> Result<bool, String> {
    let dim = args.process.dim.or(file.dim).unwrap_or(3);
    let loss = args.process.loss.or(file.loss).unwrap_or(0.0);
    let est = resolve_estimator(&args.estimator, file, dim)?;
    let names: Vec<ProcessName> = match args.process.process.clone().or_else(|| file.process.clone())
    {
        Some(s) => vec![ProcessName::from_str(&s).map_err(|e| e.to_string())?],
        None => ProcessName::for_dim(dim).to_vec(),
    };
    if names.is_empty() {
        return Err(format!("no library processes defined for dim {}", dim));
    }
    let basis = standard_basis(dim);
    let sqpt = SqptEngine::new(dim).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    emit(&format!(
        "{:<10} {:>10} {:>10} {:>10}",
        "process", "seqpt-tp", "seqpt-ntp", "sqpt"
    ));
    for name in names {
        let ch = make_process(name, dim, loss).map_err(|e| e.to_string())?;
        let p_true = loss_operator(&ch, &basis).map_err(|e| e.to_string())?;
        let oracle = analytic_chi(&ch).map_err(|e| e.to_string())?;
        let target = survival_trace_target(&p_true);
        let score = |chi_raw: &seqpt::qmath::ComplexMatrix,
                     trace_target: f64|
         -> Result<f64, String> {
            let (projected, _) =
                project_physical(chi_raw, trace_target, eps::PROJ_TOL, eps::PROJ_MAX_ITER)
                    .map_err(|e| e.to_string())?;
            process_fidelity(&projected, &oracle).map_err(|e| e.to_string())
        };
        let tp = full_reconstruct(&ch, Mode::Tp, &p_true, &est.estimator)
            .map_err(|e| e.to_string())?;
        let f_tp = score(&tp.chi_raw, 1.0)?;
        let ntp = full_reconstruct(&ch, Mode::Ntp, &p_true, &est.estimator)
            .map_err(|e| e.to_string())?;
        let f_ntp = score(&ntp.chi_raw, target)?;
        let sq = sqpt.reconstruct(&ch, &est.estimator).map_err(|e| e.to_string())?;
        let f_sq = score(&sq.chi_raw, target)?;
        emit(&format!(
            "{:<10} {:>10.6} {:>10.6} {:>10.6}",
            name.to_string(),
            f_tp,
            f_ntp,
            f_sq
        ));
        rows.push(CompareRow {
            process: name.to_string(),
            loss,
            seqpt_tp: f_tp,
            seqpt_ntp: f_ntp,
            sqpt: f_sq,
        });
    }
    if let Some(dir) = args.out.as_deref().or(file.out.as_deref()) {
        write_artifact(
            dir,
            "compare.json",
            &serde_json::to_string_pretty(&rows).expect("serializable"),
        )?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match load_config(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {}", e);
            return ExitCode::FAILURE;
        }
    };
    let outcome = match &cli.command {
        Command::Designs(args) => cmd_designs(args, &file).map(|_| true),
        Command::Run(args) => cmd_run(args, &file),
        Command::Selective(args) => cmd_selective(args, &file),
        Command::Compare(args) => cmd_compare(args, &file),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
