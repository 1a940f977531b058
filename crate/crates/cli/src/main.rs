//! Command-line front end: complete a tensor from observed entries, generate
//! synthetic instances, run phase-transition grids, and dump unfoldings.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use tmac::error::Error;
use tmac::harness::{
    run_grid, success_cell_count, write_csv, write_pgm, GridSpec, MethodVariant,
};
use tmac::io::{load_mask, load_tensor, save_mask, save_tensor};
use tmac::solver::{solve, RankScheme, SolverConfig};
use tmac::synth::{generate, Family, SynthSpec};
use tmac::tensor::{relerr, ObservationSet};

#[derive(Parser)]
#[command(
    name = "tmac",
    about = "Low-rank tensor completion by factoring every mode unfolding",
    version
)]
struct Cli {
    /// Base RNG seed for initialization and data generation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for grid runs (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a tensor from a value file and an observation mask.
    Complete(CompleteArgs),
    /// Generate a synthetic low-rank instance and write it to files.
    Synth(SynthArgs),
    /// Run phase-transition grids and write CSV/PGM per method.
    Phase(PhaseArgs),
    /// Write one mode unfolding of a tensor as CSV.
    Unfold(UnfoldArgs),
}

#[derive(Args)]
struct CompleteArgs {
    /// Observed values as a dense tensor (zeros off the mask).
    tensor: PathBuf,
    /// Mask file listing the observed indices.
    mask: PathBuf,
    /// Where to write the completed tensor.
    #[arg(short, long)]
    output: PathBuf,
    /// Ground truth tensor; adds the relative error to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Uniform starting rank for every mode.
    #[arg(long)]
    rank: Option<usize>,
    /// Rank policy for every mode: fix, inc, or dec.
    #[arg(long)]
    scheme: Option<String>,
    /// Rank step for the increasing scheme.
    #[arg(long)]
    dr: Option<usize>,
    /// Rank cap for the increasing scheme.
    #[arg(long)]
    rmax: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Reweight the modes by inverse fitting error each iteration.
    #[arg(long)]
    dynamic_weights: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output prefix; writes <prefix>.truth.tnsr, <prefix>.mask,
    /// <prefix>.obs.tnsr.
    prefix: String,
    /// Instance spec as JSON; overrides the inline flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated dimensions, e.g. 20,20,20.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    /// gaussian, uniform_centered, or power_law.
    #[arg(long)]
    family: Option<String>,
    /// Fraction of entries observed.
    #[arg(long)]
    sr: Option<f64>,
    /// Noise level relative to the truth's peak entry.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
}

#[derive(Args)]
struct PhaseArgs {
    /// Output prefix; writes <prefix>.<method>.csv and .pgm.
    prefix: String,
}

#[derive(Args)]
struct UnfoldArgs {
    tensor: PathBuf,
    /// 1-based mode to unfold along.
    mode: usize,
    #[arg(short, long)]
    output: PathBuf,
}

/// Optional config file sections; flags take precedence over these.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    solver: Option<SolverOverrides>,
    synth: Option<SynthSpec>,
    phase: Option<PhaseConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SolverOverrides {
    alphas: Option<Vec<f64>>,
    dynamic_weights: Option<bool>,
    ranks: Option<Vec<usize>>,
    scheme: Option<Vec<RankScheme>>,
    rank_increment: Option<Vec<usize>>,
    rank_max: Option<Vec<usize>>,
    tol: Option<f64>,
    max_iters: Option<usize>,
    pinv_tol: Option<f64>,
    svd_tol: Option<f64>,
    gap_threshold: Option<f64>,
    slow_progress_threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseConfig {
    grid: GridSpec,
    methods: Vec<MethodVariant>,
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::MalformedFile { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidArgument(_) => 2,
        Error::DimMismatch { .. } | Error::ModeOutOfRange { .. } | Error::ShapeMismatch(_) => 3,
        Error::ZeroNormReference | Error::SvdFailed | Error::EigFailed | Error::NonFinite(_) => 4,
    }
}

/// Attaches the offending path to bare I/O errors so messages name the file.
fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::InvalidArgument(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Error> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Error::InvalidArgument(format!("{}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut SolverConfig, ov: &SolverOverrides) {
    let n = cfg.ranks.len();
    if let Some(v) = &ov.alphas {
        cfg.alphas.clone_from(v);
    }
    if let Some(v) = ov.dynamic_weights {
        cfg.dynamic_weights = v;
    }
    if let Some(v) = &ov.scheme {
        cfg.scheme.clone_from(v);
    }
    if let Some(v) = &ov.rank_increment {
        cfg.rank_increment.clone_from(v);
    }
    if let Some(v) = &ov.rank_max {
        cfg.rank_max.clone_from(v);
    }
    if let Some(v) = ov.tol {
        cfg.tol = v;
    }
    if let Some(v) = ov.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = ov.pinv_tol {
        cfg.pinv_tol = v;
    }
    if let Some(v) = ov.svd_tol {
        cfg.svd_tol = v;
    }
    if let Some(v) = ov.gap_threshold {
        cfg.gap_threshold = v;
    }
    if let Some(v) = ov.slow_progress_threshold {
        cfg.slow_progress_threshold = v;
    }
    debug_assert_eq!(cfg.ranks.len(), n);
}

fn build_solver_config(
    order: usize,
    min_dim_cap: usize,
    args: &CompleteArgs,
    file: &FileConfig,
    seed: u64,
) -> Result<SolverConfig, Error> {
    let overrides = file.solver.as_ref();
    let ranks = if let Some(r) = args.rank {
        vec![r; order]
    } else if let Some(ranks) = overrides.and_then(|o| o.ranks.clone()) {
        ranks
    } else {
        vec![1; order]
    };
    let mut cfg = SolverConfig::new(ranks);
    cfg.seed = seed;
    if let Some(ov) = overrides {
        apply_overrides(&mut cfg, ov);
    }
    if let Some(scheme) = &args.scheme {
        let parsed: RankScheme = scheme.parse()?;
        cfg.scheme = vec![parsed; order];
    }
    if let Some(dr) = args.dr {
        cfg.rank_increment = vec![dr; order];
    }
    if let Some(rmax) = args.rmax {
        cfg.rank_max = vec![rmax; order];
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    if let Some(max_iters) = args.max_iters {
        cfg.max_iters = max_iters;
    }
    if args.dynamic_weights {
        cfg.dynamic_weights = true;
    }
    for cap in &mut cfg.rank_max {
        *cap = (*cap).min(min_dim_cap).max(1);
    }
    for (r, cap) in cfg.ranks.iter_mut().zip(&cfg.rank_max) {
        *r = (*r).min(*cap);
    }
    Ok(cfg)
}

fn cmd_complete(args: &CompleteArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let tensor = load_tensor(&args.tensor).map_err(|e| with_path(e, &args.tensor))?;
    let mask = load_mask(&args.mask).map_err(|e| with_path(e, &args.mask))?;
    if mask.dims != tensor.dims() {
        return Err(Error::DimMismatch {
            expected: tensor.dims().to_vec(),
            got: mask.dims.clone(),
        });
    }
    let obs = ObservationSet::from_tensor(&tensor, mask.indices.clone())?;
    let min_dim = *tensor.dims().iter().min().unwrap();
    let cfg = build_solver_config(tensor.order(), min_dim, args, file, seed)?;
    eprintln!(
        "completing {:?} from {} of {} entries",
        tensor.dims(),
        obs.len(),
        tensor.len()
    );
    let (estimate, report) = solve(&obs, &cfg)?;
    let completed = obs.fill_unobserved(&estimate)?;
    save_tensor(&args.output, &completed).map_err(|e| with_path(e, &args.output))?;

    let tail_from = report.fit_history.len().saturating_sub(10);
    let mut out = json!({
        "output": args.output.display().to_string(),
        "iterations": report.iterations,
        "final_ranks": report.final_ranks,
        "stop_reason": report.stop_reason,
        "wall_time_seconds": report.wall_time_seconds,
        "final_objective": report.final_objective,
        "fit_history_tail": report.fit_history[tail_from..],
    });
    if let Some(truth_path) = &args.truth {
        let truth = load_tensor(truth_path).map_err(|e| with_path(e, truth_path))?;
        out["relerr"] = json!(relerr(&completed, &truth)?);
    }
    println!("{out}");
    Ok(())
}

fn synth_spec_from(args: &SynthArgs, file: &FileConfig, seed: u64) -> Result<SynthSpec, Error> {
    if let Some(path) = &args.spec {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        return serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())));
    }
    if let Some(spec) = &file.synth {
        return Ok(spec.clone());
    }
    let (Some(dims), Some(rank), Some(sr)) = (args.dims.clone(), args.rank, args.sr) else {
        return Err(Error::InvalidConfig(
            "synth needs --spec, a config file, or --dims/--rank/--sr".into(),
        ));
    };
    let family = match &args.family {
        Some(name) => name.parse::<Family>()?,
        None => Family::Gaussian,
    };
    Ok(SynthSpec {
        dims,
        core_rank: rank,
        family,
        sr,
        noise_sigma: args.sigma,
        seed,
    })
}

fn cmd_synth(args: &SynthArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let spec = synth_spec_from(args, file, seed)?;
    let (truth, obs) = generate(&spec)?;
    let truth_path = format!("{}.truth.tnsr", args.prefix);
    let mask_path = format!("{}.mask", args.prefix);
    let obs_path = format!("{}.obs.tnsr", args.prefix);
    save_tensor(&truth_path, &truth).map_err(|e| with_path(e, Path::new(&truth_path)))?;
    save_mask(&mask_path, obs.dims(), obs.indices())
        .map_err(|e| with_path(e, Path::new(&mask_path)))?;
    save_tensor(&obs_path, &obs.to_dense()).map_err(|e| with_path(e, Path::new(&obs_path)))?;
    eprintln!(
        "wrote {:?} instance: {} of {} entries observed",
        spec.dims,
        obs.len(),
        truth.len()
    );
    println!(
        "{}",
        json!({
            "truth": truth_path,
            "mask": mask_path,
            "obs": obs_path,
            "observed": obs.len(),
            "total": truth.len(),
        })
    );
    Ok(())
}

fn cmd_phase(args: &PhaseArgs, file: &FileConfig, seed: u64) -> Result<(), Error> {
    let (grid, methods) = match &file.phase {
        Some(p) => (p.grid.clone(), p.methods.clone()),
        None => (
            GridSpec::desk_scale_3way(),
            vec![MethodVariant::TmacFix, MethodVariant::Matcomp],
        ),
    };
    if methods.is_empty() {
        return Err(Error::InvalidConfig("phase needs at least one method".into()));
    }
    let mut files = Vec::new();
    let mut success_cells = serde_json::Map::new();
    for method in methods {
        eprintln!(
            "running {method}: {} ranks x {} ratios x {} trials",
            grid.ranks.len(),
            grid.srs.len(),
            grid.trials
        );
        let result = run_grid(&grid, method, seed)?;
        for d in &result.diagnostics {
            eprintln!("  {d}");
        }
        let csv_path = format!("{}.{}.csv", args.prefix, method.label());
        let pgm_path = format!("{}.{}.pgm", args.prefix, method.label());
        let mut csv = Vec::new();
        write_csv(&result, &mut csv)?;
        fs::write(&csv_path, csv).map_err(|e| with_path(e.into(), Path::new(&csv_path)))?;
        let mut pgm = Vec::new();
        write_pgm(&result, &mut pgm)?;
        fs::write(&pgm_path, pgm).map_err(|e| with_path(e.into(), Path::new(&pgm_path)))?;
        eprintln!("  {} reliable cells -> {csv_path}", success_cell_count(&result));
        success_cells.insert(
            method.label().to_string(),
            json!(success_cell_count(&result)),
        );
        files.push(csv_path);
        files.push(pgm_path);
    }
    println!(
        "{}",
        json!({ "files": files, "success_cells": success_cells })
    );
    Ok(())
}

fn cmd_unfold(args: &UnfoldArgs) -> Result<(), Error> {
    let tensor = load_tensor(&args.tensor).map_err(|e| with_path(e, &args.tensor))?;
    let m = tensor.unfold(args.mode)?;
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        writeln!(&mut out, "{}", row.join(","))?;
    }
    fs::write(&args.output, out).map_err(|e| with_path(e.into(), &args.output))?;
    println!(
        "{}",
        json!({
            "output": args.output.display().to_string(),
            "rows": m.nrows(),
            "cols": m.ncols(),
        })
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let file = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Complete(args) => cmd_complete(args, &file, cli.seed),
        Command::Synth(args) => cmd_synth(args, &file, cli.seed),
        Command::Phase(args) => cmd_phase(args, &file, cli.seed),
        Command::Unfold(args) => cmd_unfold(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
