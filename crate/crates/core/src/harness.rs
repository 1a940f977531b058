//! Phase-transition experiments: sweep a (rank × sample-ratio) grid, run
//! seeded trials of a method variant in each cell, classify recovery success,
//! and export the grid as CSV or a greyscale PGM plot.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{matcomp, square_plan, square_solve};
use crate::error::{Error, Result};
use crate::solver::{solve, RankScheme, SolverConfig};
use crate::synth::{generate, Family, SynthSpec};
use crate::tensor::{relerr, DenseTensor, ObservationSet};

/// Recovery counts as success below this relative error.
pub const SUCCESS_RELERR: f64 = 1e-2;

/// A cell counts as reliably recovered at or above this success rate.
pub const SUCCESS_RATE_THRESHOLD: f64 = 0.9;

/// Solver variant run in each cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodVariant {
    /// All modes factored at the true rank.
    TmacFix,
    /// Start at three quarters of the true rank, growing on stalls.
    TmacInc,
    /// Start at five quarters of the true rank, shrinking on spectral gaps.
    TmacDec,
    /// Matrix completion on the last-mode unfolding.
    Matcomp,
    /// Matrix completion on the balanced square reshape.
    Squaredeal,
}

impl MethodVariant {
    pub fn label(&self) -> &'static str {
        match self {
            Self::TmacFix => "tmac-fix",
            Self::TmacInc => "tmac-inc",
            Self::TmacDec => "tmac-dec",
            Self::Matcomp => "matcomp",
            Self::Squaredeal => "squaredeal",
        }
    }

    /// Starting factor rank for true rank `r` under this variant's policy.
    pub fn initial_rank(&self, r: usize) -> usize {
        let scaled = match self {
            Self::TmacInc => (0.75 * r as f64).round() as usize,
            Self::TmacDec => (1.25 * r as f64).round() as usize,
            _ => r,
        };
        scaled.max(1)
    }
}

impl std::fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for MethodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tmac-fix" => Ok(Self::TmacFix),
            "tmac-inc" => Ok(Self::TmacInc),
            "tmac-dec" => Ok(Self::TmacDec),
            "matcomp" => Ok(Self::Matcomp),
            "squaredeal" => Ok(Self::Squaredeal),
            other => Err(Error::InvalidConfig(format!(
                "unknown method variant '{other}'"
            ))),
        }
    }
}

/// Axes and data recipe for one grid run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    #[serde(default = "GridSpec::default_family")]
    pub family: Family,
    #[serde(default)]
    pub sigma: f64,
    pub ranks: Vec<usize>,
    pub srs: Vec<f64>,
    pub trials: usize,
    #[serde(default = "GridSpec::default_tol")]
    pub tol: f64,
    #[serde(default = "GridSpec::default_max_iters")]
    pub max_iters: usize,
}

impl GridSpec {
    fn default_family() -> Family {
        Family::Gaussian
    }

    fn default_tol() -> f64 {
        1e-5
    }

    fn default_max_iters() -> usize {
        1000
    }

    fn desk_scale(dims: Vec<usize>) -> Self {
        Self {
            dims,
            family: Family::Gaussian,
            sigma: 0.0,
            ranks: (1..=8).collect(),
            srs: (1..=9).map(|i| i as f64 / 10.0).collect(),
            trials: 10,
            tol: Self::default_tol(),
            max_iters: Self::default_max_iters(),
        }
    }

    /// 20×20×20 grid over ranks 1..8 and sample ratios 0.1..0.9.
    pub fn desk_scale_3way() -> Self {
        Self::desk_scale(vec![20, 20, 20])
    }

    /// 10×10×10×10 grid over the same axes.
    pub fn desk_scale_4way() -> Self {
        Self::desk_scale(vec![10, 10, 10, 10])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.ranks.is_empty() || self.srs.is_empty() {
            return Err(Error::InvalidConfig(
                "grid needs dims, ranks, and sample ratios".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let min_dim = *self.dims.iter().min().unwrap();
        for &r in &self.ranks {
            if r == 0 || r > min_dim {
                return Err(Error::InvalidConfig(format!(
                    "rank {r} outside [1, {min_dim}] for dims {:?}",
                    self.dims
                )));
            }
        }
        for &sr in &self.srs {
            if !(sr > 0.0 && sr <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "sample ratio {sr} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Aggregate over the trials of one (rank, sample ratio) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub successes: usize,
    pub trials: usize,
    pub mean_relerr: f64,
    pub mean_time_s: f64,
}

impl CellStats {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Completed grid for one method.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseGrid {
    pub method: MethodVariant,
    pub ranks: Vec<usize>,
    pub srs: Vec<f64>,
    pub trials: usize,
    /// Rank-major: `cells[ri * srs.len() + si]`.
    pub cells: Vec<CellStats>,
    /// Messages from trials whose solves failed outright.
    pub diagnostics: Vec<String>,
}

impl PhaseGrid {
    pub fn cell(&self, rank_idx: usize, sr_idx: usize) -> &CellStats {
        &self.cells[rank_idx * self.srs.len() + sr_idx]
    }

    /// Equality of everything except wall-clock timings.
    pub fn results_equal(&self, other: &PhaseGrid) -> bool {
        self.method == other.method
            && self.ranks == other.ranks
            && self.srs == other.srs
            && self.trials == other.trials
            && self.cells.len() == other.cells.len()
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| {
                    a.successes == b.successes
                        && a.trials == b.trials
                        && a.mean_relerr == b.mean_relerr
                })
    }
}

/// Cells whose success rate reaches the reliability threshold.
pub fn success_cell_count(grid: &PhaseGrid) -> usize {
    grid.cells
        .iter()
        .filter(|c| c.success_rate() >= SUCCESS_RATE_THRESHOLD)
        .count()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds tag values into the base seed so every (cell, trial, stream) tuple
/// gets its own pairwise-distinct stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(base ^ 0xA076_1D64_78BD_642F);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    acc
}

/// Runs one variant on prepared observations. `rank` is the cell's true rank;
/// the variant policy maps it to solver ranks.
pub fn run_variant(
    variant: MethodVariant,
    obs: &ObservationSet,
    rank: usize,
    spec: &GridSpec,
    seed: u64,
) -> Result<DenseTensor> {
    let n = obs.dims().len();
    let base = |ranks: Vec<usize>| {
        let caps = ranks.iter().map(|&r| r.max(50)).collect();
        let mut cfg = SolverConfig::new(ranks);
        cfg.tol = spec.tol;
        cfg.max_iters = spec.max_iters;
        cfg.seed = seed;
        cfg.rank_max = caps;
        cfg
    };
    match variant {
        MethodVariant::TmacFix => {
            let cfg = base(vec![rank; n]);
            Ok(solve(obs, &cfg)?.0)
        }
        MethodVariant::TmacInc => {
            let mut cfg = base(vec![variant.initial_rank(rank); n]);
            cfg.scheme = vec![RankScheme::Increase; n];
            cfg.rank_max = vec![50; n];
            Ok(solve(obs, &cfg)?.0)
        }
        MethodVariant::TmacDec => {
            let mut cfg = base(vec![variant.initial_rank(rank); n]);
            cfg.scheme = vec![RankScheme::Decrease; n];
            Ok(solve(obs, &cfg)?.0)
        }
        MethodVariant::Matcomp => {
            let cfg = base(vec![rank; 2]);
            Ok(matcomp(obs, &cfg)?.0)
        }
        MethodVariant::Squaredeal => {
            let plan = square_plan(obs.dims())?;
            let groups = plan.split.min(n - plan.split) as u32;
            let cap = plan.left_dim.min(plan.right_dim);
            let matrix_rank = rank
                .checked_pow(groups)
                .unwrap_or(usize::MAX)
                .clamp(1, cap);
            let cfg = base(vec![matrix_rank; 2]);
            Ok(square_solve(obs, &plan, &cfg)?.0)
        }
    }
}

struct TrialOutcome {
    cell: usize,
    relerr: f64,
    seconds: f64,
    diagnostic: Option<String>,
}

fn run_trial(
    spec: &GridSpec,
    variant: MethodVariant,
    base_seed: u64,
    rank_idx: usize,
    sr_idx: usize,
    trial: usize,
) -> TrialOutcome {
    let cell = rank_idx * spec.srs.len() + sr_idx;
    let tags = [rank_idx as u64, sr_idx as u64, trial as u64];
    let data_seed = derive_seed(base_seed, &[tags[0], tags[1], tags[2], 0]);
    let solver_seed = derive_seed(base_seed, &[tags[0], tags[1], tags[2], 1]);
    let synth_spec = SynthSpec {
        dims: spec.dims.clone(),
        core_rank: spec.ranks[rank_idx],
        family: spec.family,
        sr: spec.srs[sr_idx],
        noise_sigma: spec.sigma,
        seed: data_seed,
    };
    let (truth, obs) = match generate(&synth_spec) {
        Ok(pair) => pair,
        Err(e) => {
            return TrialOutcome {
                cell,
                relerr: f64::INFINITY,
                seconds: 0.0,
                diagnostic: Some(format!(
                    "{} r={} sr={} trial {trial}: generation failed: {e}",
                    variant.label(),
                    spec.ranks[rank_idx],
                    spec.srs[sr_idx]
                )),
            }
        }
    };
    let started = Instant::now();
    let run = run_variant(variant, &obs, spec.ranks[rank_idx], spec, solver_seed);
    let seconds = started.elapsed().as_secs_f64();
    match run.and_then(|est| relerr(&est, &truth)) {
        Ok(e) => TrialOutcome {
            cell,
            relerr: e,
            seconds,
            diagnostic: None,
        },
        Err(e) => TrialOutcome {
            cell,
            relerr: f64::INFINITY,
            seconds,
            diagnostic: Some(format!(
                "{} r={} sr={} trial {trial}: {e}",
                variant.label(),
                spec.ranks[rank_idx],
                spec.srs[sr_idx]
            )),
        },
    }
}

/// Sweeps the whole grid. Trials run in parallel on the current thread pool;
/// aggregation order is fixed, so results do not depend on thread count.
/// Failed solves count as unsuccessful trials and leave a diagnostic.
pub fn run_grid(spec: &GridSpec, variant: MethodVariant, base_seed: u64) -> Result<PhaseGrid> {
    spec.validate()?;
    let mut tuples = Vec::with_capacity(spec.ranks.len() * spec.srs.len() * spec.trials);
    for rank_idx in 0..spec.ranks.len() {
        for sr_idx in 0..spec.srs.len() {
            for trial in 0..spec.trials {
                tuples.push((rank_idx, sr_idx, trial));
            }
        }
    }
    let outcomes: Vec<TrialOutcome> = tuples
        .par_iter()
        .map(|&(ri, si, t)| run_trial(spec, variant, base_seed, ri, si, t))
        .collect();

    let cell_count = spec.ranks.len() * spec.srs.len();
    let mut cells = vec![
        CellStats {
            successes: 0,
            trials: 0,
            mean_relerr: 0.0,
            mean_time_s: 0.0,
        };
        cell_count
    ];
    let mut diagnostics = Vec::new();
    for outcome in outcomes {
        let c = &mut cells[outcome.cell];
        c.trials += 1;
        if outcome.relerr <= SUCCESS_RELERR {
            c.successes += 1;
        }
        c.mean_relerr += outcome.relerr;
        c.mean_time_s += outcome.seconds;
        if let Some(d) = outcome.diagnostic {
            diagnostics.push(d);
        }
    }
    for c in &mut cells {
        c.mean_relerr /= c.trials as f64;
        c.mean_time_s /= c.trials as f64;
    }
    Ok(PhaseGrid {
        method: variant,
        ranks: spec.ranks.clone(),
        srs: spec.srs.clone(),
        trials: spec.trials,
        cells,
        diagnostics,
    })
}

/// Per-cell success-rate comparison of two grids on identical axes.
#[derive(Debug, Clone, Serialize)]
pub struct RegionComparison {
    /// `a.rate − b.rate` per cell, rank-major.
    pub rate_diff: Vec<f64>,
    pub cells_a_geq_b: usize,
    pub cells_a_gt_b: usize,
    pub a_success_cells: usize,
    pub b_success_cells: usize,
}

pub fn compare_regions(a: &PhaseGrid, b: &PhaseGrid) -> Result<RegionComparison> {
    if a.ranks != b.ranks || a.srs != b.srs {
        return Err(Error::InvalidArgument(
            "phase grids have different axes".into(),
        ));
    }
    let rate_diff: Vec<f64> = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(ca, cb)| ca.success_rate() - cb.success_rate())
        .collect();
    Ok(RegionComparison {
        cells_a_geq_b: rate_diff.iter().filter(|&&d| d >= 0.0).count(),
        cells_a_gt_b: rate_diff.iter().filter(|&&d| d > 0.0).count(),
        a_success_cells: success_cell_count(a),
        b_success_cells: success_cell_count(b),
        rate_diff,
    })
}

/// One CSV row per cell.
pub fn write_csv<W: Write>(grid: &PhaseGrid, mut w: W) -> Result<()> {
    writeln!(
        w,
        "method,rank,sr,trials,successes,success_rate,mean_relerr,mean_time_s"
    )?;
    for (ri, &rank) in grid.ranks.iter().enumerate() {
        for (si, &sr) in grid.srs.iter().enumerate() {
            let c = grid.cell(ri, si);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                grid.method.label(),
                rank,
                sr,
                c.trials,
                c.successes,
                c.success_rate(),
                c.mean_relerr,
                c.mean_time_s
            )?;
        }
    }
    Ok(())
}

/// ASCII greyscale plot: one pixel per cell, 255 for full success, ranks
/// ascending top to bottom and sample ratios ascending left to right.
pub fn write_pgm<W: Write>(grid: &PhaseGrid, mut w: W) -> Result<()> {
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", grid.srs.len(), grid.ranks.len())?;
    writeln!(w, "255")?;
    for ri in 0..grid.ranks.len() {
        let row: Vec<String> = (0..grid.srs.len())
            .map(|si| {
                let level = (255.0 * grid.cell(ri, si).success_rate()).round() as u32;
                level.to_string()
            })
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}
