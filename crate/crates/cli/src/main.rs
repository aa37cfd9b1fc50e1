//! Batch front end: ingest sample data plus a JSON run configuration,
//! estimate per-cell loss densities, compare cells, and solve single- or
//! multi-goal games end to end. Results go to declared files only;
//! warnings go to stderr, so machine consumers never have to parse logs.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 undecidable
//! comparison, 4 no convergence (results are still written).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::exit;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use distgame::fp::{
    detect_absorption, mixture_model, solve, DensityMix, EquilibriumResult, GameMatrix, Norm,
    Payoff, SolveOptions, TraceRecord,
};
use distgame::kde::{estimate, BandwidthRule, Kernel, KdeModel, SampleSet};
use distgame::mgss::{solve_mgss, MgssResult, MultiGoalGame};
use distgame::preference::{compare_models, DistModel, PreferenceError, PreferenceOutcome};
use distgame::tailrep::{gaussian_kde_derivs, DerivVector};

/// Moment-table depth used for comparisons and density-space play.
const MOMENT_K_MAX: u32 = DensityMix::DEFAULT_K_TABLE;
/// Grid resolution of every emitted density series.
const GRID_POINTS: usize = 512;
/// Tail window inspected when a run fails to converge.
const ABSORPTION_WINDOW: usize = 1000;

#[derive(Parser)]
#[command(name = "distgame", version, about = "Solve matrix games with distribution-valued payoffs estimated from sample data")]
struct Cli {
    /// Path to the run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-cell densities and write summaries plus plottable series.
    Estimate,
    /// Compare the estimated loss distributions of two cells.
    Compare {
        /// First cell as `row,col` or `row,col,goal` (1-based).
        #[arg(long, value_name = "R,C[,G]")]
        cell_a: CellRef,
        /// Second cell, same format.
        #[arg(long, value_name = "R,C[,G]")]
        cell_b: CellRef,
        /// Cut both distributions at their 1 - risk_alpha quantile first.
        #[arg(long)]
        truncate: bool,
    },
    /// Solve a single-goal game end to end.
    Solve,
    /// Compute a multi-goal security strategy.
    SolveMgss,
}

#[derive(Clone, Copy, Debug)]
struct CellRef {
    row: usize,
    col: usize,
    goal: usize,
}

impl FromStr for CellRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err("expected `row,col` or `row,col,goal` (1-based)".into());
        }
        let field = |i: usize| -> Result<usize, String> {
            let text = parts[i].trim();
            let v: usize = text
                .parse()
                .map_err(|_| format!("`{text}` is not a positive integer"))?;
            if v == 0 {
                return Err("cell indices are 1-based".into());
            }
            Ok(v)
        };
        Ok(CellRef {
            row: field(0)?,
            col: field(1)?,
            goal: if parts.len() == 3 { field(2)? } else { 1 },
        })
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    n: usize,
    m: usize,
    #[serde(default = "default_d")]
    d: usize,
    kernel: KernelChoice,
    #[serde(default)]
    bandwidth: Option<BandwidthConfig>,
    #[serde(default = "default_risk_alpha")]
    risk_alpha: f64,
    #[serde(default = "default_taylor_order")]
    taylor_order: u32,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    #[serde(default = "default_max_iters")]
    max_iters: u64,
    samples: PathBuf,
    out_dir: PathBuf,
    #[serde(default)]
    trace: bool,
}

fn default_d() -> usize {
    1
}
fn default_risk_alpha() -> f64 {
    0.05
}
fn default_taylor_order() -> u32 {
    8
}
fn default_epsilon() -> f64 {
    1e-3
}
fn default_max_iters() -> u64 {
    100_000
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KernelChoice {
    Epanechnikov,
    Gaussian,
}

impl KernelChoice {
    fn kernel(self) -> Kernel {
        match self {
            KernelChoice::Epanechnikov => Kernel::Epanechnikov,
            KernelChoice::Gaussian => Kernel::Gaussian,
        }
    }

    fn name(self) -> &'static str {
        match self {
            KernelChoice::Epanechnikov => "epanechnikov",
            KernelChoice::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum BandwidthConfig {
    /// h = c * n^(-alpha); `c` defaults to the cell's sample standard
    /// deviation and `alpha` to 0.2.
    PowerLaw {
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
    },
    Explicit { h: f64 },
}

/// Error carrying the process exit code.
struct Failure {
    code: i32,
    msg: String,
}

type CliResult<T> = Result<T, Failure>;

fn fail2(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => exit(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            exit(f.code);
        }
    }
}

fn run(cli: &Cli) -> CliResult<i32> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| fail2("--config <PATH> is required"))?;
    let cfg = load_config(path)?;
    match &cli.command {
        Command::Estimate => cmd_estimate(&cfg),
        Command::Compare { cell_a, cell_b, truncate } => {
            cmd_compare(&cfg, *cell_a, *cell_b, *truncate)
        }
        Command::Solve => cmd_solve(&cfg),
        Command::SolveMgss => cmd_solve_mgss(&cfg),
    }
}

fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail2(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| fail2(format!("invalid config {}: {e}", path.display())))?;
    if cfg.n == 0 || cfg.m == 0 || cfg.d == 0 {
        return Err(fail2("game dimensions n, m, d must all be at least 1"));
    }
    if !(cfg.risk_alpha > 0.0 && cfg.risk_alpha < 1.0) {
        return Err(fail2("risk_alpha must lie strictly between 0 and 1"));
    }
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) {
        return Err(fail2("epsilon must be a positive finite number"));
    }
    if cfg.max_iters == 0 {
        return Err(fail2("max_iters must be at least 1"));
    }
    if let Some(w) = &cfg.weights {
        if w.len() != cfg.d {
            return Err(fail2(format!(
                "weights must list one entry per goal (d = {}), found {}",
                cfg.d,
                w.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(fail2("weights must be positive finite numbers"));
        }
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Sample ingestion

/// Per-cell sample values indexed `[goal][row][col]`, all 0-based.
type SampleGrid = Vec<Vec<Vec<Vec<f64>>>>;

fn load_samples(cfg: &RunConfig, require_all: bool) -> CliResult<SampleGrid> {
    let path = &cfg.samples;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail2(format!("cannot read samples {}: {e}", path.display())))?;
    {
        let headers = rdr
            .headers()
            .map_err(|e| fail2(format!("samples {}: {e}", path.display())))?;
        let expected = ["row", "col", "goal", "value"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(fail2(format!(
                "samples {}: header must be `row,col,goal,value`, found `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut grid: SampleGrid = vec![vec![vec![Vec::new(); cfg.m]; cfg.n]; cfg.d];
    let mut min_value = f64::INFINITY;
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record =
            record.map_err(|e| fail2(format!("samples {} line {line}: {e}", path.display())))?;
        let fields: Vec<&str> = record.iter().collect();
        if fields.len() != 4 {
            return Err(fail2(format!(
                "samples {} line {line}: expected 4 fields, found {}",
                path.display(),
                fields.len()
            )));
        }
        let index = |i: usize, name: &str| -> CliResult<usize> {
            fields[i].parse::<usize>().ok().filter(|v| *v >= 1).ok_or_else(|| {
                fail2(format!(
                    "samples {} line {line}: {name} `{}` is not a 1-based index",
                    path.display(),
                    fields[i]
                ))
            })
        };
        let row = index(0, "row")?;
        let col = index(1, "col")?;
        let goal = index(2, "goal")?;
        let value: f64 = fields[3].parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
            fail2(format!(
                "samples {} line {line}: value `{}` is not a finite number",
                path.display(),
                fields[3]
            ))
        })?;
        if row > cfg.n || col > cfg.m || goal > cfg.d {
            return Err(fail2(format!(
                "samples {} line {line}: cell ({row}, {col}, goal {goal}) lies outside the declared {}x{} game with {} goal(s)",
                path.display(),
                cfg.n,
                cfg.m,
                cfg.d
            )));
        }
        min_value = min_value.min(value);
        grid[goal - 1][row - 1][col - 1].push(value);
    }
    if min_value < 0.0 {
        eprintln!(
            "warning: negative losses present (smallest value {min_value}); downstream procedures assume nonnegative losses"
        );
    }
    if require_all {
        for (g, goal) in grid.iter().enumerate() {
            for (r, row) in goal.iter().enumerate() {
                for (c, cell) in row.iter().enumerate() {
                    if cell.is_empty() {
                        return Err(fail2(format!(
                            "no samples for cell ({}, {}, goal {})",
                            r + 1,
                            c + 1,
                            g + 1
                        )));
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn cell_values<'a>(grid: &'a SampleGrid, cfg: &RunConfig, cell: CellRef) -> CliResult<&'a [f64]> {
    if cell.row > cfg.n || cell.col > cfg.m || cell.goal > cfg.d {
        return Err(fail2(format!(
            "cell ({}, {}, goal {}) lies outside the declared {}x{} game with {} goal(s)",
            cell.row, cell.col, cell.goal, cfg.n, cfg.m, cfg.d
        )));
    }
    let values = &grid[cell.goal - 1][cell.row - 1][cell.col - 1];
    if values.is_empty() {
        return Err(fail2(format!(
            "no samples for cell ({}, {}, goal {})",
            cell.row, cell.col, cell.goal
        )));
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// Estimation

fn fit_cell(cfg: &RunConfig, values: &[f64], label: &str) -> CliResult<KdeModel> {
    let rule = match &cfg.bandwidth {
        Some(BandwidthConfig::Explicit { h }) => BandwidthRule::Explicit { h: *h },
        Some(BandwidthConfig::PowerLaw { c, alpha }) => BandwidthRule::PowerLaw {
            c: match c {
                Some(c) => *c,
                None => sample_std(values, label)?,
            },
            alpha: alpha.unwrap_or(0.2),
        },
        None => BandwidthRule::PowerLaw { c: sample_std(values, label)?, alpha: 0.2 },
    };
    let samples = SampleSet::new(values.to_vec())
        .map_err(|e| fail2(format!("cell {label}: {e}")))?;
    estimate(samples, cfg.kernel.kernel(), rule).map_err(|e| fail2(format!("cell {label}: {e}")))
}

/// Sample standard deviation, used as the default power-law scale.
fn sample_std(values: &[f64], label: &str) -> CliResult<f64> {
    if values.len() < 2 {
        return Err(fail2(format!(
            "cell {label}: the default bandwidth rule needs at least 2 samples; set an explicit bandwidth in the config"
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std.is_finite() && std > 0.0) {
        return Err(fail2(format!(
            "cell {label}: samples have zero spread, so no bandwidth can be derived; set an explicit bandwidth in the config"
        )));
    }
    Ok(std)
}

fn cell_label(r: usize, c: usize, g: usize) -> String {
    format!("r{}c{}g{}", r + 1, c + 1, g + 1)
}

/// Fit every cell of one goal; indices are 0-based.
fn fit_goal(cfg: &RunConfig, goal: usize, grid: &SampleGrid) -> CliResult<Vec<Vec<KdeModel>>> {
    (0..cfg.n)
        .map(|r| {
            (0..cfg.m)
                .map(|c| fit_cell(cfg, &grid[goal][r][c], &cell_label(r, c, goal)))
                .collect()
        })
        .collect()
}

/// Range to plot a single model over: its support, with Gaussian tails
/// clipped where their remaining mass is far below the grid resolution.
fn plot_range(model: &KdeModel) -> (f64, f64) {
    let (lo, hi) = model.support();
    let pad = 8.0 * model.bandwidth();
    let lo = if lo.is_finite() { lo } else { model.samples().min() - pad };
    let hi = if hi.is_finite() { hi } else { model.samples().max() + pad };
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Deterministic output formatting

/// Fixed 17-significant-digit float rendering; every emitted number goes
/// through here so identical runs produce identical bytes.
fn fnum(x: f64) -> String {
    format!("{x:.16e}")
}

fn farr(xs: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fnum(*x));
    }
    s.push(']');
    s
}

/// Finite number or JSON null (for unbounded support endpoints).
fn opt_num(x: f64) -> String {
    if x.is_finite() {
        fnum(x)
    } else {
        "null".into()
    }
}

fn write_out(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| fail2(format!("cannot write {}: {e}", path.display())))
}

fn write_series(path: &Path, lo: f64, hi: f64, f: &dyn Fn(f64) -> f64) -> CliResult<()> {
    let mut out = String::with_capacity(GRID_POINTS * 48 + 4);
    out.push_str("x,f\n");
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    for i in 0..GRID_POINTS {
        let x = if i + 1 == GRID_POINTS { hi } else { lo + step * i as f64 };
        // Clamp float dust: a density is never negative.
        let y = f(x).max(0.0);
        let _ = writeln!(out, "{},{}", fnum(x), fnum(y));
    }
    write_out(path, &out)
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> CliResult<()> {
    let mut out = String::with_capacity(trace.len() * 40 + 64);
    out.push_str("iter,row_choice,col_choice,criterion_value,vup_updated,vlow_updated\n");
    for t in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            t.iter,
            t.row_choice,
            t.col_choice,
            fnum(t.criterion_value),
            t.vup_updated,
            t.vlow_updated
        );
    }
    write_out(path, &out)
}

/// JSON rendering of a payoff bound, shaped by the payoff representation.
trait RenderPayoff {
    fn payoff_json(&self) -> String;
}

impl RenderPayoff for DerivVector {
    fn payoff_json(&self) -> String {
        format!(
            "{{\"cutoff\":{},\"coeffs\":{}}}",
            fnum(self.cutoff()),
            farr(self.coeffs())
        )
    }
}

impl RenderPayoff for DensityMix {
    fn payoff_json(&self) -> String {
        // Row-major (goal-major for multi-goal games) weights over the
        // game's cell distributions.
        format!("{{\"mix_coeffs\":{}}}", farr(self.coeffs()))
    }
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_estimate(cfg: &RunConfig) -> CliResult<i32> {
    let grid = load_samples(cfg, true)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| fail2(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let mut cells = Vec::with_capacity(cfg.d * cfg.n * cfg.m);
    for g in 0..cfg.d {
        for r in 0..cfg.n {
            for c in 0..cfg.m {
                let label = cell_label(r, c, g);
                let values = &grid[g][r][c];
                let model = fit_cell(cfg, values, &label)?;
                let cutoff = model
                    .quantile(1.0 - cfg.risk_alpha)
                    .map_err(|e| fail2(format!("cell {label}: {e}")))?;
                let file = format!("density_{label}.csv");
                let (lo, hi) = plot_range(&model);
                write_series(&cfg.out_dir.join(&file), lo, hi, &|x| model.density(x))?;
                let (support_lo, support_hi) = model.support();
                cells.push(format!(
                    "{{\"row\":{},\"col\":{},\"goal\":{},\"samples\":{},\"bandwidth\":{},\"support_lower\":{},\"support_upper\":{},\"cutoff_candidate\":{},\"series\":\"{file}\"}}",
                    r + 1,
                    c + 1,
                    g + 1,
                    values.len(),
                    fnum(model.bandwidth()),
                    opt_num(support_lo),
                    opt_num(support_hi),
                    fnum(cutoff)
                ));
            }
        }
    }
    let doc = format!(
        "{{\"mode\":\"estimate\",\"kernel\":\"{}\",\"risk_alpha\":{},\"cells\":[{}]}}\n",
        cfg.kernel.name(),
        fnum(cfg.risk_alpha),
        cells.join(",")
    );
    write_out(&cfg.out_dir.join("result.json"), &doc)?;
    Ok(0)
}

fn cmd_compare(cfg: &RunConfig, a: CellRef, b: CellRef, truncate: bool) -> CliResult<i32> {
    let grid = load_samples(cfg, false)?;
    let fit = |cell: CellRef| -> CliResult<KdeModel> {
        let label = cell_label(cell.row - 1, cell.col - 1, cell.goal - 1);
        let model = fit_cell(cfg, cell_values(&grid, cfg, cell)?, &label)?;
        if truncate {
            model
                .truncate(cfg.risk_alpha, true)
                .map_err(|e| fail2(format!("cell {label}: {e}")))
        } else {
            Ok(model)
        }
    };
    let model_a = DistModel::Kde(fit(a)?);
    let model_b = DistModel::Kde(fit(b)?);
    let report = compare_models(&model_a, &model_b, MOMENT_K_MAX).map_err(|e| match e {
        PreferenceError::Undecidable { k_max } => Failure {
            code: 3,
            msg: format!(
                "comparison undecidable: no stable moment dominance within K_max = {k_max} moments"
            ),
        },
        other => fail2(other.to_string()),
    })?;
    println!("outcome: {}", outcome_text(report.outcome));
    println!("procedure: {}", report.procedure);
    if let Some(k) = report.onset {
        println!("dominance onset: k={k}");
    }
    Ok(0)
}

fn outcome_text(outcome: PreferenceOutcome) -> String {
    let grade = |strict: bool| if strict { "strict" } else { "weak" };
    match outcome {
        PreferenceOutcome::FirstPreferred { strict } => {
            format!("FirstPreferred ({})", grade(strict))
        }
        PreferenceOutcome::SecondPreferred { strict } => {
            format!("SecondPreferred ({})", grade(strict))
        }
        PreferenceOutcome::Equivalent => "Equivalent".into(),
    }
}

/// Common cutoff for truncation and plotting: the largest 1 - risk_alpha
/// quantile over all cells of all goals.
fn common_cutoff(cfg: &RunConfig, goals: &[Vec<Vec<KdeModel>>]) -> CliResult<f64> {
    let mut a = f64::NEG_INFINITY;
    for (g, goal) in goals.iter().enumerate() {
        for (r, row) in goal.iter().enumerate() {
            for (c, model) in row.iter().enumerate() {
                let q = model.quantile(1.0 - cfg.risk_alpha).map_err(|e| {
                    fail2(format!("cell {}: {e}", cell_label(r, c, g)))
                })?;
                a = a.max(q);
            }
        }
    }
    Ok(a)
}

/// Truncate a goal's cells at the common cutoff and extract their
/// derivative vectors.
fn tail_matrix(
    cfg: &RunConfig,
    goal: usize,
    models: &[Vec<KdeModel>],
    a: f64,
) -> CliResult<(GameMatrix<DerivVector>, Vec<Vec<DistModel>>)> {
    let mut rows = Vec::with_capacity(models.len());
    let mut mix_cells = Vec::with_capacity(models.len());
    for (r, row) in models.iter().enumerate() {
        let mut derivs = Vec::with_capacity(row.len());
        let mut mixes = Vec::with_capacity(row.len());
        for (c, model) in row.iter().enumerate() {
            let label = cell_label(r, c, goal);
            let truncated = model
                .truncate_at_cutoff(a, true)
                .map_err(|e| fail2(format!("cell {label}: {e}")))?;
            let vector = gaussian_kde_derivs(&truncated, a, cfg.taylor_order)
                .map_err(|e| fail2(format!("cell {label}: {e}")))?;
            derivs.push(vector);
            mixes.push(DistModel::Kde(truncated));
        }
        rows.push(derivs);
        mix_cells.push(mixes);
    }
    let game = GameMatrix::from_rows(rows).map_err(|e| fail2(e.to_string()))?;
    Ok((game, mix_cells))
}

fn warn_epanechnikov_solve() {
    eprintln!(
        "warning: epanechnikov kernels keep compact supports, so play can absorb into a single row and never meet the convergence criterion"
    );
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions { epsilon: cfg.epsilon, max_iters: cfg.max_iters, norm: Norm::LInf }
}

/// Post-run diagnostics shared by solve and solve-mgss: absorption and
/// non-convergence warnings. Returns the process exit code.
fn finish_run(cfg: &RunConfig, converged: bool, trace: &[TraceRecord]) -> i32 {
    if converged {
        return 0;
    }
    if trace.len() >= 4 {
        let window = (trace.len() / 2).min(ABSORPTION_WINDOW);
        if let Some(row) = detect_absorption(trace, window) {
            eprintln!(
                "warning: play absorbed into pure row {row} (1-based row {}); the averaged bounds stopped moving",
                row + 1
            );
        }
    }
    eprintln!(
        "warning: no convergence within {} iterations; results were still written",
        cfg.max_iters
    );
    4
}

fn cmd_solve(cfg: &RunConfig) -> CliResult<i32> {
    if cfg.d != 1 {
        return Err(fail2("solve expects a single-goal game (d = 1); use solve-mgss"));
    }
    let grid = load_samples(cfg, true)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| fail2(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let models = fit_goal(cfg, 0, &grid)?;
    let opts = solve_options(cfg);
    match cfg.kernel {
        KernelChoice::Gaussian => {
            let a = common_cutoff(cfg, std::slice::from_ref(&models))?;
            let (game, mix_cells) = tail_matrix(cfg, 0, &models, a)?;
            let result = solve(&game, &opts).map_err(|e| fail2(e.to_string()))?;
            write_solve_outputs(cfg, &result, Some(a), a, &mix_cells)
        }
        KernelChoice::Epanechnikov => {
            warn_epanechnikov_solve();
            let cells: Vec<Vec<DistModel>> = models
                .into_iter()
                .map(|row| row.into_iter().map(DistModel::Kde).collect())
                .collect();
            let game =
                DensityMix::matrix(&cells, MOMENT_K_MAX).map_err(|e| fail2(e.to_string()))?;
            let result = solve(&game, &opts).map_err(|e| fail2(e.to_string()))?;
            let hi = cells
                .iter()
                .flatten()
                .map(|m| m.upper_support())
                .fold(f64::NEG_INFINITY, f64::max);
            write_solve_outputs(cfg, &result, None, hi, &cells)
        }
    }
}

fn write_solve_outputs<P: Payoff + RenderPayoff>(
    cfg: &RunConfig,
    result: &EquilibriumResult<P>,
    cutoff: Option<f64>,
    grid_hi: f64,
    mix_cells: &[Vec<DistModel>],
) -> CliResult<i32> {
    let mix = mixture_model(mix_cells, &result.p_star, &result.q_star)
        .map_err(|e| fail2(e.to_string()))?;
    let mix = DistModel::Mixture(mix);
    let series = "density_equilibrium.csv";
    write_series(&cfg.out_dir.join(series), 0.0, grid_hi, &|x| mix.density(x))?;
    if cfg.trace {
        write_trace(&cfg.out_dir.join("trace.csv"), &result.trace)?;
    }
    let doc = format!(
        "{{\"mode\":\"solve\",\"kernel\":\"{}\",\"converged\":{},\"iterations\":{},\"epsilon\":{},\"cutoff\":{},\"taylor_order\":{},\"p_star\":{},\"q_star\":{},\"v_low\":{},\"v_up\":{},\"equilibrium_series\":\"{series}\"}}\n",
        cfg.kernel.name(),
        result.converged,
        result.iterations,
        fnum(cfg.epsilon),
        cutoff.map_or("null".into(), fnum),
        if cutoff.is_some() { cfg.taylor_order.to_string() } else { "null".into() },
        farr(&result.p_star),
        farr(&result.q_star),
        result.v_low.payoff_json(),
        result.v_up.payoff_json(),
    );
    write_out(&cfg.out_dir.join("result.json"), &doc)?;
    Ok(finish_run(cfg, result.converged, &result.trace))
}

fn cmd_solve_mgss(cfg: &RunConfig) -> CliResult<i32> {
    let weights: Vec<f64> = match &cfg.weights {
        Some(w) => {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(fail2(format!("weights must sum to 1 (sum = {sum})")));
            }
            w.clone()
        }
        None => vec![1.0 / cfg.d as f64; cfg.d],
    };
    let grid = load_samples(cfg, true)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| fail2(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    let goals: Vec<Vec<Vec<KdeModel>>> = (0..cfg.d)
        .map(|g| fit_goal(cfg, g, &grid))
        .collect::<CliResult<_>>()?;
    let opts = solve_options(cfg);
    match cfg.kernel {
        KernelChoice::Gaussian => {
            let a = common_cutoff(cfg, &goals)?;
            let mut matrices = Vec::with_capacity(cfg.d);
            let mut mix_goals = Vec::with_capacity(cfg.d);
            for (g, models) in goals.iter().enumerate() {
                let (game, mix_cells) = tail_matrix(cfg, g, models, a)?;
                matrices.push(game);
                mix_goals.push(mix_cells);
            }
            let game = MultiGoalGame::new(matrices, Some(weights.clone()))
                .map_err(|e| fail2(e.to_string()))?;
            let result = solve_mgss(&game, &opts).map_err(|e| fail2(e.to_string()))?;
            write_mgss_outputs(cfg, &weights, &result, Some(a), a, &mix_goals)
        }
        KernelChoice::Epanechnikov => {
            warn_epanechnikov_solve();
            let mix_goals: Vec<Vec<Vec<DistModel>>> = goals
                .into_iter()
                .map(|models| {
                    models
                        .into_iter()
                        .map(|row| row.into_iter().map(DistModel::Kde).collect())
                        .collect()
                })
                .collect();
            let goal_refs: Vec<&[Vec<DistModel>]> =
                mix_goals.iter().map(|g| g.as_slice()).collect();
            let matrices = DensityMix::matrices(&goal_refs, MOMENT_K_MAX)
                .map_err(|e| fail2(e.to_string()))?;
            let hi = mix_goals
                .iter()
                .flatten()
                .flatten()
                .map(|m| m.upper_support())
                .fold(f64::NEG_INFINITY, f64::max);
            let game = MultiGoalGame::new(matrices, Some(weights.clone()))
                .map_err(|e| fail2(e.to_string()))?;
            let result = solve_mgss(&game, &opts).map_err(|e| fail2(e.to_string()))?;
            write_mgss_outputs(cfg, &weights, &result, None, hi, &mix_goals)
        }
    }
}

fn write_mgss_outputs<P: Payoff + RenderPayoff>(
    cfg: &RunConfig,
    weights: &[f64],
    result: &MgssResult<P>,
    cutoff: Option<f64>,
    grid_hi: f64,
    mix_goals: &[Vec<Vec<DistModel>>],
) -> CliResult<i32> {
    let mut series_names = Vec::with_capacity(mix_goals.len());
    for (g, cells) in mix_goals.iter().enumerate() {
        let mix = mixture_model(cells, &result.x_star, &result.y_stars[g])
            .map_err(|e| fail2(e.to_string()))?;
        let mix = DistModel::Mixture(mix);
        let file = format!("density_assurance_g{}.csv", g + 1);
        write_series(&cfg.out_dir.join(&file), 0.0, grid_hi, &|x| mix.density(x))?;
        series_names.push(format!("\"{file}\""));
    }
    if cfg.trace {
        write_trace(&cfg.out_dir.join("trace.csv"), &result.trace)?;
    }
    let join = |items: Vec<String>| format!("[{}]", items.join(","));
    let doc = format!(
        "{{\"mode\":\"solve-mgss\",\"kernel\":\"{}\",\"converged\":{},\"iterations\":{},\"epsilon\":{},\"cutoff\":{},\"taylor_order\":{},\"weights\":{},\"x_star\":{},\"y_worst_per_goal\":{},\"v_lows\":{},\"v_up\":{},\"assurance\":{},\"assurance_series\":{}}}\n",
        cfg.kernel.name(),
        result.converged,
        result.iterations,
        fnum(cfg.epsilon),
        cutoff.map_or("null".into(), fnum),
        if cutoff.is_some() { cfg.taylor_order.to_string() } else { "null".into() },
        farr(weights),
        farr(&result.x_star),
        join(result.y_stars.iter().map(|y| farr(y)).collect()),
        join(result.v_lows.iter().map(|v| v.payoff_json()).collect()),
        result.v_up.payoff_json(),
        join(result.assurance_payoffs.iter().map(|v| v.payoff_json()).collect()),
        join(series_names),
    );
    write_out(&cfg.out_dir.join("result.json"), &doc)?;
    Ok(finish_run(cfg, result.converged, &result.trace))
}
