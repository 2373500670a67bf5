//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when an input fails validation (the message
//! names the field), 1 for anything else.

mod problem;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{self, GridSpec, SweepConfig, TraceFormat};
use crate::critical::{self, CriticalConfig, CriticalPointReport};
use crate::error::{Error, Result};
use crate::error_exp::{self, ClassificationProblem, ExperimentConfig};
use crate::expfam::{self, ExpFamilyModel, ExpState, FeatureSpec};
use crate::prob::JointDistribution;
use crate::solve::{self, SolveOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::state::{BottleneckState, Framework};

pub use problem::{load_problem, parse_json, Problem};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BOTTLENECK_LAB_THREADS";
pub const DEFAULT_GRID: &str = "log:0.25:64:400";
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "bottleneck-lab",
    version,
    about = "Exact IB and dual IB solvers for discrete problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve at a single beta from a seeded random start.
    Solve(Flags),
    /// Anneal over a beta grid; writes traces and the critical points.
    Sweep(Flags),
    /// Anneal over a beta grid and write only the critical points.
    Critical(Flags),
    /// Solve the dual problem in the feature space of an exponential-family rule.
    Expfam(Flags),
    /// Monte-Carlo prediction error of trained IB and dual IB models.
    ErrorExp(Flags),
}

impl Command {
    fn tag(&self) -> CommandTag {
        match self {
            Command::Solve(_) => CommandTag::Solve,
            Command::Sweep(_) => CommandTag::Sweep,
            Command::Critical(_) => CommandTag::Critical,
            Command::Expfam(_) => CommandTag::Expfam,
            Command::ErrorExp(_) => CommandTag::ErrorExp,
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::Solve(f)
            | Command::Sweep(f)
            | Command::Critical(f)
            | Command::Expfam(f)
            | Command::ErrorExp(f) => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandTag {
    Solve,
    Sweep,
    Critical,
    Expfam,
    ErrorExp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    fn scale(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Units::Nats => "nats",
            Units::Bits => "bits",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FrameworkChoice {
    Ib,
    Dual,
    Both,
}

impl FrameworkChoice {
    fn frameworks(self) -> Vec<Framework> {
        match self {
            FrameworkChoice::Ib => vec![Framework::Ib],
            FrameworkChoice::Dual => vec![Framework::Dual],
            FrameworkChoice::Both => Framework::BOTH.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatChoice {
    Csv,
    Json,
}

impl From<FormatChoice> for TraceFormat {
    fn from(f: FormatChoice) -> Self {
        match f {
            FormatChoice::Csv => TraceFormat::Csv,
            FormatChoice::Json => TraceFormat::Json,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
struct Flags {
    /// JSON file with default values for any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem file (JSON or CSV).
    #[arg(long, visible_alias = "classes")]
    problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    framework: Option<FrameworkChoice>,
    #[arg(long)]
    beta: Option<f64>,
    /// `log|linear:MIN:MAX:POINTS`.
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    split_eps: Option<f64>,
    #[arg(long)]
    merge_tol: Option<f64>,
    #[arg(long)]
    refine_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Units of the printed summary. Files always store nats.
    #[arg(long, value_enum)]
    units: Option<Units>,
    /// Trace file format.
    #[arg(long, value_enum)]
    format: Option<FormatChoice>,
    /// Number of clusters of the random start (`solve`, `expfam`).
    #[arg(long)]
    n_xhat: Option<usize>,
    /// Monte-Carlo trials per model (`error-exp`).
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated beta values (`error-exp`).
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Comma-separated test sizes (`error-exp`).
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
}

/// Values accepted in a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem_path: Option<PathBuf>,
    framework: Option<FrameworkChoice>,
    beta: Option<f64>,
    beta_grid: Option<String>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    split_eps: Option<f64>,
    merge_tol: Option<f64>,
    refine_tol: Option<f64>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    units: Option<Units>,
    format: Option<FormatChoice>,
    n_xhat: Option<usize>,
    trials: Option<usize>,
    betas: Option<Vec<f64>>,
    n_values: Option<Vec<usize>>,
}

/// The effective configuration of a run, echoed as `run_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandTag,
    pub problem_path: Option<PathBuf>,
    pub framework: FrameworkChoice,
    pub beta: Option<f64>,
    pub beta_grid: Option<String>,
    pub tol: f64,
    pub max_iter: usize,
    pub split_eps: f64,
    pub merge_tol: f64,
    pub refine_tol: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub units: Units,
    pub format: FormatChoice,
    pub n_xhat: Option<usize>,
    pub trials: usize,
    pub betas: Vec<f64>,
    pub n_values: Vec<usize>,
}

impl RunConfig {
    /// Flags override the config file, which overrides the defaults.
    fn resolve(command: CommandTag, flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| Error::validation(format!("config {}", path.display()), e.to_string()))?
            }
            None => ConfigFile::default(),
        };
        let sweep = SweepConfig::default();
        let exp = ExperimentConfig::default();
        let cfg = Self {
            command,
            problem_path: flags.problem.clone().or(file.problem_path),
            framework: flags.framework.or(file.framework).unwrap_or(FrameworkChoice::Both),
            beta: flags.beta.or(file.beta),
            beta_grid: flags.beta_grid.clone().or(file.beta_grid),
            tol: flags.tol.or(file.tol).unwrap_or(DEFAULT_TOL),
            max_iter: flags.max_iter.or(file.max_iter).unwrap_or(DEFAULT_MAX_ITER),
            split_eps: flags.split_eps.or(file.split_eps).unwrap_or(sweep.split_eps),
            merge_tol: flags.merge_tol.or(file.merge_tol).unwrap_or(sweep.merge_tol),
            refine_tol: flags
                .refine_tol
                .or(file.refine_tol)
                .unwrap_or(CriticalConfig::default().refine_tol),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            output_dir: flags
                .output_dir
                .clone()
                .or(file.output_dir)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            units: flags.units.or(file.units).unwrap_or(Units::Nats),
            format: flags.format.or(file.format).unwrap_or(FormatChoice::Csv),
            n_xhat: flags.n_xhat.or(file.n_xhat),
            trials: flags.trials.or(file.trials).unwrap_or(exp.trials),
            betas: flags.betas.clone().or(file.betas).unwrap_or(exp.betas),
            n_values: flags.n_values.clone().or(file.n_values).unwrap_or(exp.n_values),
        };
        cfg.check()
    }

    fn check(mut self) -> Result<Self> {
        use CommandTag::*;
        match self.command {
            Solve => {
                if self.beta_grid.is_some() {
                    return Err(Error::validation("beta_grid", "`solve` takes a single --beta"));
                }
                if self.beta.is_none() {
                    return Err(Error::validation("beta", "`solve` requires --beta"));
                }
            }
            Sweep | Critical => {
                if self.beta.is_some() {
                    return Err(Error::validation("beta", "`sweep` and `critical` take --beta-grid"));
                }
                self.beta_grid.get_or_insert_with(|| DEFAULT_GRID.to_string());
            }
            Expfam => {
                if self.beta.is_some() == self.beta_grid.is_some() {
                    return Err(Error::validation(
                        "beta",
                        "`expfam` takes exactly one of --beta and --beta-grid",
                    ));
                }
            }
            ErrorExp => {
                if self.beta.is_some() || self.beta_grid.is_some() {
                    return Err(Error::validation("beta", "`error-exp` takes --betas"));
                }
            }
        }
        if self.command != ErrorExp && self.problem_path.is_none() {
            return Err(Error::validation("problem", "a problem file is required"));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::validation("beta", "must be finite and nonnegative"));
            }
        }
        if let Some(g) = &self.beta_grid {
            g.parse::<GridSpec>()?;
        }
        self.solve_options(false).validate()?;
        if !(0.0..0.5).contains(&self.split_eps) {
            return Err(Error::validation("split_eps", "must lie in [0, 0.5)"));
        }
        if !(self.merge_tol > 0.0) {
            return Err(Error::validation("merge_tol", "must be positive"));
        }
        if !(self.refine_tol > 0.0) {
            return Err(Error::validation("refine_tol", "must be positive"));
        }
        if self.n_xhat == Some(0) {
            return Err(Error::validation("n_xhat", "must be at least 1"));
        }
        if self.command == ErrorExp {
            self.experiment_config().validate()?;
        }
        Ok(self)
    }

    fn solve_options(&self, record_trace: bool) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            record_trace,
        }
    }

    fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            split_eps: self.split_eps,
            merge_tol: self.merge_tol,
            seed: self.seed,
            solve: self.solve_options(false),
        }
    }

    fn grid(&self) -> Result<GridSpec> {
        self.beta_grid
            .as_deref()
            .ok_or_else(|| Error::validation("beta_grid", "missing"))?
            .parse()
    }

    fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            betas: self.betas.clone(),
            n_values: self.n_values.clone(),
            trials: self.trials,
            seed: self.seed,
            sweep: self.sweep_config(),
            ..ExperimentConfig::default()
        }
    }

    fn problem_name(&self) -> String {
        self.problem_path
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "m8".to_string())
    }
}

/// What a run produced, for the summary and for tests.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Parses `args` (including the program name), runs the command and prints
/// the summary. Returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code.clamp(0, 255) as u8);
        }
    };
    let started = Instant::now();
    match run(&cli.command) {
        Ok(outcome) => {
            // a closed stdout must not turn a finished run into a failure
            let mut stdout = std::io::stdout().lock();
            for line in &outcome.lines {
                let _ = writeln!(stdout, "{line}");
            }
            for f in &outcome.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            let _ = writeln!(stdout, "wall time: {:.2} s", started.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::validation(THREADS_ENV, format!("expected a positive integer, got `{value}`")))?;
    // a pool built earlier in the same process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn run(command: &Command) -> Result<Outcome> {
    configure_threads()?;
    let cfg = RunConfig::resolve(command.tag(), command.flags())?;
    let problem = match &cfg.problem_path {
        Some(p) => Some(load_problem(p)?),
        None => None,
    };
    fs::create_dir_all(&cfg.output_dir).map_err(Error::io_at(&cfg.output_dir))?;
    let mut out = Outcome::default();
    let config_path = cfg.output_dir.join("run_config.json");
    write_json(&config_path, &cfg)?;
    out.files.push(config_path);
    match cfg.command {
        CommandTag::Solve => run_solve(&cfg, &problem.expect("checked"), &mut out)?,
        CommandTag::Sweep => run_sweep(&cfg, &problem.expect("checked"), true, &mut out)?,
        CommandTag::Critical => run_sweep(&cfg, &problem.expect("checked"), false, &mut out)?,
        CommandTag::Expfam => run_expfam(&cfg, &problem.expect("checked"), &mut out)?,
        CommandTag::ErrorExp => run_error_exp(&cfg, problem, &mut out)?,
    }
    Ok(out)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::json_at(path))?;
    text.push('\n');
    fs::write(path, text).map_err(Error::io_at(path))
}

#[derive(Serialize)]
struct SolveOutput {
    framework: Framework,
    beta: f64,
    iterations: usize,
    converged: bool,
    units: &'static str,
    i_x: f64,
    i_y: f64,
    functional: f64,
    expected_distortion: f64,
    marginal: Vec<f64>,
    encoder: Vec<Vec<f64>>,
    decoder: Vec<Vec<f64>>,
}

fn rows_of(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn run_solve(cfg: &RunConfig, problem: &Problem, out: &mut Outcome) -> Result<()> {
    let joint = problem.joint()?;
    let beta = cfg.beta.expect("checked");
    let k = cfg.n_xhat.unwrap_or(joint.n_x());
    let name = cfg.problem_name();
    for fw in cfg.framework.frameworks() {
        let init = BottleneckState::random(&joint, fw, beta, k, cfg.seed)?;
        let r = solve::solve(&joint, fw, beta, &init, &cfg.solve_options(false))?;
        let path = cfg.output_dir.join(format!("{name}_{fw}_solve.json"));
        write_json(
            &path,
            &SolveOutput {
                framework: fw,
                beta,
                iterations: r.iterations,
                converged: r.converged,
                units: "nats",
                i_x: r.i_x,
                i_y: r.i_y,
                functional: r.functional,
                expected_distortion: r.expected_distortion,
                marginal: r.state.marginal.to_vec(),
                encoder: rows_of(r.state.encoder.rows()),
                decoder: rows_of(r.state.decoder.rows()),
            },
        )?;
        out.files.push(path);
        let u = cfg.units;
        out.lines.push(format!(
            "{fw}: beta = {beta}, I_x = {:.3} {unit}, I_y = {:.3} {unit}, {} iterations{}",
            u.scale(r.i_x),
            u.scale(r.i_y),
            r.iterations,
            if r.converged { "" } else { " (not converged)" },
            unit = u.label(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct CriticalOutput<'a> {
    problem: String,
    beta_grid: String,
    reports: &'a [CriticalPointReport],
}

fn run_sweep(cfg: &RunConfig, problem: &Problem, write_traces: bool, out: &mut Outcome) -> Result<()> {
    let joint = problem.joint()?;
    let grid = cfg.grid()?;
    let name = cfg.problem_name();
    let crit = CriticalConfig {
        sweep: cfg.sweep_config(),
        refine_tol: cfg.refine_tol,
    };
    let betas = grid.values();
    out.lines.push(format!("{} beta values on {grid}", betas.len()));
    let mut reports = Vec::new();
    for fw in cfg.framework.frameworks() {
        let (trace, states) = anneal::sweep_with_states(&joint, fw, &grid, &crit.sweep)?;
        if write_traces {
            let fmt: TraceFormat = cfg.format.into();
            let path = cfg.output_dir.join(format!("{name}_{fw}_trace.{}", fmt.extension()));
            trace.export(&path, fmt)?;
            out.files.push(path);
        }
        let report = critical::find_critical_points_on(&joint, fw, &betas, &states, &crit)?;
        let last = trace.records.last().expect("nonempty grid");
        let flagged = trace.records.iter().filter(|r| r.flagged).count();
        out.lines.push(format!(
            "{fw}: {} critical points [{}], final clusters {}, I_x = {:.3} {unit}, I_y = {:.3} {unit}, {flagged} flagged",
            report.points.len(),
            report
                .points
                .iter()
                .map(|p| format!("{:.6}", p.beta_c))
                .collect::<Vec<_>>()
                .join(", "),
            last.effective_clusters,
            cfg.units.scale(last.i_x),
            cfg.units.scale(last.i_y),
            unit = cfg.units.label(),
        ));
        reports.push(report);
    }
    let path = cfg.output_dir.join(format!("{name}_critical.json"));
    write_json(
        &path,
        &CriticalOutput {
            problem: name,
            beta_grid: grid.to_string(),
            reports: &reports,
        },
    )?;
    out.files.push(path);
    Ok(())
}

fn expfam_model(problem: &Problem) -> Result<(ExpFamilyModel<f64>, JointDistribution<f64>)> {
    match problem {
        Problem::ExpFamily { model, joint } => Ok((model.clone(), joint.clone())),
        other => {
            let joint = other.joint()?;
            let model = ExpFamilyModel::from_conditional(&joint, FeatureSpec::Canonical).map_err(|e| match e {
                Error::Validation { reason, .. } => Error::validation(
                    "exp_family",
                    format!("{reason}; give an `exp_family` block for non-binary labels"),
                ),
                other => other,
            })?;
            Ok((model, joint))
        }
    }
}

fn run_expfam(cfg: &RunConfig, problem: &Problem, out: &mut Outcome) -> Result<()> {
    let (model, joint) = expfam_model(problem)?;
    let betas = match cfg.beta {
        Some(b) => vec![b],
        None => cfg.grid()?.values(),
    };
    let k = cfg.n_xhat.unwrap_or(joint.n_x());
    let init = BottleneckState::random(&joint, Framework::Dual, 0.0, k, cfg.seed)?;
    let start = ExpState::from_bottleneck(&model, &init)?;
    let opts = cfg.solve_options(false);
    let p_y = joint.p_y().to_vec();
    let rows = betas
        .par_iter()
        .map(|&b| {
            let r = expfam::exp_solve(&model, b, &start, &opts)?;
            let info = expfam::exp_information(&r.state, &model, &p_y)?;
            Ok((b, r, info))
        })
        .collect::<Result<Vec<_>>>()?;
    let path = cfg.output_dir.join(format!("{}_expfam.csv", cfg.problem_name()));
    let csv_err = Error::csv_at(&path);
    let mut w = csv::Writer::from_path(&path).map_err(&csv_err)?;
    w.write_record([
        "beta",
        "i_x",
        "i_y",
        "closed_form_i_x",
        "decoder_label_information",
        "iterations",
        "converged",
        "units",
    ])
    .map_err(&csv_err)?;
    for (b, r, info) in &rows {
        w.write_record([
            b.to_string(),
            r.i_x.to_string(),
            r.i_y.to_string(),
            info.compression.to_string(),
            info.decoder_label_information.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            "nats".to_string(),
        ])
        .map_err(&csv_err)?;
    }
    w.flush().map_err(Error::io_at(&path))?;
    drop(csv_err);
    out.files.push(path);
    let (b, r, _) = rows.last().expect("nonempty beta list");
    out.lines.push(format!(
        "expfam (d = {}): {} beta values, at beta = {b}: I_x = {:.3} {unit}, I_y = {:.3} {unit}",
        model.dim(),
        rows.len(),
        cfg.units.scale(r.i_x),
        cfg.units.scale(r.i_y),
        unit = cfg.units.label(),
    ));
    Ok(())
}

fn run_error_exp(cfg: &RunConfig, problem: Option<Problem>, out: &mut Outcome) -> Result<()> {
    let classes = match problem {
        None => ClassificationProblem::m8(),
        Some(Problem::Classes(c)) => c,
        Some(other) => {
            return Err(Error::validation(
                "class_conditionals",
                format!(
                    "`error-exp` needs a classification problem, got a {} problem",
                    other.kind()
                ),
            ))
        }
    };
    let exp = cfg.experiment_config();
    let curves = error_exp::run_prediction_experiment(&classes, &cfg.framework.frameworks(), &exp)?;
    let path = cfg.output_dir.join(format!("{}_error_exp.csv", cfg.problem_name()));
    error_exp::write_error_curves(&path, &curves)?;
    out.files.push(path);
    out.lines.push(format!(
        "{} classes, {} beta values, {} trials per point",
        classes.n_classes(),
        exp.betas.len(),
        exp.trials
    ));
    for fw in cfg.framework.frameworks() {
        if let Some((mean, _)) = error_exp::mean_over_beta(&curves, fw) {
            let n = exp.n_values.iter().zip(&mean).map(|(n, p)| format!("{n}:{p:.4}"));
            out.lines.push(format!(
                "{fw}: mean p_err over beta {}",
                n.collect::<Vec<_>>().join(" ")
            ));
        }
    }
    Ok(())
}

/// Writes the shipped eight-class problem (used to regenerate fixtures).
pub fn write_m8_fixture(path: &Path) -> Result<()> {
    error_exp::write_problem_json(path, &ClassificationProblem::m8())
}
