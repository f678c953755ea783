//! Command implementations behind the `wavecoef` binary: synthetic data
//! generation, reconstruction runs and operator self-checks.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use wavecoef::config::{NoiseModel, Scenario, ScenarioConfig};
use wavecoef::diagnostics::{self, AdjointHook, DiagnosticReport};
use wavecoef::error::Error;
use wavecoef::io::{
    read_observation_csv, write_field_csv, write_observation_csv, write_vtk, Header, HistoryWriter,
};
use wavecoef::observation::ObservationKind;
use wavecoef::pdps::{run_with, PdpsOutcome};
use wavecoef::prox::MultiBangLevels;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

pub const OBSERVATIONS: &str = "observations.csv";
pub const CLEAN_OBSERVATIONS: &str = "observations_clean.csv";

/// Distance below which a control value counts as sitting on a level.
pub const LEVEL_TOL: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    /// Bad input detected before any expensive work.
    Validation(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Run(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Run(e)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(max_iter) = self.max_iter {
            cfg.solver.max_iter = max_iter;
        }
        if let Some(tol) = self.tol {
            cfg.solver.tol = tol;
        }
    }
}

/// Reads a TOML config, applies overrides and validates the result.
pub fn load_config(path: &Path, overrides: &Overrides) -> CliResult<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_toml(&text)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn header(cfg: &ScenarioConfig) -> Header {
    Header::new()
        .with("scenario", &cfg.name)
        .with("config_hash", cfg.hash())
        .with("data_hash", cfg.data_hash())
        .with("seed", cfg.seed)
}

fn channel_names(scenario: &Scenario) -> Vec<String> {
    let obs = scenario.operator().observation();
    match obs.kind() {
        ObservationKind::Restriction => obs.observed_nodes().iter().map(|n| format!("node{n}")).collect(),
        ObservationKind::PatchMean => (0..obs.width()).map(|i| format!("patch{i}")).collect(),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn noise_label(noise: &NoiseModel) -> String {
    match noise {
        NoiseModel::None => "none".into(),
        NoiseModel::Gaussian { level } => format!("gaussian level={level}"),
        NoiseModel::Cosine { delta, terms } => format!("cosine delta={delta} terms={terms}"),
    }
}

/// Files written by [`generate_data`].
#[derive(Debug, Clone)]
pub struct DataFiles {
    pub config: PathBuf,
    pub observations: PathBuf,
    pub clean: PathBuf,
    pub exact_csv: PathBuf,
    pub exact_vtk: PathBuf,
}

/// Solves the state equation at the exact coefficient and writes noisy and
/// clean observations together with the exact coefficient.
pub fn generate_data(cfg: &ScenarioConfig, out: &Path) -> CliResult<DataFiles> {
    let scenario = Scenario::build(cfg)?;
    let data = scenario.generate_data()?;
    fs::create_dir_all(out)?;
    let op = scenario.operator();
    let grid = op.observation().grid();
    let names = channel_names(&scenario);
    let head = header(cfg).with("noise", noise_label(&cfg.noise));

    let files = DataFiles {
        config: out.join("config.toml"),
        observations: out.join(OBSERVATIONS),
        clean: out.join(CLEAN_OBSERVATIONS),
        exact_csv: out.join("exact_coefficient.csv"),
        exact_vtk: out.join("exact_coefficient.vtk"),
    };
    fs::write(&files.config, cfg.to_toml())?;
    write_observation_csv(create(&files.observations)?, &data.noisy, grid, &names, &head)?;
    write_observation_csv(
        create(&files.clean)?,
        &data.clean,
        grid,
        &names,
        &head.clone().with("noise", "none"),
    )?;
    let coefficient = op.coefficient(&data.exact_control)?;
    let control = op.control().extend(&data.exact_control, op.mesh().num_nodes());
    write_field_csv(create(&files.exact_csv)?, op.mesh(), "coefficient", &coefficient, &head)?;
    write_vtk(
        create(&files.exact_vtk)?,
        op.mesh(),
        &format!("{} exact coefficient", cfg.name),
        &[("coefficient", &coefficient), ("control", &control)],
    )?;
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelCount {
    pub level: f64,
    pub count: usize,
}

/// Written to `summary.toml` after a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub tol: f64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primal_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dual_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_sum: Option<f64>,
    pub control_dofs: usize,
    /// Fraction of control values within `LEVEL_TOL` of a level.
    pub fraction_at_levels: f64,
    pub level_counts: Vec<LevelCount>,
}

pub fn level_counts(u: &[f64], levels: &MultiBangLevels) -> Vec<LevelCount> {
    levels
        .values()
        .iter()
        .map(|&level| LevelCount {
            level,
            count: u.iter().filter(|v| (*v - level).abs() <= LEVEL_TOL).count(),
        })
        .collect()
}

fn summarize(cfg: &ScenarioConfig, out: &PdpsOutcome, seconds: f64) -> Summary {
    let last = out.final_report();
    let counts = level_counts(&out.u, &cfg.solver.levels);
    let at_levels = counts.iter().map(|c| c.count).sum::<usize>();
    Summary {
        scenario: cfg.name.clone(),
        config_hash: cfg.hash(),
        data_hash: cfg.data_hash(),
        seed: cfg.seed,
        converged: out.converged,
        iterations: out.iterations,
        tol: cfg.solver.tol,
        wall_time_s: seconds,
        objective: last.map(|r| r.objective),
        primal_residual: last.map(|r| r.primal),
        observation_residual: last.map(|r| r.observation),
        dual_residual: last.map(|r| r.dual),
        residual_sum: last.map(|r| r.sum),
        control_dofs: out.u.len(),
        fraction_at_levels: at_levels as f64 / out.u.len().max(1) as f64,
        level_counts: counts,
    }
}

/// Reads the noisy observations in `data` and checks them against `cfg`.
fn load_data(cfg: &ScenarioConfig, scenario: &Scenario, data: &Path) -> CliResult<wavecoef::observation::Observation> {
    let path = data.join(OBSERVATIONS);
    let file = File::open(&path)
        .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
    let (head, obs) = read_observation_csv(file)?;
    let op = scenario.operator().observation();
    if obs.kind() != op.kind() {
        return Err(CliError::Validation(format!(
            "{} holds {} observations, the config expects {}",
            path.display(),
            obs.kind().name(),
            op.kind().name()
        )));
    }
    let expected = op.zeros();
    if obs.num_times() != expected.num_times() || obs.width() != expected.width() {
        return Err(CliError::Validation(format!(
            "{} has {} time nodes x {} channels, the config expects {} x {}",
            path.display(),
            obs.num_times(),
            obs.width(),
            expected.num_times(),
            expected.width()
        )));
    }
    if let Some(hash) = head.get("data_hash") {
        if hash != cfg.data_hash() {
            eprintln!(
                "warning: {} was generated from a different scenario (data_hash {hash})",
                path.display()
            );
        }
    }
    Ok(obs)
}

/// Files and summary written by [`solve`].
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub summary: Summary,
    pub outcome: PdpsOutcome,
}

/// Runs the reconstruction on the data in `data` and writes the control,
/// the coefficient, the history and a summary to `out`. `progress`
/// receives every residual check.
pub fn solve<F: FnMut(&wavecoef::pdps::ResidualReport)>(
    cfg: &ScenarioConfig,
    data: &Path,
    out: &Path,
    mut progress: F,
) -> CliResult<SolveOutput> {
    let scenario = Scenario::build(cfg)?;
    let y_d = load_data(cfg, &scenario, data)?;
    fs::create_dir_all(out)?;
    let head = header(cfg);
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let op = scenario.operator();
    let mut history = HistoryWriter::new(create(&out.join("history.csv"))?, &head)?;
    let mut write_error = None;
    let start = Instant::now();
    let outcome = run_with(op, &y_d, &cfg.solver, |r| {
        if write_error.is_none() {
            write_error = history.push(r).err();
        }
        progress(r);
    })?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(e) = write_error {
        return Err(e.into());
    }
    history.finish()?.flush()?;

    let mesh = op.mesh();
    let control = op.control().extend(&outcome.u, mesh.num_nodes());
    write_field_csv(create(&out.join("control.csv"))?, mesh, "control", &control, &head)?;
    write_field_csv(
        create(&out.join("coefficient.csv"))?,
        mesh,
        "coefficient",
        &outcome.coefficient,
        &head,
    )?;
    write_vtk(
        create(&out.join("reconstruction.vtk"))?,
        mesh,
        &format!("{} reconstruction", cfg.name),
        &[("coefficient", &outcome.coefficient), ("control", &control)],
    )?;
    let summary = summarize(cfg, &outcome, seconds);
    let text = toml::to_string_pretty(&summary)
        .map_err(|e| CliError::Run(Error::Config(format!("summary serialization: {e}"))))?;
    fs::write(out.join("summary.toml"), text)?;
    Ok(SolveOutput { summary, outcome })
}

/// Runs the operator self-checks, optionally on a coarser discretization.
pub fn adjoint_test(
    cfg: &ScenarioConfig,
    resolution: Option<(usize, usize, usize)>,
    hook: AdjointHook,
) -> CliResult<DiagnosticReport> {
    let cfg = match resolution {
        Some((nx, ny, steps)) => cfg.clone().with_resolution(nx, ny, steps),
        None => cfg.clone(),
    };
    let scenario = Scenario::build(&cfg)?;
    Ok(diagnostics::run(
        scenario.operator(),
        cfg.solver.steps,
        cfg.solver.geometry,
        cfg.seed,
        hook,
    )?)
}
