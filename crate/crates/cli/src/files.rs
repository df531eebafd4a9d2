use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use framefit::radar::{NoiseModel, RadarGeometry, RadarScenario, TargetState};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A failure reported as `error[kind]: message` with a process exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: "usage", message: message.into(), code: 2 }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self { kind: "io", message: format!("{}: {err}", path.display()), code: 1 }
    }

    pub fn parse(path: &Path, err: serde_json::Error) -> Self {
        Self { kind: "parse", message: format!("{}: {err}", path.display()), code: 1 }
    }

    pub fn validation(path: &Path, message: impl fmt::Display) -> Self {
        Self { kind: "validation", message: format!("{}: {message}", path.display()), code: 1 }
    }
}

impl From<framefit::Error> for CliError {
    fn from(err: framefit::Error) -> Self {
        use framefit::Error::*;
        let kind = match &err {
            RankDeficient { .. } => "rank-deficient",
            DimensionMismatch { .. } => "dimension",
            MissingSecondOrder | InvalidStep => "internal",
            EmptyDomain => "empty-domain",
            LeftDomain => "left-domain",
            SingularHessian { .. } => "singular-hessian",
            NearSingular { .. } => "near-singular",
            AllCandidatesFailed => "all-candidates-failed",
            NonFinite(_) => "non-finite",
            Invalid(_) => "invalid",
        };
        Self { kind, message: err.to_string(), code: 1 }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {}", self.kind, line.trim())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseFile {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dim: usize,
    pub transmitters: Vec<Vec<f64>>,
    pub receivers: Vec<Vec<f64>>,
    pub target: TargetFile,
    #[serde(default)]
    pub noise: NoiseFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesFile {
    pub times: Vec<f64>,
    pub w: Vec<Vec<f64>>,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

pub fn load_scenario(path: &Path) -> CliResult<RadarScenario<f64>> {
    let file: ScenarioFile = read_json(path)?;
    let geometry = RadarGeometry::from_coords(file.dim, &file.transmitters, &file.receivers)
        .map_err(|e| CliError::validation(path, e))?;
    let scenario = RadarScenario {
        geometry,
        truth: TargetState {
            position: DVector::from_vec(file.target.position),
            velocity: DVector::from_vec(file.target.velocity),
        },
        noise: NoiseModel { sigma: file.noise.sigma, seed: file.noise.seed },
    };
    scenario.validate().map_err(|e| CliError::validation(path, e))?;
    Ok(scenario)
}

/// Absolute form of an input path, so a manifest can be replayed from any
/// working directory.
pub fn absolute(path: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(path).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    write_text(path, &text)
}

/// Renders a CSV writer's output into a file.
pub fn write_csv(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    render(&mut buf).map_err(|e| CliError::io(path, e))?;
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}
