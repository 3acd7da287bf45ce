use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_setup, MeasurementSetup, NoiseData, ValidationReport};
use crate::numerics::ComplexMatrix;

/// Row-major nested arrays with `[re, im]` entries.
pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

/// On-disk form of a setup.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetupFile {
    #[serde(default)]
    pub label: String,
    pub hamiltonian: JsonMatrix,
    #[serde(default)]
    pub measured_ops: Vec<JsonMatrix>,
    pub noise: NoiseData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<JsonMatrix>,
}

/// Fixtures shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("qubit_sz", include_str!("../../fixtures/qubit_sz.json")),
    ("qubit_two_detectors", include_str!("../../fixtures/qubit_two_detectors.json")),
    ("qubit_cross_noise", include_str!("../../fixtures/qubit_cross_noise.json")),
    ("saturated_minimum", include_str!("../../fixtures/saturated_minimum.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn to_matrix(m: &JsonMatrix, field: &str, context: &str) -> Result<ComplexMatrix> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if let Some(bad) = m.iter().position(|row| row.len() != cols) {
        return Err(Error::Parse {
            context: context.into(),
            message: format!("field `{field}`: row {bad} has {} entries, expected {cols}", m[bad].len()),
        });
    }
    let data = m.iter().flatten().map(|[re, im]| Complex64::new(*re, *im)).collect();
    ComplexMatrix::from_vec(rows, cols, data)
}

pub fn to_json_matrix(m: &ComplexMatrix) -> JsonMatrix {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

/// A parsed setup with its initial state (maximally mixed when absent).
#[derive(Clone, Debug)]
pub struct LoadedSetup {
    pub setup: MeasurementSetup,
    pub initial_state: ComplexMatrix,
    pub report: ValidationReport,
}

/// Parses setup JSON without judging physical validity.
pub fn parse_setup(text: &str, context: &str) -> Result<(MeasurementSetup, ComplexMatrix)> {
    let file: SetupFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: context.into(),
        message: e.to_string(),
    })?;
    let hamiltonian = to_matrix(&file.hamiltonian, "hamiltonian", context)?;
    let ops = file
        .measured_ops
        .iter()
        .enumerate()
        .map(|(k, m)| to_matrix(m, &format!("measured_ops[{k}]"), context))
        .collect::<Result<Vec<_>>>()?;
    let label = if file.label.is_empty() { context.to_string() } else { file.label.clone() };
    let setup = MeasurementSetup::new(hamiltonian, ops, file.noise, label)?;
    let d = setup.dim();
    let initial = match &file.initial_state {
        Some(m) => to_matrix(m, "initial_state", context)?,
        None => ComplexMatrix::identity(d).scale_real(1.0 / d as f64),
    };
    if initial.rows() != d || initial.cols() != d {
        return Err(Error::Parse {
            context: context.into(),
            message: format!("field `initial_state` must be {d}x{d}"),
        });
    }
    Ok((setup, initial))
}

/// Setup text from a file path or a bundled fixture name.
pub fn read_setup_text(path_or_name: &str) -> Result<(String, String)> {
    let path = Path::new(path_or_name);
    if path.exists() {
        return Ok((std::fs::read_to_string(path)?, path.display().to_string()));
    }
    bundled(path_or_name)
        .map(|text| (text.to_string(), path_or_name.to_string()))
        .ok_or_else(|| Error::InvalidInput(format!("no setup file or bundled fixture named {path_or_name:?}")))
}

/// Parses and validates; failed checks are reported by name.
pub fn load_setup(path_or_name: &str) -> Result<LoadedSetup> {
    let (text, context) = read_setup_text(path_or_name)?;
    let (setup, initial_state) = parse_setup(&text, &context)?;
    let report = validate_setup(&setup);
    if !report.overall {
        return Err(Error::ValidationFailed(report.failures().iter().map(|c| c.name.clone()).collect()));
    }
    Ok(LoadedSetup {
        setup,
        initial_state,
        report,
    })
}

pub fn setup_to_json(setup: &MeasurementSetup, initial_state: Option<&ComplexMatrix>) -> Result<String> {
    let file = SetupFile {
        label: setup.label.clone(),
        hamiltonian: to_json_matrix(&setup.hamiltonian),
        measured_ops: setup.measured_ops.iter().map(to_json_matrix).collect(),
        noise: setup.noise.clone(),
        initial_state: initial_state.map(to_json_matrix),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse {
        context: setup.label.clone(),
        message: e.to_string(),
    })
}
