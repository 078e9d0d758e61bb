//! On-disk formats: JSON seeds and gait libraries (schema `gaitforge/1`),
//! CSV tables and two-column plot data.

use std::fs;
use std::io::Write;
use std::path::Path;

use gaitforge::compass_gait::{CompassGait, MassMatrixReading, GAMMA, V_AVG};
use gaitforge::continuation::{Termination, TurningPoint};
use gaitforge::direct::{Classification, DirectDecision, DirectLayout, InputBasis};
use gaitforge::indirect::{IndirectDecision, IndirectLayout};
use gaitforge::reconstruct::{PassiveGait, SeedDiagnostics};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA: &str = "gaitforge/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileKind {
    Seed,
    Library,
    Comparison,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Indirect,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Indirect => "indirect",
            Method::Direct => "direct",
        }
    }
}

/// Model and its variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub mass_matrix: MassMatrixReading,
}

impl ModelSpec {
    pub fn compass_gait(reading: MassMatrixReading) -> Self {
        Self {
            name: "compass-gait".into(),
            mass_matrix: reading,
        }
    }

    pub fn build(&self) -> Result<CompassGait, CliError> {
        match self.name.as_str() {
            "compass-gait" => Ok(CompassGait::default().with_reading(self.mass_matrix)),
            other => Err(CliError::Usage(format!("unknown model '{other}'"))),
        }
    }
}

/// Numerical settings recorded with every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub newton_tol: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub fd_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFile {
    pub schema: String,
    pub kind: FileKind,
    pub model: ModelSpec,
    pub created: String,
    pub passive: PassiveGait,
    pub sigma: DVector<f64>,
    pub decision: IndirectDecision,
    pub residual_norm: f64,
    pub diagnostics: SeedDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryMetadata {
    pub model: ModelSpec,
    pub method: Method,
    /// `gamma` or `v_avg`.
    pub param: String,
    pub param_index: usize,
    /// Parameters of the run; the continuation entry holds its start value.
    /// Angles are in radians.
    pub sigma: DVector<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<InputBasis>,
    pub tolerances: ToleranceConfig,
    pub version: String,
    pub created: String,
    pub termination: Termination,
    pub turning_points: Vec<TurningPoint>,
    /// `+1` or `-1`: the run advances along `direction * tangent`.
    pub direction: f64,
}

/// One accepted point. Indirect runs fill `p0`, `q` and `u0`; direct runs
/// fill `xi` and, when requested, `classification`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub sigma: f64,
    pub t: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub cost: f64,
    pub residual_norm: f64,
    pub tangent: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<Classification>,
}

impl PointRecord {
    pub fn from_indirect(chi: &IndirectDecision, sigma_k: f64, cost: f64, residual_norm: f64, tangent: &DVector<f64>) -> Self {
        Self {
            sigma: sigma_k,
            t: chi.t,
            x0: chi.x0.as_slice().to_vec(),
            p0: Some(chi.p0.as_slice().to_vec()),
            q: Some(chi.q),
            u0: Some(chi.u0.as_slice().to_vec()),
            xi: None,
            lambda: chi.lambda.as_slice().to_vec(),
            cost,
            residual_norm,
            tangent: tangent.as_slice().to_vec(),
            classification: None,
        }
    }

    pub fn from_direct(
        chi: &DirectDecision,
        sigma_k: f64,
        cost: f64,
        residual_norm: f64,
        tangent: &DVector<f64>,
        classification: Option<Classification>,
    ) -> Self {
        Self {
            sigma: sigma_k,
            t: chi.t,
            x0: chi.x0.as_slice().to_vec(),
            p0: None,
            q: None,
            u0: None,
            xi: Some(chi.xi.as_slice().to_vec()),
            lambda: chi.lambda_hat.as_slice().to_vec(),
            cost,
            residual_norm,
            tangent: tangent.as_slice().to_vec(),
            classification,
        }
    }

    pub fn indirect(&self) -> Result<IndirectDecision, CliError> {
        let missing = |f: &str| CliError::Format(format!("indirect point without '{f}'"));
        Ok(IndirectDecision {
            t: self.t,
            x0: DVector::from_column_slice(&self.x0),
            p0: DVector::from_column_slice(self.p0.as_ref().ok_or_else(|| missing("p0"))?),
            q: self.q.ok_or_else(|| missing("q"))?,
            u0: DVector::from_column_slice(self.u0.as_ref().ok_or_else(|| missing("u0"))?),
            lambda: DVector::from_column_slice(&self.lambda),
        })
    }

    pub fn direct(&self) -> Result<DirectDecision, CliError> {
        Ok(DirectDecision {
            t: self.t,
            x0: DVector::from_column_slice(&self.x0),
            xi: DVector::from_column_slice(
                self.xi
                    .as_ref()
                    .ok_or_else(|| CliError::Format("direct point without 'xi'".into()))?,
            ),
            lambda_hat: DVector::from_column_slice(&self.lambda),
        })
    }

    /// Continuation vector `(chi, sigma_k)` for `method`.
    pub fn nu(&self, method: Method, model: &CompassGait, basis: Option<&InputBasis>) -> Result<DVector<f64>, CliError> {
        let v = match method {
            Method::Indirect => {
                let v = self.indirect()?.to_vector();
                let n = IndirectLayout::of(model).len();
                if v.len() != n {
                    return Err(CliError::Format(format!("indirect point has {} entries, model needs {n}", v.len())));
                }
                v
            }
            Method::Direct => {
                let basis = basis.ok_or_else(|| CliError::Format("direct library without basis".into()))?;
                let chi = self.direct()?;
                let layout = DirectLayout::new(model, basis);
                if chi.to_vector().len() != layout.len() {
                    return Err(CliError::Format(format!(
                        "direct point has {} entries, basis needs {}",
                        chi.to_vector().len(),
                        layout.len()
                    )));
                }
                chi.to_vector()
            }
        };
        let mut out = v.as_slice().to_vec();
        out.push(self.sigma);
        Ok(DVector::from_vec(out))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitLibraryFile {
    pub schema: String,
    pub kind: FileKind,
    pub metadata: LibraryMetadata,
    pub points: Vec<PointRecord>,
}

/// Name and index of a continuation parameter of the compass gait.
pub fn parameter_index(name: &str) -> Result<usize, CliError> {
    match name {
        "gamma" => Ok(GAMMA),
        "v_avg" | "v-avg" => Ok(V_AVG),
        other => Err(CliError::Usage(format!("unknown parameter '{other}' (gamma|v_avg)"))),
    }
}

pub fn parameter_name(index: usize) -> &'static str {
    if index == GAMMA {
        "gamma"
    } else {
        "v_avg"
    }
}

/// Value as shown to users: slopes in degrees.
pub fn display_value(index: usize, v: f64) -> f64 {
    if index == GAMMA {
        v.to_degrees()
    } else {
        v
    }
}

pub fn internal_value(index: usize, v: f64) -> f64 {
    if index == GAMMA {
        v.to_radians()
    } else {
        v
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
struct Header {
    schema: String,
    kind: FileKind,
}

/// A seed or a library, whichever `path` holds.
#[derive(Debug, Clone)]
pub enum StartFile {
    Seed(Box<SeedFile>),
    Library(Box<GaitLibraryFile>),
}

pub fn read_start(path: &Path) -> Result<StartFile, CliError> {
    let header: Header = read_json(path)?;
    if header.schema != SCHEMA {
        return Err(CliError::Format(format!("{}: unsupported schema '{}'", path.display(), header.schema)));
    }
    match header.kind {
        FileKind::Seed => Ok(StartFile::Seed(Box::new(read_json(path)?))),
        FileKind::Library => Ok(StartFile::Library(Box::new(read_json(path)?))),
        FileKind::Comparison => Err(CliError::Format(format!("{}: a comparison is not a start point", path.display()))),
    }
}

pub fn read_library(path: &Path) -> Result<GaitLibraryFile, CliError> {
    match read_start(path)? {
        StartFile::Library(l) => Ok(*l),
        StartFile::Seed(_) => Err(CliError::Format(format!("{}: expected a library, found a seed", path.display()))),
    }
}

/// Two whitespace-separated columns with a commented header.
pub fn write_plot_data(path: &Path, x_name: &str, y_name: &str, rows: &[(f64, f64)]) -> Result<(), CliError> {
    let mut out = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut text = format!("# {x_name} {y_name}\n");
    for (x, y) in rows {
        text.push_str(&format!("{x:e} {y:e}\n"));
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameters_by_name() {
        assert_eq!(parameter_index("gamma").unwrap(), GAMMA);
        assert_eq!(parameter_index("v-avg").unwrap(), V_AVG);
        assert!(parameter_index("mass").is_err());
        assert!((internal_value(GAMMA, 180.0) - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(display_value(V_AVG, 0.3), 0.3);
    }

    #[test]
    fn record_round_trip_is_lossless() {
        let chi = IndirectDecision {
            t: 2.4073571714349063,
            x0: DVector::from_vec(vec![0.1 + 0.2, -1e-17, 1.0 / 3.0, std::f64::consts::E]),
            p0: DVector::from_vec(vec![1e-300, 5e-324, -0.0, 7.0]),
            q: 5.130785375205792,
            u0: DVector::from_vec(vec![-0.011395098318842296]),
            lambda: DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
        };
        let rec = PointRecord::from_indirect(&chi, 0.0038377, 2.2094904574479878e-4, 1e-11, &DVector::from_element(14, 0.1));
        let text = serde_json::to_string(&rec).unwrap();
        let back: PointRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.indirect().unwrap(), chi);
    }
}
