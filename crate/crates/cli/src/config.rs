//! Scenario configuration: a TOML file plus `--set key=value` overrides.

use std::path::Path;

use riskmf::fpk::FpkSettings;
use riskmf::lq_value::{McSettings, Scenario};
use riskmf::model::{risk_seeking_transform, GenericModel, LawStatistic};
use riskmf::{InitialLaw, LQMatrixModel, LQScalarModel, RiskParams, TimeGrid};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Scalar,
    Matrix,
    Generic,
}

/// `[model]`. Which fields are required depends on `kind`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub sigma: Option<f64>,
    pub r: Option<f64>,
    pub q: Option<f64>,
    pub qT: Option<f64>,
    pub A: Option<Vec<Vec<f64>>>,
    pub B: Option<Vec<Vec<f64>>>,
    pub Q: Option<Vec<Vec<f64>>>,
    pub R: Option<Vec<Vec<f64>>>,
    pub QT: Option<Vec<Vec<f64>>>,
    pub Sigma: Option<Vec<Vec<f64>>>,
    /// Catalog entry for `kind = "generic"`.
    pub name: Option<String>,
    #[serde(default = "default_init")]
    pub init: InitialLaw,
}

fn default_init() -> InitialLaw {
    InitialLaw::Dirac { x0: 1.0 }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    /// Treat the problem as risk seeking (`α → −alpha`).
    #[serde(default)]
    pub risk_seeking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Optimal,
    Zero,
    ConstantGain,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    /// Gain `k` of `v = −k x` when `policy = "constant_gain"`.
    #[serde(default)]
    pub gain: f64,
    /// Record a particle snapshot every this many steps (0: terminal only).
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_particles() -> usize {
    10_000
}

fn default_policy() -> PolicyKind {
    PolicyKind::Optimal
}

impl Default for McSection {
    fn default() -> Self {
        McSection { n_particles: default_particles(), seed: 0, policy: default_policy(), gain: 0.0, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpkSection {
    #[serde(default = "default_nx")]
    pub n_x: usize,
    #[serde(default = "default_nz")]
    pub n_z: usize,
    pub x_bounds: Option<(f64, f64)>,
    #[serde(default = "default_z_factor")]
    pub z_max_factor: f64,
}

fn default_nx() -> usize {
    400
}

fn default_nz() -> usize {
    200
}

fn default_z_factor() -> f64 {
    1.5
}

impl Default for FpkSection {
    fn default() -> Self {
        FpkSection { n_x: default_nx(), n_z: default_nz(), x_bounds: None, z_max_factor: default_z_factor() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: default_dir(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted key, e.g. `risk.alpha`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_id")]
    pub id: String,
    pub model: ModelSection,
    pub risk: RiskSection,
    pub grid: TimeGrid,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub fpk: FpkSection,
    #[serde(default)]
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
}

fn default_id() -> String {
    "scenario".into()
}

/// Parses the raw text of an override value: TOML syntax when it parses
/// (`1.5`, `true`, `[1, 2]`, `{ kind = "dirac", x0 = 1 }`), else a string.
fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Sets `value` at a dotted path, creating intermediate tables.
pub fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::input(format!("bad override key '{key}'")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::input(format!("override '{key}': '{part}' is not a table"))),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies `key=value` overrides to a parsed document.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("override '{o}' is not key=value")))?;
        set_path(doc, key.trim(), parse_override_value(raw.trim()))?;
    }
    Ok(())
}

pub fn read_document(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config '{}': {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::input(format!("config parse error: {}", e.message())))
}

fn check_finite(doc: &toml::Value, path: &str) -> Result<(), CliError> {
    match doc {
        toml::Value::Float(f) if !f.is_finite() => Err(CliError::input(format!("'{path}' is not finite"))),
        toml::Value::Table(t) => t.iter().try_for_each(|(k, v)| check_finite(v, &format!("{path}.{k}"))),
        toml::Value::Array(a) => a.iter().enumerate().try_for_each(|(i, v)| check_finite(v, &format!("{path}[{i}]"))),
        _ => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn from_document(doc: toml::Table) -> Result<Self, CliError> {
        let value = toml::Value::Table(doc);
        check_finite(&value, "config")?;
        ScenarioConfig::deserialize(value).map_err(|e| CliError::input(format!("config error: {e}")))
    }

    pub fn risk(&self) -> Result<RiskParams, CliError> {
        Ok(RiskParams::new(self.risk.alpha, self.risk.beta)?)
    }

    /// The scalar model, rejecting other kinds and risk-seeking problems
    /// (the closed-form routes assume `α > 0`).
    pub fn scalar_model(&self) -> Result<LQScalarModel, CliError> {
        let m = &self.model;
        if m.kind != ModelKind::Scalar {
            return Err(CliError::input("this command needs model.kind = \"scalar\""));
        }
        if self.risk.risk_seeking {
            return Err(CliError::input("risk_seeking is only supported for generic models in `simulate`"));
        }
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::input(format!("model.{name} is required")));
        Ok(LQScalarModel {
            a: need(m.a, "a")?,
            b: need(m.b, "b")?,
            sigma: need(m.sigma, "sigma")?,
            r: m.r.unwrap_or(1.0),
            q: m.q.unwrap_or(0.0),
            q_t: m.qT.unwrap_or(1.0),
        })
    }

    pub fn matrix_model(&self) -> Result<LQMatrixModel, CliError> {
        let m = &self.model;
        let need = |v: &Option<Vec<Vec<f64>>>, name: &str| {
            v.clone().ok_or_else(|| CliError::input(format!("model.{name} is required")))
        };
        let rows = |v: Vec<Vec<f64>>| riskmf::model::matrix_from_rows(&v);
        Ok(LQMatrixModel::new(
            rows(need(&m.A, "A")?)?,
            rows(need(&m.B, "B")?)?,
            rows(need(&m.Q, "Q")?)?,
            rows(need(&m.R, "R")?)?,
            rows(need(&m.QT, "QT")?)?,
            rows(need(&m.Sigma, "Sigma")?)?,
        )?)
    }

    /// Callback model for `simulate`: scalar models map to their generic
    /// form, generic ones come from the catalog. Risk-seeking flips the
    /// sign of the costs.
    pub fn generic_model(&self) -> Result<GenericModel, CliError> {
        let model = match self.model.kind {
            ModelKind::Scalar => {
                let m = self.scalar_model()?;
                m.to_generic(self.risk.beta)
            }
            ModelKind::Matrix => return Err(CliError::input("matrix models cannot be simulated")),
            ModelKind::Generic => catalog(self)?,
        };
        Ok(if self.risk.risk_seeking { risk_seeking_transform(&model) } else { model })
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let model = self.scalar_model()?;
        let init = self.model.init.clone();
        let fpk = match self.fpk.x_bounds {
            Some(b) => FpkSettings { n_x: self.fpk.n_x, n_z: self.fpk.n_z, x_bounds: b, z_max_factor: self.fpk.z_max_factor },
            None => FpkSettings {
                z_max_factor: self.fpk.z_max_factor,
                ..FpkSettings::default_for(&model, &init, self.grid.horizon(), self.fpk.n_x, self.fpk.n_z)
            },
        };
        Ok(Scenario {
            id: self.id.clone(),
            model,
            risk: self.risk()?,
            init,
            grid: self.grid,
            mc: McSettings { n_particles: self.mc.n_particles, seed: self.mc.seed },
            fpk,
        })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }
}

/// Built-in callback models. Each uses `a`, `b`, `sigma` from `[model]`
/// when given.
fn catalog(cfg: &ScenarioConfig) -> Result<GenericModel, CliError> {
    let m = &cfg.model;
    let a = m.a.unwrap_or(0.0);
    let b = m.b.unwrap_or(1.0);
    let sigma = m.sigma.unwrap_or(1.0);
    let beta = cfg.risk.beta;
    let name = m.name.as_deref().ok_or_else(|| CliError::input("model.name is required for generic models"))?;
    let model = match name {
        // quadratic costs with a mean-attracting drift
        "mean_reverting" => GenericModel::new(
            |x, _, v| 0.5 * (x * x + v * v),
            move |x, stat, v| a * (stat - x) + b * v,
            move |_| sigma,
            move |x, stat| 0.5 * x * x + beta * stat,
        )
        .with_law_stat(LawStatistic::Mean),
        // double-well running cost in x
        "double_well" => GenericModel::new(
            |x, _, v| 0.25 * (x * x - 1.0).powi(2) + 0.5 * v * v,
            move |x, _, v| a * x + b * v,
            move |_| sigma,
            move |x, stat| 0.5 * x * x + beta * stat,
        )
        .with_law_stat(LawStatistic::Mean),
        other => return Err(CliError::input(format!("unknown generic model '{other}'"))),
    };
    Ok(model)
}
