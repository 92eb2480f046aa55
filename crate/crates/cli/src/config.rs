//! Experiment configuration: loading, overrides and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use tonelli_core::hamiltonian::ParamRecord;
use tonelli_core::{Catalogue, Hamiltonian, IntegratorSpec, Scheme};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Flow,
    Minimize,
    TorusPeriodic,
    Green,
    Lyapunov,
    Kam,
    Alpha,
    Foliation,
    Acceptance,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Flow => "flow",
            Task::Minimize => "minimize",
            Task::TorusPeriodic => "torus-periodic",
            Task::Green => "green",
            Task::Lyapunov => "lyapunov",
            Task::Kam => "kam",
            Task::Alpha => "alpha",
            Task::Foliation => "foliation",
            Task::Acceptance => "acceptance",
        }
    }

    pub fn needs_hamiltonian(&self) -> bool {
        *self != Task::Acceptance
    }

    /// Tasks that integrate with the `integrator` section; the others carry
    /// their own step in `params.options`.
    pub fn uses_integrator(&self) -> bool {
        matches!(self, Task::Flow | Task::Green | Task::Lyapunov)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A number or a list of numbers; a bare number is a list of length one.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Coords(pub Vec<f64>);

impl<'de> Deserialize<'de> for Coords {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            One(f64),
            Many(Vec<f64>),
        }
        Ok(
            match Raw::deserialize(d).map_err(|_| serde::de::Error::custom("expected a number or a list of numbers"))? {
                Raw::One(v) => Coords(vec![v]),
                Raw::Many(v) => Coords(v),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, Coords>,
}

impl HamiltonianConfig {
    pub fn build(&self) -> Result<Catalogue, CliError> {
        let record: ParamRecord = self.params.iter().map(|(k, v)| (k.clone(), v.0.clone())).collect();
        Catalogue::from_name(&self.name, &record).map_err(|e| CliError::Config(format!("hamiltonian: {e}")))
    }
}

/// Integrator overrides; unset fields follow the model (Verlet when
/// separable, implicit midpoint otherwise, step 1e-3).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
}

pub const DEFAULT_STEP: f64 = 1e-3;

impl IntegratorConfig {
    pub fn spec(&self, h: &dyn Hamiltonian) -> Result<IntegratorSpec, CliError> {
        let mut spec = IntegratorSpec::for_model(h, self.step.unwrap_or(DEFAULT_STEP));
        if let Some(s) = self.scheme {
            if s == Scheme::StormerVerlet && !h.is_separable() {
                return Err(CliError::Config(format!(
                    "integrator.scheme: stormer-verlet needs a separable model, {} is not",
                    h.name()
                )));
            }
            spec.scheme = s;
        }
        if let Some(t) = self.tolerance {
            spec.tolerance = t;
        }
        if let Some(m) = self.max_iterations {
            spec.max_iterations = m;
        }
        spec.validate()
            .map_err(|e| CliError::Config(format!("integrator: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    pub task: Task,
    /// Task-specific record, validated by the task.
    #[serde(default = "empty_object")]
    pub params: Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Where `params` sits in the config file, for diagnostics.
    #[serde(skip)]
    pub source: Option<ParamsSource>,
}

/// Verbatim text of `params` and the position where it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsSource {
    pub origin: String,
    pub raw: String,
    pub line: usize,
    pub column: usize,
}

impl ParamsSource {
    fn locate(origin: &str, text: &str) -> Option<Self> {
        #[derive(Deserialize)]
        struct Probe<'a> {
            #[serde(borrow)]
            params: Option<&'a serde_json::value::RawValue>,
        }
        let raw = serde_json::from_str::<Probe>(text).ok()?.params?.get();
        // the raw value borrows from `text`
        let offset = raw.as_ptr() as usize - text.as_ptr() as usize;
        let raw = raw.to_string();
        let before = &text[..offset];
        let line = before.matches('\n').count() + 1;
        let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        Some(ParamsSource {
            origin: origin.into(),
            raw,
            line,
            column,
        })
    }

    /// File position of a line and column inside `raw`.
    fn position(&self, line: usize, column: usize) -> (usize, usize) {
        if line <= 1 {
            (self.line, self.column + column - 1)
        } else {
            (self.line + line - 1, column)
        }
    }
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn hamiltonian(&self) -> Result<Catalogue, CliError> {
        match &self.hamiltonian {
            Some(h) => h.build(),
            None => Err(CliError::Config(format!(
                "task {} needs a hamiltonian section",
                self.task
            ))),
        }
    }

    pub fn integrator_spec(&self, h: &dyn Hamiltonian) -> Result<IntegratorSpec, CliError> {
        self.integrator.clone().unwrap_or_default().spec(h)
    }

    /// Deserialize `params` into the task's record; unknown keys are rejected.
    pub fn task_params<T: serde::de::DeserializeOwned>(&self) -> Result<T, CliError> {
        if let Some(src) = &self.source {
            let mut de = serde_json::Deserializer::from_str(&src.raw);
            return serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                let (line, column) = src.position(inner.line(), inner.column());
                let msg = inner.to_string();
                // serde_json appends the position relative to `params`
                let msg = msg.split(" at line ").next().unwrap_or(&msg);
                CliError::Config(format!(
                    "{}: params.{path}: {msg} at line {line} column {column}",
                    src.origin
                ))
            });
        }
        serde_path_to_error::deserialize(&self.params)
            .map_err(|e| CliError::Config(format!("params.{}: {}", e.path(), e.inner())))
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.params.is_object() {
            return Err(CliError::Config("params: expected an object".into()));
        }
        if self.task.needs_hamiltonian() {
            self.hamiltonian()?;
        }
        if self.integrator.is_some() && !self.task.uses_integrator() {
            return Err(CliError::Config(format!(
                "integrator: task {} takes its step from params.options",
                self.task
            )));
        }
        Ok(())
    }
}

/// A command line value: JSON when it parses, a list of numbers when it is
/// comma separated, a string otherwise.
pub fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        let parts: Option<Vec<Value>> = raw
            .split(',')
            .map(|s| {
                serde_json::from_str::<serde_json::Number>(s.trim())
                    .ok()
                    .map(Value::Number)
            })
            .collect();
        if let Some(parts) = parts {
            return Value::Array(parts);
        }
    }
    Value::String(raw.to_string())
}

/// Set `key` (dotted path, objects created on the way) to `value`.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} has an empty segment")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key}: {part} is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(empty_object);
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parse `key=value`.
pub fn split_assignment(raw: &str) -> Result<(&str, &str), CliError> {
    raw.split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {raw:?} is not of the form key=value")))
}

/// Load a config for `task`. Without a file the config starts empty. Overrides
/// are `(dotted key, value)` pairs applied in order.
pub fn load(path: Option<&Path>, task: Task, overrides: &[(String, Value)]) -> Result<ExperimentConfig, CliError> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let origin = path
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<command line>".into());
    let mut value = match &text {
        Some(t) => serde_json::from_str::<Value>(t).map_err(|e| CliError::Config(format!("{origin}: {e}")))?,
        None => empty_object(),
    };
    if !value.is_object() {
        return Err(CliError::Config(format!("{origin}: top level must be an object")));
    }
    let file_task = value.get("task").cloned();
    match &file_task {
        Some(t) if t != &Value::String(task.as_str().into()) => {
            return Err(CliError::Config(format!(
                "{origin}: config is for task {t}, not {task}"
            )));
        }
        Some(_) => {}
        None => set_path(&mut value, "task", Value::String(task.as_str().into()))?,
    }
    let config: ExperimentConfig = match (&text, overrides.is_empty() && file_task.is_some()) {
        // straight from the text, so errors carry a line and column
        (Some(t), true) => {
            let mut de = serde_json::Deserializer::from_str(t);
            let mut config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                CliError::Config(format!("{origin}: {path}: {}", e.into_inner()))
            })?;
            config.source = ParamsSource::locate(&origin, t);
            config
        }
        _ => {
            for (k, v) in overrides {
                set_path(&mut value, k, v.clone())?;
            }
            serde_path_to_error::deserialize(&value)
                .map_err(|e| CliError::Config(format!("{origin}: {}: {}", e.path(), e.inner())))?
        }
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse_as_json_lists_or_strings() {
        assert_eq!(parse_value("0.5"), serde_json::json!(0.5));
        assert_eq!(parse_value("[1, 2]"), serde_json::json!([1, 2]));
        assert_eq!(parse_value("0.1,-0.2"), serde_json::json!([0.1, -0.2]));
        assert_eq!(parse_value("4..64"), serde_json::json!("4..64"));
        assert_eq!(parse_value("golden"), serde_json::json!("golden"));
    }

    #[test]
    fn dotted_keys_create_objects() {
        let mut v = serde_json::json!({"params": {"t": 1.0}});
        set_path(&mut v, "params.options.step", serde_json::json!(0.01)).unwrap();
        set_path(&mut v, "seed", serde_json::json!(3)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"params": {"t": 1.0, "options": {"step": 0.01}}, "seed": 3})
        );
        assert!(set_path(&mut v, "params.t.x", serde_json::json!(1)).is_err());
        assert!(set_path(&mut v, "a..b", serde_json::json!(1)).is_err());
    }

    #[test]
    fn coords_accept_scalars() {
        let c: Coords = serde_json::from_str("0.25").unwrap();
        assert_eq!(c.0, vec![0.25]);
        let c: Coords = serde_json::from_str("[0.25, 1]").unwrap();
        assert_eq!(c.0, vec![0.25, 1.0]);
        assert!(serde_json::from_str::<Coords>("\"x\"").is_err());
    }
}
