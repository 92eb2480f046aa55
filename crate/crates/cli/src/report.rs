//! Run reports and their comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssertionKind {
    Numeric,
    /// A hypothesis of the model failed rather than the computation.
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub kind: AssertionKind,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn numeric(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            name: name.into(),
            kind: AssertionKind::Numeric,
            passed,
            detail: detail.into(),
        }
    }

    pub fn hypothesis(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Assertion {
            kind: AssertionKind::Hypothesis,
            ..Assertion::numeric(name, passed, detail)
        }
    }

    pub fn below(name: &str, value: f64, bound: f64) -> Self {
        Assertion::numeric(name, value < bound, format!("{value:.3e} < {bound:.1e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub tonelli_lab: String,
    pub tonelli_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            tonelli_lab: env!("CARGO_PKG_VERSION").into(),
            tonelli_core: tonelli_core::VERSION.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// SHA-256 of the compact JSON of `config`.
    pub config_hash: String,
    pub catalogue_version: String,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    /// Per-part timings; like the wall time, not reproducible.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
    /// Deterministic result of the task.
    pub payload: Value,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunReport {
    /// Exit status: 0 when every assertion holds, 3 when a hypothesis
    /// assertion fails, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        let failed: Vec<&Assertion> = self.assertions.iter().filter(|a| !a.passed).collect();
        if failed.is_empty() {
            0
        } else if failed.iter().any(|a| a.kind == AssertionKind::Hypothesis) {
            3
        } else {
            2
        }
    }
}

/// Per-field tolerances. A pattern is a dotted payload path (array indices are
/// segments, `*` matches any one segment) and covers everything below it; the
/// longest matching pattern wins.
#[derive(Debug, Clone, Default)]
pub struct Tolerances {
    pub default: f64,
    pub fields: Vec<(String, f64)>,
    /// Only paths under these prefixes are compared (all when empty).
    pub only: Vec<String>,
}

fn matches(pattern: &str, path: &[String]) -> Option<usize> {
    if pattern.is_empty() {
        return Some(0);
    }
    let segs: Vec<&str> = pattern.split('.').collect();
    if segs.len() > path.len() {
        return None;
    }
    segs.iter()
        .zip(path)
        .all(|(s, p)| *s == "*" || s == p)
        .then_some(segs.len())
}

impl Tolerances {
    pub fn for_path(&self, path: &[String]) -> f64 {
        self.fields
            .iter()
            .filter_map(|(p, t)| matches(p, path).map(|len| (len, *t)))
            .max_by_key(|(len, _)| *len)
            .map(|(_, t)| t)
            .unwrap_or(self.default)
    }

    fn selected(&self, path: &[String]) -> bool {
        self.only.is_empty()
            || self
                .only
                .iter()
                .any(|p| matches(p, path).is_some() || path_is_prefix_of(path, p))
    }
}

/// `path` lies on the way to `pattern`, so the walk must continue.
fn path_is_prefix_of(path: &[String], pattern: &str) -> bool {
    let segs: Vec<&str> = pattern.split('.').collect();
    path.len() < segs.len() && path.iter().zip(&segs).all(|(p, s)| *s == "*" || s == p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub path: String,
    pub a: Value,
    pub b: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffSummary {
    pub task: String,
    pub compared: usize,
    pub differences: Vec<Difference>,
}

/// Fieldwise payload comparison of two reports of the same task.
pub fn compare(a: &RunReport, b: &RunReport, tol: &Tolerances) -> Result<DiffSummary, CliError> {
    if a.task != b.task {
        return Err(CliError::Config(format!(
            "cannot compare a {} report with a {} report",
            a.task, b.task
        )));
    }
    let mut out = DiffSummary {
        task: a.task.clone(),
        compared: 0,
        differences: Vec::new(),
    };
    walk(&a.payload, &b.payload, &mut Vec::new(), tol, &mut out);
    Ok(out)
}

fn walk(a: &Value, b: &Value, path: &mut Vec<String>, tol: &Tolerances, out: &mut DiffSummary) {
    if !tol.selected(path) {
        return;
    }
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                path.push(k.clone());
                let null = Value::Null;
                walk(x.get(k).unwrap_or(&null), y.get(k).unwrap_or(&null), path, tol, out);
                path.pop();
            }
            return;
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                path.push(i.to_string());
                walk(u, v, path, tol, out);
                path.pop();
            }
            return;
        }
        _ => {}
    }
    if !matches_any_leaf(tol, path) {
        return;
    }
    out.compared += 1;
    let tolerance = tol.for_path(path);
    let delta = match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let d = (x.as_f64().unwrap_or(f64::NAN) - y.as_f64().unwrap_or(f64::NAN)).abs();
            if d <= tolerance {
                return;
            }
            Some(d)
        }
        _ if a == b => return,
        _ => None,
    };
    out.differences.push(Difference {
        path: path.join("."),
        a: a.clone(),
        b: b.clone(),
        delta,
        tolerance,
    });
}

/// With `only` set, leaves are compared when a pattern covers them.
fn matches_any_leaf(tol: &Tolerances, path: &[String]) -> bool {
    tol.only.is_empty() || tol.only.iter().any(|p| matches(p, path).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(s: &str) -> Vec<String> {
        s.split('.').map(String::from).collect()
    }

    #[test]
    fn longest_pattern_wins() {
        let tol = Tolerances {
            default: 1e-12,
            fields: vec![("members".into(), 1e-6), ("members.*.residual".into(), 1e-3)],
            only: vec![],
        };
        assert_eq!(tol.for_path(&path("members.3.residual")), 1e-3);
        assert_eq!(tol.for_path(&path("members.3.rotation_error")), 1e-6);
        assert_eq!(tol.for_path(&path("fit.c")), 1e-12);
    }

    #[test]
    fn only_restricts_the_walk() {
        let tol = Tolerances {
            default: 0.0,
            fields: vec![],
            only: vec!["a.b".into()],
        };
        assert!(tol.selected(&[]));
        assert!(tol.selected(&path("a")));
        assert!(tol.selected(&path("a.b.0")));
        assert!(!tol.selected(&path("c")));
        assert!(!tol.selected(&path("a.c")));
    }
}
