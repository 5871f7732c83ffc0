//! Self-describing JSON model file: generator, per-mode matrices, weights
//! and simulation defaults. Matrices are row-major nested arrays.
//!
//! Parsing collects every problem it finds, each tagged with the JSON path
//! of the offending field (`modes[1].B`, `generator[0]`, ...).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::instances::Instance;
use crate::linalg::{self, matrix_to_rows};
use crate::markov_chain::{ChainError, GeneratorMatrix};
use crate::model::{CostSpec, ModeSet, ModelError};
use crate::simulator::{InitialMode, DEFAULT_DT, DEFAULT_EXPLOSION_RADIUS};
use crate::wonham::FilterState;

pub const SCHEMA_VERSION: &str = "1";

/// One problem found while reading a model file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelFileError {
    /// Not JSON at all.
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// Well-formed JSON violating the schema or a model invariant.
    Invalid(Vec<Issue>),
}

impl fmt::Display for ModelFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFileError::Parse { line, column, message } => {
                write!(f, "parse error at line {line}, column {column}: {message}")
            }
            ModelFileError::Invalid(issues) => {
                let lines: Vec<String> = issues.iter().map(Issue::to_string).collect();
                write!(f, "{}", lines.join("\n"))
            }
        }
    }
}

impl std::error::Error for ModelFileError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDefaults {
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub x0: DVector<f64>,
    pub phi0: FilterState,
    pub alpha0: InitialMode,
    pub explosion_radius: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub schema_version: String,
    pub gen: GeneratorMatrix,
    pub modes: ModeSet,
    pub cost: CostSpec,
    pub simulation: SimulationDefaults,
}

struct Reader {
    issues: Vec<Issue>,
}

impl Reader {
    fn issue(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn field<'v>(&mut self, obj: &'v Map<String, Value>, parent: &str, key: &str) -> Option<&'v Value> {
        let path = join(parent, key);
        match obj.get(key) {
            Some(v) => Some(v),
            None => {
                self.issue(path, "missing field");
                None
            }
        }
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        let obj = v.as_object();
        if obj.is_none() {
            self.issue(path, "expected an object");
        }
        obj
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.issue(path, "expected a finite number");
                None
            }
        }
    }

    fn vector(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let Some(items) = v.as_array() else {
            self.issue(path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (k, item) in items.iter().enumerate() {
            match self.number(item, &format!("{path}[{k}]")) {
                Some(x) => out.push(x),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn matrix(&mut self, v: &Value, path: &str) -> Option<DMatrix<f64>> {
        let Some(rows) = v.as_array() else {
            self.issue(path, "expected a matrix (array of rows)");
            return None;
        };
        if rows.is_empty() {
            self.issue(path, "matrix has no rows");
            return None;
        }
        let mut parsed = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            parsed.push(self.vector(row, &format!("{path}[{i}]"))?);
        }
        let width = parsed[0].len();
        if width == 0 || parsed.iter().any(|r| r.len() != width) {
            self.issue(path, "rows must be non-empty and of equal length");
            return None;
        }
        linalg::matrix_from_rows(&parsed)
    }
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn chain_issue(err: &ChainError) -> Issue {
    let path = match err {
        ChainError::NegativeRate { row, col, .. } | ChainError::NonFinite { row, col } => {
            format!("generator[{row}][{col}]")
        }
        ChainError::RowSumViolation { row, .. } => format!("generator[{row}]"),
        _ => "generator".to_string(),
    };
    Issue {
        path,
        message: err.to_string(),
    }
}

fn model_issue(err: &ModelError, prefix: &str) -> Issue {
    let path = match err {
        ModelError::DimensionMismatch { what, .. } if what.starts_with("modes[") => what.clone(),
        ModelError::NotSymmetric { what, .. } => format!("{prefix}.{what}"),
        ModelError::QNotPsd(_) => format!("{prefix}.Q"),
        ModelError::RNotPd(_) => format!("{prefix}.R"),
        _ => prefix.to_string(),
    };
    Issue {
        path,
        message: err.to_string(),
    }
}

impl ModelFile {
    pub fn from_json_str(text: &str) -> Result<Self, ModelFileError> {
        let root: Value = serde_json::from_str(text).map_err(|e| ModelFileError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let mut rd = Reader { issues: Vec::new() };
        let parsed = Self::read(&mut rd, &root);
        match parsed {
            Some(model) if rd.issues.is_empty() => Ok(model),
            _ => {
                if rd.issues.is_empty() {
                    rd.issue("", "invalid model");
                }
                Err(ModelFileError::Invalid(rd.issues))
            }
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelFileError::Parse {
            line: 0,
            column: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_json_str(&text)
    }

    fn read(rd: &mut Reader, root: &Value) -> Option<Self> {
        let obj = rd.object(root, "$")?;

        let schema_version = match rd.field(obj, "", "schema_version") {
            Some(Value::String(s)) if s == SCHEMA_VERSION || s.starts_with("1.") => Some(s.clone()),
            Some(Value::String(s)) => {
                rd.issue(
                    "schema_version",
                    format!("unsupported version {s:?}, expected {SCHEMA_VERSION:?}"),
                );
                None
            }
            Some(_) => {
                rd.issue("schema_version", "expected a string");
                None
            }
            None => None,
        };

        let gen = rd
            .field(obj, "", "generator")
            .and_then(|v| rd.matrix(v, "generator"))
            .and_then(|m| match GeneratorMatrix::new(m) {
                Ok(g) => Some(g),
                Err(e) => {
                    rd.issues.push(chain_issue(&e));
                    None
                }
            });

        let modes = Self::read_modes(rd, obj);

        let cost = rd
            .field(obj, "", "cost")
            .and_then(|v| rd.object(v, "cost"))
            .and_then(|c| {
                let q = rd.field(c, "cost", "Q").and_then(|v| rd.matrix(v, "cost.Q"));
                let r = rd.field(c, "cost", "R").and_then(|v| rd.matrix(v, "cost.R"));
                match CostSpec::new(q?, r?) {
                    Ok(cost) => Some(cost),
                    Err(e) => {
                        rd.issues.push(model_issue(&e, "cost"));
                        None
                    }
                }
            });

        if let (Some(g), Some(md)) = (&gen, &modes) {
            if g.num_modes() != md.m() {
                rd.issue(
                    "generator",
                    format!("generator is {0}x{0} but {1} modes are defined", g.num_modes(), md.m()),
                );
            }
        }
        if let (Some(c), Some(md)) = (&cost, &modes) {
            if c.q().nrows() != md.n() {
                rd.issue("cost.Q", format!("expected {0}x{0}", md.n()));
            }
            if c.r().nrows() != md.d() {
                rd.issue("cost.R", format!("expected {0}x{0}", md.d()));
            }
        }

        let simulation = modes.as_ref().and_then(|md| Self::read_simulation(rd, obj, md));
        Some(Self {
            schema_version: schema_version?,
            gen: gen?,
            modes: modes?,
            cost: cost?,
            simulation: simulation?,
        })
    }

    fn read_modes(rd: &mut Reader, obj: &Map<String, Value>) -> Option<ModeSet> {
        let list = rd.field(obj, "", "modes")?;
        let Some(items) = list.as_array().filter(|a| !a.is_empty()) else {
            rd.issue("modes", "expected a non-empty array of modes");
            return None;
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            let path = format!("modes[{i}]");
            let Some(mode) = rd.object(item, &path) else {
                ok = false;
                continue;
            };
            let ai = rd
                .field(mode, &path, "A")
                .and_then(|v| rd.matrix(v, &format!("{path}.A")));
            let bi = rd
                .field(mode, &path, "B")
                .and_then(|v| rd.matrix(v, &format!("{path}.B")));
            match (ai, bi) {
                (Some(ai), Some(bi)) => {
                    a.push(ai);
                    b.push(bi);
                }
                _ => ok = false,
            }
        }
        if !ok {
            return None;
        }
        match ModeSet::new(a, b) {
            Ok(m) => Some(m),
            Err(e) => {
                rd.issues.push(model_issue(&e, "modes"));
                None
            }
        }
    }

    fn read_simulation(rd: &mut Reader, obj: &Map<String, Value>, modes: &ModeSet) -> Option<SimulationDefaults> {
        let empty = Map::new();
        let sim = match obj.get("simulation") {
            Some(v) => rd.object(v, "simulation")?,
            None => &empty,
        };
        let mut out = SimulationDefaults {
            horizon: 100.0,
            dt: DEFAULT_DT,
            seed: 0,
            x0: DVector::from_element(modes.n(), 1.0),
            phi0: FilterState::uniform(modes.m()),
            alpha0: InitialMode::SampleFromPhi0,
            explosion_radius: DEFAULT_EXPLOSION_RADIUS,
            paths: 100,
        };
        let start = rd.issues.len();
        let positive = |rd: &mut Reader, key: &str, v: &Value| -> Option<f64> {
            let path = format!("simulation.{key}");
            let x = rd.number(v, &path)?;
            if x > 0.0 {
                Some(x)
            } else {
                rd.issue(path, "must be positive");
                None
            }
        };
        if let Some(v) = sim.get("T") {
            out.horizon = positive(rd, "T", v).unwrap_or(out.horizon);
        }
        if let Some(v) = sim.get("dt") {
            out.dt = positive(rd, "dt", v).unwrap_or(out.dt);
        }
        if let Some(v) = sim.get("explosion_radius") {
            out.explosion_radius = positive(rd, "explosion_radius", v).unwrap_or(out.explosion_radius);
        }
        if let Some(v) = sim.get("seed") {
            match v.as_u64() {
                Some(s) => out.seed = s,
                None => rd.issue("simulation.seed", "expected a non-negative integer"),
            }
        }
        if let Some(v) = sim.get("paths") {
            match v.as_u64() {
                Some(p) if p >= 1 => out.paths = p as usize,
                _ => rd.issue("simulation.paths", "expected a positive integer"),
            }
        }
        if let Some(v) = sim.get("x0") {
            if let Some(x0) = rd.vector(v, "simulation.x0") {
                if x0.len() == modes.n() {
                    out.x0 = DVector::from_vec(x0);
                } else {
                    rd.issue(
                        "simulation.x0",
                        format!("expected {} entries, got {}", modes.n(), x0.len()),
                    );
                }
            }
        }
        if let Some(v) = sim.get("phi0") {
            if let Some(phi0) = rd.vector(v, "simulation.phi0") {
                if phi0.len() != modes.m() {
                    rd.issue(
                        "simulation.phi0",
                        format!("expected {} entries, got {}", modes.m(), phi0.len()),
                    );
                } else {
                    match FilterState::new(DVector::from_vec(phi0)) {
                        Ok(p) => out.phi0 = p,
                        Err(e) => rd.issue("simulation.phi0", e.to_string()),
                    }
                }
            }
        }
        if let Some(v) = sim.get("alpha0") {
            match v {
                Value::String(s) if s == "sample" => out.alpha0 = InitialMode::SampleFromPhi0,
                Value::Number(k) => match k.as_u64() {
                    Some(k) if (k as usize) < modes.m() => out.alpha0 = InitialMode::Fixed(k as usize),
                    _ => rd.issue(
                        "simulation.alpha0",
                        format!("expected a mode index below {}", modes.m()),
                    ),
                },
                _ => rd.issue("simulation.alpha0", "expected a mode index or \"sample\""),
            }
        }
        if out.dt > out.horizon {
            rd.issue("simulation.dt", format!("dt {} exceeds T {}", out.dt, out.horizon));
        }
        (rd.issues.len() == start).then_some(out)
    }

    pub fn instance(&self) -> Instance {
        Instance {
            modes: self.modes.clone(),
            cost: self.cost.clone(),
            gen: self.gen.clone(),
        }
    }

    /// Canonical JSON form of the model.
    pub fn to_json(&self) -> Value {
        let modes: Vec<Value> = (0..self.modes.m())
            .map(|i| json!({ "A": matrix_to_rows(self.modes.a(i)), "B": matrix_to_rows(self.modes.b(i)) }))
            .collect();
        let alpha0 = match self.simulation.alpha0 {
            InitialMode::Fixed(k) => json!(k),
            InitialMode::SampleFromPhi0 => json!("sample"),
        };
        let s = &self.simulation;
        json!({
            "schema_version": self.schema_version,
            "generator": matrix_to_rows(self.gen.rates()),
            "modes": modes,
            "cost": { "Q": matrix_to_rows(self.cost.q()), "R": matrix_to_rows(self.cost.r()) },
            "simulation": {
                "T": s.horizon,
                "dt": s.dt,
                "seed": s.seed,
                "x0": s.x0.as_slice(),
                "phi0": s.phi0.as_vector().as_slice(),
                "alpha0": alpha0,
                "explosion_radius": s.explosion_radius,
                "paths": s.paths,
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{
        "schema_version": "1",
        "generator": [[-1, 1], [1, -1]],
        "modes": [
            {"A": [[0.5, 1], [0, -1]], "B": [[0], [1]]},
            {"A": [[-1, 1], [0, -1.5]], "B": [[0], [1]]}
        ],
        "cost": {"Q": [[1, 0], [0, 1]], "R": [[1]]},
        "simulation": {"T": 10, "dt": 0.01, "seed": 3, "x0": [1, 2], "phi0": [0.5, 0.5], "alpha0": 1}
    }"#;

    fn issues(text: &str) -> Vec<Issue> {
        match ModelFile::from_json_str(text) {
            Err(ModelFileError::Invalid(issues)) => issues,
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn parses_valid_file() {
        let mf = ModelFile::from_json_str(VALID).unwrap();
        assert_eq!(mf.modes.m(), 2);
        assert_eq!(mf.simulation.alpha0, InitialMode::Fixed(1));
        assert_eq!(mf.simulation.seed, 3);
        let again = ModelFile::from_json_str(&mf.to_json().to_string()).unwrap();
        assert_eq!(again, mf);
    }

    #[test]
    fn missing_b_names_the_field() {
        let text = VALID.replace(
            r#"{"A": [[-1, 1], [0, -1.5]], "B": [[0], [1]]}"#,
            r#"{"A": [[-1, 1], [0, -1.5]]}"#,
        );
        let found = issues(&text);
        assert!(found.iter().any(|i| i.path == "modes[1].B"), "{found:?}");
    }

    #[test]
    fn row_sum_violation_names_the_row() {
        let text = VALID.replace("[1, -1]]", "[1, -0.5]]");
        let found = issues(&text);
        assert_eq!(found[0].path, "generator[1]");
    }

    #[test]
    fn syntax_error_has_position() {
        match ModelFile::from_json_str("{\n  \"schema_version\": ,\n}") {
            Err(ModelFileError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collects_several_issues() {
        let text = VALID
            .replace(r#""R": [[1]]"#, r#""R": [[-1]]"#)
            .replace(r#""phi0": [0.5, 0.5]"#, r#""phi0": [0.5, 0.6]"#);
        let found = issues(&text);
        let paths: Vec<&str> = found.iter().map(|i| i.path.as_str()).collect();
        assert!(paths.contains(&"cost.R"), "{paths:?}");
        assert!(paths.contains(&"simulation.phi0"), "{paths:?}");
    }
}
