//! JSON documents written by the command-line tool.

use serde_json::{json, Value};

use crate::controller::ControlLaw;
use crate::linalg::matrix_to_rows;
use crate::riccati::{ConditionReport, RiccatiSolution};
use crate::simulator::EnsembleReport;

/// `P_i`, per-mode residuals, iteration count and feedback gains `-R^{-1} B_i' P_i`.
pub fn solution_json(sol: &RiccatiSolution, law: &ControlLaw) -> Value {
    json!({
        "P": sol.p.iter().map(matrix_to_rows).collect::<Vec<_>>(),
        "residuals": sol.residuals,
        "max_residual": sol.max_residual(),
        "iterations": sol.iterations,
        "gains": law.feedback_gains().iter().map(matrix_to_rows).collect::<Vec<_>>(),
    })
}

pub fn condition_json(report: &ConditionReport) -> Value {
    json!({
        "pairwise_min_eig": report.pairwise_min_eig,
        "satisfied": report.satisfied,
        "gamma": report.gamma,
    })
}

pub fn ensemble_json(report: &EnsembleReport) -> Value {
    serde_json::to_value(report).unwrap_or(Value::Null)
}
