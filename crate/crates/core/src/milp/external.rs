//! Solving through an external executable that reads LP files.
use std::collections::HashMap;
use std::process::Command;

use thiserror::Error;

use super::lpfile::lp_names;
use super::{write_lp, ModelIR, SolveResult, SolveStatus};

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("solver command template is empty")]
    EmptyTemplate,
    #[error("could not start `{program}`: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
    #[error("solver exited with {status}: {stderr}")]
    ExitStatus { status: String, stderr: String },
    #[error("solution file: {0}")]
    Unparsable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A command line with `{input}` and `{output}` placeholders.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverCommand(pub String);

impl SolverCommand {
    pub fn argv(&self, input: &str, output: &str) -> Vec<String> {
        self.0
            .split_whitespace()
            .map(|t| t.replace("{input}", input).replace("{output}", output))
            .collect()
    }
}

/// Writes `model` to an LP file, runs the command and reads the solution file.
pub fn external_solve(model: &ModelIR, command: &SolverCommand) -> Result<SolveResult, ExternalError> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("model.lp");
    let output = dir.path().join("model.sol");
    std::fs::write(&input, write_lp(model))?;
    let argv = command.argv(&input.to_string_lossy(), &output.to_string_lossy());
    let (program, args) = argv.split_first().ok_or(ExternalError::EmptyTemplate)?;
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|source| ExternalError::Spawn {
            program: program.clone(),
            source,
        })?;
    if !out.status.success() {
        return Err(ExternalError::ExitStatus {
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    let text = std::fs::read_to_string(&output)?;
    parse_solution(model, &text)
}

/// Reads `objective <v>`, optional `status <s>` and `<name> <value>` lines.
pub fn parse_solution(model: &ModelIR, text: &str) -> Result<SolveResult, ExternalError> {
    let names = lp_names(model);
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut status = SolveStatus::Optimal;
    let mut objective = None;
    let mut values = vec![0.0; model.num_vars()];
    for (li, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["status", s] => {
                status = match *s {
                    "optimal" => SolveStatus::Optimal,
                    "infeasible" => SolveStatus::Infeasible,
                    "unbounded" => SolveStatus::Unbounded,
                    "iteration-limit" => SolveStatus::IterationLimit,
                    "node-limit" => SolveStatus::NodeLimit,
                    other => {
                        return Err(ExternalError::Unparsable(format!(
                            "line {}: unknown status `{other}`",
                            li + 1
                        )))
                    }
                }
            }
            [key, v] => {
                let v: f64 = v.parse().map_err(|_| {
                    ExternalError::Unparsable(format!("line {}: bad number `{v}`", li + 1))
                })?;
                if *key == "objective" {
                    objective = Some(v);
                } else if let Some(&i) = index.get(key) {
                    values[i] = v;
                } else {
                    return Err(ExternalError::Unparsable(format!(
                        "line {}: unknown variable `{key}`",
                        li + 1
                    )));
                }
            }
            _ => {
                return Err(ExternalError::Unparsable(format!(
                    "line {}: expected `<name> <value>`",
                    li + 1
                )))
            }
        }
    }
    if status != SolveStatus::Optimal {
        return Ok(SolveResult::without_point(status));
    }
    let objective = objective.ok_or_else(|| ExternalError::Unparsable("no objective line".into()))?;
    Ok(SolveResult {
        status,
        objective: Some(objective),
        bound: Some(objective),
        values,
        iterations: 0,
        nodes: 0,
    })
}

/// Text of a solution file in the format [`parse_solution`] reads.
pub fn format_solution(model: &ModelIR, result: &SolveResult) -> String {
    let mut out = format!("status {}\n", result.status);
    if let Some(obj) = result.objective.filter(|_| result.is_optimal()) {
        out.push_str(&format!("objective {obj}\n"));
        for (name, v) in lp_names(model).iter().zip(&result.values) {
            out.push_str(&format!("{name} {v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::ObjSense;

    #[test]
    fn missing_executable_is_a_spawn_error() {
        let m = ModelIR::new(ObjSense::Minimize);
        let err = external_solve(&m, &SolverCommand("/nonexistent/solver {input} {output}".into()))
            .unwrap_err();
        assert!(matches!(err, ExternalError::Spawn { .. }));
    }

    #[test]
    fn parses_infeasible_status() {
        let m = ModelIR::new(ObjSense::Minimize);
        let r = parse_solution(&m, "status infeasible\n").unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }
}
