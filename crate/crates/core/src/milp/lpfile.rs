//! CPLEX-style LP text: a deterministic writer and a reader for the same subset.
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{Cmp, ModelIR, ObjSense, VarId, VarKind};

fn sanitize(raw: &str, fallback: String, used: &mut HashSet<String>) -> String {
    let mut name: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        name = fallback.clone();
    }
    if lower_keyword(&name) || used.contains(&name) {
        name = format!("{name}_{fallback}");
    }
    used.insert(name.clone());
    name
}

fn lower_keyword(name: &str) -> bool {
    matches!(
        name.to_ascii_lowercase().as_str(),
        "free" | "inf" | "infinity" | "end" | "bounds" | "binaries" | "binary" | "st" | "subject"
    )
}

fn number(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn terms(out: &mut String, coeffs: &[(VarId, f64)], names: &[String]) {
    if coeffs.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names.first().cloned().unwrap_or_default());
        return;
    }
    for (k, (v, c)) in coeffs.iter().enumerate() {
        let sign = if *c < 0.0 { "-" } else { "+" };
        if k > 0 || *c < 0.0 {
            out.push(' ');
            out.push_str(sign);
        }
        let mag = c.abs();
        if mag == 1.0 {
            let _ = write!(out, " {}", names[v.0]);
        } else {
            let _ = write!(out, " {} {}", number(mag), names[v.0]);
        }
    }
}

/// Variable names as they appear in the written file.
pub(crate) fn lp_names(model: &ModelIR) -> Vec<String> {
    let mut used = HashSet::new();
    model
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| sanitize(&v.name, format!("x{i}"), &mut used))
        .collect()
}

pub fn write_lp(model: &ModelIR) -> String {
    let names = lp_names(model);
    let mut used_rows = HashSet::new();
    let mut out = String::new();
    out.push_str(match model.sense {
        ObjSense::Minimize => "Minimize\n",
        ObjSense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    if model.objective.is_empty() && model.objective_offset == 0.0 && !names.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
    } else if !model.objective.is_empty() {
        terms(&mut out, &model.objective, &names);
    }
    if model.objective_offset != 0.0 {
        let sign = if model.objective_offset < 0.0 { "-" } else { "+" };
        let _ = write!(out, " {sign} {}", number(model.objective_offset.abs()));
    }
    out.push_str("\nSubject To\n");
    for (i, row) in model.constraints.iter().enumerate() {
        let name = sanitize(&row.name, format!("r{i}"), &mut used_rows);
        let _ = write!(out, " {name}:");
        terms(&mut out, &row.coeffs, &names);
        let op = match row.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", number(row.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.variables.iter().zip(&names) {
        if v.lower == v.upper {
            let _ = writeln!(out, " {name} = {}", number(v.lower));
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else {
            let _ = writeln!(out, " {} <= {name} <= {}", number(v.lower), number(v.upper));
        }
    }
    let bins: Vec<&String> = model
        .variables
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for n in bins {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}

pub fn write_lp_file(model: &ModelIR, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, write_lp(model))
}

#[derive(Debug, Error, PartialEq)]
pub enum LpReadError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(PartialEq)]
enum Section {
    Objective,
    Rows,
    Bounds,
    Binaries,
    Done,
}

struct Reader {
    model: ModelIR,
    index: HashMap<String, VarId>,
}

impl Reader {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self.model.add_var(name, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), v);
        v
    }
}

fn parse_num(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "+inf" | "inf" | "+infinity" | "infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

/// Parses a linear expression of the writer's shape; returns terms and constant.
fn parse_terms(
    toks: &[&str],
    reader: &mut Reader,
    line: usize,
) -> Result<(Vec<(VarId, f64)>, f64), LpReadError> {
    let mut out = Vec::new();
    let mut constant = 0.0;
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    for &t in toks {
        match t {
            "+" => sign = 1.0,
            "-" => sign = -1.0,
            _ => {
                if let Some(v) = parse_num(t) {
                    if let Some(c) = coef {
                        constant += sign * c;
                        sign = 1.0;
                    }
                    coef = Some(v);
                } else if t.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
                    let v = reader.var(t);
                    out.push((v, sign * coef.take().unwrap_or(1.0)));
                    sign = 1.0;
                } else {
                    return Err(LpReadError::Syntax {
                        line,
                        message: format!("unexpected token `{t}`"),
                    });
                }
            }
        }
    }
    if let Some(c) = coef {
        constant += sign * c;
    }
    Ok((out, constant))
}

pub fn read_lp(text: &str) -> Result<ModelIR, LpReadError> {
    let mut reader = Reader {
        model: ModelIR::new(ObjSense::Minimize),
        index: HashMap::new(),
    };
    // Bounds list every variable in model order; register names from there
    // first so indices survive a round trip.
    let mut in_bounds = false;
    for raw in text.lines() {
        let content = raw.split('\\').next().unwrap_or("").trim();
        match content.to_ascii_lowercase().as_str() {
            "bounds" => in_bounds = true,
            "binaries" | "binary" | "end" | "subject to" | "st" => in_bounds = false,
            _ if in_bounds => {
                let toks: Vec<&str> = content.split_whitespace().collect();
                let name = match toks.as_slice() {
                    [_, "<=", name, "<=", _] => Some(*name),
                    [name, ..] => Some(*name),
                    [] => None,
                };
                if let Some(n) = name {
                    reader.var(n);
                }
            }
            _ => {}
        }
    }
    let mut section = Section::Objective;
    let mut objective_seen = false;
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let content = raw.split('\\').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match content.to_ascii_lowercase().as_str() {
            "minimize" | "min" => {
                reader.model.sense = ObjSense::Minimize;
                section = Section::Objective;
                continue;
            }
            "maximize" | "max" => {
                reader.model.sense = ObjSense::Maximize;
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Rows;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "binaries" | "binary" => {
                section = Section::Binaries;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        let (label, body) = match content.split_once(':') {
            Some((l, b)) => (Some(l.trim()), b),
            None => (None, content),
        };
        let toks: Vec<&str> = body.split_whitespace().collect();
        match section {
            Section::Objective => {
                if objective_seen {
                    return Err(LpReadError::Syntax {
                        line,
                        message: "objective spans several lines".into(),
                    });
                }
                objective_seen = true;
                let (t, c) = parse_terms(&toks, &mut reader, line)?;
                reader.model.objective = super::merge_terms(t);
                reader.model.objective_offset = c;
            }
            Section::Rows => {
                let pos = toks
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "=" | "=<" | "=>"))
                    .ok_or(LpReadError::Syntax {
                        line,
                        message: "row without comparison".into(),
                    })?;
                let cmp = match toks[pos] {
                    "<=" | "=<" => Cmp::Le,
                    ">=" | "=>" => Cmp::Ge,
                    _ => Cmp::Eq,
                };
                let rhs = toks
                    .get(pos + 1)
                    .and_then(|t| parse_num(t))
                    .ok_or(LpReadError::Syntax {
                        line,
                        message: "missing right-hand side".into(),
                    })?;
                let (t, c) = parse_terms(&toks[..pos], &mut reader, line)?;
                let name = label.unwrap_or("").to_string();
                reader.model.add_row(name, t, cmp, rhs - c);
            }
            Section::Bounds => {
                let bad = || LpReadError::Syntax {
                    line,
                    message: format!("cannot read bound `{content}`"),
                };
                match toks.as_slice() {
                    [name, "free"] => {
                        let v = reader.var(name);
                        reader.model.variables[v.0].lower = f64::NEG_INFINITY;
                        reader.model.variables[v.0].upper = f64::INFINITY;
                    }
                    [name, "=", val] => {
                        let x = parse_num(val).ok_or_else(bad)?;
                        let v = reader.var(name);
                        reader.model.variables[v.0].lower = x;
                        reader.model.variables[v.0].upper = x;
                    }
                    [lo, "<=", name, "<=", hi] => {
                        let l = parse_num(lo).ok_or_else(bad)?;
                        let h = parse_num(hi).ok_or_else(bad)?;
                        let v = reader.var(name);
                        reader.model.variables[v.0].lower = l;
                        reader.model.variables[v.0].upper = h;
                    }
                    [name, "<=", hi] => {
                        let h = parse_num(hi).ok_or_else(bad)?;
                        let v = reader.var(name);
                        reader.model.variables[v.0].upper = h;
                    }
                    [name, ">=", lo] => {
                        let l = parse_num(lo).ok_or_else(bad)?;
                        let v = reader.var(name);
                        reader.model.variables[v.0].lower = l;
                    }
                    _ => return Err(bad()),
                }
            }
            Section::Binaries => {
                for name in toks {
                    let v = reader.var(name);
                    let var = &mut reader.model.variables[v.0];
                    var.kind = VarKind::Binary;
                    var.lower = 0.0;
                    var.upper = 1.0;
                }
            }
            Section::Done => {
                return Err(LpReadError::Syntax {
                    line,
                    message: "content after End".into(),
                })
            }
        }
    }
    Ok(reader.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_and_reads_back() {
        let mut m = ModelIR::new(ObjSense::Maximize);
        let x = m.add_var("x", 0.0, 4.0);
        let y = m.add_var("y[1]", f64::NEG_INFINITY, f64::INFINITY);
        let b = m.add_binary("b");
        m.add_row("c1", [(x, 1.0), (y, -2.5)], Cmp::Le, 3.0);
        m.add_row("", [(y, 1.0), (b, 1.0)], Cmp::Eq, 1.0);
        m.set_objective(ObjSense::Maximize, [(x, 1.0), (b, 2.0)]);
        m.objective_offset = -1.5;
        let text = write_lp(&m);
        let back = read_lp(&text).unwrap();
        assert_eq!(write_lp(&back), text);
        assert_eq!(back.num_vars(), 3);
        assert_eq!(back.objective_offset, -1.5);
    }
}
