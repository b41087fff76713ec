//! CPLEX-style LP text for debugging models with external solvers.
//!
//! Every coefficient is written with its shortest round-trip representation,
//! so [`read`] applied to the output of [`write`] reproduces the request
//! exactly, including column order, zero coefficients and signed zeros.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Row, Sense, SolveRequest, SolverError, SolverOptions};

fn check_name(name: &str) -> Result<(), SolverError> {
    let bad = name.is_empty()
        || name.chars().any(|c| c.is_whitespace() || c == ':' || c == '\\')
        || name.starts_with(|c: char| c.is_ascii_digit() || c == '+' || c == '-' || c == '.');
    if bad {
        Err(SolverError::Malformed(format!("`{name}` is not a valid LP identifier")))
    } else {
        Ok(())
    }
}

fn push_term(out: &mut String, coef: f64, name: &str) {
    let sign = if coef.is_sign_negative() { '-' } else { '+' };
    let _ = write!(out, " {sign} {:?} {name}", coef.abs());
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn write(req: &SolveRequest) -> Result<String, SolverError> {
    req.validate()?;
    for n in req.col_names.iter().chain(req.rows.iter().map(|r| &r.name)) {
        check_name(n)?;
    }
    let mut out = String::new();
    out.push_str("\\ ulmp lp v1\n");
    let _ = writeln!(out, "\\ want_duals: {}", req.want_duals);
    let o = &req.options;
    let _ = writeln!(
        out,
        "\\ options: {} {:?} {:?} {:?}",
        o.time_limit.map(|t| format!("{t:?}")).unwrap_or_else(|| "none".into()),
        o.mip_rel_gap,
        o.feasibility_tol,
        o.dual_tol
    );
    out.push_str(match req.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    for (j, &c) in req.objective.iter().enumerate() {
        push_term(&mut out, c, &req.col_names[j]);
    }
    let off = req.objective_offset;
    let _ = writeln!(out, " {} {:?}", if off.is_sign_negative() { '-' } else { '+' }, off.abs());
    out.push_str("Subject To\n");
    for row in &req.rows {
        let _ = write!(out, " {}:", row.name);
        let ranged = row.lower != row.upper && row.lower.is_finite() && row.upper.is_finite();
        if ranged {
            let _ = write!(out, " {} <=", fmt_num(row.lower));
        }
        for &(j, a) in &row.coeffs {
            push_term(&mut out, a, &req.col_names[j]);
        }
        if ranged {
            let _ = writeln!(out, " <= {}", fmt_num(row.upper));
        } else if row.lower == row.upper {
            let _ = writeln!(out, " = {}", fmt_num(row.lower));
        } else if row.lower.is_finite() || row.upper == f64::INFINITY {
            let _ = writeln!(out, " >= {}", fmt_num(row.lower));
        } else {
            let _ = writeln!(out, " <= {}", fmt_num(row.upper));
        }
    }
    out.push_str("Bounds\n");
    for j in 0..req.num_cols() {
        let (lo, hi) = (req.col_lower[j], req.col_upper[j]);
        if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            let _ = writeln!(out, " {} free", req.col_names[j]);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", fmt_num(lo), req.col_names[j], fmt_num(hi));
        }
    }
    if req.is_mip() {
        out.push_str("Generals\n");
        for j in (0..req.num_cols()).filter(|&j| req.integer[j]) {
            let _ = writeln!(out, " {}", req.col_names[j]);
        }
    }
    out.push_str("End\n");
    Ok(out)
}

#[derive(PartialEq)]
enum Section {
    Header,
    Objective,
    Constraints,
    Bounds,
    Generals,
    Done,
}

fn parse_num(tok: &str, line: usize) -> Result<f64, SolverError> {
    tok.parse::<f64>().map_err(|_| SolverError::Parse {
        line,
        msg: format!("expected a number, found `{tok}`"),
    })
}

/// Parses `± coef name` triples; a trailing `± value` without a name is a
/// constant term.
fn parse_terms<'a>(
    toks: &[&'a str],
    line: usize,
) -> Result<(Vec<(f64, &'a str)>, Option<f64>), SolverError> {
    let mut terms = Vec::new();
    let mut constant = None;
    let mut i = 0;
    while i < toks.len() {
        let sign = match toks[i] {
            "+" => 1.0,
            "-" => -1.0,
            other => {
                return Err(SolverError::Parse {
                    line,
                    msg: format!("expected a sign, found `{other}`"),
                })
            }
        };
        let mag = parse_num(toks.get(i + 1).copied().unwrap_or(""), line)?;
        let coef = if sign < 0.0 { -mag } else { mag };
        match toks.get(i + 2) {
            Some(name) if *name != "+" && *name != "-" => {
                terms.push((coef, *name));
                i += 3;
            }
            _ => {
                constant = Some(coef);
                i += 2;
            }
        }
    }
    Ok((terms, constant))
}

pub fn read(text: &str) -> Result<SolveRequest, SolverError> {
    let mut req = SolveRequest::new(Sense::Minimize);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut section = Section::Header;
    let mut bounds_seen = vec![];
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('\\') {
            let c = comment.trim();
            if let Some(v) = c.strip_prefix("want_duals:") {
                req.want_duals = v.trim() == "true";
            } else if let Some(v) = c.strip_prefix("options:") {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() == 4 {
                    req.options = SolverOptions {
                        time_limit: if parts[0] == "none" { None } else { Some(parse_num(parts[0], line_no)?) },
                        mip_rel_gap: parse_num(parts[1], line_no)?,
                        feasibility_tol: parse_num(parts[2], line_no)?,
                        dual_tol: parse_num(parts[3], line_no)?,
                        mip_abs_gap: None,
                    };
                }
            }
            continue;
        }
        match line.to_ascii_lowercase().as_str() {
            "minimize" | "minimise" | "min" => {
                req.sense = Sense::Minimize;
                section = Section::Objective;
                continue;
            }
            "maximize" | "maximise" | "max" => {
                req.sense = Sense::Maximize;
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                bounds_seen = vec![false; req.num_cols()];
                continue;
            }
            "generals" | "general" | "integers" => {
                section = Section::Generals;
                continue;
            }
            "end" => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let (_, body) = line.split_once(':').ok_or(SolverError::Parse {
                    line: line_no,
                    msg: "objective needs a label".into(),
                })?;
                let toks: Vec<&str> = body.split_whitespace().collect();
                let (terms, constant) = parse_terms(&toks, line_no)?;
                for (c, name) in terms {
                    if index.contains_key(name) {
                        return Err(SolverError::Parse {
                            line: line_no,
                            msg: format!("column `{name}` repeated in objective"),
                        });
                    }
                    let j = req.add_col(name, c, 0.0, f64::INFINITY);
                    index.insert(name.to_string(), j);
                }
                req.objective_offset = constant.unwrap_or(0.0);
            }
            Section::Constraints => {
                let (name, body) = line.split_once(':').ok_or(SolverError::Parse {
                    line: line_no,
                    msg: "constraint needs a name".into(),
                })?;
                let mut toks: Vec<&str> = body.split_whitespace().collect();
                let mut lower = f64::NEG_INFINITY;
                let mut upper = f64::INFINITY;
                if toks.len() >= 2 && toks[1] == "<=" && toks[0] != "+" && toks[0] != "-" {
                    lower = parse_num(toks[0], line_no)?;
                    toks.drain(..2);
                }
                if toks.len() < 2 {
                    return Err(SolverError::Parse { line: line_no, msg: "truncated constraint".into() });
                }
                let rhs = parse_num(toks[toks.len() - 1], line_no)?;
                let op = toks[toks.len() - 2];
                match op {
                    ">=" => lower = rhs,
                    "<=" => upper = rhs,
                    "=" => {
                        lower = rhs;
                        upper = rhs;
                    }
                    other => {
                        return Err(SolverError::Parse {
                            line: line_no,
                            msg: format!("unknown relation `{other}`"),
                        })
                    }
                }
                let (terms, constant) = parse_terms(&toks[..toks.len() - 2], line_no)?;
                if constant.is_some() {
                    return Err(SolverError::Parse { line: line_no, msg: "constant term in constraint".into() });
                }
                let coeffs = terms
                    .into_iter()
                    .map(|(c, n)| {
                        index.get(n).map(|&j| (j, c)).ok_or(SolverError::Parse {
                            line: line_no,
                            msg: format!("unknown column `{n}`"),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                req.rows.push(Row {
                    name: name.trim().to_string(),
                    coeffs,
                    lower,
                    upper,
                });
            }
            Section::Bounds => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                let (j, lo, hi) = match toks.as_slice() {
                    [name, "free"] => (*name, f64::NEG_INFINITY, f64::INFINITY),
                    [lo, "<=", name, "<=", hi] => (*name, parse_num(lo, line_no)?, parse_num(hi, line_no)?),
                    _ => {
                        return Err(SolverError::Parse { line: line_no, msg: format!("bad bound `{line}`") })
                    }
                };
                let &col = index.get(j).ok_or(SolverError::Parse {
                    line: line_no,
                    msg: format!("unknown column `{j}`"),
                })?;
                req.col_lower[col] = lo;
                req.col_upper[col] = hi;
                bounds_seen[col] = true;
            }
            Section::Generals => {
                for name in line.split_whitespace() {
                    let &col = index.get(name).ok_or(SolverError::Parse {
                        line: line_no,
                        msg: format!("unknown column `{name}`"),
                    })?;
                    req.integer[col] = true;
                }
            }
            Section::Header | Section::Done => {
                return Err(SolverError::Parse { line: line_no, msg: format!("unexpected `{line}`") });
            }
        }
    }
    if section != Section::Done {
        return Err(SolverError::Parse { line: text.lines().count(), msg: "missing End".into() });
    }
    req.validate()?;
    Ok(req)
}
