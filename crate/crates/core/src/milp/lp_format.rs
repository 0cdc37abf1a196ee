//! CPLEX LP-format export.

use std::fmt::Write;

use crate::milp::{LinExpr, MilpModel, ObjSense, Sense, VarKind};

const MAX_NAME: usize = 255;

/// `%.17g`: 17 significant digits, trailing zeros trimmed, exponent form
/// outside `[1e-5, 1e17)`.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// LP names may not contain spaces or start with a digit or a period.
fn sanitize(name: &str, fallback: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]{}!\"#$%&()/,;?@'`~|".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s = format!("{fallback}{s}");
    }
    s.truncate(MAX_NAME);
    s
}

fn write_expr(out: &mut String, expr: &LinExpr, names: &[String]) {
    if expr.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names[0]);
        return;
    }
    for (i, (v, c)) in expr.iter().enumerate() {
        let sign = if c < 0.0 { '-' } else { '+' };
        if i == 0 && sign == '+' {
            write!(out, " {} {}", format_g17(c.abs()), names[v.0]).unwrap();
        } else {
            write!(out, " {sign} {} {}", format_g17(c.abs()), names[v.0]).unwrap();
        }
    }
}

/// Renders `model` in CPLEX LP format.
pub fn write_lp(model: &MilpModel) -> String {
    let names: Vec<String> = model
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| sanitize(&v.name, &format!("v{i}_")))
        .collect();
    let mut out = String::new();
    out.push_str(match model.objective.sense {
        ObjSense::Maximize => "Maximize\n",
        ObjSense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    if names.is_empty() {
        out.push_str(" 0");
    } else {
        write_expr(&mut out, &model.objective.expr, &names);
    }
    if model.objective.constant != 0.0 {
        let c = model.objective.constant;
        write!(out, " {} {}", if c < 0.0 { '-' } else { '+' }, format_g17(c.abs())).unwrap();
    }
    out.push_str("\nSubject To\n");
    for (i, c) in model.constraints.iter().enumerate() {
        write!(out, " {}:", sanitize(&c.name, &format!("c{i}_"))).unwrap();
        write_expr(&mut out, &c.expr, &names);
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        };
        writeln!(out, " {op} {}", format_g17(c.rhs)).unwrap();
    }
    out.push_str("Bounds\n");
    for (v, name) in model.variables.iter().zip(&names) {
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => writeln!(out, " {name} free").unwrap(),
            (true, false) => writeln!(out, " {name} >= {}", format_g17(v.lower)).unwrap(),
            (false, true) => writeln!(out, " -inf <= {name} <= {}", format_g17(v.upper)).unwrap(),
            (true, true) if v.lower == v.upper => writeln!(out, " {name} = {}", format_g17(v.lower)).unwrap(),
            (true, true) => {
                writeln!(out, " {} <= {name} <= {}", format_g17(v.lower), format_g17(v.upper)).unwrap()
            }
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
            writeln!(out, " {n}").unwrap();
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_formatting() {
        assert_eq!(format_g17(1.0), "1");
        assert_eq!(format_g17(-2.5), "-2.5");
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(1.5e-7), "1.4999999999999999e-07");
        assert_eq!(format_g17(123456.0), "123456");
        for v in [0.1, 1.0 / 3.0, -7.25e-9, 6.02e23, 202.0] {
            assert_eq!(format_g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn writes_sections() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x0", 0.0, 1.0);
        let s = m.add_binary("l0_n0_s");
        let y = m.add_continuous("y", f64::NEG_INFINITY, f64::INFINITY);
        m.add_constraint("c0", LinExpr::term(x, 1.0).with(s, -0.5), Sense::Le, 0.25);
        m.add_constraint("c1", LinExpr::term(y, 1.0).with(x, -1.0), Sense::Eq, 0.0);
        m.set_objective(ObjSense::Maximize, LinExpr::term(y, 1.0), 0.0);
        let text = write_lp(&m);
        assert!(text.starts_with("Maximize\n obj: 1 y\nSubject To\n"));
        assert!(text.contains(" c0: 1 x0 - 0.5 l0_n0_s <= 0.25\n"));
        assert!(text.contains(" c1: - 1 x0 + 1 y = 0\n"));
        assert!(text.contains(" y free\n"));
        assert!(text.contains("Binaries\n l0_n0_s\n"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn names_are_sanitized() {
        assert_eq!(sanitize("a b", "v0_"), "a_b");
        assert_eq!(sanitize("1x", "v0_"), "v0_1x");
        assert_eq!(sanitize(&"n".repeat(300), "v").len(), 255);
    }
}
