//! Reading and writing models in the CPLEX LP text format.
//!
//! The writer emits a fixed dialect:
//!
//! ```text
//! \ Model <name>
//! Minimize
//!  obj: 2 x + 1 y + 0.5
//! Subject To
//!  c0: 1 x + 1 y >= 1
//! Bounds
//!  -1 <= x <= 4
//!  y free
//! General
//!  n
//! Binary
//!  b
//! End
//! ```
//!
//! Every number is written in plain decimal notation with 17 significant
//! digits, trailing zeros removed (`0.10000000000000001`, `3`, `-250`).
//! Infinite bounds are `-inf` / `+inf`. Terms are separated by ` + ` or
//! ` - ` and long rows are wrapped after eight terms onto continuation lines
//! starting with a single space. Variables with bounds `[0, +inf)` (or
//! `[0, 1]` for binaries) get no bounds line. Names are restricted to
//! `[A-Za-z0-9_.]` and may not start with a digit or a dot; offending
//! characters become `_` and collisions get a `_<index>` suffix.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::model::{MilpModel, Sense, VarId, VarKind};
use crate::MilpError;

const TERMS_PER_LINE: usize = 8;

/// Formats `x` with 17 significant digits in plain decimal notation.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "+inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1; // position of the decimal point within `digits`
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        for _ in 0..(-point) {
            out.push('0');
        }
        out.push_str(&digits);
    } else if point as usize >= digits.len() {
        out.push_str(&digits);
        for _ in 0..(point as usize - digits.len()) {
            out.push('0');
        }
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    out
}

fn sanitize(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s.insert(0, '_');
    }
    s
}

/// Names used for the variables when writing `model` (sanitized and unique).
pub fn variable_names(model: &MilpModel) -> Vec<String> {
    unique_names(model.vars().iter().map(|v| v.name.as_str()))
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, n) in names.enumerate() {
        let mut s = sanitize(n);
        if seen.contains_key(&s) {
            s = format!("{s}_{i}");
        }
        seen.insert(s.clone(), i);
        out.push(s);
    }
    out
}

fn write_terms(out: &mut String, terms: &[(VarId, f64)], names: &[String]) {
    for (k, &(v, c)) in terms.iter().enumerate() {
        if k > 0 && k % TERMS_PER_LINE == 0 {
            out.push_str("\n ");
        }
        if k == 0 {
            if c < 0.0 {
                let _ = write!(out, "-{} {}", format_number(-c), names[v.0]);
            } else {
                let _ = write!(out, "{} {}", format_number(c), names[v.0]);
            }
        } else if c < 0.0 {
            let _ = write!(out, " - {} {}", format_number(-c), names[v.0]);
        } else {
            let _ = write!(out, " + {} {}", format_number(c), names[v.0]);
        }
    }
}

pub fn write_lp(model: &MilpModel) -> String {
    let names = variable_names(model);
    let row_names = unique_names(model.constraints().iter().map(|c| c.name.as_str()));
    let mut out = String::new();
    let _ = writeln!(out, "\\ Model {}", sanitize(&model.name));
    out.push_str("Minimize\n obj: ");
    write_terms(&mut out, model.objective(), &names);
    let offset = model.objective_offset();
    if offset != 0.0 || model.objective().is_empty() {
        if model.objective().is_empty() {
            out.push_str(&format_number(offset));
        } else if offset < 0.0 {
            let _ = write!(out, " - {}", format_number(-offset));
        } else {
            let _ = write!(out, " + {}", format_number(offset));
        }
    }
    out.push_str("\nSubject To\n");
    for (c, name) in model.constraints().iter().zip(&row_names) {
        let _ = write!(out, " {name}: ");
        if c.terms.is_empty() {
            // An empty row still has to parse; park it on a zero coefficient.
            let _ = write!(out, "0 {}", names.first().map(String::as_str).unwrap_or("_"));
        } else {
            write_terms(&mut out, &c.terms, &names);
        }
        let _ = writeln!(out, " {} {}", c.sense.symbol(), format_number(c.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars().iter().zip(&names) {
        let default = match v.kind {
            VarKind::Binary => v.lower == 0.0 && v.upper == 1.0,
            _ => v.lower == 0.0 && v.upper == f64::INFINITY,
        };
        if default {
            continue;
        }
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {name} free");
        } else if v.lower == v.upper {
            let _ = writeln!(out, " {name} = {}", format_number(v.lower));
        } else {
            let _ = writeln!(
                out,
                " {} <= {name} <= {}",
                format_number(v.lower),
                format_number(v.upper)
            );
        }
    }
    let general: Vec<&String> = model
        .vars()
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Integer)
        .map(|(_, n)| n)
        .collect();
    if !general.is_empty() {
        out.push_str("General\n");
        for n in general {
            let _ = writeln!(out, " {n}");
        }
    }
    let binary: Vec<&String> = model
        .vars()
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n)
        .collect();
    if !binary.is_empty() {
        out.push_str("Binary\n");
        for n in binary {
            let _ = writeln!(out, " {n}");
        }
    }
    out.push_str("End\n");
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Preamble,
    Objective,
    Constraints,
    Bounds,
    General,
    Binary,
    End,
}

fn section_keyword(line: &str) -> Option<(Section, bool, usize)> {
    let lower = line.to_ascii_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    let first = *words.first()?;
    let (section, maximize, nwords) = match first {
        "minimize" | "minimise" | "minimum" | "min" => (Section::Objective, false, 1),
        "maximize" | "maximise" | "maximum" | "max" => (Section::Objective, true, 1),
        "subject" if words.get(1) == Some(&"to") => (Section::Constraints, false, 2),
        "such" if words.get(1) == Some(&"that") => (Section::Constraints, false, 2),
        "st" | "s.t." | "st." => (Section::Constraints, false, 1),
        "bounds" | "bound" => (Section::Bounds, false, 1),
        "general" | "generals" | "gen" | "integer" | "integers" => (Section::General, false, 1),
        "binary" | "binaries" | "bin" => (Section::Binary, false, 1),
        "end" => (Section::End, false, 1),
        _ => return None,
    };
    Some((section, maximize, nwords))
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Name(String),
    Plus,
    Minus,
    Sense(Sense),
    Colon,
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Token>, MilpError> {
    let err = |message: String| MilpError::LpFormat { line, message };
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut toks = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '+' {
            toks.push(Token::Plus);
            i += 1;
        } else if c == '-' {
            toks.push(Token::Minus);
            i += 1;
        } else if c == ':' {
            toks.push(Token::Colon);
            i += 1;
        } else if c == '<' || c == '>' || c == '=' || c == '=' {
            let mut s = String::new();
            while i < chars.len() && matches!(chars[i], '<' | '>' | '=') {
                s.push(chars[i]);
                i += 1;
            }
            let sense = match s.as_str() {
                "<" | "<=" | "=<" => Sense::Le,
                ">" | ">=" | "=>" => Sense::Ge,
                "=" => Sense::Eq,
                other => return Err(err(format!("unknown relation `{other}`"))),
            };
            toks.push(Token::Sense(sense));
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s
                .parse()
                .map_err(|_| err(format!("bad number `{s}`")))?;
            toks.push(Token::Number(v));
        } else {
            let start = i;
            while i < chars.len()
                && !chars[i].is_whitespace()
                && !matches!(chars[i], '+' | '-' | ':' | '<' | '>' | '=')
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let lower = s.to_ascii_lowercase();
            if lower == "inf" || lower == "infinity" {
                toks.push(Token::Number(f64::INFINITY));
            } else {
                toks.push(Token::Name(s));
            }
        }
    }
    Ok(toks)
}

struct Builder {
    model: MilpModel,
    index: HashMap<String, VarId>,
}

impl Builder {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self
            .model
            .add_var(name, 0.0, f64::INFINITY, VarKind::Continuous);
        self.index.insert(name.to_string(), v);
        v
    }
}

/// Parses `[sign] [coef] name` terms and bare constants.
fn parse_linear(
    toks: &[Token],
    b: &mut Builder,
    line: usize,
) -> Result<(Vec<(VarId, f64)>, f64), MilpError> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        let mut saw_sign = false;
        while i < toks.len() && matches!(toks[i], Token::Plus | Token::Minus) {
            if toks[i] == Token::Minus {
                sign = -sign;
            }
            saw_sign = true;
            i += 1;
        }
        if i >= toks.len() {
            return Err(MilpError::LpFormat {
                line,
                message: "dangling sign".into(),
            });
        }
        if !saw_sign && !terms.is_empty() {
            return Err(MilpError::LpFormat {
                line,
                message: "missing operator between terms".into(),
            });
        }
        match &toks[i] {
            Token::Number(c) => {
                if let Some(Token::Name(n)) = toks.get(i + 1) {
                    let v = b.var(n);
                    terms.push((v, sign * c));
                    i += 2;
                } else {
                    constant += sign * c;
                    i += 1;
                }
            }
            Token::Name(n) => {
                let v = b.var(n);
                terms.push((v, sign));
                i += 1;
            }
            other => {
                return Err(MilpError::LpFormat {
                    line,
                    message: format!("unexpected token {other:?}"),
                })
            }
        }
        // Allow a constant term to be followed by more terms.
        if terms.is_empty() && constant != 0.0 {
            continue;
        }
    }
    Ok((terms, constant))
}

fn strip_label(toks: &[Token]) -> &[Token] {
    if toks.len() >= 2 && matches!(toks[0], Token::Name(_)) && toks[1] == Token::Colon {
        &toks[2..]
    } else {
        toks
    }
}

fn label(toks: &[Token]) -> Option<String> {
    match (toks.first(), toks.get(1)) {
        (Some(Token::Name(n)), Some(Token::Colon)) => Some(n.clone()),
        _ => None,
    }
}

/// Parses an LP file into a model. Maximization objectives are negated.
pub fn parse_lp(text: &str) -> Result<MilpModel, MilpError> {
    let mut b = Builder {
        model: MilpModel::new("lp"),
        index: HashMap::new(),
    };
    let mut section = Section::Preamble;
    let mut maximize = false;
    // Statements span lines; they are flushed when a new one starts.
    let mut pending: Vec<Token> = Vec::new();
    let mut pending_line = 0usize;
    let mut objective_seen = false;
    let mut row_count = 0usize;

    let mut flush = |section: Section,
                     toks: &mut Vec<Token>,
                     line: usize,
                     b: &mut Builder,
                     maximize: bool|
     -> Result<(), MilpError> {
        if toks.is_empty() {
            return Ok(());
        }
        let toks_now = std::mem::take(toks);
        match section {
            Section::Objective => {
                let (terms, constant) = parse_linear(strip_label(&toks_now), b, line)?;
                let s = if maximize { -1.0 } else { 1.0 };
                b.model
                    .set_objective(terms.into_iter().map(|(v, c)| (v, s * c)), s * constant);
                objective_seen = true;
            }
            Section::Constraints => {
                let name = label(&toks_now).unwrap_or_else(|| format!("R{row_count}"));
                let body = strip_label(&toks_now);
                let pos = body
                    .iter()
                    .position(|t| matches!(t, Token::Sense(_)))
                    .ok_or_else(|| MilpError::LpFormat {
                        line,
                        message: "constraint without relation".into(),
                    })?;
                let Token::Sense(sense) = body[pos] else { unreachable!() };
                let (terms, c_left) = parse_linear(&body[..pos], b, line)?;
                let (rterms, c_right) = parse_linear(&body[pos + 1..], b, line)?;
                if !rterms.is_empty() {
                    return Err(MilpError::LpFormat {
                        line,
                        message: "variables on the right-hand side".into(),
                    });
                }
                b.model.add_constraint(name, terms, sense, c_right - c_left);
                row_count += 1;
            }
            _ => {}
        }
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('\\') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        if let Some((next, is_max, nwords)) = section_keyword(line) {
            // `max`/`min` only count as keywords when the rest of the line is
            // not a statement continuation of a constraint.
            let rest: String = line.split_whitespace().skip(nwords).collect::<Vec<_>>().join(" ");
            flush(section, &mut pending, pending_line, &mut b, maximize)?;
            section = next;
            if next == Section::Objective {
                maximize = is_max;
            }
            if next == Section::End {
                break;
            }
            if rest.is_empty() {
                continue;
            }
            pending = tokenize(&rest, lineno)?;
            pending_line = lineno;
            continue;
        }
        let toks = tokenize(line, lineno)?;
        match section {
            Section::Preamble => {
                return Err(MilpError::LpFormat {
                    line: lineno,
                    message: "content before the objective section".into(),
                })
            }
            Section::Objective => {
                pending.extend(toks);
                pending_line = lineno;
            }
            Section::Constraints => {
                let starts_new = label(&toks).is_some()
                    || pending.iter().any(|t| matches!(t, Token::Sense(_)))
                        && pending.last().is_some_and(|t| matches!(t, Token::Number(_)));
                if starts_new {
                    flush(section, &mut pending, pending_line, &mut b, maximize)?;
                    pending_line = lineno;
                }
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.extend(toks);
            }
            Section::Bounds => parse_bound(&toks, &mut b, lineno)?,
            Section::General | Section::Binary => {
                for t in toks {
                    let Token::Name(n) = t else {
                        return Err(MilpError::LpFormat {
                            line: lineno,
                            message: "expected variable names".into(),
                        });
                    };
                    let v = b.var(&n);
                    let kind = if section == Section::Binary {
                        VarKind::Binary
                    } else {
                        VarKind::Integer
                    };
                    b.model.set_kind(v, kind);
                }
            }
            Section::End => break,
        }
    }
    flush(section, &mut pending, pending_line, &mut b, maximize)?;
    if !objective_seen && b.model.objective().is_empty() && b.model.num_vars() == 0 {
        return Err(MilpError::LpFormat {
            line: 0,
            message: "empty model".into(),
        });
    }
    Ok(b.model)
}

fn parse_bound(toks: &[Token], b: &mut Builder, line: usize) -> Result<(), MilpError> {
    let err = |m: &str| MilpError::LpFormat {
        line,
        message: m.to_string(),
    };
    // Fold unary signs into numbers.
    let mut items: Vec<Token> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match (&toks[i], toks.get(i + 1)) {
            (Token::Minus, Some(Token::Number(v))) => {
                items.push(Token::Number(-v));
                i += 2;
            }
            (Token::Plus, Some(Token::Number(v))) => {
                items.push(Token::Number(*v));
                i += 2;
            }
            (t, _) => {
                items.push(t.clone());
                i += 1;
            }
        }
    }
    match items.as_slice() {
        [Token::Name(n), Token::Name(kw)] if kw.eq_ignore_ascii_case("free") => {
            let v = b.var(n);
            b.model.set_bounds(v, f64::NEG_INFINITY, f64::INFINITY);
        }
        [Token::Number(lo), Token::Sense(Sense::Le), Token::Name(n), Token::Sense(Sense::Le), Token::Number(hi)] =>
        {
            let v = b.var(n);
            b.model.set_bounds(v, *lo, *hi);
        }
        [Token::Name(n), Token::Sense(s), Token::Number(x)] => {
            let v = b.var(n);
            let var = b.model.var(v).clone();
            match s {
                Sense::Le => b.model.set_bounds(v, var.lower, *x),
                Sense::Ge => b.model.set_bounds(v, *x, var.upper),
                Sense::Eq => b.model.set_bounds(v, *x, *x),
            }
        }
        [Token::Number(x), Token::Sense(s), Token::Name(n)] => {
            let v = b.var(n);
            let var = b.model.var(v).clone();
            match s {
                Sense::Le => b.model.set_bounds(v, *x, var.upper),
                Sense::Ge => b.model.set_bounds(v, var.lower, *x),
                Sense::Eq => b.model.set_bounds(v, *x, *x),
            }
        }
        _ => return Err(err("unrecognized bound")),
    }
    Ok(())
}
