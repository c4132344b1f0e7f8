//! Recursive-descent parser for the text syntax.
//!
//! ```text
//! or     := and ('|' and)*
//! and    := until ('&' until)*
//! until  := unary ('U' '[' int ',' int ']' unary)*
//! unary  := '!' unary | ('F' | 'G') '[' int ',' int ']' unary | primary
//! primary:= 'TRUE' | '(' or ')' | atom
//! atom   := linexpr ('>=' | '<=') ['+'|'-'] number
//! ```

use std::collections::BTreeMap;

use super::{Formula, Layout, Predicate, Signal, StlError};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Bang,
    Amp,
    Pipe,
    Ge,
    Le,
    Plus,
    Minus,
    Star,
    Number(f64),
    Signal(usize, usize),
    Word(String),
}

struct Lexed {
    tok: Tok,
    pos: usize,
}

fn line_col(text: &str, pos: usize) -> (usize, usize) {
    let before = &text[..pos.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn syntax(text: &str, pos: usize, message: impl Into<String>) -> StlError {
    let (line, column) = line_col(text, pos);
    StlError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Lexed>, StlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b'[' => Some(Tok::LBracket),
            b']' => Some(Tok::RBracket),
            b',' => Some(Tok::Comma),
            b'!' => Some(Tok::Bang),
            b'&' => Some(Tok::Amp),
            b'|' => Some(Tok::Pipe),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Lexed { tok, pos: start });
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'>' || c == b'<' {
            if bytes.get(i + 1) != Some(&b'=') {
                return Err(syntax(text, i, "expected `>=` or `<=`"));
            }
            out.push(Lexed {
                tok: if c == b'>' { Tok::Ge } else { Tok::Le },
                pos: start,
            });
            i += 2;
        } else if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s = &text[start..i];
            let v: f64 = s
                .parse()
                .map_err(|_| syntax(text, start, format!("malformed number `{s}`")))?;
            out.push(Lexed {
                tok: Tok::Number(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &text[start..i];
            let is_signal = word.len() > 1
                && word.starts_with('x')
                && word[1..].bytes().all(|b| b.is_ascii_digit());
            if is_signal {
                let agent: usize = word[1..]
                    .parse()
                    .map_err(|_| syntax(text, start, "agent id out of range"))?;
                if bytes.get(i) != Some(&b'[') {
                    return Err(syntax(text, i, format!("expected `[` after `{word}`")));
                }
                let d0 = i + 1;
                let mut j = d0;
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                if j == d0 || bytes.get(j) != Some(&b']') {
                    return Err(syntax(text, d0, "expected a dimension index and `]`"));
                }
                let dim: usize = text[d0..j]
                    .parse()
                    .map_err(|_| syntax(text, d0, "dimension out of range"))?;
                out.push(Lexed {
                    tok: Tok::Signal(agent, dim),
                    pos: start,
                });
                i = j + 1;
            } else {
                out.push(Lexed {
                    tok: Tok::Word(word.to_string()),
                    pos: start,
                });
            }
        } else {
            let ch = text[i..].chars().next().unwrap();
            return Err(syntax(text, i, format!("unexpected character `{ch}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Lexed>,
    pos: usize,
    layout: &'a Layout,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map_or(self.text.len(), |l| l.pos)
    }

    fn err(&self, message: impl Into<String>) -> StlError {
        syntax(self.text, self.here(), message)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|l| l.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), StlError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(s)) if s == w)
    }

    fn or(&mut self) -> Result<Formula, StlError> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Tok::Pipe) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::or(parts)
        })
    }

    fn and(&mut self) -> Result<Formula, StlError> {
        let mut parts = vec![self.until()?];
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            parts.push(self.until()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::and(parts)
        })
    }

    fn until(&mut self) -> Result<Formula, StlError> {
        let mut left = self.unary()?;
        while self.is_word("U") {
            self.pos += 1;
            let (a, b) = self.interval()?;
            let right = self.unary()?;
            left = Formula::until(left, right, a, b);
        }
        Ok(left)
    }

    fn interval(&mut self) -> Result<(usize, usize), StlError> {
        self.expect(Tok::LBracket, "`[`")?;
        let a = self.interval_bound()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.interval_bound()?;
        self.expect(Tok::RBracket, "`]`")?;
        if a < 0 || b < 0 || a > b {
            return Err(StlError::Interval { a, b });
        }
        Ok((a as usize, b as usize))
    }

    fn interval_bound(&mut self) -> Result<i64, StlError> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.bump() {
            Some(Tok::Number(v)) if v.fract() == 0.0 && v < 1e15 => {
                Ok(if neg { -(v as i64) } else { v as i64 })
            }
            _ => {
                self.pos -= 1;
                Err(self.err("interval bounds must be integers"))
            }
        }
    }

    fn unary(&mut self) -> Result<Formula, StlError> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some(Tok::Word(w)) if w == "F" || w == "G" => {
                let always = w == "G";
                self.pos += 1;
                let (a, b) = self.interval()?;
                let inner = self.unary()?;
                Ok(if always {
                    Formula::always(inner, a, b)
                } else {
                    Formula::eventually(inner, a, b)
                })
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, StlError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Word(w)) if w == "TRUE" => {
                self.pos += 1;
                Ok(Formula::truth())
            }
            Some(Tok::Number(_) | Tok::Signal(..) | Tok::Plus | Tok::Minus) => self.atom(),
            Some(Tok::Word(w)) => Err(self.err(format!("unexpected `{w}`"))),
            Some(_) => Err(self.err("expected a formula")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn signal(&mut self) -> Result<Signal, StlError> {
        match self.bump() {
            Some(Tok::Signal(agent, dim)) => {
                let s = Signal::new(agent, dim);
                if !self.layout.contains(s) {
                    return Err(StlError::UnresolvedSignal { agent, dim });
                }
                Ok(s)
            }
            _ => {
                self.pos -= 1;
                Err(self.err("expected a signal like `x1[0]`"))
            }
        }
    }

    fn atom(&mut self) -> Result<Formula, StlError> {
        let mut coeffs: BTreeMap<Signal, f64> = BTreeMap::new();
        let mut first = true;
        loop {
            let mut sign = 1.0;
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    sign = -1.0;
                }
                _ if !first => break,
                _ => {}
            }
            first = false;
            let (coef, sig) = match self.peek() {
                Some(Tok::Number(v)) => {
                    let v = *v;
                    self.pos += 1;
                    self.expect(Tok::Star, "`*` between coefficient and signal")?;
                    (v, self.signal()?)
                }
                _ => (1.0, self.signal()?),
            };
            *coeffs.entry(sig).or_insert(0.0) += sign * coef;
        }
        let le = match self.bump() {
            Some(Tok::Ge) => false,
            Some(Tok::Le) => true,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected `>=` or `<=`"));
            }
        };
        let mut sign = 1.0;
        match self.peek() {
            Some(Tok::Minus) => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(Tok::Plus) => self.pos += 1,
            _ => {}
        }
        let c = match self.bump() {
            Some(Tok::Number(v)) => sign * v,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected a number"));
            }
        };
        coeffs.retain(|_, v| *v != 0.0);
        if coeffs.is_empty() {
            return Err(self.err("predicate has no signal terms"));
        }
        // lhs >= c  ->  lhs - c >= 0 ;  lhs <= c  ->  -lhs + c >= 0
        let p = if le {
            Predicate::new(coeffs.into_iter().map(|(s, v)| (s, -v)).collect(), c)
        } else {
            Predicate::new(coeffs, -c)
        };
        Ok(Formula::pred(p))
    }
}

/// Parses `text`, resolving every signal against `layout`.
pub fn parse_formula(text: &str, layout: &Layout) -> Result<Formula, StlError> {
    let toks = lex(text)?;
    let mut p = Parser {
        text,
        toks,
        pos: 0,
        layout,
    };
    let f = p.or()?;
    if p.pos < p.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}
