//! Lexer and recursive-descent parser for `.pp` sources.
//!
//! ```text
//! program   := { item (NEWLINE | ';') }
//! item      := assign | "basis" IDENT "~" dist | "while" "true" ":" | "end"
//! assign    := IDENT { "," IDENT } "=" expr { "," expr }
//! expr      := term { ("+" | "-") term }
//! term      := unary { ("*" | "/") unary }
//! unary     := "-" unary | power
//! power     := atom [ ("^" | "**") INT ]
//! atom      := NUMBER | "pi" | "inf" | IDENT | IDENT "(" args ")" | "(" expr ")"
//! ```
//!
//! Distribution parameters must be constant; they are evaluated while parsing.

use std::collections::HashSet;
use std::f64::consts::PI;

use crate::dist::Distribution;
use crate::error::ParseError;

use super::ast::{Assign, Expr, Func, Program};

const RESERVED: &[&str] = &["while", "true", "end", "basis", "pi", "inf"];

pub(crate) fn is_reserved(name: &str) -> bool {
    RESERVED.contains(&name) || Func::from_name(name).is_some()
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(&'static str),
    Newline,
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, raw) in src.lines().enumerate() {
        let line = li + 1;
        let text = raw.split('#').next().unwrap_or("");
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s.parse::<f64>().map_err(|_| ParseError::Syntax {
                    line,
                    col,
                    expected: "a number".into(),
                })?;
                out.push(Token { tok: Tok::Num(v), line, col });
            } else if c.is_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(s), line, col });
            } else {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let sym: &'static str = if two == "**" {
                    "**"
                } else {
                    match c {
                        '+' => "+",
                        '-' => "-",
                        '*' => "*",
                        '/' => "/",
                        '^' => "^",
                        '(' => "(",
                        ')' => ")",
                        ',' => ",",
                        '=' => "=",
                        ';' => ";",
                        ':' => ":",
                        '~' => "~",
                        _ => {
                            return Err(ParseError::Syntax {
                                line,
                                col,
                                expected: format!("a token, found `{c}`"),
                            })
                        }
                    }
                };
                i += sym.len();
                out.push(Token { tok: Tok::Sym(sym), line, col });
            }
        }
        out.push(Token { tok: Tok::Newline, line, col: chars.len() + 1 });
    }
    let line = out.last().map_or(1, |t| t.line);
    out.push(Token { tok: Tok::Eof, line, col: 1 });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.to_string(),
        }
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.error(&format!("`{sym}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.error("an identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Sym(";")) {
            self.next();
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut initials = Vec::new();
        let mut body = Vec::new();
        let mut basis = Vec::new();
        // 0: initial block, 1: inside the loop, 2: after `end`
        let mut stage = 0;
        loop {
            self.skip_separators();
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "while" => {
                    if stage != 0 {
                        return Err(self.error("a single `while true:` loop"));
                    }
                    self.next();
                    if !self.keyword("true") {
                        return Err(self.error("`true`"));
                    }
                    self.expect(":")?;
                    stage = 1;
                    continue;
                }
                Tok::Ident(kw) if kw == "end" => {
                    if stage != 1 {
                        return Err(self.error("a statement"));
                    }
                    self.next();
                    stage = 2;
                }
                Tok::Ident(kw) if kw == "basis" => {
                    self.next();
                    let name = self.ident()?;
                    self.expect("~")?;
                    let dname = self.ident()?;
                    let law = self.distribution(&dname)?;
                    basis.push((name, law));
                }
                Tok::Ident(_) => {
                    if stage == 2 {
                        return Err(self.error("end of input after `end`"));
                    }
                    let a = self.assign()?;
                    if stage == 0 {
                        initials.push(a);
                    } else {
                        body.push(a);
                    }
                }
                _ => return Err(self.error("a statement")),
            }
            if !matches!(self.peek(), Tok::Newline | Tok::Sym(";") | Tok::Eof) {
                return Err(self.error("end of statement"));
            }
        }
        if stage == 0 {
            return Err(self.error("`while true:`"));
        }
        if stage == 1 {
            return Err(self.error("`end`"));
        }
        let mut p = Program {
            initials,
            body,
            basis,
            variables: vec![],
        };
        p.recompute_variables();
        Ok(p)
    }

    fn assign(&mut self) -> Result<Assign, ParseError> {
        let line = self.toks[self.pos].line;
        let mut targets = vec![self.target()?];
        while self.eat(",") {
            targets.push(self.target()?);
        }
        self.expect("=")?;
        let mut values = vec![self.expr()?];
        while self.eat(",") {
            values.push(self.expr()?);
        }
        if values.len() != targets.len() {
            return Err(self.error(&format!("{} expressions", targets.len())));
        }
        Ok(Assign {
            targets,
            values,
            line,
        })
    }

    fn target(&mut self) -> Result<String, ParseError> {
        let name = self.ident()?;
        if is_reserved(&name) {
            return Err(self.error("a variable name"));
        }
        Ok(name)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat("+") {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat("-") {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat("*") {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if matches!(self.peek(), Tok::Sym("/")) {
                self.next();
                let rhs = self.unary()?;
                if !rhs.vars().is_empty() || rhs.has_draw() {
                    return Err(self.error("a constant divisor"));
                }
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("-") {
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat("^") || self.eat("**") {
            match self.peek().clone() {
                Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                    self.next();
                    return Ok(Expr::Pow(Box::new(base), v as u32));
                }
                _ => return Err(self.error("a non-negative integer exponent")),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.next();
                Ok(Expr::Num(v))
            }
            Tok::Sym("(") => {
                self.next();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                if matches!(self.peek(), Tok::Sym("(")) {
                    if let Some(f) = Func::from_name(&name) {
                        self.next();
                        let arg = self.expr()?;
                        self.expect(")")?;
                        return Ok(Expr::call(f, arg));
                    }
                    if name.starts_with(|c: char| c.is_uppercase()) {
                        return Ok(Expr::Draw(self.distribution(&name)?));
                    }
                    return Err(ParseError::UnknownFunction(name));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(PI)),
                    "inf" => Ok(Expr::Num(f64::INFINITY)),
                    _ if is_reserved(&name) => Err(self.error("an expression")),
                    _ => Ok(Expr::Var(name)),
                }
            }
            _ => Err(self.error("an expression")),
        }
    }

    fn distribution(&mut self, name: &str) -> Result<Distribution, ParseError> {
        if !["Normal", "Uniform", "TruncNormal", "Gamma", "TruncGamma", "Beta"].contains(&name) {
            return Err(ParseError::UnknownDistribution(name.to_string()));
        }
        self.expect("(")?;
        let mut args = Vec::new();
        if !self.eat(")") {
            loop {
                let e = self.expr()?;
                let v = e.eval_const().ok_or_else(|| ParseError::InvalidParameters {
                    name: name.to_string(),
                    reason: "parameters must be constant".into(),
                })?;
                args.push(v);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        Distribution::from_call(name, &args)
    }
}

/// Checks declaration order and single assignment per block.
fn validate(p: &Program) -> Result<(), ParseError> {
    let mut declared: HashSet<&str> = HashSet::new();
    for a in &p.initials {
        for v in a.values.iter().flat_map(|e| e.vars()) {
            if !declared.contains(v.as_str()) {
                return Err(ParseError::UnknownVariable(v));
            }
        }
        for t in &a.targets {
            if !declared.insert(t) {
                return Err(ParseError::RedeclaredVariable(t.clone()));
            }
        }
    }
    let mut visible = declared.clone();
    let mut assigned: HashSet<&str> = HashSet::new();
    for a in &p.body {
        for v in a.values.iter().flat_map(|e| e.vars()) {
            if !visible.contains(v.as_str()) {
                return Err(ParseError::UnknownVariable(v));
            }
        }
        for t in &a.targets {
            if !assigned.insert(t) {
                return Err(ParseError::RedeclaredVariable(t.clone()));
            }
            visible.insert(t);
        }
    }
    for (v, _) in &p.basis {
        if !p.variables.contains(v) {
            return Err(ParseError::UnknownVariable(v.clone()));
        }
    }
    Ok(())
}

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let toks = lex(src)?;
    let p = Parser { toks, pos: 0 }.program()?;
    validate(&p)?;
    Ok(p)
}

/// Parses a standalone expression (used for `--target` monomials).
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    p.skip_separators();
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.error("end of expression"));
    }
    Ok(e)
}
