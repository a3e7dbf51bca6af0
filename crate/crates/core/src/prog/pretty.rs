//! Canonical source form. The output re-parses to an equal AST.

use std::fmt;

use crate::dist::fmt_number;

use super::ast::{Assign, Expr, Program};

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if v.is_sign_negative() => 3,
        Expr::Pow(..) => 4,
        _ => 5,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if prec(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => f.write_str(&fmt_number(*v)),
            Expr::Var(v) => f.write_str(v),
            Expr::Draw(d) => write!(f, "{d}"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                write_child(f, a, 1)?;
                f.write_str(if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                write_child(f, a, 2)?;
                f.write_str(if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                write_child(f, b, 3)
            }
            Expr::Pow(a, e) => {
                write_child(f, a, 5)?;
                write!(f, "^{e}")
            }
            Expr::Call(g, a) => write!(f, "{}({a})", g.name()),
        }
    }
}

impl fmt::Display for Assign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values: Vec<String> = self.values.iter().map(|e| e.to_string()).collect();
        write!(f, "{} = {}", self.targets.join(", "), values.join(", "))
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (v, d) in &self.basis {
            writeln!(f, "basis {v} ~ {d}")?;
        }
        for a in &self.initials {
            writeln!(f, "{a}")?;
        }
        writeln!(f, "while true:")?;
        for a in &self.body {
            writeln!(f, "    {a}")?;
        }
        writeln!(f, "end")
    }
}

pub fn pretty_print(p: &Program) -> String {
    p.to_string()
}
