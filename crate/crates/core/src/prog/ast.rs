use std::collections::BTreeSet;

use serde::Serialize;

use crate::dist::Distribution;

/// Non-polynomial functions that may appear in expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    /// A fresh draw, re-sampled every time the expression is evaluated.
    Draw(Distribution),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    /// Division by an expression free of variables and draws.
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(x: f64) -> Expr {
        Expr::Num(x)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        Expr::Call(f, Box::new(a))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Draw(_) => vec![],
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => vec![a],
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => vec![a, b],
        }
    }

    /// Pre-order walk.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(v.clone());
            }
        });
        out
    }

    pub fn has_draw(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Draw(_)));
        found
    }

    pub fn has_call(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Call(..)));
        found
    }

    /// Bottom-up rebuild; `f` sees every node after its children were rebuilt.
    pub fn rebuild(&self, f: &mut impl FnMut(Expr) -> Expr) -> Expr {
        let node = match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Draw(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.rebuild(f))),
            Expr::Pow(a, e) => Expr::Pow(Box::new(a.rebuild(f)), *e),
            Expr::Call(g, a) => Expr::Call(*g, Box::new(a.rebuild(f))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.rebuild(f)), Box::new(b.rebuild(f))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.rebuild(f)), Box::new(b.rebuild(f))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.rebuild(f)), Box::new(b.rebuild(f))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.rebuild(f)), Box::new(b.rebuild(f))),
        };
        f(node)
    }

    pub fn substitute(&self, var: &str, with: &Expr) -> Expr {
        self.rebuild(&mut |e| match e {
            Expr::Var(ref v) if v == var => with.clone(),
            other => other,
        })
    }

    /// Value of an expression without variables or draws.
    pub fn eval_const(&self) -> Option<f64> {
        Some(match self {
            Expr::Num(x) => *x,
            Expr::Var(_) | Expr::Draw(_) => return None,
            Expr::Neg(a) => -a.eval_const()?,
            Expr::Add(a, b) => a.eval_const()? + b.eval_const()?,
            Expr::Sub(a, b) => a.eval_const()? - b.eval_const()?,
            Expr::Mul(a, b) => a.eval_const()? * b.eval_const()?,
            Expr::Div(a, b) => a.eval_const()? / b.eval_const()?,
            Expr::Pow(a, e) => a.eval_const()?.powi(*e as i32),
            Expr::Call(f, a) => f.apply(a.eval_const()?),
        })
    }

    /// Value under `env`; draws evaluate to NaN.
    pub fn eval_with(&self, env: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(v) => env(v),
            Expr::Draw(_) => f64::NAN,
            Expr::Neg(a) => -a.eval_with(env),
            Expr::Add(a, b) => a.eval_with(env) + b.eval_with(env),
            Expr::Sub(a, b) => a.eval_with(env) - b.eval_with(env),
            Expr::Mul(a, b) => a.eval_with(env) * b.eval_with(env),
            Expr::Div(a, b) => a.eval_with(env) / b.eval_with(env),
            Expr::Pow(a, e) => a.eval_with(env).powi(*e as i32),
            Expr::Call(f, a) => f.apply(a.eval_with(env)),
        }
    }

    /// Light constant folding: evaluates constant subtrees and drops `+ 0`,
    /// `* 1` and `* 0`.
    pub fn simplify(&self) -> Expr {
        self.rebuild(&mut |e| {
            if !matches!(e, Expr::Num(_)) {
                if let Some(v) = e.eval_const() {
                    if v.is_finite() {
                        return Expr::Num(v);
                    }
                }
            }
            match e {
                Expr::Add(a, b) => match (*a, *b) {
                    (Expr::Num(z), x) | (x, Expr::Num(z)) if z == 0.0 => x,
                    (a, b) => Expr::add(a, b),
                },
                Expr::Sub(a, b) => match (*a, *b) {
                    (x, Expr::Num(z)) if z == 0.0 => x,
                    (Expr::Num(z), x) if z == 0.0 => Expr::Neg(Box::new(x)),
                    (a, b) => Expr::sub(a, b),
                },
                Expr::Mul(a, b) => match (*a, *b) {
                    (Expr::Num(z), _) | (_, Expr::Num(z)) if z == 0.0 => Expr::Num(0.0),
                    (Expr::Num(o), x) | (x, Expr::Num(o)) if o == 1.0 => x,
                    (a, b) => Expr::mul(a, b),
                },
                Expr::Pow(a, 1) => *a,
                Expr::Pow(_, 0) => Expr::Num(1.0),
                other => other,
            }
        })
    }
}

/// One statement: `a = e` or the simultaneous `a, b = e1, e2`.
#[derive(Clone, Debug)]
pub struct Assign {
    pub targets: Vec<String>,
    pub values: Vec<Expr>,
    /// Source line, 0 for synthesized statements.
    pub line: usize,
}

impl Assign {
    pub fn single(target: &str, value: Expr) -> Assign {
        Assign {
            targets: vec![target.to_string()],
            values: vec![value],
            line: 0,
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&String, &Expr)> {
        self.targets.iter().zip(&self.values)
    }
}

impl PartialEq for Assign {
    fn eq(&self, other: &Self) -> bool {
        self.targets == other.targets && self.values == other.values
    }
}

/// A single-path loop: initial block, then `while true:` body `end`.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub initials: Vec<Assign>,
    pub body: Vec<Assign>,
    /// Reference laws declared with `basis name ~ Dist(...)`, used when a
    /// state variable is the argument of an expanded function.
    pub basis: Vec<(String, Distribution)>,
    /// All variables in order of first assignment.
    pub variables: Vec<String>,
}

impl Program {
    /// Variables assigned in the body, in body order.
    pub fn body_targets(&self) -> Vec<&String> {
        self.body.iter().flat_map(|a| a.targets.iter()).collect()
    }

    /// Index of the body statement assigning `var`.
    pub fn body_index(&self, var: &str) -> Option<usize> {
        self.body
            .iter()
            .position(|a| a.targets.iter().any(|t| t == var))
    }

    pub fn body_update(&self, var: &str) -> Option<&Expr> {
        self.body
            .iter()
            .flat_map(|a| a.pairs())
            .find(|(t, _)| *t == var)
            .map(|(_, e)| e)
    }

    pub fn basis_law(&self, var: &str) -> Option<Distribution> {
        self.basis.iter().find(|(v, _)| v == var).map(|(_, d)| *d)
    }

    pub(crate) fn recompute_variables(&mut self) {
        let mut seen = Vec::new();
        for a in self.initials.iter().chain(&self.body) {
            for t in &a.targets {
                if !seen.contains(t) {
                    seen.push(t.clone());
                }
            }
        }
        self.variables = seen;
    }

    /// A variable name not yet used by the program, derived from `stem`.
    pub fn fresh_name(&self, stem: &str) -> String {
        let mut name = stem.to_string();
        while self.variables.contains(&name) || super::parse::is_reserved(&name) {
            name.push('_');
        }
        name
    }
}
