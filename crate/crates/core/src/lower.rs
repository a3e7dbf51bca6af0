//! Forward symbolic evaluation of a block.
//!
//! Every variable is mapped to a polynomial over [`Atom`]s: the variable's
//! value at the start of the iteration, fresh draws of the current iteration,
//! and cos/sin/exp of a scaled draw. Calls whose argument is affine in fresh
//! draws are expanded with the angle-sum identities and `exp(a + b) = exp(a)
//! exp(b)`. Any other call becomes an opaque atom and is recorded as a site.

use std::collections::HashMap;
use std::fmt;

use crate::dist::Distribution;
use crate::poly::{Monomial, Poly};
use crate::prog::{Expr, Func, Program};

/// A positive or negative real scale, ordered by its bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scale(u64);

impl Scale {
    pub fn new(x: f64) -> Scale {
        // -0.0 and 0.0 must coincide
        Scale((x + 0.0).to_bits())
    }

    pub fn value(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl fmt::Debug for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// Value of a program variable at the start of the iteration.
    State(usize),
    Draw(usize),
    Cos(usize, Scale),
    Sin(usize, Scale),
    Exp(usize, Scale),
    /// Result of a call that could not be expanded.
    Opaque(usize),
}

impl Atom {
    pub fn draw(&self) -> Option<usize> {
        match *self {
            Atom::Draw(j) | Atom::Cos(j, _) | Atom::Sin(j, _) | Atom::Exp(j, _) => Some(j),
            _ => None,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::State(v) => write!(f, "v{v}"),
            Atom::Draw(j) => write!(f, "z{j}"),
            Atom::Cos(j, s) => write!(f, "cos({}*z{j})", s.value()),
            Atom::Sin(j, s) => write!(f, "sin({}*z{j})", s.value()),
            Atom::Exp(j, s) => write!(f, "exp({}*z{j})", s.value()),
            Atom::Opaque(k) => write!(f, "site{k}"),
        }
    }
}

pub type APoly = Poly<Atom>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Initial,
    Body,
}

/// One call occurrence in a block.
#[derive(Clone, Debug)]
pub struct Site {
    pub id: usize,
    /// Statement index within the block.
    pub stmt: usize,
    pub func: Func,
    pub arg_expr: Expr,
    /// Symbolic value of the argument at the point of the call.
    pub arg: APoly,
    /// True when the call was expanded into draw atoms.
    pub expanded: bool,
}

#[derive(Clone, Debug)]
pub struct Lowered {
    /// New value of every variable after one pass; variables the block does
    /// not assign keep `State(v)` (body) or `0` (initial block).
    pub updates: Vec<APoly>,
    pub assigned: Vec<bool>,
    pub draws: Vec<Distribution>,
    pub sites: Vec<Site>,
}

impl Lowered {
    pub fn has_opaque(&self) -> bool {
        self.sites.iter().any(|s| !s.expanded)
    }
}

/// Splits `p` as `c0 + sum_j a_j * Draw(j)` when it has that shape.
pub fn affine_in_draws(p: &APoly) -> Option<(f64, Vec<(usize, f64)>)> {
    let mut c0 = 0.0;
    let mut lin = Vec::new();
    for (m, c) in p.terms() {
        match m.powers() {
            [] => c0 = c,
            [(Atom::Draw(j), 1)] => lin.push((*j, c)),
            _ => return None,
        }
    }
    Some((c0, lin))
}

/// `(cos(arg), sin(arg))` for `arg = c0 + sum_j a_j z_j`.
pub fn expand_trig(c0: f64, lin: &[(usize, f64)]) -> (APoly, APoly) {
    let (s0, k0) = c0.sin_cos();
    let mut re = APoly::constant(k0);
    let mut im = APoly::constant(s0);
    for &(j, a) in lin {
        if a == 0.0 {
            continue;
        }
        let cj = APoly::var(Atom::Cos(j, Scale::new(a.abs())));
        let sj = APoly::var(Atom::Sin(j, Scale::new(a.abs()))).scale(a.signum());
        let nre = re.mul(&cj).sub(&im.mul(&sj));
        let nim = re.mul(&sj).add(&im.mul(&cj));
        re = nre;
        im = nim;
    }
    (re, im)
}

pub fn expand_exp(c0: f64, lin: &[(usize, f64)]) -> APoly {
    let mut m = Vec::new();
    for &(j, a) in lin {
        if a != 0.0 {
            m.push((Atom::Exp(j, Scale::new(a)), 1));
        }
    }
    APoly::monomial(Monomial::from_powers(m), c0.exp())
}

struct Lowerer<'a> {
    index: &'a HashMap<&'a str, usize>,
    env: Vec<APoly>,
    draws: Vec<Distribution>,
    sites: Vec<Site>,
    stmt: usize,
}

impl Lowerer<'_> {
    fn eval(&mut self, e: &Expr) -> APoly {
        match e {
            Expr::Num(x) => APoly::constant(*x),
            Expr::Var(v) => self.env[self.index[v.as_str()]].clone(),
            Expr::Draw(d) => {
                self.draws.push(*d);
                APoly::var(Atom::Draw(self.draws.len() - 1))
            }
            Expr::Neg(a) => self.eval(a).scale(-1.0),
            Expr::Add(a, b) => {
                let x = self.eval(a);
                x.add(&self.eval(b))
            }
            Expr::Sub(a, b) => {
                let x = self.eval(a);
                x.sub(&self.eval(b))
            }
            Expr::Mul(a, b) => {
                let x = self.eval(a);
                x.mul(&self.eval(b))
            }
            Expr::Div(a, b) => {
                let x = self.eval(a);
                let d = b.eval_const().expect("divisor checked at parse time");
                x.scale(1.0 / d)
            }
            Expr::Pow(a, k) => self.eval(a).pow(*k),
            Expr::Call(f, a) => {
                let arg = self.eval(a);
                let id = self.sites.len();
                let mut site = Site {
                    id,
                    stmt: self.stmt,
                    func: *f,
                    arg_expr: (**a).clone(),
                    arg: arg.clone(),
                    expanded: true,
                };
                let value = if let Some(c) = arg.as_constant() {
                    APoly::constant(f.apply(c))
                } else {
                    match (f, affine_in_draws(&arg)) {
                        (Func::Cos, Some((c0, lin))) => expand_trig(c0, &lin).0,
                        (Func::Sin, Some((c0, lin))) => expand_trig(c0, &lin).1,
                        (Func::Exp, Some((c0, lin))) => expand_exp(c0, &lin),
                        _ => {
                            site.expanded = false;
                            APoly::var(Atom::Opaque(id))
                        }
                    }
                };
                self.sites.push(site);
                value
            }
        }
    }
}

pub fn var_index(p: &Program) -> HashMap<&str, usize> {
    p.variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect()
}

/// Lowers the initial block or the loop body of `p`.
pub fn lower(p: &Program, block: Block) -> Lowered {
    let index = var_index(p);
    let n = p.variables.len();
    let env = match block {
        Block::Initial => vec![APoly::zero(); n],
        Block::Body => (0..n).map(|v| APoly::var(Atom::State(v))).collect(),
    };
    let mut l = Lowerer {
        index: &index,
        env,
        draws: vec![],
        sites: vec![],
        stmt: 0,
    };
    let stmts = match block {
        Block::Initial => &p.initials,
        Block::Body => &p.body,
    };
    let mut assigned = vec![false; n];
    for (si, a) in stmts.iter().enumerate() {
        l.stmt = si;
        let values: Vec<APoly> = a.values.iter().map(|e| l.eval(e)).collect();
        for (t, v) in a.targets.iter().zip(values) {
            let i = index[t.as_str()];
            l.env[i] = v;
            assigned[i] = true;
        }
    }
    Lowered {
        updates: l.env,
        assigned,
        draws: l.draws,
        sites: l.sites,
    }
}

/// Symbolic value of `e` evaluated just before body statement `stmt`.
/// Draw indices agree with [`lower`] for draws made before that point.
pub fn lower_expr_at(p: &Program, stmt: usize, e: &Expr) -> APoly {
    let index = var_index(p);
    let n = p.variables.len();
    let mut l = Lowerer {
        index: &index,
        env: (0..n).map(|v| APoly::var(Atom::State(v))).collect(),
        draws: vec![],
        sites: vec![],
        stmt: 0,
    };
    for (si, a) in p.body.iter().enumerate().take(stmt) {
        l.stmt = si;
        let values: Vec<APoly> = a.values.iter().map(|e| l.eval(e)).collect();
        for (t, v) in a.targets.iter().zip(values) {
            l.env[index[t.as_str()]] = v;
        }
    }
    l.stmt = stmt;
    l.eval(e)
}
