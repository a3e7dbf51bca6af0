//! Moment closure and exact evaluation.
//!
//! For a Prob-solvable loop the expectations of a finite set of monomials
//! satisfy `M_{n+1} = A M_n + b`. The set is found by substituting the body
//! into each monomial, taking expectations over the fresh draws and adding
//! every state monomial that shows up, breadth first from the targets.

mod table;

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::exactmom::{multi_exp_moment, multi_trig_moment};
use crate::lower::{self, APoly, Atom, Block, Lowered};
use crate::poly::{Monomial, Poly};
use crate::prog::{nonlinear_cycle, parse_expr, Expr, Program};

pub use table::{derived_stats, program_hash, Method, MomentRow, MomentTable, Stats};

/// Largest closure before giving up.
pub const CLOSURE_LIMIT: usize = 5000;

/// Monomial over variable indices of a program.
pub type StateMono = Monomial<usize>;

#[derive(Clone, Debug)]
pub struct MomentRecurrence {
    pub variables: Vec<String>,
    /// The closed monomial set S; the constant monomial is not part of it.
    pub monomials: Vec<StateMono>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub init: DVector<f64>,
    /// Positions of the requested targets in `monomials` (`None` for the
    /// constant monomial).
    pub targets: Vec<Option<usize>>,
}

impl MomentRecurrence {
    pub fn monomial_name(&self, m: &StateMono) -> String {
        m.map_vars(|v| self.variables[*v].clone()).to_string()
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

/// Parses `x`, `x^2`, `x*y^3`, or `1` into a monomial over `p`'s variables.
pub fn parse_monomial(p: &Program, src: &str) -> Result<StateMono> {
    fn walk(p: &Program, e: &Expr, out: &mut Vec<(usize, u32)>, power: u32) -> Result<()> {
        match e {
            Expr::Num(x) if *x == 1.0 => Ok(()),
            Expr::Var(v) => {
                let i = p
                    .variables
                    .iter()
                    .position(|w| w == v)
                    .ok_or_else(|| Error::Invalid(format!("unknown variable `{v}` in target")))?;
                out.push((i, power));
                Ok(())
            }
            Expr::Mul(a, b) => {
                walk(p, a, out, power)?;
                walk(p, b, out, power)
            }
            Expr::Pow(a, k) => walk(p, a, out, power * k),
            _ => Err(Error::Invalid(format!("target `{e}` is not a monomial"))),
        }
    }
    let e = parse_expr(src)?;
    let mut powers = Vec::new();
    walk(p, &e, &mut powers, 1)?;
    Ok(Monomial::from_powers(powers))
}

/// Expectation over the fresh draws of a block, with a memo of single-draw
/// moments keyed by draw and atom powers.
pub(crate) struct DrawExpectation<'a> {
    draws: &'a [Distribution],
    cache: HashMap<(usize, Vec<(Atom, u32)>), f64>,
}

impl<'a> DrawExpectation<'a> {
    pub(crate) fn new(draws: &'a [Distribution]) -> Self {
        DrawExpectation {
            draws,
            cache: HashMap::new(),
        }
    }

    fn single(&mut self, j: usize, atoms: Vec<(Atom, u32)>) -> Result<f64> {
        if let Some(v) = self.cache.get(&(j, atoms.clone())) {
            return Ok(*v);
        }
        let d = &self.draws[j];
        let mut power = 0;
        let mut trig: Vec<(f64, u32, u32)> = Vec::new();
        let mut exp: Vec<(f64, u32)> = Vec::new();
        for (a, e) in &atoms {
            match a {
                Atom::Draw(_) => power += e,
                Atom::Cos(_, s) | Atom::Sin(_, s) => {
                    let s = s.value();
                    let idx = match trig.iter().position(|t| t.0 == s) {
                        Some(i) => i,
                        None => {
                            trig.push((s, 0, 0));
                            trig.len() - 1
                        }
                    };
                    if matches!(a, Atom::Cos(..)) {
                        trig[idx].1 += e;
                    } else {
                        trig[idx].2 += e;
                    }
                }
                Atom::Exp(_, s) => exp.push((s.value(), *e)),
                _ => unreachable!("not a draw atom"),
            }
        }
        let value = match (trig.is_empty(), exp.is_empty()) {
            (true, true) => d.raw_moment(power)?,
            (false, true) => multi_trig_moment(d, power, &trig)?,
            (true, false) => multi_exp_moment(d, power, &exp)?,
            (false, false) => {
                return Err(Error::NonLinearCycle(format!(
                    "exp and sin/cos of the same draw {d} have no joint moment rule"
                )))
            }
        };
        self.cache.insert((j, atoms), value);
        Ok(value)
    }

    /// Replaces every product of draw atoms by its expectation.
    pub(crate) fn expect(&mut self, p: &APoly) -> Result<Poly<usize>> {
        let mut out = Poly::zero();
        for (m, c) in p.terms() {
            let mut state = Vec::new();
            let mut coef = c;
            // atoms are sorted by kind first, so regroup by draw index
            let mut by_draw: Vec<(usize, Vec<(Atom, u32)>)> = Vec::new();
            for (a, e) in m.powers() {
                match a {
                    Atom::State(v) => state.push((*v, *e)),
                    Atom::Opaque(_) => {
                        return Err(Error::NotProbSolvable(
                            "a non-polynomial call remains; rewrite or approximate it first".into(),
                        ))
                    }
                    other => {
                        let j = other.draw().unwrap();
                        match by_draw.iter_mut().find(|(k, _)| *k == j) {
                            Some((_, g)) => g.push((*a, *e)),
                            None => by_draw.push((j, vec![(*a, *e)])),
                        }
                    }
                }
            }
            for (j, atoms) in by_draw {
                coef *= self.single(j, atoms)?;
                if coef == 0.0 {
                    break;
                }
            }
            if coef != 0.0 {
                out.add_term(Monomial::from_powers(state), coef);
            }
        }
        Ok(out)
    }
}

/// Memoised powers of the per-variable update polynomials.
struct Substituter<'a> {
    updates: &'a [APoly],
    powers: HashMap<(usize, u32), APoly>,
}

impl Substituter<'_> {
    fn power(&mut self, v: usize, e: u32) -> APoly {
        if let Some(p) = self.powers.get(&(v, e)) {
            return p.clone();
        }
        let p = if e == 1 {
            self.updates[v].clone()
        } else {
            let half = self.power(v, e / 2);
            let sq = half.mul(&half);
            if e % 2 == 1 {
                sq.mul(&self.updates[v])
            } else {
                sq
            }
        };
        self.powers.insert((v, e), p.clone());
        p
    }

    fn apply(&mut self, m: &StateMono) -> APoly {
        let mut out = APoly::constant(1.0);
        for (v, e) in m.powers() {
            out = out.mul(&self.power(*v, *e));
        }
        out
    }
}

fn dependencies(l: &Lowered, v: usize) -> Vec<usize> {
    let mut deps = Vec::new();
    for (m, _) in l.updates[v].terms() {
        for (a, _) in m.powers() {
            if let Atom::State(u) = a {
                if !deps.contains(u) {
                    deps.push(*u);
                }
            }
        }
    }
    deps
}

pub fn moment_closure(p: &Program, targets: &[StateMono]) -> Result<MomentRecurrence> {
    let body = lower::lower(p, Block::Body);
    let init = lower::lower(p, Block::Initial);
    let n = p.variables.len();

    // variables that can influence the targets
    let mut relevant = vec![false; n];
    let mut stack: Vec<usize> = targets
        .iter()
        .flat_map(|m| m.powers().iter().map(|(v, _)| *v))
        .collect();
    while let Some(v) = stack.pop() {
        if !relevant[v] {
            relevant[v] = true;
            stack.extend(dependencies(&body, v));
        }
    }
    for site in body.sites.iter().filter(|s| !s.expanded) {
        let reads = body.updates.iter().enumerate().any(|(v, u)| {
            relevant[v]
                && u.terms().any(|(m, _)| {
                    m.powers()
                        .iter()
                        .any(|(a, _)| *a == Atom::Opaque(site.id))
                })
        });
        if reads {
            return Err(Error::NotProbSolvable(format!(
                "{}({}) is not polynomial; rewrite or approximate it first",
                site.func.name(),
                site.arg_expr
            )));
        }
    }
    let mut restricted = body.clone();
    for v in 0..n {
        if !relevant[v] {
            restricted.updates[v] = APoly::var(Atom::State(v));
        }
    }
    if let Some(cycle) = nonlinear_cycle(&restricted, &p.variables) {
        return Err(Error::NonLinearCycle(cycle));
    }

    let mut index: HashMap<StateMono, usize> = HashMap::new();
    let mut monomials: Vec<StateMono> = Vec::new();
    let mut queue = VecDeque::new();
    let enqueue = |m: &StateMono,
                       index: &mut HashMap<StateMono, usize>,
                       monomials: &mut Vec<StateMono>,
                       queue: &mut VecDeque<usize>|
     -> Result<()> {
        if m.is_one() || index.contains_key(m) {
            return Ok(());
        }
        if monomials.len() >= CLOSURE_LIMIT {
            return Err(Error::ClosureExplosion {
                limit: CLOSURE_LIMIT,
                monomial: m.map_vars(|v| p.variables[*v].clone()).to_string(),
            });
        }
        index.insert(m.clone(), monomials.len());
        monomials.push(m.clone());
        queue.push_back(monomials.len() - 1);
        Ok(())
    };
    for t in targets {
        enqueue(t, &mut index, &mut monomials, &mut queue)?;
    }

    let mut subst = Substituter {
        updates: &body.updates,
        powers: HashMap::new(),
    };
    let mut expect = DrawExpectation::new(&body.draws);
    let mut rows: Vec<Poly<usize>> = Vec::new();
    while let Some(k) = queue.pop_front() {
        let m = monomials[k].clone();
        let row = expect.expect(&subst.apply(&m))?;
        for (mm, _) in row.terms() {
            enqueue(mm, &mut index, &mut monomials, &mut queue)?;
        }
        if rows.len() <= k {
            rows.resize(k + 1, Poly::zero());
        }
        rows[k] = row;
    }

    let size = monomials.len();
    let mut a = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    for (i, row) in rows.iter().enumerate() {
        for (m, c) in row.terms() {
            if m.is_one() {
                b[i] = c;
            } else {
                a[(i, index[m])] = c;
            }
        }
    }

    let mut init_subst = Substituter {
        updates: &init.updates,
        powers: HashMap::new(),
    };
    let mut init_expect = DrawExpectation::new(&init.draws);
    let mut init_vec = DVector::zeros(size);
    for (i, m) in monomials.iter().enumerate() {
        let v = init_expect.expect(&init_subst.apply(m))?;
        init_vec[i] = v.as_constant().ok_or_else(|| {
            Error::NotProbSolvable("initial block depends on an unexpanded call".into())
        })?;
    }

    Ok(MomentRecurrence {
        variables: p.variables.clone(),
        targets: targets
            .iter()
            .map(|t| if t.is_one() { None } else { Some(index[t]) })
            .collect(),
        monomials,
        a,
        b,
        init: init_vec,
    })
}

fn homogeneous(r: &MomentRecurrence) -> DMatrix<f64> {
    let k = r.len();
    let mut h = DMatrix::zeros(k + 1, k + 1);
    h.view_mut((0, 0), (k, k)).copy_from(&r.a);
    h.view_mut((0, k), (k, 1)).copy_from(&r.b);
    h[(k, k)] = 1.0;
    h
}

/// Expectations of every monomial in S after `n` iterations, by repeated
/// squaring of the homogenised matrix.
pub fn moments_at(r: &MomentRecurrence, n: u64) -> DVector<f64> {
    let k = r.len();
    let mut v = DVector::zeros(k + 1);
    v.rows_mut(0, k).copy_from(&r.init);
    v[k] = 1.0;
    let mut base = homogeneous(r);
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            v = &base * v;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    v.rows(0, k).into_owned()
}

/// Reference evaluation by `n` plain applications of `M -> A M + b`.
pub fn moments_naive(r: &MomentRecurrence, n: u64) -> DVector<f64> {
    let mut v = r.init.clone();
    for _ in 0..n {
        v = &r.a * v + &r.b;
    }
    v
}

pub fn evaluate_moments(r: &MomentRecurrence, n: u64) -> MomentTable {
    let values = moments_at(r, n);
    let mut seen = Vec::new();
    let rows = r
        .targets
        .iter()
        .filter(|t| {
            let new = !seen.contains(*t);
            seen.push(**t);
            new
        })
        .map(|t| MomentRow {
            n,
            monomial: t.map_or("1".to_string(), |i| r.monomial_name(&r.monomials[i])),
            value: t.map_or(1.0, |i| values[i]),
            std_error: None,
        })
        .collect();
    MomentTable {
        program_hash: String::new(),
        method: Method::Exact,
        rows,
    }
}

/// Parses the targets, closes and evaluates in one call.
pub fn exact_moments(p: &Program, targets: &[&str], n: u64) -> Result<MomentTable> {
    let monos = targets
        .iter()
        .map(|t| parse_monomial(p, t))
        .collect::<Result<Vec<_>>>()?;
    let r = moment_closure(p, &monos)?;
    let mut t = evaluate_moments(&r, n);
    t.program_hash = program_hash(p);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prog::parse_program;

    #[test]
    fn deterministic_affine_map() {
        let p = parse_program("x = 0\nwhile true:\n x = 2*x + 1\nend").unwrap();
        let m = parse_monomial(&p, "x").unwrap();
        let r = moment_closure(&p, &[m]).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.a[(0, 0)], 2.0);
        assert_eq!(r.b[0], 1.0);
        let v = moments_at(&r, 10);
        assert_eq!(v[0], 1023.0);
        assert_eq!(moments_at(&r, 0)[0], 0.0);
    }

    #[test]
    fn random_walk_second_moment() {
        let p = parse_program("x = 0\nwhile true:\n x = x + Normal(0, 2)\nend").unwrap();
        let t = exact_moments(&p, &["x^2", "x"], 7).unwrap();
        assert!((t.rows[0].value - 14.0).abs() < 1e-12);
        assert!(t.rows[1].value.abs() < 1e-12);
    }

    #[test]
    fn trig_pair_conserves_norm() {
        let src = "z = 0; x = 0; c = cos(z); s = sin(z); y = 0\nwhile true:\n z = Normal(0, 1)\n x = x + z\n c, s = c*cos(z) - s*sin(z), s*cos(z) + c*sin(z)\n y = y + c\nend";
        let p = parse_program(src).unwrap();
        let c2 = parse_monomial(&p, "c^2").unwrap();
        let s2 = parse_monomial(&p, "s^2").unwrap();
        let r = moment_closure(&p, &[c2, s2]).unwrap();
        for n in [1, 5, 50] {
            let v = moments_at(&r, n);
            assert!((v[r.targets[0].unwrap()] + v[r.targets[1].unwrap()] - 1.0).abs() < 1e-9);
        }
        let t = exact_moments(&p, &["c"], 3).unwrap();
        assert!((t.rows[0].value - (-1.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn opaque_calls_are_rejected() {
        let p = parse_program("x = 0\nwhile true:\n x = x + cos(x)\nend").unwrap();
        assert!(matches!(
            exact_moments(&p, &["x"], 3),
            Err(Error::NotProbSolvable(_))
        ));
    }

    #[test]
    fn nonlinear_cycles_are_rejected() {
        let p = parse_program("x = 0.5\nwhile true:\n x = x^2\nend").unwrap();
        assert!(matches!(
            exact_moments(&p, &["x"], 3),
            Err(Error::NonLinearCycle(_))
        ));
    }

    #[test]
    fn power_matches_naive() {
        let p = parse_program(
            "x = Uniform(0, 1); y = 1\nwhile true:\n y = 0.9*y + 0.1*x\n x = 0.5*x + Normal(0, 1)\nend",
        )
        .unwrap();
        let m = parse_monomial(&p, "x*y^2").unwrap();
        let r = moment_closure(&p, &[m]).unwrap();
        let fast = moments_at(&r, 64);
        let slow = moments_naive(&r, 64);
        for i in 0..r.len() {
            assert!((fast[i] - slow[i]).abs() <= 1e-10 * (1.0 + slow[i].abs()));
        }
    }
}
