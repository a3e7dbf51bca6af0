//! Program rewrites that remove non-polynomial calls.
//!
//! Exact rewrites replace sin/cos/exp of accumulators by auxiliary
//! variables updated multiplicatively with the accumulator's increment.
//! PCE substitution replaces a general call by a polynomial in its basic
//! variables, either once (iteration-stable arguments) or per iteration,
//! stitched together by interpolation in a loop clock.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::lower::{self, affine_in_draws, lower_expr_at, APoly, Atom, Block, Lowered};
use crate::pce::{self, BasisOptions, Law, PceEstimate};
use crate::poly::Poly;
use crate::prog::{
    accumulators_of, current_value, site_kind, Accumulator, Assign, Expr, Func, Program, SiteKind,
};

const MAX_ROUNDS: usize = 16;

/// A call site of the loop body with its classification.
#[derive(Clone, Debug)]
pub struct SiteInfo {
    pub id: usize,
    pub stmt: usize,
    pub call: String,
    pub kind: SiteKind,
}

pub fn find_sites(p: &Program) -> Vec<SiteInfo> {
    let l = lower::lower(p, Block::Body);
    let accs = accumulators_of(p, &l);
    l.sites
        .iter()
        .map(|s| SiteInfo {
            id: s.id,
            stmt: s.stmt,
            call: format!("{}({})", s.func.name(), s.arg_expr),
            kind: site_kind(p, &l, &accs, s),
        })
        .collect()
}

fn same(a: &APoly, b: &APoly) -> bool {
    a.sub(b).prune(1e-10).is_zero()
}

fn fmt_scale(k: f64) -> String {
    format!("{k}").replace('-', "m").replace('.', "p")
}

fn num(x: f64) -> Expr {
    Expr::Num(x)
}

fn neg(a: Expr) -> Expr {
    Expr::Neg(Box::new(a))
}

/// Replaces calls by site id, walking in the lowering's evaluation order.
fn replace_sites(p: &mut Program, repl: &BTreeMap<usize, Expr>) {
    fn walk(e: &Expr, next: &mut usize, repl: &BTreeMap<usize, Expr>) -> Expr {
        match e {
            Expr::Num(_) | Expr::Var(_) | Expr::Draw(_) => e.clone(),
            Expr::Neg(a) => neg(walk(a, next, repl)),
            Expr::Pow(a, k) => Expr::Pow(Box::new(walk(a, next, repl)), *k),
            Expr::Add(a, b) => {
                let a = walk(a, next, repl);
                Expr::add(a, walk(b, next, repl))
            }
            Expr::Sub(a, b) => {
                let a = walk(a, next, repl);
                Expr::sub(a, walk(b, next, repl))
            }
            Expr::Mul(a, b) => {
                let a = walk(a, next, repl);
                Expr::mul(a, walk(b, next, repl))
            }
            // divisors are constants and never hold sites
            Expr::Div(a, b) => Expr::Div(Box::new(walk(a, next, repl)), b.clone()),
            Expr::Call(f, a) => {
                let a = walk(a, next, repl);
                let id = *next;
                *next += 1;
                match repl.get(&id) {
                    Some(r) => r.clone(),
                    None => Expr::call(*f, a),
                }
            }
        }
    }
    let mut next = 0;
    for st in &mut p.body {
        for v in &mut st.values {
            *v = walk(v, &mut next, repl);
        }
    }
}

/// Moves every inline draw of the given body statements into a fresh
/// variable assigned just before the statement.
fn hoist_draws(p: &mut Program, stmts: &[usize]) {
    let mut order: Vec<usize> = stmts.to_vec();
    order.sort_unstable();
    order.dedup();
    for &s in order.iter().rev() {
        let mut hoisted: Vec<Assign> = Vec::new();
        let mut values = p.body[s].values.clone();
        for v in &mut values {
            *v = v.rebuild(&mut |e| match e {
                Expr::Draw(d) => {
                    let name = p.fresh_name(&format!("w{}", p.variables.len()));
                    p.variables.push(name.clone());
                    hoisted.push(Assign::single(&name, Expr::Draw(d)));
                    Expr::Var(name)
                }
                other => other,
            });
        }
        p.body[s].values = values;
        for (i, a) in hoisted.into_iter().enumerate() {
            p.body.insert(s + i, a);
        }
    }
    p.recompute_variables();
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
enum Aux {
    /// cos and sin of the accumulator itself; integer multiples use powers.
    TrigUnit,
    TrigScaled(f64),
    ExpUnit,
    ExpScaled(f64),
}

struct AuxVars {
    /// Variable names per aux kind: one for exp, two (cos, sin) for trig.
    names: Vec<(Aux, Vec<String>)>,
}

impl AuxVars {
    fn get(&self, a: Aux) -> &[String] {
        &self
            .names
            .iter()
            .find(|(k, _)| *k == a)
            .expect("aux variable allocated")
            .1
    }
}

fn aux_for(func: Func, k: f64) -> Aux {
    let integer = k == k.round() && k.abs() <= 64.0;
    match func {
        Func::Exp if integer && k > 0.0 => Aux::ExpUnit,
        Func::Exp => Aux::ExpScaled(k),
        _ if integer => Aux::TrigUnit,
        _ => Aux::TrigScaled(k),
    }
}

type Complex = (Expr, Expr);

fn cmul(a: &Complex, b: &Complex) -> Complex {
    (
        Expr::sub(Expr::mul(a.0.clone(), b.0.clone()), Expr::mul(a.1.clone(), b.1.clone())),
        Expr::add(Expr::mul(a.0.clone(), b.1.clone()), Expr::mul(a.1.clone(), b.0.clone())),
    )
}

/// `arg - sum k_x x` as an expression, preferring the syntactic form with
/// the accumulators set to zero when it lowers to the same value.
fn remainder(p: &Program, l: &Lowered, stmt: usize, arg: &Expr, arg_poly: &APoly, terms: &[(String, f64)]) -> Expr {
    let index = lower::var_index(p);
    let mut want = arg_poly.clone();
    for (x, k) in terms {
        want = want.sub(&current_value(p, l, index[x.as_str()], stmt).scale(*k));
    }
    let mut r1 = arg.clone();
    for (x, _) in terms {
        r1 = r1.substitute(x, &num(0.0));
    }
    let r1 = r1.simplify();
    if same(&lower_expr_at(p, stmt, &r1), &want) {
        return r1;
    }
    let mut r = arg.clone();
    for (x, k) in terms {
        r = Expr::sub(r, Expr::mul(num(*k), Expr::var(x)));
    }
    r.simplify()
}

fn is_zero_expr(e: &Expr) -> bool {
    matches!(e, Expr::Num(z) if *z == 0.0)
}

fn exact_value(func: Func, terms: &[(String, f64)], r: &Expr, aux: &BTreeMap<String, AuxVars>) -> Expr {
    if func == Func::Exp {
        let mut out: Option<Expr> = None;
        let mut push = |e: Expr| {
            out = Some(match out.take() {
                None => e,
                Some(o) => Expr::mul(o, e),
            })
        };
        for (x, k) in terms {
            let a = aux_for(func, *k);
            let v = Expr::var(&aux[x].get(a)[0]);
            match a {
                Aux::ExpUnit if *k != 1.0 => push(Expr::Pow(Box::new(v), *k as u32)),
                _ => push(v),
            }
        }
        if !is_zero_expr(r) {
            push(Expr::call(Func::Exp, r.clone()));
        }
        return out.expect("at least one term").simplify();
    }
    let mut acc: Complex = (num(1.0), num(0.0));
    for (x, k) in terms {
        let a = aux_for(func, *k);
        let names = aux[x].get(a);
        let c = Expr::var(&names[0]);
        let s = Expr::var(&names[1]);
        match a {
            Aux::TrigUnit => {
                let f: Complex = if *k < 0.0 { (c, neg(s)) } else { (c, s) };
                for _ in 0..(k.abs() as u32) {
                    acc = cmul(&acc, &f);
                }
            }
            _ => acc = cmul(&acc, &(c, s)),
        }
    }
    if !is_zero_expr(r) {
        acc = cmul(&acc, &(Expr::call(Func::Cos, r.clone()), Expr::call(Func::Sin, r.clone())));
    }
    match func {
        Func::Cos => acc.0.simplify(),
        _ => acc.1.simplify(),
    }
}

/// Ensures the increment of `x` is available as an expression evaluated
/// right after x's statement; hoists it into a variable otherwise.
fn increment_expr(p: &mut Program, x: &str) -> Expr {
    let s = p.body_index(x).expect("accumulators are assigned in the body");
    let pos = p.body[s].targets.iter().position(|t| t == x).unwrap();
    let e = p.body[s].values[pos].clone();
    let l = lower::lower(p, Block::Body);
    let xi = lower::var_index(p)[x];
    let want = l.updates[xi].sub(&APoly::var(Atom::State(xi)));
    let inc = e.substitute(x, &num(0.0)).simplify();
    if same(&lower_expr_at(p, s, &inc), &want) {
        return inc;
    }
    let name = p.fresh_name(&format!("{x}_inc"));
    p.body[s].values[pos] = Expr::add(Expr::var(x), Expr::var(&name));
    p.body.insert(s, Assign::single(&name, Expr::sub(e, Expr::var(x)).simplify()));
    p.recompute_variables();
    Expr::var(&name)
}

fn check_mgf(l: &Lowered, acc: &Accumulator, k: f64) -> Result<()> {
    let Some((_, lin)) = affine_in_draws(&acc.increment) else {
        return Err(Error::NotAnAccumulator(acc.var.clone()));
    };
    for (j, a) in lin {
        let t = k * a;
        match l.draws[j].mgf_derivative(0, t) {
            Ok(v) if v.is_finite() => {}
            _ => return Err(Error::MgfDiverges(t)),
        }
    }
    Ok(())
}

/// One round of exact rewrites over the sites accepted by `pick`. Returns
/// `None` when no site qualifies.
fn exact_round(p: &Program, pick: &dyn Fn(Func, &[(String, f64)]) -> bool) -> Result<Option<Program>> {
    let l = lower::lower(p, Block::Body);
    let accs = accumulators_of(p, &l);
    let chosen: Vec<(usize, Func, Vec<(String, f64)>)> = l
        .sites
        .iter()
        .filter_map(|s| match site_kind(p, &l, &accs, s) {
            SiteKind::ExactRewrite { terms } if pick(s.func, &terms) => Some((s.id, s.func, terms)),
            _ => None,
        })
        .collect();
    if chosen.is_empty() {
        return Ok(None);
    }
    for (_, f, terms) in &chosen {
        if *f == Func::Exp {
            for (x, k) in terms {
                let acc = accs.iter().find(|a| &a.var == x).expect("classified accumulator");
                check_mgf(&l, acc, *k)?;
            }
        }
    }

    // structural preparation: hoist draws, then increments
    let mut q = p.clone();
    let mut stmts: Vec<usize> = chosen.iter().map(|(id, _, _)| l.sites[*id].stmt).collect();
    let mut accvars: Vec<String> = chosen
        .iter()
        .flat_map(|(_, _, t)| t.iter().map(|(x, _)| x.clone()))
        .collect();
    accvars.sort();
    accvars.dedup();
    stmts.extend(accvars.iter().filter_map(|x| p.body_index(x)));
    hoist_draws(&mut q, &stmts);
    let mut incs: BTreeMap<String, Expr> = BTreeMap::new();
    for x in &accvars {
        let e = increment_expr(&mut q, x);
        incs.insert(x.clone(), e);
    }

    // allocate auxiliary variables
    let mut aux: BTreeMap<String, AuxVars> = BTreeMap::new();
    for (_, f, terms) in &chosen {
        for (x, k) in terms {
            let a = aux_for(*f, *k);
            let entry = aux.entry(x.clone()).or_insert(AuxVars { names: vec![] });
            if entry.names.iter().any(|(b, _)| *b == a) {
                continue;
            }
            let stems: Vec<String> = match a {
                Aux::TrigUnit => vec![format!("cos_{x}"), format!("sin_{x}")],
                Aux::TrigScaled(k) => vec![
                    format!("cos_{x}_{}", fmt_scale(k)),
                    format!("sin_{x}_{}", fmt_scale(k)),
                ],
                Aux::ExpUnit => vec![format!("exp_{x}")],
                Aux::ExpScaled(k) => vec![format!("exp_{x}_{}", fmt_scale(k))],
            };
            let names: Vec<String> = stems
                .iter()
                .map(|s| {
                    let n = q.fresh_name(s);
                    q.variables.push(n.clone());
                    n
                })
                .collect();
            entry.names.push((a, names));
        }
    }

    // replacements, computed on the prepared program
    let lq = lower::lower(&q, Block::Body);
    let mut repl = BTreeMap::new();
    for (id, f, terms) in &chosen {
        let site = &lq.sites[*id];
        let r = remainder(&q, &lq, site.stmt, &site.arg_expr, &site.arg, terms);
        repl.insert(*id, exact_value(*f, terms, &r, &aux));
    }
    replace_sites(&mut q, &repl);

    // initial values and updates of the auxiliaries
    let assigned_initially: Vec<String> = q.initials.iter().flat_map(|a| a.targets.clone()).collect();
    for (x, vars) in &aux {
        let x0 = if assigned_initially.contains(x) {
            Expr::var(x)
        } else {
            num(0.0)
        };
        let inc = &incs[x];
        let mut targets = Vec::new();
        let mut values = Vec::new();
        for (a, names) in &vars.names {
            let (k, trig) = match a {
                Aux::TrigUnit => (1.0, true),
                Aux::TrigScaled(k) => (*k, true),
                Aux::ExpUnit => (1.0, false),
                Aux::ExpScaled(k) => (*k, false),
            };
            let scaled = |e: &Expr| {
                if k == 1.0 {
                    e.clone()
                } else {
                    Expr::mul(num(k), e.clone())
                }
            };
            let arg0 = scaled(&x0).simplify();
            let darg = scaled(inc);
            if trig {
                q.initials.push(Assign::single(&names[0], Expr::call(Func::Cos, arg0.clone()).simplify()));
                q.initials.push(Assign::single(&names[1], Expr::call(Func::Sin, arg0).simplify()));
                let (c, s) = (Expr::var(&names[0]), Expr::var(&names[1]));
                let (cz, sz) = (Expr::call(Func::Cos, darg.clone()), Expr::call(Func::Sin, darg));
                targets.extend(names.iter().cloned());
                values.push(Expr::sub(Expr::mul(c.clone(), cz.clone()), Expr::mul(s.clone(), sz.clone())));
                values.push(Expr::add(Expr::mul(s, cz), Expr::mul(c, sz)));
            } else {
                q.initials.push(Assign::single(&names[0], Expr::call(Func::Exp, arg0).simplify()));
                targets.push(names[0].clone());
                values.push(Expr::mul(Expr::var(&names[0]), Expr::call(Func::Exp, darg)));
            }
        }
        let s = q.body_index(x).expect("accumulator assigned in the body");
        let inc_vars = inc.vars();
        let clash = q.body[s].targets.iter().any(|t| t != x && inc_vars.contains(t));
        if clash {
            q.body[s].targets.extend(targets);
            q.body[s].values.extend(values);
        } else {
            q.body.insert(
                s + 1,
                Assign {
                    targets,
                    values,
                    line: 0,
                },
            );
        }
    }
    q.recompute_variables();
    Ok(Some(q))
}

fn rewrite_matching(p: &Program, pick: &dyn Fn(Func, &[(String, f64)]) -> bool) -> Result<Program> {
    let mut q = p.clone();
    for _ in 0..MAX_ROUNDS {
        match exact_round(&q, pick)? {
            Some(next) => q = next,
            None => return Ok(q),
        }
    }
    Err(Error::Invalid("exact rewrites did not terminate".into()))
}

fn require_accumulator(p: &Program, x: &str) -> Result<()> {
    let l = lower::lower(p, Block::Body);
    if accumulators_of(p, &l).iter().any(|a| a.var == x) {
        Ok(())
    } else {
        Err(Error::NotAnAccumulator(x.to_string()))
    }
}

/// Replaces `exp` of the accumulator `x` (and of affine expressions in it)
/// by auxiliary variables.
pub fn rewrite_exp(p: &Program, x: &str) -> Result<Program> {
    require_accumulator(p, x)?;
    let has = |f: Func, t: &[(String, f64)]| f == Func::Exp && t.iter().any(|(v, _)| v == x);
    if !find_sites(p).iter().any(|s| matches!(&s.kind, SiteKind::ExactRewrite { terms } if has(Func::Exp, terms))) {
        return Err(Error::Invalid(format!("no exp call of `{x}` to rewrite")));
    }
    let pick = move |f: Func, t: &[(String, f64)]| f == Func::Exp && t.iter().any(|(v, _)| v == x);
    rewrite_matching(p, &pick)
}

/// Replaces `sin` and `cos` of the accumulator `x` by an auxiliary pair.
pub fn rewrite_trig(p: &Program, x: &str) -> Result<Program> {
    require_accumulator(p, x)?;
    let pick = move |f: Func, t: &[(String, f64)]| f != Func::Exp && t.iter().any(|(v, _)| v == x);
    let found = find_sites(p)
        .iter()
        .any(|s| matches!(&s.kind, SiteKind::ExactRewrite { terms } if s.call.starts_with(['s', 'c']) && terms.iter().any(|(v, _)| v == x)));
    if !found {
        return Err(Error::Invalid(format!("no sin or cos call of `{x}` to rewrite")));
    }
    rewrite_matching(p, &pick)
}

/// Applies every available exact rewrite.
pub fn rewrite_all(p: &Program) -> Result<Program> {
    rewrite_matching(p, &|_, _| true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "iterations")]
pub enum PceMode {
    Stable,
    Conditional(usize),
}

/// What a PCE substitution did at one site.
#[derive(Clone, Debug, Serialize)]
pub struct PceSiteReport {
    pub site: String,
    pub basic_variables: Vec<String>,
    pub laws: Vec<String>,
    pub degrees: Vec<u32>,
    /// Approximation error per fitted iteration (one entry in stable mode).
    pub se: Vec<f64>,
    /// Squared-error bound, present when every basic variable has bounded support.
    pub bound: Option<f64>,
}

/// The site's argument as a function of its basic variables.
struct SiteFunction {
    func: Func,
    arg: Expr,
    vars: Vec<String>,
}

impl SiteFunction {
    fn eval(&self, z: &[f64]) -> f64 {
        let env = |name: &str| {
            let i = self.vars.iter().position(|v| v == name).expect("basic variable");
            z[i]
        };
        self.func.apply(self.arg.eval_with(&env))
    }
}

fn single_draw(p: &APoly) -> Option<usize> {
    let mut it = p.terms();
    match (it.next(), it.next()) {
        (Some((m, c)), None) if c == 1.0 => match m.powers() {
            [(Atom::Draw(j), 1)] => Some(*j),
            _ => None,
        },
        _ => None,
    }
}

/// Law of a basic variable that is identically distributed in every iteration.
fn stable_law(p: &Program, l: &Lowered, init: &Lowered, v: &str, stmt: usize) -> std::result::Result<(Distribution, Option<usize>), String> {
    let vi = lower::var_index(p)[v];
    let cur = current_value(p, l, vi, stmt);
    if let Some(j) = single_draw(&cur) {
        return Ok((l.draws[j], Some(j)));
    }
    if let Some(d) = p.basis_law(v) {
        return Ok((d, None));
    }
    if cur == APoly::var(Atom::State(vi)) {
        if let (Some(j), Some(j0)) = (single_draw(&l.updates[vi]), single_draw(&init.updates[vi])) {
            if l.draws[j] == init.draws[j0] {
                return Ok((l.draws[j], None));
            }
            return Err(format!(
                "(E) `{v}` starts as {} but is redrawn from {}",
                init.draws[j0], l.draws[j]
            ));
        }
    }
    Err(format!(
        "(E) `{v}` is not identically distributed across iterations; declare `basis {v} ~ ...` or use conditional mode"
    ))
}

fn degree_cap(opts: BasisOptions) -> usize {
    if opts.extended_precision {
        pce::MAX_DEGREE_EXTENDED
    } else {
        pce::MAX_DEGREE
    }
}

fn poly_to_expr(poly: &Poly<usize>, names: &[String]) -> Expr {
    let mut out: Option<Expr> = None;
    for (m, c) in poly.terms() {
        let mut term: Option<Expr> = None;
        for (v, e) in m.powers() {
            let f = if *e == 1 {
                Expr::var(&names[*v])
            } else {
                Expr::Pow(Box::new(Expr::var(&names[*v])), *e)
            };
            term = Some(match term {
                None => f,
                Some(t) => Expr::mul(t, f),
            });
        }
        let (sign, mag) = if c < 0.0 { (-1.0, -c) } else { (1.0, c) };
        let t = match term {
            None => num(mag),
            Some(t) if mag == 1.0 => t,
            Some(t) => Expr::mul(num(mag), t),
        };
        out = Some(match out {
            None if sign < 0.0 => neg(t),
            None => t,
            Some(o) if sign < 0.0 => Expr::sub(o, t),
            Some(o) => Expr::add(o, t),
        });
    }
    out.unwrap_or(num(0.0))
}

/// Gaussian law (mean, variance) of every listed expression at the start of
/// each iteration 1..=n, when all the state it depends on evolves affinely
/// under normal noise.
fn gaussian_laws(p: &Program, l: &Lowered, init: &Lowered, polys: &[APoly], n: usize) -> std::result::Result<Vec<Vec<(f64, f64)>>, String> {
    // state variables involved, closed under the update dependencies
    let mut deps: Vec<usize> = Vec::new();
    let mut stack: Vec<usize> = polys
        .iter()
        .flat_map(|q| q.variables())
        .filter_map(|a| match a {
            Atom::State(v) => Some(v),
            _ => None,
        })
        .collect();
    while let Some(v) = stack.pop() {
        if deps.contains(&v) {
            continue;
        }
        deps.push(v);
        for a in l.updates[v].variables() {
            if let Atom::State(w) = a {
                stack.push(w);
            }
        }
    }
    deps.sort_unstable();
    let pos = |v: usize| deps.iter().position(|d| *d == v).unwrap();
    let normal_draw = |d: &Distribution| matches!(d, Distribution::Normal { .. });
    // affine split: constant, state coefficients, draw coefficients
    type Affine = (f64, Vec<(usize, f64)>, Vec<(usize, f64)>);
    let split = |q: &APoly, draws: &[Distribution], what: &str| -> std::result::Result<Affine, String> {
        let (mut c0, mut st, mut dr) = (0.0, vec![], vec![]);
        for (m, c) in q.terms() {
            match m.powers() {
                [] => c0 = c,
                [(Atom::State(v), 1)] => st.push((*v, c)),
                [(Atom::Draw(j), 1)] if normal_draw(&draws[*j]) => dr.push((*j, c)),
                _ => return Err(format!("{what} is not affine in normal noise")),
            }
        }
        Ok((c0, st, dr))
    };
    let k = deps.len();
    let init_aff: Vec<Affine> = deps
        .iter()
        .map(|&v| split(&init.updates[v], &init.draws, &format!("the initial value of `{}`", p.variables[v])))
        .collect::<std::result::Result<_, _>>()?;
    let gauss = |aff: &[Affine], draws: &[Distribution], mean: &[f64], cov: &[Vec<f64>]| {
        let m: Vec<f64> = aff
            .iter()
            .map(|(c0, st, dr)| {
                c0 + st.iter().map(|(v, a)| a * mean[pos(*v)]).sum::<f64>()
                    + dr.iter().map(|(j, b)| b * draws[*j].mean()).sum::<f64>()
            })
            .collect();
        let mut c = vec![vec![0.0; aff.len()]; aff.len()];
        for (i, (_, si, di)) in aff.iter().enumerate() {
            for (j, (_, sj, dj)) in aff.iter().enumerate() {
                let mut s = 0.0;
                for (u, a) in si {
                    for (w, b) in sj {
                        s += a * b * cov[pos(*u)][pos(*w)];
                    }
                }
                for (u, a) in di {
                    for (w, b) in dj {
                        if u == w {
                            s += a * b * draws[*u].variance();
                        }
                    }
                }
                c[i][j] = s;
            }
        }
        (m, c)
    };
    let (mut mean, mut cov) = gauss(&init_aff, &init.draws, &vec![0.0; k], &vec![vec![0.0; k]; k]);
    let body_aff: Vec<Affine> = deps
        .iter()
        .map(|&v| split(&l.updates[v], &l.draws, &format!("the update of `{}`", p.variables[v])))
        .collect::<std::result::Result<_, _>>()?;
    let site_aff: Vec<Affine> = polys
        .iter()
        .map(|q| split(q, &l.draws, "the argument"))
        .collect::<std::result::Result<_, _>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (m, c) = gauss(&site_aff, &l.draws, &mean, &cov);
        for i in 0..m.len() {
            for j in 0..i {
                if c[i][j].abs() > 1e-12 * (c[i][i] * c[j][j]).sqrt().max(1e-300) {
                    return Err("(A) basic variables are correlated".into());
                }
            }
        }
        out.push(m.iter().zip(0..).map(|(mu, i)| (*mu, c[i][i].max(0.0))).collect());
        let (nm, nc) = gauss(&body_aff, &l.draws, &mean, &cov);
        mean = nm;
        cov = nc;
    }
    Ok(out)
}

/// Replaces body site `site` by its PCE.
pub fn pce_substitute(p: &Program, site: usize, degrees: &[u32], mode: PceMode) -> Result<Program> {
    pce_substitute_with(p, site, degrees, mode, BasisOptions::default()).map(|(q, _)| q)
}

pub fn pce_substitute_with(
    p: &Program,
    site: usize,
    degrees: &[u32],
    mode: PceMode,
    opts: BasisOptions,
) -> Result<(Program, PceSiteReport)> {
    let l0 = lower::lower(p, Block::Body);
    let Some(s0) = l0.sites.get(site) else {
        return Err(Error::Invalid(format!("no call site {site}")));
    };
    let call = format!("{}({})", s0.func.name(), s0.arg_expr);
    let accs = accumulators_of(p, &l0);
    match site_kind(p, &l0, &accs, s0) {
        SiteKind::Unsupported(why) => return Err(Error::Invalid(format!("{call}: {why}"))),
        _ => {}
    }

    let mut q = p.clone();
    if s0.arg_expr.has_draw() {
        hoist_draws(&mut q, &[s0.stmt]);
    }
    let l = lower::lower(&q, Block::Body);
    let init = lower::lower(&q, Block::Initial);
    let s = &l.sites[site];
    let vars: Vec<String> = {
        let mut seen = Vec::new();
        s.arg_expr.visit(&mut |e| {
            if let Expr::Var(v) = e {
                if !seen.contains(v) {
                    seen.push(v.clone());
                }
            }
        });
        seen
    };
    let k = vars.len();
    let g = SiteFunction {
        func: s.func,
        arg: s.arg_expr.clone(),
        vars: vars.clone(),
    };
    if k == 0 {
        let value = g.eval(&[]);
        replace_sites(&mut q, &BTreeMap::from([(site, Expr::Num(value))]));
        let report = PceSiteReport {
            site: call,
            basic_variables: Vec::new(),
            laws: Vec::new(),
            degrees: Vec::new(),
            se: vec![0.0],
            bound: Some(0.0),
        };
        return Ok((q, report));
    }
    if k > pce::MAX_VARS {
        return Err(Error::Invalid(format!("{call} has {k} basic variables (at most {})", pce::MAX_VARS)));
    }
    let degrees: Vec<u32> = match degrees {
        [d] => vec![*d; k],
        ds if ds.len() == k => ds.to_vec(),
        _ => return Err(Error::Invalid(format!("{call} needs 1 or {k} degrees"))),
    };
    let cap = degree_cap(opts);
    if let Some(d) = degrees.iter().find(|d| **d as usize > cap) {
        return Err(Error::DegreeTooHigh {
            degree: *d as usize,
            max: cap,
        });
    }
    let index = lower::var_index(&q);
    let integrand = |z: &[f64]| g.eval(z);

    let (replacement, report) = match mode {
        PceMode::Stable => {
            let mut laws = Vec::new();
            let mut problems = Vec::new();
            let mut draws_used = Vec::new();
            for v in &vars {
                match stable_law(&q, &l, &init, v, s.stmt) {
                    Ok((d, j)) => {
                        if let Some(j) = j {
                            if draws_used.contains(&j) {
                                problems.push(format!("(A) `{v}` repeats the draw of another basic variable"));
                            }
                            draws_used.push(j);
                        }
                        laws.push(Law::Dist(d));
                    }
                    Err(e) => problems.push(e),
                }
            }
            if !problems.is_empty() {
                return Err(Error::ConditionsViolated(problems));
            }
            let est = pce::pce_fit_with(&integrand, &laws, &degrees, opts)?;
            let bound = finite_bound(&integrand, &laws);
            let report = PceSiteReport {
                site: call.clone(),
                basic_variables: vars.clone(),
                laws: laws.iter().map(|l| l.to_string()).collect(),
                degrees: degrees.clone(),
                se: vec![est.se],
                bound,
            };
            (poly_to_expr(&est.assembled, &vars), report)
        }
        PceMode::Conditional(n) => {
            if n == 0 {
                return Err(Error::Invalid("conditional mode needs at least one iteration".into()));
            }
            let cur: Vec<APoly> = vars
                .iter()
                .map(|v| current_value(&q, &l, index[v.as_str()], s.stmt))
                .collect();
            let per_iter = gaussian_laws(&q, &l, &init, &cur, n).map_err(|e| Error::ConditionsViolated(vec![e]))?;
            let mut polys = Vec::with_capacity(n);
            let mut ses = Vec::with_capacity(n);
            let mut cache: Option<(Vec<(f64, f64)>, Poly<usize>, f64)> = None;
            let mut law_names = Vec::new();
            for laws in &per_iter {
                if let Some((prev, poly, se)) = &cache {
                    if prev == laws {
                        polys.push(poly.clone());
                        ses.push(*se);
                        continue;
                    }
                }
                let (poly, se) = fit_with_fixed(&g, laws, &degrees, opts)?;
                law_names = laws
                    .iter()
                    .map(|(m, v)| {
                        if *v > 0.0 {
                            format!("Normal({m}, {v})")
                        } else {
                            format!("{m}")
                        }
                    })
                    .collect();
                cache = Some((laws.clone(), poly.clone(), se));
                polys.push(poly);
                ses.push(se);
            }
            let counter = q.fresh_name("c");
            q.variables.push(counter.clone());
            let clock = q.fresh_name("u");
            let mut names = vars.clone();
            names.push(clock.clone());
            let poly = pce::interpolate_in_clock(&polys, k);
            let mut first = Assign::single(&counter, Expr::add(Expr::var(&counter), num(1.0)));
            q.initials.push(Assign::single(&counter, num(0.0)));
            if n > 1 {
                let h = 2.0 / (n as f64 - 1.0);
                q.initials.push(Assign::single(&clock, num(-1.0 - h)));
                first.targets.push(clock.clone());
                first.values.push(Expr::add(Expr::var(&clock), num(h)));
            }
            let report = PceSiteReport {
                site: call.clone(),
                basic_variables: vars.clone(),
                laws: law_names,
                degrees: degrees.clone(),
                se: ses,
                bound: None,
            };
            let expr = poly_to_expr(&poly, &names);
            replace_and_prepend(&mut q, site, expr, first);
            q.recompute_variables();
            return Ok((q, report));
        }
    };
    let mut repl = BTreeMap::new();
    repl.insert(site, replacement);
    replace_sites(&mut q, &repl);
    q.recompute_variables();
    Ok((q, report))
}

fn replace_and_prepend(q: &mut Program, site: usize, expr: Expr, first: Assign) {
    let mut repl = BTreeMap::new();
    repl.insert(site, expr);
    replace_sites(q, &repl);
    q.body.insert(0, first);
}

/// Per-iteration fit where zero-variance basic variables are fixed.
fn fit_with_fixed(g: &SiteFunction, laws: &[(f64, f64)], degrees: &[u32], opts: BasisOptions) -> Result<(Poly<usize>, f64)> {
    let random: Vec<usize> = (0..laws.len()).filter(|i| laws[*i].1 > 0.0).collect();
    let point: Vec<f64> = laws.iter().map(|(m, _)| *m).collect();
    if random.is_empty() {
        return Ok((Poly::constant(g.eval(&point)), 0.0));
    }
    let sub = |z: &[f64]| {
        let mut x = point.clone();
        for (i, r) in random.iter().enumerate() {
            x[*r] = z[i];
        }
        g.eval(&x)
    };
    let ls: Vec<Law> = random
        .iter()
        .map(|i| Distribution::normal(laws[*i].0, laws[*i].1).map(Law::Dist))
        .collect::<Result<_>>()?;
    let ds: Vec<u32> = random.iter().map(|i| degrees[*i]).collect();
    let est: PceEstimate = pce::pce_fit_with(&sub, &ls, &ds, opts)?;
    Ok((est.assembled.map_vars(|v| random[*v]), est.se))
}

fn finite_bound(g: &(dyn Fn(&[f64]) -> f64 + Sync), laws: &[Law]) -> Option<f64> {
    let support: Vec<(f64, f64)> = laws.iter().map(|l| l.support()).collect();
    pce::error_bound(g, &support).ok()
}

/// Substitutes every call site by its PCE, including sites that admit an
/// exact rewrite. Run `rewrite_all` first to keep those exact.
pub fn pce_all(p: &Program, degrees: &[u32], mode: PceMode, opts: BasisOptions) -> Result<(Program, Vec<PceSiteReport>)> {
    let mut q = p.clone();
    let mut reports = Vec::new();
    for _ in 0..64 {
        let next = find_sites(&q)
            .into_iter()
            .find(|s| !matches!(s.kind, SiteKind::Unsupported(_)));
        let Some(site) = next else {
            return Ok((q, reports));
        };
        let (r, rep) = pce_substitute_with(&q, site.id, degrees, mode, opts)?;
        reports.push(rep);
        q = r;
    }
    Err(Error::Invalid("too many call sites".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::exact_moments;
    use crate::prog::{classify, parse_program, LoopClass};

    const PROTO: &str = "z = 0; x = 0; y = 0\nwhile true:\n z = Normal(0, 1)\n x = x + z\n y = y + cos(x)\nend\n";

    #[test]
    fn trig_rewrite_shape() {
        let p = parse_program(PROTO).unwrap();
        let q = rewrite_trig(&p, "x").unwrap();
        assert_eq!(classify(&q).class, LoopClass::ProbSolvable);
        let printed = crate::pretty_print(&q);
        assert!(printed.contains("cos_x, sin_x = cos_x*cos(z) - sin_x*sin(z), sin_x*cos(z) + cos_x*sin(z)"), "{printed}");
        assert!(printed.contains("y = y + cos_x"), "{printed}");
        // E[cos(x_n)] = exp(-n/2)
        let t = exact_moments(&q, &["y"], 2).unwrap();
        let want = (-0.5f64).exp() + (-1.0f64).exp();
        assert!((t.get(2, "y").unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn exp_rewrite_initial() {
        let p = parse_program(&PROTO.replace("cos", "exp")).unwrap();
        let q = rewrite_exp(&p, "x").unwrap();
        let printed = crate::pretty_print(&q);
        assert!(printed.contains("exp_x = exp(x)"), "{printed}");
        assert!(printed.contains("exp_x = exp_x*exp(z)"), "{printed}");
        let t = exact_moments(&q, &["y"], 1).unwrap();
        assert!((t.get(1, "y").unwrap() - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn not_an_accumulator() {
        let p = parse_program("x = 1\nwhile true:\n x = 2*x\n y = cos(x)\nend").unwrap();
        assert!(matches!(rewrite_trig(&p, "x"), Err(Error::NotAnAccumulator(_))));
    }

    #[test]
    fn inline_draw_is_hoisted_once() {
        let p = parse_program("x = 0; y = 0\nwhile true:\n x = x + Normal(0, 1)\n y = y + sin(2*x)\nend").unwrap();
        let q = rewrite_all(&p).unwrap();
        assert_eq!(classify(&q).class, LoopClass::ProbSolvable);
        let draws = crate::pretty_print(&q).matches("Normal").count();
        assert_eq!(draws, 1);
        // E[sin(2x)] = 0, E[y^2] > 0
        let t = exact_moments(&q, &["y", "y^2"], 3).unwrap();
        assert!(t.get(3, "y").unwrap().abs() < 1e-12);
        assert!(t.get(3, "y^2").unwrap() > 0.0);
    }

    #[test]
    fn stable_pce_of_fresh_draw() {
        let p = parse_program("x = 0\nwhile true:\n u = Uniform(1, 2)\n x = x + log(u)\nend").unwrap();
        let (q, rep) = pce_substitute_with(&p, 0, &[4], PceMode::Stable, BasisOptions::default()).unwrap();
        assert_eq!(classify(&q).class, LoopClass::ProbSolvable);
        // unbiased: E[log U] = 2 log 2 - 1
        let t = exact_moments(&q, &["x"], 5).unwrap();
        let want = 5.0 * (2.0 * 2f64.ln() - 1.0);
        assert!((t.get(5, "x").unwrap() - want).abs() < 1e-10);
        assert!(rep.bound.unwrap() >= rep.se[0] * rep.se[0]);
    }

    #[test]
    fn unstable_argument_is_rejected() {
        let p = parse_program("x = 0; y = 0\nwhile true:\n x = x + Normal(0, 1)\n y = y + log(1 + x^2)\nend").unwrap();
        assert!(matches!(pce_substitute(&p, 0, &[3], PceMode::Stable), Err(Error::ConditionsViolated(_))));
        let q = pce_substitute(&p, 0, &[4], PceMode::Conditional(4)).unwrap();
        assert_eq!(classify(&q).class, LoopClass::ProbSolvable);
    }
}
