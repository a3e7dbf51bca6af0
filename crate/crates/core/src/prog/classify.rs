use serde::Serialize;

use crate::dist::Distribution;
use crate::lower::{self, affine_in_draws, APoly, Atom, Block, Lowered, Site};
use crate::poly::Monomial;

use super::ast::{Func, Program};

/// Maximum number of basic variables of an expandable site.
pub const MAX_PCE_VARS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LoopClass {
    ProbSolvable,
    ProbSolvableAfterExactRewrite,
    RequiresPce,
    Unsupported,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Blocking {
    pub location: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub class: LoopClass,
    pub accumulators: Vec<String>,
    pub blocking_constructs: Vec<Blocking>,
}

#[derive(Clone, Debug)]
pub struct Accumulator {
    pub var: String,
    /// `x_new - x_old`, affine in the fresh draws of the iteration.
    pub increment: APoly,
    /// The increment's law when it is exactly one draw.
    pub law: Option<Distribution>,
}

/// How a call site can be eliminated.
#[derive(Clone, Debug, PartialEq)]
pub enum SiteKind {
    /// Argument affine in fresh draws; handled by the engine directly.
    DrawFunction,
    /// sin/cos/exp of `sum_x k_x x + rest` with accumulators `x` (current
    /// values at the call) and `rest` affine in draws.
    ExactRewrite { terms: Vec<(String, f64)> },
    /// General function of at most [`MAX_PCE_VARS`] basic variables.
    Pce { state: Vec<String>, draws: Vec<usize> },
    Unsupported(String),
}

pub fn detect_accumulators(p: &Program) -> Vec<Accumulator> {
    let l = lower::lower(p, Block::Body);
    accumulators_of(p, &l)
}

pub(crate) fn accumulators_of(p: &Program, l: &Lowered) -> Vec<Accumulator> {
    let mut out = Vec::new();
    for (i, var) in p.variables.iter().enumerate() {
        if !l.assigned[i] {
            continue;
        }
        let inc = l.updates[i].sub(&APoly::var(Atom::State(i)));
        let Some((c0, lin)) = affine_in_draws(&inc) else {
            continue;
        };
        let law = match lin.as_slice() {
            [(j, a)] if *a == 1.0 && c0 == 0.0 => Some(l.draws[*j]),
            _ => None,
        };
        out.push(Accumulator {
            var: var.clone(),
            increment: inc,
            law,
        });
    }
    out
}

/// Value of variable `v` as seen by a call in body statement `stmt`.
pub(crate) fn current_value(p: &Program, l: &Lowered, v: usize, stmt: usize) -> APoly {
    match p.body_index(&p.variables[v]) {
        Some(k) if k < stmt => l.updates[v].clone(),
        _ => APoly::var(Atom::State(v)),
    }
}

pub(crate) fn site_kind(p: &Program, l: &Lowered, accs: &[Accumulator], site: &Site) -> SiteKind {
    if site.expanded {
        return SiteKind::DrawFunction;
    }
    let opaque = site
        .arg
        .terms()
        .any(|(m, _)| m.powers().iter().any(|(a, _)| matches!(a, Atom::Opaque(_))));
    if opaque {
        return SiteKind::Unsupported("nested non-polynomial call".into());
    }
    if matches!(site.func, Func::Sin | Func::Cos | Func::Exp) {
        if let Some(terms) = accumulator_terms(p, l, accs, site) {
            return SiteKind::ExactRewrite { terms };
        }
    }
    let mut state = Vec::new();
    let mut draws = Vec::new();
    for (m, _) in site.arg.terms() {
        for (a, _) in m.powers() {
            match a {
                Atom::State(v) => {
                    if !state.contains(&p.variables[*v]) {
                        state.push(p.variables[*v].clone());
                    }
                }
                other => {
                    let j = other.draw().expect("only draw atoms remain");
                    if !draws.contains(&j) {
                        draws.push(j);
                    }
                }
            }
        }
    }
    if state.len() + draws.len() > MAX_PCE_VARS {
        return SiteKind::Unsupported(format!(
            "{} basic variables (at most {MAX_PCE_VARS})",
            state.len() + draws.len()
        ));
    }
    SiteKind::Pce { state, draws }
}

/// Splits the argument as `sum_x k_x x_current + rest` with every `x` an
/// accumulator and `rest` affine in draws.
fn accumulator_terms(
    p: &Program,
    l: &Lowered,
    accs: &[Accumulator],
    site: &Site,
) -> Option<Vec<(String, f64)>> {
    let mut rest = site.arg.clone();
    let mut terms = Vec::new();
    for (v, name) in p.variables.iter().enumerate() {
        let k = site.arg.coefficient(&Monomial::var(Atom::State(v)));
        if k == 0.0 {
            continue;
        }
        if !accs.iter().any(|a| &a.var == name) {
            return None;
        }
        rest = rest.sub(&current_value(p, l, v, site.stmt).scale(k));
        terms.push((name.clone(), k));
    }
    if terms.is_empty() {
        return None;
    }
    affine_in_draws(&rest.prune(1e-14)).map(|_| terms)
}

pub fn classify(p: &Program) -> ClassificationReport {
    let body = lower::lower(p, Block::Body);
    let init = lower::lower(p, Block::Initial);
    let accs = accumulators_of(p, &body);
    let mut blocking = Vec::new();
    let mut exact = false;
    let mut pce = false;
    let mut unsupported = false;
    for site in &body.sites {
        let location = match p.body[site.stmt].line {
            0 => format!("body statement {}", site.stmt + 1),
            line => format!("line {line}"),
        };
        let call = format!("{}({})", site.func.name(), site.arg_expr);
        match site_kind(p, &body, &accs, site) {
            SiteKind::DrawFunction => {}
            SiteKind::ExactRewrite { .. } => {
                exact = true;
                blocking.push(Blocking {
                    location,
                    reason: format!("{call} of an accumulator: exact rewrite"),
                });
            }
            SiteKind::Pce { .. } => {
                pce = true;
                blocking.push(Blocking {
                    location,
                    reason: format!("{call}: polynomial chaos expansion required"),
                });
            }
            SiteKind::Unsupported(why) => {
                unsupported = true;
                blocking.push(Blocking {
                    location,
                    reason: format!("{call}: {why}"),
                });
            }
        }
    }
    for site in init.sites.iter().filter(|s| !s.expanded) {
        unsupported = true;
        blocking.push(Blocking {
            location: format!("line {}", p.initials[site.stmt].line),
            reason: format!(
                "{}({}) in the initial block has no exact initial moments",
                site.func.name(),
                site.arg_expr
            ),
        });
    }
    if let Some(cycle) = nonlinear_cycle(&body, &p.variables) {
        unsupported = true;
        blocking.push(Blocking {
            location: "loop body".into(),
            reason: format!("non-linear cyclic dependency: {cycle}"),
        });
    }
    let class = if unsupported {
        LoopClass::Unsupported
    } else if pce {
        LoopClass::RequiresPce
    } else if exact {
        LoopClass::ProbSolvableAfterExactRewrite
    } else {
        LoopClass::ProbSolvable
    };
    ClassificationReport {
        class,
        accumulators: accs.into_iter().map(|a| a.var).collect(),
        blocking_constructs: blocking,
    }
}

/// Finds a strongly connected group of variables whose updates are not
/// linear in the group. Opaque atoms are ignored.
pub fn nonlinear_cycle(l: &Lowered, names: &[String]) -> Option<String> {
    let n = names.len();
    let mut reach = vec![vec![false; n]; n];
    for (v, row) in reach.iter_mut().enumerate() {
        for (m, _) in l.updates[v].terms() {
            for (a, _) in m.powers() {
                if let Atom::State(u) = a {
                    row[*u] = true;
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    for v in 0..n {
        if !reach[v][v] {
            continue;
        }
        let group: Vec<usize> = (0..n).filter(|&u| reach[v][u] && reach[u][v]).collect();
        for (m, _) in l.updates[v].terms() {
            let deg: u32 = m
                .powers()
                .iter()
                .filter_map(|(a, e)| match a {
                    Atom::State(u) if group.contains(u) => Some(*e),
                    _ => None,
                })
                .sum();
            if deg > 1 {
                let members: Vec<&str> = group.iter().map(|&u| names[u].as_str()).collect();
                return Some(format!(
                    "update of `{}` has degree {deg} in {{{}}}",
                    names[v],
                    members.join(", ")
                ));
            }
        }
    }
    None
}
