//! Generalized polynomial chaos expansion.
//!
//! Orthonormal bases are built numerically for any law by Gram–Schmidt on
//! quadrature node vectors, Fourier coefficients come from a tensor-product
//! Gauss–Legendre grid, and the expansion is returned both as coefficients
//! and as an expanded polynomial in the basic variables.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::dist::{std_normal_pdf, Distribution};
use crate::error::{Error, Result};
use crate::poly::{binomial, Monomial, Poly, UniPoly};
use crate::quad::{self, Rule};

/// Highest degree built in standard precision.
pub const MAX_DEGREE: usize = 12;
/// Highest degree built with compensated inner products.
pub const MAX_DEGREE_EXTENDED: usize = 20;
/// Largest number of basic variables of one expansion.
pub const MAX_VARS: usize = 4;
/// Coefficients below this magnitude are dropped from assembled polynomials.
pub const PRUNE_TOL: f64 = 1e-12;
/// Fourier coefficients this small relative to the largest are quadrature
/// noise; expanding them into monomials of a narrow law only adds cancellation.
pub const NOISE_TOL: f64 = 1e-14;

/// A bounded density given by a closure, for laws outside [`Distribution`].
#[derive(Clone)]
pub struct Density {
    pub label: String,
    pub low: f64,
    pub high: f64,
    pdf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Density {
    pub fn new(
        label: &str,
        low: f64,
        high: f64,
        pdf: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Density {
        Density {
            label: label.to_string(),
            low,
            high,
            pdf: Arc::new(pdf),
        }
    }
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Density({} on [{}, {}])", self.label, self.low, self.high)
    }
}

/// The law of one basic variable.
#[derive(Clone, Debug)]
pub enum Law {
    Dist(Distribution),
    Density(Density),
}

impl From<Distribution> for Law {
    fn from(d: Distribution) -> Law {
        Law::Dist(d)
    }
}

impl Law {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Law::Dist(d) => d.pdf(x),
            Law::Density(d) if x < d.low || x > d.high => 0.0,
            Law::Density(d) => (d.pdf)(x),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            Law::Dist(d) => d.support(),
            Law::Density(d) => (d.low, d.high),
        }
    }

    fn cuts(&self) -> Vec<f64> {
        match self {
            Law::Dist(d) => d.quadrature_cuts(),
            Law::Density(d) => {
                let n = quad::BASE_PANELS;
                (0..=n)
                    .map(|i| d.low + (d.high - d.low) * i as f64 / n as f64)
                    .collect()
            }
        }
    }

    /// Composite rule whose weights already include the density.
    pub fn rule(&self, nodes_per_panel: usize, level: u32) -> Rule {
        let mut r = quad::composite(&self.cuts(), level, nodes_per_panel);
        for (x, w) in r.nodes.iter().zip(r.weights.iter_mut()) {
            *w *= self.pdf(*x);
        }
        // clipped tails leave the rule slightly short of a probability measure
        let mass: f64 = r.weights.iter().sum();
        if mass > 0.0 {
            r.weights.iter_mut().for_each(|w| *w /= mass);
        }
        r
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            Law::Dist(d) => serde_json::to_value(d).expect("distributions serialize"),
            Law::Density(d) => json!({"kind": "Density", "label": d.label, "low": d.low, "high": d.high}),
        }
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Dist(d) => write!(f, "{d}"),
            Law::Density(d) => write!(f, "{}", d.label),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BasisOptions {
    /// Compensated inner products during Gram–Schmidt.
    pub extended_precision: bool,
}

/// Polynomials `p_0 .. p_d` orthonormal under one law.
#[derive(Clone, Debug)]
pub struct OrthonormalBasis {
    pub law: Law,
    /// Coefficients in powers of the variable itself, lowest first.
    pub polys: Vec<UniPoly>,
    center: f64,
    scale: f64,
    /// Coefficients in powers of `(x - center) / scale`; used for evaluation.
    standardized: Vec<Vec<f64>>,
}

impl OrthonormalBasis {
    pub fn degree(&self) -> usize {
        self.polys.len() - 1
    }

    /// Values `p_0(x) .. p_d(x)`.
    pub fn eval_all(&self, x: f64) -> Vec<f64> {
        let t = (x - self.center) / self.scale;
        self.standardized
            .iter()
            .map(|c| c.iter().rev().fold(0.0, |acc, a| acc * t + a))
            .collect()
    }

    pub fn eval(&self, k: usize, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        self.standardized[k].iter().rev().fold(0.0, |acc, a| acc * t + a)
    }
}

/// Error-free transformation `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Dot product in twice the working precision (Ogita, Rump and Oishi).
fn dot2(x: &[f64], y: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let p = a * b;
        let q = a.mul_add(*b, -p);
        let (t, e) = two_sum(s, p);
        s = t;
        c += e + q;
    }
    s + c
}

fn dot(x: &[f64], y: &[f64], extended: bool) -> f64 {
    if extended {
        dot2(x, y)
    } else {
        x.iter().zip(y).map(|(a, b)| a * b).sum()
    }
}

/// Modified Gram–Schmidt with one re-orthogonalisation pass on the vectors
/// `sqrt(w_i) t_i^k`, tracking coefficients in powers of `t`.
fn gram_schmidt(ts: &[f64], sw: &[f64], degree: usize, extended: bool) -> Result<Vec<Vec<f64>>> {
    let n = ts.len();
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    let mut coefs: Vec<Vec<f64>> = Vec::with_capacity(degree + 1);
    for k in 0..=degree {
        let mut v: Vec<f64> = (0..n).map(|i| sw[i] * ts[i].powi(k as i32)).collect();
        let mut c = vec![0.0; degree + 1];
        c[k] = 1.0;
        for _pass in 0..2 {
            for (q, qc) in qs.iter().zip(&coefs) {
                let r = dot(&v, q, extended);
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= r * b);
                c.iter_mut().zip(qc).for_each(|(a, b)| *a -= r * b);
            }
        }
        let norm = dot(&v, &v, extended).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::IllConditionedBasis(format!(
                "degree {k} polynomial has zero norm"
            )));
        }
        v.iter_mut().for_each(|a| *a /= norm);
        c.iter_mut().for_each(|a| *a /= norm);
        qs.push(v);
        coefs.push(c);
    }
    Ok(coefs)
}

/// Largest deviation of the Gram matrix from the identity.
fn gram_residual(basis: &OrthonormalBasis, rule: &Rule) -> f64 {
    let d = basis.degree();
    let mut g = vec![vec![0.0; d + 1]; d + 1];
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let v = basis.eval_all(*x);
        for i in 0..=d {
            for j in 0..=i {
                g[i][j] += w * v[i] * v[j];
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..=d {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[i][j] - target).abs());
        }
    }
    worst
}

fn build_basis(law: &Law, rule: &Rule, degree: usize, extended: bool) -> Result<OrthonormalBasis> {
    let mass: f64 = rule.weights.iter().sum();
    let center = rule.integrate(|x| x) / mass;
    let var = rule.integrate(|x| (x - center).powi(2)) / mass;
    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    let ts: Vec<f64> = rule.nodes.iter().map(|x| (x - center) / scale).collect();
    let sw: Vec<f64> = rule.weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    let standardized = gram_schmidt(&ts, &sw, degree, extended)?;
    // t^k = sum_j C(k,j) x^j (-center)^(k-j) / scale^k
    let polys = standardized
        .iter()
        .map(|c| {
            let mut raw = vec![0.0; c.len()];
            for (k, ck) in c.iter().enumerate() {
                if *ck == 0.0 {
                    continue;
                }
                let f = ck / scale.powi(k as i32);
                for (j, r) in raw.iter_mut().enumerate().take(k + 1) {
                    *r += f * binomial(k as u32, j as u32) as f64 * (-center).powi((k - j) as i32);
                }
            }
            UniPoly::new(raw)
        })
        .collect();
    Ok(OrthonormalBasis {
        law: law.clone(),
        polys,
        center,
        scale,
        standardized,
    })
}

pub fn orthonormal_basis(law: impl Into<Law>, max_degree: usize) -> Result<OrthonormalBasis> {
    orthonormal_basis_with(law, max_degree, BasisOptions::default())
}

pub fn orthonormal_basis_with(
    law: impl Into<Law>,
    max_degree: usize,
    opts: BasisOptions,
) -> Result<OrthonormalBasis> {
    let law = law.into();
    let cap = if opts.extended_precision {
        MAX_DEGREE_EXTENDED
    } else {
        MAX_DEGREE
    };
    if max_degree > cap {
        return Err(Error::IllConditionedBasis(format!(
            "degree {max_degree} exceeds {cap}; the monomial seed is too ill-conditioned"
        )));
    }
    let mut prev: Option<OrthonormalBasis> = None;
    for level in 0..=quad::MAX_LEVEL {
        let rule = law.rule(quad::NODES_PER_PANEL, level);
        let basis = build_basis(&law, &rule, max_degree, opts.extended_precision)?;
        if let Some(p) = &prev {
            let diff = p
                .standardized
                .iter()
                .flatten()
                .zip(basis.standardized.iter().flatten())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / (1.0 + b.abs())));
            if diff <= quad::CONVERGENCE_TOL {
                let residual = gram_residual(&basis, &law.rule(quad::NODES_PER_PANEL, level + 1));
                if residual > 1e-6 {
                    return Err(Error::IllConditionedBasis(format!(
                        "Gram residual {residual:e} after re-orthogonalisation"
                    )));
                }
                return Ok(basis);
            }
        }
        prev = Some(basis);
    }
    Err(Error::QuadratureNotConverged(format!(
        "basis of degree {max_degree} for {law}"
    )))
}

/// Rows enumerate `{0..d_1} x ... x {0..d_k}` lexicographically, last index fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DegreeMatrix {
    pub rows: Vec<Vec<u32>>,
}

impl DegreeMatrix {
    pub fn full(max_degrees: &[u32]) -> DegreeMatrix {
        let mut rows = vec![vec![]];
        for &d in max_degrees {
            rows = rows
                .into_iter()
                .flat_map(|r| {
                    (0..=d).map(move |e| {
                        let mut r = r.clone();
                        r.push(e);
                        r
                    })
                })
                .collect();
        }
        DegreeMatrix { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    /// Largest degree per column.
    pub fn max_degrees(&self) -> Vec<u32> {
        (0..self.columns())
            .map(|i| self.rows.iter().map(|r| r[i]).max().unwrap_or(0))
            .collect()
    }
}

/// A k-variate function of the basic variables.
pub type Integrand<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

fn nodes_for(k: usize) -> usize {
    match k {
        1 => 64,
        2 => 32,
        3 => 16,
        _ => 8,
    }
}

/// Values of `g` on the tensor grid, last axis fastest.
fn grid_values(g: &Integrand, rules: &[Rule]) -> Result<Vec<f64>> {
    let shape: Vec<usize> = rules.iter().map(|r| r.len()).collect();
    let total: usize = shape.iter().product();
    let inner: usize = shape[1..].iter().product();
    let values: Vec<f64> = (0..shape[0])
        .into_par_iter()
        .flat_map_iter(|i0| {
            let mut point = vec![0.0; rules.len()];
            point[0] = rules[0].nodes[i0];
            let shape = &shape;
            (0..inner)
                .map(|rest| {
                    let mut r = rest;
                    for ax in (1..rules.len()).rev() {
                        point[ax] = rules[ax].nodes[r % shape[ax]];
                        r /= shape[ax];
                    }
                    g(&point)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    debug_assert_eq!(values.len(), total);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::QuadratureNotConverged(format!(
            "integrand is not finite at grid point {i}"
        )));
    }
    Ok(values)
}

/// Contracts axis `ax` of a row-major tensor with `m` (`n_ax x out`).
fn contract(t: &[f64], shape: &[usize], ax: usize, m: &[Vec<f64>], out: usize) -> Vec<f64> {
    let outer: usize = shape[..ax].iter().product();
    let inner: usize = shape[ax + 1..].iter().product();
    let n = shape[ax];
    let mut res = vec![0.0; outer * out * inner];
    for o in 0..outer {
        for (i, row) in m.iter().enumerate().take(n) {
            let src = &t[(o * n + i) * inner..(o * n + i + 1) * inner];
            for (a, f) in row.iter().enumerate() {
                if *f == 0.0 {
                    continue;
                }
                let dst = &mut res[(o * out + a) * inner..(o * out + a + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += f * s);
            }
        }
    }
    res
}

/// Per-axis tables `w_i p_a(x_i)` and `p_a(x_i)`.
fn axis_tables(basis: &OrthonormalBasis, rule: &Rule, degree: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut weighted = Vec::with_capacity(rule.len());
    let mut plain = Vec::with_capacity(rule.len());
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let v: Vec<f64> = basis.eval_all(*x).into_iter().take(degree + 1).collect();
        weighted.push(v.iter().map(|p| p * w).collect());
        plain.push(v);
    }
    (weighted, plain)
}

struct GridFit {
    /// Full tensor of coefficients up to the per-axis maxima.
    coeffs: Vec<f64>,
    norm2: f64,
    se: f64,
}

fn fit_on_grid(g: &Integrand, bases: &[OrthonormalBasis], degrees: &[usize], rules: &[Rule]) -> Result<GridFit> {
    let values = grid_values(g, rules)?;
    let mut shape: Vec<usize> = rules.iter().map(|r| r.len()).collect();
    let tables: Vec<_> = bases
        .iter()
        .zip(rules)
        .zip(degrees)
        .map(|((b, r), d)| axis_tables(b, r, *d))
        .collect();

    let mut t = values.clone();
    for ax in (0..bases.len()).rev() {
        t = contract(&t, &shape, ax, &tables[ax].0, degrees[ax] + 1);
        shape[ax] = degrees[ax] + 1;
    }
    let coeffs = t;

    // weighted squared norm and residual on the same grid
    let mut approx = coeffs.clone();
    let mut ashape: Vec<usize> = degrees.iter().map(|d| d + 1).collect();
    for ax in 0..bases.len() {
        let transposed: Vec<Vec<f64>> = (0..=degrees[ax])
            .map(|a| tables[ax].1.iter().map(|row| row[a]).collect())
            .collect();
        approx = contract(&approx, &ashape, ax, &transposed, rules[ax].len());
        ashape[ax] = rules[ax].len();
    }
    let weights = tensor_weights(rules);
    let mut norm2 = 0.0;
    let mut resid = 0.0;
    for ((v, a), w) in values.iter().zip(&approx).zip(&weights) {
        norm2 += w * v * v;
        resid += w * (v - a) * (v - a);
    }
    Ok(GridFit {
        coeffs,
        norm2,
        se: resid.max(0.0).sqrt(),
    })
}

fn tensor_weights(rules: &[Rule]) -> Vec<f64> {
    let mut w = vec![1.0];
    for r in rules {
        w = w
            .iter()
            .flat_map(|a| r.weights.iter().map(move |b| a * b))
            .collect();
    }
    w
}

/// Fits on successively finer grids until coefficients and error agree.
fn converged_fit(g: &Integrand, bases: &[OrthonormalBasis], degrees: &[usize]) -> Result<GridFit> {
    let k = bases.len();
    if k == 0 || k > MAX_VARS {
        return Err(Error::Invalid(format!(
            "expansions need 1 to {MAX_VARS} basic variables, got {k}"
        )));
    }
    let npp = nodes_for(k);
    let max_level = match k {
        1 => quad::MAX_LEVEL,
        2 => 3,
        _ => 0,
    };
    let mut prev: Option<GridFit> = None;
    for level in 0..=max_level {
        let rules: Vec<Rule> = bases.iter().map(|b| b.law.rule(npp, level)).collect();
        let fit = fit_on_grid(g, bases, degrees, &rules)?;
        if k >= 3 {
            return Ok(fit);
        }
        if let Some(p) = &prev {
            let scale = fit.coeffs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
            let dc = fit
                .coeffs
                .iter()
                .zip(&p.coeffs)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let dse = (fit.se - p.se).abs();
            if dc <= 1e-10 * scale && dse <= 1e-9 * fit.se.max(1e-4 * scale) {
                return Ok(fit);
            }
        }
        prev = Some(fit);
    }
    if k == 2 {
        // finest grid tried; accept it
        return Ok(prev.expect("at least one level"));
    }
    Err(Error::QuadratureNotConverged(
        "Fourier coefficients did not stabilise".into(),
    ))
}

fn flat_index(row: &[u32], maxd: &[usize]) -> usize {
    row.iter()
        .zip(maxd)
        .fold(0, |acc, (d, m)| acc * (m + 1) + *d as usize)
}

/// `c_j = E[g(Z) prod_i p_i^(d_ji)(Z_i)]` for every row of `d`.
pub fn fourier_coefficients(g: &Integrand, bases: &[OrthonormalBasis], d: &DegreeMatrix) -> Result<Vec<f64>> {
    let maxd: Vec<usize> = d.max_degrees().iter().map(|x| *x as usize).collect();
    check_degrees(bases, &maxd)?;
    let fit = converged_fit(g, bases, &maxd)?;
    Ok(d.rows.iter().map(|r| fit.coeffs[flat_index(r, &maxd)]).collect())
}

fn check_degrees(bases: &[OrthonormalBasis], maxd: &[usize]) -> Result<()> {
    if bases.len() != maxd.len() {
        return Err(Error::Invalid("one basis per column of D is required".into()));
    }
    for (b, d) in bases.iter().zip(maxd) {
        if *d > b.degree() {
            return Err(Error::DegreeTooHigh {
                degree: *d,
                max: b.degree(),
            });
        }
    }
    Ok(())
}

/// `sum_j c_j prod_i p_i^(d_ji)(z_i)` in expanded monomial form over basic
/// variable indices.
pub fn assemble_estimator(coeffs: &[f64], bases: &[OrthonormalBasis], d: &DegreeMatrix) -> Poly<usize> {
    let mut out = Poly::zero();
    let cmax = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for (c, row) in coeffs.iter().zip(&d.rows) {
        if c.abs() <= NOISE_TOL * cmax {
            continue;
        }
        let mut term = Poly::constant(*c);
        for (i, deg) in row.iter().enumerate() {
            let p = &bases[i].polys[*deg as usize];
            let mut up = Poly::zero();
            for (k, a) in p.coeffs.iter().enumerate() {
                up.add_term(Monomial::from_powers([(i, k as u32)]), *a);
            }
            term = term.mul(&up);
        }
        out = out.add(&term);
    }
    out.prune(PRUNE_TOL)
}

#[derive(Clone, Debug)]
pub struct PceEstimate {
    pub bases: Vec<OrthonormalBasis>,
    pub degrees: DegreeMatrix,
    pub coeffs: Vec<f64>,
    /// `sqrt(E[(g - g_hat)^2])`.
    pub se: f64,
    /// `E[g^2]`, kept for the Parseval identity.
    pub norm2: f64,
    pub assembled: Poly<usize>,
}

impl PceEstimate {
    /// Mean of the estimator, the coefficient of the all-zero row.
    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    /// Evaluates the basis form at `z`.
    pub fn eval(&self, z: &[f64]) -> f64 {
        let tables: Vec<Vec<f64>> = self.bases.iter().zip(z).map(|(b, x)| b.eval_all(*x)).collect();
        self.coeffs
            .iter()
            .zip(&self.degrees.rows)
            .map(|(c, row)| c * row.iter().enumerate().map(|(i, d)| tables[i][*d as usize]).product::<f64>())
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "bases": self.bases.iter().map(|b| json!({
                "dist": b.law.describe(),
                "coeffs": b.polys.iter().map(|p| p.coeffs.clone()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "D": self.degrees.rows,
            "coeffs": self.coeffs,
            "se": self.se,
        })
    }
}

/// Builds bases, coefficients, error and assembled polynomial in one pass.
pub fn pce_fit(g: &Integrand, laws: &[Law], degrees: &[u32]) -> Result<PceEstimate> {
    pce_fit_with(g, laws, degrees, BasisOptions::default())
}

pub fn pce_fit_with(g: &Integrand, laws: &[Law], degrees: &[u32], opts: BasisOptions) -> Result<PceEstimate> {
    if laws.len() != degrees.len() {
        return Err(Error::Invalid("one degree per basic variable is required".into()));
    }
    let bases = laws
        .iter()
        .zip(degrees)
        .map(|(l, d)| orthonormal_basis_with(l.clone(), *d as usize, opts))
        .collect::<Result<Vec<_>>>()?;
    let d = DegreeMatrix::full(degrees);
    let maxd: Vec<usize> = degrees.iter().map(|x| *x as usize).collect();
    let fit = converged_fit(g, &bases, &maxd)?;
    let coeffs = fit.coeffs;
    let assembled = assemble_estimator(&coeffs, &bases, &d);
    Ok(PceEstimate {
        bases,
        degrees: d,
        coeffs,
        se: fit.se,
        norm2: fit.norm2,
        assembled,
    })
}

/// `sqrt(E[(g - g_hat)^2])` by tensor quadrature.
pub fn approximation_error(g: &Integrand, est: &PceEstimate) -> Result<f64> {
    let k = est.bases.len();
    let npp = nodes_for(k);
    let levels: &[u32] = if k <= 2 { &[0, 1, 2] } else { &[0] };
    let mut prev: Option<f64> = None;
    for &level in levels {
        let rules: Vec<Rule> = est.bases.iter().map(|b| b.law.rule(npp, level)).collect();
        let values = grid_values(g, &rules)?;
        let weights = tensor_weights(&rules);
        let mut acc = 0.0;
        let mut idx = vec![0usize; k];
        let mut z = vec![0.0; k];
        for (v, w) in values.iter().zip(&weights) {
            for ax in 0..k {
                z[ax] = rules[ax].nodes[idx[ax]];
            }
            let a = est.eval(&z);
            acc += w * (v - a) * (v - a);
            for ax in (0..k).rev() {
                idx[ax] += 1;
                if idx[ax] < rules[ax].len() {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let se = acc.max(0.0).sqrt();
        if let Some(p) = prev {
            if (se - p).abs() <= 1e-9 * se.max(1e-12) + 1e-15 {
                return Ok(se);
            }
        }
        if k > 2 {
            return Ok(se);
        }
        prev = Some(se);
    }
    Ok(prev.unwrap())
}

/// `(2 / m + 1) Var_phi(g(Z))` with `Z` standard normal and `m` the smallest
/// standard normal density over the corners of the support box. Infinite when
/// `g(Z)` is not square-integrable under the standard normal.
pub fn error_bound(g: &Integrand, support: &[(f64, f64)]) -> Result<f64> {
    if support.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::UnboundedSupport);
    }
    let k = support.len();
    let m: f64 = support
        .iter()
        .map(|(a, b)| std_normal_pdf(*a).min(std_normal_pdf(*b)))
        .product();
    let var_at = |tail: f64| -> Result<Option<(f64, f64)>> {
        let z = -crate::dist::std_normal_quantile(tail);
        let cuts: Vec<f64> = (0..=16).map(|i| -z + 2.0 * z * i as f64 / 16.0).collect();
        let npp = nodes_for(k).max(16);
        let mut r = quad::composite(&cuts, 0, npp);
        for (x, w) in r.nodes.iter().zip(r.weights.iter_mut()) {
            *w *= std_normal_pdf(*x);
        }
        let mass: f64 = r.weights.iter().sum();
        r.weights.iter_mut().for_each(|w| *w /= mass);
        let rules = vec![r; k];
        let values = match grid_values(g, &rules) {
            Ok(v) => v,
            Err(_) => return Ok(None),
        };
        let weights = tensor_weights(&rules);
        let (mut s1, mut s2) = (0.0, 0.0);
        for (v, w) in values.iter().zip(&weights) {
            s1 += w * v;
            s2 += w * v * v;
        }
        if !s2.is_finite() {
            return Ok(None);
        }
        Ok(Some(((s2 - s1 * s1).max(0.0), s2)))
    };
    let narrow = var_at(1e-12)?;
    let wide = var_at(1e-15)?;
    let var = match (narrow, wide) {
        (Some((a, s2)), Some((b, _))) if (a - b).abs() <= 1e-6 * a.max(1e-9 * s2) => {
            if a <= 1e-12 * s2 {
                0.0
            } else {
                b
            }
        }
        _ => return Ok(f64::INFINITY),
    };
    Ok((2.0 / m + 1.0) * var)
}

/// Per-iteration estimates `P(1) .. P(N)` combined by Lagrange interpolation
/// in a normalised clock `u = 2 (c - 1) / (N - 1) - 1`, which keeps the
/// expanded interpolation weights small.
#[derive(Clone, Debug)]
pub struct ConditionalEstimate {
    /// Variables `0..k` are the basic variables, `k` is the clock.
    pub poly: Poly<usize>,
    pub iterations: usize,
    pub basic_vars: usize,
}

impl ConditionalEstimate {
    pub fn clock(&self, c: f64) -> f64 {
        clock_value(c, self.iterations)
    }

    pub fn eval(&self, c: f64, z: &[f64]) -> f64 {
        let u = self.clock(c);
        self.poly
            .eval(|v| if *v == self.basic_vars { u } else { z[*v] })
    }
}

pub fn clock_value(c: f64, iterations: usize) -> f64 {
    if iterations <= 1 {
        0.0
    } else {
        2.0 * (c - 1.0) / (iterations as f64 - 1.0) - 1.0
    }
}

pub fn conditional_estimator(per_iter: &[PceEstimate]) -> Result<ConditionalEstimate> {
    let Some(first) = per_iter.first() else {
        return Err(Error::Invalid("at least one per-iteration estimate is required".into()));
    };
    let k = first.bases.len();
    if per_iter.iter().any(|e| e.bases.len() != k) {
        return Err(Error::Invalid("per-iteration estimates must share basic variables".into()));
    }
    let polys: Vec<Poly<usize>> = per_iter.iter().map(|e| e.assembled.clone()).collect();
    Ok(ConditionalEstimate {
        poly: interpolate_in_clock(&polys, k),
        iterations: per_iter.len(),
        basic_vars: k,
    })
}

/// `sum_n P_n * l_n(u)` with `l_n` the Lagrange weights of the clock nodes
/// and `u` the variable `clock`. A single polynomial is returned unchanged.
pub fn interpolate_in_clock(polys: &[Poly<usize>], clock: usize) -> Poly<usize> {
    let n = polys.len();
    let nodes: Vec<f64> = (1..=n).map(|i| clock_value(i as f64, n)).collect();
    let mut out = Poly::zero();
    for (i, p) in polys.iter().enumerate() {
        let mut w = vec![1.0];
        for (j, xj) in nodes.iter().enumerate() {
            if j == i {
                continue;
            }
            let denom = nodes[i] - xj;
            let mut next = vec![0.0; w.len() + 1];
            for (q, a) in w.iter().enumerate() {
                next[q + 1] += a / denom;
                next[q] -= a * xj / denom;
            }
            w = next;
        }
        let mut weight = Poly::zero();
        for (q, a) in w.iter().enumerate() {
            weight.add_term(Monomial::from_powers([(clock, q as u32)]), *a);
        }
        out = out.add(&p.mul(&weight));
    }
    out.prune(PRUNE_TOL)
}
