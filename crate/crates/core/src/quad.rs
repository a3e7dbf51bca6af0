//! Composite Gauss–Legendre quadrature.
//!
//! Every integral against a distribution in this crate goes through the same
//! scheme: the (tail-clipped) support is cut into equal-probability panels,
//! each panel carries a Gauss–Legendre rule, and the number of panels is
//! doubled until two successive estimates agree.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Nodes per panel for one-dimensional integrals.
pub const NODES_PER_PANEL: usize = 64;
/// Number of equal-probability panels at the coarsest level.
pub const BASE_PANELS: usize = 8;
/// Probability mass discarded in each unbounded (or very long) tail.
pub const TAIL_MASS: f64 = 1e-40;
/// Agreement required between two successive refinement levels.
pub const CONVERGENCE_TOL: f64 = 1e-10;
/// Maximum number of panel doublings before giving up.
pub const MAX_LEVEL: u32 = 5;

type NodeTable = (Vec<f64>, Vec<f64>);

fn cache() -> &'static Mutex<HashMap<usize, Arc<NodeTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<NodeTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Arc<NodeTable> {
    if let Some(t) = cache().lock().unwrap().get(&n) {
        return t.clone();
    }
    let table = Arc::new(compute_gauss_legendre(n));
    cache().lock().unwrap().insert(n, table.clone());
    table
}

fn compute_gauss_legendre(n: usize) -> NodeTable {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (x * p - p0) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A discrete rule `sum_j w_j f(x_j)`.
#[derive(Clone, Debug, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Composite Gauss–Legendre rule over consecutive panels given by `cuts`,
/// with each panel further split into `2^level` equal pieces.
pub fn composite(cuts: &[f64], level: u32, nodes_per_panel: usize) -> Rule {
    let table = gauss_legendre(nodes_per_panel);
    let (xs, ws) = (&table.0, &table.1);
    let pieces = 1usize << level;
    let mut rule = Rule::default();
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if hi <= lo {
            continue;
        }
        let width = (hi - lo) / pieces as f64;
        for p in 0..pieces {
            let a = lo + width * p as f64;
            let half = width / 2.0;
            let mid = a + half;
            for (x, w) in xs.iter().zip(ws) {
                rule.nodes.push(mid + half * x);
                rule.weights.push(half * w);
            }
        }
    }
    rule
}

/// Integrates a vector-valued function over `cuts`, doubling the panel count
/// until every component agrees with the previous level.
pub fn integrate_vec(
    cuts: &[f64],
    dim: usize,
    nodes_per_panel: usize,
    f: impl Fn(f64, &mut [f64]),
) -> Result<Vec<f64>> {
    let mut prev: Option<Vec<f64>> = None;
    let mut buf = vec![0.0; dim];
    for level in 0..=MAX_LEVEL {
        let rule = composite(cuts, level, nodes_per_panel);
        let mut acc = vec![0.0; dim];
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            buf.iter_mut().for_each(|b| *b = 0.0);
            f(*x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += w * b;
            }
        }
        if acc.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureNotConverged(
                "integrand produced a non-finite value".into(),
            ));
        }
        if let Some(p) = &prev {
            let scale = acc.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let diff = acc
                .iter()
                .zip(p)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if diff <= CONVERGENCE_TOL * scale {
                return Ok(acc);
            }
        }
        prev = Some(acc);
    }
    Err(Error::QuadratureNotConverged(format!(
        "no agreement after {MAX_LEVEL} panel doublings"
    )))
}

pub fn integrate(cuts: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    integrate_vec(cuts, 1, NODES_PER_PANEL, |x, out| out[0] = f(x)).map(|v| v[0])
}
