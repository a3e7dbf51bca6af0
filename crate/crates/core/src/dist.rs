//! Parametric laws of the fresh draws in a loop.
//!
//! Besides the usual pdf/cdf/quantile triple every law exposes raw moments of
//! any order and arbitrary-order derivatives of its characteristic function
//! and moment-generating function. Those derivatives are what the exact
//! mixed trigonometric and exponential moments are built from.
//!
//! `Normal` and `TruncNormal` are parameterised by the variance, never the
//! standard deviation.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, ParseError, Result};
use crate::poly::binomial;
use crate::quad;

/// Highest derivative order served by [`Distribution::cf_derivative`] and
/// [`Distribution::mgf_derivative`].
pub const MAX_ORDER: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Distribution {
    Normal {
        mean: f64,
        variance: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    TruncNormal {
        mean: f64,
        variance: f64,
        low: f64,
        high: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    TruncGamma {
        shape: f64,
        scale: f64,
        low: f64,
        high: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
    },
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

fn std_normal_isf(q: f64) -> f64 {
    SQRT_2 * erfc_inv(2.0 * q)
}

/// `x` with `Q(s, x) = q`, by bisection on a logarithmic scale.
fn gamma_isf(s: f64, q: f64) -> f64 {
    let mut lo = s.max(1.0);
    let mut hi = 2.0 * lo;
    while gamma_ur(s, hi) > q {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma_ur(s, mid) > q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Regularized lower incomplete gamma difference `P(s, hi) - P(s, lo)`, using
/// the upper function when both points sit in the right tail.
fn gamma_mass(s: f64, lo: f64, hi: f64) -> f64 {
    if lo > s {
        gamma_ur(s, lo) - if hi.is_finite() { gamma_ur(s, hi) } else { 0.0 }
    } else {
        (if hi.is_finite() { gamma_lr(s, hi) } else { 1.0 }) - gamma_lr(s, lo.max(0.0))
    }
}

/// Safeguarded Newton iteration for a monotone cdf on `[lo, hi]`.
/// Safeguarded Newton iteration for `cdf(x) = p` on `[lo, hi]`, started
/// from `guess` when it lies inside the bracket.
fn invert_cdf(
    p: f64,
    mut lo: f64,
    mut hi: f64,
    guess: f64,
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
) -> f64 {
    let mut x = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = pdf(x);
        let mut next = if d > 0.0 { x - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi.abs() {
            return next;
        }
        x = next;
    }
    x
}

impl Distribution {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        check(variance > 0.0 && mean.is_finite(), "Normal", "variance must be > 0")?;
        Ok(Distribution::Normal { mean, variance })
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        check(low < high && low.is_finite() && high.is_finite(), "Uniform", "need a < b")?;
        Ok(Distribution::Uniform { low, high })
    }

    pub fn trunc_normal(mean: f64, variance: f64, low: f64, high: f64) -> Result<Self> {
        check(variance > 0.0, "TruncNormal", "variance must be > 0")?;
        check(low < high, "TruncNormal", "need a < b")?;
        Ok(Distribution::TruncNormal {
            mean,
            variance,
            low,
            high,
        })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        check(shape > 0.0 && scale > 0.0, "Gamma", "shape and scale must be > 0")?;
        Ok(Distribution::Gamma { shape, scale })
    }

    pub fn trunc_gamma(shape: f64, scale: f64, low: f64, high: f64) -> Result<Self> {
        check(shape > 0.0 && scale > 0.0, "TruncGamma", "shape and scale must be > 0")?;
        check(low >= 0.0 && low < high, "TruncGamma", "need 0 <= a < b")?;
        Ok(Distribution::TruncGamma {
            shape,
            scale,
            low,
            high,
        })
    }

    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        check(alpha > 0.0 && beta > 0.0, "Beta", "alpha and beta must be > 0")?;
        Ok(Distribution::Beta { alpha, beta })
    }

    /// Builds a law from its DSL constructor name and numeric arguments.
    pub fn from_call(name: &str, args: &[f64]) -> std::result::Result<Self, ParseError> {
        let arity = |n: usize| -> std::result::Result<(), ParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(ParseError::InvalidParameters {
                    name: name.to_string(),
                    reason: format!("expected {n} arguments, got {}", args.len()),
                })
            }
        };
        let built = match name {
            "Normal" => {
                arity(2)?;
                Distribution::normal(args[0], args[1])
            }
            "Uniform" => {
                arity(2)?;
                Distribution::uniform(args[0], args[1])
            }
            "TruncNormal" => {
                arity(4)?;
                Distribution::trunc_normal(args[0], args[1], args[2], args[3])
            }
            "Gamma" => {
                arity(2)?;
                Distribution::gamma(args[0], args[1])
            }
            "TruncGamma" => {
                arity(4)?;
                Distribution::trunc_gamma(args[0], args[1], args[2], args[3])
            }
            "Beta" => {
                arity(2)?;
                Distribution::beta(args[0], args[1])
            }
            other => return Err(ParseError::UnknownDistribution(other.to_string())),
        };
        built.map_err(|e| match e {
            Error::Parse(p) => p,
            other => ParseError::InvalidParameters {
                name: name.to_string(),
                reason: other.to_string(),
            },
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Distribution::Normal { .. } => "Normal",
            Distribution::Uniform { .. } => "Uniform",
            Distribution::TruncNormal { .. } => "TruncNormal",
            Distribution::Gamma { .. } => "Gamma",
            Distribution::TruncGamma { .. } => "TruncGamma",
            Distribution::Beta { .. } => "Beta",
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Distribution::Normal { mean, variance } => vec![mean, variance],
            Distribution::Uniform { low, high } => vec![low, high],
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => vec![mean, variance, low, high],
            Distribution::Gamma { shape, scale } => vec![shape, scale],
            Distribution::TruncGamma {
                shape,
                scale,
                low,
                high,
            } => vec![shape, scale, low, high],
            Distribution::Beta { alpha, beta } => vec![alpha, beta],
        }
    }

    /// Closed support `[a, b]`; either end may be infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Distribution::Uniform { low, high } => (low, high),
            Distribution::TruncNormal { low, high, .. } => (low, high),
            Distribution::Gamma { .. } => (0.0, f64::INFINITY),
            Distribution::TruncGamma { low, high, .. } => (low, high),
            Distribution::Beta { .. } => (0.0, 1.0),
        }
    }

    /// Point above which the law has mass `q`, for an unbounded upper tail and
    /// `q` too small for `quantile(1 - q)`.
    fn upper_tail_point(&self, q: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, variance } => mean + variance.sqrt() * std_normal_isf(q),
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => {
                let (sd, _, _, mass) = Self::trunc_normal_parts(mean, variance, low, high);
                mean + sd * std_normal_isf(q * mass)
            }
            Distribution::Gamma { shape, scale } => scale * gamma_isf(shape, q),
            Distribution::TruncGamma {
                shape,
                scale,
                low,
                high,
            } => scale * gamma_isf(shape, q * gamma_mass(shape, low / scale, high / scale)),
            _ => self.support().1,
        }
    }

    pub fn is_bounded(&self) -> bool {
        let (a, b) = self.support();
        a.is_finite() && b.is_finite()
    }

    /// Standardised truncation points and the retained normal mass.
    fn trunc_normal_parts(mean: f64, variance: f64, low: f64, high: f64) -> (f64, f64, f64, f64) {
        let sd = variance.sqrt();
        let alpha = (low - mean) / sd;
        let beta = (high - mean) / sd;
        let mass = if alpha > 0.0 {
            std_normal_sf(alpha) - std_normal_sf(beta)
        } else {
            std_normal_cdf(beta) - std_normal_cdf(alpha)
        };
        (sd, alpha, beta, mass)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x > b {
            return 0.0;
        }
        match *self {
            Distribution::Normal { mean, variance } => {
                let sd = variance.sqrt();
                std_normal_pdf((x - mean) / sd) / sd
            }
            Distribution::Uniform { low, high } => 1.0 / (high - low),
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => {
                let (sd, _, _, mass) = Self::trunc_normal_parts(mean, variance, low, high);
                std_normal_pdf((x - mean) / sd) / (sd * mass)
            }
            Distribution::Gamma { shape, scale } => gamma_pdf(shape, scale, x),
            Distribution::TruncGamma {
                shape,
                scale,
                low,
                high,
            } => gamma_pdf(shape, scale, x) / gamma_mass(shape, low / scale, high / scale),
            Distribution::Beta { alpha, beta } => {
                if x <= 0.0 || x >= 1.0 {
                    return 0.0;
                }
                ((alpha - 1.0) * x.ln() + (beta - 1.0) * (1.0 - x).ln() - ln_beta(alpha, beta))
                    .exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        match *self {
            Distribution::Normal { mean, variance } => std_normal_cdf((x - mean) / variance.sqrt()),
            Distribution::Uniform { low, high } => (x - low) / (high - low),
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => {
                let (sd, alpha, _, mass) = Self::trunc_normal_parts(mean, variance, low, high);
                let xi = (x - mean) / sd;
                if alpha > 0.0 {
                    (std_normal_sf(alpha) - std_normal_sf(xi)) / mass
                } else {
                    (std_normal_cdf(xi) - std_normal_cdf(alpha)) / mass
                }
            }
            Distribution::Gamma { shape, scale } => gamma_lr(shape, x / scale),
            Distribution::TruncGamma {
                shape,
                scale,
                low,
                high,
            } => {
                gamma_mass(shape, low / scale, x / scale)
                    / gamma_mass(shape, low / scale, high / scale)
            }
            Distribution::Beta { alpha, beta } => beta_reg(alpha, beta, x),
        }
    }

    /// Inverse cdf for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            Distribution::Normal { mean, variance } => {
                mean + variance.sqrt() * std_normal_quantile(p)
            }
            Distribution::Uniform { low, high } => low + p * (high - low),
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => {
                let (sd, alpha, _, mass) = Self::trunc_normal_parts(mean, variance, low, high);
                let xi = if alpha > 0.0 {
                    std_normal_isf(std_normal_sf(alpha) - p * mass)
                } else {
                    std_normal_quantile(std_normal_cdf(alpha) + p * mass)
                };
                (mean + sd * xi).clamp(low, high)
            }
            Distribution::Gamma { shape, scale } => {
                if shape == 1.0 {
                    return -scale * (-p).ln_1p();
                }
                let mut hi = scale * (shape + 10.0 * shape.sqrt() + 10.0);
                while gamma_lr(shape, hi / scale) < p {
                    hi *= 2.0;
                }
                // Wilson-Hilferty
                let c = 1.0 / (9.0 * shape);
                let guess = shape * scale * (1.0 - c + std_normal_quantile(p) * c.sqrt()).powi(3);
                invert_cdf(p, 0.0, hi, guess, |x| self.cdf(x), |x| self.pdf(x))
            }
            Distribution::TruncGamma { low, high, .. } => {
                let hi = if high.is_finite() {
                    high
                } else {
                    let mut h = low.max(1.0) * 2.0;
                    while self.cdf(h) < p {
                        h *= 2.0;
                    }
                    h
                };
                invert_cdf(p, low, hi, f64::NAN, |x| self.cdf(x), |x| self.pdf(x))
            }
            Distribution::Beta { alpha, beta } => {
                let n = alpha + beta;
                let mean = alpha / n;
                let sd = (alpha * beta / (n * n * (n + 1.0))).sqrt();
                let guess = mean + sd * std_normal_quantile(p);
                invert_cdf(p, 0.0, 1.0, guess, |x| self.cdf(x), |x| self.pdf(x))
            }
        }
    }

    /// `E[X^k]`.
    pub fn raw_moment(&self, k: u32) -> Result<f64> {
        let value = match *self {
            Distribution::Normal { mean, variance } => {
                let (mut m0, mut m1) = (1.0, mean);
                if k == 0 {
                    return Ok(1.0);
                }
                for j in 2..=k {
                    let m2 = mean * m1 + (j - 1) as f64 * variance * m0;
                    m0 = m1;
                    m1 = m2;
                }
                m1
            }
            Distribution::Uniform { low, high } => {
                let n = (k + 1) as i32;
                (high.powi(n) - low.powi(n)) / (n as f64 * (high - low))
            }
            Distribution::TruncNormal {
                mean,
                variance,
                low,
                high,
            } => {
                let (sd, alpha, beta, mass) = Self::trunc_normal_parts(mean, variance, low, high);
                let edge = |bound: f64, z: f64, power: u32| -> f64 {
                    if bound.is_finite() {
                        bound.powi(power as i32) * std_normal_pdf(z)
                    } else {
                        0.0
                    }
                };
                let (mut prev, mut cur) = (0.0, 1.0);
                for j in 1..=k {
                    let next = (j - 1) as f64 * variance * prev + mean * cur
                        - sd * (edge(high, beta, j - 1) - edge(low, alpha, j - 1)) / mass;
                    prev = cur;
                    cur = next;
                }
                cur
            }
            Distribution::Gamma { shape, scale } => (0..k)
                .map(|j| scale * (shape + j as f64))
                .product(),
            Distribution::TruncGamma {
                shape,
                scale,
                low,
                high,
            } => {
                let ratio: f64 = (0..k).map(|j| scale * (shape + j as f64)).product();
                ratio * gamma_mass(shape + k as f64, low / scale, high / scale)
                    / gamma_mass(shape, low / scale, high / scale)
            }
            Distribution::Beta { alpha, beta } => (0..k)
                .map(|j| (alpha + j as f64) / (alpha + beta + j as f64))
                .product(),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::MomentDiverges(k))
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1).unwrap_or(f64::NAN)
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.mean();
        match self.raw_moment(2) {
            Ok(m2) => (m2 - m1 * m1).max(0.0),
            Err(_) => f64::NAN,
        }
    }

    /// Cut points of the quadrature panels: tail-clipped support split at
    /// equal-probability quantiles.
    pub fn quadrature_cuts(&self) -> Vec<f64> {
        let (a, b) = self.support();
        let lo = self.quantile(quad::TAIL_MASS).max(a);
        let hi = if b.is_finite() { b } else { self.upper_tail_point(quad::TAIL_MASS) };
        let mut cuts = vec![lo];
        for j in 1..quad::BASE_PANELS {
            let q = self.quantile(j as f64 / quad::BASE_PANELS as f64);
            if q > *cuts.last().unwrap() && q < hi {
                cuts.push(q);
            }
        }
        cuts.push(hi);
        let (left, right) = self.endpoint_singular();
        if left {
            cuts = graded(&cuts, false);
        }
        if right {
            cuts = graded(&cuts, true);
        }
        cuts
    }

    /// Whether the density behaves like a non-integer power at the lower or
    /// upper end of its support.
    fn endpoint_singular(&self) -> (bool, bool) {
        let frac = |x: f64| x.fract() != 0.0;
        match *self {
            Distribution::Beta { alpha, beta } => (frac(alpha), frac(beta)),
            Distribution::Gamma { shape, .. } => (frac(shape), false),
            _ => (false, false),
        }
    }

    /// `E[f(X)]` by composite Gauss–Legendre quadrature with refinement.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        self.expect_vec(1, |x, out| out[0] = f(x)).map(|v| v[0])
    }

    /// Vector form of [`Distribution::expect`]. Results are divided by the
    /// quadrature mass so that `E[1] = 1` holds on the same grid.
    pub fn expect_vec(&self, dim: usize, f: impl Fn(f64, &mut [f64])) -> Result<Vec<f64>> {
        let cuts = self.quadrature_cuts();
        let mut v = quad::integrate_vec(&cuts, dim + 1, quad::NODES_PER_PANEL, |x, out| {
            let w = self.pdf(x);
            f(x, &mut out[..dim]);
            out[..dim].iter_mut().for_each(|o| *o *= w);
            out[dim] = w;
        })?;
        let mass = v.pop().unwrap_or(1.0);
        v.iter_mut().for_each(|x| *x /= mass);
        Ok(v)
    }

    /// Order-th derivative of the characteristic function `E[exp(i t X)]`.
    pub fn cf_derivative(&self, order: u32, t: f64) -> Result<Complex64> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: MAX_ORDER,
            });
        }
        let i = Complex64::i();
        match *self {
            Distribution::Normal { mean, variance } => {
                let f = (i * mean * t - 0.5 * variance * t * t).exp();
                let q1 = i * mean - variance * t;
                let q2 = Complex64::new(-variance, 0.0);
                Ok(gaussian_exp_derivative(order, f, q1, q2))
            }
            Distribution::Uniform { low, high } => {
                let mid = 0.5 * (low + high);
                let half = 0.5 * (high - low);
                let omega = t * half;
                let mut sum = Complex64::new(0.0, 0.0);
                let (cos_int, sin_int) = half_trig_integrals(order, omega);
                for j in 0..=order {
                    // E[U^j e^{i omega U}] for U ~ Uniform(-1, 1)
                    let uj = if j % 2 == 0 {
                        Complex64::new(cos_int[j as usize], 0.0)
                    } else {
                        Complex64::new(0.0, sin_int[j as usize])
                    };
                    sum += binomial(order, j) as f64
                        * mid.powi((order - j) as i32)
                        * half.powi(j as i32)
                        * uj;
                }
                Ok(i.powu(order) * (i * t * mid).exp() * sum)
            }
            Distribution::Gamma { shape, scale } => {
                let rising: f64 = (0..order).map(|j| shape + j as f64).product();
                let base = Complex64::new(1.0, -scale * t);
                Ok(rising * (i * scale).powu(order) * base.powf(-(shape + order as f64)))
            }
            Distribution::Beta { .. } => {
                let series = self.moment_series(order, t, true)?;
                Ok(i.powu(order) * series)
            }
            Distribution::TruncNormal { .. } | Distribution::TruncGamma { .. } => {
                let v = self.expect_vec(2, |x, out| {
                    let amp = x.powi(order as i32);
                    out[0] = amp * (t * x).cos();
                    out[1] = amp * (t * x).sin();
                })?;
                Ok(i.powu(order) * Complex64::new(v[0], v[1]))
            }
        }
    }

    /// Order-th derivative of the moment-generating function `E[exp(t X)]`.
    pub fn mgf_derivative(&self, order: u32, t: f64) -> Result<f64> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order,
                max: MAX_ORDER,
            });
        }
        let value = match *self {
            Distribution::Normal { mean, variance } => {
                let f = Complex64::new((mean * t + 0.5 * variance * t * t).exp(), 0.0);
                let q1 = Complex64::new(mean + variance * t, 0.0);
                let q2 = Complex64::new(variance, 0.0);
                gaussian_exp_derivative(order, f, q1, q2).re
            }
            Distribution::Uniform { low, high } => {
                let mid = 0.5 * (low + high);
                let half = 0.5 * (high - low);
                let integrals = half_exp_integrals(order, t * half);
                let sum: f64 = (0..=order)
                    .map(|j| {
                        binomial(order, j) as f64
                            * mid.powi((order - j) as i32)
                            * half.powi(j as i32)
                            * integrals[j as usize]
                    })
                    .sum();
                (t * mid).exp() * sum
            }
            Distribution::Gamma { shape, scale } => {
                if t * scale >= 1.0 {
                    return Err(Error::MgfDiverges(t));
                }
                let rising: f64 = (0..order).map(|j| shape + j as f64).product();
                rising * scale.powi(order as i32) * (1.0 - scale * t).powf(-(shape + order as f64))
            }
            Distribution::TruncGamma { high, .. } if !high.is_finite() => {
                let scale = match *self {
                    Distribution::TruncGamma { scale, .. } => scale,
                    _ => unreachable!(),
                };
                if t * scale >= 1.0 {
                    return Err(Error::MgfDiverges(t));
                }
                self.expect(|x| x.powi(order as i32) * (t * x).exp())?
            }
            Distribution::Beta { .. } => self.moment_series(order, t, false)?.re,
            Distribution::TruncNormal { .. } | Distribution::TruncGamma { .. } => {
                self.expect(|x| x.powi(order as i32) * (t * x).exp())?
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::MgfDiverges(t))
        }
    }

    /// `sum_j (s t)^j / j! * E[X^(order + j)]` with `s = i` for the characteristic
    /// function and `s = 1` for the moment-generating function. Only used for
    /// bounded laws whose moments stay below one in magnitude.
    fn moment_series(&self, order: u32, t: f64, imaginary: bool) -> Result<Complex64> {
        let step = if imaginary {
            Complex64::new(0.0, t)
        } else {
            Complex64::new(t, 0.0)
        };
        let mut sum = Complex64::new(0.0, 0.0);
        let mut factor = Complex64::new(1.0, 0.0);
        for j in 0..400u32 {
            let term = factor * self.raw_moment(order + j)?;
            sum += term;
            if j as f64 > t.abs() && term.norm() <= 1e-17 * sum.norm().max(1e-300) {
                return Ok(sum);
            }
            factor = factor * step / (j + 1) as f64;
        }
        Err(Error::QuadratureNotConverged(
            "moment series did not converge".into(),
        ))
    }
}

/// Derivatives of `exp(q(t))` for a quadratic `q`: `f^(n+1) = q' f^(n) + n q'' f^(n-1)`.
fn gaussian_exp_derivative(order: u32, f: Complex64, q1: Complex64, q2: Complex64) -> Complex64 {
    let (mut prev, mut cur) = (Complex64::new(0.0, 0.0), f);
    for n in 0..order {
        let next = q1 * cur + n as f64 * q2 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `C_j = int_0^1 u^j cos(w u) du` and `S_j = int_0^1 u^j sin(w u) du` for `j <= n`.
///
/// `E[U^j e^{iwU}]` for `U ~ Uniform(-1, 1)` equals `C_j` (even j) or `i S_j` (odd j).
fn half_trig_integrals(n: u32, w: f64) -> (Vec<f64>, Vec<f64>) {
    let n = n as usize;
    let mut c = vec![0.0; n + 1];
    let mut s = vec![0.0; n + 1];
    if w.abs() <= 1.0 {
        for j in 0..=n {
            let (mut cs, mut ss) = (0.0, 0.0);
            let mut pow = 1.0; // w^m / m!
            for m in 0..60 {
                let term = pow / (j + m + 1) as f64;
                match m % 4 {
                    0 => cs += term,
                    1 => ss += term,
                    2 => cs -= term,
                    _ => ss -= term,
                }
                pow *= w / (m + 1) as f64;
                if pow.abs() < 1e-18 {
                    break;
                }
            }
            c[j] = cs;
            s[j] = ss;
        }
    } else if w.abs() > n as f64 {
        // integration by parts, forward stable once |w| exceeds the order
        let (sw, cw) = w.sin_cos();
        c[0] = sw / w;
        s[0] = (1.0 - cw) / w;
        for j in 1..=n {
            c[j] = sw / w - j as f64 / w * s[j - 1];
            s[j] = -cw / w + j as f64 / w * c[j - 1];
        }
    } else {
        let table = quad::gauss_legendre(64);
        for (x, wt) in table.0.iter().zip(&table.1) {
            let u = 0.5 * (x + 1.0);
            let (su, cu) = (w * u).sin_cos();
            let mut p = 0.5 * wt;
            for j in 0..=n {
                c[j] += p * cu;
                s[j] += p * su;
                p *= u;
            }
        }
    }
    (c, s)
}

/// `E[U^j e^{wU}]` for `U ~ Uniform(-1, 1)`, `j <= n`.
fn half_exp_integrals(n: u32, w: f64) -> Vec<f64> {
    let n = n as usize;
    let mut out = vec![0.0; n + 1];
    if w.abs() > (n as f64).max(30.0) {
        let (ep, em) = (w.exp(), (-w).exp());
        out[0] = (ep - em) / (2.0 * w);
        for j in 1..=n {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            out[j] = (ep - sign * em) / (2.0 * w) - j as f64 / w * out[j - 1];
        }
    } else {
        let table = quad::gauss_legendre(64);
        for (u, wt) in table.0.iter().zip(&table.1) {
            let mut p = 0.5 * wt * (w * u).exp();
            for o in out.iter_mut() {
                *o += p;
                p *= u;
            }
        }
    }
    out
}

fn gamma_pdf(shape: f64, scale: f64, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if shape == 1.0 {
            1.0 / scale
        } else if shape < 1.0 {
            f64::INFINITY
        } else {
            0.0
        };
    }
    ((shape - 1.0) * (x / scale).ln() - x / scale - ln_gamma(shape)).exp() / scale
}

fn check(ok: bool, name: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Parse(ParseError::InvalidParameters {
            name: name.to_string(),
            reason: reason.to_string(),
        }))
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self.params().iter().map(|p| fmt_number(*p)).collect();
        write!(f, "{}({})", self.name(), params.join(", "))
    }
}

/// Shortest decimal that round-trips, with infinities spelled `inf`.
pub(crate) fn fmt_number(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Splits the first (or last) panel geometrically toward its outer end.
fn graded(cuts: &[f64], upper: bool) -> Vec<f64> {
    let mut c = cuts.to_vec();
    if c.len() < 2 {
        return c;
    }
    if upper {
        c.reverse();
    }
    let (end, next) = (c[0], c[1]);
    let mut extra = Vec::new();
    let mut h = 0.5;
    for _ in 0..48 {
        let x = end + (next - end) * h;
        if x == end {
            break;
        }
        extra.push(x);
        h *= 0.5;
    }
    extra.reverse();
    let mut out = vec![end];
    out.extend(extra);
    out.extend_from_slice(&c[1..]);
    if upper {
        out.reverse();
    }
    out
}
