//! Exact mixed moments of a single random variable.
//!
//! `E[X^a cos^b(X) sin^c(X)]` is reduced to derivatives of the characteristic
//! function by writing cos and sin as complex exponentials, and
//! `E[X^a exp(bX)]` is the a-th derivative of the moment-generating function
//! at `b`. The general entry points accept several frequencies at once, which
//! is what the engine needs after angle-sum expansion.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, MAX_ORDER};
use crate::error::{Error, Result};
use crate::poly::binomial;

/// Largest imaginary part tolerated before it is discarded.
pub const RESIDUE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flavor {
    Trig,
    Exp,
}

/// `E[X^alpha1 cos^alpha2(X) sin^alpha3(X)]` or `E[X^alpha1 exp^alpha2(X)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedMomentQuery {
    pub alpha1: u32,
    pub alpha2: u32,
    pub alpha3: u32,
    pub flavor: Flavor,
}

impl MixedMomentQuery {
    pub fn trig(alpha1: u32, alpha2: u32, alpha3: u32) -> Self {
        MixedMomentQuery {
            alpha1,
            alpha2,
            alpha3,
            flavor: Flavor::Trig,
        }
    }

    pub fn exp(alpha1: u32, alpha2: u32) -> Self {
        MixedMomentQuery {
            alpha1,
            alpha2,
            alpha3: 0,
            flavor: Flavor::Exp,
        }
    }

    pub fn order(&self) -> u32 {
        self.alpha1 + self.alpha2 + self.alpha3
    }

    fn check_order(&self) -> Result<()> {
        if self.order() > MAX_ORDER {
            Err(Error::UnsupportedOrder {
                order: self.order(),
                max: MAX_ORDER,
            })
        } else {
            Ok(())
        }
    }
}

pub fn mixed_trig_moment(d: &Distribution, q: MixedMomentQuery) -> Result<f64> {
    if q.flavor != Flavor::Trig {
        return Err(Error::Invalid("expected a trigonometric query".into()));
    }
    q.check_order()?;
    scaled_trig_moment(d, q.alpha1, 1.0, q.alpha2, q.alpha3)
}

pub fn mixed_exp_moment(d: &Distribution, q: MixedMomentQuery) -> Result<f64> {
    if q.flavor != Flavor::Exp || q.alpha3 != 0 {
        return Err(Error::Invalid("expected an exponential query".into()));
    }
    q.check_order()?;
    d.mgf_derivative(q.alpha1, q.alpha2 as f64)
}

/// `E[X^a cos^b(sX) sin^c(sX)]`.
///
/// `1 / (i^(a+c) 2^(b+c)) * sum_{k1,k2} C(b,k1) C(c,k2) (-1)^(c-k2) Phi^(a)(s(2(k1+k2) - b - c))`.
pub fn scaled_trig_moment(d: &Distribution, a: u32, s: f64, b: u32, c: u32) -> Result<f64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for k1 in 0..=b {
        for k2 in 0..=c {
            let weight = (binomial(b, k1) * binomial(c, k2)) as f64;
            let sign = if (c - k2) % 2 == 0 { 1.0 } else { -1.0 };
            let t = s * (2 * (k1 + k2)) as f64 - s * (b + c) as f64;
            sum += sign * weight * d.cf_derivative(a, t)?;
        }
    }
    let i = Complex64::i();
    let value = sum / (i.powu(a + c) * 2f64.powi((b + c) as i32));
    strip_residue(value)
}

/// `E[X^a prod_j cos^(b_j)(s_j X) sin^(c_j)(s_j X)]` for factors `(s_j, b_j, c_j)`.
pub fn multi_trig_moment(d: &Distribution, a: u32, factors: &[(f64, u32, u32)]) -> Result<f64> {
    let spectrum = trig_spectrum(factors);
    let mut sum = Complex64::new(0.0, 0.0);
    for (t, coef) in spectrum {
        sum += coef * d.cf_derivative(a, t)?;
    }
    strip_residue(sum / Complex64::i().powu(a))
}

/// `E[X^a exp(t X)]` with `t = sum_j e_j s_j` over factors `(s_j, e_j)`.
pub fn multi_exp_moment(d: &Distribution, a: u32, factors: &[(f64, u32)]) -> Result<f64> {
    let t: f64 = factors.iter().map(|(s, e)| s * *e as f64).sum();
    d.mgf_derivative(a, t)
}

/// Expands a product of powers of `cos(s X)` and `sin(s X)` into
/// `sum_k w_k exp(i t_k X)`.
fn trig_spectrum(factors: &[(f64, u32, u32)]) -> Vec<(f64, Complex64)> {
    let mut terms: Vec<(f64, Complex64)> = vec![(0.0, Complex64::new(1.0, 0.0))];
    let half = Complex64::new(0.5, 0.0);
    // sin(u) = (e^{iu} - e^{-iu}) / 2i
    let half_i = Complex64::new(0.0, -0.5);
    for &(s, b, c) in factors {
        let mut push = |plus: Complex64, minus: Complex64| {
            let mut next = Vec::with_capacity(terms.len() * 2);
            for (t, w) in &terms {
                next.push((t + s, w * plus));
                next.push((t - s, w * minus));
            }
            terms = merge(next);
        };
        for _ in 0..b {
            push(half, half);
        }
        for _ in 0..c {
            push(half_i, -half_i);
        }
    }
    terms
}

fn merge(mut terms: Vec<(f64, Complex64)>) -> Vec<(f64, Complex64)> {
    terms.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, Complex64)> = Vec::with_capacity(terms.len());
    for (t, w) in terms {
        match out.last_mut() {
            Some(last) if (last.0 - t).abs() <= 1e-12 * (1.0 + t.abs()) => last.1 += w,
            _ => out.push((t, w)),
        }
    }
    out.retain(|(_, w)| w.norm() > 0.0);
    out
}

fn strip_residue(value: Complex64) -> Result<f64> {
    if value.im.abs() > RESIDUE_TOL * value.re.abs().max(1.0) {
        Err(Error::ImaginaryResidueTooLarge(value.im))
    } else {
        Ok(value.re)
    }
}
