use momentloop::pce::{pce_fit, Density, Law};
use momentloop::Distribution;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn quadratic_density() -> Law {
    Law::Density(Density::new("0.75(1-y^2)", -1.0, 1.0, |y| 0.75 * (1.0 - y * y)))
}

#[test]
fn radial_function_on_mixed_laws() {
    let x = Law::Dist(Distribution::uniform(-1.0, 1.0).unwrap());
    let g = |z: &[f64]| (z[0] * z[0] + z[1] * z[1]).sqrt();
    let est = pce_fit(&g, &[x, quadratic_density()], &[2, 2]).unwrap();
    let c = |i: usize, j: usize| est.coeffs[i * 3 + j];
    for (got, want) in [(c(0, 0), 0.677408), (c(0, 2), 0.154109), (c(2, 0), 0.216390), (c(2, 2), -0.040153)] {
        assert!(close(got, want, 5e-6), "{got} vs {want}");
    }
    for (i, j) in [(0, 1), (1, 0), (1, 1), (1, 2), (2, 1)] {
        assert!(c(i, j).abs() < 1e-9);
    }
    let p = &est.assembled;
    let coef = |a: u32, b: u32| p.coefficient(&momentloop::poly::Monomial::from_powers([(0, a), (1, b)]));
    for (got, want) in [(coef(2, 2), -0.629900), (coef(2, 0), 0.851774), (coef(0, 2), 0.930747), (coef(0, 0), 0.249327)] {
        assert!(close(got, want, 5e-6), "{got} vs {want}");
    }
}

fn errors(g: &(dyn Fn(&[f64]) -> f64 + Sync), laws: &[Distribution], degrees: &[u32]) -> Vec<f64> {
    let laws: Vec<Law> = laws.iter().map(|d| Law::Dist(*d)).collect();
    degrees
        .iter()
        .map(|d| pce_fit(g, &laws, &vec![*d; laws.len()]).unwrap().se)
        .collect()
}

#[test]
fn truncated_exponential_ratio() {
    let x1 = Distribution::trunc_normal(4.0, 1.0, 3.0, 5.0).unwrap();
    let x2 = Distribution::trunc_normal(2.0, 0.01, 0.0, 4.0).unwrap();
    let g = |z: &[f64]| 0.3 * (z[0] - z[1]).exp() + 0.6 * (-z[1]).exp();
    let e = errors(&g, &[x1, x2], &[1, 2, 3, 4, 5]);
    let want = [0.343870, 0.057076, 0.007112, 0.000709, 0.000059];
    for (a, b) in e.iter().zip(want) {
        assert!((a - b).abs() <= 5e-6 + 1e-3 * b, "{e:?}");
    }
}

#[test]
fn exponential_of_product() {
    let x1 = Distribution::trunc_normal(4.0, 1.0, 3.0, 5.0).unwrap();
    let x2 = Distribution::trunc_gamma(1.0, 3.0, 0.5, 1.0).unwrap();
    let g = |z: &[f64]| (z[0] * z[1]).exp();
    let e = errors(&g, &[x1, x2], &[1, 2, 3, 4, 5]);
    let want = [5.745048, 1.035060, 0.142816, 0.016118, 0.001543];
    for (a, b) in e.iter().zip(want) {
        assert!((a - b).abs() <= 5e-6 + 1e-3 * b, "{e:?}");
    }
}

#[test]
fn trigonometric_mixture() {
    let x1 = Distribution::normal(0.0, 1.0).unwrap();
    let g = |z: &[f64]| 0.3 * z[0].cos() + 0.7 * z[0].sin();
    let e = errors(&g, &[x1], &[1, 2, 3, 4, 5]);
    let want = [0.222627, 0.181681, 0.054450, 0.039815, 0.009115];
    for (a, b) in e.iter().zip(want) {
        assert!((a - b).abs() <= 5e-6 + 1e-3 * b, "{e:?}");
    }
}

#[test]
fn cyclic_exponential_ratios() {
    let x1 = Distribution::trunc_normal(4.0, 1.0, 3.0, 5.0).unwrap();
    let x2 = Distribution::trunc_gamma(1.0, 3.0, 0.5, 1.0).unwrap();
    let x3 = Distribution::uniform(4.0, 8.0).unwrap();
    let g = |z: &[f64]| 0.3 * (z[0] - z[1]).exp() + 0.6 * (z[1] - z[2]).exp() + 0.1 * (z[2] - z[0]).exp();
    let e = errors(&g, &[x1, x2, x3], &[1, 2, 3]);
    let want = [1.637981, 0.303096, 0.066869];
    for (a, b) in e.iter().zip(want) {
        assert!((a - b).abs() <= 5e-6 + 1e-3 * b, "{e:?}");
    }
}
