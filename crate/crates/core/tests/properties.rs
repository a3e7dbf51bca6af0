use momentloop::engine::{exact_moments, moment_closure, moments_at, moments_naive, parse_monomial};
use momentloop::exactmom::{mixed_exp_moment, mixed_trig_moment, MixedMomentQuery};
use momentloop::pce::{orthonormal_basis, pce_fit, DegreeMatrix, Law};
use momentloop::sim::Simulator;
use momentloop::transform::rewrite_all;
use momentloop::{parse_program, Distribution};
use num_complex::Complex64;
use proptest::prelude::*;

fn law_strategy() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (-3.0..3.0f64, 0.1..2.0f64).prop_map(|(a, w)| Distribution::uniform(a, a + w).unwrap()),
        (-2.0..2.0f64, 0.05..2.0f64).prop_map(|(m, v)| Distribution::normal(m, v).unwrap()),
        (-1.0..1.0f64, 0.1..2.0f64, 0.2..2.0f64)
            .prop_map(|(m, v, h)| Distribution::trunc_normal(m, v, m - h, m + 2.0 * h).unwrap()),
        (1.0..5.0f64, 0.2..2.0f64).prop_map(|(k, s)| Distribution::gamma(k, s).unwrap()),
        (1.0..5.0f64, 1.0..5.0f64).prop_map(|(a, b)| Distribution::beta(a, b).unwrap()),
    ]
}

fn smooth(kind: usize, a: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    move |z: &[f64]| {
        let x = z[0];
        match kind {
            0 => (a * x).sin() + 0.5 * x.cos(),
            1 => (-a * x * x).exp(),
            _ => (1.0 + a * x * x).sqrt(),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_matrix_is_identity(d in law_strategy()) {
        let deg = 6;
        let b = orthonormal_basis(d, deg).unwrap();
        let n = deg + 1;
        let g = d
            .expect_vec(n * n, |x, out| {
                let v = b.eval_all(x);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j] = v[i] * v[j];
                    }
                }
            })
            .unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((g[i * n + j] - want).abs() < 1e-8, "<p{i},p{j}> = {}", g[i * n + j]);
            }
        }
    }

    #[test]
    fn parseval_gap_is_squared_error(d in law_strategy(), kind in 0usize..3, a in 0.2..1.5f64, deg in 1u32..7) {
        let est = pce_fit(&smooth(kind, a), &[Law::Dist(d)], &[deg]).unwrap();
        let sum: f64 = est.coeffs.iter().map(|c| c * c).sum();
        prop_assert!(sum <= est.norm2 * (1.0 + 1e-12));
        let gap = est.norm2 - sum;
        prop_assert!((gap - est.se * est.se).abs() <= 1e-6 * est.norm2, "gap {gap} se^2 {}", est.se * est.se);
    }

    #[test]
    fn error_shrinks_with_degree(d in law_strategy(), kind in 0usize..3, a in 0.2..1.5f64) {
        let mut prev = f64::INFINITY;
        for deg in 0..8 {
            let se = pce_fit(&smooth(kind, a), &[Law::Dist(d)], &[deg]).unwrap().se;
            prop_assert!(se <= prev + 1e-10, "degree {deg}: {se} > {prev}");
            prev = se;
        }
    }

    #[test]
    fn estimator_mean_is_leading_coefficient(d in law_strategy(), kind in 0usize..3, a in 0.2..1.5f64, deg in 1u32..7) {
        let est = pce_fit(&smooth(kind, a), &[Law::Dist(d)], &[deg]).unwrap();
        let mut mean = 0.0;
        for (m, c) in est.assembled.terms() {
            mean += c * d.raw_moment(m.degree()).unwrap();
        }
        let scale = est.coeffs.iter().fold(1.0f64, |s, c| s.max(c.abs()));
        prop_assert!((mean - est.mean()).abs() <= 1e-9 * scale, "{mean} vs {}", est.mean());
    }

    #[test]
    fn cos_and_sin_squares_sum_to_one(d in law_strategy()) {
        let c2 = mixed_trig_moment(&d, MixedMomentQuery::trig(0, 2, 0)).unwrap();
        let s2 = mixed_trig_moment(&d, MixedMomentQuery::trig(0, 0, 2)).unwrap();
        prop_assert!((c2 + s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cf_derivatives_match_quadrature(d in law_strategy(), k in 0u32..5, t in -2.0..2.0f64) {
        let got = d.cf_derivative(k, t).unwrap();
        let i = Complex64::i();
        let re = d.expect(|x| ((i * x).powu(k) * (i * t * x).exp()).re).unwrap();
        let im = d.expect(|x| ((i * x).powu(k) * (i * t * x).exp()).im).unwrap();
        let scale = d.expect(|x| x.powi(2 * k as i32)).unwrap().sqrt().max(1.0);
        prop_assert!((got.re - re).abs() <= 1e-8 * scale, "{got} vs {re}+{im}i");
        prop_assert!((got.im - im).abs() <= 1e-8 * scale, "{got} vs {re}+{im}i");
    }

    #[test]
    fn mgf_derivatives_match_quadrature(d in law_strategy(), k in 0u32..5, t in -0.4..0.4f64) {
        let got = d.mgf_derivative(k, t).unwrap();
        let want = d.expect(|x| x.powi(k as i32) * (t * x).exp()).unwrap();
        prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn matrix_power_matches_iteration(a in -0.9..0.9f64, b in -0.5..0.5f64, m in -1.0..1.0f64, v in 0.01..1.0f64, n in 0u64..60) {
        let src = format!(
            "x = Normal(0, 1)\ny = 0\nwhile true:\n  x = {a}*x + Normal({m}, {v})\n  y = y + {b}*x^2 + x\nend\n"
        );
        let p = parse_program(&src).unwrap();
        let targets = [parse_monomial(&p, "y^2").unwrap(), parse_monomial(&p, "x^3").unwrap()];
        let r = moment_closure(&p, &targets).unwrap();
        let fast = moments_at(&r, n);
        let slow = moments_naive(&r, n);
        for (f, s) in fast.iter().zip(slow.iter()) {
            prop_assert!((f - s).abs() <= 1e-9 * s.abs().max(1.0), "{f} vs {s}");
        }
    }

    #[test]
    fn rewrite_preserves_trajectories(m in -0.5..0.5f64, v in 0.001..0.2f64, k in 0.1..2.0f64, seed in 0u64..1000) {
        let src = format!(
            "x = 0\ny = 1\nphi = Normal(0, 0.01)\nwhile true:\n  phi = phi + Normal({m}, {v})\n  x = x + cos({k}*phi)\n  y = y*0.9 + exp(-0.5*phi)*sin(phi)\nend\n"
        );
        let p = parse_program(&src).unwrap();
        let q = rewrite_all(&p).unwrap();
        let (sp, sq) = (Simulator::new(&p), Simulator::new(&q));
        for sample in 0..4 {
            let a = sp.run(15, seed, sample).unwrap();
            let b = sq.run(15, seed, sample).unwrap();
            for (i, name) in sp.variables().iter().enumerate() {
                let j = sq.variables().iter().position(|w| w == name).unwrap();
                prop_assert!((a[i] - b[j]).abs() <= 1e-12 * a[i].abs().max(1.0), "{name}: {} vs {}", a[i], b[j]);
            }
        }
    }
}

#[test]
fn trig_closure_propagates() {
    let p = parse_program(
        "x = Uniform(-1, 1)\nc = 1\ns = 0\nwhile true:\n  x = x + Normal(0.3, 0.5)\n  c = cos(2*x)\n  s = sin(2*x)\nend\n",
    )
    .unwrap();
    let q = rewrite_all(&p).unwrap();
    for n in [1, 5, 40] {
        let t = exact_moments(&q, &["c^2", "s^2"], n).unwrap();
        let sum = t.get(n, "c^2").unwrap() + t.get(n, "s^2").unwrap();
        assert!((sum - 1.0).abs() < 1e-9, "n = {n}: {sum}");
    }
}

#[test]
fn exponential_moments_of_standard_normal() {
    let z = Distribution::normal(0.0, 1.0).unwrap();
    let v = mixed_exp_moment(&z, MixedMomentQuery::exp(0, 2)).unwrap();
    assert!((v - 2f64.exp()).abs() < 1e-12);
}

#[test]
fn coefficient_count_is_tensor_size() {
    for (d, k) in [(1u32, 1usize), (3, 2), (5, 2), (2, 3), (4, 4)] {
        let m = DegreeMatrix::full(&vec![d; k]);
        assert_eq!(m.len(), (d as usize + 1).pow(k as u32));
    }
}

#[test]
fn joint_sum_and_product_match_separate_fits() {
    let x1 = Law::Dist(Distribution::trunc_normal(4.0, 1.0, 3.0, 5.0).unwrap());
    let x2 = Law::Dist(Distribution::uniform(4.0, 8.0).unwrap());
    let g = |z: &[f64]| (0.3 * z[0]).sin();
    let h = |z: &[f64]| (-0.2 * z[0]).exp();
    let deg = 4;
    let eg = pce_fit(&g, &[x1.clone()], &[deg]).unwrap();
    let eh = pce_fit(&h, &[x2.clone()], &[deg]).unwrap();
    let sum = pce_fit(&|z: &[f64]| g(&z[..1]) + h(&z[1..]), &[x1.clone(), x2.clone()], &[deg, deg]).unwrap();
    let prod = pce_fit(&|z: &[f64]| g(&z[..1]) * h(&z[1..]), &[x1, x2], &[deg, deg]).unwrap();
    let pts = [[3.2, 4.5], [4.0, 6.0], [4.9, 7.7]];
    for z in pts {
        let (a, b) = (eg.eval(&z[..1]), eh.eval(&z[1..]));
        assert!((sum.eval(&z) - (a + b)).abs() < 1e-9);
        assert!((prod.eval(&z) - a * b).abs() < 1e-9);
    }
    // independent residuals add in quadrature
    let se2 = eg.se.powi(2) + eh.se.powi(2);
    assert!((sum.se.powi(2) - se2).abs() <= 1e-6 * se2.max(1e-12));
    let m2g = eg.norm2;
    let m2h = eh.norm2;
    let pg = m2g - eg.se.powi(2);
    let ph = m2h - eh.se.powi(2);
    let want = m2g * m2h - pg * ph;
    assert!((prod.se.powi(2) - want).abs() <= 1e-6 * want);
}
