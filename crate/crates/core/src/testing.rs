//! Quadrature oracles shared by unit tests.

pub(crate) use crate::quadrature::gauss_legendre;

/// `P̃_0(μ), …, P̃_{n-1}(μ)` with `∫ P̃_i P̃_j dμ = δ_ij`.
pub(crate) fn normalized_legendre(n: usize, mu: f64) -> Vec<f64> {
    let mut p = vec![0.0; n.max(2)];
    p[0] = 1.0;
    p[1] = mu;
    for l in 2..n {
        let lf = l as f64;
        p[l] = ((2.0 * lf - 1.0) * mu * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
    }
    p.truncate(n);
    p.iter()
        .enumerate()
        .map(|(l, v)| v * ((2.0 * l as f64 + 1.0) / 2.0).sqrt())
        .collect()
}

#[test]
fn quadrature_integrates_polynomials() {
    let (x, w) = gauss_legendre(6);
    let int = |f: &dyn Fn(f64) -> f64| x.iter().zip(&w).map(|(&x, &w)| w * f(x)).sum::<f64>();
    assert!((int(&|_| 1.0) - 2.0).abs() < 1e-14);
    assert!((int(&|t| t.powi(10)) - 2.0 / 11.0).abs() < 1e-14);
    let p = |mu| normalized_legendre(5, mu);
    assert!((int(&|t| p(t)[3] * p(t)[3]) - 1.0).abs() < 1e-13);
    assert!(int(&|t| p(t)[2] * p(t)[4]).abs() < 1e-13);
}
