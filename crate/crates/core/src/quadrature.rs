//! Gauss–Legendre rules, used for deterministic expectations over the
//! uniform amplitude distribution.

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// the three-term recurrence.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=k {
                let j = j as f64;
                let p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
                p0 = p1;
                p1 = p2;
            }
            let pk = if k == 0 { 1.0 } else if k == 1 { x } else { p1 };
            let pkm1 = if k == 1 { 1.0 } else { p0 };
            dp = k as f64 * (x * pk - pkm1) / (x * x - 1.0);
            let step = pk / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}


/// Nodes and weights of a `k`-point rule for `E[f(ν)]`, `ν ~ U(low, high)`;
/// the weights sum to one.
pub fn uniform_expectation_rule(k: usize, low: f64, high: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(k);
    let mid = 0.5 * (low + high);
    let half = 0.5 * (high - low);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}
