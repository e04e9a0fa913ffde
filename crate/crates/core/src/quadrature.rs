//! Gauss–Legendre quadrature on [-1, 1].

const MAX_NEWTON_ITERATIONS: usize = 100;

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for j in 1..n {
        let jf = j as f64;
        let p_next = ((2.0 * jf + 1.0) * x * p - jf * p_prev) / (jf + 1.0);
        p_prev = p;
        p = p_next;
    }
    let nf = n as f64;
    // P'_n = n (x P_n - P_{n-1}) / (x^2 - 1); nodes never sit on the endpoints.
    let dp = nf * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Nodes (strictly decreasing) and weights (summing to 2) of the `n`-point
/// Gauss–Legendre rule.
///
/// Roots are refined by Newton iteration from the Tricomi initial guess and
/// mirrored so the rule is exactly antisymmetric about zero.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..MAX_NEWTON_ITERATIONS {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = x;
        weights[i] = w;
        nodes[n - 1 - i] = -x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
