//! Quadrature rules for the velocity mesh.
//!
//! Besides plain Gauss-Legendre, this provides Gauss rules orthogonal with
//! respect to an arbitrary positive weight on a finite interval (discretized
//! Stieltjes recurrence + Golub-Welsch). The velocity grid uses the
//! Maxwellian-weighted variants, which integrate polynomial-times-Gaussian
//! profiles to truncation accuracy at small node counts.

use nalgebra::DMatrix;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
///
/// Nodes are returned in increasing order. Newton iteration on the Legendre
/// polynomial from the Chebyshev-like initial guess converges to machine
/// precision in a handful of steps for any practical `n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_with_derivative(n, x);
                x -= p2 / d2;
                dp = legendre_with_derivative(n, x).1;
                break;
            }
        }
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Nodes and weights of the `n`-point Gauss rule on [a, b] for the measure
/// `weight(x) dx`: sum_i W_i g(x_i) = int_a^b g(x) weight(x) dx exactly for
/// polynomials g of degree <= 2n - 1.
///
/// The orthogonal-polynomial recurrence is built by the Stieltjes procedure
/// on a dense composite Gauss-Legendre discretization of the measure, then
/// nodes and weights come from the eigen-decomposition of the Jacobi matrix.
/// With `symmetric` set, the weight is taken as even about the midpoint of
/// [a, b] and the recurrence diagonal is pinned to the midpoint, which makes
/// the returned nodes exactly sign-symmetric pairs.
pub fn gauss_weighted(
    n: usize,
    a: f64,
    b: f64,
    weight: impl Fn(f64) -> f64,
    symmetric: bool,
) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && b > a);
    // dense discretization of the measure
    const PANELS: usize = 80;
    const PANEL_PTS: usize = 20;
    let (xg, wg) = gauss_legendre(PANEL_PTS);
    let mut xs = Vec::with_capacity(PANELS * PANEL_PTS);
    let mut ws = Vec::with_capacity(PANELS * PANEL_PTS);
    for p in 0..PANELS {
        let lo = a + (b - a) * p as f64 / PANELS as f64;
        let hi = a + (b - a) * (p + 1) as f64 / PANELS as f64;
        for i in 0..PANEL_PTS {
            let x = 0.5 * (hi - lo) * xg[i] + 0.5 * (hi + lo);
            xs.push(x);
            ws.push(0.5 * (hi - lo) * wg[i] * weight(x));
        }
    }
    let mid = 0.5 * (a + b);

    // Stieltjes recurrence p_{k+1} = (x - alpha_k) p_k - beta_k p_{k-1}
    let m = xs.len();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    let mut p_prev = vec![0.0; m];
    let mut p_cur = vec![1.0; m];
    beta[0] = ws.iter().sum();
    let mut norm_prev = 0.0;
    for k in 0..n {
        let mut nk = 0.0;
        let mut xk = 0.0;
        for i in 0..m {
            let wp2 = ws[i] * p_cur[i] * p_cur[i];
            nk += wp2;
            xk += wp2 * xs[i];
        }
        alpha[k] = if symmetric { mid } else { xk / nk };
        if k + 1 < n {
            let bk = if k > 0 { nk / norm_prev } else { 0.0 };
            if k > 0 {
                beta[k] = bk;
            }
            for i in 0..m {
                let next = (xs[i] - alpha[k]) * p_cur[i] - bk * p_prev[i];
                p_prev[i] = p_cur[i];
                p_cur[i] = next;
            }
            norm_prev = nk;
        }
    }
    // beta[k] for the last step
    if n > 1 {
        let nk: f64 = ws
            .iter()
            .zip(&p_cur)
            .map(|(w, p)| w * p * p)
            .sum();
        beta[n - 1] = nk / norm_prev;
    }

    // Golub-Welsch on the symmetric tridiagonal Jacobi matrix
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        jac[(k, k)] = alpha[k];
        if k + 1 < n {
            let off = beta[k + 1].sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let eig = jac.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &j in &order {
        nodes.push(eig.eigenvalues[j]);
        let q0 = eig.eigenvectors[(0, j)];
        weights.push(beta[0] * q0 * q0);
    }
    if symmetric {
        // make node pairs exactly symmetric about the midpoint
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let half = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = mid - half;
            nodes[j] = mid + half;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = mid;
        }
    }
    (nodes, weights)
}

/// Value and derivative of the Legendre polynomial P_n at `x` via the
/// three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
