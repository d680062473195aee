use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, d) = legendre(n, 0.0);
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// Integrates a smooth function over [a, b] with composite Gauss-Legendre
/// panels.
pub fn integrate_panels(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let mut acc = 0.0;
    let width = (b - a) / panels as f64;
    for p in 0..panels {
        let pa = a + p as f64 * width;
        let (xs, ws) = gauss_legendre_on(order, pa, pa + width);
        for (x, w) in xs.iter().zip(&ws) {
            acc += w * f(*x);
        }
    }
    acc
}

/// Integrates sampled values over their node range with local quadratic fits
/// (composite Simpson-like rule on non-uniform nodes). The samples must be on
/// strictly increasing nodes.
pub fn integrate_samples(t: &[f64], g: &[f64]) -> Result<f64> {
    if t.len() != g.len() || t.len() < 2 {
        return Err(Error::Quadrature(format!(
            "integrate_samples needs matching sample arrays of length >= 2, got {} and {}",
            t.len(),
            g.len()
        )));
    }
    let n = t.len();
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 < n {
        acc += quadratic_panel(t[i], t[i + 1], t[i + 2], g[i], g[i + 1], g[i + 2]);
        i += 2;
    }
    if i + 1 < n {
        // Odd tail: integrate the last interval under the quadratic through the
        // final three nodes.
        if n >= 3 {
            acc += quadratic_tail(
                t[n - 3],
                t[n - 2],
                t[n - 1],
                g[n - 3],
                g[n - 2],
                g[n - 1],
            );
        } else {
            acc += 0.5 * (t[1] - t[0]) * (g[0] + g[1]);
        }
    }
    Ok(acc)
}

/// Integral over [t0, t2] of the quadratic interpolant through three points.
fn quadratic_panel(t0: f64, t1: f64, t2: f64, g0: f64, g1: f64, g2: f64) -> f64 {
    quadratic_integral(t0, t1, t2, g0, g1, g2, t0, t2)
}

/// Integral over [t1, t2] of the quadratic interpolant through three points.
fn quadratic_tail(t0: f64, t1: f64, t2: f64, g0: f64, g1: f64, g2: f64) -> f64 {
    quadratic_integral(t0, t1, t2, g0, g1, g2, t1, t2)
}

fn quadratic_integral(
    t0: f64,
    t1: f64,
    t2: f64,
    g0: f64,
    g1: f64,
    g2: f64,
    a: f64,
    b: f64,
) -> f64 {
    // Lagrange basis integrated exactly.
    let term = |tj: f64, ta: f64, tb: f64, gj: f64| {
        let denom = (tj - ta) * (tj - tb);
        let prim = |x: f64| x * x * x / 3.0 - 0.5 * (ta + tb) * x * x + ta * tb * x;
        gj * (prim(b) - prim(a)) / denom
    };
    term(t0, t1, t2, g0) + term(t1, t0, t2, g1) + term(t2, t0, t1, g2)
}

/// Trapezoid rule on sampled values.
pub fn trapezoid(t: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..t.len() {
        acc += 0.5 * (t[i] - t[i - 1]) * (g[i] + g[i - 1]);
    }
    acc
}
