//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub type M2 = [[f64; 2]; 2];

fn mul(a: M2, b: M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Textbook Kalman filter for `x' = F x + noise`, `y = x₀ + noise`, with the
/// covariance update `P = (I − K H) P`. Returns `(predicted, filtered)` as
/// `(mean, covariance)` per step.
pub fn kalman_filter(
    f: M2,
    q: M2,
    r: f64,
    m0: [f64; 2],
    p0: M2,
    ys: &[f64],
) -> (Vec<([f64; 2], M2)>, Vec<([f64; 2], M2)>) {
    let mut predicted = Vec::new();
    let mut filtered: Vec<([f64; 2], M2)> = Vec::new();
    for &y in ys {
        let (m, p) = match filtered.last() {
            None => (m0, p0),
            Some(&(m, p)) => {
                let m = [
                    f[0][0] * m[0] + f[0][1] * m[1],
                    f[1][0] * m[0] + f[1][1] * m[1],
                ];
                let fp = mul(mul(f, p), transpose(f));
                let p = [
                    [fp[0][0] + q[0][0], fp[0][1] + q[0][1]],
                    [fp[1][0] + q[1][0], fp[1][1] + q[1][1]],
                ];
                (m, p)
            }
        };
        predicted.push((m, p));
        let s = p[0][0] + r;
        let k = [p[0][0] / s, p[1][0] / s];
        let innov = y - m[0];
        let mf = [m[0] + k[0] * innov, m[1] + k[1] * innov];
        let pf = [
            [(1.0 - k[0]) * p[0][0], (1.0 - k[0]) * p[0][1]],
            [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
        ];
        filtered.push((mf, pf));
    }
    (predicted, filtered)
}

/// Composite Simpson rule, written out independently of the crate.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    assert!(n >= 3 && n % 2 == 1);
    let h = (hi - lo) / (n - 1) as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n - 1 {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}
