//! Straight-line reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

/// One routing problem: `u[i][d]` inputs and per-capsule weights
/// `w[i][j][d][e]`.
#[derive(Clone, Debug)]
pub struct RoutingCase {
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Coefficients and outputs after every iteration.
pub struct RoutingTrace {
    pub c: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<Vec<f64>>>,
}

pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    let n = n2.sqrt();
    s.iter().map(|x| n2 / (1.0 + n2) * x / (n + 1e-7)).collect()
}

pub fn route(case: &RoutingCase, iterations: usize) -> RoutingTrace {
    let ni = case.u.len();
    let nj = case.w[0].len();
    let dout = case.w[0][0][0].len();
    let mut u_hat = vec![vec![vec![0.0; dout]; nj]; ni];
    for i in 0..ni {
        for j in 0..nj {
            for (d, &ud) in case.u[i].iter().enumerate() {
                for e in 0..dout {
                    u_hat[i][j][e] += case.w[i][j][d][e] * ud;
                }
            }
        }
    }
    let mut b = vec![vec![0.0; nj]; ni];
    let mut trace = RoutingTrace { c: vec![], v: vec![] };
    for it in 0..iterations {
        let mut c = vec![vec![0.0; nj]; ni];
        for i in 0..ni {
            let z: f64 = b[i].iter().map(|x: &f64| x.exp()).sum();
            for j in 0..nj {
                c[i][j] = b[i][j].exp() / z;
            }
        }
        let mut v = vec![];
        for j in 0..nj {
            let mut s = vec![0.0; dout];
            for i in 0..ni {
                for e in 0..dout {
                    s[e] += c[i][j] * u_hat[i][j][e];
                }
            }
            v.push(squash(&s));
        }
        if it + 1 < iterations {
            for i in 0..ni {
                for j in 0..nj {
                    b[i][j] += (0..dout).map(|e| u_hat[i][j][e] * v[j][e]).sum::<f64>();
                }
            }
        }
        trace.c.push(c);
        trace.v.push(v);
    }
    trace
}

/// `(a0 / 2)(cos(pi ((t - 1) mod ceil(T / C)) / ceil(T / C)) + 1)`.
pub fn cosine(a0: f64, t: usize, epochs: usize, cycles: usize) -> f64 {
    let len = epochs.div_ceil(cycles);
    a0 / 2.0 * ((std::f64::consts::PI * ((t - 1) % len) as f64 / len as f64).cos() + 1.0)
}

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
pub fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut good, mut pairs) = (0.0, 0usize);
    for (a, &pa) in scores.iter().zip(positive) {
        for (b, &pb) in scores.iter().zip(positive) {
            if pa && !pb {
                pairs += 1;
                good += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0).then(|| good / pairs as f64)
}

pub fn logcosh(d: f64) -> f64 {
    d.cosh().ln()
}

/// Margin loss of one sample, summed over classes.
pub fn margin(lengths: &[f64], target: usize) -> f64 {
    lengths
        .iter()
        .enumerate()
        .map(|(k, &l)| if k == target { (0.9 - l).max(0.0).powi(2) } else { 0.5 * (l - 0.1).max(0.0).powi(2) })
        .sum()
}
