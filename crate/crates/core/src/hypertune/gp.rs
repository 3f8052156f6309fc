//! Gaussian-process regression with a Matérn 5/2 ARD kernel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng;
use crate::tensor::{Result, TensorError};

const SQRT5: f64 = 2.236_067_977_499_79;

/// How the observation noise variance is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Noise {
    /// Fitted with the other hyperparameters, between the two bounds
    /// (variances in standardised units).
    Fitted { min: f64, max: f64 },
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GpConfig {
    pub noise: Noise,
    /// Starting points for the marginal-likelihood ascent.
    pub restarts: usize,
    pub iterations: usize,
    pub length_scale_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    /// Largest diagonal jitter tried before giving up on a factorisation.
    pub max_jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            noise: Noise::Fitted { min: 1e-6, max: 1.0 },
            restarts: 4,
            iterations: 80,
            length_scale_bounds: (0.01, 10.0),
            signal_bounds: (0.01, 100.0),
            max_jitter: 1e-3,
        }
    }
}

/// Kernel hyperparameters, in standardised output units.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub signal_var: f64,
    pub length_scales: Vec<f64>,
    pub noise_var: f64,
}

/// `signal_var * (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)` with
/// `r` the length-scaled distance.
pub fn matern52(a: &[f64], b: &[f64], h: &Hyper) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(&h.length_scales).map(|((x, y), l)| ((x - y) / l) * ((x - y) / l)).sum();
    let r = libm::sqrt(r2);
    h.signal_var * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * libm::exp(-SQRT5 * r)
}

/// In-place lower Cholesky factor of a row-major `n x n` matrix.
fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

fn solve_lower(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn solve_upper_t(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

fn cho_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    solve_lower(l, n, &mut x);
    solve_upper_t(l, n, &mut x);
    x
}

/// Factorises `K + jitter I`, escalating the jitter tenfold from a tiny
/// start until it succeeds or exceeds `max_jitter`.
fn factor(k: &[f64], n: usize, max_jitter: f64) -> Result<(Vec<f64>, f64)> {
    let mut jitter = 0.0;
    loop {
        let mut l = k.to_vec();
        for i in 0..n {
            l[i * n + i] += jitter;
        }
        if cholesky(&mut l, n) {
            return Ok((l, jitter));
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > max_jitter {
            return Err(TensorError::Config(format!("kernel matrix not positive definite even with jitter {max_jitter}")));
        }
    }
}

/// A fitted surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gp {
    pub hyper: Hyper,
    x: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
    /// Constant mean in standardised units.
    mean: f64,
    y_shift: f64,
    y_scale: f64,
    pub log_marginal_likelihood: f64,
}

struct Fit {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    mean: f64,
    lml: f64,
}

fn kernel_matrix(x: &[Vec<f64>], h: &Hyper) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = matern52(&x[i], &x[j], h);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += h.noise_var;
    }
    k
}

/// Marginal likelihood with the constant mean at its generalised
/// least-squares optimum.
fn evaluate(x: &[Vec<f64>], y: &[f64], h: &Hyper, max_jitter: f64) -> Result<Fit> {
    let n = x.len();
    let k = kernel_matrix(x, h);
    let (chol, _) = factor(&k, n, max_jitter)?;
    let ones = vec![1.0; n];
    let k_inv_1 = cho_solve(&chol, n, &ones);
    let k_inv_y = cho_solve(&chol, n, y);
    let mean = k_inv_y.iter().sum::<f64>() / k_inv_1.iter().sum::<f64>();
    let centred: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let alpha = cho_solve(&chol, n, &centred);
    let fit_term: f64 = centred.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let log_det: f64 = (0..n).map(|i| libm::log(chol[i * n + i])).sum();
    let lml = -0.5 * fit_term - log_det - 0.5 * n as f64 * libm::log(core::f64::consts::TAU);
    Ok(Fit { chol, alpha, mean, lml })
}

/// Gradient of the log marginal likelihood with respect to
/// `[log signal_var, log length_scale.., log noise_var]`.
fn lml_gradient(x: &[Vec<f64>], h: &Hyper, fit: &Fit) -> Vec<f64> {
    let n = x.len();
    let d = h.length_scales.len();
    // W = alpha alpha^T - K^-1
    let mut k_inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = cho_solve(&fit.chol, n, &e);
        for i in 0..n {
            k_inv[i * n + j] = col[i];
        }
    }
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let w = fit.alpha[i] * fit.alpha[j] - k_inv[i * n + j];
            let r2: f64 = (0..d)
                .map(|q| {
                    let t = (x[i][q] - x[j][q]) / h.length_scales[q];
                    t * t
                })
                .sum();
            let r = libm::sqrt(r2);
            let e = libm::exp(-SQRT5 * r);
            let kf = h.signal_var * (1.0 + SQRT5 * r + 5.0 * r2 / 3.0) * e;
            grad[0] += 0.5 * w * kf;
            let common = h.signal_var * 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
            for q in 0..d {
                let dq = (x[i][q] - x[j][q]) / h.length_scales[q];
                grad[1 + q] += 0.5 * w * common * dq * dq;
            }
            if i == j {
                grad[d + 1] += 0.5 * w * h.noise_var;
            }
        }
    }
    grad
}

fn clamp_log(v: f64, (lo, hi): (f64, f64)) -> f64 {
    v.clamp(libm::log(lo), libm::log(hi))
}

impl Gp {
    /// Fits hyperparameters by maximising the marginal likelihood with
    /// multi-start gradient ascent in log space. Outputs are standardised
    /// before fitting.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &GpConfig, seed: u64) -> Result<Gp> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(TensorError::Config(format!("GP needs matching non-empty data, got {n} points and {} values", y.len())));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|p| p.len() != d) || y.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::Config("GP inputs must share one dimension and outputs must be finite".into()));
        }
        let y_shift = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_shift) * (v - y_shift)).sum::<f64>() / n as f64;
        let y_scale = if var > 1e-300 { libm::sqrt(var) } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_shift) / y_scale).collect();

        let (noise_lo, noise_hi, fit_noise) = match cfg.noise {
            Noise::Fitted { min, max } => (min, max, true),
            Noise::Fixed(v) => (v, v, false),
        };
        let to_hyper = |theta: &[f64]| Hyper {
            signal_var: libm::exp(theta[0]),
            length_scales: theta[1..=d].iter().map(|&t| libm::exp(t)).collect(),
            noise_var: libm::exp(theta[d + 1]),
        };
        let project = |theta: &mut [f64]| {
            theta[0] = clamp_log(theta[0], cfg.signal_bounds);
            for t in &mut theta[1..=d] {
                *t = clamp_log(*t, cfg.length_scale_bounds);
            }
            theta[d + 1] = if fit_noise { clamp_log(theta[d + 1], (noise_lo, noise_hi)) } else { libm::log(noise_lo.max(1e-300)) };
        };

        let mut rng = rng::derive(seed, 0x69);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in 0..cfg.restarts.max(1) {
            let mut theta = vec![0.0; d + 2];
            if start == 0 {
                theta[1..=d].fill(libm::log(0.3));
                theta[d + 1] = libm::log((noise_lo * 10.0).min(noise_hi).max(1e-300));
            } else {
                theta[0] = rng::uniform_in(&mut rng, -1.0, 1.0);
                for t in &mut theta[1..=d] {
                    *t = rng::uniform_in(&mut rng, libm::log(0.05), libm::log(2.0));
                }
                theta[d + 1] = rng::uniform_in(&mut rng, libm::log(noise_lo.max(1e-300)), libm::log(noise_hi.max(1e-300)));
            }
            project(&mut theta);
            // Adam ascent on the log marginal likelihood.
            let (mut m, mut v) = (vec![0.0; d + 2], vec![0.0; d + 2]);
            let mut current = match evaluate(x, &ys, &to_hyper(&theta), cfg.max_jitter) {
                Ok(f) => (theta.clone(), f),
                Err(_) => continue,
            };
            for it in 1..=cfg.iterations {
                let g = lml_gradient(x, &to_hyper(&current.0), &current.1);
                let mut next = current.0.clone();
                for q in 0..d + 2 {
                    m[q] = 0.9 * m[q] + 0.1 * g[q];
                    v[q] = 0.999 * v[q] + 0.001 * g[q] * g[q];
                    let mh = m[q] / (1.0 - libm::pow(0.9, it as f64));
                    let vh = v[q] / (1.0 - libm::pow(0.999, it as f64));
                    next[q] += 0.1 * mh / (libm::sqrt(vh) + 1e-8);
                }
                project(&mut next);
                match evaluate(x, &ys, &to_hyper(&next), cfg.max_jitter) {
                    Ok(f) if f.lml.is_finite() => current = (next, f),
                    _ => break,
                }
            }
            if best.as_ref().is_none_or(|(_, l)| current.1.lml > *l) {
                best = Some((current.0, current.1.lml));
            }
        }
        let (theta, _) = best.ok_or_else(|| TensorError::Config("GP fit failed from every start".into()))?;
        let hyper = to_hyper(&theta);
        let fit = evaluate(x, &ys, &hyper, cfg.max_jitter)?;
        Ok(Gp {
            hyper,
            x: x.to_vec(),
            chol: fit.chol,
            alpha: fit.alpha,
            mean: fit.mean,
            y_shift,
            y_scale,
            log_marginal_likelihood: fit.lml,
        })
    }

    /// Fits with fixed hyperparameters.
    pub fn with_hyper(x: &[Vec<f64>], y: &[f64], hyper: Hyper, max_jitter: f64) -> Result<Gp> {
        let n = x.len();
        if n == 0 || y.len() != n {
            return Err(TensorError::Config("GP needs matching non-empty data".into()));
        }
        let fit = evaluate(x, y, &hyper, max_jitter)?;
        Ok(Gp { hyper, x: x.to_vec(), chol: fit.chol, alpha: fit.alpha, mean: fit.mean, y_shift: 0.0, y_scale: 1.0, log_marginal_likelihood: fit.lml })
    }

    /// Posterior mean and latent variance (noise excluded) at `p`, in the
    /// units of the observations.
    pub fn predict(&self, p: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let mut ks: Vec<f64> = self.x.iter().map(|xi| matern52(xi, p, &self.hyper)).collect();
        let mean = self.mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        solve_lower(&self.chol, n, &mut ks);
        let var = (self.hyper.signal_var - ks.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        (self.y_shift + self.y_scale * mean, self.y_scale * self.y_scale * var)
    }

    pub fn noise_variance(&self) -> f64 {
        self.hyper.noise_var * self.y_scale * self.y_scale
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}
