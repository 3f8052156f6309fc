//! Bayesian optimisation of training hyperparameters: a Gaussian-process
//! surrogate, expected improvement, and a sequential search loop.
//!
//! Points live in the unit cube; a [`SearchSpace`] maps them to parameter
//! values. Objectives are maximised.

mod gp;

pub use gp::{matern52, Gp, GpConfig, Hyper, Noise};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::tensor::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dimension {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
    /// Rounded to the nearest integer when decoded.
    pub integer: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    /// Learning rate in `[1e-5, 1e-1]` on a log scale and cycle length in
    /// `[10, 100]` epochs.
    pub fn lr_and_cycle() -> Self {
        SearchSpace {
            dims: vec![
                Dimension { name: "lr".into(), low: 1e-5, high: 1e-1, scale: Scale::Log10, integer: false },
                Dimension { name: "cycle_len".into(), low: 10.0, high: 100.0, scale: Scale::Linear, integer: true },
            ],
        }
    }

    pub fn unit(dims: usize) -> Self {
        SearchSpace {
            dims: (0..dims).map(|i| Dimension { name: format!("x{i}"), low: 0.0, high: 1.0, scale: Scale::Linear, integer: false }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.dims {
            let ok = d.low < d.high && d.low.is_finite() && d.high.is_finite() && (d.scale == Scale::Linear || d.low > 0.0);
            if !ok {
                return Err(TensorError::Config(format!("invalid bounds for `{}`: [{}, {}]", d.name, d.low, d.high)));
            }
        }
        if self.dims.is_empty() {
            return Err(TensorError::Config("search space has no dimensions".into()));
        }
        Ok(())
    }

    /// Unit-cube point to parameter values.
    pub fn decode(&self, point: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(point)
            .map(|(d, &u)| {
                let u = u.clamp(0.0, 1.0);
                let v = match d.scale {
                    Scale::Linear => d.low + u * (d.high - d.low),
                    Scale::Log10 => libm::pow(10.0, libm::log10(d.low) + u * (libm::log10(d.high) - libm::log10(d.low))),
                };
                if d.integer {
                    libm::round(v)
                } else {
                    v
                }
            })
            .collect()
    }

    /// Parameter values to a unit-cube point.
    pub fn encode(&self, values: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(values)
            .map(|(d, &v)| {
                let u = match d.scale {
                    Scale::Linear => (v - d.low) / (d.high - d.low),
                    Scale::Log10 => (libm::log10(v) - libm::log10(d.low)) / (libm::log10(d.high) - libm::log10(d.low)),
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// One objective evaluation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub point: Vec<f64>,
    pub params: Vec<f64>,
    pub value: f64,
    pub seed: u64,
    pub wall_time: f64,
    /// Set when the objective failed; `value` is then a stand-in.
    pub failed: bool,
    pub error: Option<String>,
}

/// What an objective reports for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub value: f64,
    /// Seconds spent, as measured by the objective.
    pub wall_time: f64,
}

pub trait Objective {
    fn evaluate(&mut self, params: &[f64], seed: u64) -> core::result::Result<Outcome, String>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], u64) -> core::result::Result<f64, String>,
{
    fn evaluate(&mut self, params: &[f64], seed: u64) -> core::result::Result<Outcome, String> {
        self(params, seed).map(|value| Outcome { value, wall_time: 0.0 })
    }
}

fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(core::f64::consts::TAU)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / core::f64::consts::SQRT_2))
}

/// Expected improvement over `best` for a Gaussian with the given mean and
/// variance; zero where the variance vanishes.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sd = libm::sqrt(var.max(0.0));
    if sd < 1e-12 {
        return 0.0;
    }
    let z = (mean - best) / sd;
    ((mean - best) * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= b;
        r += f * (i % u64::from(base)) as f64;
        i /= u64::from(base);
    }
    r
}

/// Halton points `start..start + n` in `dims` dimensions, each shifted by a
/// random offset modulo 1 when `rng` is given.
pub fn halton(n: usize, dims: usize, start: u64, rng: Option<&mut Rng>) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = match rng {
        Some(r) => (0..dims).map(|_| rng::uniform(r)).collect(),
        None => vec![0.0; dims],
    };
    (0..n as u64)
        .map(|i| (0..dims).map(|d| (radical_inverse(start + i + 1, PRIMES[d % PRIMES.len()]) + shift[d]) % 1.0).collect())
        .collect()
}

/// Settings for [`suggest_next`] and [`optimize`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchConfig {
    pub gp: GpConfig,
    pub grid_points: usize,
    pub initial_points: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { gp: GpConfig::default(), grid_points: 2048, initial_points: 3 }
    }
}

/// The unit-cube point maximising expected improvement: best of a shifted
/// Halton grid, then a compass search around it. When EI vanishes
/// everywhere, the point of largest posterior variance.
pub fn suggest_next(gp: &Gp, best: f64, dims: usize, cfg: &SearchConfig, seed: u64) -> Vec<f64> {
    let mut rng = rng::derive(seed, 0xe1);
    let grid = halton(cfg.grid_points.max(1), dims, 0, Some(&mut rng));
    let scored: Vec<(f64, f64)> = grid
        .iter()
        .map(|p| {
            let (m, v) = gp.predict(p);
            (expected_improvement(m, v, best), v)
        })
        .collect();
    let argmax = |key: &dyn Fn(&(f64, f64)) -> f64| {
        let mut bi = 0;
        for (i, s) in scored.iter().enumerate() {
            if key(s) > key(&scored[bi]) {
                bi = i;
            }
        }
        bi
    };
    let i = argmax(&|s| s.0);
    if scored[i].0 <= 0.0 {
        return grid[argmax(&|s| s.1)].clone();
    }
    let ei = |p: &[f64]| {
        let (m, v) = gp.predict(p);
        expected_improvement(m, v, best)
    };
    let mut point = grid[i].clone();
    let mut value = scored[i].0;
    let mut step = 0.5 / libm::pow(cfg.grid_points.max(1) as f64, 1.0 / dims as f64);
    while step > 1e-6 {
        let mut improved = false;
        for d in 0..dims {
            for sign in [1.0, -1.0] {
                let mut cand = point.clone();
                cand[d] = (cand[d] + sign * step).clamp(0.0, 1.0);
                let v = ei(&cand);
                if v > value {
                    point = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    point
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: Observation,
    pub trace: Vec<Observation>,
}

fn best_index(trace: &[Observation]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in trace.iter().enumerate() {
        if !o.failed && best.is_none_or(|b| o.value > trace[b].value) {
            best = Some(i);
        }
    }
    best.or(if trace.is_empty() { None } else { Some(0) })
}

/// Runs the search until the trace holds `budget` observations, continuing
/// from `prior` when resuming. The first `initial_points` come from a
/// seeded Halton design, the rest from expected improvement. A failed
/// evaluation is recorded with the worst value seen so far (0 if none) and
/// the loop continues.
pub fn optimize(
    objective: &mut dyn Objective,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    cfg: &SearchConfig,
    prior: &[Observation],
    on_observation: &mut dyn FnMut(&Observation),
) -> Result<SearchResult> {
    space.validate()?;
    if budget < cfg.initial_points.max(1) {
        return Err(TensorError::Config(format!("budget {budget} is below the {} initial points", cfg.initial_points)));
    }
    let dims = space.dims.len();
    let mut trace: Vec<Observation> = prior.to_vec();
    if trace.iter().any(|o| o.point.len() != dims) {
        return Err(TensorError::Config("resumed trace does not match the search space".into()));
    }
    let mut design_rng = rng::derive(seed, 0xd5);
    let design = halton(cfg.initial_points, dims, 0, Some(&mut design_rng));
    while trace.len() < budget {
        let n = trace.len();
        let eval_seed = rng::next_u64(&mut rng::derive(seed, 1000 + n as u64));
        let point = if n < cfg.initial_points {
            design[n].clone()
        } else {
            let x: Vec<Vec<f64>> = trace.iter().map(|o| o.point.clone()).collect();
            let y: Vec<f64> = trace.iter().map(|o| o.value).collect();
            let gp = Gp::fit(&x, &y, &cfg.gp, seed.wrapping_add(n as u64))?;
            let best = trace[best_index(&trace).expect("non-empty")].value;
            suggest_next(&gp, best, dims, cfg, seed.wrapping_add(n as u64))
        };
        let params = space.decode(&point);
        let obs = match objective.evaluate(&params, eval_seed) {
            Ok(out) if out.value.is_finite() => {
                Observation { point, params, value: out.value, seed: eval_seed, wall_time: out.wall_time, failed: false, error: None }
            }
            other => {
                let error = match other {
                    Ok(out) => format!("objective returned {}", out.value),
                    Err(e) => e,
                };
                let worst = trace.iter().filter(|o| !o.failed).map(|o| o.value).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.min(v))));
                Observation { point, params, value: worst.unwrap_or(0.0), seed: eval_seed, wall_time: 0.0, failed: true, error: Some(error) }
            }
        };
        on_observation(&obs);
        trace.push(obs);
    }
    let best = trace[best_index(&trace).expect("budget >= 1")].clone();
    Ok(SearchResult { best, trace })
}

/// Best value seen after each observation.
pub fn best_so_far(trace: &[Observation]) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    trace
        .iter()
        .map(|o| {
            if !o.failed && o.value > best {
                best = o.value;
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(p: &[f64], _: u64) -> core::result::Result<f64, String> {
        Ok(-(p[0] - 0.3) * (p[0] - 0.3))
    }

    #[test]
    fn space_round_trips() {
        let s = SearchSpace::lr_and_cycle();
        let v = s.decode(&[0.5, 0.5]);
        assert!((v[0] - 1e-3).abs() < 1e-15);
        assert_eq!(v[1], 55.0);
        let u = s.encode(&[1e-4, 10.0]);
        assert!((u[0] - 0.25).abs() < 1e-12 && u[1] == 0.0);
    }

    #[test]
    fn halton_first_points() {
        let h = halton(3, 2, 0, None);
        assert_eq!(h, vec![vec![0.5, 1.0 / 3.0], vec![0.25, 2.0 / 3.0], vec![0.75, 1.0 / 9.0]]);
    }

    #[test]
    fn ei_degenerate_cases() {
        assert_eq!(expected_improvement(1.0, 0.0, 0.5), 0.0);
        assert!((expected_improvement(0.0, 1.0, 0.0) - normal_pdf(0.0)).abs() < 1e-15);
    }

    #[test]
    fn budget_three_is_the_design() {
        let r = optimize(&mut quad, &SearchSpace::unit(1), 3, 4, &SearchConfig::default(), &[], &mut |_| {}).unwrap();
        assert_eq!(r.trace.len(), 3);
        let best = r.trace.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best.value, best);
    }

    #[test]
    fn failures_are_recorded_and_search_continues() {
        let mut calls = 0;
        let mut flaky = |p: &[f64], _: u64| -> core::result::Result<f64, String> {
            calls += 1;
            if calls == 2 {
                Err("boom".into())
            } else {
                Ok(p[0])
            }
        };
        let r = optimize(&mut flaky, &SearchSpace::unit(1), 6, 0, &SearchConfig::default(), &[], &mut |_| {}).unwrap();
        assert_eq!(r.trace.len(), 6);
        assert!(r.trace[1].failed);
        assert_eq!(r.trace[1].value, r.trace[0].value);
        assert!(!r.best.failed);
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let cfg = SearchConfig::default();
        let full = optimize(&mut quad, &SearchSpace::unit(1), 6, 11, &cfg, &[], &mut |_| {}).unwrap();
        let half = optimize(&mut quad, &SearchSpace::unit(1), 4, 11, &cfg, &[], &mut |_| {}).unwrap();
        let resumed = optimize(&mut quad, &SearchSpace::unit(1), 6, 11, &cfg, &half.trace, &mut |_| {}).unwrap();
        assert_eq!(resumed.trace, full.trace);
    }
}
