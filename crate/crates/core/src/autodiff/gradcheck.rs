//! Central-difference verification of tape gradients, always in `f64`.

use alloc::vec::Vec;

use super::{ParamId, ParamStore, Tape, Var};
use crate::tensor::{Result, Tensor};

/// Outcome of [`finite_diff_check`] for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Probes whose one-sided differences disagree at every step tried
    /// (non-differentiable points such as relu6 clamps); they are left out
    /// of the maximum.
    pub excluded: usize,
    pub tol: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    fn empty(tol: f64, capacity: usize) -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            excluded: 0,
            tol,
            analytic: Vec::with_capacity(capacity),
            numeric: Vec::with_capacity(capacity),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    /// Probes one coordinate or direction. `at(step)` returns `f` at
    /// `-step` and `+step`. Where the one-sided differences disagree by more
    /// than `kink_tol` the step shrinks tenfold, up to `retries` times; a
    /// probe that still disagrees straddles a kink and is excluded.
    fn probe(&mut self, index: usize, analytic: f64, f0: f64, h: f64, opts: &GradCheckOptions, mut at: impl FnMut(f64) -> Result<(f64, f64)>) -> Result<()> {
        let mut step = h;
        for attempt in 0..=opts.retries {
            let (fm, fp) = at(step)?;
            let fwd = (fp - f0) / step;
            let bwd = (f0 - fm) / step;
            if (fwd - bwd).abs() > opts.kink_tol * fwd.abs().max(bwd.abs()).max(opts.floor) {
                if attempt == opts.retries {
                    self.excluded += 1;
                    return Ok(());
                }
                step /= 10.0;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * step);
            self.analytic.push(analytic);
            self.numeric.push(numeric);
            self.checked += 1;
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
            if self.worst_index.is_none() || rel > self.max_rel_error {
                self.max_rel_error = rel;
                self.worst_index = Some(index);
            }
            break;
        }
        Ok(())
    }
}

/// Knobs for [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Base step, scaled by `max(1, |p|)` per coordinate.
    pub h: f64,
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Relative disagreement between forward and backward one-sided
    /// differences above which the step is retried smaller. Across a kink
    /// the central difference is off by about half this gap.
    pub kink_tol: f64,
    pub retries: usize,
    /// Coordinates to probe; `None` checks every coordinate.
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-6, tol: 1e-4, floor: 1e-3, kink_tol: 1e-4, retries: 2, coords: None }
    }
}

/// Compares `backward()` against central differences
/// `(f(p + h) - f(p - h)) / 2h` for each probed coordinate of `param`.
///
/// `f` records a scalar loss on the provided tape, reading parameters from
/// the store it is given.
pub fn finite_diff_check<F>(store: &mut ParamStore<f64>, param: ParamId, opts: &GradCheckOptions, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, f: &mut F| -> Result<(f64, Tape<f64>, Var)> {
        let mut tape = Tape::new();
        let loss = f(store, &mut tape)?;
        let v = tape.value(loss).data()[0];
        Ok((v, tape, loss))
    };
    let (f0, tape, loss) = eval(store, &mut f)?;
    let grads = tape.backward(loss)?;
    let analytic_full = grads.param_or_zeros(param, store);
    drop(tape);

    let n = store.value(param).len();
    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.iter().copied().filter(|&i| i < n).collect(),
        None => (0..n).collect(),
    };

    let mut report = GradCheckReport::empty(opts.tol, coords.len());
    for &i in &coords {
        let p = store.value(param).data()[i];
        let h = opts.h * p.abs().max(1.0);
        report.probe(i, analytic_full.data()[i], f0, h, opts, |step| {
            store.get_mut(param).value.data_mut()[i] = p + step;
            let fp = eval(store, &mut f);
            store.get_mut(param).value.data_mut()[i] = p - step;
            let fm = eval(store, &mut f);
            store.get_mut(param).value.data_mut()[i] = p;
            Ok((fm?.0, fp?.0))
        })?;
    }
    Ok(report)
}

/// Checks a precomputed gradient `grad` of `f` with respect to `param`
/// along each of `directions`: `grad . d` against the central difference
/// of `f` along `d`, with step `h` scaled by the largest parameter
/// magnitude. `f0` is `f` at the current store. Two evaluations per
/// direction regardless of the parameter's size.
pub fn directional_check<F>(
    store: &mut ParamStore<f64>,
    param: ParamId,
    grad: &Tensor<f64>,
    directions: &[Tensor<f64>],
    f0: f64,
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64>,
{
    let base = store.value(param).clone();
    let h = opts.h * base.max_abs().max(1.0);
    let mut report = GradCheckReport::empty(opts.tol, directions.len());
    for (k, d) in directions.iter().enumerate() {
        grad.same_shape(d)?;
        let analytic: f64 = grad.data().iter().zip(d.data()).map(|(g, d)| g * d).sum();
        report.probe(k, analytic, f0, h, opts, |step| {
            store.get_mut(param).value = base.add(&d.scale(step))?;
            let fp = f(store);
            store.get_mut(param).value = base.sub(&d.scale(step))?;
            let fm = f(store);
            store.get_mut(param).value = base.clone();
            Ok((fm?, fp?))
        })?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_second_order() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap(), true).unwrap();
        let opts = GradCheckOptions { h: 1e-5, tol: 1e-8, ..Default::default() };
        let r = finite_diff_check(&mut store, p, &opts, |s, tape| {
            let x = tape.param(s, p);
            let sq = tape.mul(x, x)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn linear_matches_to_machine_precision() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[4], &[0.5, -0.25, 1.0, 3.0]).unwrap(), true).unwrap();
        let r = finite_diff_check(&mut store, p, &GradCheckOptions::default(), |s, tape| {
            let x = tape.param(s, p);
            let y = tape.scale(x, 2.5);
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu6_kink_is_excluded() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::from_f64(&[3], &[0.0, 6.0, 2.0]).unwrap(), true).unwrap();
        let r = finite_diff_check(&mut store, p, &GradCheckOptions::default(), |s, tape| {
            let x = tape.param(s, p);
            let y = tape.relu6(x);
            Ok(tape.sum(y))
        })
        .unwrap();
        assert_eq!(r.excluded, 2);
        assert_eq!(r.checked, 1);
        assert!(r.passed());
    }
}
