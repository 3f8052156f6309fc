//! Nadam: Adam with a Nesterov-style look-ahead on the first moment.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{ParamId, ParamStore};
use crate::tensor::{Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NadamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

impl NadamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(TensorError::Config(format!("invalid Nadam constants {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates for every trainable parameter of one store.
#[derive(Clone, Debug, PartialEq)]
pub struct NadamState<T> {
    pub config: NadamConfig,
    pub step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Real> NadamState<T> {
    pub fn new(store: &ParamStore<T>, config: NadamConfig) -> Result<Self> {
        config.validate()?;
        let moments = store
            .iter()
            .map(|(_, p)| p.trainable.then(|| (p.value.zeros_like(), p.value.zeros_like())))
            .collect();
        Ok(NadamState { config, step: 0, moments })
    }

    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(id.index())?.as_ref().map(|(m, v)| (m, v))
    }

    /// One update with learning rate `lr`; `grads` yields the gradient of
    /// each trainable parameter. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, mut grads: impl FnMut(ParamId) -> Tensor<T>) -> Result<()> {
        let ids: Vec<ParamId> = store.ids().filter(|&id| self.moments.get(id.index()).is_some_and(Option::is_some)).collect();
        let mut all = Vec::with_capacity(ids.len());
        for &id in &ids {
            let g = grads(id);
            let p = store.get(id);
            if g.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch { lhs: p.value.shape().to_vec(), rhs: g.shape().to_vec() });
            }
            if !g.all_finite() {
                return Err(TensorError::NonFinite(format!("gradient for parameter `{}`", p.name)));
            }
            all.push(g);
        }
        self.step += 1;
        let t = self.step as f64;
        let NadamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (nb1, nb2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (inv_c1, inv_c2) = (T::of(1.0 / c1), T::of(1.0 / c2));
        let (lr, eps) = (T::of(lr), T::of(epsilon));
        for (id, g) in ids.into_iter().zip(all) {
            let (m, v) = self.moments[id.index()].as_mut().expect("trainable parameter");
            let theta = store.get_mut(id).value.data_mut();
            for (((th, m), v), &g) in theta.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = b1 * *m + nb1 * g;
                *v = b2 * *v + nb2 * g * g;
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *th -= lr * (b1 * m_hat + nb1 * g * inv_c1) / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::from_f64(&[1], &[v]).unwrap(), true).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (mut s, id) = scalar_store(0.25);
        let mut st = NadamState::new(&s, NadamConfig::default()).unwrap();
        for _ in 0..100 {
            st.step(&mut s, 0.1, |_| Tensor::zeros(&[1]).unwrap()).unwrap();
        }
        assert_eq!(s.value(id).data(), &[0.25]);
    }

    #[test]
    fn first_step_by_hand() {
        let (mut s, id) = scalar_store(0.0);
        let mut st = NadamState::new(&s, NadamConfig::default()).unwrap();
        st.step(&mut s, 0.1, |_| Tensor::from_f64(&[1], &[1.0]).unwrap()).unwrap();
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1;
        // update = 0.1 (0.9 + 0.1 / 0.1) / (1 + 1e-7)
        let expect = -0.1 * (0.9 * 1.0 + 0.1 * 1.0 / 0.1) / (1.0 + 1e-7);
        assert!((s.value(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut s, _) = scalar_store(0.0);
        let mut st = NadamState::new(&s, NadamConfig::default()).unwrap();
        let err = st.step(&mut s, 0.1, |_| Tensor::from_f64(&[1], &[f64::NAN]).unwrap()).unwrap_err();
        assert!(alloc::format!("{err}").contains("theta"));
        assert_eq!(st.step, 0);
    }
}
