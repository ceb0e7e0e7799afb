use indexmap::IndexMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<R> {
    pub m: Tensor<R>,
    pub v: Tensor<R>,
}

/// Named trainable tensors plus Adam state, in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<R> {
    tensors: IndexMap<String, Tensor<R>>,
    moments: IndexMap<String, Moments<R>>,
    adam_steps: u64,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self { tensors: IndexMap::new(), moments: IndexMap::new(), adam_steps: 0 }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<R>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<R>> {
        self.moments.get(name)
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam_steps
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.adam_steps > 0
    }

    /// Restores optimizer state (used by checkpoint loading).
    pub fn set_optimizer_state(&mut self, steps: u64, moments: IndexMap<String, Moments<R>>) -> Result<()> {
        for (name, mo) in &moments {
            let p = self.tensors.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if mo.m.shape() != p.shape() || mo.v.shape() != p.shape() {
                return Err(Error::Shape { op: "optimizer state", left: mo.m.shape().to_vec(), right: p.shape().to_vec() });
            }
        }
        self.adam_steps = steps;
        self.moments = moments;
        Ok(())
    }

    /// Euclidean norm of each parameter, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.norm().to_f64())).collect()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            moments: self
                .moments
                .iter()
                .map(|(k, mo)| (k.clone(), Moments { m: mo.m.cast(), v: mo.v.cast() }))
                .collect(),
            adam_steps: self.adam_steps,
        }
    }
}

/// Exact number of trainable scalars.
pub fn param_count<R: Real>(store: &ParamStore<R>) -> usize {
    store.tensors.values().map(Tensor::len).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    pub fn with_lr(lr: f64) -> Self {
        Self { config: AdamConfig { lr, ..AdamConfig::default() } }
    }

    /// One update of every parameter in `store`; `grads` must cover all of them.
    pub fn step<R: Real>(&self, store: &mut ParamStore<R>, grads: &IndexMap<String, Tensor<R>>) -> Result<()> {
        for (name, p) in &store.tensors {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(Error::Shape { op: "adam gradient", left: g.shape().to_vec(), right: p.shape().to_vec() });
            }
        }
        store.adam_steps += 1;
        let t = store.adam_steps as i32;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (R::from_f64(beta1), R::from_f64(beta2));
        let (one_b1, one_b2) = (R::from_f64(1.0 - beta1), R::from_f64(1.0 - beta2));
        let (inv_bc1, inv_bc2) = (R::from_f64(1.0 / bc1), R::from_f64(1.0 / bc2));
        let (lr, eps) = (R::from_f64(lr), R::from_f64(eps));
        for (name, p) in store.tensors.iter_mut() {
            let g = &grads[name];
            let mo = store.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(p.shape()),
                v: Tensor::zeros(p.shape()),
            });
            let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
            for (i, (theta, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] * inv_bc1;
                let v_hat = v[i] * inv_bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::new(vec![1], vec![theta]).unwrap()).unwrap();
        s
    }

    fn grad(g: f64) -> IndexMap<String, Tensor<f64>> {
        IndexMap::from([("theta".to_string(), Tensor::new(vec![1], vec![g]).unwrap())])
    }

    #[test]
    fn count_matrix_plus_bias() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::zeros(&[3, 4])).unwrap();
        s.insert("b", Tensor::zeros(&[4])).unwrap();
        assert_eq!(param_count(&s), 16);
        assert!(s.insert("w", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_of_gradient() {
        let mut s = scalar_store(1.0);
        Adam::with_lr(1e-3).step(&mut s, &grad(0.3)).unwrap();
        // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let expect = 1.0 - 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((s.get("theta").unwrap().data()[0] - expect).abs() < 1e-15);
        assert!((s.get("theta").unwrap().data()[0] - (1.0 - 1e-3)).abs() < 1e-6);
        assert_eq!(s.adam_steps(), 1);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        let mut s = scalar_store(0.5);
        let adam = Adam::with_lr(1e-2);
        let g = -0.7;
        adam.step(&mut s, &grad(g)).unwrap();
        adam.step(&mut s, &grad(g)).unwrap();
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 1e-2);
        let mut theta = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((s.get("theta").unwrap().data()[0] - theta).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_no_ops() {
        let mut s = scalar_store(2.0);
        Adam::with_lr(1e-3).step(&mut s, &grad(0.0)).unwrap();
        assert_eq!(s.get("theta").unwrap().data()[0], 2.0);
        Adam::with_lr(0.0).step(&mut s, &grad(5.0)).unwrap();
        assert_eq!(s.get("theta").unwrap().data()[0], 2.0);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = scalar_store(2.0);
        s.insert("other", Tensor::zeros(&[2])).unwrap();
        let err = Adam::default().step(&mut s, &grad(1.0)).unwrap_err();
        assert_eq!(err.to_string(), "missing gradient for parameter `other`");
    }

    proptest::proptest! {
        // With a constant gradient per element the bias-corrected ratio
        // m_hat / sqrt(v_hat) is exactly sign(g), so every step is bounded by lr.
        #[test]
        fn update_magnitude_bounded_by_lr(gs in proptest::collection::vec(-10.0f64..10.0, 1..8), steps in 1usize..20) {
            let mut s = ParamStore::new();
            s.insert("p", Tensor::zeros(&[gs.len()])).unwrap();
            let grads = IndexMap::from([("p".to_string(), Tensor::new(vec![gs.len()], gs.clone()).unwrap())]);
            let adam = Adam::with_lr(1e-3);
            for _ in 0..steps {
                let before = s.get("p").unwrap().clone();
                adam.step(&mut s, &grads).unwrap();
                let delta = s.get("p").unwrap().max_abs_diff(&before);
                proptest::prop_assert!(delta <= 1e-3 * (1.0 + 1e-9));
            }
        }
    }
}
