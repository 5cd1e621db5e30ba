use crate::{Element, ParamStore, Result, Tensor, TensorError};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> Option<&Tensor<T>> {
        self.first.get(index)
    }

    pub fn second_moment(&self, index: usize) -> Option<&Tensor<T>> {
        self.second.get(index)
    }

    /// Applies one update to every parameter, then clears gradients.
    ///
    /// Every parameter must carry a gradient; the store is left untouched
    /// when one is missing.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(TensorError::MissingGradient(p.name.clone()));
        }
        if self.first.is_empty() {
            for (_, p) in params.iter() {
                self.first.push(Tensor::zeros(p.value.shape()));
                self.second.push(Tensor::zeros(p.value.shape()));
            }
        }
        if self.first.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2) = (T::num(self.beta1), T::num(self.beta2));
        let (one_b1, one_b2) = (T::num(1.0 - self.beta1), T::num(1.0 - self.beta2));
        let step_size = T::num(self.lr / bc1);
        let bc2_sqrt = T::num(bc2.sqrt());
        let eps = T::num(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().expect("checked above");
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *w = *w - step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamId;

    fn store(value: f32, grad: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(value)).unwrap();
        s.get_mut(id).grad = Some(Tensor::scalar(grad));
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = store(0.7, 0.0);
        let mut adam = Adam::new(1e-4);
        adam.step(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = v̂ = 1 after bias correction, so Δ = -lr / (1 + eps).
        let mut s = store(0.0, 1.0);
        let mut adam = Adam::new(1e-4);
        adam.step(&mut s).unwrap();
        let w = s.by_name("w").unwrap().value.item();
        assert!((w + 1e-4).abs() < 1e-9, "{w}");
        assert!(s.by_name("w").unwrap().grad.is_none());
    }

    #[test]
    fn moments_track_ema() {
        let mut s = store(0.0, 0.5);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut s).unwrap();
        s.get_mut(ParamId(0)).grad = Some(Tensor::scalar(0.5));
        adam.step(&mut s).unwrap();
        assert_eq!(adam.step_count(), 2);
        // m2 = 0.9*0.05 + 0.1*0.5, v2 = 0.999*0.00025 + 0.001*0.25
        let m = adam.first_moment(0).unwrap().item() as f64;
        let v = adam.second_moment(0).unwrap().item() as f64;
        assert!((m - 0.095).abs() < 1e-7, "{m}");
        assert!((v - 0.00049975).abs() < 1e-9, "{v}");
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::scalar(1.0)).unwrap();
        let id = s.insert("b", Tensor::scalar(1.0)).unwrap();
        s.get_mut(id).grad = Some(Tensor::scalar(1.0));
        let err = Adam::new(1e-3).step(&mut s).unwrap_err();
        assert!(err.to_string().contains("`a`"), "{err}");
    }
}
