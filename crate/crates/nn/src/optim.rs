use crate::{ParamId, ParamStore, Scalar, Tensor};

/// Adam with decoupled weight decay.
///
/// Moments are created lazily on a parameter's first update, so an
/// optimizer that never stepped carries no state.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Number of updates applied so far.
    pub step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW { beta1, beta2, eps, weight_decay, step: 0, moments: Vec::new() }
    }

    /// First and second moments of a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(id.0).and_then(|m| m.as_ref())
    }

    pub fn set_moments(&mut self, id: ParamId, m: Tensor<T>, v: Tensor<T>) {
        if self.moments.len() <= id.0 {
            self.moments.resize(id.0 + 1, None);
        }
        self.moments[id.0] = Some((m, v));
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2 = T::from_f64_lossy(1.0 / bc2);
        let decay = T::from_f64_lossy(1.0 - lr * self.weight_decay);
        let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
        let (ob1, ob2) = (T::one() - tb1, T::one() - tb2);
        let eps = T::from_f64_lossy(self.eps);
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            if self.moments.len() <= id.0 {
                self.moments.resize(id.0 + 1, None);
            }
            let shape = g.shape().to_vec();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (Tensor::zeros(shape.clone()), Tensor::zeros(shape)));
            let (md, vd) = (m.data_mut(), v.data_mut());
            let w = store.value_mut(*id).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i];
                md[i] = tb1 * md[i] + ob1 * gi;
                vd[i] = tb2 * vd[i] + ob2 * gi * gi;
                let denom = (vd[i] * inv_bc2).sqrt() + eps;
                w[i] = w[i] * decay - step_size * md[i] / denom;
            }
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm().to_f64_lossy()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let c = T::from_f64_lossy(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * c;
            }
        }
    }
    norm
}
