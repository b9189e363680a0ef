use crate::autodiff::{Float, Tensor};
use crate::models::Params;

/// Adaptive-moment estimation with decoupled weight decay.
///
/// Each step first shrinks every weight by `1 − lr·wd`, then applies the
/// bias-corrected moment update. With `lr = 0` parameters are left bitwise unchanged.
#[derive(Clone, Debug)]
pub struct AdamW<T: Float> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(params: &Params<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `grads[i]` belongs to parameter `i`.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let lr_t = T::of(lr);
        let decay = T::of(1.0 - lr * self.weight_decay);
        let eps = T::of(self.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i).data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *p *= decay;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p -= lr_t * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Params<f64> {
        let mut p = Params::default();
        p.push("w", Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
        p
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut p = params();
        let before = p.flatten();
        let mut opt = AdamW::new(&p, 0.24);
        let g = vec![Tensor::from_f64(&[3], &[1.0, -3.0, 0.1]).unwrap()];
        opt.step(&mut p, &g, 0.0);
        assert_eq!(p.flatten(), before);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = params();
        let before = p.flatten();
        let mut opt = AdamW::new(&p, 0.1);
        opt.step(&mut p, &[Tensor::zeros(&[3])], 1e-3);
        for (a, b) in p.flatten().iter().zip(before) {
            assert_eq!(*a, b * (1.0 - 1e-3 * 0.1));
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = params();
        let before = p.flatten();
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[Tensor::from_f64(&[3], &[4.0, -0.5, 1e-3]).unwrap()], 0.01);
        let delta: Vec<f64> = p.flatten().iter().zip(before).map(|(a, b)| a - b).collect();
        assert!((delta[0] + 0.01).abs() < 1e-8);
        assert!((delta[1] - 0.01).abs() < 1e-8);
        assert!((delta[2] + 0.01).abs() < 1e-7);
    }
}
