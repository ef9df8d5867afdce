//! Update rules over [`Params`] collections.

use crate::layers::Params;
use crate::tensor::Tensor;

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of `model` with gradients laid out like `model`.
    pub fn step<P: Params>(&mut self, model: &mut P, grads: &P) {
        self.step_tensors(model.params_mut(), grads.params());
    }

    /// Same as [`Adam::step`] over explicit, index-aligned tensor lists.
    pub fn step_tensors(&mut self, ps: Vec<&mut Tensor>, gs: Vec<&Tensor>) {
        if self.m.is_empty() {
            self.m = ps.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), ps.len(), "optimizer bound to a different model");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in ps.into_iter().zip(gs).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}
