use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore, Real, Tensor};

/// Adam with decoupled weight decay. Decay skips rank-1 tensors (biases).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, weight_decay: f64) -> Self {
        let zeros = |s: &ParamStore<T>| {
            let mut z = ParamStore::new();
            for (n, t) in s.iter() {
                z.insert(n.clone(), Tensor::zeros(t.shape()));
            }
            z
        };
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros(params), v: zeros(params) }
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).ok_or_else(|| Error::invalid(format!("no gradient for {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::shape("adamw", format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
            let decay = if p.rank() > 1 { self.weight_decay } else { 0.0 };
            let m = self.m.get_mut(name)?.data_mut();
            let v = self.v.get_mut(name)?.data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.to_f64();
                let m_new = self.beta1 * mi.to_f64() + (1.0 - self.beta1) * gi;
                let v_new = self.beta2 * vi.to_f64() + (1.0 - self.beta2) * gi * gi;
                *mi = T::from_f64(m_new);
                *vi = T::from_f64(v_new);
                let wf = w.to_f64();
                let upd = (m_new / c1) / ((v_new / c2).sqrt() + self.eps) + decay * wf;
                *w = T::from_f64(wf - self.lr * upd);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamStore::<f64>::new();
        p.insert("b", Tensor::from_f64_slice(&[2], &[1.0, -1.0]).unwrap());
        let mut opt = AdamW::new(&p, 0.1, 0.5);
        let mut g = Gradients::new();
        g.insert("b".into(), Tensor::from_f64_slice(&[2], &[3.0, -0.01]).unwrap());
        opt.update(&mut p, &g).unwrap();
        let b = p.get("b").unwrap().data();
        assert!((b[0] - 0.9).abs() < 1e-6 && (b[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn decay_applies_to_matrices_only() {
        let mut p = ParamStore::<f64>::new();
        p.insert("w", Tensor::full(&[1, 1], 2.0));
        let mut opt = AdamW::new(&p, 0.1, 0.5);
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::zeros(&[1, 1]));
        opt.update(&mut p, &g).unwrap();
        assert!((p.get("w").unwrap().item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }
}
