use crate::tensor::{ParamSet, Tensor, TensorError};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates `params` in place from `grads`, which must list the same tensors in the same order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(TensorError::Contract(format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut updated = Vec::with_capacity(params.len());
        for (k, ((name, p), (gname, g))) in params.iter().zip(grads.iter()).enumerate() {
            if name != gname || p.shape() != g.shape() {
                return Err(TensorError::Contract(format!("gradient {gname} does not match parameter {name}")));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let mut out = p.to_vec();
            for (i, (&gi, o)) in g.data().iter().zip(out.iter_mut()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *o -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            updated.push((name.to_owned(), Tensor::new(p.shape(), out)?));
        }
        for (name, t) in updated {
            params.set(&name, t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::row_vector(&[1.0, -2.0, 0.5])).unwrap();
        let mut grads = ParamSet::new();
        grads.insert("w", Tensor::row_vector(&[3.0, -0.1, 0.0])).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut ps, &grads).unwrap();
        let w = ps.get("w").unwrap().to_vec();
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] + 1.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::row_vector(&[4.0, -3.0])).unwrap();
        let mut adam = Adam::new(0.05);
        for _ in 0..2000 {
            let g = ps.get("x").unwrap().scale(2.0).unwrap();
            let mut grads = ParamSet::new();
            grads.insert("x", g).unwrap();
            adam.step(&mut ps, &grads).unwrap();
        }
        assert!(ps.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }
}
