//! Adaptive-moment optimizer with a post-step validity guard.

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// One update of `params` from `grads` (same structure). If the updated
    /// parameters fail [`Parameters::validate`], parameters and moments are
    /// restored and the error is returned.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g: Vec<&Tensor<T>> = grads.named_params().into_iter().map(|(_, t)| t).collect();
        let mut p: Vec<&mut Tensor<T>> = params.named_params_mut().into_iter().map(|(_, t)| t).collect();
        if p.len() != g.len() {
            return Err(Error::shape("optimizer: parameter and gradient structures differ"));
        }
        for (gi, &g) in g.iter().enumerate() {
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient tensor {gi}")));
            }
        }
        if self.m.is_empty() {
            self.m = p.iter().map(|t| Tensor::zeros(t.dims())).collect();
            self.v = self.m.clone();
        }
        let saved: Vec<Tensor<T>> = p.iter().map(|t| (**t).clone()).collect();
        let (m_saved, v_saved) = (self.m.clone(), self.v.clone());

        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (i, param) in p.iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gv), mv), vv) in param.data_mut().iter_mut().zip(g[i].data()).zip(m).zip(v) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        drop(p);
        if let Err(e) = params.validate() {
            for ((_, t), s) in params.named_params_mut().into_iter().zip(saved) {
                *t = s;
            }
            self.m = m_saved;
            self.v = v_saved;
            self.t -= 1;
            return Err(e);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::InvConv;

    #[derive(Clone)]
    struct Scalar1(Tensor<f64>);

    impl Parameters<f64> for Scalar1 {
        fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<f64>)>) {
            out.push((prefix.to_string(), &self.0));
        }
        fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<f64>)>) {
            out.push((prefix.to_string(), &mut self.0));
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Scalar1(Tensor::full([1, 1, 1, 3], 0.7));
        let g = Scalar1(Tensor::zeros([1, 1, 1, 3]));
        let mut opt = Adam::new(0.1);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.0, Tensor::full([1, 1, 1, 3], 0.7));
    }

    #[test]
    fn scalar_quadratic_converges() {
        // f(w) = (w - 3)², started far away.
        let mut p = Scalar1(Tensor::full([1, 1, 1, 1], -2.0));
        let mut opt = Adam::new(0.1);
        for _ in 0..200 {
            let w = p.0.data()[0];
            let g = Scalar1(Tensor::full([1, 1, 1, 1], 2.0 * (w - 3.0)));
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p.0.data()[0] - 3.0).abs() <= 1e-3, "{}", p.0.data()[0]);
    }

    #[derive(Clone)]
    struct Mix(InvConv<f64>);

    impl Parameters<f64> for Mix {
        fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<f64>)>) {
            self.0.collect(prefix, out);
        }
        fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<f64>)>) {
            self.0.collect_mut(prefix, out);
        }
        fn validate(&self) -> Result<()> {
            self.0.check_invertible()
        }
    }

    #[test]
    fn determinant_guard_aborts_collapsing_step() {
        // diag(1, 1e-4): one Adam step of size lr along +g on the small
        // entry drives the determinant through zero.
        let m = InvConv::from_rows(&[vec![1.0, 0.0], vec![0.0, 1e-4]]).unwrap();
        let mut p = Mix(m);
        let before = p.0.clone();
        let mut g = p.0.zeros_like();
        g.matrix.data_mut()[3] = 1.0;
        let mut opt = Adam::new(1e-4);
        let err = opt.step(&mut p, &Mix(g)).unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
        assert_eq!(p.0, before);
        assert_eq!(opt.steps_taken(), 0);
    }
}
