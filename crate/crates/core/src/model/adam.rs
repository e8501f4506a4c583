use super::layers::Param;
use super::tensor::{Real, Tensor};
use crate::{Error, Result};

/// Adam optimizer with bias correction. Moments are created on the first
/// step and tied to parameter names.
#[derive(Debug, Clone)]
pub struct Adam<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    names: Vec<String>,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update to every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [(String, &mut Param<T>)]) -> Result<()> {
        if self.names.is_empty() {
            self.names = params.iter().map(|(n, _)| n.clone()).collect();
            self.m = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        if params.len() != self.names.len()
            || params.iter().zip(&self.names).any(|((n, _), m)| n != m)
        {
            return Err(Error::Shape("optimizer parameter set changed between steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ob1, ob2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let (lr, eps) = (self.lr, self.eps);
        for (((_, p), m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            for (k, &gk) in g.iter().enumerate() {
                let mk = b1 * m.data()[k] + ob1 * gk;
                let vk = b2 * v.data()[k] + ob2 * gk * gk;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
            }
            let (md, vd) = (m.data(), v.data());
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let mhat = md[k].to_f64().unwrap() / c1;
                let vhat = vd[k].to_f64().unwrap() / c2;
                *w = *w - T::of(lr * mhat / (vhat.sqrt() + eps));
            }
        }
        Ok(())
    }

    /// Optimizer state as named tensors for checkpointing.
    pub fn state(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![(
            format!("{prefix}step"),
            Tensor::new(vec![1], vec![T::of(self.step as f64)]).expect("scalar"),
        )];
        for ((n, m), v) in self.names.iter().zip(&self.m).zip(&self.v) {
            out.push((format!("{prefix}m/{n}"), m.clone()));
            out.push((format!("{prefix}v/{n}"), v.clone()));
        }
        out
    }

    /// Restores state written by [`Adam::state`].
    pub fn load_state(&mut self, prefix: &str, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let get = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let step = get(&format!("{prefix}step"))
            .ok_or_else(|| Error::Config(format!("missing {prefix}step")))?;
        self.step = step.data()[0].to_f64().unwrap_or(0.0) as u64;
        let mprefix = format!("{prefix}m/");
        self.names = tensors
            .iter()
            .filter_map(|(n, _)| n.strip_prefix(&mprefix).map(str::to_owned))
            .collect();
        self.m.clear();
        self.v.clear();
        for n in &self.names {
            self.m.push(get(&format!("{prefix}m/{n}")).unwrap().clone());
            let v = get(&format!("{prefix}v/{n}"))
                .ok_or_else(|| Error::Config(format!("missing second moment for {n}")))?;
            self.v.push(v.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Param<f64> {
        Param::new(Tensor::new(vec![1], vec![v]).unwrap())
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.5);
        let mut adam = Adam::new(1e-3);
        for k in 1..=3 {
            p.grad.fill(1.0);
            let before = p.value.data()[0];
            adam.step(&mut [("w".into(), &mut p)]).unwrap();
            let delta = p.value.data()[0] - before;
            // With a constant gradient the bias-corrected ratio is 1.
            assert!((delta + 1e-3).abs() < 1e-9, "step {k}: {delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar(0.25);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut [("w".into(), &mut p)]).unwrap();
        assert_eq!(p.value.data()[0], 0.25);
    }

    #[test]
    fn state_round_trips() {
        let mut p = scalar(0.0);
        let mut adam = Adam::<f64>::new(1e-3);
        p.grad.fill(0.3);
        adam.step(&mut [("w".into(), &mut p)]).unwrap();
        let state = adam.state("opt/");
        let mut restored = Adam::<f64>::new(1e-3);
        restored.load_state("opt/", &state).unwrap();
        let mut q = p.clone();
        adam.step(&mut [("w".into(), &mut p)]).unwrap();
        restored.step(&mut [("w".into(), &mut q)]).unwrap();
        assert_eq!(p.value, q.value);
    }
}
