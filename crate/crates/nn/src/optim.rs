use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam optimizer state: one first- and second-moment tensor per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.dims())).collect();
        Adam {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one bias-corrected Adam update from the stored gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((x, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(v));
        store
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        store.iter_mut().next().unwrap().grad = Tensor::scalar(1.0);
        adam.step(&mut store);
        // m_hat = v_hat = 1 so the update is -lr / (1 + eps).
        let expected = -0.05 / (1.0 + 1e-8);
        let got = store.iter().next().unwrap().1.value.data()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = scalar_store(1.25);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.step(&mut store);
        assert_eq!(store.iter().next().unwrap().1.value.data()[0], 1.25);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // Reference trace for g = 0.5 then g = -0.25, lr = 0.05.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.05f64);
        let mut x = 2.0;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [0.5f64, -0.25].into_iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        // Hand-evaluated: step 1 has m_hat = 0.5, v_hat = 0.25; step 2 m_hat = (0.045-0.025)/0.19,
        // v_hat = (0.00024975+0.0000625)/0.001999.
        let m_hat2 = (0.9 * 0.05 + 0.1 * -0.25) / (1.0 - 0.81);
        let v_hat2 = (0.999 * 0.00025 + 0.001 * 0.0625) / (1.0 - 0.999f64.powi(2));
        let hand = 2.0 - 0.05 * 0.5 / (0.5 + 1e-8) - 0.05 * m_hat2 / (v_hat2.sqrt() + 1e-8);
        assert!((x - hand).abs() < 1e-12);

        let mut store = scalar_store(2.0);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for g in [0.5, -0.25] {
            store.zero_grad();
            store.iter_mut().next().unwrap().grad = Tensor::scalar(g);
            adam.step(&mut store);
        }
        let got = store.iter().next().unwrap().1.value.data()[0];
        assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
        assert_eq!(adam.step, 2);
    }
}
