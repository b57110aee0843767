use super::error::NnError;
use super::param::ParamStore;

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients in `store`, then zeroes them.
    /// Fails without touching any value if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        if let Some(t) = store
            .tensors()
            .iter()
            .find(|t| t.grad().iter().any(|g| !g.is_finite()))
        {
            return Err(NnError::NonFiniteGrad {
                name: t.name().to_string(),
            });
        }
        if self.m.len() != store.tensors().len() {
            self.m = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        for ((t, m), v) in store.tensors_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().to_vec();
            for (k, (p, g)) in t.values_mut().iter_mut().zip(&grad).enumerate() {
                m[k] = b1 * m[k] + (1.0 - b1) * g;
                v[k] = b2 * v[k] + (1.0 - b2) * g * g;
                if *g == 0.0 && m[k] == 0.0 {
                    continue;
                }
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
