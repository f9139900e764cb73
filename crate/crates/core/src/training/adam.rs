use crate::model::ParameterSet;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update: `θ -= lr · m̂ / (sqrt(v̂) + ε)`.
    pub fn step(&mut self, adam: &Adam, params: &mut ParameterSet, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), self.m.len(), "one gradient per parameter tensor");
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - adam.beta1.powi(t);
        let bc2 = 1.0 - adam.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let data = p.tensor.data_mut();
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..data.len() {
                m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * g[j];
                v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.eps);
            }
        }
    }
}
