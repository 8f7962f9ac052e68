//! Scalar Adam optimizer with an externally supplied learning rate.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: f64,
    v: f64,
    t: i32,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    /// Returns the updated parameter.
    pub fn step(&mut self, param: f64, grad: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - libm::pow(self.beta1, self.t as f64));
        let v_hat = self.v / (1.0 - libm::pow(self.beta2, self.t as f64));
        param - lr * m_hat / (libm::sqrt(v_hat) + self.eps)
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Adam::default();
        let p = a.step(1.0, 3.0, 0.01);
        assert!((p - 0.99).abs() < 1e-9);
        let mut b = Adam::default();
        assert!((b.step(1.0, -0.002, 0.01) - 1.01).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut a = Adam::default();
        let mut x = 5.0;
        for _ in 0..5000 {
            x = a.step(x, 2.0 * (x - 1.5), 0.05);
        }
        assert!((x - 1.5).abs() < 1e-3);
    }
}
