//! Decoupled-weight-decay adaptive-moment optimizer (AdamW).
//!
//! Moments are kept per parameter in registration order; decay is applied
//! to the weights directly, never mixed into the gradient. A non-finite
//! gradient skips that parameter's update for the step and bumps a warning
//! counter instead of poisoning the moments.

use super::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    /// Bias-correction step count (shared across params).
    pub step_count: u64,
    /// Steps skipped because of non-finite gradients.
    pub skipped_non_finite: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Self {
        AdamW {
            cfg,
            step_count: 0,
            skipped_non_finite: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    /// One update over `params` (must match construction order). Reads each
    /// param's accumulated grad and clears it.
    pub fn step(&mut self, params: &[Tensor]) {
        assert!(
            params.len() == self.m.len(),
            "optimizer built for {} params, stepped with {}",
            self.m.len(),
            params.len()
        );
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, p) in params.iter().enumerate() {
            let grad = match p.grad_vec() {
                Some(g) => g,
                None => {
                    continue;
                }
            };
            if grad.iter().any(|g| !g.is_finite()) {
                self.skipped_non_finite += 1;
                p.zero_grad();
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.update_data(|w| {
                for j in 0..w.len() {
                    m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * grad[j];
                    v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * grad[j] * grad[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    w[j] -= self.cfg.lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * w[j]);
                }
            });
            p.zero_grad();
        }
    }

    /// Serialize moments + counters as flat f64 rows (for checkpoints).
    pub fn state_rows(&self) -> (u64, u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.step_count, self.skipped_non_finite, &self.m, &self.v)
    }

    pub fn load_state(&mut self, step_count: u64, skipped: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        assert!(
            m.len() == self.m.len() && v.len() == self.v.len(),
            "optimizer state has {} params, expected {}",
            m.len(),
            self.m.len()
        );
        for (a, b) in self.m.iter().zip(&m) {
            assert!(a.len() == b.len(), "optimizer moment length mismatch");
        }
        self.step_count = step_count;
        self.skipped_non_finite = skipped;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_zero_decay_leave_params_unchanged() {
        let p = Tensor::param(vec![1.0, -2.0], &[2]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[p.clone()]);
        p.accumulate_grad(&[0.0, 0.0]);
        opt.step(&[p.clone()]);
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
    }

    #[test]
    fn one_step_on_quadratic_descends() {
        // f(x) = x^2 from x = 1, lr = 0.1: |x_new| < 1
        let p = Tensor::param(vec![1.0], &[1]);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                ..AdamWConfig::default()
            },
            &[p.clone()],
        );
        let loss = p.mul(&p).sum_all();
        loss.backward();
        opt.step(&[p.clone()]);
        assert!(p.to_vec()[0].abs() < 1.0);
    }

    #[test]
    fn matches_reference_update_rule_over_ten_steps() {
        // Hand-rolled scalar AdamW oracle, written independently of the
        // implementation above.
        let (lr, b1, b2, eps, wd) = (0.05, 0.9, 0.999, 1e-8, 0.01);
        let mut x_ref: f64 = 0.7;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let p = Tensor::param(vec![0.7], &[1]);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr,
                beta1: b1,
                beta2: b2,
                eps,
                weight_decay: wd,
            },
            &[p.clone()],
        );
        for t in 1..=10 {
            // grad of sin(x) + x^2/2 is cos(x) + x
            let g_ref = x_ref.cos() + x_ref;
            m = b1 * m + (1.0 - b1) * g_ref;
            v = b2 * v + (1.0 - b2) * g_ref * g_ref;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x_ref -= lr * (mhat / (vhat.sqrt() + eps) + wd * x_ref);

            let xv = p.to_vec()[0];
            p.accumulate_grad(&[xv.cos() + xv]);
            opt.step(&[p.clone()]);
            assert!(
                (p.to_vec()[0] - x_ref).abs() < 1e-6,
                "step {t}: {} vs {}",
                p.to_vec()[0],
                x_ref
            );
        }
    }

    #[test]
    fn non_finite_grad_skips_step_and_counts() {
        let p = Tensor::param(vec![1.0], &[1]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[p.clone()]);
        p.accumulate_grad(&[f64::NAN]);
        opt.step(&[p.clone()]);
        assert_eq!(p.to_vec(), vec![1.0]);
        assert_eq!(opt.skipped_non_finite, 1);
    }

    #[test]
    fn decay_applies_to_weights_not_grads() {
        // with zero grad and nonzero decay, weight shrinks multiplicatively
        let p = Tensor::param(vec![2.0], &[1]);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.5,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            &[p.clone()],
        );
        p.accumulate_grad(&[0.0]);
        opt.step(&[p.clone()]);
        assert!((p.to_vec()[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12);
    }
}
