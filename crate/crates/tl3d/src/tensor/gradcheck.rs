//! Finite-difference gradient verification.
//!
//! Compares reverse-mode gradients against central differences in double
//! precision. The loss closure must be deterministic (fix any noise draws
//! before calling) and is re-evaluated under [`no_grad`](super::no_grad)
//! for the perturbed probes.

use super::{no_grad, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Label of the operation under test.
    pub label: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (parameter name, flat index) of the worst component.
    pub worst: Option<(String, usize)>,
    pub components_checked: usize,
    pub passed: bool,
    /// Set when evaluation produced non-finite values instead of a verdict.
    pub failure: Option<String>,
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.failure {
            Some(msg) => write!(f, "gradcheck[{}]: FAILED ({msg})", self.label),
            None => write!(
                f,
                "gradcheck[{}]: {} (max rel err {:.3e} over {} components{})",
                self.label,
                if self.passed { "ok" } else { "FAILED" },
                self.max_rel_err,
                self.components_checked,
                match &self.worst {
                    Some((name, idx)) => format!(", worst at {name}[{idx}]"),
                    None => String::new(),
                }
            ),
        }
    }
}

/// Check every component of every parameter.
pub fn gradcheck<F>(
    label: &str,
    f: F,
    params: &[(&str, &Tensor)],
    eps: f64,
    tol: f64,
) -> GradcheckReport
where
    F: Fn() -> Tensor,
{
    run(label, f, params, eps, tol, None, &mut Rng::new(0))
}

/// Check a random subset of components per parameter; for graphs where the
/// full sweep would be too slow.
pub fn gradcheck_subset<F>(
    label: &str,
    f: F,
    params: &[(&str, &Tensor)],
    eps: f64,
    tol: f64,
    per_param: usize,
    rng: &mut Rng,
) -> GradcheckReport
where
    F: Fn() -> Tensor,
{
    run(label, f, params, eps, tol, Some(per_param), rng)
}

fn run<F>(
    label: &str,
    f: F,
    params: &[(&str, &Tensor)],
    eps: f64,
    tol: f64,
    per_param: Option<usize>,
    rng: &mut Rng,
) -> GradcheckReport
where
    F: Fn() -> Tensor,
{
    let fail = |msg: String| GradcheckReport {
        label: label.to_string(),
        max_rel_err: f64::INFINITY,
        max_abs_err: f64::INFINITY,
        worst: None,
        components_checked: 0,
        passed: false,
        failure: Some(msg),
    };

    for (name, p) in params {
        p.zero_grad();
        if !p.all_finite() {
            return fail(format!("non-finite input in {name}"));
        }
    }
    let loss = f();
    if loss.numel() != 1 {
        return fail(format!("loss is not scalar, shape {:?}", loss.shape()));
    }
    if !loss.item().is_finite() {
        return fail(format!("non-finite loss in {label}"));
    }
    loss.backward();

    let mut analytic: Vec<Vec<f64>> = Vec::with_capacity(params.len());
    for (name, p) in params {
        match p.grad_vec() {
            Some(g) => {
                if g.iter().any(|v| !v.is_finite()) {
                    return fail(format!("non-finite gradient in {name}"));
                }
                analytic.push(g);
            }
            None => analytic.push(vec![0.0; p.numel()]),
        }
    }

    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0usize;

    for (pi, (name, p)) in params.iter().enumerate() {
        let n = p.numel();
        let indices: Vec<usize> = match per_param {
            Some(k) if k < n => {
                let mut pool: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut pool);
                pool.truncate(k);
                pool.sort_unstable();
                pool
            }
            _ => (0..n).collect(),
        };
        let base = p.to_vec();
        for &i in &indices {
            let mut probe = base.clone();
            probe[i] = base[i] + eps;
            p.set_data(&probe);
            let f_plus = no_grad(&f).item();
            probe[i] = base[i] - eps;
            p.set_data(&probe);
            let f_minus = no_grad(&f).item();
            p.set_data(&base);
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return fail(format!("non-finite perturbed loss at {name}[{i}]"));
            }
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let an = analytic[pi][i];
            let abs_err = (an - fd).abs();
            let rel_err = abs_err / an.abs().max(fd.abs()).max(1.0);
            checked += 1;
            max_abs = max_abs.max(abs_err);
            if rel_err > max_rel {
                max_rel = rel_err;
                worst = Some((name.to_string(), i));
            }
        }
    }

    for (_, p) in params {
        p.zero_grad();
    }

    GradcheckReport {
        label: label.to_string(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        worst,
        components_checked: checked,
        passed: max_rel < tol,
        failure: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = sum(x^2): analytic grad [2, 4] at x = [1, 2]
        let x = Tensor::param(vec![1.0, 2.0], &[2]);
        let report = gradcheck("sum_of_squares", || x.mul(&x).sum_all(), &[("x", &x)], 1e-5, 1e-8);
        assert!(report.passed, "{report}");
        x.zero_grad();
        let loss = x.mul(&x).sum_all();
        loss.backward();
        let g = x.grad_vec().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        // detach() cuts the graph, so the analytic grad is 0 while FD is not
        let x = Tensor::param(vec![1.5], &[1]);
        let report = gradcheck("broken", || x.detach().mul(&x.detach()).sum_all(), &[("x", &x)], 1e-5, 1e-4);
        assert!(!report.passed);
    }

    #[test]
    fn reports_non_finite_loss() {
        let x = Tensor::param(vec![-1.0], &[1]);
        let report = gradcheck("log_of_negative", || x.ln().sum_all(), &[("x", &x)], 1e-6, 1e-4);
        assert!(!report.passed);
        assert!(report.failure.is_some());
        assert!(format!("{report}").contains("log_of_negative"));
    }

    #[test]
    fn composite_ops_pass_gradcheck() {
        let mut rng = Rng::new(21);
        let x = Tensor::param(rng.normal_vec(12), &[3, 4]);
        let w = Tensor::param(rng.normal_vec(8), &[4, 2]);
        let f = || {
            let h = x.matmul(&w).tanh();
            let s = h.softmax_last();
            s.layer_norm_last(1e-5).mul(&s).sum_all()
        };
        let report = gradcheck("matmul_tanh_softmax_layernorm", f, &[("x", &x), ("w", &w)], 1e-5, 1e-7);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn randomized_small_shapes_pass_for_each_op() {
        let mut rng = Rng::new(77);
        // elementwise, conv, norms, attention-ish reductions on random small shapes
        for trial in 0..3 {
            let x = Tensor::param(rng.normal_vec(2 * 3 * 4 * 4), &[2, 3, 4, 4]);
            let w = Tensor::param(rng.normal_vec(2 * 3 * 3 * 3), &[2, 3, 3, 3]);
            let b = Tensor::param(rng.normal_vec(2), &[2]);
            let f = || {
                let c = x.conv2d(&w, Some(&b), 1, 1).silu();
                let u = c.bilinear_up2x().avg_down2x();
                let r = u.reshape(&[2, 2 * 4 * 4]).rms_norm_last(1e-5);
                r.mul(&r).mean_all()
            };
            let report = gradcheck(
                &format!("conv_resample_rms_{trial}"),
                f,
                &[("x", &x), ("w", &w), ("b", &b)],
                1e-5,
                1e-6,
            );
            assert!(report.passed, "{report}");
        }
    }

    #[test]
    fn subset_mode_checks_requested_count() {
        let mut rng = Rng::new(3);
        let x = Tensor::param(rng.normal_vec(100), &[100]);
        let report = gradcheck_subset(
            "subset",
            || x.sigmoid().sum_all(),
            &[("x", &x)],
            1e-5,
            1e-6,
            10,
            &mut rng,
        );
        assert!(report.passed, "{report}");
        assert_eq!(report.components_checked, 10);
    }
}
