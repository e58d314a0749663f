//! Gradient verification on the autodiff substrate: build a few small
//! computations, compare reverse-mode gradients against central finite
//! differences, and print the reports.
//!
//! Run: cargo run --release --example autodiff_gradcheck

use tl3d::nn::{Mlp, MultiHeadAttention, ParamSet};
use tl3d::tensor::{gradcheck, Tensor};
use tl3d::Rng;

fn main() {
    let mut rng = Rng::new(7);

    // 1. f(x) = sum(x^2): the analytic gradient is 2x
    let x = Tensor::param(vec![1.0, 2.0], &[2]);
    let report = gradcheck("sum_of_squares", || x.mul(&x).sum_all(), &[("x", &x)], 1e-5, 1e-8);
    println!("{report}");

    // 2. a small MLP regression loss
    let mut ps = ParamSet::new();
    let mlp = Mlp::new(&mut ps, "mlp", 6, 16, 3, &mut rng);
    let input = Tensor::from_vec(rng.normal_vec(4 * 6), &[4, 6]);
    let target = Tensor::from_vec(rng.normal_vec(4 * 3), &[4, 3]);
    let f = || {
        let diff = mlp.forward(&input).sub(&target);
        diff.mul(&diff).mean_all()
    };
    let entries: Vec<(String, Tensor)> = ps.entries().to_vec();
    let params: Vec<(&str, &Tensor)> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    println!("{}", gradcheck("mlp_mse", f, &params, 1e-5, 1e-6));

    // 3. multi-head attention with QK normalization
    let mut ps = ParamSet::new();
    let attn = MultiHeadAttention::new(&mut ps, "attn", 8, 8, 2, true, &mut rng);
    let tokens = Tensor::param(rng.normal_vec(5 * 8), &[1, 5, 8]);
    let f = || {
        let y = attn.forward(&tokens, &tokens);
        y.mul(&y).sum_all()
    };
    let entries: Vec<(String, Tensor)> = ps.entries().to_vec();
    let mut params: Vec<(&str, &Tensor)> = vec![("tokens", &tokens)];
    params.extend(entries.iter().map(|(n, t)| (n.as_str(), t)));
    println!("{}", gradcheck("attention_qknorm", f, &params, 1e-5, 1e-6));
}
