//! Differentiable volume rendering by quadrature.
//!
//! For samples k along a ray with densities sigma_k and bin widths d_k:
//! alpha_k = 1 - exp(-sigma_k d_k), transmittance T_k = exp(-sum_{j<k}
//! sigma_j d_j), weights w_k = T_k alpha_k. Color composites against a
//! background; depth is the expected termination depth normalized by
//! opacity.

use super::{query_features, FieldMlp, TriPlane};
use crate::geometry::{RayBundle, RaySamples};
use crate::tensor::Tensor;

pub struct RenderOutput {
    /// [N, 3] composited color.
    pub rgb: Tensor,
    /// [N, 1] opacity-normalized expected depth.
    pub depth: Tensor,
    /// [N, 1] accumulated opacity in [0, 1].
    pub opacity: Tensor,
    /// [N, K] compositing weights w_k = T_k alpha_k.
    pub weights: Tensor,
}

/// Render rays through the field. `background` is the constant color
/// composited behind the last sample (the datasets use white).
pub fn volume_render(
    tp: &TriPlane,
    mlp: &FieldMlp,
    rays: &RayBundle,
    samples: &RaySamples,
    background: [f64; 3],
) -> RenderOutput {
    let n = rays.len();
    let k = samples.n_samples;
    assert!(
        samples.n_rays == n && samples.points.len() == n * k,
        "sample count {} does not match {} rays x {} samples",
        samples.points.len(),
        n,
        k
    );
    debug_assert!(samples
        .depths
        .chunks(k)
        .all(|row| row.windows(2).all(|w| w[1] > w[0])));

    let feats = query_features(tp, &samples.points); // [N*K, C]
    let (density, color) = mlp.forward(&feats); // [N*K, 1], [N*K, 3]
    let sigma = density.reshape(&[n, k]);
    let rgb_samples = color.reshape(&[n, k, 3]);

    let deltas = Tensor::from_vec(samples.deltas.clone(), &[n, k]);
    let depths = Tensor::from_vec(samples.depths.clone(), &[n, k]);

    let sdelta = sigma.mul(&deltas); // [N, K]
    let trans = sdelta.cumsum_exclusive_last().neg().exp(); // T_k
    let alpha = sdelta.neg().exp().neg().add_scalar(1.0); // 1 - exp(-sigma d)
    let weights = trans.mul(&alpha); // [N, K]

    let opacity = weights.sum_axis(1, true); // [N, 1]
    let w3 = weights.reshape(&[n, k, 1]);
    let fg = w3.mul(&rgb_samples).sum_axis(1, false); // [N, 3]
    let bg = Tensor::from_vec(background.to_vec(), &[1, 3]);
    let rgb = fg.add(&opacity.neg().add_scalar(1.0).mul(&bg));

    let depth = weights
        .mul(&depths)
        .sum_axis(1, true)
        .div(&opacity.clamp_min(1e-6));

    RenderOutput {
        rgb,
        depth,
        opacity,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rays_from_camera, stratified_samples, CameraPose};
    use crate::math3d::{vec3, Vec3};
    use crate::nn::ParamSet;
    use crate::rng::Rng;
    use crate::tensor::{gradcheck_subset, no_grad};

    fn setup(channels: usize, res: usize, seed: u64) -> (TriPlane, FieldMlp, RayBundle, Rng) {
        let mut rng = Rng::new(seed);
        let tp = TriPlane::randn(channels, res, 0.3, &mut rng);
        let mut ps = ParamSet::new();
        let mlp = FieldMlp::new(&mut ps, "mlp", channels, 8, &mut rng);
        let cam = CameraPose::look_at(vec3(0.0, 0.6, 2.0), Vec3::ZERO, 16.0, 8, 8);
        let rays = rays_from_camera(&cam, Some(&[(3, 3), (4, 4), (1, 6)])).unwrap();
        (tp, mlp, rays, rng)
    }

    /// An MLP with hand-set weights that outputs a fixed density/color
    /// regardless of features (all weights zero, chosen biases).
    fn constant_mlp(density_logit: f64, rgb_logit: f64, channels: usize) -> FieldMlp {
        let mut rng = Rng::new(0);
        let mut ps = ParamSet::new();
        let mlp = FieldMlp::new(&mut ps, "mlp", channels, 4, &mut rng);
        for t in [&mlp.l1.w, &mlp.l2.w, &mlp.l3.w] {
            t.set_data(&vec![0.0; t.numel()]);
        }
        for t in [mlp.l1.b.as_ref().unwrap(), mlp.l2.b.as_ref().unwrap()] {
            t.set_data(&vec![0.0; t.numel()]);
        }
        mlp.l3
            .b
            .as_ref()
            .unwrap()
            .set_data(&[density_logit, rgb_logit, rgb_logit, rgb_logit]);
        mlp
    }

    #[test]
    fn zero_density_renders_background_with_zero_opacity() {
        let (tp, _, rays, mut rng) = setup(4, 8, 42);
        // density logit -40 -> softplus ~ 0
        let mlp = constant_mlp(-40.0, 0.0, 4);
        let s = stratified_samples(&rays, 1.0, 3.0, 16, &mut rng, false).unwrap();
        let out = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0, 1.0, 1.0]));
        for v in out.rgb.to_vec() {
            assert!((v - 1.0).abs() < 1e-12, "expected white, got {v}");
        }
        for v in out.opacity.to_vec() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn opaque_limit_returns_sample_color() {
        let (tp, _, rays, mut rng) = setup(4, 8, 43);
        // softplus(20) ~ 20: opaque within one bin of width 2
        let mlp = constant_mlp(20.0, 0.8, 4);
        let s = stratified_samples(&rays, 1.0, 3.0, 1, &mut rng, false).unwrap();
        let out = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0, 1.0, 1.0]));
        let want = crate::tensor::Tensor::scalar(0.8).sigmoid().item();
        for v in out.rgb.to_vec() {
            assert!((v - want).abs() < 1e-6, "{v} vs {want}");
        }
        for v in out.opacity.to_vec() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_density_matches_analytic_transmittance() {
        let (tp, _, rays, mut rng) = setup(4, 8, 44);
        let sigma_logit = 1.5f64;
        let sigma = sigma_logit.exp().ln_1p(); // softplus
        let mlp = constant_mlp(sigma_logit, 0.0, 4);
        let (near, far) = (1.0, 2.5);
        let s = stratified_samples(&rays, near, far, 256, &mut rng, false).unwrap();
        let out = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0, 1.0, 1.0]));
        let want_opacity = 1.0 - (-sigma * (far - near)).exp();
        for v in out.opacity.to_vec() {
            assert!((v - want_opacity).abs() < 1e-3, "{v} vs {want_opacity}");
        }
    }

    #[test]
    fn weights_are_a_subprobability_distribution() {
        let (tp, mlp, _, mut rng) = setup(4, 8, 45);
        // random cameras, many rays
        let poses = crate::geometry::pose_trajectory(
            crate::geometry::TrajectoryKind::UpperSphereRandom,
            4,
            2.0,
            16.0,
            16,
            16,
            &mut rng,
        )
        .unwrap();
        for cam in &poses {
            let rays = rays_from_camera(cam, None).unwrap();
            let s = stratified_samples(&rays, 1.0, 3.0, 8, &mut rng, true).unwrap();
            let out = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0, 1.0, 1.0]));
            let w = out.weights.to_vec();
            assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for row in w.chunks(8) {
                let sum: f64 = row.iter().sum();
                assert!((0.0..=1.0 + 1e-6).contains(&sum), "weight sum {sum}");
            }
        }
    }

    #[test]
    fn adding_density_never_decreases_opacity() {
        // brute-force perturbation on a tiny instance
        let (tp, mlp, rays, mut rng) = setup(4, 6, 46);
        let s = stratified_samples(&rays, 1.0, 3.0, 5, &mut rng, false).unwrap();
        let base = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0; 3]).opacity.to_vec());
        // bump density via the final-layer density bias
        let bias = mlp.l3.b.as_ref().unwrap();
        let mut bd = bias.to_vec();
        for bump in [0.1, 0.5, 2.0] {
            let saved = bd[0];
            bd[0] += bump;
            bias.set_data(&bd);
            let up = no_grad(|| volume_render(&tp, &mlp, &rays, &s, [1.0; 3]).opacity.to_vec());
            for (a, b) in base.iter().zip(&up) {
                assert!(b >= a, "opacity decreased after density bump: {a} -> {b}");
            }
            bd[0] = saved;
            bias.set_data(&bd);
        }
    }

    #[test]
    fn render_loss_passes_gradcheck_wrt_planes_and_mlp() {
        let (tp, mlp, rays, mut rng) = setup(4, 4, 47);
        let s = stratified_samples(&rays, 1.0, 3.0, 4, &mut rng, false).unwrap();
        let f = || {
            let out = volume_render(&tp, &mlp, &rays, &s, [1.0, 1.0, 1.0]);
            // mix color, depth and opacity so every output path is exercised
            out.rgb
                .mul(&out.rgb)
                .sum_all()
                .add(&out.depth.sum_all().scale(0.1))
                .add(&out.opacity.sum_all().scale(0.3))
        };
        let report = gradcheck_subset(
            "volume_render",
            f,
            &[
                ("planes", &tp.planes),
                ("l1.w", &mlp.l1.w),
                ("l2.w", &mlp.l2.w),
                ("l3.w", &mlp.l3.w),
                ("l3.b", mlp.l3.b.as_ref().unwrap()),
            ],
            1e-5,
            1e-4,
            40,
            &mut rng,
        );
        assert!(report.passed, "{report}");
    }
}
