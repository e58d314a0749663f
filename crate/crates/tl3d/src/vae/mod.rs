//! Stage-1 compression model: convolutional encoder to a KL-regularized
//! tri-latent, transformer decoder with interleaved self-plane/cross-plane
//! attention under adaptive layer-norm conditioning, convolutional
//! upsampler to a tri-plane, and the rendering-loss machinery including
//! the two-discriminator adversarial scheme.

mod decoder;
mod discriminator;
mod encoder;
mod loss;

pub use decoder::{alternating_pattern, DecoderTransformer, PlaneScope, Upsampler};
pub use discriminator::{DiscriminatorPair, NovelDiscMode};
pub use encoder::Encoder;
pub use loss::{depth_total_variation, multiscale_l1, vae_loss, LossWeights, RenderedCrop, VaeLossReport};

use crate::error::Result;
use crate::field::{FieldMlp, TriPlane};
use crate::geometry::{rays_from_camera, CameraPose};
use crate::nn::ParamSet;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Gaussian posterior over the compact 3-plane latent; mu and logvar are
/// each [3, c, h, w] (logical layout h x w x 3 x c).
pub struct TriLatent {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl TriLatent {
    /// (planes, channels, side) of the latent.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.mu.shape();
        (s[0], s[1], s[2])
    }

    /// Reparameterized draw z = mu + exp(0.5 logvar) * eps with fresh noise.
    pub fn sample(&self, rng: &mut Rng) -> Tensor {
        let eps = Tensor::from_vec(rng.normal_vec(self.mu.numel()), self.mu.shape());
        self.sample_with_noise(&eps)
    }

    /// Reparameterized draw with caller-provided noise (deterministic
    /// paths, gradchecks).
    pub fn sample_with_noise(&self, eps: &Tensor) -> Tensor {
        self.mu.add(&self.logvar.scale(0.5).exp().mul(eps))
    }

    /// Mean over elements of -1/2 (1 + logvar - mu^2 - exp(logvar)).
    pub fn kl_loss(&self) -> Tensor {
        self.mu
            .mul(&self.mu)
            .add(&self.logvar.exp())
            .sub(&self.logvar)
            .add_scalar(-1.0)
            .scale(0.5)
            .mean_all()
    }
}

#[derive(Debug, Clone)]
pub struct VaeConfig {
    /// Input image side (must be divisible by 8).
    pub image_size: usize,
    /// Views fed to the encoder (V).
    pub in_views: usize,
    /// Concatenate a ray-length channel to RGB + Plücker.
    pub use_depth: bool,
    /// Latent channels per plane (c).
    pub latent_channels: usize,
    /// Encoder base width.
    pub enc_channels: usize,
    /// Transformer depth (even: equal self/cross counts when interleaved).
    pub dec_layers: usize,
    pub dec_heads: usize,
    pub dec_dim: usize,
    /// Token channels handed to the upsampler.
    pub dec_out_channels: usize,
    pub up_channels: usize,
    /// Tri-plane feature channels (C).
    pub triplane_channels: usize,
    /// Field MLP hidden width.
    pub mlp_hidden: usize,
    pub qk_norm: bool,
}

impl VaeConfig {
    /// Paper-scale shape configuration: 256 inputs, 32^2 x 3 x 4 latent,
    /// 128^2 x 32 tri-planes. Model widths stay desk-scale.
    pub fn full_shape() -> VaeConfig {
        VaeConfig {
            image_size: 256,
            in_views: 1,
            use_depth: false,
            latent_channels: 4,
            enc_channels: 8,
            dec_layers: 2,
            dec_heads: 2,
            dec_dim: 32,
            dec_out_channels: 8,
            up_channels: 8,
            triplane_channels: 32,
            mlp_hidden: 32,
            qk_norm: true,
        }
    }

    /// Desk-scale default used by the training harness.
    pub fn desk() -> VaeConfig {
        VaeConfig {
            image_size: 32,
            in_views: 1,
            use_depth: false,
            latent_channels: 4,
            enc_channels: 12,
            dec_layers: 4,
            dec_heads: 4,
            dec_dim: 64,
            dec_out_channels: 8,
            up_channels: 16,
            triplane_channels: 16,
            mlp_hidden: 32,
            qk_norm: true,
        }
    }

    pub fn in_channels(&self) -> usize {
        3 + 6 + if self.use_depth { 1 } else { 0 }
    }

    /// Latent side h = w = image_size / 8.
    pub fn latent_side(&self) -> usize {
        self.image_size / 8
    }

    /// Tri-plane side (fixed 4x upsampling).
    pub fn triplane_side(&self) -> usize {
        4 * self.latent_side()
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by 8",
                self.image_size
            )));
        }
        if self.dec_layers % 2 != 0 {
            return Err(Error::Config(format!(
                "dec_layers {} must be even for interleaved attention",
                self.dec_layers
            )));
        }
        if self.dec_dim % self.dec_heads != 0 {
            return Err(Error::Config(format!(
                "dec_dim {} not divisible by {} heads",
                self.dec_dim, self.dec_heads
            )));
        }
        Ok(())
    }
}

/// Full stage-1 model; all trainable state lives in `params`.
pub struct VaeModel {
    pub cfg: VaeConfig,
    pub params: ParamSet,
    pub encoder: Encoder,
    pub decoder: DecoderTransformer,
    pub upsampler: Upsampler,
    pub field_mlp: FieldMlp,
}

impl VaeModel {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<VaeModel> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let mut ps = ParamSet::new();
        let encoder = Encoder::new(&mut ps, &cfg, &mut rng);
        let decoder = DecoderTransformer::new(&mut ps, &cfg, &mut rng);
        let upsampler = Upsampler::new(&mut ps, &cfg, &mut rng);
        let field_mlp = FieldMlp::new(&mut ps, "field", cfg.triplane_channels, cfg.mlp_hidden, &mut rng);
        Ok(VaeModel {
            cfg,
            params: ps,
            encoder,
            decoder,
            upsampler,
            field_mlp,
        })
    }

    /// views: [V, C_in, H, W] (see [`view_input_tensor`]).
    pub fn encode(&self, views: &Tensor) -> Result<TriLatent> {
        self.encoder.forward(views)
    }

    /// Latent z -> tri-plane field.
    pub fn decode(&self, z: &Tensor) -> TriPlane {
        self.upsampler.forward(&self.decoder.forward(z))
    }
}

/// Assemble one encoder view: RGB channels, the camera's per-pixel Plücker
/// coordinates, and optionally the rendered ray length (making the input a
/// posed colored point cloud). Output [1, C_in, H, W], constant.
pub fn view_input_tensor(
    rgb: &[f32],
    depth: Option<&[f32]>,
    cam: &CameraPose,
    width: usize,
    height: usize,
) -> Result<Tensor> {
    let n = width * height;
    assert!(
        rgb.len() == n * 3,
        "view rgb has {} values, expected {}",
        rgb.len(),
        n * 3
    );
    let rays = rays_from_camera(cam, None)?;
    let channels = 9 + usize::from(depth.is_some());
    let mut data = vec![0.0f64; channels * n];
    for i in 0..n {
        for ch in 0..3 {
            data[ch * n + i] = rgb[i * 3 + ch] as f64;
        }
        for ch in 0..6 {
            data[(3 + ch) * n + i] = rays.plucker[i][ch];
        }
    }
    if let Some(d) = depth {
        assert!(d.len() == n, "depth has {} values, expected {n}", d.len());
        for i in 0..n {
            // scaled ray length; 0 stays "no hit"
            data[9 * n + i] = d[i] as f64 / 3.0;
        }
    }
    Ok(Tensor::from_vec(data, &[1, channels, height, width]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::volume_render;
    use crate::geometry::stratified_samples;
    use crate::math3d::{vec3, Vec3};
    use crate::tensor::{gradcheck_subset, no_grad};

    fn tiny_cfg() -> VaeConfig {
        VaeConfig {
            image_size: 32,
            in_views: 1,
            use_depth: false,
            latent_channels: 4,
            enc_channels: 6,
            dec_layers: 2,
            dec_heads: 2,
            dec_dim: 16,
            dec_out_channels: 6,
            up_channels: 8,
            triplane_channels: 8,
            mlp_hidden: 16,
            qk_norm: true,
        }
    }

    #[test]
    fn kl_closed_forms() {
        let zeros = Tensor::zeros(&[3, 2, 2, 2]);
        let lat = TriLatent {
            mu: zeros.clone(),
            logvar: zeros.clone(),
        };
        assert_eq!(lat.kl_loss().item(), 0.0);

        let ones = Tensor::full(&[3, 2, 2, 2], 1.0);
        let lat = TriLatent {
            mu: ones,
            logvar: zeros,
        };
        // mu=1, logvar=0: 0.5 per element
        assert!((lat.kl_loss().item() - 0.5).abs() < 1e-12);

        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let lat = TriLatent {
                mu: Tensor::from_vec(rng.normal_vec(24), &[3, 2, 2, 2]),
                logvar: Tensor::from_vec(rng.normal_vec(24), &[3, 2, 2, 2]),
            };
            assert!(lat.kl_loss().item() >= 0.0, "KL must be non-negative");
        }
    }

    #[test]
    fn reparameterize_clamped_logvar_returns_mu() {
        let mut rng = Rng::new(5);
        let mu = Tensor::from_vec(rng.normal_vec(24), &[3, 2, 2, 2]);
        let lat = TriLatent {
            mu: mu.clone(),
            logvar: Tensor::full(&[3, 2, 2, 2], -30.0),
        };
        let z = lat.sample(&mut rng);
        for (a, b) in z.to_vec().iter().zip(mu.to_vec()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn reparameterize_monte_carlo_mean() {
        let mut rng = Rng::new(6);
        let mu_val = 0.7;
        let sigma = 0.5f64; // logvar = 2 ln sigma
        let lat = TriLatent {
            mu: Tensor::full(&[1, 1, 1, 1], mu_val),
            logvar: Tensor::full(&[1, 1, 1, 1], 2.0 * sigma.ln()),
        };
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += lat.sample(&mut rng).item();
        }
        let mean = sum / n as f64;
        let bound = 3.0 * sigma / (n as f64).sqrt();
        assert!((mean - mu_val).abs() < bound, "{mean} vs {mu_val} +- {bound}");
    }

    #[test]
    fn encode_shapes_and_brightness_contract() {
        let cfg = tiny_cfg();
        let model = VaeModel::new(cfg.clone(), 11).unwrap();
        let mut rng = Rng::new(2);
        let n = cfg.image_size * cfg.image_size;
        let rgb: Vec<f32> = (0..n * 3).map(|_| rng.uniform() as f32 * 0.4).collect();
        let cam = CameraPose::look_at(vec3(0.0, 1.0, 2.0), Vec3::ZERO, 18.0, cfg.image_size, cfg.image_size);
        let v1 = view_input_tensor(&rgb, None, &cam, cfg.image_size, cfg.image_size).unwrap();
        let lat1 = no_grad(|| model.encode(&v1)).unwrap();
        let side = cfg.latent_side();
        assert_eq!(lat1.mu.shape(), &[3, 4, side, side]);
        assert_eq!(lat1.logvar.shape(), &[3, 4, side, side]);

        // doubled brightness: different mu, identical shape metadata
        let rgb2: Vec<f32> = rgb.iter().map(|v| v * 2.0).collect();
        let v2 = view_input_tensor(&rgb2, None, &cam, cfg.image_size, cfg.image_size).unwrap();
        let lat2 = no_grad(|| model.encode(&v2)).unwrap();
        assert_eq!(lat1.mu.shape(), lat2.mu.shape());
        assert!(lat1.mu.to_vec() != lat2.mu.to_vec());
    }

    #[test]
    fn non_divisible_image_size_is_rejected() {
        let cfg = tiny_cfg();
        let model = VaeModel::new(cfg, 1).unwrap();
        let bad = Tensor::zeros(&[1, 9, 30, 30]);
        assert!(model.encode(&bad).is_err());
    }

    #[test]
    fn multi_view_encoder_supports_v2() {
        let mut cfg = tiny_cfg();
        cfg.in_views = 2;
        let model = VaeModel::new(cfg.clone(), 3).unwrap();
        let views = Tensor::from_vec(
            Rng::new(4).normal_vec(2 * 9 * 32 * 32),
            &[2, 9, 32, 32],
        );
        let lat = no_grad(|| model.encode(&views)).unwrap();
        assert_eq!(lat.mu.shape(), &[3, 4, 4, 4]);
    }

    #[test]
    fn end_to_end_shape_pipeline_mini() {
        let cfg = tiny_cfg();
        let model = VaeModel::new(cfg.clone(), 7).unwrap();
        let mut rng = Rng::new(8);
        let views = Tensor::from_vec(rng.normal_vec(9 * 32 * 32), &[1, 9, 32, 32]);
        let tp = no_grad(|| {
            let lat = model.encode(&views).unwrap();
            let z = lat.sample(&mut rng);
            model.decode(&z)
        });
        assert_eq!(tp.planes.shape(), &[3, cfg.triplane_channels, 16, 16]);
    }

    #[test]
    fn full_encode_decode_render_gradcheck_miniature() {
        // end-to-end gradient integrity on a miniature config
        let mut cfg = tiny_cfg();
        cfg.image_size = 32;
        let model = VaeModel::new(cfg.clone(), 13).unwrap();
        let mut rng = Rng::new(14);
        let views = Tensor::from_vec(rng.normal_vec(9 * 32 * 32), &[1, 9, 32, 32]);
        let eps = Tensor::from_vec(rng.normal_vec(3 * 4 * 4 * 4), &[3, 4, 4, 4]);
        let cam = CameraPose::look_at(vec3(0.4, 0.9, 1.9), Vec3::ZERO, 10.0, 8, 8);
        let rays = rays_from_camera(&cam, Some(&[(2, 3), (5, 5)])).unwrap();
        let samples = stratified_samples(&rays, 1.2, 3.2, 4, &mut rng, false).unwrap();

        let f = || {
            let lat = model.encode(&views).unwrap();
            let z = lat.sample_with_noise(&eps);
            let tp = model.decode(&z);
            let out = volume_render(&tp, &model.field_mlp, &rays, &samples, [1.0; 3]);
            out.rgb.mul(&out.rgb).mean_all().add(&lat.kl_loss().scale(1e-3))
        };
        let entries: Vec<(String, Tensor)> = model.params.entries().to_vec();
        let params: Vec<(&str, &Tensor)> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let report = gradcheck_subset("vae_end_to_end", f, &params, 1e-5, 1e-4, 2, &mut rng);
        assert!(report.passed, "{report}");
    }
}
