//! Stage-1 training loop: alternating generator/discriminator steps on
//! random crops of input and novel views, with held-out-view PSNR
//! evaluation and a per-scene mean-image baseline.

use std::path::Path;
use std::time::Instant;

use crate::datagen::DatasetContainer;
use crate::error::{Error, Result};
use crate::field::{volume_render, TriPlane};
use crate::geometry::{rays_from_camera, stratified_samples, CameraPose};
use crate::metrics::psnr;
use crate::rng::Rng;
use crate::tensor::optim::{AdamW, AdamWConfig};
use crate::tensor::{no_grad, Tensor};
use crate::vae::{
    vae_loss, DiscriminatorPair, LossWeights, NovelDiscMode, RenderedCrop, VaeConfig, VaeLossReport,
    VaeModel,
};

use super::checkpoint::Checkpoint;

pub const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Clone)]
pub struct VaeTrainSettings {
    pub seed: u64,
    pub iters: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub crop: usize,
    pub samples_per_ray: usize,
    pub near: f64,
    pub far: f64,
    pub weights: LossWeights,
    pub gan_warmup: u64,
    pub novel_mode: NovelDiscMode,
    pub disc_base: usize,
    /// First `train_views` views per scene are trainable; the rest are
    /// held out for novel-view PSNR.
    pub train_views: usize,
    pub log_every: u64,
    pub ckpt_every: u64,
}

impl Default for VaeTrainSettings {
    fn default() -> Self {
        VaeTrainSettings {
            seed: 0,
            iters: 2000,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1e-6,
            crop: 16,
            samples_per_ray: 12,
            near: 1.2,
            far: 3.2,
            weights: LossWeights::default(),
            gan_warmup: 1000,
            novel_mode: NovelDiscMode::InputVsNovel,
            disc_base: 8,
            train_views: 4,
            log_every: 50,
            ckpt_every: 0,
        }
    }
}

/// Render one full view of a tri-plane field, in chunks of rays.
pub fn render_image(
    tp: &TriPlane,
    mlp: &crate::field::FieldMlp,
    cam: &CameraPose,
    samples_per_ray: usize,
    near: f64,
    far: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    no_grad(|| {
        let rays = rays_from_camera(cam, None)?;
        let n = rays.len();
        let mut rgb = vec![0.0; n * 3];
        let mut depth = vec![0.0; n];
        let chunk = 1024;
        let mut start = 0;
        let mut probe = Rng::new(0); // unused when jitter is off
        while start < n {
            let len = chunk.min(n - start);
            let sub = crate::geometry::RayBundle {
                origins: rays.origins[start..start + len].to_vec(),
                directions: rays.directions[start..start + len].to_vec(),
                plucker: rays.plucker[start..start + len].to_vec(),
                pixels: rays.pixels[start..start + len].to_vec(),
            };
            let samples = stratified_samples(&sub, near, far, samples_per_ray, &mut probe, false)?;
            let out = volume_render(tp, mlp, &sub, &samples, BACKGROUND);
            rgb[start * 3..(start + len) * 3].copy_from_slice(&out.rgb.to_vec());
            depth[start..start + len].copy_from_slice(&out.depth.to_vec());
            start += len;
        }
        Ok((rgb, depth))
    })
}

/// Extract a [1, 3, S, S] tensor crop from a stored f32 image.
fn image_crop_tensor(img: &[f32], width: usize, x0: usize, y0: usize, s: usize) -> Tensor {
    let mut data = vec![0.0f64; 3 * s * s];
    for dy in 0..s {
        for dx in 0..s {
            let src = ((y0 + dy) * width + (x0 + dx)) * 3;
            for ch in 0..3 {
                data[ch * s * s + dy * s + dx] = img[src + ch] as f64;
            }
        }
    }
    Tensor::from_vec(data, &[1, 3, s, s])
}

pub struct VaeTrainer {
    pub model: VaeModel,
    pub discs: DiscriminatorPair,
    pub gen_opt: AdamW,
    pub disc_opt: AdamW,
    pub dataset: DatasetContainer,
    pub settings: VaeTrainSettings,
    pub rng: Rng,
    pub step: u64,
    /// (step, wall_ms, report) per step.
    pub log: Vec<(u64, f64, VaeLossReport)>,
}

impl VaeTrainer {
    pub fn new(cfg: VaeConfig, settings: VaeTrainSettings, dataset: DatasetContainer) -> Result<VaeTrainer> {
        if dataset.width != cfg.image_size || dataset.height != cfg.image_size {
            return Err(Error::Config(format!(
                "dataset images are {}x{}, vae expects {}",
                dataset.width, dataset.height, cfg.image_size
            )));
        }
        if settings.train_views <= cfg.in_views {
            return Err(Error::Config(format!(
                "train_views {} must exceed the {} encoder input view(s) to leave a novel view",
                settings.train_views, cfg.in_views
            )));
        }
        if settings.train_views > dataset.views_per_scene {
            return Err(Error::Config(format!(
                "train_views {} exceeds the dataset's {} views per scene",
                settings.train_views, dataset.views_per_scene
            )));
        }
        if settings.crop > cfg.image_size {
            return Err(Error::Config(format!(
                "crop {} larger than image {}",
                settings.crop, cfg.image_size
            )));
        }
        let model = VaeModel::new(cfg, settings.seed)?;
        let discs = DiscriminatorPair::new(settings.crop, settings.disc_base, settings.novel_mode, settings.seed ^ 0xD15C);
        let adam = AdamWConfig {
            lr: settings.lr,
            beta1: settings.beta1,
            beta2: settings.beta2,
            eps: 1e-8,
            weight_decay: settings.weight_decay,
        };
        let gen_opt = AdamW::new(adam, &model.params.tensors());
        let disc_opt = AdamW::new(adam, &discs.params.tensors());
        let rng = Rng::new(settings.seed.wrapping_add(0x7EA1));
        Ok(VaeTrainer {
            model,
            discs,
            gen_opt,
            disc_opt,
            dataset,
            settings,
            rng,
            step: 0,
            log: Vec::new(),
        })
    }

    fn gan_active(&self) -> bool {
        self.settings.weights.lambda_gan > 0.0
            && self.step >= self.settings.gan_warmup
            && self.settings.novel_mode != NovelDiscMode::Off
    }

    /// Stack the encoder input tensor for chosen views of a scene.
    fn encoder_input(&self, scene_idx: usize, views: &[usize]) -> Result<Tensor> {
        let scene = &self.dataset.scenes[scene_idx];
        let mut parts = Vec::with_capacity(views.len());
        for &v in views {
            let depth = if self.model.cfg.use_depth {
                Some(scene.depths[v].as_slice())
            } else {
                None
            };
            parts.push(crate::vae::view_input_tensor(
                &scene.images[v],
                depth,
                &scene.poses[v],
                self.dataset.width,
                self.dataset.height,
            )?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::concat(&refs, 0))
    }

    /// Render an SxS crop of a view through the current field.
    fn render_crop(
        &mut self,
        tp: &TriPlane,
        cam: &CameraPose,
        x0: usize,
        y0: usize,
    ) -> Result<(Tensor, Tensor)> {
        let s = self.settings.crop;
        let pixels: Vec<(usize, usize)> = (0..s * s).map(|i| (x0 + i % s, y0 + i / s)).collect();
        let rays = rays_from_camera(cam, Some(&pixels))?;
        let samples = stratified_samples(
            &rays,
            self.settings.near,
            self.settings.far,
            self.settings.samples_per_ray,
            &mut self.rng,
            true,
        )?;
        let out = volume_render(tp, &self.model.field_mlp, &rays, &samples, BACKGROUND);
        // [S*S, 3] -> [1, 3, S, S]
        let rgb = out.rgb.reshape(&[s, s, 3]).permute(&[2, 0, 1]).reshape(&[1, 3, s, s]);
        let depth = out.depth.reshape(&[s, s]);
        Ok((rgb, depth))
    }

    pub fn train_step(&mut self) -> Result<VaeLossReport> {
        let t0 = Instant::now();
        let v_in = self.model.cfg.in_views;
        let scene_idx = self.rng.below(self.dataset.n_scenes());
        let mut pool: Vec<usize> = (0..self.settings.train_views).collect();
        self.rng.shuffle(&mut pool);
        let input_views: Vec<usize> = pool[..v_in].to_vec();
        let novel_view = pool[v_in];

        let views = self.encoder_input(scene_idx, &input_views)?;
        let latent = self.model.encode(&views)?;
        let z = latent.sample(&mut self.rng);
        let tp = self.model.decode(&z);

        let s = self.settings.crop;
        let max0 = self.dataset.width - s;
        let (ix, iy) = (self.rng.below(max0 + 1), self.rng.below(max0 + 1));
        let (nx, ny) = (self.rng.below(max0 + 1), self.rng.below(max0 + 1));

        let scene = &self.dataset.scenes[scene_idx];
        let in_cam = scene.poses[input_views[0]].clone();
        let novel_cam = scene.poses[novel_view].clone();
        let in_img = scene.images[input_views[0]].clone();
        let novel_img = scene.images[novel_view].clone();

        let (in_rgb, in_depth) = self.render_crop(&tp, &in_cam, ix, iy)?;
        let (novel_rgb, novel_depth) = self.render_crop(&tp, &novel_cam, nx, ny)?;
        let in_target = image_crop_tensor(&in_img, self.dataset.width, ix, iy, s);
        let novel_target = image_crop_tensor(&novel_img, self.dataset.width, nx, ny, s);

        let crops = [
            RenderedCrop {
                rgb: in_rgb.clone(),
                depth: in_depth,
                target: in_target.clone(),
            },
            RenderedCrop {
                rgb: novel_rgb.clone(),
                depth: novel_depth,
                target: novel_target,
            },
        ];
        let gan_on = self.gan_active();
        let effective = LossWeights {
            lambda_gan: if gan_on { self.settings.weights.lambda_gan } else { 0.0 },
            ..self.settings.weights
        };
        let disc_args = if gan_on {
            Some((&self.discs, &in_rgb, &novel_rgb))
        } else {
            None
        };
        let (total, report) = vae_loss(&crops, &latent, disc_args, &effective)?;

        if !report.total.is_finite() {
            return Err(Error::NumericDivergence(format!(
                "vae loss became non-finite at step {}",
                self.step
            )));
        }
        self.model.params.zero_grads();
        total.backward();
        self.gen_opt.step(&self.model.params.tensors());

        if gan_on {
            self.discs.params.zero_grads();
            let (d_in, d_novel) = self
                .discs
                .d_losses(&in_target, &in_rgb.detach(), &novel_rgb.detach());
            let d_total = match d_novel {
                Some(dn) => d_in.add(&dn),
                None => d_in,
            };
            if !d_total.item().is_finite() {
                return Err(Error::NumericDivergence(format!(
                    "discriminator loss became non-finite at step {}",
                    self.step
                )));
            }
            d_total.backward();
            self.disc_opt.step(&self.discs.params.tensors());
        }

        self.step += 1;
        let wall_ms = t0.elapsed().as_secs_f64() * 1000.0;
        self.log.push((self.step, wall_ms, report));
        Ok(report)
    }

    /// Run up to `n` steps, optionally logging CSV rows and writing
    /// checkpoints into `run_dir`.
    pub fn run(&mut self, n: u64, run_dir: Option<&Path>) -> Result<()> {
        let mut csv = String::from("step,wall_ms,total,render,geo,kl,gan\n");
        for _ in 0..n {
            let report = match self.train_step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), Error::NumericDivergence(msg)) = (run_dir, &e) {
                        let dump = format!(
                            "step={}\nerror={}\nrecent_losses={:?}\n",
                            self.step,
                            msg,
                            self.log.iter().rev().take(5).map(|(_, _, r)| r.total).collect::<Vec<_>>()
                        );
                        let _ = std::fs::write(dir.join("divergence_dump.txt"), dump);
                    }
                    return Err(e);
                }
            };
            let (step, wall, _) = *self.log.last().unwrap();
            if self.settings.log_every > 0 && step % self.settings.log_every == 0 {
                csv.push_str(&format!(
                    "{step},{wall:.3},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                    report.total, report.render, report.geo, report.kl, report.gan
                ));
            }
            if let (Some(dir), true) = (
                run_dir,
                self.settings.ckpt_every > 0 && self.step % self.settings.ckpt_every == 0,
            ) {
                self.save(&dir.join(format!("vae_{:06}.tlck", self.step)))?;
            }
        }
        if let Some(dir) = run_dir {
            std::fs::write(dir.join("vae_losses.csv"), csv)?;
            self.save(&dir.join("vae_final.tlck"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint {
            step: self.step,
            rng_state: self.rng.state(),
            extras: vec![],
            ..Default::default()
        };
        ckpt.capture_params(&self.model.params);
        ckpt.capture_params(&self.discs.params);
        ckpt.capture_optimizer(&self.gen_opt);
        ckpt.capture_optimizer(&self.disc_opt);
        super::checkpoint::save_checkpoint(path, &ckpt)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_params(&self.model.params)?;
        ckpt.restore_params(&self.discs.params)?;
        ckpt.restore_optimizer(0, &mut self.gen_opt)?;
        ckpt.restore_optimizer(1, &mut self.disc_opt)?;
        self.rng.set_state(ckpt.rng_state);
        self.step = ckpt.step;
        Ok(())
    }

    /// Reconstruct every scene from its first V train views and measure
    /// PSNR on (a) those input views, (b) the held-out views, plus the
    /// per-scene mean-image baseline on the held-out views.
    pub fn evaluate_psnr(&self) -> Result<PsnrEval> {
        let v_in = self.model.cfg.in_views;
        let (w, h) = (self.dataset.width, self.dataset.height);
        let mut input_psnrs = Vec::new();
        let mut novel_psnrs = Vec::new();
        let mut baseline_psnrs = Vec::new();
        for scene_idx in 0..self.dataset.n_scenes() {
            let input_views: Vec<usize> = (0..v_in).collect();
            let views = self.encoder_input(scene_idx, &input_views)?;
            let tp = no_grad(|| -> Result<TriPlane> {
                let latent = self.model.encode(&views)?;
                Ok(self.model.decode(&latent.mu))
            })?;
            let scene = &self.dataset.scenes[scene_idx];
            for &v in &input_views {
                let (rgb, _) = render_image(
                    &tp,
                    &self.model.field_mlp,
                    &scene.poses[v],
                    self.settings.samples_per_ray,
                    self.settings.near,
                    self.settings.far,
                )?;
                let target: Vec<f64> = scene.images[v].iter().map(|&x| x as f64).collect();
                input_psnrs.push(psnr(&rgb, &target, 1.0)?);
            }
            // per-scene mean image over the train views
            let mut mean_img = vec![0.0f64; w * h * 3];
            for v in 0..self.settings.train_views {
                for (m, &x) in mean_img.iter_mut().zip(scene.images[v].iter()) {
                    *m += x as f64;
                }
            }
            for m in &mut mean_img {
                *m /= self.settings.train_views as f64;
            }
            for v in self.settings.train_views..self.dataset.views_per_scene {
                let (rgb, _) = render_image(
                    &tp,
                    &self.model.field_mlp,
                    &scene.poses[v],
                    self.settings.samples_per_ray,
                    self.settings.near,
                    self.settings.far,
                )?;
                let target: Vec<f64> = scene.images[v].iter().map(|&x| x as f64).collect();
                novel_psnrs.push(psnr(&rgb, &target, 1.0)?);
                baseline_psnrs.push(psnr(&mean_img, &target, 1.0)?);
            }
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        Ok(PsnrEval {
            input_psnr: mean(&input_psnrs),
            novel_psnr: mean(&novel_psnrs),
            baseline_psnr: mean(&baseline_psnrs),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PsnrEval {
    pub input_psnr: f64,
    pub novel_psnr: f64,
    /// Per-scene mean-image predictor evaluated on the held-out views.
    pub baseline_psnr: f64,
}
