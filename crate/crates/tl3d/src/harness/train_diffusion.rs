//! Stage-2 training loop: freeze the stage-1 encoder, standardize the
//! training latents to unit variance, and fit the chosen denoiser with
//! the score-based or flow-matching objective under condition dropout.

use std::path::Path;
use std::time::Instant;

use crate::conditioning::{ConditionKind, ConditionSet};
use crate::datagen::DatasetContainer;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::optim::{AdamW, AdamWConfig};
use crate::tensor::{no_grad, Tensor};
use crate::vae::VaeModel;

use super::checkpoint::Checkpoint;
use crate::diffusion::{
    fm_loss, score_loss_vp, standardization_scale, DenoiserConfig, DenoiserModel, DiffusionItem,
    LatentShape, ScheduleKind,
};

#[derive(Debug, Clone)]
pub struct DiffusionTrainSettings {
    pub seed: u64,
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub log_every: u64,
}

impl Default for DiffusionTrainSettings {
    fn default() -> Self {
        DiffusionTrainSettings {
            seed: 0,
            iters: 2000,
            batch: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
            dropout_p: 0.15,
            log_every: 50,
        }
    }
}

/// What conditions each latent during training.
pub enum CondSource {
    None,
    Caption(String),
    Image(Vec<f32>, usize, usize),
}

/// Encode every scene with the frozen encoder (posterior mean), compute
/// the standardization scale from the first `cap` latents, and return the
/// scaled latents plus condition sources.
pub fn latents_from_vae(
    vae: &VaeModel,
    dataset: &DatasetContainer,
    cond_kind: ConditionKind,
    cap: usize,
) -> Result<(Vec<Tensor>, Vec<CondSource>, f64)> {
    let v_in = vae.cfg.in_views;
    let mut latents = Vec::with_capacity(dataset.n_scenes());
    let mut conds = Vec::with_capacity(dataset.n_scenes());
    for scene in &dataset.scenes {
        let mut parts = Vec::with_capacity(v_in);
        for v in 0..v_in {
            let depth = if vae.cfg.use_depth {
                Some(scene.depths[v].as_slice())
            } else {
                None
            };
            parts.push(crate::vae::view_input_tensor(
                &scene.images[v],
                depth,
                &scene.poses[v],
                dataset.width,
                dataset.height,
            )?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let views = Tensor::concat(&refs, 0);
        let mu = no_grad(|| -> Result<Tensor> { Ok(vae.encode(&views)?.mu) })?;
        latents.push(mu.detach());
        conds.push(match cond_kind {
            ConditionKind::None => CondSource::None,
            ConditionKind::Text => CondSource::Caption(scene.caption.clone()),
            ConditionKind::Image | ConditionKind::ImagePlusPatches => {
                CondSource::Image(scene.images[0].clone(), dataset.width, dataset.height)
            }
        });
    }
    let scale = standardization_scale(&latents[..latents.len().min(cap)]);
    for l in &mut latents {
        *l = l.scale(scale).detach();
    }
    Ok((latents, conds, scale))
}

pub struct DiffusionTrainer {
    pub model: DenoiserModel,
    pub opt: AdamW,
    pub latents: Vec<Tensor>,
    pub conds: Vec<CondSource>,
    pub latent_scale: f64,
    pub settings: DiffusionTrainSettings,
    pub rng: Rng,
    pub step: u64,
    pub log: Vec<(u64, f64, f64)>,
}

impl DiffusionTrainer {
    pub fn new(
        cfg: &DenoiserConfig,
        latents: Vec<Tensor>,
        conds: Vec<CondSource>,
        latent_scale: f64,
        settings: DiffusionTrainSettings,
    ) -> Result<DiffusionTrainer> {
        if latents.is_empty() || latents.len() != conds.len() {
            return Err(Error::InvalidArg(format!(
                "need matching non-empty latents/conds, got {}/{}",
                latents.len(),
                conds.len()
            )));
        }
        let dims = latents[0].shape().to_vec();
        if dims.len() != 4 || dims[0] != 3 || dims[2] != dims[3] {
            return Err(Error::InvalidArg(format!(
                "latents must be [3, c, h, h], got {dims:?}"
            )));
        }
        let latent = LatentShape {
            channels: dims[1],
            side: dims[2],
        };
        let model = DenoiserModel::new(cfg, latent, settings.seed)?;
        let opt = AdamW::new(
            AdamWConfig {
                lr: settings.lr,
                beta1: settings.beta1,
                beta2: settings.beta2,
                eps: 1e-8,
                weight_decay: settings.weight_decay,
            },
            &model.params.tensors(),
        );
        let rng = Rng::new(settings.seed.wrapping_add(0xD1FF));
        Ok(DiffusionTrainer {
            model,
            opt,
            latents,
            conds,
            latent_scale,
            settings,
            rng,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn condition_for(&self, idx: usize, rng: &mut Rng, dropout: f64) -> ConditionSet {
        // unconditional models never look at the sources
        if self.model.conditioner.kind == ConditionKind::None {
            return self.model.conditioner.null_condition();
        }
        let cond = match &self.conds[idx] {
            CondSource::None => return self.model.conditioner.null_condition(),
            CondSource::Caption(text) => self.model.conditioner.embed_text(text),
            CondSource::Image(rgb, w, h) => self.model.conditioner.embed_image(rgb, *w, *h),
        };
        self.model.conditioner.drop_condition(cond, rng, dropout)
    }

    pub fn train_step(&mut self) -> Result<f64> {
        let t0 = Instant::now();
        let mut picks = Vec::with_capacity(self.settings.batch);
        for _ in 0..self.settings.batch {
            picks.push(self.rng.below(self.latents.len()));
        }
        let mut rng = std::mem::replace(&mut self.rng, Rng::new(0));
        let conds: Vec<ConditionSet> = picks
            .iter()
            .map(|&i| self.condition_for(i, &mut rng, self.settings.dropout_p))
            .collect();
        let items: Vec<DiffusionItem> = picks
            .iter()
            .zip(&conds)
            .map(|(&i, c)| DiffusionItem {
                x0: &self.latents[i],
                cond: c,
            })
            .collect();
        let loss = match self.model.schedule.kind {
            ScheduleKind::LinearVp => score_loss_vp(&self.model, &items, &mut rng)?,
            ScheduleKind::RectifiedFlow => fm_loss(&self.model, &items, &mut rng)?,
        };
        self.rng = rng;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NumericDivergence(format!(
                "diffusion loss became non-finite at step {}",
                self.step
            )));
        }
        self.model.params.zero_grads();
        loss.backward();
        self.opt.step(&self.model.params.tensors());
        self.step += 1;
        self.log.push((self.step, t0.elapsed().as_secs_f64() * 1000.0, value));
        Ok(value)
    }

    pub fn run(&mut self, n: u64, run_dir: Option<&Path>) -> Result<()> {
        let mut csv = String::from("step,wall_ms,loss\n");
        for _ in 0..n {
            match self.train_step() {
                Ok(_) => {}
                Err(e) => {
                    if let (Some(dir), Error::NumericDivergence(msg)) = (run_dir, &e) {
                        let dump = format!("step={}\nerror={msg}\n", self.step);
                        let _ = std::fs::write(dir.join("divergence_dump.txt"), dump);
                    }
                    return Err(e);
                }
            }
            let (step, wall, loss) = *self.log.last().unwrap();
            if self.settings.log_every > 0 && step % self.settings.log_every == 0 {
                csv.push_str(&format!("{step},{wall:.3},{loss:.6}\n"));
            }
        }
        if let Some(dir) = run_dir {
            std::fs::write(dir.join("diffusion_losses.csv"), csv)?;
            self.save(&dir.join("diffusion_final.tlck"))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ckpt = Checkpoint {
            step: self.step,
            rng_state: self.rng.state(),
            extras: vec![("latent_scale".into(), self.latent_scale)],
            ..Default::default()
        };
        ckpt.capture_params(&self.model.params);
        ckpt.capture_optimizer(&self.opt);
        super::checkpoint::save_checkpoint(path, &ckpt)
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore_params(&self.model.params)?;
        ckpt.restore_optimizer(0, &mut self.opt)?;
        self.rng.set_state(ckpt.rng_state);
        self.step = ckpt.step;
        self.latent_scale = ckpt.extra("latent_scale").unwrap_or(self.latent_scale);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DitConfig, UnetConfig};

    pub(crate) fn toy_latents(n: usize, channels: usize, side: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| Tensor::from_vec(rng.normal_vec(3 * channels * side * side), &[3, channels, side, side]))
            .collect()
    }

    pub(crate) fn toy_cfg(schedule: ScheduleKind, cond: ConditionKind) -> DenoiserConfig {
        DenoiserConfig {
            schedule,
            use_unet: false,
            unet: UnetConfig {
                base: 8,
                mid: 12,
                time_dim: 12,
            },
            dit: DitConfig {
                dim: 24,
                layers: 2,
                heads: 2,
                use_pos: true,
            },
            cond_kind: cond,
            cond_dim: 24,
            image_scale: 1.0,
            geometric_mixing: schedule == ScheduleKind::LinearVp,
        }
    }

    #[test]
    fn loss_decreases_on_fixed_latents() {
        let latents = toy_latents(4, 2, 4, 10);
        let conds = (0..4).map(|_| CondSource::None).collect();
        let mut tr = DiffusionTrainer::new(
            &toy_cfg(ScheduleKind::RectifiedFlow, ConditionKind::None),
            latents,
            conds,
            1.0,
            DiffusionTrainSettings {
                iters: 0,
                batch: 4,
                lr: 3e-3,
                dropout_p: 0.0,
                ..DiffusionTrainSettings::default()
            },
        )
        .unwrap();
        let early: f64 = (0..10).map(|_| tr.train_step().unwrap()).sum::<f64>() / 10.0;
        for _ in 0..180 {
            tr.train_step().unwrap();
        }
        let late: f64 = (0..10).map(|_| tr.train_step().unwrap()).sum::<f64>() / 10.0;
        assert!(late < early, "no learning: {early} -> {late}");
    }

    #[test]
    fn resume_is_bit_exact() {
        let latents = toy_latents(3, 2, 4, 11);
        let conds = (0..3).map(|i| CondSource::Caption(format!("item {i}"))).collect();
        let make = |latents: Vec<Tensor>, conds| {
            DiffusionTrainer::new(
                &toy_cfg(ScheduleKind::LinearVp, ConditionKind::Text),
                latents,
                conds,
                1.0,
                DiffusionTrainSettings {
                    batch: 2,
                    ..DiffusionTrainSettings::default()
                },
            )
            .unwrap()
        };
        let mut full = make(latents.clone(), (0..3).map(|i| CondSource::Caption(format!("item {i}"))).collect());
        for _ in 0..3 {
            full.train_step().unwrap();
        }
        let dir = std::env::temp_dir().join("tl3d_diff_resume");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mid.tlck");
        full.save(&path).unwrap();
        let ahead: Vec<u64> = (0..4).map(|_| full.train_step().unwrap().to_bits()).collect();

        let mut resumed = make(latents, conds);
        let ckpt = super::super::checkpoint::load_checkpoint(&path).unwrap();
        resumed.restore(&ckpt).unwrap();
        let replay: Vec<u64> = (0..4).map(|_| resumed.train_step().unwrap().to_bits()).collect();
        assert_eq!(ahead, replay);
    }

    #[test]
    fn unconditional_runs_ignore_caption_content() {
        // conditioning disabled end-to-end: loss trace is invariant to
        // captions under fixed seeds
        let latents = toy_latents(3, 2, 4, 12);
        let cfg = toy_cfg(ScheduleKind::RectifiedFlow, ConditionKind::None);
        let run = |texts: Vec<String>| {
            let conds = texts.into_iter().map(CondSource::Caption).collect();
            // kind None: condition_for returns the null condition regardless
            let mut tr = DiffusionTrainer::new(
                &cfg,
                latents.clone(),
                conds,
                1.0,
                DiffusionTrainSettings::default(),
            )
            .unwrap();
            (0..5).map(|_| tr.train_step().unwrap().to_bits()).collect::<Vec<_>>()
        };
        let a = run(vec!["a".into(), "b".into(), "c".into()]);
        let b = run(vec!["xxxx".into(), "yyyy".into(), "zzzz".into()]);
        assert_eq!(a, b);
    }
}
