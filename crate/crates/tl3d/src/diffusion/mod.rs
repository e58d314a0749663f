//! Latent diffusion over tri-latents: continuous-time schedules
//! (variance-preserving linear and rectified flow), v/velocity targets,
//! geometric mixing toward the standard-normal prior, training losses,
//! classifier-free guidance, and ODE/DDIM-style samplers.
//!
//! Conventions: z_t = a(t) x0 + b(t) eps. The v target is
//! a eps - b x0 (VP, where a^2 + b^2 = 1) and the flow-matching velocity
//! target is eps - x0. Both parameterizations invert without division:
//! VP x0 = a z - b v, eps = b z + a v; FM x0 = z - t v, eps = z + (1-t) v.
//!
//! Geometric mixing blends the learned noise prediction with the analytic
//! standard-normal term sigma_t(1-alpha) z_t. In v-space that analytic
//! term is exactly v = 0, so the mixed prediction is alpha times the raw
//! network output; the noise-space closed forms at alpha in {0,1} are
//! recovered exactly by [`DenoiserModel::eps_theta`].

mod dit;
mod sample;
mod unet;

pub use dit::{DitConfig, DitDenoiser};
pub use sample::{sample, SampleOptions, SamplerKind};
pub use unet::{UnetConfig, UnetDenoiser};

use crate::conditioning::{ConditionKind, ConditionSet, Conditioner};
use crate::error::{Error, Result};
use crate::nn::{Init, ParamSet};
use crate::rng::Rng;
use crate::tensor::{sigmoid_scalar, Tensor};

/// VP linear-beta endpoints (continuous-time convention: beta interpolates
/// linearly over [0,1] between 1e-4 and 2e-2 scaled by 1000 steps).
const BETA_MIN: f64 = 0.1;
const BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LinearVp,
    RectifiedFlow,
}

impl ScheduleKind {
    pub fn parse(s: &str) -> Result<ScheduleKind> {
        match s {
            "linear_vp" => Ok(ScheduleKind::LinearVp),
            "rectified_flow" => Ok(ScheduleKind::RectifiedFlow),
            other => Err(Error::Config(format!(
                "unknown schedule {other:?} (expected linear_vp|rectified_flow)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> NoiseSchedule {
        NoiseSchedule { kind }
    }

    /// (a, b) with z_t = a x0 + b eps.
    pub fn coeffs(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::LinearVp => {
                let integral = BETA_MIN * t + 0.5 * (BETA_MAX - BETA_MIN) * t * t;
                let alpha_bar = (-integral).exp();
                (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt())
            }
            ScheduleKind::RectifiedFlow => (1.0 - t, t),
        }
    }

    /// Noise std sigma_t (= b under both conventions here).
    pub fn sigma(&self, t: f64) -> f64 {
        self.coeffs(t).1
    }

    /// (da/dt, db/dt) for ODE integration.
    pub fn derivs(&self, t: f64) -> (f64, f64) {
        match self.kind {
            ScheduleKind::LinearVp => {
                let beta = BETA_MIN + (BETA_MAX - BETA_MIN) * t;
                let (a, b) = self.coeffs(t);
                let da = -0.5 * beta * a;
                let db = if b > 1e-12 { 0.5 * beta * a * a / b } else { 0.0 };
                (da, db)
            }
            ScheduleKind::RectifiedFlow => (-1.0, 1.0),
        }
    }
}

/// One diffused training point.
pub struct NoiseState {
    pub x0: Tensor,
    pub eps: Tensor,
    pub t: f64,
    pub z_t: Tensor,
    /// Regression target: v for VP, velocity for rectified flow.
    pub target: Tensor,
}

/// Diffuse x0 to time t with fresh noise.
pub fn forward_diffuse(
    x0: &Tensor,
    t: f64,
    rng: &mut Rng,
    schedule: &NoiseSchedule,
) -> Result<NoiseState> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArg(format!("diffusion time {t} outside [0,1]")));
    }
    let eps = Tensor::from_vec(rng.normal_vec(x0.numel()), x0.shape());
    Ok(forward_diffuse_with_noise(x0, &eps, t, schedule))
}

pub fn forward_diffuse_with_noise(
    x0: &Tensor,
    eps: &Tensor,
    t: f64,
    schedule: &NoiseSchedule,
) -> NoiseState {
    let (a, b) = schedule.coeffs(t);
    let z_t = x0.scale(a).add(&eps.scale(b));
    let target = match schedule.kind {
        ScheduleKind::LinearVp => eps.scale(a).sub(&x0.scale(b)),
        ScheduleKind::RectifiedFlow => eps.sub(x0),
    };
    NoiseState {
        x0: x0.clone(),
        eps: eps.clone(),
        t,
        z_t,
        target,
    }
}

/// Recover (x0, eps) estimates from a model prediction without division.
pub fn decompose_prediction(
    schedule: &NoiseSchedule,
    z_t: &Tensor,
    t: f64,
    pred: &Tensor,
) -> (Tensor, Tensor) {
    match schedule.kind {
        ScheduleKind::LinearVp => {
            let (a, b) = schedule.coeffs(t);
            let x0 = z_t.scale(a).sub(&pred.scale(b));
            let eps = z_t.scale(b).add(&pred.scale(a));
            (x0, eps)
        }
        ScheduleKind::RectifiedFlow => {
            let x0 = z_t.sub(&pred.scale(t));
            let eps = z_t.add(&pred.scale(1.0 - t));
            (x0, eps)
        }
    }
}

/// Denoiser backbones; both consume z_t as [B, 3, c, h, w] plus a scalar
/// time and a condition, and emit same-shape predictions.
pub enum Backbone {
    Unet(UnetDenoiser),
    Dit(DitDenoiser),
}

/// Latent shape handled by a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatentShape {
    pub channels: usize,
    pub side: usize,
}

impl LatentShape {
    pub fn dims(&self) -> [usize; 4] {
        [3, self.channels, self.side, self.side]
    }

    pub fn numel(&self) -> usize {
        3 * self.channels * self.side * self.side
    }
}

/// Denoiser + conditioner + optional geometric-mixing coefficient.
pub struct DenoiserModel {
    pub params: ParamSet,
    pub backbone: Backbone,
    pub conditioner: Conditioner,
    pub schedule: NoiseSchedule,
    pub latent: LatentShape,
    /// Sigmoid-parameterized mixing coefficient (VP path only).
    mixing_logit: Option<Tensor>,
}

pub struct DenoiserConfig {
    pub schedule: ScheduleKind,
    pub use_unet: bool,
    pub unet: UnetConfig,
    pub dit: DitConfig,
    pub cond_kind: ConditionKind,
    pub cond_dim: usize,
    pub image_scale: f64,
    /// Enable the learnable geometric-mixing coefficient (VP only).
    pub geometric_mixing: bool,
}

impl DenoiserModel {
    pub fn new(cfg: &DenoiserConfig, latent: LatentShape, seed: u64) -> Result<DenoiserModel> {
        let mut rng = Rng::new(seed);
        let mut ps = ParamSet::new();
        let conditioner = Conditioner::new(&mut ps, cfg.cond_kind, cfg.cond_dim, cfg.image_scale, &mut rng);
        let backbone = if cfg.use_unet {
            Backbone::Unet(UnetDenoiser::new(&mut ps, &cfg.unet, latent, cfg.cond_dim, &mut rng)?)
        } else {
            Backbone::Dit(DitDenoiser::new(&mut ps, &cfg.dit, latent, cfg.cond_dim, &mut rng)?)
        };
        let mixing_logit = if cfg.geometric_mixing && cfg.schedule == ScheduleKind::LinearVp {
            // sigmoid(2.2) ~ 0.9: start close to the pure-network end
            Some(ps.param("mixing_logit", &[1], Init::Const(2.2), &mut rng))
        } else {
            None
        };
        Ok(DenoiserModel {
            params: ps,
            backbone,
            conditioner,
            schedule: NoiseSchedule::new(cfg.schedule),
            latent,
            mixing_logit,
        })
    }

    /// Raw network output (v or velocity), shape [B, 3, c, h, w].
    pub fn raw_predict(&self, z_t: &Tensor, t: f64, cond: &ConditionSet) -> Tensor {
        match &self.backbone {
            Backbone::Unet(u) => u.forward(z_t, t, cond),
            Backbone::Dit(d) => d.forward(z_t, t, cond),
        }
    }

    pub fn mixing_alpha(&self) -> f64 {
        self.mixing_logit
            .as_ref()
            .map(|l| sigmoid_scalar(l.item()))
            .unwrap_or(1.0)
    }

    /// Prediction with geometric mixing applied. The standard-normal prior
    /// is optimal at v = 0, so mixing shrinks the raw v output by alpha;
    /// [`Self::eps_theta`] shows the equivalent noise-space form.
    pub fn predict(&self, z_t: &Tensor, t: f64, cond: &ConditionSet) -> Tensor {
        let raw = self.raw_predict(z_t, t, cond);
        match (&self.mixing_logit, self.schedule.kind) {
            (Some(logit), ScheduleKind::LinearVp) => {
                let alpha = logit.sigmoid().reshape(&[1]);
                raw.mul(&alpha)
            }
            _ => raw,
        }
    }

    /// Noise-space prediction eps_theta(z_t, t) = sigma_t (1 - alpha) z_t
    /// + alpha eps'_theta assembled from the mixed v prediction; at
    /// alpha = 0 this equals sigma_t z_t exactly, at alpha = 1 the raw
    /// network's implied noise prediction.
    pub fn eps_theta(&self, z_t: &Tensor, t: f64, cond: &ConditionSet) -> Tensor {
        let mixed_v = self.predict(z_t, t, cond);
        let (a, b) = self.schedule.coeffs(t);
        z_t.scale(b).add(&mixed_v.scale(a))
    }
}

/// Classifier-free guidance: s * conditional + (1 - s) * unconditional.
pub fn cfg_combine(pred_cond: &Tensor, pred_uncond: &Tensor, s: f64) -> Tensor {
    assert!(
        pred_cond.shape() == pred_uncond.shape(),
        "cfg_combine: shape mismatch {:?} vs {:?}",
        pred_cond.shape(),
        pred_uncond.shape()
    );
    pred_cond.scale(s).add(&pred_uncond.scale(1.0 - s))
}

/// Training item: a clean latent and its (possibly dropped) condition.
pub struct DiffusionItem<'a> {
    pub x0: &'a Tensor,
    pub cond: &'a ConditionSet,
}

/// Score-matching loss under the VP schedule: uniform-t weighted MSE on
/// the v target, with geometric mixing inside the prediction.
pub fn score_loss_vp(model: &DenoiserModel, items: &[DiffusionItem], rng: &mut Rng) -> Result<Tensor> {
    diffusion_loss(model, items, rng, ScheduleKind::LinearVp, 0.0)
}

/// Rectified-flow matching loss: velocity MSE with t clipped away from the
/// path endpoints. The time-weighting prefactors in the flow objective
/// cancel against the velocity reparameterization, leaving plain MSE.
pub fn fm_loss(model: &DenoiserModel, items: &[DiffusionItem], rng: &mut Rng) -> Result<Tensor> {
    diffusion_loss(model, items, rng, ScheduleKind::RectifiedFlow, 1e-5)
}

fn diffusion_loss(
    model: &DenoiserModel,
    items: &[DiffusionItem],
    rng: &mut Rng,
    expect: ScheduleKind,
    t_clip: f64,
) -> Result<Tensor> {
    if model.schedule.kind != expect {
        return Err(Error::Config(format!(
            "loss expects schedule {:?}, model uses {:?}",
            expect, model.schedule.kind
        )));
    }
    if items.is_empty() {
        return Err(Error::InvalidArg("diffusion loss: empty batch".into()));
    }
    let mut total: Option<Tensor> = None;
    for item in items {
        let t = (rng.uniform()).clamp(t_clip, 1.0 - t_clip);
        let state = forward_diffuse(item.x0, t, rng, &model.schedule)?;
        let z = state.z_t.reshape(&[1, 3, model.latent.channels, model.latent.side, model.latent.side]);
        let pred = model.predict(&z, t, item.cond).reshape(state.x0.shape());
        let diff = pred.sub(&state.target);
        let item_loss = diff.mul(&diff).mean_all().scale(0.5);
        total = Some(match total {
            Some(acc) => acc.add(&item_loss),
            None => item_loss,
        });
    }
    Ok(total.unwrap().scale(1.0 / items.len() as f64))
}

/// Scale that standardizes latents to unit std (computed on the training
/// latents, inverse-applied at decode time).
pub fn standardization_scale(latents: &[Tensor]) -> f64 {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for l in latents {
        l.with_data(|d| {
            for &v in d {
                sum += v;
                sum_sq += v * v;
                count += 1;
            }
        });
    }
    if count == 0 {
        return 1.0;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(1e-12);
    1.0 / var.sqrt()
}
