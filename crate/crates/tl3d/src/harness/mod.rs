//! Operational surface: configuration, run directories, and the five
//! commands behind the `tl3d` binary (gen-data, train-vae,
//! train-diffusion, sample, eval). Everything here is a thin layer over
//! the library modules so programs and tests can drive the same paths.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod train_diffusion;
pub mod train_vae;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::Config;
pub use eval::{eval_protocol, EvalSettings};
pub use train_diffusion::{latents_from_vae, CondSource, DiffusionTrainSettings, DiffusionTrainer};
pub use train_vae::{render_image, PsnrEval, VaeTrainSettings, VaeTrainer};

use std::path::{Path, PathBuf};

use crate::conditioning::ConditionKind;
use crate::datagen::{build_dataset, read_dataset, write_dataset, DatagenConfig};
use crate::diffusion::{
    sample as draw_samples, DenoiserConfig, DitConfig, SampleOptions, SamplerKind, ScheduleKind,
    UnetConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{pose_trajectory, TrajectoryKind};
use crate::imageio::{write_pgm, write_ppm};
use crate::rng::Rng;
use crate::tensor::no_grad;
use crate::vae::{LossWeights, NovelDiscMode, VaeConfig, VaeModel};

/// Output root: TL3D_RUN_DIR env var overrides the config value, which
/// defaults to ./runs.
pub fn run_root(cfg: &Config) -> PathBuf {
    if let Ok(dir) = std::env::var("TL3D_RUN_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(cfg.get_str("run_dir", "runs"))
}

fn prepare_run_dir(cfg: &Config, name: &str) -> Result<PathBuf> {
    let dir = run_root(cfg).join(name);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config(cfg: &Config, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("config.echo"), cfg.echo())?;
    Ok(())
}

pub fn vae_config_from(cfg: &Config) -> Result<VaeConfig> {
    let vc = VaeConfig {
        image_size: cfg.get_usize("vae.image_size", 32)?,
        in_views: cfg.get_usize("vae.views", 1)?,
        use_depth: cfg.get_bool("vae.use_depth", false)?,
        latent_channels: cfg.get_usize("vae.latent_channels", 4)?,
        enc_channels: cfg.get_usize("vae.enc_channels", 12)?,
        dec_layers: cfg.get_usize("vae.dec_layers", 4)?,
        dec_heads: cfg.get_usize("vae.dec_heads", 4)?,
        dec_dim: cfg.get_usize("vae.dec_dim", 64)?,
        dec_out_channels: cfg.get_usize("vae.dec_out_channels", 8)?,
        up_channels: cfg.get_usize("vae.up_channels", 16)?,
        triplane_channels: cfg.get_usize("vae.triplane_channels", 16)?,
        mlp_hidden: cfg.get_usize("vae.mlp_hidden", 32)?,
        qk_norm: cfg.get_bool("vae.qk_norm", true)?,
    };
    vc.validate()?;
    Ok(vc)
}

pub fn vae_settings_from(cfg: &Config) -> Result<VaeTrainSettings> {
    let novel = match cfg.get_str("train.novel_disc", "input_vs_novel").as_str() {
        "off" => NovelDiscMode::Off,
        "input_vs_novel" => NovelDiscMode::InputVsNovel,
        "dataset_vs_novel" => NovelDiscMode::DatasetVsNovel,
        other => {
            return Err(Error::Config(format!(
                "train.novel_disc: unknown mode {other:?}"
            )))
        }
    };
    Ok(VaeTrainSettings {
        seed: cfg.get_u64("seed", 0)?,
        iters: cfg.get_u64("train.iters", 2000)?,
        lr: cfg.get_f64("train.lr", 2e-3)?,
        beta1: cfg.get_f64("train.beta1", 0.9)?,
        beta2: cfg.get_f64("train.beta2", 0.99)?,
        weight_decay: cfg.get_f64("train.weight_decay", 1e-6)?,
        crop: cfg.get_usize("train.crop", 16)?,
        samples_per_ray: cfg.get_usize("train.samples_per_ray", 12)?,
        near: cfg.get_f64("train.near", 1.2)?,
        far: cfg.get_f64("train.far", 3.2)?,
        weights: LossWeights {
            lambda_geo: cfg.get_f64("train.lambda_geo", 0.1)?,
            lambda_kl: cfg.get_f64("train.lambda_kl", 1e-5)?,
            lambda_gan: cfg.get_f64("train.lambda_gan", 0.01)?,
        },
        gan_warmup: cfg.get_u64("train.gan_warmup", 1000)?,
        novel_mode: novel,
        disc_base: cfg.get_usize("train.disc_base", 8)?,
        train_views: cfg.get_usize("train.train_views", 4)?,
        log_every: cfg.get_u64("train.log_every", 50)?,
        ckpt_every: cfg.get_u64("train.ckpt_every", 0)?,
    })
}

pub fn denoiser_config_from(cfg: &Config) -> Result<DenoiserConfig> {
    let backbone = cfg.get_str("diff.backbone", "transformer_full_attention");
    let use_unet = match backbone.as_str() {
        "unet_rollout" => true,
        "transformer_full_attention" => false,
        other => {
            return Err(Error::Config(format!(
                "diff.backbone: unknown backbone {other:?}"
            )))
        }
    };
    Ok(DenoiserConfig {
        schedule: ScheduleKind::parse(&cfg.get_str("diff.schedule", "rectified_flow"))?,
        use_unet,
        unet: UnetConfig {
            base: cfg.get_usize("diff.unet_base", 16)?,
            mid: cfg.get_usize("diff.unet_mid", 32)?,
            time_dim: cfg.get_usize("diff.time_dim", 32)?,
        },
        dit: DitConfig {
            dim: cfg.get_usize("diff.dit_dim", 48)?,
            layers: cfg.get_usize("diff.dit_layers", 3)?,
            heads: cfg.get_usize("diff.dit_heads", 4)?,
            use_pos: cfg.get_bool("diff.use_pos", true)?,
        },
        cond_kind: ConditionKind::parse(&cfg.get_str("diff.cond", "none"))?,
        cond_dim: cfg.get_usize("diff.cond_dim", 48)?,
        image_scale: cfg.get_f64("diff.image_scale", crate::conditioning::DEFAULT_IMAGE_SCALE)?,
        geometric_mixing: cfg.get_bool("diff.mixing", true)?,
    })
}

pub fn diffusion_settings_from(cfg: &Config) -> Result<DiffusionTrainSettings> {
    Ok(DiffusionTrainSettings {
        seed: cfg.get_u64("seed", 0)?,
        iters: cfg.get_u64("train.iters", 2000)?,
        batch: cfg.get_usize("diff.batch", 8)?,
        lr: cfg.get_f64("train.lr", 1e-3)?,
        beta1: cfg.get_f64("train.beta1", 0.9)?,
        beta2: cfg.get_f64("train.beta2", 0.99)?,
        weight_decay: cfg.get_f64("train.weight_decay", 0.0)?,
        dropout_p: cfg.get_f64("diff.dropout", 0.15)?,
        log_every: cfg.get_u64("train.log_every", 50)?,
    })
}

/// gen-data: build the procedural dataset and write the container.
pub fn cmd_gen_data(cfg: &Config) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "gen-data")?;
    let out = cfg.get_str("data.out", "dataset.tl3d");
    let path = if Path::new(&out).is_absolute() {
        PathBuf::from(out)
    } else {
        dir.join(out)
    };
    let dg = DatagenConfig {
        n_scenes: cfg.get_usize("data.scenes", 64)?,
        views_per_scene: cfg.get_usize("data.views", 8)?,
        width: cfg.get_usize("data.size", 64)?,
        height: cfg.get_usize("data.size", 64)?,
        max_difficulty: cfg.get_usize("data.max_difficulty", 3)?,
        n_gt_points: cfg.get_usize("data.points", 4096)?,
        camera_radius: cfg.get_f64("data.camera_radius", 2.2)?,
        focal_factor: cfg.get_f64("data.focal_factor", 0.55)?,
    };
    let mut rng = Rng::new(cfg.get_u64("seed", 0)?);
    let ds = build_dataset(&dg, &mut rng)?;
    write_dataset(&path, &ds)?;
    echo_config(cfg, &dir)?;
    Ok(path)
}

/// train-vae: stage-1 training over a dataset container.
pub fn cmd_train_vae(cfg: &Config) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "train-vae")?;
    let dataset_path = cfg
        .get_opt_str("dataset")
        .ok_or_else(|| Error::Config("dataset path missing (set dataset=...)".into()))?;
    let dataset = read_dataset(Path::new(&dataset_path))?;
    let vc = {
        let mut vc = vae_config_from(cfg)?;
        vc.image_size = dataset.width;
        vc.validate()?;
        vc
    };
    let settings = vae_settings_from(cfg)?;
    let iters = settings.iters;
    let mut trainer = VaeTrainer::new(vc, settings, dataset)?;
    if let Some(resume) = cfg.get_opt_str("resume") {
        let ckpt = load_checkpoint(Path::new(&resume))?;
        trainer.restore(&ckpt)?;
    }
    echo_config(cfg, &dir)?;
    trainer.run(iters, Some(&dir))?;
    let eval = trainer.evaluate_psnr()?;
    std::fs::write(
        dir.join("psnr.txt"),
        format!(
            "INPUT_PSNR={:.4}\nNOVEL_PSNR={:.4}\nBASELINE_PSNR={:.4}\n",
            eval.input_psnr, eval.novel_psnr, eval.baseline_psnr
        ),
    )?;
    Ok(dir.join("vae_final.tlck"))
}

fn load_vae(cfg: &Config, dataset_width: usize) -> Result<VaeModel> {
    let vae_ckpt_path = cfg
        .get_opt_str("vae_checkpoint")
        .ok_or_else(|| Error::Config("vae_checkpoint missing".into()))?;
    let ckpt = load_checkpoint(Path::new(&vae_ckpt_path))?;
    let mut vc = vae_config_from(cfg)?;
    vc.image_size = dataset_width;
    vc.validate()?;
    let vae = VaeModel::new(vc, cfg.get_u64("seed", 0)?)?;
    ckpt.restore_params(&vae.params)?;
    Ok(vae)
}

/// train-diffusion: stage-2 training over frozen-encoder latents.
pub fn cmd_train_diffusion(cfg: &Config) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "train-diffusion")?;
    let dataset_path = cfg
        .get_opt_str("dataset")
        .ok_or_else(|| Error::Config("dataset path missing (set dataset=...)".into()))?;
    let dataset = read_dataset(Path::new(&dataset_path))?;
    let vae = load_vae(cfg, dataset.width)?;
    let dcfg = denoiser_config_from(cfg)?;
    let settings = diffusion_settings_from(cfg)?;
    let cap = cfg.get_usize("diff.scale_latents", 1000)?;
    let (latents, conds, scale) = latents_from_vae(&vae, &dataset, dcfg.cond_kind, cap)?;
    let iters = settings.iters;
    let mut trainer = DiffusionTrainer::new(&dcfg, latents, conds, scale, settings)?;
    if let Some(resume) = cfg.get_opt_str("resume") {
        let ckpt = load_checkpoint(Path::new(&resume))?;
        trainer.restore(&ckpt)?;
    }
    echo_config(cfg, &dir)?;
    trainer.run(iters, Some(&dir))?;
    Ok(dir.join("diffusion_final.tlck"))
}

/// sample: draw latents from a trained diffusion model, decode, render a
/// pose trajectory to PPM files, and persist the latents in the
/// checkpoint parameter-table format.
pub fn cmd_sample(cfg: &Config) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "sample")?;
    let dataset_path = cfg
        .get_opt_str("dataset")
        .ok_or_else(|| Error::Config("dataset path missing (set dataset=...)".into()))?;
    let dataset = read_dataset(Path::new(&dataset_path))?;
    let vae = load_vae(cfg, dataset.width)?;

    let diff_ckpt_path = cfg
        .get_opt_str("diffusion_checkpoint")
        .ok_or_else(|| Error::Config("diffusion_checkpoint missing".into()))?;
    let diff_ckpt = load_checkpoint(Path::new(&diff_ckpt_path))?;
    let dcfg = denoiser_config_from(cfg)?;
    let latent = crate::diffusion::LatentShape {
        channels: vae.cfg.latent_channels,
        side: vae.cfg.latent_side(),
    };
    let model = crate::diffusion::DenoiserModel::new(&dcfg, latent, cfg.get_u64("seed", 0)?)?;
    diff_ckpt.restore_params(&model.params)?;
    let latent_scale = diff_ckpt.extra("latent_scale").unwrap_or(1.0);

    let opts = SampleOptions {
        n_steps: cfg.get_usize("diff.steps", 250)?,
        cfg_scale: cfg.get_f64("diff.cfg_scale", 6.5)?,
        sampler: SamplerKind::parse(&cfg.get_str("diff.sampler", "ode_euler"))?,
    };
    let count = cfg.get_usize("sample.count", 4)?;
    let mut rng = Rng::new(cfg.get_u64("seed", 0)?.wrapping_add(0x5A3F));

    let cond = match dcfg.cond_kind {
        ConditionKind::None => model.conditioner.null_condition(),
        ConditionKind::Text => {
            let prompt = cfg.get_str("sample.prompt", "one red sphere");
            model.conditioner.embed_text(&prompt)
        }
        ConditionKind::Image | ConditionKind::ImagePlusPatches => {
            let scene_idx = cfg.get_usize("sample.image_scene", 0)?;
            let scene = &dataset.scenes[scene_idx.min(dataset.n_scenes() - 1)];
            model
                .conditioner
                .embed_image(&scene.images[0], dataset.width, dataset.height)
        }
    };

    let effective_scale = if dcfg.cond_kind == ConditionKind::None {
        0.0
    } else {
        opts.cfg_scale
    };
    let opts = SampleOptions {
        cfg_scale: effective_scale,
        ..opts
    };
    let samples = draw_samples(&model, &cond, count, &opts, &mut rng)?;

    // persist latents in the parameter-table format
    let mut latent_ckpt = Checkpoint {
        step: 0,
        rng_state: rng.state(),
        extras: vec![("latent_scale".into(), latent_scale)],
        ..Default::default()
    };
    let dims = model.latent.dims();
    let n = model.latent.numel();
    let all = samples.to_vec();
    for i in 0..count {
        latent_ckpt.params.push((
            format!("sample{i:03}"),
            dims.to_vec(),
            all[i * n..(i + 1) * n].to_vec(),
        ));
    }
    save_checkpoint(&dir.join("latents.tlck"), &latent_ckpt)?;

    // decode + render a short trajectory per sample
    let n_poses = cfg.get_usize("sample.trajectory", 8)?;
    let radius = cfg.get_f64("data.camera_radius", 2.2)?;
    let focal = 0.55 * dataset.width as f64;
    let poses = pose_trajectory(
        TrajectoryKind::UpperSphereEllipsoidFixed,
        n_poses,
        radius,
        focal,
        dataset.width,
        dataset.height,
        &mut rng,
    )?;
    let samples_per_ray = cfg.get_usize("train.samples_per_ray", 12)?;
    let (near, far) = (cfg.get_f64("train.near", 1.2)?, cfg.get_f64("train.far", 3.2)?);
    for i in 0..count {
        let z = crate::tensor::Tensor::from_vec(all[i * n..(i + 1) * n].to_vec(), &dims)
            .scale(1.0 / latent_scale);
        let tp = no_grad(|| vae.decode(&z));
        for (pose_idx, cam) in poses.iter().enumerate() {
            let (rgb, depth) = render_image(&tp, &vae.field_mlp, cam, samples_per_ray, near, far)?;
            write_ppm(
                &dir.join(format!("sample{i:03}_pose{pose_idx:02}.ppm")),
                &rgb,
                dataset.width,
                dataset.height,
            )?;
            if pose_idx == 0 {
                write_pgm(
                    &dir.join(format!("sample{i:03}_depth.pgm")),
                    &depth,
                    dataset.width,
                    dataset.height,
                    Some((near, far)),
                )?;
            }
        }
    }
    echo_config(cfg, &dir)?;
    Ok(dir)
}

/// eval: run the metric protocol against a dataset.
pub fn cmd_eval(cfg: &Config) -> Result<PathBuf> {
    let dir = prepare_run_dir(cfg, "eval")?;
    let dataset_path = cfg
        .get_opt_str("dataset")
        .ok_or_else(|| Error::Config("dataset path missing (set dataset=...)".into()))?;
    let dataset = read_dataset(Path::new(&dataset_path))?;
    let vae = load_vae(cfg, dataset.width)?;
    let settings = EvalSettings {
        max_scenes: cfg.get_usize("eval.scenes", 0)?,
        trajectory_size: cfg.get_usize("eval.trajectory", 20)?,
        n_points: cfg.get_usize("eval.points", 4096)?,
        grid_res: cfg.get_usize("eval.grid_res", 24)?,
        density_threshold: cfg.get_f64("eval.density_threshold", 0.5)?,
        samples_per_ray: cfg.get_usize("train.samples_per_ray", 12)?,
        near: cfg.get_f64("train.near", 1.2)?,
        far: cfg.get_f64("train.far", 3.2)?,
        camera_radius: cfg.get_f64("data.camera_radius", 2.2)?,
        write_renders: cfg.get_bool("eval.write_renders", false)?,
    };
    let mut rng = Rng::new(cfg.get_u64("seed", 0)?.wrapping_add(0xE7A1));
    let report = eval_protocol(&vae, &dataset, &settings, Some(&dir), &mut rng)?;
    std::fs::write(dir.join("report.txt"), report.to_keyvalues())?;
    std::fs::write(dir.join("report.csv"), report.to_csv())?;
    echo_config(cfg, &dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_root_honors_env_override() {
        let cfg = Config::from_text("run_dir=custom_runs\n").unwrap();
        // no env var in tests (avoid cross-test interference): config value
        std::env::remove_var("TL3D_RUN_DIR");
        assert_eq!(run_root(&cfg), PathBuf::from("custom_runs"));
    }

    #[test]
    fn settings_builders_apply_defaults() {
        let cfg = Config::new();
        let vc = vae_config_from(&cfg).unwrap();
        assert_eq!(vc.latent_channels, 4);
        let vs = vae_settings_from(&cfg).unwrap();
        assert_eq!(vs.crop, 16);
        let dc = denoiser_config_from(&cfg).unwrap();
        assert!(!dc.use_unet);
        let ds = diffusion_settings_from(&cfg).unwrap();
        assert!((ds.dropout_p - 0.15).abs() < 1e-12);
    }

    #[test]
    fn bad_enum_values_are_config_errors() {
        let cfg = Config::from_text("train.novel_disc=bogus\n").unwrap();
        assert!(matches!(vae_settings_from(&cfg), Err(Error::Config(_))));
        let cfg = Config::from_text("diff.backbone=bogus\n").unwrap();
        assert!(matches!(denoiser_config_from(&cfg), Err(Error::Config(_))));
        let cfg = Config::from_text("diff.schedule=bogus\n").unwrap();
        assert!(matches!(denoiser_config_from(&cfg), Err(Error::Config(_))));
    }
}
