//! Unconditional latent diffusion on a four-point dataset: train a small
//! full-attention denoiser with flow matching, then sample and check that
//! every draw lands near one of the training latents and that all four
//! are hit (mode coverage).
//!
//! Run: cargo run --release --example train_diffusion_toy

use tl3d::conditioning::ConditionKind;
use tl3d::diffusion::{sample, DenoiserConfig, DitConfig, SampleOptions, SamplerKind, ScheduleKind, UnetConfig};
use tl3d::harness::{CondSource, DiffusionTrainSettings, DiffusionTrainer};
use tl3d::tensor::Tensor;
use tl3d::Rng;

fn main() {
    let mut rng = Rng::new(5);
    let (channels, side) = (2usize, 4usize);
    let n_latents = 4;
    let latents: Vec<Tensor> = (0..n_latents)
        .map(|_| Tensor::from_vec(rng.normal_vec(3 * channels * side * side), &[3, channels, side, side]))
        .collect();
    let conds = (0..n_latents).map(|_| CondSource::None).collect();

    let cfg = DenoiserConfig {
        schedule: ScheduleKind::RectifiedFlow,
        use_unet: false,
        unet: UnetConfig::default(),
        dit: DitConfig {
            dim: 32,
            layers: 3,
            heads: 4,
            use_pos: true,
        },
        cond_kind: ConditionKind::None,
        cond_dim: 32,
        image_scale: 1.0,
        geometric_mixing: false,
    };
    let settings = DiffusionTrainSettings {
        seed: 5,
        iters: 1500,
        batch: 8,
        lr: 2e-3,
        dropout_p: 0.0,
        log_every: 250,
        ..DiffusionTrainSettings::default()
    };
    let mut trainer = DiffusionTrainer::new(&cfg, latents.clone(), conds, 1.0, settings).unwrap();
    for step in 0..1500u64 {
        let loss = trainer.train_step().unwrap();
        if (step + 1) % 250 == 0 {
            println!("step {:4}  loss {loss:.5}", step + 1);
        }
    }

    let opts = SampleOptions {
        n_steps: 256,
        cfg_scale: 0.0, // unconditional
        sampler: SamplerKind::OdeEuler,
    };
    let cond = trainer.model.conditioner.null_condition();
    let draws = 64;
    let out = sample(&trainer.model, &cond, draws, &opts, &mut rng).unwrap();
    let all = out.to_vec();
    let dim = 3 * channels * side * side;

    let mut covered = vec![false; n_latents];
    let mut worst = 0.0f64;
    for i in 0..draws {
        let s = &all[i * dim..(i + 1) * dim];
        let (mut best, mut best_idx) = (f64::INFINITY, 0);
        for (j, l) in latents.iter().enumerate() {
            let lv = l.to_vec();
            let d2: f64 = s.iter().zip(&lv).map(|(a, b)| (a - b) * (a - b)).sum();
            let n2: f64 = lv.iter().map(|v| v * v).sum();
            let rel = (d2 / n2).sqrt();
            if rel < best {
                best = rel;
                best_idx = j;
            }
        }
        covered[best_idx] = true;
        worst = worst.max(best);
    }
    println!("worst relative distance to nearest training latent: {worst:.4}");
    println!(
        "modes covered: {}/{}",
        covered.iter().filter(|&&c| c).count(),
        n_latents
    );
}
