//! Time-dependent U-Net over the rolled-out tri-latent
//! (h x w x 3 x c viewed as a c-channel image of size h x 3w): two
//! stride-2 stages with skip connections, attention + condition
//! cross-attention at the bottleneck, sinusoidal time embeddings injected
//! per residual block, and a zero-initialized output head.

use super::LatentShape;
use crate::conditioning::{cross_attention_kv, ConditionSet};
use crate::error::{Error, Result};
use crate::nn::{timestep_embedding, Conv2d, Init, Linear, Mlp, MultiHeadAttention, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct UnetConfig {
    /// Channels at full latent resolution.
    pub base: usize,
    /// Channels at the two downsampled levels.
    pub mid: usize,
    pub time_dim: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            base: 32,
            mid: 64,
            time_dim: 64,
        }
    }
}

/// Residual block with per-channel time modulation.
struct TimeResBlock {
    c1: Conv2d,
    c2: Conv2d,
    t_proj: Linear,
    skip: Option<Conv2d>,
}

impl TimeResBlock {
    fn new(ps: &mut ParamSet, name: &str, ci: usize, co: usize, time_dim: usize, rng: &mut Rng) -> Self {
        TimeResBlock {
            c1: Conv2d::new(ps, &format!("{name}.c1"), ci, co, 3, 1, 1, rng),
            c2: Conv2d::new(ps, &format!("{name}.c2"), co, co, 3, 1, 1, rng),
            t_proj: Linear::new(ps, &format!("{name}.t"), time_dim, co, rng),
            skip: if ci != co {
                Some(Conv2d::new(ps, &format!("{name}.skip"), ci, co, 1, 1, 0, rng))
            } else {
                None
            },
        }
    }

    fn forward(&self, x: &Tensor, temb: &Tensor) -> Tensor {
        let co = self.c1.w.shape()[0];
        let h = self.c1.forward(&x.silu());
        // [time_dim] -> [co,1,1] broadcast over [B,co,H,W]
        let tmod = self.t_proj.forward(temb).reshape(&[co, 1, 1]);
        let h = self.c2.forward(&h.add(&tmod).silu());
        match &self.skip {
            Some(s) => s.forward(x).add(&h),
            None => x.add(&h),
        }
    }
}

pub struct UnetDenoiser {
    latent: LatentShape,
    time_mlp: Mlp,
    time_dim: usize,
    conv_in: Conv2d,
    down_res1: TimeResBlock,
    down1: Conv2d,
    down_res2: TimeResBlock,
    down2: Conv2d,
    mid_res1: TimeResBlock,
    mid_attn: MultiHeadAttention,
    mid_cross: MultiHeadAttention,
    mid_res2: TimeResBlock,
    up1_conv: Conv2d,
    up_res1: TimeResBlock,
    up2_conv: Conv2d,
    up_res2: TimeResBlock,
    conv_out: Conv2d,
}

impl UnetDenoiser {
    pub fn new(
        ps: &mut ParamSet,
        cfg: &UnetConfig,
        latent: LatentShape,
        cond_dim: usize,
        rng: &mut Rng,
    ) -> Result<UnetDenoiser> {
        if latent.side % 4 != 0 {
            return Err(Error::Config(format!(
                "unet needs the latent side divisible by 4, got {}",
                latent.side
            )));
        }
        let (base, mid) = (cfg.base, cfg.mid);
        let unet = UnetDenoiser {
            latent,
            time_mlp: Mlp::new(ps, "unet.time", cfg.time_dim, cfg.time_dim, cfg.time_dim, rng),
            time_dim: cfg.time_dim,
            conv_in: Conv2d::new(ps, "unet.conv_in", latent.channels, base, 3, 1, 1, rng),
            down_res1: TimeResBlock::new(ps, "unet.dres1", base, base, cfg.time_dim, rng),
            down1: Conv2d::new(ps, "unet.down1", base, mid, 3, 2, 1, rng),
            down_res2: TimeResBlock::new(ps, "unet.dres2", mid, mid, cfg.time_dim, rng),
            down2: Conv2d::new(ps, "unet.down2", mid, mid, 3, 2, 1, rng),
            mid_res1: TimeResBlock::new(ps, "unet.mres1", mid, mid, cfg.time_dim, rng),
            mid_attn: MultiHeadAttention::new(ps, "unet.mattn", mid, mid, 2, true, rng),
            mid_cross: MultiHeadAttention::new(ps, "unet.mcross", mid, cond_dim, 2, true, rng),
            mid_res2: TimeResBlock::new(ps, "unet.mres2", mid, mid, cfg.time_dim, rng),
            up1_conv: Conv2d::new(ps, "unet.up1", mid + mid, mid, 3, 1, 1, rng),
            up_res1: TimeResBlock::new(ps, "unet.ures1", mid, mid, cfg.time_dim, rng),
            up2_conv: Conv2d::new(ps, "unet.up2", mid + base, base, 3, 1, 1, rng),
            up_res2: TimeResBlock::new(ps, "unet.ures2", base, base, cfg.time_dim, rng),
            conv_out: Conv2d {
                w: ps.param("unet.conv_out.w", &[latent.channels, base, 3, 3], Init::Zeros, rng),
                b: ps.param("unet.conv_out.b", &[latent.channels], Init::Zeros, rng),
                stride: 1,
                pad: 1,
            },
        };
        Ok(unet)
    }

    /// z_t: [B, 3, c, h, w] -> same shape.
    pub fn forward(&self, z_t: &Tensor, t: f64, cond: &ConditionSet) -> Tensor {
        let s = z_t.shape().to_vec();
        assert!(
            s.len() == 5 && s[1] == 3 && s[2] == self.latent.channels && s[3] == self.latent.side,
            "unet expects [B,3,{},{},{}], got {:?}",
            self.latent.channels,
            self.latent.side,
            self.latent.side,
            s
        );
        let (bs, c, h, w) = (s[0], s[2], s[3], s[4]);
        // roll out: planes side by side along width -> [B, c, h, 3w]
        let x = z_t.permute(&[0, 2, 3, 1, 4]).reshape(&[bs, c, h, 3 * w]);

        let temb = Tensor::from_vec(timestep_embedding(t, self.time_dim), &[self.time_dim]);
        let temb = self.time_mlp.forward(&temb.reshape(&[1, self.time_dim])).silu().reshape(&[self.time_dim]);

        let x0 = self.conv_in.forward(&x);
        let s1 = self.down_res1.forward(&x0, &temb);
        let x1 = self.down1.forward(&s1).silu();
        let s2 = self.down_res2.forward(&x1, &temb);
        let x2 = self.down2.forward(&s2).silu();

        let mut m = self.mid_res1.forward(&x2, &temb);
        // bottleneck self-attention over spatial tokens
        let (mh, mw) = (m.shape()[2], m.shape()[3]);
        let mc = m.shape()[1];
        let tokens = m.permute(&[0, 2, 3, 1]).reshape(&[bs, mh * mw, mc]);
        let tokens = tokens.add(&self.mid_attn.forward(&tokens, &tokens));
        // condition injection via cross-attention
        let kv = cross_attention_kv(cond, self.mid_cross.wk.w.shape()[0]);
        let kv = kv.broadcast_to(&[bs, kv.shape()[1], kv.shape()[2]]);
        let tokens = tokens.add(&self.mid_cross.forward(&tokens, &kv));
        m = tokens.reshape(&[bs, mh, mw, mc]).permute(&[0, 3, 1, 2]);
        m = self.mid_res2.forward(&m, &temb);

        let u2 = m.bilinear_up2x();
        let u2 = self.up1_conv.forward(&Tensor::concat(&[&u2, &s2], 1)).silu();
        let u2 = self.up_res1.forward(&u2, &temb);
        let u1 = u2.bilinear_up2x();
        let u1 = self.up2_conv.forward(&Tensor::concat(&[&u1, &s1], 1)).silu();
        let u1 = self.up_res2.forward(&u1, &temb);
        let out = self.conv_out.forward(&u1); // [B, c, h, 3w]

        out.reshape(&[bs, c, h, 3, w]).permute(&[0, 3, 1, 2, 4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{ConditionKind, Conditioner, DEFAULT_IMAGE_SCALE};
    use crate::tensor::{gradcheck_subset, no_grad};

    fn build() -> (ParamSet, UnetDenoiser, Conditioner) {
        let mut rng = Rng::new(3);
        let mut ps = ParamSet::new();
        let cond = Conditioner::new(&mut ps, ConditionKind::Text, 12, DEFAULT_IMAGE_SCALE, &mut rng);
        let unet = UnetDenoiser::new(
            &mut ps,
            &UnetConfig {
                base: 6,
                mid: 8,
                time_dim: 8,
            },
            LatentShape { channels: 4, side: 8 },
            12,
            &mut rng,
        )
        .unwrap();
        (ps, unet, cond)
    }

    #[test]
    fn output_shape_matches_input() {
        let (_ps, unet, cond) = build();
        let mut rng = Rng::new(4);
        let z = Tensor::from_vec(rng.normal_vec(2 * 3 * 4 * 8 * 8), &[2, 3, 4, 8, 8]);
        let c = cond.embed_text("a sphere");
        let out = no_grad(|| unet.forward(&z, 0.3, &c));
        assert_eq!(out.shape(), &[2, 3, 4, 8, 8]);
    }

    #[test]
    fn zero_initialized_head_predicts_zero() {
        let (_ps, unet, cond) = build();
        let mut rng = Rng::new(5);
        let z = Tensor::from_vec(rng.normal_vec(3 * 4 * 8 * 8), &[1, 3, 4, 8, 8]);
        let out = no_grad(|| unet.forward(&z, 0.7, &cond.null_condition()));
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rollout_keeps_planes_separate_along_width() {
        // roll-out contract: [B,3,c,h,w] -> [B,c,h,3w] keeps plane p's
        // columns in [p*w, (p+1)*w)
        let (c, h, w) = (2, 4, 4);
        let mut data = vec![0.0; 3 * c * h * w];
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i / (c * h * w)) as f64; // plane index
        }
        let z = Tensor::from_vec(data, &[1, 3, c, h, w]);
        let rolled = z.permute(&[0, 2, 3, 1, 4]).reshape(&[1, c, h, 3 * w]);
        let rd = rolled.to_vec();
        for ch in 0..c {
            for y in 0..h {
                for plane in 0..3 {
                    for x in 0..w {
                        let v = rd[(ch * h + y) * 3 * w + plane * w + x];
                        assert_eq!(v, plane as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn gradcheck_on_toy_latent() {
        let (ps, unet, cond) = build();
        // wake up the output head so gradients are informative
        let mut rng = Rng::new(6);
        for (name, t) in ps.entries() {
            if name.starts_with("unet.conv_out") {
                t.set_data(&rng.normal_vec(t.numel()).iter().map(|v| v * 0.1).collect::<Vec<_>>());
            }
        }
        let z = Tensor::param(rng.normal_vec(3 * 4 * 8 * 8), &[1, 3, 4, 8, 8]);
        let c = cond.embed_text("toy");
        let f = || {
            let y = unet.forward(&z, 0.4, &c);
            y.mul(&y).mean_all()
        };
        let entries: Vec<(String, Tensor)> = ps.entries().to_vec();
        let mut params: Vec<(&str, &Tensor)> = vec![("z", &z)];
        for (n, t) in &entries {
            if n.starts_with("unet.") {
                params.push((n.as_str(), t));
            }
        }
        let report = gradcheck_subset("unet_denoiser", f, &params, 1e-5, 1e-4, 3, &mut rng);
        assert!(report.passed, "{report}");
    }
}
