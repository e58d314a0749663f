//! Convolutional encoder: posed views (RGB + Plücker channels, optional
//! ray-length channel) to a KL-regularized tri-latent. Three stride-2
//! stages give the fixed downsample factor of 8; views share the trunk and
//! fuse by mean after optional cross-view attention at the bottleneck.

use super::{TriLatent, VaeConfig};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, MultiHeadAttention, ParamSet, ResBlock2d};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub struct Encoder {
    conv_in: Conv2d,
    res1: ResBlock2d,
    down1: Conv2d,
    res2: ResBlock2d,
    down2: Conv2d,
    res3: ResBlock2d,
    down3: Conv2d,
    res_mid: ResBlock2d,
    cross_view: Option<MultiHeadAttention>,
    head: Conv2d,
    latent_channels: usize,
}

impl Encoder {
    pub fn new(ps: &mut ParamSet, cfg: &VaeConfig, rng: &mut Rng) -> Encoder {
        let ch = cfg.enc_channels;
        let in_ch = cfg.in_channels();
        let mid = 2 * ch;
        Encoder {
            conv_in: Conv2d::new(ps, "enc.conv_in", in_ch, ch, 3, 1, 1, rng),
            res1: ResBlock2d::new(ps, "enc.res1", ch, rng),
            down1: Conv2d::new(ps, "enc.down1", ch, ch, 3, 2, 1, rng),
            res2: ResBlock2d::new(ps, "enc.res2", ch, rng),
            down2: Conv2d::new(ps, "enc.down2", ch, mid, 3, 2, 1, rng),
            res3: ResBlock2d::new(ps, "enc.res3", mid, rng),
            down3: Conv2d::new(ps, "enc.down3", mid, mid, 3, 2, 1, rng),
            res_mid: ResBlock2d::new(ps, "enc.res_mid", mid, rng),
            cross_view: if cfg.in_views > 1 {
                Some(MultiHeadAttention::new(ps, "enc.cross_view", mid, mid, 2, true, rng))
            } else {
                None
            },
            head: Conv2d::new(ps, "enc.head", mid, 6 * cfg.latent_channels, 3, 1, 1, rng),
            latent_channels: cfg.latent_channels,
        }
    }

    /// views: [V, C_in, H, W] -> tri-latent with h = H/8, w = W/8.
    pub fn forward(&self, views: &Tensor) -> Result<TriLatent> {
        let s = views.shape().to_vec();
        if s.len() != 4 {
            return Err(Error::InvalidArg(format!(
                "encoder input must be [V, C, H, W], got {:?}",
                s
            )));
        }
        let (v, h_img, w_img) = (s[0], s[2], s[3]);
        if h_img % 8 != 0 || w_img % 8 != 0 {
            return Err(Error::InvalidArg(format!(
                "image size {h_img}x{w_img} not divisible by the downsample factor 8"
            )));
        }
        let mut x = self.conv_in.forward(views).silu();
        x = self.down1.forward(&self.res1.forward(&x)).silu();
        x = self.down2.forward(&self.res2.forward(&x)).silu();
        x = self.down3.forward(&self.res3.forward(&x)).silu();
        x = self.res_mid.forward(&x);
        let (h, w) = (h_img / 8, w_img / 8);
        let mid = x.shape()[1];
        if let Some(attn) = &self.cross_view {
            // attention across all views' bottleneck tokens
            let tokens = x
                .permute(&[0, 2, 3, 1]) // [V, h, w, mid]
                .reshape(&[1, v * h * w, mid]);
            let mixed = tokens.add(&attn.forward(&tokens, &tokens));
            x = mixed
                .reshape(&[v, h, w, mid])
                .permute(&[0, 3, 1, 2]);
        }
        // fuse views by mean
        let fused = x
            .reshape(&[v, mid * h * w])
            .mean_axis(0, false)
            .reshape(&[1, mid, h, w]);
        let stats = self.head.forward(&fused); // [1, 6c, h, w]
        let c = self.latent_channels;
        let mu = stats.slice(1, 0, 3 * c).reshape(&[3, c, h, w]);
        let logvar = stats
            .slice(1, 3 * c, 3 * c)
            .reshape(&[3, c, h, w])
            .clamp(-30.0, 20.0);
        Ok(TriLatent { mu, logvar })
    }
}
