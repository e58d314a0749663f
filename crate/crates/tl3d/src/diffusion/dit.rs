//! Full-attention transformer denoiser over the 3l-token latent sequence.
//!
//! Pre-norm blocks with RMS normalization and QK-norm; time enters through
//! a single shared modulation MLP whose 6-vector output is offset by
//! per-layer learned biases (zero-initialized, so every block starts as
//! the identity). Conditions inject via gated cross-attention; patch
//! tokens, when present, are prepended to the self-attention sequence and
//! stripped from the output.

use super::LatentShape;
use crate::conditioning::{cross_attention_kv, ConditionSet};
use crate::error::Result;
use crate::nn::{timestep_embedding, Init, Linear, Mlp, MultiHeadAttention, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

const RMS_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct DitConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Learnable positional embeddings (disable for permutation tests).
    pub use_pos: bool,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            dim: 64,
            layers: 4,
            heads: 4,
            use_pos: true,
        }
    }
}

struct DitBlock {
    /// Per-layer offset added to the shared time modulation.
    mod_bias: Tensor, // [6D]
    self_attn: MultiHeadAttention,
    cross_attn: MultiHeadAttention,
    cross_gate: Tensor, // [D]
    mlp: Mlp,
}

impl DitBlock {
    fn new(ps: &mut ParamSet, name: &str, dim: usize, heads: usize, cond_dim: usize, rng: &mut Rng) -> DitBlock {
        DitBlock {
            mod_bias: ps.param(&format!("{name}.mod_bias"), &[6 * dim], Init::Zeros, rng),
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self"), dim, dim, heads, true, rng),
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross"), dim, cond_dim, heads, true, rng),
            cross_gate: ps.param(&format!("{name}.cross_gate"), &[dim], Init::Zeros, rng),
            mlp: Mlp::new(ps, &format!("{name}.mlp"), dim, 4 * dim, dim, rng),
        }
    }

    /// x: [B, T, D]; patches: optional [P, D]; shared_mod: [6D].
    fn forward(&self, x: &Tensor, patches: Option<&Tensor>, cond_kv: &Tensor, shared_mod: &Tensor) -> Tensor {
        let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mods = shared_mod.add(&self.mod_bias).reshape(&[1, 1, 6 * d]);
        let piece = |i: usize| mods.slice(2, i * d, d); // [1,1,D]
        let (shift1, scale1, gate1) = (piece(0), piece(1), piece(2));
        let (shift2, scale2, gate2) = (piece(3), piece(4), piece(5));
        let modulate = |t: &Tensor, shift: &Tensor, scale: &Tensor| {
            t.mul(&scale.add_scalar(1.0)).add(shift)
        };

        // self-attention, with condition patch tokens prepended and stripped
        let h = modulate(&x.rms_norm_last(RMS_EPS), &shift1, &scale1);
        let attn_out = match patches {
            Some(p) => {
                let pl = p.shape()[0];
                let pb = p.reshape(&[1, pl, d]).broadcast_to(&[b, pl, d]);
                let ext = Tensor::concat(&[&pb, &h], 1); // [B, P+T, D]
                let full = self.self_attn.forward(&ext, &ext);
                full.slice(1, pl, t)
            }
            None => self.self_attn.forward(&h, &h),
        };
        let x = x.add(&gate1.mul(&attn_out));

        // gated cross-attention to the pooled+sequence condition
        let kvb = cond_kv.broadcast_to(&[b, cond_kv.shape()[1], cond_kv.shape()[2]]);
        let cross = self.cross_attn.forward(&x.rms_norm_last(RMS_EPS), &kvb);
        let x = x.add(&self.cross_gate.mul(&cross));

        let h2 = modulate(&x.rms_norm_last(RMS_EPS), &shift2, &scale2);
        x.add(&gate2.mul(&self.mlp.forward(&h2)))
    }
}

pub struct DitDenoiser {
    latent: LatentShape,
    cfg: DitConfig,
    embed: Linear,
    pos: Tensor, // [3l, D]
    time_shared: Mlp,
    time_dim: usize,
    blocks: Vec<DitBlock>,
    final_proj: Linear,
}

impl DitDenoiser {
    pub fn new(
        ps: &mut ParamSet,
        cfg: &DitConfig,
        latent: LatentShape,
        cond_dim: usize,
        rng: &mut Rng,
    ) -> Result<DitDenoiser> {
        let l = latent.side * latent.side;
        let time_dim = cfg.dim;
        let blocks = (0..cfg.layers)
            .map(|i| DitBlock::new(ps, &format!("dit.block{i}"), cfg.dim, cfg.heads, cond_dim, rng))
            .collect();
        Ok(DitDenoiser {
            latent,
            cfg: *cfg,
            embed: Linear::new(ps, "dit.embed", latent.channels, cfg.dim, rng),
            pos: ps.param("dit.pos", &[3 * l, cfg.dim], Init::Normal(0.02), rng),
            // shared adaLN MLP; zero-init output keeps blocks identity at start
            time_shared: Mlp {
                fc1: Linear::new(ps, "dit.time.fc1", time_dim, time_dim, rng),
                fc2: Linear::zeroed(ps, "dit.time.fc2", time_dim, 6 * cfg.dim, rng),
            },
            time_dim,
            blocks,
            final_proj: Linear::zeroed(ps, "dit.final", cfg.dim, latent.channels, rng),
        })
    }

    /// Embedded input tokens (before any block): [B, 3l, D].
    pub fn embed_tokens(&self, z_t: &Tensor) -> Tensor {
        let s = z_t.shape().to_vec();
        assert!(
            s.len() == 5 && s[1] == 3 && s[2] == self.latent.channels && s[3] == self.latent.side && s[4] == self.latent.side,
            "dit expects [B,3,{},{},{}], got {:?}",
            self.latent.channels,
            self.latent.side,
            self.latent.side,
            s
        );
        let (b, c, side) = (s[0], s[2], s[3]);
        let l = side * side;
        let tokens = z_t
            .permute(&[0, 1, 3, 4, 2]) // [B,3,h,w,c]
            .reshape(&[b, 3 * l, c]);
        let mut x = self.embed.forward(&tokens); // [B, 3l, D]
        if self.cfg.use_pos {
            x = x.add(&self.pos.reshape(&[1, 3 * l, self.cfg.dim]));
        }
        x
    }

    /// z_t: [B, 3, c, h, w] -> same-shape prediction; condition patch
    /// tokens participate only inside attention (output length is 3l).
    pub fn forward(&self, z_t: &Tensor, t: f64, cond: &ConditionSet) -> Tensor {
        let s = z_t.shape().to_vec();
        let (b, c, side) = (s[0], s[2], s[3]);
        let x = self.embed_tokens(z_t);
        let temb = Tensor::from_vec(timestep_embedding(t, self.time_dim), &[1, self.time_dim]);
        let shared_mod = self.time_shared.forward(&temb).reshape(&[6 * self.cfg.dim]);
        let kv = cross_attention_kv(cond, self.cfg.dim);
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(&h, cond.patches.as_ref(), &kv, &shared_mod);
        }
        let out = self.final_proj.forward(&h.rms_norm_last(RMS_EPS)); // [B, 3l, c]
        out.reshape(&[b, 3, side, side, c]).permute(&[0, 1, 4, 2, 3])
    }
}
