//! Transformer decoder over the tri-latent and the convolutional
//! upsampler to the final tri-plane.
//!
//! The tokens entering attention are learnable positional embeddings; the
//! latent z conditions every block through adaptive layer-norm modulation
//! (shift/scale/gate per sub-layer) predicted from z by a per-block MLP.
//! Self-plane blocks attend within each plane's tokens; cross-plane blocks
//! attend over the rolled-out 3l sequence. Gates start at zero, so each
//! block is the identity at initialization.

use super::VaeConfig;
use crate::field::TriPlane;
use crate::nn::{Conv2d, Init, Linear, Mlp, MultiHeadAttention, ParamSet, ResBlock2d};
use crate::rng::Rng;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneScope {
    /// Attention within each latent plane independently.
    SelfPlane,
    /// Attention over the rolled-out 3l token sequence.
    CrossPlane,
}

/// Default interleave: self, cross, repeating (layer count must be even).
pub fn alternating_pattern(n_layers: usize) -> Vec<PlaneScope> {
    (0..n_layers)
        .map(|i| if i % 2 == 0 { PlaneScope::SelfPlane } else { PlaneScope::CrossPlane })
        .collect()
}

struct DecBlock {
    scope: PlaneScope,
    /// z (flattened per-plane or whole) -> 6 modulation vectors of width D.
    mod_in: Linear,
    mod_out: Linear,
    attn: MultiHeadAttention,
    mlp: Mlp,
}

impl DecBlock {
    fn new(ps: &mut ParamSet, name: &str, scope: PlaneScope, cfg: &VaeConfig, rng: &mut Rng) -> DecBlock {
        let l = cfg.latent_side() * cfg.latent_side();
        let d = cfg.dec_dim;
        let z_dim = match scope {
            PlaneScope::SelfPlane => l * cfg.latent_channels,
            PlaneScope::CrossPlane => 3 * l * cfg.latent_channels,
        };
        DecBlock {
            scope,
            mod_in: Linear::new(ps, &format!("{name}.mod_in"), z_dim, d, rng),
            // zero-init: shift = scale = gate = 0 at start
            mod_out: Linear::zeroed(ps, &format!("{name}.mod_out"), d, 6 * d, rng),
            attn: MultiHeadAttention::new(ps, &format!("{name}.attn"), d, d, cfg.dec_heads, cfg.qk_norm, rng),
            mlp: Mlp::new(ps, &format!("{name}.mlp"), d, 4 * d, d, rng),
        }
    }

    /// x: [3, l, D]; z: [3, l*c] per-plane flattening.
    fn forward(&self, x: &Tensor, z_planes: &Tensor, z_full: &Tensor) -> Tensor {
        let (_, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        // modulation source and attention batch layout depend on scope
        let (xb, mods) = match self.scope {
            PlaneScope::SelfPlane => {
                let m = self.mod_out.forward(&self.mod_in.forward(z_planes).silu()); // [3, 6D]
                (x.clone(), m.reshape(&[3, 1, 6 * d]))
            }
            PlaneScope::CrossPlane => {
                let m = self.mod_out.forward(&self.mod_in.forward(z_full).silu()); // [1, 6D]
                (x.reshape(&[1, 3 * l, d]), m.reshape(&[1, 1, 6 * d]))
            }
        };
        let piece = |i: usize| mods.slice(2, i * d, d); // [B, 1, D]
        let (shift1, scale1, gate1) = (piece(0), piece(1), piece(2));
        let (shift2, scale2, gate2) = (piece(3), piece(4), piece(5));

        let modulate = |t: &Tensor, shift: &Tensor, scale: &Tensor| {
            t.mul(&scale.add_scalar(1.0)).add(shift)
        };
        let h1 = modulate(&xb.layer_norm_last(LN_EPS), &shift1, &scale1);
        let xb = xb.add(&gate1.mul(&self.attn.forward(&h1, &h1)));
        let h2 = modulate(&xb.layer_norm_last(LN_EPS), &shift2, &scale2);
        let xb = xb.add(&gate2.mul(&self.mlp.forward(&h2)));

        match self.scope {
            PlaneScope::SelfPlane => xb,
            PlaneScope::CrossPlane => xb.reshape(&[3, l, d]),
        }
    }
}

pub struct DecoderTransformer {
    /// Learnable positional tokens [3, l, D].
    pub pos: Tensor,
    blocks: Vec<DecBlock>,
    final_proj: Linear,
    latent_side: usize,
    latent_channels: usize,
    out_channels: usize,
}

impl DecoderTransformer {
    pub fn new(ps: &mut ParamSet, cfg: &VaeConfig, rng: &mut Rng) -> DecoderTransformer {
        Self::with_pattern(ps, cfg, &alternating_pattern(cfg.dec_layers), rng)
    }

    pub fn with_pattern(
        ps: &mut ParamSet,
        cfg: &VaeConfig,
        pattern: &[PlaneScope],
        rng: &mut Rng,
    ) -> DecoderTransformer {
        let side = cfg.latent_side();
        let l = side * side;
        let pos = ps.param("dec.pos", &[3, l, cfg.dec_dim], Init::Normal(0.02), rng);
        let blocks = pattern
            .iter()
            .enumerate()
            .map(|(i, &scope)| DecBlock::new(ps, &format!("dec.block{i}"), scope, cfg, rng))
            .collect();
        DecoderTransformer {
            pos,
            blocks,
            final_proj: Linear::new(ps, "dec.final", cfg.dec_dim, cfg.dec_out_channels, rng),
            latent_side: side,
            latent_channels: cfg.latent_channels,
            out_channels: cfg.dec_out_channels,
        }
    }

    /// z: [3, c, h, w] -> refined spatial tokens [3, c_out, h, w].
    pub fn forward(&self, z: &Tensor) -> Tensor {
        let side = self.latent_side;
        let l = side * side;
        let c = self.latent_channels;
        assert!(
            z.shape() == [3, c, side, side],
            "decoder expects z of shape [3x{c}x{side}x{side}], got {:?}",
            z.shape()
        );
        // token order: plane-major, row-major within a plane
        let z_tokens = z.permute(&[0, 2, 3, 1]); // [3, h, w, c]
        let z_planes = z_tokens.reshape(&[3, l * c]);
        let z_full = z_tokens.reshape(&[1, 3 * l * c]);

        let mut x = self.pos.clone();
        for block in &self.blocks {
            x = block.forward(&x, &z_planes, &z_full);
        }
        let out = self.final_proj.forward(&x.layer_norm_last(LN_EPS)); // [3, l, c_out]
        out.reshape(&[3, side, side, self.out_channels])
            .permute(&[0, 3, 1, 2])
    }
}

/// Shared-weight convolutional upsampler: each plane is processed in
/// parallel as a batch entry, 2 bilinear doublings for a fixed 4x factor.
pub struct Upsampler {
    conv_in: Conv2d,
    res1: ResBlock2d,
    conv_mid: Conv2d,
    res2: ResBlock2d,
    conv_out: Conv2d,
}

impl Upsampler {
    pub fn new(ps: &mut ParamSet, cfg: &VaeConfig, rng: &mut Rng) -> Upsampler {
        let u = cfg.up_channels;
        Upsampler {
            conv_in: Conv2d::new(ps, "up.conv_in", cfg.dec_out_channels, u, 3, 1, 1, rng),
            res1: ResBlock2d::new(ps, "up.res1", u, rng),
            conv_mid: Conv2d::new(ps, "up.conv_mid", u, u, 3, 1, 1, rng),
            res2: ResBlock2d::new(ps, "up.res2", u, rng),
            conv_out: Conv2d::new(ps, "up.conv_out", u, cfg.triplane_channels, 3, 1, 1, rng),
        }
    }

    /// tokens: [3, c_out, h, w] -> TriPlane [3, C, 4h, 4w].
    pub fn forward(&self, tokens: &Tensor) -> TriPlane {
        let x = self.conv_in.forward(tokens).silu();
        let x = self.res1.forward(&x).bilinear_up2x();
        let x = self.conv_mid.forward(&x).silu();
        let x = self.res2.forward(&x).bilinear_up2x();
        TriPlane::new(self.conv_out.forward(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck_subset, no_grad};

    fn mini_cfg() -> VaeConfig {
        VaeConfig {
            image_size: 32,
            in_views: 1,
            use_depth: false,
            latent_channels: 4,
            enc_channels: 8,
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
    fn zero_init_gates_make_blocks_identity() {
        let mut rng = Rng::new(3);
        let cfg = mini_cfg();
        let mut ps = ParamSet::new();
        let dec = DecoderTransformer::new(&mut ps, &cfg, &mut rng);
        let side = cfg.latent_side();

        let z1 = Tensor::from_vec(rng.normal_vec(3 * 4 * side * side), &[3, 4, side, side]);
        let z2 = Tensor::zeros(&[3, 4, side, side]);
        let (o1, o2) = no_grad(|| (dec.forward(&z1).to_vec(), dec.forward(&z2).to_vec()));
        // gates are zero: output ignores z entirely
        assert_eq!(o1, o2);

        // and equals the positional-token baseline through the final head
        let baseline = no_grad(|| {
            dec.final_proj
                .forward(&dec.pos.layer_norm_last(1e-5))
                .reshape(&[3, side, side, cfg.dec_out_channels])
                .permute(&[0, 3, 1, 2])
                .to_vec()
        });
        assert_eq!(o1, baseline);
    }

    #[test]
    fn self_plane_blocks_never_leak_across_planes() {
        let mut rng = Rng::new(4);
        let cfg = mini_cfg();
        let mut ps = ParamSet::new();
        let dec = DecoderTransformer::with_pattern(
            &mut ps,
            &cfg,
            &[PlaneScope::SelfPlane, PlaneScope::SelfPlane],
            &mut rng,
        );
        // wake the gates up so z actually matters
        for (name, t) in ps.entries() {
            if name.contains("mod_out") {
                t.set_data(&rng.normal_vec(t.numel()).iter().map(|v| v * 0.5).collect::<Vec<_>>());
            }
        }
        let side = cfg.latent_side();
        let base = rng.normal_vec(3 * 4 * side * side);
        let mut bumped = base.clone();
        for v in bumped.iter_mut().skip(1 * 4 * side * side).take(4 * side * side) {
            *v += 1.5; // perturb plane 1 only
        }
        let z1 = Tensor::from_vec(base, &[3, 4, side, side]);
        let z2 = Tensor::from_vec(bumped, &[3, 4, side, side]);
        let (o1, o2) = no_grad(|| (dec.forward(&z1).to_vec(), dec.forward(&z2).to_vec()));
        let plane_len = cfg.dec_out_channels * side * side;
        // plane 0 and plane 2 outputs are bit-identical
        assert_eq!(o1[..plane_len], o2[..plane_len]);
        assert_eq!(o1[2 * plane_len..], o2[2 * plane_len..]);
        // plane 1 moved
        assert!(o1[plane_len..2 * plane_len] != o2[plane_len..2 * plane_len]);
    }

    #[test]
    fn cross_plane_attention_is_permutation_equivariant() {
        // 6-token toy on the attention core used by cross-plane blocks
        let mut rng = Rng::new(5);
        let mut ps = ParamSet::new();
        let attn = MultiHeadAttention::new(&mut ps, "a", 8, 8, 2, true, &mut rng);
        let x = Tensor::from_vec(rng.normal_vec(6 * 8), &[1, 6, 8]);
        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let xp = {
            let xd = x.to_vec();
            let mut p = vec![0.0; 6 * 8];
            for (dst, &src) in perm.iter().enumerate() {
                p[dst * 8..(dst + 1) * 8].copy_from_slice(&xd[src * 8..(src + 1) * 8]);
            }
            Tensor::from_vec(p, &[1, 6, 8])
        };
        let out = no_grad(|| attn.forward(&x, &x).to_vec());
        let out_p = no_grad(|| attn.forward(&xp, &xp).to_vec());
        for (dst, &src) in perm.iter().enumerate() {
            for ch in 0..8 {
                let a = out_p[dst * 8 + ch];
                let b = out[src * 8 + ch];
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn upsampler_quadruples_resolution() {
        let mut rng = Rng::new(6);
        let cfg = mini_cfg();
        let mut ps = ParamSet::new();
        let up = Upsampler::new(&mut ps, &cfg, &mut rng);
        let x = Tensor::from_vec(rng.normal_vec(3 * cfg.dec_out_channels * 4 * 4), &[3, cfg.dec_out_channels, 4, 4]);
        let tp = no_grad(|| up.forward(&x));
        assert_eq!(tp.planes.shape(), &[3, cfg.triplane_channels, 16, 16]);
    }

    #[test]
    fn zero_input_upsampler_gives_constant_planes() {
        let mut rng = Rng::new(7);
        let cfg = mini_cfg();
        let mut ps = ParamSet::new();
        let up = Upsampler::new(&mut ps, &cfg, &mut rng);
        let x = Tensor::zeros(&[3, cfg.dec_out_channels, 4, 4]);
        let tp = no_grad(|| up.forward(&x));
        let v = tp.planes.to_vec();
        // constant per (plane, channel): interior equals interior; borders
        // differ from interior only through conv padding, so compare within
        // the interior region
        let (c, h, w) = (cfg.triplane_channels, 16, 16);
        for plane in 0..3 {
            for ch in 0..c {
                let base = (plane * c + ch) * h * w;
                let center = v[base + 8 * w + 8];
                for y in 3..h - 3 {
                    for x in 3..w - 3 {
                        assert!(
                            (v[base + y * w + x] - center).abs() < 1e-9,
                            "interior not constant"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn upsampler_passes_gradcheck() {
        let mut rng = Rng::new(8);
        let cfg = mini_cfg();
        let mut ps = ParamSet::new();
        let up = Upsampler::new(&mut ps, &cfg, &mut rng);
        let x = Tensor::param(rng.normal_vec(3 * cfg.dec_out_channels * 4 * 4), &[3, cfg.dec_out_channels, 4, 4]);
        let f = || {
            let tp = up.forward(&x);
            tp.planes.mul(&tp.planes).mean_all()
        };
        let entries: Vec<(String, Tensor)> = ps.entries().to_vec();
        let mut params: Vec<(&str, &Tensor)> = vec![("x", &x)];
        for (n, t) in &entries {
            params.push((n.as_str(), t));
        }
        let report = gradcheck_subset("upsampler", f, &params, 1e-5, 1e-4, 12, &mut rng);
        assert!(report.passed, "{report}");
    }

    #[test]
    fn decoder_with_live_gates_passes_gradcheck() {
        let mut rng = Rng::new(9);
        let mut cfg = mini_cfg();
        cfg.image_size = 16; // latent side 2: tiny graph
        let mut ps = ParamSet::new();
        let dec = DecoderTransformer::new(&mut ps, &cfg, &mut rng);
        for (name, t) in ps.entries() {
            if name.contains("mod_out") {
                t.set_data(&rng.normal_vec(t.numel()).iter().map(|v| v * 0.3).collect::<Vec<_>>());
            }
        }
        let side = cfg.latent_side();
        let z = Tensor::param(rng.normal_vec(3 * 4 * side * side), &[3, 4, side, side]);
        let f = || {
            let y = dec.forward(&z);
            y.mul(&y).mean_all()
        };
        let entries: Vec<(String, Tensor)> = ps.entries().to_vec();
        let mut params: Vec<(&str, &Tensor)> = vec![("z", &z)];
        for (n, t) in &entries {
            params.push((n.as_str(), t));
        }
        let report = gradcheck_subset("decoder_transformer", f, &params, 1e-5, 1e-4, 6, &mut rng);
        assert!(report.passed, "{report}");
    }
}
