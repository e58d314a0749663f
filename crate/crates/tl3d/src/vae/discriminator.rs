//! Small convolutional discriminators and the two-discriminator scheme:
//! an input-view discriminator (dataset image vs input-view render) and a
//! novel-view discriminator that judges input-view renders against
//! novel-view renders. Pointing the novel-view discriminator at dataset
//! images instead is kept available as a configuration because it
//! reproduces a known failure mode (input-irrelevant novel views), which
//! the tests pin down.

use crate::nn::{Conv2d, Linear, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which "real" source the novel-view discriminator trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NovelDiscMode {
    /// No novel-view discriminator (multi-view datasets can rely on novel
    /// view supervision alone).
    Off,
    /// Real = input-view render (detached), fake = novel-view render.
    InputVsNovel,
    /// Real = dataset image, fake = novel-view render. Collapse-prone
    /// reference configuration.
    DatasetVsNovel,
}

/// PatchGAN-ish stack: three stride-2 convs and a linear head to one
/// logit per image.
pub struct Discriminator {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    head: Linear,
    crop: usize,
}

impl Discriminator {
    pub fn new(ps: &mut ParamSet, name: &str, crop: usize, base: usize, rng: &mut Rng) -> Discriminator {
        assert!(crop % 8 == 0, "discriminator crop {crop} must be divisible by 8");
        let s = crop / 8;
        Discriminator {
            c1: Conv2d::new(ps, &format!("{name}.c1"), 3, base, 3, 2, 1, rng),
            c2: Conv2d::new(ps, &format!("{name}.c2"), base, 2 * base, 3, 2, 1, rng),
            c3: Conv2d::new(ps, &format!("{name}.c3"), 2 * base, 2 * base, 3, 2, 1, rng),
            head: Linear::new(ps, &format!("{name}.head"), 2 * base * s * s, 1, rng),
            crop,
        }
    }

    /// x: [B, 3, crop, crop] -> logits [B, 1].
    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert!(
            x.shape().len() == 4 && x.shape()[2] == self.crop && x.shape()[3] == self.crop,
            "discriminator expects [B,3,{c},{c}], got {:?}",
            x.shape(),
            c = self.crop
        );
        let b = x.shape()[0];
        let h = self.c3.forward(&self.c2.forward(&self.c1.forward(x).silu()).silu()).silu();
        let flat = h.reshape(&[b, h.numel() / b]);
        self.head.forward(&flat)
    }
}

/// Non-saturating discriminator loss: softplus(-D(real)) + softplus(D(fake)).
pub fn disc_loss(d: &Discriminator, real: &Tensor, fake: &Tensor) -> Tensor {
    let real_term = d.forward(real).neg().softplus().mean_all();
    let fake_term = d.forward(fake).softplus().mean_all();
    real_term.add(&fake_term)
}

/// Non-saturating generator loss: softplus(-D(fake)); gradients flow into
/// the fake (rendered) images.
pub fn gen_loss(d: &Discriminator, fake: &Tensor) -> Tensor {
    d.forward(fake).neg().softplus().mean_all()
}

/// The two discriminators with their own parameter registry (optimized
/// separately from the generator).
pub struct DiscriminatorPair {
    pub params: ParamSet,
    pub input_view: Discriminator,
    pub novel_view: Discriminator,
    pub mode: NovelDiscMode,
}

impl DiscriminatorPair {
    pub fn new(crop: usize, base: usize, mode: NovelDiscMode, seed: u64) -> DiscriminatorPair {
        let mut rng = Rng::new(seed);
        let mut ps = ParamSet::new();
        let input_view = Discriminator::new(&mut ps, "disc.input", crop, base, &mut rng);
        let novel_view = Discriminator::new(&mut ps, "disc.novel", crop, base, &mut rng);
        DiscriminatorPair {
            params: ps,
            input_view,
            novel_view,
            mode,
        }
    }

    /// Discriminator-side losses on detached renders. Returns
    /// (input-view loss, optional novel-view loss).
    pub fn d_losses(
        &self,
        dataset_crop: &Tensor,
        input_render_detached: &Tensor,
        novel_render_detached: &Tensor,
    ) -> (Tensor, Option<Tensor>) {
        let d_in = disc_loss(&self.input_view, dataset_crop, input_render_detached);
        let d_novel = match self.mode {
            NovelDiscMode::Off => None,
            NovelDiscMode::InputVsNovel => Some(disc_loss(
                &self.novel_view,
                input_render_detached,
                novel_render_detached,
            )),
            NovelDiscMode::DatasetVsNovel => {
                Some(disc_loss(&self.novel_view, dataset_crop, novel_render_detached))
            }
        };
        (d_in, d_novel)
    }

    /// Generator-side adversarial loss through both discriminators.
    pub fn g_loss(&self, input_render: &Tensor, novel_render: &Tensor) -> Tensor {
        let g = gen_loss(&self.input_view, input_render);
        match self.mode {
            NovelDiscMode::Off => g,
            _ => g.add(&gen_loss(&self.novel_view, novel_render)),
        }
    }
}
