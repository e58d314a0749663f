//! Shared network building blocks on top of the tensor substrate:
//! a named-parameter registry, linear/conv layers, multi-head attention
//! with optional QK normalization, and sinusoidal time embeddings.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Initialization families for registered parameters.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Normal with std 1/sqrt(fan_in); fan_in inferred from the shape
    /// ([in, out] for linear weights, [co, ci, kh, kw] for conv kernels).
    FanIn,
}

/// Insertion-ordered registry of named trainable tensors. The order is the
/// contract for optimizer state and checkpoints, so it must be identical
/// across runs for a given config.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new() }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Rng) -> Tensor {
        assert!(
            self.entries.iter().all(|(n, _)| n != name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n).map(|_| rng.normal() * std).collect(),
            Init::FanIn => {
                let fan_in = match shape.len() {
                    2 => shape[0],
                    4 => shape[1] * shape[2] * shape[3],
                    _ => n.max(1),
                };
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.normal() * std).collect()
            }
        };
        let t = Tensor::param(data, shape);
        self.entries.push((name.to_string(), t.clone()));
        t
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Merge another registry under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) {
        for (name, t) in other.entries {
            let full = format!("{prefix}.{name}");
            assert!(
                self.entries.iter().all(|(n, _)| *n != full),
                "duplicate parameter name {full}"
            );
            self.entries.push((full, t));
        }
    }
}

pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: ps.param(&format!("{name}.w"), &[in_dim, out_dim], Init::FanIn, rng),
            b: Some(ps.param(&format!("{name}.b"), &[out_dim], Init::Zeros, rng)),
        }
    }

    pub fn new_no_bias(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: ps.param(&format!("{name}.w"), &[in_dim, out_dim], Init::FanIn, rng),
            b: None,
        }
    }

    /// Zero-initialized projection (identity-at-init blocks).
    pub fn zeroed(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: ps.param(&format!("{name}.w"), &[in_dim, out_dim], Init::Zeros, rng),
            b: Some(ps.param(&format!("{name}.b"), &[out_dim], Init::Zeros, rng)),
        }
    }

    /// x: [..., in] -> [..., out]
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let shape = x.shape().to_vec();
        let in_dim = *shape.last().expect("linear input must have rank >= 1");
        let rows = x.numel() / in_dim;
        let flat = x.reshape(&[rows, in_dim]);
        let mut y = flat.matmul(&self.w);
        if let Some(b) = &self.b {
            y = y.add(b);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.w.shape()[1];
        y.reshape(&out_shape)
    }
}

/// Two-layer feed-forward with SiLU.
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, hidden: usize, out: usize, rng: &mut Rng) -> Mlp {
        Mlp {
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, hidden, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, out, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.fc2.forward(&self.fc1.forward(x).silu())
    }
}

/// Multi-head attention with optional RMS normalization of q and k
/// (QK-norm) before the dot product. Queries and keys/values may come from
/// different sequences (cross-attention).
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub qk_norm: bool,
}

impl MultiHeadAttention {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        dim: usize,
        kv_dim: usize,
        n_heads: usize,
        qk_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(dim % n_heads == 0, "attention dim {dim} not divisible by {n_heads} heads");
        MultiHeadAttention {
            wq: Linear::new_no_bias(ps, &format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new_no_bias(ps, &format!("{name}.wk"), kv_dim, dim, rng),
            wv: Linear::new_no_bias(ps, &format!("{name}.wv"), kv_dim, dim, rng),
            wo: Linear::new_no_bias(ps, &format!("{name}.wo"), dim, dim, rng),
            n_heads,
            qk_norm,
        }
    }

    /// q_in: [B, Tq, D], kv_in: [B, Tk, Dkv] -> [B, Tq, D]
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor) -> Tensor {
        assert!(
            q_in.shape().len() == 3 && kv_in.shape().len() == 3,
            "attention expects [batch, tokens, dim] inputs"
        );
        let (b, tq, d) = (q_in.shape()[0], q_in.shape()[1], q_in.shape()[2]);
        let tk = kv_in.shape()[1];
        let h = self.n_heads;
        let dh = d / h;

        let split = |t: &Tensor, tlen: usize| -> Tensor {
            // [B, T, D] -> [B*h, T, dh]
            t.reshape(&[b, tlen, h, dh])
                .permute(&[0, 2, 1, 3])
                .reshape(&[b * h, tlen, dh])
        };
        let mut q = split(&self.wq.forward(q_in), tq);
        let mut k = split(&self.wk.forward(kv_in), tk);
        let v = split(&self.wv.forward(kv_in), tk);
        if self.qk_norm {
            q = q.rms_norm_last(1e-5);
            k = k.rms_norm_last(1e-5);
        }
        let scores = q
            .bmm(&k.permute(&[0, 2, 1]))
            .scale(1.0 / (dh as f64).sqrt())
            .softmax_last();
        let ctx = scores.bmm(&v); // [B*h, Tq, dh]
        let merged = ctx
            .reshape(&[b, h, tq, dh])
            .permute(&[0, 2, 1, 3])
            .reshape(&[b, tq, d]);
        self.wo.forward(&merged)
    }
}

pub struct Conv2d {
    pub w: Tensor, // [co, ci, k, k]
    pub b: Tensor, // [co]
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Conv2d {
        Conv2d {
            w: ps.param(&format!("{name}.w"), &[co, ci, k, k], Init::FanIn, rng),
            b: ps.param(&format!("{name}.b"), &[co], Init::Zeros, rng),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.conv2d(&self.w, Some(&self.b), self.stride, self.pad)
    }
}

/// Pre-activation residual conv block: x + conv(silu(conv(silu(x)))).
pub struct ResBlock2d {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

impl ResBlock2d {
    pub fn new(ps: &mut ParamSet, name: &str, ch: usize, rng: &mut Rng) -> ResBlock2d {
        ResBlock2d {
            c1: Conv2d::new(ps, &format!("{name}.c1"), ch, ch, 3, 1, 1, rng),
            c2: Conv2d::new(ps, &format!("{name}.c2"), ch, ch, 3, 1, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        x.add(&self.c2.forward(&self.c1.forward(&x.silu()).silu()))
    }
}

/// Sinusoidal embedding of a continuous time in [0, 1]; half sines, half
/// cosines over log-spaced frequencies.
pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(10_000.0f64.ln()) * i as f64 / half as f64).exp();
        out.push((t * 1000.0 * freq).sin());
    }
    for i in 0..half {
        let freq = (-(10_000.0f64.ln()) * i as f64 / half as f64).exp();
        out.push((t * 1000.0 * freq).cos());
    }
    out
}
