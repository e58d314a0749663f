//! Tri-plane neural field: three axis-aligned feature planes over the cube
//! [-1,1]^3, queried by projection + bilinear interpolation, decoded to
//! density and color by a small MLP, and rendered by quadrature
//! compositing ([`render`]). Surface points come from outer-shell voxel
//! sampling ([`points`]).

mod points;
mod render;

pub use points::extract_points;
pub use render::{volume_render, RenderOutput};

use crate::math3d::Vec3;
use crate::nn::{Linear, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Three feature planes (XY, XZ, YZ), stored as one [3, C, H, W] tensor so
/// the whole field stays differentiable end to end.
pub struct TriPlane {
    pub planes: Tensor,
}

impl TriPlane {
    pub fn new(planes: Tensor) -> TriPlane {
        let s = planes.shape();
        assert!(
            s.len() == 4 && s[0] == 3,
            "tri-plane tensor must be [3, C, H, W], got {:?}",
            s
        );
        TriPlane { planes }
    }

    pub fn zeros(channels: usize, resolution: usize) -> TriPlane {
        TriPlane::new(Tensor::zeros(&[3, channels, resolution, resolution]))
    }

    /// Trainable planes initialized with small noise (direct-field fitting).
    pub fn randn(channels: usize, resolution: usize, std: f64, rng: &mut Rng) -> TriPlane {
        TriPlane::new(Tensor::param(
            rng.normal_vec(3 * channels * resolution * resolution)
                .iter()
                .map(|v| v * std)
                .collect(),
            &[3, channels, resolution, resolution],
        ))
    }

    pub fn channels(&self) -> usize {
        self.planes.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.planes.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.planes.shape()[3]
    }
}

/// Projected plane coordinates of a 3D point for plane index 0 (XY),
/// 1 (XZ), 2 (YZ).
#[inline]
fn plane_uv(p: Vec3, plane: usize) -> (f64, f64) {
    match plane {
        0 => (p.x, p.y),
        1 => (p.x, p.z),
        _ => (p.y, p.z),
    }
}

/// Bilinear taps (4 corner texel offsets + weights) for uv in [-1,1]^2 on
/// an HxW grid with texel centers on grid nodes; coordinates clamp to the
/// border.
fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> [(usize, f64); 4] {
    let tu = ((u + 1.0) * 0.5 * (w - 1) as f64).clamp(0.0, (w - 1) as f64);
    let tv = ((v + 1.0) * 0.5 * (h - 1) as f64).clamp(0.0, (h - 1) as f64);
    let x0 = (tu.floor() as usize).min(w - 1);
    let y0 = (tv.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = tu - x0 as f64;
    let fy = tv - y0 as f64;
    [
        (y0 * w + x0, (1.0 - fy) * (1.0 - fx)),
        (y0 * w + x1, (1.0 - fy) * fx),
        (y1 * w + x0, fy * (1.0 - fx)),
        (y1 * w + x1, fy * fx),
    ]
}

/// Project each point onto the three planes, bilinearly interpolate, and
/// sum the three feature vectors: [N, C]. Points outside [-1,1]^3 clamp to
/// the plane borders. Differentiable in the plane features; point
/// positions are constants.
pub fn query_features(tp: &TriPlane, points: &[Vec3]) -> Tensor {
    let (c, h, w) = (tp.channels(), tp.height(), tp.width());
    let n = points.len();
    let plane_stride = c * h * w;
    let chan_stride = h * w;

    // taps[point * 3 + plane]
    let mut taps = Vec::with_capacity(n * 3);
    for p in points {
        for plane in 0..3 {
            let (u, v) = plane_uv(*p, plane);
            taps.push(bilinear_taps(u, v, h, w));
        }
    }

    let mut out = vec![0.0; n * c];
    tp.planes.with_data(|pd| {
        for i in 0..n {
            for plane in 0..3 {
                let tap = &taps[i * 3 + plane];
                for ch in 0..c {
                    let base = plane * plane_stride + ch * chan_stride;
                    let mut acc = 0.0;
                    for &(off, wgt) in tap {
                        acc += pd[base + off] * wgt;
                    }
                    out[i * c + ch] += acc;
                }
            }
        }
    });

    Tensor::from_op(out, vec![n, c], vec![tp.planes.clone()], move |_, g, ps| {
        ps[0].with_grad(|gp| {
            for i in 0..n {
                for plane in 0..3 {
                    let tap = &taps[i * 3 + plane];
                    for ch in 0..c {
                        let base = plane * plane_stride + ch * chan_stride;
                        let gv = g[i * c + ch];
                        for &(off, wgt) in tap {
                            gp[base + off] += gv * wgt;
                        }
                    }
                }
            }
        });
    })
}

/// Two-hidden-layer perceptron mapping an aggregated C-vector to a density
/// logit and RGB. Density goes through softplus (>= 0), color through
/// sigmoid.
pub struct FieldMlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl FieldMlp {
    pub fn new(ps: &mut ParamSet, name: &str, channels: usize, hidden: usize, rng: &mut Rng) -> FieldMlp {
        FieldMlp {
            l1: Linear::new(ps, &format!("{name}.l1"), channels, hidden, rng),
            l2: Linear::new(ps, &format!("{name}.l2"), hidden, hidden, rng),
            l3: Linear::new(ps, &format!("{name}.l3"), hidden, 4, rng),
        }
    }

    /// feats: [N, C] -> (density [N], rgb [N, 3]); both post-activation.
    pub fn forward(&self, feats: &Tensor) -> (Tensor, Tensor) {
        let h = self.l2.forward(&self.l1.forward(feats).silu()).silu();
        let raw = self.l3.forward(&h); // [N, 4]
        let density = raw.slice(1, 0, 1).softplus();
        let rgb = raw.slice(1, 1, 3).sigmoid();
        (density, rgb)
    }

    /// Density only, for grid evaluation.
    pub fn density(&self, feats: &Tensor) -> Tensor {
        self.forward(feats).0
    }
}
