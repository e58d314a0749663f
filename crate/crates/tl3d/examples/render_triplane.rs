//! Differentiable tri-plane rendering without any training: hand-build a
//! field whose density is a sphere indicator, render color/depth images,
//! and compare the silhouette against the analytic ray tracer's mask.
//!
//! The construction stores the squared radial coordinate of each plane's
//! two axes in channel 0, so the summed tri-plane feature is 2 r^2; the
//! field MLP is hand-set to threshold that value at the target radius.
//!
//! Run: cargo run --release --example render_triplane

use tl3d::datagen::{render_analytic, Primitive, Scene, Shape};
use tl3d::field::{FieldMlp, TriPlane};
use tl3d::geometry::CameraPose;
use tl3d::harness::render_image;
use tl3d::imageio::{write_pgm, write_ppm};
use tl3d::math3d::{vec3, Vec3};
use tl3d::nn::ParamSet;
use tl3d::tensor::Tensor;
use tl3d::Rng;

fn sphere_field(radius: f64, res: usize, gain: f64) -> (TriPlane, FieldMlp) {
    let mut data = vec![0.0; 3 * res * res];
    for plane in 0..3 {
        for yi in 0..res {
            for xi in 0..res {
                let u = xi as f64 / (res - 1) as f64 * 2.0 - 1.0;
                let v = yi as f64 / (res - 1) as f64 * 2.0 - 1.0;
                data[plane * res * res + yi * res + xi] = u * u + v * v;
            }
        }
    }
    let tp = TriPlane::new(Tensor::from_vec(data, &[3, 1, res, res]));

    let mut rng = Rng::new(0);
    let mut ps = ParamSet::new();
    let mlp = FieldMlp::new(&mut ps, "mlp", 1, 4, &mut rng);
    for t in [&mlp.l1.w, &mlp.l2.w, &mlp.l3.w] {
        t.set_data(&vec![0.0; t.numel()]);
    }
    for t in [mlp.l1.b.as_ref().unwrap(), mlp.l2.b.as_ref().unwrap(), mlp.l3.b.as_ref().unwrap()] {
        t.set_data(&vec![0.0; t.numel()]);
    }
    // density logit = gain * (2 radius^2 - feature), positive inside
    mlp.l1.w.update_data(|w| w[0] = -gain);
    mlp.l1.b.as_ref().unwrap().update_data(|b| b[0] = gain * 2.0 * radius * radius);
    mlp.l2.w.update_data(|w| w[0] = 1.0);
    mlp.l3.w.update_data(|w| w[0] = 1.0);
    (tp, mlp)
}

fn main() {
    let size = 64;
    let radius = 0.5;
    let (tp, mlp) = sphere_field(radius, 128, 2000.0);
    let cam = CameraPose::look_at(vec3(1.3, 1.1, 1.4), Vec3::ZERO, 0.55 * size as f64, size, size);

    let (rgb, depth) = render_image(&tp, &mlp, &cam, 96, 1.2, 3.2).unwrap();
    let out = std::env::temp_dir().join("tl3d_render_triplane");
    std::fs::create_dir_all(&out).unwrap();
    write_ppm(&out.join("sphere.ppm"), &rgb, size, size).unwrap();
    write_pgm(&out.join("sphere_depth.pgm"), &depth, size, size, Some((1.2, 3.2))).unwrap();

    // silhouette IoU against the analytic mask of the same sphere
    let scene = Scene {
        id: 0,
        primitives: vec![Primitive {
            shape: Shape::Sphere { radius },
            center: Vec3::ZERO,
            color: 0,
        }],
        caption: "one red sphere".into(),
    };
    let analytic = render_analytic(&scene, &cam, size, size);
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..size * size {
        // rendered silhouette: non-background pixel
        let rendered_hit = depth[i] > 0.0 && (rgb[i * 3] < 0.999 || rgb[i * 3 + 1] < 0.999);
        let analytic_hit = analytic.mask[i] == 1;
        if rendered_hit && analytic_hit {
            inter += 1;
        }
        if rendered_hit || analytic_hit {
            union += 1;
        }
    }
    let iou = inter as f64 / union.max(1) as f64;
    println!("silhouette IoU vs analytic mask: {iou:.4}");
    println!("images written under {}", out.display());
}
