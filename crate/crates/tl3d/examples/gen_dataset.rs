//! Procedural dataset generation: build a small multi-view RGB-D set of
//! primitive scenes, write the single-file container, read it back, and
//! dump preview images for the first scene.
//!
//! Run: cargo run --release --example gen_dataset

use tl3d::datagen::{build_dataset, read_dataset, write_dataset, DatagenConfig};
use tl3d::imageio::{write_pgm, write_pointcloud, write_ppm};
use tl3d::Rng;

fn main() {
    let cfg = DatagenConfig {
        n_scenes: 8,
        views_per_scene: 4,
        width: 64,
        height: 64,
        max_difficulty: 3,
        n_gt_points: 2048,
        ..DatagenConfig::default()
    };
    let mut rng = Rng::new(42);
    let ds = build_dataset(&cfg, &mut rng).unwrap();

    let out = std::env::temp_dir().join("tl3d_gen_dataset");
    std::fs::create_dir_all(&out).unwrap();
    let path = out.join("demo.tl3d");
    write_dataset(&path, &ds).unwrap();
    let back = read_dataset(&path).unwrap();
    println!(
        "container: {} scenes x {} views at {}x{}, {} surface points each",
        back.n_scenes(),
        back.views_per_scene,
        back.width,
        back.height,
        back.n_gt_points
    );

    let scene = &back.scenes[0];
    println!("scene 0 caption: {:?}", scene.caption);
    for (v, img) in scene.images.iter().enumerate() {
        let rgb: Vec<f64> = img.iter().map(|&x| x as f64).collect();
        write_ppm(&out.join(format!("scene0_view{v}.ppm")), &rgb, back.width, back.height).unwrap();
        let depth: Vec<f64> = scene.depths[v].iter().map(|&x| x as f64).collect();
        write_pgm(
            &out.join(format!("scene0_view{v}_depth.pgm")),
            &depth,
            back.width,
            back.height,
            None,
        )
        .unwrap();
    }
    write_pointcloud(&out.join("scene0_points.pts"), &scene.gt_points).unwrap();
    println!("previews written under {}", out.display());
}
