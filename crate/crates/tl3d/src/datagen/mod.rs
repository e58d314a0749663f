//! Procedural multi-view RGB-D datasets: scenes composed of colored
//! primitives inside the unit ball, rendered analytically with exact depth
//! and ground-truth surface point clouds, plus deterministic captions.
//!
//! The analytic renderer doubles as the supervision oracle, so the whole
//! training loop runs without external data.

mod container;
mod render;

pub use container::{read_dataset, write_dataset, DatasetContainer, SceneRecord};
pub use render::render_analytic;

use crate::error::{Error, Result};
use crate::geometry::{pose_trajectory, TrajectoryKind};
use crate::math3d::{vec3, Vec3};
use crate::metrics::PointCloud;
use crate::rng::Rng;

pub const COLOR_NAMES: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
];

pub const COLOR_VALUES: [[f64; 3]; 8] = [
    [0.85, 0.10, 0.10],
    [0.10, 0.70, 0.15],
    [0.15, 0.25, 0.90],
    [0.90, 0.85, 0.10],
    [0.10, 0.80, 0.80],
    [0.85, 0.15, 0.80],
    [0.95, 0.55, 0.10],
    [0.50, 0.20, 0.70],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half: Vec3 },
    /// Capped cylinder aligned with the +y axis.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    fn plural(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "spheres",
            Shape::Box { .. } => "boxes",
            Shape::Cylinder { .. } => "cylinders",
        }
    }

    /// Radius of the bounding sphere around the local origin.
    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half } => half.norm(),
            Shape::Cylinder { radius, half_height } => (radius * radius + half_height * half_height).sqrt(),
        }
    }

    fn surface_area(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => 4.0 * std::f64::consts::PI * radius * radius,
            Shape::Box { half } => 8.0 * (half.x * half.y + half.x * half.z + half.y * half.z),
            Shape::Cylinder { radius, half_height } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                let caps = 2.0 * std::f64::consts::PI * radius * radius;
                side + caps
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    /// Index into the color palette.
    pub color: usize,
}

impl Primitive {
    pub fn rgb(&self) -> [f64; 3] {
        COLOR_VALUES[self.color]
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let q = p - self.center;
        match self.shape {
            Shape::Sphere { radius } => q.dot(q) < radius * radius,
            Shape::Box { half } => q.x.abs() < half.x && q.y.abs() < half.y && q.z.abs() < half.z,
            Shape::Cylinder { radius, half_height } => {
                q.x * q.x + q.z * q.z < radius * radius && q.y.abs() < half_height
            }
        }
    }

    /// |signed distance| to the surface.
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let q = p - self.center;
        match self.shape {
            Shape::Sphere { radius } => (q.norm() - radius).abs(),
            Shape::Box { half } => {
                let d = q.abs() - half;
                let outside = vec3(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
                let inside = d.max_elem().min(0.0);
                (outside + inside).abs()
            }
            Shape::Cylinder { radius, half_height } => {
                let dr = (q.x * q.x + q.z * q.z).sqrt() - radius;
                let dy = q.y.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt();
                let inside = dr.max(dy).min(0.0);
                (outside + inside).abs()
            }
        }
    }

    /// Uniform sample on the shape surface (area-weighted across faces).
    pub fn sample_surface(&self, rng: &mut Rng) -> Vec3 {
        let q = match self.shape {
            Shape::Sphere { radius } => {
                let d = vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
                d * radius
            }
            Shape::Box { half } => {
                let areas = [
                    half.y * half.z, // +-x faces (each)
                    half.x * half.z,
                    half.x * half.y,
                ];
                let total = 2.0 * (areas[0] + areas[1] + areas[2]);
                let mut pick = rng.uniform() * total;
                let mut axis = 0;
                for (i, &a) in areas.iter().enumerate() {
                    if pick < 2.0 * a {
                        axis = i;
                        break;
                    }
                    pick -= 2.0 * a;
                }
                let sign = if rng.chance(0.5) { 1.0 } else { -1.0 };
                let u = rng.range(-1.0, 1.0);
                let v = rng.range(-1.0, 1.0);
                match axis {
                    0 => vec3(sign * half.x, u * half.y, v * half.z),
                    1 => vec3(u * half.x, sign * half.y, v * half.z),
                    _ => vec3(u * half.x, v * half.y, sign * half.z),
                }
            }
            Shape::Cylinder { radius, half_height } => {
                let side = 2.0 * std::f64::consts::PI * radius * 2.0 * half_height;
                let caps = 2.0 * std::f64::consts::PI * radius * radius;
                let theta = rng.range(0.0, std::f64::consts::TAU);
                if rng.uniform() * (side + caps) < side {
                    let y = rng.range(-half_height, half_height);
                    vec3(radius * theta.cos(), y, radius * theta.sin())
                } else {
                    let r = radius * rng.uniform().sqrt();
                    let y = if rng.chance(0.5) { half_height } else { -half_height };
                    vec3(r * theta.cos(), y, r * theta.sin())
                }
            }
        };
        self.center + q
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: u64,
    pub primitives: Vec<Primitive>,
    pub caption: String,
}

fn count_word(n: usize) -> &'static str {
    match n {
        1 => "one",
        2 => "two",
        3 => "three",
        _ => "four",
    }
}

/// Caption grammar: "<count> <color> <shape>[ and ...]", grouping identical
/// (color, shape) pairs in first-appearance order.
pub fn caption_of(primitives: &[Primitive]) -> String {
    let mut groups: Vec<(usize, &'static str, &Shape, usize)> = Vec::new();
    for p in primitives {
        if let Some(g) = groups
            .iter_mut()
            .find(|(color, name, _, _)| *color == p.color && *name == p.shape.name())
        {
            g.3 += 1;
        } else {
            groups.push((p.color, p.shape.name(), &p.shape, 1));
        }
    }
    groups
        .iter()
        .map(|(color, _, shape, n)| {
            let noun = if *n == 1 { shape.name() } else { shape.plural() };
            format!("{} {} {}", count_word(*n), COLOR_NAMES[*color], noun)
        })
        .collect::<Vec<_>>()
        .join(" and ")
}

/// True when >= 95% of `a`'s surface samples fall inside `b` — the
/// containment test used both at generation time and by the oracle.
fn mostly_contained(a: &Primitive, b: &Primitive, samples: usize, rng: &mut Rng) -> bool {
    let mut inside = 0usize;
    for _ in 0..samples {
        if b.contains(a.sample_surface(rng)) {
            inside += 1;
        }
    }
    inside as f64 >= 0.95 * samples as f64
}

/// Sample a scene with exactly `difficulty.clamp(1,4)` primitives, none
/// mutually contained, all geometry inside the radius-0.9 ball.
pub fn generate_scene(rng: &mut Rng, difficulty: usize, id: u64) -> Scene {
    let n = difficulty.clamp(1, 4);
    let mut primitives: Vec<Primitive> = Vec::with_capacity(n);
    while primitives.len() < n {
        let shape = match rng.below(3) {
            0 => Shape::Sphere {
                radius: rng.range(0.18, 0.42),
            },
            1 => Shape::Box {
                half: vec3(rng.range(0.14, 0.34), rng.range(0.14, 0.34), rng.range(0.14, 0.34)),
            },
            _ => Shape::Cylinder {
                radius: rng.range(0.14, 0.3),
                half_height: rng.range(0.16, 0.36),
            },
        };
        let max_center = 0.9 - shape.bounding_radius();
        // keep the whole primitive inside the radius-0.9 ball
        let center = loop {
            let c = vec3(
                rng.range(-max_center, max_center),
                rng.range(-max_center, max_center),
                rng.range(-max_center, max_center),
            );
            if c.norm() <= max_center {
                break c;
            }
        };
        let color = rng.below(COLOR_NAMES.len());
        let candidate = Primitive { shape, center, color };
        let conflicted = primitives.iter().any(|other| {
            mostly_contained(&candidate, other, 64, rng) || mostly_contained(other, &candidate, 64, rng)
        });
        if !conflicted {
            primitives.push(candidate);
        }
    }
    let caption = caption_of(&primitives);
    Scene {
        id,
        primitives,
        caption,
    }
}

/// Area-weighted uniform samples on the outer surface: points landing
/// inside another primitive are rejected.
pub fn gt_surface_points(scene: &Scene, n: usize, rng: &mut Rng) -> Result<PointCloud> {
    if scene.primitives.is_empty() {
        return Err(Error::InvalidArg("gt_surface_points: empty scene".into()));
    }
    let areas: Vec<f64> = scene.primitives.iter().map(|p| p.shape.surface_area()).collect();
    let total: f64 = areas.iter().sum();
    let mut points = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let max_attempts = 200 * n + 10_000;
    while points.len() < n && attempts < max_attempts {
        attempts += 1;
        let mut pick = rng.uniform() * total;
        let mut idx = 0;
        for (i, &a) in areas.iter().enumerate() {
            if pick < a {
                idx = i;
                break;
            }
            pick -= a;
        }
        let p = scene.primitives[idx].sample_surface(rng);
        let occluded = scene
            .primitives
            .iter()
            .enumerate()
            .any(|(j, other)| j != idx && other.contains(p));
        if !occluded {
            points.push(p);
        }
    }
    if points.len() < n {
        return Err(Error::InvalidArg(
            "gt_surface_points: rejection sampling exhausted".into(),
        ));
    }
    Ok(PointCloud::new(points))
}

/// Generation settings for a full dataset.
#[derive(Debug, Clone)]
pub struct DatagenConfig {
    pub n_scenes: usize,
    pub views_per_scene: usize,
    pub width: usize,
    pub height: usize,
    /// Primitive count is drawn uniformly from 1..=max_difficulty.
    pub max_difficulty: usize,
    pub n_gt_points: usize,
    pub camera_radius: f64,
    /// Focal length as a fraction of image width.
    pub focal_factor: f64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            n_scenes: 64,
            views_per_scene: 8,
            width: 64,
            height: 64,
            max_difficulty: 3,
            n_gt_points: 4096,
            camera_radius: 2.2,
            focal_factor: 0.55,
        }
    }
}

/// Generate scenes, render every view, and package the container.
pub fn build_dataset(cfg: &DatagenConfig, rng: &mut Rng) -> Result<DatasetContainer> {
    if cfg.views_per_scene < 2 {
        return Err(Error::InvalidArg(format!(
            "views_per_scene must be >= 2, got {}",
            cfg.views_per_scene
        )));
    }
    let focal = cfg.focal_factor * cfg.width as f64;
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    for id in 0..cfg.n_scenes {
        let difficulty = 1 + rng.below(cfg.max_difficulty.clamp(1, 4));
        let scene = generate_scene(rng, difficulty, id as u64);
        let poses = pose_trajectory(
            TrajectoryKind::UpperSphereRandom,
            cfg.views_per_scene,
            cfg.camera_radius,
            focal,
            cfg.width,
            cfg.height,
            rng,
        )?;
        let mut images = Vec::with_capacity(poses.len());
        let mut depths = Vec::with_capacity(poses.len());
        let mut masks = Vec::with_capacity(poses.len());
        for cam in &poses {
            let view = render_analytic(&scene, cam, cfg.width, cfg.height);
            images.push(view.rgb.iter().map(|&v| v as f32).collect());
            depths.push(view.depth.iter().map(|&v| v as f32).collect());
            masks.push(view.mask);
        }
        let gt_points = gt_surface_points(&scene, cfg.n_gt_points, rng)?;
        scenes.push(SceneRecord {
            id: scene.id,
            caption: scene.caption.clone(),
            poses,
            images,
            depths,
            masks,
            gt_points,
        });
    }
    Ok(DatasetContainer {
        version: container::FORMAT_VERSION,
        width: cfg.width,
        height: cfg.height,
        views_per_scene: cfg.views_per_scene,
        n_gt_points: cfg.n_gt_points,
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difficulty_one_gives_one_primitive() {
        let mut rng = Rng::new(1);
        let s = generate_scene(&mut rng, 1, 0);
        assert_eq!(s.primitives.len(), 1);
    }

    #[test]
    fn caption_grammar_single_and_grouped() {
        let red_sphere = Primitive {
            shape: Shape::Sphere { radius: 0.3 },
            center: Vec3::ZERO,
            color: 0,
        };
        assert_eq!(caption_of(&[red_sphere.clone()]), "one red sphere");

        let blue_box = Primitive {
            shape: Shape::Box {
                half: vec3(0.2, 0.2, 0.2),
            },
            center: vec3(0.5, 0.0, 0.0),
            color: 2,
        };
        let caption = caption_of(&[blue_box.clone(), red_sphere, blue_box]);
        assert_eq!(caption, "two blue boxes and one red sphere");
    }

    #[test]
    fn scenes_stay_inside_the_domain_and_avoid_containment() {
        let mut rng = Rng::new(7);
        for id in 0..20 {
            let s = generate_scene(&mut rng, 1 + (id as usize % 4), id);
            for p in &s.primitives {
                assert!(p.center.norm() + p.shape.bounding_radius() <= 0.9 + 1e-12);
            }
            // Monte-Carlo containment oracle: ~10^5 point tests across pairs
            let per_pair = 100_000 / (s.primitives.len() * s.primitives.len()).max(1);
            for (i, a) in s.primitives.iter().enumerate() {
                for (j, b) in s.primitives.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let mut inside = 0usize;
                    for _ in 0..per_pair {
                        if b.contains(a.sample_surface(&mut rng)) {
                            inside += 1;
                        }
                    }
                    assert!(
                        (inside as f64) < 0.99 * per_pair as f64,
                        "scene {id}: primitive {i} fully inside {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn surface_points_lie_on_their_primitive() {
        let mut rng = Rng::new(3);
        let sphere = Primitive {
            shape: Shape::Sphere { radius: 0.4 },
            center: vec3(0.1, -0.2, 0.3),
            color: 1,
        };
        for _ in 0..2000 {
            let p = sphere.sample_surface(&mut rng);
            assert!(((p - sphere.center).norm() - 0.4).abs() < 1e-9);
        }
        let cyl = Primitive {
            shape: Shape::Cylinder {
                radius: 0.3,
                half_height: 0.25,
            },
            center: Vec3::ZERO,
            color: 0,
        };
        for _ in 0..2000 {
            let p = cyl.sample_surface(&mut rng);
            assert!(cyl.surface_distance(p) < 1e-9);
        }
    }

    #[test]
    fn area_weighting_matches_analytic_ratios() {
        // two disjoint spheres with areas 4pi r^2: ratio r1^2 : r2^2
        let mut rng = Rng::new(11);
        let scene = Scene {
            id: 0,
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.2 },
                    center: vec3(-0.5, 0.0, 0.0),
                    color: 0,
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.4 },
                    center: vec3(0.5, 0.0, 0.0),
                    color: 1,
                },
            ],
            caption: String::new(),
        };
        let n = 100_000;
        let cloud = gt_surface_points(&scene, n, &mut rng).unwrap();
        let near_first = cloud
            .points
            .iter()
            .filter(|p| (**p - scene.primitives[0].center).norm() < 0.3)
            .count();
        let expected = 0.2f64.powi(2) / (0.2f64.powi(2) + 0.4f64.powi(2));
        let got = near_first as f64 / n as f64;
        assert!(
            (got - expected).abs() < 0.02 * 1.0,
            "area weighting off: {got} vs {expected}"
        );
    }

    #[test]
    fn outer_surface_rejects_points_inside_other_primitives() {
        let mut rng = Rng::new(13);
        // overlapping spheres
        let scene = Scene {
            id: 0,
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere { radius: 0.35 },
                    center: vec3(-0.15, 0.0, 0.0),
                    color: 0,
                },
                Primitive {
                    shape: Shape::Sphere { radius: 0.35 },
                    center: vec3(0.15, 0.0, 0.0),
                    color: 1,
                },
            ],
            caption: String::new(),
        };
        let cloud = gt_surface_points(&scene, 4096, &mut rng).unwrap();
        for p in &cloud.points {
            // strictly interior to some primitive (not merely on its own
            // generator's boundary)
            let interior = scene
                .primitives
                .iter()
                .filter(|pr| pr.contains(*p) && pr.surface_distance(*p) > 1e-9)
                .count();
            assert_eq!(interior, 0, "point {p:?} inside another primitive");
        }
    }
}
