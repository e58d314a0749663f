//! Cameras, per-pixel rays with Plücker embeddings, stratified depth
//! sampling, and camera-trajectory generators.
//!
//! Conventions (fixed once for the whole crate): right-handed world frame
//! with +y up; in the camera frame x points right, y up, and the camera
//! looks down -z. Pixel (0,0) is the top-left corner; ray directions pass
//! through pixel centers.

use crate::error::{Error, Result};
use crate::math3d::{vec3, Mat3, Vec3};
use crate::rng::Rng;

/// Pinhole camera: world-from-camera rotation plus world position.
#[derive(Debug, Clone)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub position: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point in pixels (cx, cy).
    pub principal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    /// Camera at `position` looking at `target`, +y preferred up.
    pub fn look_at(position: Vec3, target: Vec3, focal: f64, width: usize, height: usize) -> CameraPose {
        let backward = (position - target).normalized(); // camera +z
        let up_hint = if backward.y.abs() > 0.999 {
            vec3(0.0, 0.0, 1.0)
        } else {
            vec3(0.0, 1.0, 0.0)
        };
        let right = up_hint.cross(backward).normalized();
        let up = backward.cross(right);
        CameraPose {
            rotation: Mat3::from_cols(right, up, backward),
            position,
            focal,
            principal: (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        }
    }

    /// Camera-frame forward axis (-z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.col(2)
    }

    /// World point -> pixel coordinates plus camera-frame depth along -z.
    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        let cam = self.rotation.transpose().mul_vec(p - self.position);
        let depth = -cam.z;
        let (cx, cy) = self.principal;
        let u = cx + self.focal * cam.x / depth;
        let v = cy - self.focal * cam.y / depth;
        (u, v, depth)
    }

    /// Orthonormality and handedness check.
    pub fn is_valid(&self, tol: f64) -> bool {
        let rt_r = self.rotation.transpose().mul_mat(&self.rotation);
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((rt_r.m[i][j] - want).abs());
            }
        }
        max_dev <= tol && (self.rotation.det() - 1.0).abs() <= 10.0 * tol
    }

    /// Serialize as (rotation row-major 9, position 3, focal, principal 2,
    /// width, height) — the dataset container layout.
    pub fn to_row(&self) -> [f64; 17] {
        let r = self.rotation.to_row_major();
        [
            r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8],
            self.position.x, self.position.y, self.position.z,
            self.focal, self.principal.0, self.principal.1,
            self.width as f64, self.height as f64,
        ]
    }

    pub fn from_row(row: &[f64; 17]) -> CameraPose {
        CameraPose {
            rotation: Mat3::from_row_major(row[..9].try_into().unwrap()),
            position: vec3(row[9], row[10], row[11]),
            focal: row[12],
            principal: (row[13], row[14]),
            width: row[15] as usize,
            height: row[16] as usize,
        }
    }
}

/// Per-pixel rays: origin, unit direction, Plücker 6-vector
/// (direction, origin x direction), and source pixel coordinates.
#[derive(Debug, Clone)]
pub struct RayBundle {
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    /// (d, p x d) per ray.
    pub plucker: Vec<[f64; 6]>,
    /// (x, y) integer pixel coordinates.
    pub pixels: Vec<(usize, usize)>,
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

pub fn plucker_of(origin: Vec3, dir: Vec3) -> [f64; 6] {
    let m = origin.cross(dir);
    [dir.x, dir.y, dir.z, m.x, m.y, m.z]
}

/// One ray per requested pixel through the pinhole model; directions are
/// normalized. `pixels = None` covers the full image row-major.
pub fn rays_from_camera(cam: &CameraPose, pixels: Option<&[(usize, usize)]>) -> Result<RayBundle> {
    if cam.focal <= 0.0 {
        return Err(Error::InvalidArg(format!("focal must be positive, got {}", cam.focal)));
    }
    let full: Vec<(usize, usize)>;
    let px: &[(usize, usize)] = match pixels {
        Some(p) => p,
        None => {
            full = (0..cam.height)
                .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
                .collect();
            &full
        }
    };
    let (cx, cy) = cam.principal;
    let mut origins = Vec::with_capacity(px.len());
    let mut directions = Vec::with_capacity(px.len());
    let mut plucker = Vec::with_capacity(px.len());
    for &(x, y) in px {
        let dx = (x as f64 + 0.5 - cx) / cam.focal;
        let dy = (cy - (y as f64 + 0.5)) / cam.focal;
        let dir_cam = vec3(dx, dy, -1.0).normalized();
        let dir = cam.rotation.mul_vec(dir_cam);
        origins.push(cam.position);
        directions.push(dir);
        plucker.push(plucker_of(cam.position, dir));
    }
    Ok(RayBundle {
        origins,
        directions,
        plucker,
        pixels: px.to_vec(),
    })
}

/// Depths and 3D points along each ray, one sample per uniform bin.
#[derive(Debug, Clone)]
pub struct RaySamples {
    /// [n_rays * n_samples], strictly increasing per ray.
    pub depths: Vec<f64>,
    /// Bin widths matching `depths` (quadrature deltas).
    pub deltas: Vec<f64>,
    /// [n_rays * n_samples] sample positions.
    pub points: Vec<Vec3>,
    pub n_rays: usize,
    pub n_samples: usize,
}

/// Stratified sampling over [near, far]: jitter=false picks bin midpoints,
/// jitter=true draws uniformly inside each bin.
pub fn stratified_samples(
    rays: &RayBundle,
    near: f64,
    far: f64,
    n_samples: usize,
    rng: &mut Rng,
    jitter: bool,
) -> Result<RaySamples> {
    if !(near > 0.0 && near < far) {
        return Err(Error::InvalidArg(format!(
            "need 0 < near < far, got near={near} far={far}"
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArg("n_samples must be >= 1".into()));
    }
    let n = rays.len();
    let bin = (far - near) / n_samples as f64;
    let mut depths = Vec::with_capacity(n * n_samples);
    let mut deltas = Vec::with_capacity(n * n_samples);
    let mut points = Vec::with_capacity(n * n_samples);
    for i in 0..n {
        for k in 0..n_samples {
            let offset = if jitter { rng.uniform() } else { 0.5 };
            let t = near + (k as f64 + offset) * bin;
            depths.push(t);
            deltas.push(bin);
            points.push(rays.origins[i] + t * rays.directions[i]);
        }
    }
    Ok(RaySamples {
        depths,
        deltas,
        points,
        n_rays: n,
        n_samples,
    })
}

/// Camera-trajectory families on the upper hemisphere (+y elevation >= 0),
/// all looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Uniformly random poses on the upper hemisphere surface.
    UpperSphereRandom,
    /// Deterministic ellipsoid-like ring with evenly spaced azimuth — the
    /// fixed evaluation trajectory.
    UpperSphereEllipsoidFixed,
}

pub fn pose_trajectory(
    kind: TrajectoryKind,
    n: usize,
    radius: f64,
    focal: f64,
    width: usize,
    height: usize,
    rng: &mut Rng,
) -> Result<Vec<CameraPose>> {
    if n == 0 || radius <= 0.0 {
        return Err(Error::InvalidArg(format!(
            "need n >= 1 and radius > 0, got n={n} radius={radius}"
        )));
    }
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let (azimuth, elevation) = match kind {
            TrajectoryKind::UpperSphereRandom => {
                let az = rng.range(0.0, std::f64::consts::TAU);
                let el = rng.uniform().asin();
                (az, el)
            }
            TrajectoryKind::UpperSphereEllipsoidFixed => {
                let az = std::f64::consts::TAU * i as f64 / n as f64;
                // gentle elevation wobble keeps the ring ellipsoid-like
                // while staying deterministic
                let el = 0.4 + 0.15 * (2.0 * az).sin();
                (az, el)
            }
        };
        let p = vec3(
            radius * elevation.cos() * azimuth.cos(),
            radius * elevation.sin(),
            radius * elevation.cos() * azimuth.sin(),
        );
        poses.push(CameraPose::look_at(p, Vec3::ZERO, focal, width, height));
    }
    Ok(poses)
}
