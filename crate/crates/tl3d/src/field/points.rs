//! Surface-point extraction by outer-shell voxel sampling: evaluate the
//! density on a cubic lattice, keep cells above threshold that touch a
//! below-threshold 6-neighbor, and sample cell centers.

use super::{query_features, FieldMlp, TriPlane};
use crate::error::{Error, Result};
use crate::math3d::{vec3, Vec3};
use crate::metrics::PointCloud;
use crate::rng::Rng;
use crate::tensor::no_grad;

/// Density at arbitrary points, without recording a graph.
pub fn density_at(tp: &TriPlane, mlp: &FieldMlp, points: &[Vec3]) -> Vec<f64> {
    no_grad(|| {
        let feats = query_features(tp, points);
        mlp.density(&feats).to_vec()
    })
}

/// Extract `n_points` surface samples from the field. Cells outside the
/// lattice count as empty, so blobs touching the boundary still produce a
/// shell. Draws with replacement when fewer shell cells exist than points
/// requested.
pub fn extract_points(
    tp: &TriPlane,
    mlp: &FieldMlp,
    grid_res: usize,
    density_threshold: f64,
    n_points: usize,
    rng: &mut Rng,
) -> Result<PointCloud> {
    if grid_res < 16 {
        return Err(Error::InvalidArg(format!(
            "grid_res must be >= 16, got {grid_res}"
        )));
    }
    let centers: Vec<f64> = (0..grid_res)
        .map(|i| (i as f64 + 0.5) / grid_res as f64 * 2.0 - 1.0)
        .collect();

    // evaluate density slice by slice to bound memory
    let mut occupied = vec![false; grid_res * grid_res * grid_res];
    let mut batch = Vec::with_capacity(grid_res * grid_res);
    for (zi, &z) in centers.iter().enumerate() {
        batch.clear();
        for &y in &centers {
            for &x in &centers {
                batch.push(vec3(x, y, z));
            }
        }
        let d = density_at(tp, mlp, &batch);
        let base = zi * grid_res * grid_res;
        for (i, &v) in d.iter().enumerate() {
            occupied[base + i] = v > density_threshold;
        }
    }

    let idx = |x: usize, y: usize, z: usize| (z * grid_res + y) * grid_res + x;
    let mut shell: Vec<Vec3> = Vec::new();
    for z in 0..grid_res {
        for y in 0..grid_res {
            for x in 0..grid_res {
                if !occupied[idx(x, y, z)] {
                    continue;
                }
                let mut exposed = false;
                let neighbors: [(isize, isize, isize); 6] = [
                    (-1, 0, 0),
                    (1, 0, 0),
                    (0, -1, 0),
                    (0, 1, 0),
                    (0, 0, -1),
                    (0, 0, 1),
                ];
                for (dx, dy, dz) in neighbors {
                    let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    let inside = nx >= 0
                        && ny >= 0
                        && nz >= 0
                        && (nx as usize) < grid_res
                        && (ny as usize) < grid_res
                        && (nz as usize) < grid_res;
                    if !inside || !occupied[idx(nx as usize, ny as usize, nz as usize)] {
                        exposed = true;
                        break;
                    }
                }
                if exposed {
                    shell.push(vec3(centers[x], centers[y], centers[z]));
                }
            }
        }
    }

    if shell.is_empty() {
        return Err(Error::EmptyField(density_threshold));
    }

    let points: Vec<Vec3> = (0..n_points).map(|_| shell[rng.below(shell.len())]).collect();
    Ok(PointCloud::new(points))
}
