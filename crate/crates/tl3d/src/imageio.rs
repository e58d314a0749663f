//! File emission for render artifacts: binary PPM (P6) for color, PGM (P5)
//! for depth, and a little-endian f32 triple format for point clouds with
//! an 8-byte count header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math3d::vec3;
use crate::metrics::PointCloud;

/// Write an RGB image (row-major, values in [0,1]) as binary PPM.
pub fn write_ppm(path: &Path, rgb: &[f64], width: usize, height: usize) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidArg(format!(
            "ppm: {} values do not fill {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = rgb
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Write a scalar map as binary PGM; values are min-max normalized unless
/// a fixed (lo, hi) range is given.
pub fn write_pgm(path: &Path, values: &[f64], width: usize, height: usize, range: Option<(f64, f64)>) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::InvalidArg(format!(
            "pgm: {} values do not fill {width}x{height}",
            values.len()
        )));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    let span = (hi - lo).max(1e-12);
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Point cloud: u64 little-endian count, then count * 3 f32 LE coordinates.
pub fn write_pointcloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    for p in &cloud.points {
        for v in [p.x, p.y, p.z] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pointcloud(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 8];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("point cloud file too short for header".into()))?;
    let n = u64::from_le_bytes(header) as usize;
    let mut buf = vec![0u8; n * 12];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("point cloud file truncated, expected {n} points")))?;
    let mut points = Vec::with_capacity(n);
    for chunk in buf.chunks_exact(12) {
        let f = |i: usize| f32::from_le_bytes(chunk[i * 4..(i + 1) * 4].try_into().unwrap()) as f64;
        points.push(vec3(f(0), f(1), f(2)));
    }
    Ok(PointCloud::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_and_pgm_headers() {
        let dir = std::env::temp_dir().join("tl3d_imageio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let ppm = dir.join("x.ppm");
        write_ppm(&ppm, &vec![0.5; 4 * 3 * 3], 4, 3).unwrap();
        let bytes = std::fs::read(&ppm).unwrap();
        assert!(bytes.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 36);

        let pgm = dir.join("d.pgm");
        write_pgm(&pgm, &vec![1.0; 6], 3, 2, Some((0.0, 2.0))).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn pointcloud_round_trip_is_bit_exact_in_f32() {
        let dir = std::env::temp_dir().join("tl3d_imageio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.pts");
        let cloud = PointCloud::new(vec![vec3(0.125, -3.5, 7.75), vec3(1e-3, 0.0, -42.0)]);
        write_pointcloud(&path, &cloud).unwrap();
        let back = read_pointcloud(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in cloud.points.iter().zip(&back.points) {
            // written as f32: compare at f32 precision
            assert_eq!(a.x as f32, b.x as f32);
            assert_eq!(a.y as f32, b.y as f32);
            assert_eq!(a.z as f32, b.z as f32);
        }
    }

    #[test]
    fn truncated_pointcloud_is_a_format_error() {
        let dir = std::env::temp_dir().join("tl3d_imageio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.pts");
        std::fs::write(&path, 100u64.to_le_bytes()).unwrap();
        assert!(matches!(read_pointcloud(&path), Err(Error::Format(_))));
    }
}
