//! Single-file dataset container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic  b"TL3D"
//! u32    version (currently 1)
//! u32    n_scenes
//! u32    views_per_scene
//! u32    width
//! u32    height
//! u32    n_gt_points
//! u32    flags (bit 0: depth maps present)
//! per scene:
//!   u64  id
//!   u32  caption byte length, then UTF-8 bytes
//!   V poses: 17 f64 (rotation row-major 9, position 3, focal, principal 2, width, height)
//!   V images: width*height*3 f32
//!   V depths: width*height f32 (when flag bit 0)
//!   V masks:  width*height u8
//!   n_gt_points * 3 f32 surface points
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::math3d::vec3;
use crate::metrics::PointCloud;

pub const FORMAT_MAGIC: &[u8; 4] = b"TL3D";
pub const FORMAT_VERSION: u32 = 1;
const FLAG_HAS_DEPTH: u32 = 1;

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: u64,
    pub caption: String,
    pub poses: Vec<CameraPose>,
    /// Per view: width*height*3 RGB in [0,1].
    pub images: Vec<Vec<f32>>,
    /// Per view: width*height hit distances.
    pub depths: Vec<Vec<f32>>,
    /// Per view: width*height hit indicators.
    pub masks: Vec<Vec<u8>>,
    pub gt_points: PointCloud,
}

#[derive(Debug, Clone)]
pub struct DatasetContainer {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub views_per_scene: usize,
    pub n_gt_points: usize,
    pub scenes: Vec<SceneRecord>,
}

impl DatasetContainer {
    pub fn n_scenes(&self) -> usize {
        self.scenes.len()
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("dataset file truncated".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn write_dataset(path: &Path, ds: &DatasetContainer) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FORMAT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(ds.scenes.len() as u32).to_le_bytes())?;
    w.write_all(&(ds.views_per_scene as u32).to_le_bytes())?;
    w.write_all(&(ds.width as u32).to_le_bytes())?;
    w.write_all(&(ds.height as u32).to_le_bytes())?;
    w.write_all(&(ds.n_gt_points as u32).to_le_bytes())?;
    w.write_all(&FLAG_HAS_DEPTH.to_le_bytes())?;
    for scene in &ds.scenes {
        w.write_all(&scene.id.to_le_bytes())?;
        let caption = scene.caption.as_bytes();
        w.write_all(&(caption.len() as u32).to_le_bytes())?;
        w.write_all(caption)?;
        for pose in &scene.poses {
            for v in pose.to_row() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for img in &scene.images {
            for v in img {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for d in &scene.depths {
            for v in d {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for m in &scene.masks {
            w.write_all(m)?;
        }
        for p in &scene.gt_points.points {
            for v in [p.x as f32, p.y as f32, p.z as f32] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DatasetContainer> {
    let file = File::open(path)?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let magic = r.bytes(4)?;
    if magic != FORMAT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, FORMAT_MAGIC
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_scenes = r.u32()? as usize;
    let views = r.u32()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let n_gt_points = r.u32()? as usize;
    let flags = r.u32()?;
    let has_depth = flags & FLAG_HAS_DEPTH != 0;

    let mut scenes = Vec::with_capacity(n_scenes);
    for _ in 0..n_scenes {
        let id = r.u64()?;
        let cap_len = r.u32()? as usize;
        let caption = String::from_utf8(r.bytes(cap_len)?)
            .map_err(|e| Error::Format(format!("caption not UTF-8: {e}")))?;
        let mut poses = Vec::with_capacity(views);
        for _ in 0..views {
            let row: [f64; 17] = r.f64s(17)?.try_into().unwrap();
            poses.push(CameraPose::from_row(&row));
        }
        let mut images = Vec::with_capacity(views);
        for _ in 0..views {
            images.push(r.f32s(width * height * 3)?);
        }
        let mut depths = Vec::with_capacity(views);
        if has_depth {
            for _ in 0..views {
                depths.push(r.f32s(width * height)?);
            }
        }
        let mut masks = Vec::with_capacity(views);
        for _ in 0..views {
            masks.push(r.bytes(width * height)?);
        }
        let pts = r.f32s(n_gt_points * 3)?;
        let gt_points = PointCloud::new(
            pts.chunks_exact(3)
                .map(|c| vec3(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        );
        scenes.push(SceneRecord {
            id,
            caption,
            poses,
            images,
            depths,
            masks,
            gt_points,
        });
    }
    Ok(DatasetContainer {
        version,
        width,
        height,
        views_per_scene: views,
        n_gt_points,
        scenes,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, DatagenConfig};
    use super::*;
    use crate::rng::Rng;

    fn tiny_config() -> DatagenConfig {
        DatagenConfig {
            n_scenes: 4,
            views_per_scene: 2,
            width: 12,
            height: 10,
            max_difficulty: 2,
            n_gt_points: 64,
            ..DatagenConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("tl3d_container_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("set.tl3d");
        let ds = build_dataset(&tiny_config(), &mut Rng::new(5)).unwrap();
        write_dataset(&path, &ds).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.n_scenes(), 4);
        assert_eq!(back.width, 12);
        assert_eq!(back.height, 10);
        assert_eq!(back.views_per_scene, 2);
        for (a, b) in ds.scenes.iter().zip(&back.scenes) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.caption, b.caption);
            for (pa, pb) in a.poses.iter().zip(&b.poses) {
                // f64 bits preserved exactly
                for (x, y) in pa.to_row().iter().zip(pb.to_row().iter()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            for (ia, ib) in a.images.iter().zip(&b.images) {
                assert!(ia.iter().zip(ib).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            for (da, db) in a.depths.iter().zip(&b.depths) {
                assert!(da.iter().zip(db).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            assert_eq!(a.masks, b.masks);
            assert_eq!(a.gt_points.len(), b.gt_points.len());
        }
        // write the read-back container again: files must be identical
        let path2 = dir.join("set2.tl3d");
        write_dataset(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let dir = std::env::temp_dir().join("tl3d_container_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_magic.tl3d");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_distinct_from_format_error() {
        let dir = std::env::temp_dir().join("tl3d_container_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_version.tl3d");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FORMAT_MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 24]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = std::env::temp_dir().join("tl3d_container_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.tl3d");
        let full = dir.join("full.tl3d");
        let ds = build_dataset(&tiny_config(), &mut Rng::new(6)).unwrap();
        write_dataset(&full, &ds).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn fewer_than_two_views_is_rejected() {
        let cfg = DatagenConfig {
            views_per_scene: 1,
            ..tiny_config()
        };
        assert!(build_dataset(&cfg, &mut Rng::new(1)).is_err());
    }
}
