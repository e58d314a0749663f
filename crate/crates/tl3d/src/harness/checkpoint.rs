//! Versioned checkpoint files: a named parameter table (name, shape,
//! little-endian f64 payload), optimizer moments, the training-loop RNG
//! state, the step counter, and named scalar extras (e.g. the latent
//! standardization scale). Round-trips are bit-exact so resumed runs
//! reproduce the uninterrupted loss trace.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::optim::AdamW;

pub const CKPT_MAGIC: &[u8; 4] = b"TLCK";
pub const CKPT_VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, Default)]
pub struct OptState {
    pub step: u64,
    pub skipped: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub step: u64,
    pub rng_state: u64,
    pub extras: Vec<(String, f64)>,
    /// (name, shape, values)
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub opts: Vec<OptState>,
}

impl Checkpoint {
    pub fn extra(&self, name: &str) -> Option<f64> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Snapshot parameters (in registry order) into the table.
    pub fn capture_params(&mut self, ps: &ParamSet) {
        for (name, t) in ps.entries() {
            self.params.push((name.clone(), t.shape().to_vec(), t.to_vec()));
        }
    }

    pub fn capture_optimizer(&mut self, opt: &AdamW) {
        let (step, skipped, m, v) = opt.state_rows();
        self.opts.push(OptState {
            step,
            skipped,
            m: m.to_vec(),
            v: v.to_vec(),
        });
    }

    /// Write parameter values back into a registry, matched by name; the
    /// table may hold additional registries (e.g. discriminators) but
    /// every registry entry must be present with the exact shape.
    pub fn restore_params(&self, ps: &ParamSet) -> Result<()> {
        for (name, t) in ps.entries() {
            let (_, cshape, cdata) = self
                .params
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing parameter {name}")))?;
            if cshape != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {name} has shape {cshape:?}, model expects {:?}",
                    t.shape()
                )));
            }
            t.set_data(cdata);
        }
        Ok(())
    }

    pub fn restore_optimizer(&self, index: usize, opt: &mut AdamW) -> Result<()> {
        let st = self
            .opts
            .get(index)
            .ok_or_else(|| Error::Format(format!("checkpoint has no optimizer state {index}")))?;
        opt.load_state(st.step, st.skipped, st.m.clone(), st.v.clone());
        Ok(())
    }
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    w.write_all(&ckpt.rng_state.to_le_bytes())?;
    w.write_all(&(ckpt.extras.len() as u32).to_le_bytes())?;
    for (name, v) in &ckpt.extras {
        write_string(&mut w, name)?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, shape, data) in &ckpt.params {
        write_string(&mut w, name)?;
        w.write_all(&[DTYPE_F64])?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, data)?;
    }
    w.write_all(&(ckpt.opts.len() as u32).to_le_bytes())?;
    for opt in &ckpt.opts {
        w.write_all(&opt.step.to_le_bytes())?;
        w.write_all(&opt.skipped.to_le_bytes())?;
        w.write_all(&(opt.m.len() as u32).to_le_bytes())?;
        for (m, v) in opt.m.iter().zip(&opt.v) {
            write_f64s(&mut w, m)?;
            write_f64s(&mut w, v)?;
        }
    }
    Ok(())
}

struct Rd<R: Read> {
    inner: R,
}

impl<R: Read> Rd<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("checkpoint file truncated".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|e| Error::Format(format!("bad string: {e}")))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingCheckpoint(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    let mut r = Rd {
        inner: BufReader::new(file),
    };
    let magic = r.bytes(4)?;
    if magic != CKPT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:02x?}, expected {:02x?}",
            magic, CKPT_MAGIC
        )));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CKPT_VERSION,
        });
    }
    let step = r.u64()?;
    let rng_state = r.u64()?;
    let n_extras = r.u32()? as usize;
    let mut extras = Vec::with_capacity(n_extras);
    for _ in 0..n_extras {
        let name = r.string()?;
        let v = r.f64()?;
        extras.push((name, v));
    }
    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.string()?;
        let dtype = r.bytes(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("unsupported dtype tag {dtype}")));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let data = r.f64s()?;
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Format(format!(
                "parameter {name}: payload {} does not match shape {shape:?}",
                data.len()
            )));
        }
        params.push((name, shape, data));
    }
    let n_opts = r.u32()? as usize;
    let mut opts = Vec::with_capacity(n_opts);
    for _ in 0..n_opts {
        let step = r.u64()?;
        let skipped = r.u64()?;
        let n = r.u32()? as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(r.f64s()?);
            v.push(r.f64s()?);
        }
        opts.push(OptState { step, skipped, m, v });
    }
    Ok(Checkpoint {
        step,
        rng_state,
        extras,
        params,
        opts,
    })
}
