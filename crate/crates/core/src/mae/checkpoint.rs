//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `SKYMAE1`, model config, Mel config,
//! tensor count, then each tensor as `rows: u32, cols: u32, data: [f64]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{MaeConfig, MaeError, MaeModel, MaeParams};
use crate::features::MelConfig;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"SKYMAE1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<(), MaeError> {
    let v = u32::try_from(v).map_err(|_| MaeError::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<(), MaeError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize, MaeError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64, MaeError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_checkpoint(w: &mut impl Write, model: &MaeModel) -> Result<(), MaeError> {
    let c = &model.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        c.patch,
        c.grid_rows,
        c.grid_cols,
        c.embed_dim,
        c.enc_depth,
        c.enc_heads,
        c.enc_mlp,
        c.dec_dim,
        c.dec_depth,
        c.dec_heads,
        c.dec_mlp,
    ] {
        put_u32(w, v)?;
    }
    put_f64(w, c.mask_ratio)?;
    put_f64(w, c.top_k)?;
    let m = &model.mel;
    for v in [m.fs as usize, m.fft_size, m.hop, m.mel_bins, m.frames] {
        put_u32(w, v)?;
    }
    for v in [m.fmin, m.fmax, m.log_floor] {
        put_f64(w, v)?;
    }
    let tensors = model.params.tensors();
    put_u32(w, tensors.len())?;
    for t in tensors {
        put_u32(w, t.nrows())?;
        put_u32(w, t.ncols())?;
        for &v in t.iter() {
            put_f64(w, v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<MaeModel, MaeError> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(MaeError::Checkpoint("bad magic bytes".into()));
    }
    let mut u = [0usize; 11];
    for v in &mut u {
        *v = get_u32(r)?;
    }
    let config = MaeConfig {
        patch: u[0],
        grid_rows: u[1],
        grid_cols: u[2],
        embed_dim: u[3],
        enc_depth: u[4],
        enc_heads: u[5],
        enc_mlp: u[6],
        dec_dim: u[7],
        dec_depth: u[8],
        dec_heads: u[9],
        dec_mlp: u[10],
        mask_ratio: get_f64(r)?,
        top_k: get_f64(r)?,
    };
    config.validate()?;
    let mut m = [0usize; 5];
    for v in &mut m {
        *v = get_u32(r)?;
    }
    let mel = MelConfig {
        fs: m[0] as u32,
        fft_size: m[1],
        hop: m[2],
        mel_bins: m[3],
        frames: m[4],
        fmin: get_f64(r)?,
        fmax: get_f64(r)?,
        log_floor: get_f64(r)?,
    };
    let mut params = MaeParams::init(&config, 0);
    let count = get_u32(r)?;
    let slots = params.tensors_mut();
    if count != slots.len() {
        return Err(MaeError::Checkpoint(format!(
            "{count} tensors, config implies {}",
            slots.len()
        )));
    }
    for slot in slots {
        let (rows, cols) = (get_u32(r)?, get_u32(r)?);
        if (rows, cols) != slot.dim() {
            return Err(MaeError::Checkpoint(format!(
                "tensor {rows}x{cols}, expected {:?}",
                slot.dim()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(get_f64(r)?);
        }
        *slot = Array2::from_shape_vec((rows, cols), data).expect("length checked");
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(MaeError::Checkpoint("trailing bytes".into()));
    }
    MaeModel::new(config, mel, params)
}

pub fn save_checkpoint(path: &Path, model: &MaeModel) -> Result<(), MaeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MaeModel, MaeError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
