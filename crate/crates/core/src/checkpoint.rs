//! Versioned binary checkpoint for [`PoreModel`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes   b"PFCN"
//! version    u32       currently 1
//! dropout    f64
//! steps      u64       training step count at save time
//! 4 blocks, each:
//!   kh, kw, cin, cout   u32 x 4
//!   weights             f64 x (kh*kw*cin*cout)
//!   bias                f64 x cout
//!   channels            u32
//!   epsilon, momentum   f64 x 2
//!   gamma, beta, running_mean, running_var   f64 x channels each
//! ```
//!
//! Values are stored as 64-bit reals, the model's native precision, so a
//! save/load round trip is bit-exact.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{ConvBlock, PoreModel};
use crate::nn::{BatchNormState, ConvParams};

const MAGIC: &[u8; 4] = b"PFCN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint has trailing bytes after the model payload")]
    TrailingData,
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn write_f64s(w: &mut impl Write, vals: &[f64]) -> io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(eof)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(eof)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(eof)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn eof(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Truncated
    } else {
        CheckpointError::Io(e)
    }
}

/// Serialize a model (and its training step count) to `path`.
pub fn save_checkpoint(
    model: &PoreModel,
    step_count: u64,
    path: &Path,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&model.dropout_rate.to_le_bytes())?;
    w.write_all(&step_count.to_le_bytes())?;
    for block in &model.blocks {
        let c = &block.conv;
        for dim in [c.kernel_h, c.kernel_w, c.in_channels, c.out_channels] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        write_f64s(&mut w, &c.weights)?;
        write_f64s(&mut w, &c.bias)?;
        let bn = &block.bn;
        w.write_all(&(bn.channels() as u32).to_le_bytes())?;
        w.write_all(&bn.epsilon.to_le_bytes())?;
        w.write_all(&bn.momentum.to_le_bytes())?;
        write_f64s(&mut w, &bn.gamma)?;
        write_f64s(&mut w, &bn.beta)?;
        write_f64s(&mut w, &bn.running_mean)?;
        write_f64s(&mut w, &bn.running_var)?;
    }
    w.flush()?;
    Ok(())
}

/// Deserialize a model; returns the model and its stored step count.
pub fn load_checkpoint(path: &Path) -> Result<(PoreModel, u64), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dropout_rate = f64::from_le_bytes({
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(eof)?;
        b
    });
    let step_count = read_u64(&mut r)?;

    let expected = [(3u32, 1u32, 32u32), (3, 32, 64), (3, 64, 128), (5, 128, 1)];
    let mut blocks = Vec::with_capacity(4);
    for (i, (k, cin, cout)) in expected.into_iter().enumerate() {
        let kh = read_u32(&mut r)?;
        let kw = read_u32(&mut r)?;
        let ci = read_u32(&mut r)?;
        let co = read_u32(&mut r)?;
        if (kh, kw, ci, co) != (k, k, cin, cout) {
            return Err(CheckpointError::ShapeMismatch(format!(
                "layer {}: header {kh}x{kw}x{ci}x{co}, expected {k}x{k}x{cin}x{cout}",
                i + 1
            )));
        }
        let n_w = (kh * kw * ci * co) as usize;
        let weights = read_f64s(&mut r, n_w)?;
        let bias = read_f64s(&mut r, co as usize)?;
        let channels = read_u32(&mut r)?;
        if channels != co {
            return Err(CheckpointError::ShapeMismatch(format!(
                "layer {}: batch norm over {channels} channels for {co} filters",
                i + 1
            )));
        }
        let epsilon = read_f64s(&mut r, 1)?[0];
        let momentum = read_f64s(&mut r, 1)?[0];
        let gamma = read_f64s(&mut r, channels as usize)?;
        let beta = read_f64s(&mut r, channels as usize)?;
        let running_mean = read_f64s(&mut r, channels as usize)?;
        let running_var = read_f64s(&mut r, channels as usize)?;
        blocks.push(ConvBlock {
            conv: ConvParams {
                kernel_h: kh as usize,
                kernel_w: kw as usize,
                in_channels: ci as usize,
                out_channels: co as usize,
                weights,
                bias,
            },
            bn: BatchNormState {
                gamma,
                beta,
                running_mean,
                running_var,
                epsilon,
                momentum,
            },
        });
    }
    let mut rest = [0u8; 1];
    match r.read(&mut rest)? {
        0 => {}
        _ => return Err(CheckpointError::TrailingData),
    }
    let blocks: [ConvBlock; 4] = blocks.try_into().expect("exactly four blocks read");
    Ok((
        PoreModel {
            blocks,
            dropout_rate,
        },
        step_count,
    ))
}
