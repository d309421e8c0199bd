//! Network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "ALNP"  magic
//! u16     version (= 1)
//! u16     activation code (0 = tanh, 1 = silu)
//! u16     embedding width
//! u16     number of extra conditioning scalars
//! u32     spatial dimension
//! u32     layer count L
//! L x     (u32 rows, u32 cols)
//! L x     rows*cols f64 weights row-major, then rows f64 biases
//! ```
//!
//! The f64 payload makes the roundtrip lossless for both scalar widths.

use std::path::Path;

use super::{Activation, MlpArch, MlpParams};
use crate::bytes::{Reader, Writer};
use crate::error::Result;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"ALNP";
const VERSION: u16 = 1;

/// Serializes a network to `path`.
pub fn write_checkpoint<S: Scalar>(path: &Path, params: &MlpParams<S>) -> Result<()> {
    let arch = params.arch();
    let dims = arch.layer_dims();
    let mut w = Writer::new();
    w.magic(MAGIC)
        .u16(VERSION)
        .u16(arch.activation.code())
        .u16(arch.embed_width as u16)
        .u16(arch.num_extra as u16)
        .u32(arch.x_dim as u32)
        .u32(dims.len() as u32);
    for &(rows, cols) in &dims {
        w.u32(rows as u32).u32(cols as u32);
    }
    for &v in params.data() {
        w.f64(v.to64());
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

/// Reads a network back; validates the header, the layer-dimension chain,
/// and entry finiteness.
pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<MlpParams<S>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported checkpoint version {version}")));
    }
    let act_code = r.u16("activation")?;
    let activation = Activation::from_code(act_code)
        .ok_or_else(|| r.error(format!("unknown activation code {act_code}")))?;
    let embed_width = r.u16("embed_width")? as usize;
    let num_extra = r.u16("num_extra")? as usize;
    let x_dim = r.u32("x_dim")? as usize;
    let num_layers = r.u32("num_layers")? as usize;
    if num_layers == 0 {
        return Err(r.error("checkpoint has no layers"));
    }

    let mut dims = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let rows = r.u32(&format!("layer {l} rows"))? as usize;
        let cols = r.u32(&format!("layer {l} cols"))? as usize;
        dims.push((rows, cols));
    }
    let hidden: Vec<usize> = dims[..num_layers - 1].iter().map(|&(rows, _)| rows).collect();
    let arch = MlpArch::new(x_dim, hidden, embed_width, num_extra, activation)?;
    let expect = arch.layer_dims();
    if expect != dims {
        return Err(r.error(format!(
            "layer dimensions {dims:?} do not chain for the declared header (expected {expect:?})"
        )));
    }

    let mut data = Vec::with_capacity(arch.num_params());
    for i in 0..arch.num_params() {
        let v = r.f64(&format!("parameter {i}"))?;
        if !v.is_finite() {
            return Err(r.error(format!("parameter {i} is not finite ({v})")));
        }
        data.push(S::of(v));
    }
    r.expect_end()?;
    MlpParams::from_flat(arch, data)
}
