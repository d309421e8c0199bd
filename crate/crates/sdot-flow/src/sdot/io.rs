//! On-disk forms for dual weights (binary) and metric histories (CSV).
//!
//! Dual weight file, little-endian throughout:
//!
//! ```text
//! "ALNW" | u16 version = 1 | u32 n | n * f64 g_ema | n * f64 g
//! ```
//!
//! Values are stored as f64 regardless of the in-memory scalar type.

use std::path::Path;

use crate::bytes::{Reader, Writer};
use crate::error::Result;
use crate::scalar::Scalar;

use super::{DualWeights, MetricsSnapshot};

const MAGIC: &[u8; 4] = b"ALNW";
const VERSION: u16 = 1;

pub fn write_duals<S: Scalar>(path: &Path, duals: &DualWeights<S>) -> Result<()> {
    assert_eq!(
        duals.g.len(),
        duals.g_ema.len(),
        "dual weight vectors must have equal length"
    );
    let mut w = Writer::new();
    w.magic(MAGIC).u16(VERSION).u32(duals.g.len() as u32);
    for v in &duals.g_ema {
        w.f64(v.to64());
    }
    for v in &duals.g {
        w.f64(v.to64());
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn read_duals<S: Scalar>(path: &Path) -> Result<DualWeights<S>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let n = r.u32("count")? as usize;
    let mut g_ema = Vec::with_capacity(n);
    for i in 0..n {
        g_ema.push(S::of(r.f64(&format!("g_ema[{i}]"))?));
    }
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        g.push(S::of(r.f64(&format!("g[{i}]"))?));
    }
    r.expect_end()?;
    Ok(DualWeights { g, g_ema })
}

/// Metric history as `step,mre_est,l1_est,warmup` rows (warmup is 0/1).
pub fn write_metrics_csv<S: Scalar>(path: &Path, history: &[MetricsSnapshot<S>]) -> Result<()> {
    let mut out = String::from("step,mre_est,l1_est,warmup\n");
    for snap in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            snap.step,
            snap.mre_est.to64(),
            snap.l1_est.to64(),
            u8::from(snap.warmup)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
