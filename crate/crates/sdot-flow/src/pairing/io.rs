//! Pair-file format, little-endian:
//!
//! ```text
//! "ALNF" | u16 version = 1 | u16 reserved = 0 | u32 record count
//!        | u32 dataset size | count * (u64 seed, u32 class_id, u32 data_index)
//! ```
//!
//! 16 header bytes plus 16 bytes per record. The dataset size is stored so
//! readers can validate indices without the dataset at hand.

use std::path::Path;

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

use super::PairRecord;

const MAGIC: &[u8; 4] = b"ALNF";
const VERSION: u16 = 1;

pub fn write_pairs(path: &Path, records: &[PairRecord], dataset_size: u32) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.data_index >= dataset_size) {
        return Err(Error::IndexOutOfRange {
            index: r.data_index as usize,
            size: dataset_size as usize,
        });
    }
    let mut w = Writer::new();
    w.magic(MAGIC)
        .u16(VERSION)
        .u16(0)
        .u32(records.len() as u32)
        .u32(dataset_size);
    for r in records {
        w.u64(r.seed).u32(r.class_id).u32(r.data_index);
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

/// Returns the records and the dataset size they index into.
pub fn read_pairs(path: &Path) -> Result<(Vec<PairRecord>, u32)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(MAGIC)?;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let reserved = r.u16("reserved")?;
    if reserved != 0 {
        return Err(r.error(format!("reserved field is {reserved}, expected 0")));
    }
    let count = r.u32("record count")? as usize;
    let dataset_size = r.u32("dataset size")?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let seed = r.u64(&format!("record {i} seed"))?;
        let class_id = r.u32(&format!("record {i} class_id"))?;
        let data_index = r.u32(&format!("record {i} data_index"))?;
        if data_index >= dataset_size {
            return Err(r.error(format!(
                "record {i} data_index {data_index} >= dataset size {dataset_size}"
            )));
        }
        records.push(PairRecord {
            seed,
            class_id,
            data_index,
        });
    }
    r.expect_end()?;
    Ok((records, dataset_size))
}
