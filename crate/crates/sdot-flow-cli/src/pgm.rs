//! Density grids rasterized to plain (ASCII `P2`) PGM images.
//!
//! The raster is fixed at 256x256 cells over the square [-3, 3]^2 — large
//! enough to contain the data domain with a margin — with row 0 showing the
//! top of the square (image convention). Counts are scaled linearly so the
//! fullest cell is white (255).

use std::path::Path;

use sdot_flow::Result;

pub const GRID_SIZE: usize = 256;
pub const GRID_MIN: f64 = -3.0;
pub const GRID_MAX: f64 = 3.0;

/// Per-cell point counts. Points outside the square are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    counts: Vec<u64>,
    dropped: u64,
}

impl DensityGrid {
    pub fn new() -> Self {
        DensityGrid {
            counts: vec![0; GRID_SIZE * GRID_SIZE],
            dropped: 0,
        }
    }

    /// Adds one point; 1-D points sit on the x axis.
    pub fn add(&mut self, point: &[f64]) {
        let x = point[0];
        let y = point.get(1).copied().unwrap_or(0.0);
        let span = GRID_MAX - GRID_MIN;
        let fx = (x - GRID_MIN) / span * GRID_SIZE as f64;
        let fy = (y - GRID_MIN) / span * GRID_SIZE as f64;
        if !(0.0..GRID_SIZE as f64).contains(&fx) || !(0.0..GRID_SIZE as f64).contains(&fy) {
            self.dropped += 1;
            return;
        }
        let col = fx as usize;
        let row = GRID_SIZE - 1 - fy as usize;
        self.counts[row * GRID_SIZE + col] += 1;
    }

    pub fn count_at(&self, row: usize, col: usize) -> u64 {
        self.counts[row * GRID_SIZE + col]
    }

    #[cfg(test)]
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    #[cfg(test)]
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// The data-space center of a cell.
    #[cfg(test)]
    pub fn cell_center(row: usize, col: usize) -> (f64, f64) {
        let span = GRID_MAX - GRID_MIN;
        let step = span / GRID_SIZE as f64;
        (
            GRID_MIN + (col as f64 + 0.5) * step,
            GRID_MAX - (row as f64 + 0.5) * step,
        )
    }
}

impl Default for DensityGrid {
    fn default() -> Self {
        Self::new()
    }
}

/// Writes the grid as a plain PGM, counts scaled so the maximum maps to 255.
pub fn write_pgm(path: &Path, grid: &DensityGrid) -> Result<()> {
    let max = grid.counts.iter().copied().max().unwrap_or(0).max(1);
    let mut out = String::with_capacity(GRID_SIZE * GRID_SIZE * 4 + 32);
    out.push_str(&format!("P2\n{GRID_SIZE} {GRID_SIZE}\n255\n"));
    for row in 0..GRID_SIZE {
        for col in 0..GRID_SIZE {
            if col > 0 {
                out.push(' ');
            }
            let v = (grid.count_at(row, col) * 255 + max / 2) / max;
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
