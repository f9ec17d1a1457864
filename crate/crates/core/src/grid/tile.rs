//! Sliding-window tiling with majority-vote merging of overlapping outputs.

use super::{Georef, Mask};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_STRIDE: usize = 32;

/// One square window of a parent raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row_off: usize,
    pub col_off: usize,
    pub window: usize,
}

/// Window start offsets along one axis. A final window is clamped flush with
/// the far edge when `(extent - window)` is not a multiple of `stride`.
pub fn tile_origins(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    debug_assert!(window <= extent && stride >= 1);
    let last = extent - window;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Run `per_tile` over every window (left-to-right, top-to-bottom) and merge
/// the `window x window` binary outputs per cell by majority vote over the
/// covering tiles, ties positive. Cells covered only by nodata votes stay
/// nodata.
pub fn tile_and_merge<F>(georef: &Georef, window: usize, stride: usize, per_tile: F) -> Result<Mask>
where
    F: Fn(&Tile) -> Mask + Sync + Send,
{
    if stride == 0 {
        return Err(Error::param("stride", "must be >= 1"));
    }
    if window == 0 || window > georef.width.min(georef.height) {
        return Err(Error::param(
            "window",
            format!(
                "must be in 1..={} for a {}x{} grid, got {window}",
                georef.width.min(georef.height),
                georef.width,
                georef.height
            ),
        ));
    }
    let rows = tile_origins(georef.height, window, stride);
    let cols = tile_origins(georef.width, window, stride);
    let tiles: Vec<Tile> = rows
        .iter()
        .flat_map(|&r| {
            cols.iter().map(move |&c| Tile {
                row_off: r,
                col_off: c,
                window,
            })
        })
        .collect();

    // Votes are accumulated per row of tiles so only one band of outputs is
    // alive at a time; integer counts make the merge order-independent.
    let n = georef.len();
    let mut positive = vec![0u32; n];
    let mut total = vec![0u32; n];
    for band in tiles.chunks(cols.len()) {
        let outputs = crate::par::map_slice(band, |t| (*t, per_tile(t)));
        for (t, out) in outputs {
            if out.georef.width != window || out.georef.height != window {
                return Err(Error::Structural(format!(
                    "tile at ({}, {}) returned {}x{}, expected {window}x{window}",
                    t.row_off, t.col_off, out.georef.width, out.georef.height
                )));
            }
            for r in 0..window {
                let base = georef.index(t.row_off + r, t.col_off);
                for c in 0..window {
                    match out.cells[r * window + c] {
                        1 => {
                            positive[base + c] += 1;
                            total[base + c] += 1;
                        }
                        0 => total[base + c] += 1,
                        _ => {}
                    }
                }
            }
        }
    }
    let cells = positive
        .iter()
        .zip(&total)
        .map(|(&p, &t)| match t {
            0 => Mask::NODATA,
            t => (2 * p >= t) as u8,
        })
        .collect();
    Ok(Mask {
        georef: *georef,
        cells,
    })
}

impl Tile {
    pub fn crop_mask(&self, mask: &Mask) -> Mask {
        mask.crop(self.row_off, self.col_off, self.window, self.window)
    }

    pub fn crop_grid(&self, grid: &super::Grid) -> super::Grid {
        grid.crop(self.row_off, self.col_off, self.window, self.window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn nine_tiles_on_64() {
        let g = Georef::new(64, 64, 15.0);
        let count = AtomicUsize::new(0);
        let m = tile_and_merge(&g, 32, 16, |t| {
            count.fetch_add(1, Ordering::Relaxed);
            Mask::full(Georef::new(t.window, t.window, 15.0))
        })
        .unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 9);
        assert_eq!(m.count(), 64 * 64);
    }

    #[test]
    fn origins_clamp_last_window() {
        assert_eq!(tile_origins(64, 32, 16), vec![0, 16, 32]);
        assert_eq!(tile_origins(70, 32, 16), vec![0, 16, 32, 38]);
        assert_eq!(tile_origins(32, 32, 5), vec![0]);
        assert_eq!(DEFAULT_WINDOW, 512);
        assert_eq!(DEFAULT_STRIDE, 32);
    }

    #[test]
    fn majority_ties_are_positive() {
        // Two tiles overlap in the middle column; one says 1, the other 0.
        let g = Georef::new(3, 2, 1.0);
        let m = tile_and_merge(&g, 2, 1, |t| {
            let on = t.col_off == 0;
            Mask {
                georef: Georef::new(2, 2, 1.0),
                cells: vec![on as u8; 4],
            }
        })
        .unwrap();
        assert_eq!(m.cells, vec![1, 1, 0, 1, 1, 0]);
    }

    #[test]
    fn rejects_oversized_window() {
        let g = Georef::new(10, 8, 1.0);
        assert!(tile_and_merge(&g, 9, 1, |t| Mask::empty(Georef::new(t.window, t.window, 1.0))).is_err());
        assert!(tile_and_merge(&g, 4, 0, |t| Mask::empty(Georef::new(t.window, t.window, 1.0))).is_err());
    }
}
