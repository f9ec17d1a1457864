use super::{Georef, Grid, MultiBandStack};
use crate::error::{Error, Result};

/// Nearest-neighbour resampling to a new cell size, keeping the lower-left
/// origin. Output dimensions are `round(extent / target_cellsize)`.
pub fn resample_nearest(grid: &Grid, target_cellsize: f64) -> Result<Grid> {
    if !target_cellsize.is_finite() || target_cellsize <= 0.0 {
        return Err(Error::param("target_cellsize", format!("must be > 0, got {target_cellsize}")));
    }
    let src = &grid.georef;
    if target_cellsize == src.cellsize {
        return Ok(grid.clone());
    }
    let extent_x = src.width as f64 * src.cellsize;
    let extent_y = src.height as f64 * src.cellsize;
    let width = ((extent_x / target_cellsize).round() as usize).max(1);
    let height = ((extent_y / target_cellsize).round() as usize).max(1);
    let dst = Georef {
        width,
        height,
        cellsize: target_cellsize,
        origin_x: src.origin_x,
        origin_y: src.origin_y,
    };
    // Offsets are measured from the shared lower-left corner so that origin
    // magnitudes never enter the index arithmetic.
    let src_col = |c: usize| {
        let x = (c as f64 + 0.5) * target_cellsize;
        ((x / src.cellsize).floor() as usize).min(src.width - 1)
    };
    let src_row = |r: usize| {
        let y = (height - r) as f64 * target_cellsize - 0.5 * target_cellsize;
        let from_bottom = ((y / src.cellsize).floor() as usize).min(src.height - 1);
        src.height - 1 - from_bottom
    };
    let cols: Vec<usize> = (0..width).map(src_col).collect();
    let mut cells = vec![0.0f32; dst.len()];
    crate::par::for_each_row(&mut cells, width, |r, row| {
        let sr = src_row(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v = grid.cells[src.index(sr, cols[c])];
        }
    });
    Ok(Grid {
        georef: dst,
        nodata: grid.nodata,
        cells,
    })
}

/// Min-max scale valid cells into [0, 1]; a constant grid maps to zeros.
pub fn normalize_grid(grid: &Grid) -> Grid {
    let mut out = grid.clone();
    let Some((lo, hi)) = grid.min_max() else {
        return out;
    };
    let lo = lo as f64;
    let range = hi as f64 - lo;
    for (i, v) in out.cells.iter_mut().enumerate() {
        if grid.is_valid(i) {
            *v = if range > 0.0 {
                (((*v as f64 - lo) / range) as f32).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
    out
}

/// Per-channel min-max normalization over valid cells.
pub fn normalize_stack(stack: &MultiBandStack) -> Result<MultiBandStack> {
    if stack.is_empty() {
        return Err(Error::param("stack", "cannot normalize an empty stack"));
    }
    let channels: Vec<_> = stack.iter().collect();
    let normalized = crate::par::map_slice(&channels, |(_, g)| normalize_grid(g));
    let mut out = MultiBandStack::new();
    for ((band, _), g) in channels.into_iter().zip(normalized) {
        out.push(band, g)?;
    }
    Ok(out)
}
