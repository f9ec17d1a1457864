//! Raster data model shared by every stage.
//!
//! A [`Grid`] is a single-band, row-major raster (row 0 = north edge) with a
//! lower-left origin and a nodata sentinel. [`Mask`] and [`Labels`] carry the
//! same georeferencing with binary and integer-label cells respectively.

mod io;
mod resample;
mod stack;
mod tile;

pub use io::{read_grid, read_mask, write_grid, write_mask, GridFormat};
pub use resample::{normalize_grid, normalize_stack, resample_nearest};
pub use stack::{Band, MultiBandStack};
pub use tile::{tile_and_merge, tile_origins, Tile, DEFAULT_STRIDE, DEFAULT_WINDOW};

use crate::error::{Error, Result};

/// Nodata value used for rasters this crate creates from scratch.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// Raster dimensions and placement.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Georef {
    pub width: usize,
    pub height: usize,
    /// Cell side in meters.
    pub cellsize: f64,
    /// Lower-left corner.
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Georef {
    pub fn new(width: usize, height: usize, cellsize: f64) -> Self {
        Georef {
            width,
            height,
            cellsize,
            origin_x: 0.0,
            origin_y: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Structural(format!(
                "grid dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !self.cellsize.is_finite() || self.cellsize <= 0.0 {
            return Err(Error::Structural(format!(
                "cellsize must be positive, got {}",
                self.cellsize
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.width, idx % self.width)
    }

    /// Neighbor of `(row, col)` at offset `(dr, dc)` if it lies inside the grid.
    #[inline]
    pub fn offset(&self, row: usize, col: usize, dr: isize, dc: isize) -> Option<(usize, usize)> {
        let r = row as isize + dr;
        let c = col as isize + dc;
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    #[inline]
    pub fn is_border(&self, row: usize, col: usize) -> bool {
        row == 0 || col == 0 || row + 1 == self.height || col + 1 == self.width
    }

    /// Same shape and placement (exact comparison).
    pub fn aligned(&self, other: &Georef) -> bool {
        self == other
    }

    pub(crate) fn ensure_aligned(&self, other: &Georef, what: &str) -> Result<()> {
        if self.aligned(other) {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "{what} is not aligned: {}x{} @ {} ({}, {}) vs {}x{} @ {} ({}, {})",
                other.width,
                other.height,
                other.cellsize,
                other.origin_x,
                other.origin_y,
                self.width,
                self.height,
                self.cellsize,
                self.origin_x,
                self.origin_y
            )))
        }
    }
}

/// Single-band raster with f32 cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub georef: Georef,
    pub nodata: f32,
    pub cells: Vec<f32>,
}

impl Grid {
    pub fn new(georef: Georef, nodata: f32, cells: Vec<f32>) -> Result<Self> {
        georef.validate()?;
        if cells.len() != georef.len() {
            return Err(Error::Structural(format!(
                "expected {} cells for {}x{}, got {}",
                georef.len(),
                georef.width,
                georef.height,
                cells.len()
            )));
        }
        Ok(Grid {
            georef,
            nodata,
            cells,
        })
    }

    pub fn filled(georef: Georef, nodata: f32, value: f32) -> Self {
        Grid {
            georef,
            nodata,
            cells: vec![value; georef.len()],
        }
    }

    /// Build from a row-major closure.
    pub fn from_fn(georef: Georef, nodata: f32, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut cells = Vec::with_capacity(georef.len());
        for r in 0..georef.height {
            for c in 0..georef.width {
                cells.push(f(r, c));
            }
        }
        Grid {
            georef,
            nodata,
            cells,
        }
    }

    pub fn width(&self) -> usize {
        self.georef.width
    }

    pub fn height(&self) -> usize {
        self.georef.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.cells[self.georef.index(row, col)]
    }

    /// Nodata test; a NaN sentinel matches any NaN cell.
    #[inline]
    pub fn is_nodata_value(&self, v: f32) -> bool {
        v == self.nodata || (v.is_nan() && self.nodata.is_nan())
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        let v = self.cells[idx];
        !self.is_nodata_value(v) && !v.is_nan()
    }

    /// Cell value as `Some` unless nodata.
    #[inline]
    pub fn value(&self, idx: usize) -> Option<f32> {
        if self.is_valid(idx) {
            Some(self.cells[idx])
        } else {
            None
        }
    }

    pub fn valid_count(&self) -> usize {
        (0..self.cells.len()).filter(|&i| self.is_valid(i)).count()
    }

    /// (min, max) over valid cells.
    pub fn min_max(&self) -> Option<(f32, f32)> {
        let mut it = self.cells.iter().enumerate().filter(|(i, _)| self.is_valid(*i));
        let (_, &first) = it.next()?;
        Some(it.fold((first, first), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v))))
    }

    /// Sub-window `[row0, row0+h) x [col0, col0+w)`; origin shifted accordingly.
    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Grid {
        let g = &self.georef;
        let mut cells = Vec::with_capacity(h * w);
        for r in row0..row0 + h {
            let start = g.index(r, col0);
            cells.extend_from_slice(&self.cells[start..start + w]);
        }
        Grid {
            georef: g.sub(row0, col0, h, w),
            nodata: self.nodata,
            cells,
        }
    }
}

impl Georef {
    /// Georeferencing of a sub-window.
    pub fn sub(&self, row0: usize, col0: usize, h: usize, w: usize) -> Georef {
        Georef {
            width: w,
            height: h,
            cellsize: self.cellsize,
            origin_x: self.origin_x + col0 as f64 * self.cellsize,
            origin_y: self.origin_y + (self.height - row0 - h) as f64 * self.cellsize,
        }
    }
}

/// Binary raster; cells are 0, 1 or [`Mask::NODATA`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub georef: Georef,
    pub cells: Vec<u8>,
}

impl Mask {
    pub const NODATA: u8 = u8::MAX;

    pub fn empty(georef: Georef) -> Self {
        Mask {
            georef,
            cells: vec![0; georef.len()],
        }
    }

    pub fn full(georef: Georef) -> Self {
        Mask {
            georef,
            cells: vec![1; georef.len()],
        }
    }

    pub fn from_fn(georef: Georef, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::empty(georef);
        for r in 0..georef.height {
            for c in 0..georef.width {
                if f(r, c) {
                    m.cells[georef.index(r, c)] = 1;
                }
            }
        }
        m
    }

    pub fn from_bools(georef: Georef, bits: &[bool]) -> Self {
        Mask {
            georef,
            cells: bits.iter().map(|&b| b as u8).collect(),
        }
    }

    #[inline]
    pub fn is_set(&self, idx: usize) -> bool {
        self.cells[idx] == 1
    }

    #[inline]
    pub fn is_nodata(&self, idx: usize) -> bool {
        self.cells[idx] == Mask::NODATA
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.is_set(self.georef.index(row, col))
    }

    #[inline]
    pub fn set(&mut self, idx: usize, on: bool) {
        self.cells[idx] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 1).count()
    }

    pub fn any(&self) -> bool {
        self.cells.contains(&1)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
    }

    /// Cell-wise combination of positives; nodata cells of `self` are kept
    /// unless the result is positive.
    pub fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        let cells = self
            .cells
            .iter()
            .zip(&other.cells)
            .map(|(&a, &b)| {
                let on = f(a == 1, b == 1);
                if on {
                    1
                } else if a == Mask::NODATA {
                    Mask::NODATA
                } else {
                    0
                }
            })
            .collect();
        Mask {
            georef: self.georef,
            cells,
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a != b)
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && !b)
    }

    /// Every positive of `other` is positive here.
    pub fn contains(&self, other: &Mask) -> bool {
        other.indices().all(|i| self.is_set(i))
    }

    pub fn crop(&self, row0: usize, col0: usize, h: usize, w: usize) -> Mask {
        let g = &self.georef;
        let mut cells = Vec::with_capacity(h * w);
        for r in row0..row0 + h {
            let start = g.index(r, col0);
            cells.extend_from_slice(&self.cells[start..start + w]);
        }
        Mask {
            georef: g.sub(row0, col0, h, w),
            cells,
        }
    }

    /// Write `patch` back at `(row0, col0)`. Nodata cells of `self` stay nodata
    /// unless the patch sets them positive.
    pub fn paste(&mut self, row0: usize, col0: usize, patch: &Mask) {
        let w = patch.georef.width;
        for r in 0..patch.georef.height {
            for c in 0..w {
                let v = patch.cells[r * w + c];
                let dst = self.georef.index(row0 + r, col0 + c);
                if v == 1 || self.cells[dst] != Mask::NODATA {
                    self.cells[dst] = if v == Mask::NODATA { 0 } else { v };
                }
            }
        }
    }

    /// Mask from a grid: nonzero valid cells are positive, nodata stays nodata.
    pub fn from_grid(grid: &Grid) -> Mask {
        let cells = (0..grid.cells.len())
            .map(|i| match grid.value(i) {
                None => Mask::NODATA,
                Some(v) if v != 0.0 => 1,
                Some(_) => 0,
            })
            .collect();
        Mask {
            georef: grid.georef,
            cells,
        }
    }

    pub fn to_grid(&self, nodata: f32) -> Grid {
        Grid {
            georef: self.georef,
            nodata,
            cells: self
                .cells
                .iter()
                .map(|&v| match v {
                    Mask::NODATA => nodata,
                    v => v as f32,
                })
                .collect(),
        }
    }
}

/// Integer-labeled raster; 0 means unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub georef: Georef,
    pub cells: Vec<u32>,
}

impl Labels {
    pub fn empty(georef: Georef) -> Self {
        Labels {
            georef,
            cells: vec![0; georef.len()],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.cells[self.georef.index(row, col)]
    }

    pub fn max_label(&self) -> u32 {
        self.cells.iter().copied().max().unwrap_or(0)
    }

    /// Distinct nonzero labels in ascending order.
    pub fn codes(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.cells.iter().copied().filter(|&l| l != 0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn footprint(&self) -> Mask {
        Mask {
            georef: self.georef,
            cells: self.cells.iter().map(|&l| (l != 0) as u8).collect(),
        }
    }

    pub fn mask_of(&self, code: u32) -> Mask {
        Mask {
            georef: self.georef,
            cells: self.cells.iter().map(|&l| (l == code) as u8).collect(),
        }
    }

    /// Labels from an integer-valued grid; nodata and non-positive cells are 0.
    pub fn from_grid(grid: &Grid) -> Labels {
        let cells = (0..grid.cells.len())
            .map(|i| match grid.value(i) {
                Some(v) if v >= 1.0 => v.round() as u32,
                _ => 0,
            })
            .collect();
        Labels {
            georef: grid.georef,
            cells,
        }
    }

    pub fn to_grid(&self) -> Grid {
        Grid {
            georef: self.georef,
            nodata: DEFAULT_NODATA,
            cells: self.cells.iter().map(|&l| l as f32).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(Grid::new(Georef::new(2, 2, 15.0), -9999.0, vec![0.0; 3]).is_err());
        assert!(Grid::new(Georef::new(0, 2, 15.0), -9999.0, vec![]).is_err());
        assert!(Grid::new(Georef::new(1, 1, 0.0), -9999.0, vec![1.0]).is_err());
    }

    #[test]
    fn crop_shifts_origin() {
        let g = Grid::from_fn(Georef::new(4, 3, 10.0), -1.0, |r, c| (r * 4 + c) as f32);
        let sub = g.crop(1, 2, 2, 2);
        assert_eq!(sub.cells, vec![6.0, 7.0, 10.0, 11.0]);
        assert_eq!(sub.georef.origin_x, 20.0);
        assert_eq!(sub.georef.origin_y, 0.0);
        let top = g.crop(0, 0, 1, 1);
        assert_eq!(top.georef.origin_y, 20.0);
    }

    #[test]
    fn mask_paste_roundtrip() {
        let g = Georef::new(5, 5, 1.0);
        let mut m = Mask::empty(g);
        let patch = Mask::full(Georef::new(2, 2, 1.0));
        m.paste(1, 1, &patch);
        assert_eq!(m.count(), 4);
        assert_eq!(m.crop(1, 1, 2, 2).cells, vec![1; 4]);
    }

    #[test]
    fn nodata_nan_sentinel() {
        let g = Grid::new(Georef::new(2, 1, 1.0), f32::NAN, vec![f32::NAN, 2.0]).unwrap();
        assert_eq!(g.value(0), None);
        assert_eq!(g.value(1), Some(2.0));
    }
}
