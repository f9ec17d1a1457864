//! Normalized-difference indices and a threshold segmenter.

use crate::error::Result;
use crate::grid::{Band, Grid, Mask, MultiBandStack};

/// Default snow cutoff: the snow index is strongly negative over snow.
pub const DEFAULT_SNOW_THRESHOLD: f32 = -0.4;
/// Default NDVI above which a cell counts as vegetated.
pub const DEFAULT_VEGETATION_THRESHOLD: f32 = 0.3;
pub const DEFAULT_BASELINE_SLOPE_MAX: f32 = 24.0;

/// `(a - b) / (a + b)` per cell, clamped to [-1, 1]. A zero denominator or a
/// nodata input gives nodata (the nodata of `a`).
pub fn normalized_difference(a: &Grid, b: &Grid) -> Grid {
    let cells = crate::par::map_range(a.cells.len(), |i| match (a.value(i), b.value(i)) {
        (Some(x), Some(y)) => {
            let den = x as f64 + y as f64;
            if den == 0.0 {
                a.nodata
            } else {
                (((x as f64 - y as f64) / den).clamp(-1.0, 1.0)) as f32
            }
        }
        _ => a.nodata,
    });
    Grid {
        georef: a.georef,
        nodata: a.nodata,
        cells,
    }
}

/// NDVI = (B5 - B4) / (B5 + B4).
pub fn ndvi(stack: &MultiBandStack) -> Result<Grid> {
    Ok(normalized_difference(stack.require(Band::NIR)?, stack.require(Band::RED)?))
}

/// Snow index = (B6 - B3) / (B6 + B3); snow is strongly negative.
pub fn snow_index(stack: &MultiBandStack) -> Result<Grid> {
    Ok(normalized_difference(stack.require(Band::SWIR1)?, stack.require(Band::GREEN)?))
}

/// Cells where `grid < threshold`; nodata stays nodata.
pub fn below(grid: &Grid, threshold: f32) -> Mask {
    Mask {
        georef: grid.georef,
        cells: (0..grid.cells.len())
            .map(|i| match grid.value(i) {
                None => Mask::NODATA,
                Some(v) => (v < threshold) as u8,
            })
            .collect(),
    }
}

/// Cells where `grid > threshold`; nodata cells are never set.
pub fn above(grid: &Grid, threshold: f32) -> Mask {
    Mask {
        georef: grid.georef,
        cells: (0..grid.cells.len())
            .map(|i| grid.value(i).is_some_and(|v| v > threshold) as u8)
            .collect(),
    }
}

/// Stand-in segmenter: snow index below `snow_thresh` on slopes under
/// `slope_max` degrees.
pub fn baseline_segment(stack: &MultiBandStack, snow_thresh: f32, slope_max: f32) -> Result<Mask> {
    let snow = snow_index(stack)?;
    let slope = stack.require(Band::Slope)?;
    let cells = (0..snow.cells.len())
        .map(|i| match (snow.value(i), slope.value(i)) {
            (Some(s), Some(sl)) => (s < snow_thresh && sl < slope_max) as u8,
            _ => Mask::NODATA,
        })
        .collect();
    Ok(Mask {
        georef: snow.georef,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Georef;

    fn one(v: f32) -> Grid {
        Grid::filled(Georef::new(1, 1, 15.0), -9999.0, v)
    }

    fn stack(pairs: &[(Band, f32)]) -> MultiBandStack {
        let mut s = MultiBandStack::new();
        for &(b, v) in pairs {
            s.push(b, one(v)).unwrap();
        }
        s
    }

    #[test]
    fn ndvi_examples() {
        let v = ndvi(&stack(&[(Band::NIR, 0.5), (Band::RED, 0.25)])).unwrap();
        assert!((v.cells[0] - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(ndvi(&stack(&[(Band::NIR, 0.4), (Band::RED, 0.4)])).unwrap().cells[0], 0.0);
        assert_eq!(ndvi(&stack(&[(Band::NIR, 0.4), (Band::RED, 0.0)])).unwrap().cells[0], 1.0);
        assert_eq!(ndvi(&stack(&[(Band::NIR, 0.0), (Band::RED, 0.0)])).unwrap().cells[0], -9999.0);
        assert!(ndvi(&stack(&[(Band::NIR, 0.4)])).is_err());
    }

    #[test]
    fn snow_examples() {
        let s = snow_index(&stack(&[(Band::SWIR1, 0.1), (Band::GREEN, 0.9)])).unwrap();
        assert!((s.cells[0] + 0.8).abs() < 1e-7);
        assert_eq!(snow_index(&stack(&[(Band::SWIR1, 0.3), (Band::GREEN, 0.3)])).unwrap().cells[0], 0.0);
        assert_eq!(snow_index(&stack(&[(Band::SWIR1, 0.3), (Band::GREEN, 0.0)])).unwrap().cells[0], 1.0);
        assert!(snow_index(&stack(&[(Band::GREEN, 0.3)])).is_err());
    }

    #[test]
    fn nodata_band_gives_nodata() {
        let s = stack(&[(Band::SWIR1, -9999.0), (Band::GREEN, 0.5)]);
        assert_eq!(snow_index(&s).unwrap().cells[0], -9999.0);
    }

    #[test]
    fn baseline_examples() {
        let snowy_flat = stack(&[(Band::SWIR1, 0.1), (Band::GREEN, 0.9), (Band::Slope, 5.0)]);
        assert_eq!(baseline_segment(&snowy_flat, -0.4, 24.0).unwrap().cells, vec![1]);
        let steep = stack(&[(Band::SWIR1, 0.1), (Band::GREEN, 0.9), (Band::Slope, 30.0)]);
        assert_eq!(baseline_segment(&steep, -0.4, 24.0).unwrap().cells, vec![0]);
        let bare = stack(&[(Band::SWIR1, 0.5), (Band::GREEN, 0.2), (Band::Slope, 40.0)]);
        assert!(!baseline_segment(&bare, -0.4, 24.0).unwrap().any());
    }
}
