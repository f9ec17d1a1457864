//! DEM smoothing and geomorphometric layers.
//!
//! Derivatives come from the Evans–Young quadratic fit over each 3x3 window
//! (x east, y north):
//!
//! ```text
//! z1 z2 z3      p = (z3 + z6 + z9 - z1 - z4 - z7) / 6g
//! z4 z5 z6      q = (z1 + z2 + z3 - z7 - z8 - z9) / 6g
//! z7 z8 z9      r = (z1 + z3 + z4 + z6 + z7 + z9 - 2(z2 + z5 + z8)) / 3g²
//!               t = (z1 + z2 + z3 + z7 + z8 + z9 - 2(z4 + z5 + z6)) / 3g²
//!               s = (z3 + z7 - z1 - z9) / 4g²
//! ```

use crate::grid::{Grid, Band, MultiBandStack};
use crate::error::Result;

/// Radius of the smoothing used as the reference surface for the
/// slope-azimuth divergence index.
pub const SAD_SMOOTH_RADIUS: usize = 5;

/// Mean of valid cells in the `(2r+1)²` window; nodata cells stay nodata.
pub fn smooth_dem(dem: &Grid, radius: usize) -> Grid {
    if radius == 0 {
        return dem.clone();
    }
    let g = dem.georef;
    let (w, h) = (g.width, g.height);
    let mut out = vec![0.0f32; g.len()];
    crate::par::for_each_row(&mut out, w, |r, row| {
        let r0 = r.saturating_sub(radius);
        let r1 = (r + radius).min(h - 1);
        for (c, v) in row.iter_mut().enumerate() {
            let idx = g.index(r, c);
            if !dem.is_valid(idx) {
                *v = dem.cells[idx];
                continue;
            }
            let c0 = c.saturating_sub(radius);
            let c1 = (c + radius).min(w - 1);
            let mut sum = 0.0f64;
            let mut n = 0u32;
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    if let Some(z) = dem.value(g.index(rr, cc)) {
                        sum += z as f64;
                        n += 1;
                    }
                }
            }
            *v = (sum / n as f64) as f32;
        }
    });
    Grid {
        georef: g,
        nodata: dem.nodata,
        cells: out,
    }
}

/// Partial derivatives of the local quadratic surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl Derivatives {
    /// From a 3x3 window in row-major order (north row first).
    pub fn from_window(z: &[f64; 9], g: f64) -> Self {
        let [z1, z2, z3, z4, z5, z6, z7, z8, z9] = *z;
        Derivatives {
            p: (z3 + z6 + z9 - z1 - z4 - z7) / (6.0 * g),
            q: (z1 + z2 + z3 - z7 - z8 - z9) / (6.0 * g),
            r: (z1 + z3 + z4 + z6 + z7 + z9 - 2.0 * (z2 + z5 + z8)) / (3.0 * g * g),
            t: (z1 + z2 + z3 + z7 + z8 + z9 - 2.0 * (z4 + z5 + z6)) / (3.0 * g * g),
            s: (z3 + z7 - z1 - z9) / (4.0 * g * g),
        }
    }

    pub fn gradient2(&self) -> f64 {
        self.p * self.p + self.q * self.q
    }

    /// Slope angle in degrees.
    pub fn slope_deg(&self) -> f64 {
        self.gradient2().sqrt().atan().to_degrees()
    }

    /// Downslope azimuth in degrees clockwise from north, `None` on flats.
    pub fn aspect_deg(&self) -> Option<f64> {
        if self.gradient2() == 0.0 {
            return None;
        }
        let a = (-self.p).atan2(-self.q).to_degrees();
        Some(if a < 0.0 { a + 360.0 } else { a })
    }

    /// Curvature along the slope line; 0 on flats.
    pub fn profile_curvature(&self) -> f64 {
        let g2 = self.gradient2();
        if g2 == 0.0 {
            return 0.0;
        }
        let Derivatives { p, q, r, s, t } = *self;
        -(p * p * r + 2.0 * p * q * s + q * q * t) / (g2 * (1.0 + g2).powf(1.5))
    }

    /// Curvature across the slope line; 0 on flats.
    pub fn tangential_curvature(&self) -> f64 {
        let g2 = self.gradient2();
        if g2 == 0.0 {
            return 0.0;
        }
        let Derivatives { p, q, r, s, t } = *self;
        -(q * q * r - 2.0 * p * q * s + p * p * t) / (g2 * (1.0 + g2).sqrt())
    }

    pub fn mean_curvature(&self) -> f64 {
        let Derivatives { p, q, r, s, t } = *self;
        let g2 = self.gradient2();
        -((1.0 + q * q) * r - 2.0 * p * q * s + (1.0 + p * p) * t) / (2.0 * (1.0 + g2).powf(1.5))
    }

    pub fn gaussian_curvature(&self) -> f64 {
        let Derivatives { r, s, t, .. } = *self;
        let g2 = self.gradient2();
        (r * t - s * s) / ((1.0 + g2) * (1.0 + g2))
    }

    /// Half the difference of the principal curvatures, `sqrt(H² - K)`.
    pub fn unsphericity(&self) -> f64 {
        let h = self.mean_curvature();
        (h * h - self.gaussian_curvature()).max(0.0).sqrt()
    }
}

/// Five geomorphometric layers aligned with the source DEM.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainLayers {
    pub slope: Grid,
    pub profile_curvature: Grid,
    pub tangential_curvature: Grid,
    pub unsphericity: Grid,
    pub sad_index: Grid,
}

impl TerrainLayers {
    pub fn into_stack_channels(self, stack: &mut MultiBandStack) -> Result<()> {
        stack.push(Band::Slope, self.slope)?;
        stack.push(Band::ProfileCurvature, self.profile_curvature)?;
        stack.push(Band::TangentialCurvature, self.tangential_curvature)?;
        stack.push(Band::Unsphericity, self.unsphericity)?;
        stack.push(Band::SlopeAzimuthDivergence, self.sad_index)?;
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, &Grid); 5] {
        [
            ("slope", &self.slope),
            ("profile_curvature", &self.profile_curvature),
            ("tangential_curvature", &self.tangential_curvature),
            ("unsphericity", &self.unsphericity),
            ("sad_index", &self.sad_index),
        ]
    }
}

/// 3x3 window around an interior cell, `None` at borders or next to nodata.
pub(crate) fn window3(dem: &Grid, row: usize, col: usize) -> Option<[f64; 9]> {
    let g = &dem.georef;
    if g.is_border(row, col) {
        return None;
    }
    let mut z = [0.0f64; 9];
    for dr in 0..3 {
        for dc in 0..3 {
            z[dr * 3 + dc] = dem.value(g.index(row + dr - 1, col + dc - 1))? as f64;
        }
    }
    Some(z)
}

pub fn derivatives_at(dem: &Grid, row: usize, col: usize) -> Option<Derivatives> {
    window3(dem, row, col).map(|z| Derivatives::from_window(&z, dem.georef.cellsize))
}

/// Absolute wrapped angle difference in degrees, in [0, 180].
fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Slope, profile/tangential curvature, unsphericity and slope-azimuth
/// divergence. Border cells and cells next to nodata are nodata.
pub fn terrain_params(dem: &Grid) -> TerrainLayers {
    let g = dem.georef;
    let smoothed = smooth_dem(dem, SAD_SMOOTH_RADIUS);
    let rows: Vec<Vec<[f32; 5]>> = crate::par::map_range(g.height, |r| {
        (0..g.width)
            .map(|c| match derivatives_at(dem, r, c) {
                None => [dem.nodata; 5],
                Some(d) => {
                    let sad = match (d.aspect_deg(), derivatives_at(&smoothed, r, c)) {
                        (_, None) => dem.nodata as f64,
                        (None, _) => 0.0,
                        (Some(a), Some(ds)) => match ds.aspect_deg() {
                            None => 0.0,
                            Some(b) => angular_difference(a, b) / 180.0,
                        },
                    };
                    [
                        d.slope_deg() as f32,
                        d.profile_curvature() as f32,
                        d.tangential_curvature() as f32,
                        d.unsphericity() as f32,
                        sad as f32,
                    ]
                }
            })
            .collect()
    });
    let layer = |k: usize| Grid {
        georef: g,
        nodata: dem.nodata,
        cells: rows.iter().flatten().map(|v| v[k]).collect(),
    };
    TerrainLayers {
        slope: layer(0),
        profile_curvature: layer(1),
        tangential_curvature: layer(2),
        unsphericity: layer(3),
        sad_index: layer(4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Georef;

    #[test]
    fn smoothing_examples() {
        let geo = Georef::new(3, 3, 15.0);
        let ramp = Grid::from_fn(geo, -9999.0, |r, c| (r * 3 + c + 1) as f32);
        assert_eq!(smooth_dem(&ramp, 1).get(1, 1), 5.0);
        assert_eq!(smooth_dem(&ramp, 0), ramp);
        let flat = Grid::filled(Georef::new(6, 5, 15.0), -9999.0, 42.0);
        assert_eq!(smooth_dem(&flat, 2), flat);
    }

    #[test]
    fn smoothing_skips_nodata() {
        let geo = Georef::new(3, 1, 1.0);
        let g = Grid::new(geo, -9999.0, vec![1.0, -9999.0, 3.0]).unwrap();
        let s = smooth_dem(&g, 1);
        assert_eq!(s.cells, vec![1.0, -9999.0, 3.0]);
    }

    #[test]
    fn inclined_plane() {
        let g = 15.0;
        let dem = Grid::from_fn(Georef::new(7, 7, g), -9999.0, |_, c| (0.5 * c as f64 * g) as f32);
        let t = terrain_params(&dem);
        let expect = 0.5f64.atan().to_degrees();
        for r in 1..6 {
            for c in 1..6 {
                assert!((t.slope.get(r, c) as f64 - expect).abs() < 1e-5);
                assert_eq!(t.profile_curvature.get(r, c), 0.0);
                assert_eq!(t.tangential_curvature.get(r, c), 0.0);
                assert_eq!(t.unsphericity.get(r, c), 0.0);
            }
        }
        assert_eq!(t.slope.get(0, 3), -9999.0);
    }

    #[test]
    fn flat_dem_is_zero() {
        let dem = Grid::filled(Georef::new(5, 5, 15.0), -9999.0, 100.0);
        let t = terrain_params(&dem);
        assert_eq!(t.slope.get(2, 2), 0.0);
        assert_eq!(t.sad_index.get(2, 2), 0.0);
        assert_eq!(t.profile_curvature.get(2, 2), 0.0);
    }

    #[test]
    fn aspect_points_downslope() {
        // Elevation rises to the east: water runs west (270°).
        let d = Derivatives { p: 1.0, q: 0.0, r: 0.0, s: 0.0, t: 0.0 };
        assert!((d.aspect_deg().unwrap() - 270.0).abs() < 1e-12);
        // Elevation rises to the north: water runs south (180°).
        let d = Derivatives { p: 0.0, q: 1.0, r: 0.0, s: 0.0, t: 0.0 };
        assert!((d.aspect_deg().unwrap() - 180.0).abs() < 1e-12);
        assert_eq!(angular_difference(350.0, 10.0), 20.0);
        assert_eq!(angular_difference(0.0, 180.0), 180.0);
    }

    #[test]
    fn sphere_is_umbilic() {
        let radius = 5000.0f64;
        let g = 15.0;
        let n = 21;
        let mid = (n / 2) as f64;
        let dem = Grid::from_fn(Georef::new(n, n, g), -9999.0, |r, c| {
            let x = (c as f64 - mid) * g;
            let y = (mid - r as f64) * g;
            (radius * radius - x * x - y * y).sqrt() as f32 - 4000.0
        });
        let t = terrain_params(&dem);
        for r in 7..14 {
            for c in 7..14 {
                // f32 storage bounds the resolvable curvature well below 1/R.
                assert!((t.unsphericity.get(r, c) as f64) < 0.05 / radius, "{}", t.unsphericity.get(r, c));
            }
        }
    }

    #[test]
    fn nodata_neighbor_propagates() {
        let mut dem = Grid::from_fn(Georef::new(5, 5, 1.0), -9999.0, |r, c| (r + c) as f32);
        dem.cells[12] = -9999.0;
        let t = terrain_params(&dem);
        for (r, c) in [(1, 1), (1, 2), (2, 1), (3, 3)] {
            assert_eq!(t.slope.get(r, c), -9999.0);
        }
    }
}
