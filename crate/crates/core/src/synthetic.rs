//! Deterministic synthetic scenes for tests, benchmarks and demos.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::grid::{self, Band, Georef, Grid, GridFormat, Mask, MultiBandStack, DEFAULT_NODATA};
use crate::terminus::FeatureStack;

pub const CELLSIZE: f64 = 15.0;

fn rect(g: Georef, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Mask {
    Mask::from_fn(g, |r, c| rows.contains(&r) && cols.contains(&c))
}

/// Small deterministic texture in [-1, 1].
fn texture(r: usize, c: usize, phase: f64) -> f32 {
    ((r as f64 * 1.37 + phase).sin() * (c as f64 * 0.71 + 2.0 * phase).cos()) as f32
}

/// Glacier strips on a ramp rising to the east, termini at the west end.
///
/// * Glacier 1 (rows 5..15): true ice at cols 20..100. D-1 overshoots to col
///   10 over a vegetated apron with background features, D-2 stops at col 30.
/// * Glacier 2 (rows 35..45): D-1 reaches col 17, D-2 col 20 (high agreement).
/// * Glacier 3 (rows 65..75): terminus sub-image IOU exactly 0.7.
#[derive(Debug, Clone)]
pub struct RampScene {
    pub dem: Grid,
    pub d1: Mask,
    pub d2: Mask,
    pub truth: Mask,
    pub features: FeatureStack,
    pub ndvi: Grid,
    pub slope: Grid,
}

pub fn ramp_scene() -> RampScene {
    let g = Georef::new(120, 90, CELLSIZE);
    let dem = Grid::from_fn(g, DEFAULT_NODATA, |r, c| 1000.0 + 10.0 * c as f32 + 0.5 * r as f32);
    let g1_truth = rect(g, 5..15, 20..100);
    let g2_truth = rect(g, 35..45, 20..100);
    let g3_truth = rect(g, 65..75, 20..100);
    let truth = g1_truth.or(&g2_truth).or(&g3_truth);

    let g3_d2 = rect(g, 65..75, 26..100).and_not(&rect(g, 65..71, 26..27));
    let d1 = rect(g, 5..15, 10..100).or(&rect(g, 35..45, 17..100)).or(&g3_truth);
    let d2 = rect(g, 5..15, 30..100).or(&g2_truth).or(&g3_d2);

    let ice = [0.8f32, 0.2, 0.5];
    let rock = [0.2f32, 0.6, 0.3];
    let mut data = Vec::with_capacity(g.len() * 3);
    for i in 0..g.len() {
        let (r, c) = g.row_col(i);
        let base = if truth.is_set(i) { ice } else { rock };
        for (f, b) in base.iter().enumerate() {
            data.push(b + 0.08 * texture(r, c, f as f64));
        }
    }
    let features = FeatureStack { georef: g, dims: 3, data };
    let ndvi = Grid::from_fn(g, DEFAULT_NODATA, |r, c| if (3..17).contains(&r) && (8..18).contains(&c) { 0.6 } else { 0.05 });
    let slope = Grid::filled(g, DEFAULT_NODATA, 5.0);
    RampScene {
        dem,
        d1,
        d2,
        truth,
        features,
        ndvi,
        slope,
    }
}

pub const CONE_SIZE: usize = 256;
pub const CONE_PEAK: (usize, usize) = (128, 128);
pub const CONE_SNOW_RADIUS: f64 = 56.0;

/// Conical mountain with two valley tongues sharing a summit snowfield.
///
/// * Tongue A (east) and tongue B (west), rows 112..146.
/// * Summit snow within 56 cells of the peak, except the south-east quadrant
///   which is bare rock.
/// * A 7×12 bare gap and a 3-cell nunatak inside the snowfield.
/// * Small glacier C (rows 129..131) on the bare quadrant with snow patch P
///   below it. P drains east over rock into tongue A.
#[derive(Debug, Clone)]
pub struct ConeScene {
    pub dem: Grid,
    pub ablation: Mask,
    pub tongue_a: Mask,
    pub tongue_b: Mask,
    pub glacier_c: Mask,
    pub patch: Mask,
    pub gap: Mask,
    pub nunatak: Mask,
    pub snow: Mask,
    pub stack: MultiBandStack,
}

pub fn cone_dem(size: usize) -> Grid {
    let g = Georef::new(size, size, CELLSIZE);
    let (pr, pc) = (size as f64 / 2.0, size as f64 / 2.0);
    Grid::from_fn(g, DEFAULT_NODATA, |r, c| {
        let d = ((r as f64 - pr).powi(2) + (c as f64 - pc).powi(2)).sqrt();
        (3000.0 - 5.0 * d) as f32
    })
}

pub fn cone_scene() -> ConeScene {
    let dem = cone_dem(CONE_SIZE);
    let g = dem.georef;
    let (pr, pc) = CONE_PEAK;
    let dist = |r: usize, c: usize| ((r as f64 - pr as f64).powi(2) + (c as f64 - pc as f64).powi(2)).sqrt();

    let tongue_a = rect(g, 112..146, 176..240);
    let tongue_b = rect(g, 112..146, 16..80);
    let glacier_c = rect(g, 129..131, 150..170);
    let patch = rect(g, 131..138, 160..170);
    let gap = rect(g, 119..126, 160..172);
    let nunatak = Mask::from_fn(g, |r, c| matches!((r, c), (126, 150) | (126, 151) | (127, 150)));
    let bare_quadrant = |r: usize, c: usize| r > pr && c > pc;
    let disc = Mask::from_fn(g, |r, c| dist(r, c) <= CONE_SNOW_RADIUS && !bare_quadrant(r, c));
    let snow = disc.and_not(&gap).and_not(&nunatak).or(&patch);
    let ablation = tongue_a.or(&tongue_b).or(&glacier_c);

    let vegetated = |r: usize, c: usize| dist(r, c) > 110.0;
    let mut stack = MultiBandStack::new();
    for b in 1..=11u8 {
        let band = Grid::from_fn(g, DEFAULT_NODATA, |r, c| {
            let i = g.index(r, c);
            let t = 0.02 * texture(r, c, b as f64);
            let v = match b {
                3 if snow.is_set(i) => 0.8,
                3 => 0.2,
                6 if snow.is_set(i) => 0.1,
                6 => 0.3,
                4 if vegetated(r, c) => 0.05,
                5 if vegetated(r, c) => 0.4,
                4 | 5 => 0.2,
                _ => 0.1 + 0.05 * b as f32 + t,
            };
            if matches!(b, 3..=6) {
                v
            } else {
                v.max(0.0)
            }
        });
        stack.push(Band::Landsat(b), band).expect("aligned synthetic band");
    }
    stack.push(Band::Dem, dem.clone()).expect("aligned synthetic DEM");
    ConeScene {
        dem,
        ablation,
        tongue_a,
        tongue_b,
        glacier_c,
        patch,
        gap,
        nunatak,
        snow,
        stack,
    }
}

/// Paths written by [`write_cone_inputs`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub dem: PathBuf,
    pub d1: PathBuf,
    pub d2: PathBuf,
    pub bands: Vec<(Band, PathBuf)>,
    pub ablation_reference: PathBuf,
    pub glacier_reference: PathBuf,
}

/// Write the cone scene as pipeline inputs. D-1 extends tongue A two cells
/// further downslope and D-2 trims tongue B's terminus, so the terminus
/// stage has work to do.
pub fn write_cone_inputs(dir: &Path, format: GridFormat) -> Result<SceneFiles> {
    let scene = cone_scene();
    let g = scene.dem.georef;
    let ext = format.extension();
    let path = |name: &str| dir.join(format!("{name}.{ext}"));
    let d1 = scene.ablation.or(&rect(g, 112..146, 240..242));
    let d2 = scene.ablation.and_not(&rect(g, 112..146, 16..22));
    let glacier_reference = scene.ablation.or(&scene.snow.and(&Mask::from_fn(g, |_, c| c >= 150 || c <= 100)));

    let files = SceneFiles {
        dem: path("dem"),
        d1: path("d1"),
        d2: path("d2"),
        bands: scene
            .stack
            .iter()
            .filter(|(b, _)| matches!(b, Band::Landsat(_)))
            .map(|(b, _)| (b, path(&b.to_string())))
            .collect(),
        ablation_reference: path("ablation_reference"),
        glacier_reference: path("glacier_reference"),
    };
    grid::write_grid(&scene.dem, &files.dem, format)?;
    grid::write_mask(&d1, &files.d1, format)?;
    grid::write_mask(&d2, &files.d2, format)?;
    for (b, p) in &files.bands {
        grid::write_grid(scene.stack.require(*b)?, p, format)?;
    }
    grid::write_mask(&scene.ablation, &files.ablation_reference, format)?;
    grid::write_mask(&glacier_reference, &files.glacier_reference, format)?;
    Ok(files)
}
