//! Property tests for the module invariants.

#![allow(clippy::needless_range_loop)]

use glacier_mapper::eval::{self, EvalParams};
use glacier_mapper::grid::{self, Band, Georef, Grid, GridFormat, Labels, Mask, MultiBandStack};
use glacier_mapper::hydro;
use glacier_mapper::morphology::{self, BBox, Connectivity};
use glacier_mapper::scaz;
use glacier_mapper::spectral;
use glacier_mapper::terminus::{self, FeatureStack, KnnParams, SegmentationPair, TerminusCase};
use glacier_mapper::terrain;
use proptest::prelude::*;

const ND: f32 = -9999.0;

fn georef(w: usize, h: usize) -> Georef {
    Georef::new(w, h, 15.0)
}

prop_compose! {
    fn mask_strategy(max: usize)(w in 1..=max, h in 1..=max)
        (cells in prop::collection::vec(prop_oneof![6 => Just(0u8), 4 => Just(1u8), 1 => Just(Mask::NODATA)], w * h), w in Just(w), h in Just(h))
        -> Mask {
        Mask { georef: georef(w, h), cells }
    }
}

prop_compose! {
    fn binary_mask(w: usize, h: usize, density: f64)(bits in prop::collection::vec(prop::bool::weighted(density), w * h)) -> Mask {
        Mask::from_bools(georef(w, h), &bits)
    }
}

prop_compose! {
    fn grid_strategy(max: usize)(w in 1..=max, h in 1..=max)
        (cells in prop::collection::vec(prop_oneof![8 => -5000.0f32..9000.0, 1 => Just(ND)], w * h), w in Just(w), h in Just(h))
        -> Grid {
        Grid::new(georef(w, h), ND, cells).unwrap()
    }
}

prop_compose! {
    fn dem_strategy(w: usize, h: usize)(cells in prop::collection::vec(prop_oneof![20 => 0.0f32..50.0, 1 => Just(ND)], w * h)) -> Grid {
        Grid::new(georef(w, h), ND, cells).unwrap()
    }
}

fn rotate_cw(g: &Grid) -> Grid {
    let (w, h) = (g.georef.width, g.georef.height);
    Grid::from_fn(Georef::new(h, w, g.georef.cellsize), g.nodata, |r, c| g.get(h - 1 - c, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // grid ---------------------------------------------------------------

    #[test]
    fn io_roundtrip(grid in grid_strategy(24), ascii in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let format = if ascii { GridFormat::EsriAscii } else { GridFormat::RawF32 };
        let path = dir.path().join(format!("g.{}", format.extension()));
        grid::write_grid(&grid, &path, format).unwrap();
        prop_assert_eq!(grid::read_grid(&path, format).unwrap(), grid);
    }

    #[test]
    fn resample_half_then_double(grid in grid_strategy(20)) {
        let fine = grid::resample_nearest(&grid, 7.5).unwrap();
        prop_assert_eq!(fine.georef.width, grid.georef.width * 2);
        prop_assert_eq!(grid::resample_nearest(&fine, 15.0).unwrap(), grid);
    }

    #[test]
    fn tiling_identity(mask in mask_strategy(40), window_frac in 0.1f64..=1.0, stride in 1usize..12) {
        let g = mask.georef;
        let window = ((g.width.min(g.height) as f64 * window_frac).ceil() as usize).max(1);
        // Full coverage needs every cell inside some window.
        let stride = stride.min(window);
        let merged = grid::tile_and_merge(&g, window, stride, |t| t.crop_mask(&mask)).unwrap();
        prop_assert_eq!(merged, mask);
    }

    #[test]
    fn normalization_bounds_and_order(grid in grid_strategy(16)) {
        let stack = MultiBandStack::new().with(Band::Landsat(1), grid.clone()).unwrap();
        let norm = grid::normalize_stack(&stack).unwrap();
        let out = norm.require(Band::Landsat(1)).unwrap();
        for i in 0..grid.cells.len() {
            prop_assert_eq!(grid.is_valid(i), out.is_valid(i));
            if let Some(v) = out.value(i) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for j in 0..grid.cells.len() {
                if let (Some(a), Some(b), Some(x), Some(y)) = (grid.value(i), grid.value(j), out.value(i), out.value(j)) {
                    if a < b {
                        prop_assert!(x <= y);
                    }
                }
            }
        }
    }

    // terrain ------------------------------------------------------------

    #[test]
    fn terrain_rotates_with_dem(dem in dem_strategy(11, 9)) {
        let a = terrain::terrain_params(&rotate_cw(&dem));
        let b = terrain::terrain_params(&dem);
        for ((_, x), (_, y)) in a.named().iter().zip(b.named()) {
            let y = rotate_cw(y);
            for (p, q) in x.cells.iter().zip(&y.cells) {
                prop_assert!((p == q) || (p - q).abs() <= 1e-5, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn terrain_ranges(dem in dem_strategy(10, 10)) {
        let t = terrain::terrain_params(&dem);
        for i in 0..dem.cells.len() {
            if let Some(s) = t.slope.value(i) {
                prop_assert!((0.0..=90.0).contains(&s));
            }
            if let Some(u) = t.unsphericity.value(i) {
                prop_assert!(u >= 0.0);
            }
            if let Some(v) = t.sad_index.value(i) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn slope_matches_central_differences(a in -3i32..=3, b in -3i32..=3, c in -3i32..=3, d in -20i32..=20, e in -20i32..=20) {
        // Quadratic surface, where the 3x3 fit is exact.
        let g = Georef::new(9, 9, 10.0);
        let z = |r: usize, col: usize| {
            let (x, y) = (col as f64 * 10.0, -(r as f64) * 10.0);
            1000.0 + (a as f64 * x * x + b as f64 * x * y + c as f64 * y * y) / 100.0 + d as f64 * x / 10.0 + e as f64 * y / 10.0
        };
        let dem = Grid::from_fn(g, ND, |r, col| z(r, col) as f32);
        for r in 1..8 {
            for col in 1..8 {
                let zz = |rr: usize, cc: usize| dem.get(rr, cc) as f64;
                let dzdx = (zz(r, col + 1) - zz(r, col - 1)) / 20.0;
                let dzdy = (zz(r - 1, col) - zz(r + 1, col)) / 20.0;
                let want = dzdx.hypot(dzdy).atan().to_degrees();
                let got = terrain::derivatives_at(&dem, r, col).unwrap().slope_deg();
                prop_assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn elevation_scaling(s in 0.25f64..4.0, k in 1i32..5) {
        let g = Georef::new(9, 9, 10.0);
        let bowl = |scale: f64| Grid::from_fn(g, ND, |r, c| {
            let (dr, dc) = (r as f64 - 4.0, c as f64 - 4.0);
            (scale * (k as f64 * (dr * dr + 2.0 * dc * dc) + 3.0 * dc)) as f32
        });
        let (base, scaled) = (bowl(1.0), bowl(s));
        for r in 1..8 {
            for c in 1..8 {
                let d0 = terrain::derivatives_at(&base, r, c).unwrap();
                let d1 = terrain::derivatives_at(&scaled, r, c).unwrap();
                let want = (s * d0.slope_deg().to_radians().tan()).atan().to_degrees();
                prop_assert!((d1.slope_deg() - want).abs() < 1e-3);
            }
        }
        // Curvatures scale linearly where the gradient vanishes.
        let flat = |scale: f64| Grid::from_fn(g, ND, |r, c| {
            let (dr, dc) = (r as f64 - 4.0, c as f64 - 4.0);
            (scale * k as f64 * (dr * dr + 2.0 * dc * dc)) as f32
        });
        let (c0, c1) = (terrain::derivatives_at(&flat(1.0), 4, 4).unwrap(), terrain::derivatives_at(&flat(s), 4, 4).unwrap());
        prop_assert!((c1.unsphericity() - s * c0.unsphericity()).abs() < 1e-4 * (1.0 + c0.unsphericity()));
    }

    // hydro --------------------------------------------------------------

    #[test]
    fn flow_is_acyclic_and_conservative(dem in dem_strategy(16, 16)) {
        let filled = hydro::fill_sinks(&dem);
        for i in 0..dem.cells.len() {
            match (dem.value(i), filled.value(i)) {
                (Some(a), Some(b)) => prop_assert!(b >= a),
                (None, None) => {}
                _ => prop_assert!(false, "validity changed"),
            }
        }
        let flow = hydro::flow_direction_d8(&filled);
        let n = dem.cells.len();
        for i in 0..n {
            if flow.is_valid(i) {
                let path = hydro::trace_to_sink(&flow, i).expect("no cycles");
                prop_assert!(path.len() <= n);
            }
        }
        let acc = hydro::flow_accumulation(&flow).unwrap();
        let at_sinks: f64 = (0..n).filter(|&i| flow.is_sink(i)).map(|i| acc.cells[i] as f64).sum();
        prop_assert_eq!(at_sinks as usize, flow.valid_count());
        let basins = hydro::drainage_basins(&flow, None).unwrap();
        for i in 0..n {
            prop_assert_eq!(basins.cells[i] != 0, flow.is_valid(i));
        }
    }

    // spectral -----------------------------------------------------------

    #[test]
    fn band_swap_negates(a in grid_strategy(12), seed in any::<u64>()) {
        let b = Grid::from_fn(a.georef, ND, |r, c| ((seed.wrapping_mul(r as u64 * 31 + c as u64 + 7) % 1000) as f32) / 100.0);
        let x = spectral::normalized_difference(&a, &b);
        let y = spectral::normalized_difference(&b, &a);
        for i in 0..a.cells.len() {
            match (x.value(i), y.value(i)) {
                (Some(p), Some(q)) => {
                    prop_assert_eq!(p, -q);
                    prop_assert!((-1.0..=1.0).contains(&p));
                }
                (None, None) => {}
                _ => prop_assert!(false, "definedness differs"),
            }
        }
    }

    #[test]
    fn index_monotone_in_numerator(x in 0.01f32..1.0, dx in 0.0f32..1.0, y in 0.01f32..1.0) {
        let g = georef(1, 1);
        let nd = |a: f32| spectral::normalized_difference(&Grid::filled(g, ND, a), &Grid::filled(g, ND, y)).cells[0];
        prop_assert!(nd(x + dx) >= nd(x));
    }

    // morphology ---------------------------------------------------------

    #[test]
    fn closing_properties(mask in mask_strategy(24), r in 1usize..=3) {
        let c = morphology::close(&mask, r);
        prop_assert!(c.contains(&mask));
        prop_assert_eq!(morphology::close(&c, r), c.clone());
        prop_assert!(morphology::close(&mask, r + 1).contains(&c));
    }

    #[test]
    fn filters_move_one_way(mask in mask_strategy(24), min_area in 0usize..8, max_area in 0usize..20) {
        let slope = Grid::filled(mask.georef, ND, 5.0);
        prop_assert!(morphology::fill_holes(&mask, &slope, max_area, 24.0).contains(&mask));
        prop_assert!(mask.contains(&morphology::remove_small_regions(&mask, min_area)));
    }

    #[test]
    fn components_translate(mask in mask_strategy(16), dr in 0usize..4, dc in 0usize..4) {
        let g = mask.georef;
        let big = Georef::new(g.width + dc, g.height + dr, 15.0);
        let shifted = Mask::from_fn(big, |r, c| r >= dr && c >= dc && mask.get(r - dr, c - dc));
        let a = morphology::connected_components(&mask, Connectivity::Eight);
        let b = morphology::connected_components(&shifted, Connectivity::Eight);
        prop_assert_eq!(a.len(), b.len());
        let mut sa: Vec<usize> = a.regions.iter().map(|r| r.area).collect();
        let mut sb: Vec<usize> = b.regions.iter().map(|r| r.area).collect();
        sa.sort();
        sb.sort();
        prop_assert_eq!(sa, sb);
    }

    // terminus -----------------------------------------------------------

    #[test]
    fn knn_refine_bounds(e1 in binary_mask(14, 12, 0.5), e2 in binary_mask(14, 12, 0.5), k in 1usize..8, feats in prop::collection::vec(0.0f32..1.0, 14 * 12 * 2)) {
        let g = e1.georef;
        let features = FeatureStack { georef: g, dims: 2, data: feats };
        let case = TerminusCase::clip(1, BBox { row0: 0, col0: 0, row1: 12, col1: 14 }, &e1, &e2, 0.7);
        let params = KnnParams { k, ..KnnParams::default() };
        let out = terminus::knn_refine(&case, &features, &params);
        prop_assert!(out.contains(&e1.and(&e2)));
        let reach = Mask::from_bools(g, &morphology::dilate(&e1.or(&e2), params.close_radius));
        prop_assert!(reach.contains(&out));
        prop_assert_eq!(terminus::knn_refine(&case, &features, &params), out);
    }

    #[test]
    fn refinement_only_touches_boxes(d1 in binary_mask(30, 20, 0.6), trim in binary_mask(30, 20, 0.2), seed in any::<u32>()) {
        let g = d1.georef;
        let d2 = d1.and_not(&trim);
        let dem = Grid::from_fn(g, ND, |r, c| (r * 7 + c * 3) as f32);
        let features = FeatureStack { georef: g, dims: 1, data: (0..g.len()).map(|i| ((i as u32 ^ seed) % 17) as f32).collect() };
        let ndvi = Grid::from_fn(g, ND, |r, c| if (r + c) % 9 == 0 { 0.5 } else { 0.0 });
        let params = KnnParams { box_pad: 2, ..KnnParams::default() };
        let pair = SegmentationPair::new(d1, d2).unwrap();
        let out = terminus::refine_termini(&pair, &dem, &features, &ndvi, &params).unwrap();
        let mut in_box = vec![false; g.len()];
        for case in &out.cases {
            for r in case.bbox.row0..case.bbox.row1 {
                for c in case.bbox.col0..case.bbox.col1 {
                    in_box[g.index(r, c)] = true;
                }
            }
        }
        for i in 0..g.len() {
            if !in_box[i] {
                prop_assert_eq!(out.mask.cells[i], pair.d2.cells[i]);
            }
        }
        prop_assert_eq!(terminus::refine_termini(&pair, &dem, &features, &ndvi, &params).unwrap(), out);
    }

    // scaz ---------------------------------------------------------------

    #[test]
    fn scaz_invariants(ablation in binary_mask(20, 20, 0.15), snow in binary_mask(20, 20, 0.5), dem in dem_strategy(20, 20)) {
        let snow = snow.and_not(&ablation);
        let params = scaz::ScazParams { min_isolated_area: 3, ..scaz::ScazParams::default() };
        let out = scaz::estimate_scaz_with_snow(&ablation, &ablation, &dem, &snow, &params).unwrap();
        prop_assert!(out.glacier.contains(&ablation));
        let p = &out.partition;
        let area = |l: &Labels| l.cells.iter().filter(|&&v| v != 0).count();
        prop_assert_eq!(area(&p.g2), area(&p.g3));
        prop_assert!(out.merged.merged.contains(&p.g1.footprint()));
        prop_assert!(out.merged.merged.contains(&p.g3.footprint()));
        for i in 0..p.g1.cells.len() {
            if p.g1.cells[i] != 0 {
                prop_assert_eq!(out.pruned.cells[i], p.g1.cells[i]);
            }
        }
        let reach = Mask::from_bools(out.glacier.georef, &morphology::dilate(&out.merged.merged, params.close_radius));
        prop_assert!(reach.contains(&out.glacier));
    }

    // eval ---------------------------------------------------------------

    #[test]
    fn self_evaluation_is_perfect(mask in binary_mask(20, 16, 0.3), margin in 0usize..6) {
        prop_assume!(mask.any());
        let m = eval::metrics(&eval::confusion(&mask, &mask, margin, None).unwrap());
        for v in [m.iou, m.rc, m.pc, m.fm, m.acc] {
            prop_assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn swap_and_margin(a in binary_mask(20, 16, 0.2), b in binary_mask(20, 16, 0.2), margin in 1usize..6) {
        prop_assume!(a.any() || b.any());
        let ab = eval::confusion(&a, &b, margin, None).unwrap();
        let ba = eval::confusion(&b, &a, margin, None).unwrap();
        let (mab, mba) = (eval::metrics(&ab), eval::metrics(&ba));
        prop_assert_eq!(mab.iou, mba.iou);
        prop_assert_eq!(mab.rc, mba.pc);
        prop_assert_eq!(mab.pc, mba.rc);
        prop_assert_eq!(mab.fm.map(|v| (v * 1e12).round()), mba.fm.map(|v| (v * 1e12).round()));
        let tight = eval::confusion(&a, &b, margin - 1, None).unwrap();
        prop_assert!(tight.tn <= ab.tn);
        prop_assert_eq!((tight.tp, tight.fp, tight.fn_), (ab.tp, ab.fp, ab.fn_));
    }

    #[test]
    fn report_text_roundtrip(pred in binary_mask(24, 12, 0.3), reference in binary_mask(24, 12, 0.3)) {
        let labels = eval::reference_labels(&reference.to_grid(ND));
        prop_assume!(labels.max_label() > 0);
        let report = eval::evaluate(&pred, &labels, &EvalParams::default(), None).unwrap();
        prop_assert_eq!(eval::MetricsReport::from_text(&report.to_text()).unwrap(), report);
    }
}
