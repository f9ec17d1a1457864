//! Terminus refinement.
//!
//! Termini are found on the single-network mask (D-1) as the largest cluster
//! of the lowest-elevation cells of each glacier. Where the two input masks
//! disagree inside a terminus box, contested cells are re-decided by a KNN
//! classifier trained on that terminus alone: cells both masks agree on are
//! positives, a ring around their union is negative. Vegetated cells are then
//! removed and the result is mosaicked back onto the fused-network mask (D-2).

use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{self, Georef, Grid, Mask, MultiBandStack};
use crate::morphology::{self, BBox, Connectivity};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;
pub const DEFAULT_LOW_ALT_FRACTION: f64 = 0.15;
pub const DEFAULT_BOX_PAD: usize = 10;
pub const DEFAULT_RING_WIDTH: usize = 5;
/// Side of the local window used for the built-in feature statistics.
pub const FEATURE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    pub ring_width: usize,
    pub iou_threshold: f64,
    pub low_alt_fraction: f64,
    pub box_pad: usize,
    /// Closing radius applied to KNN and vegetation-removal results.
    pub close_radius: usize,
    pub veg_thresh: f32,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: DEFAULT_K,
            ring_width: DEFAULT_RING_WIDTH,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            low_alt_fraction: DEFAULT_LOW_ALT_FRACTION,
            box_pad: DEFAULT_BOX_PAD,
            close_radius: morphology::DEFAULT_CLOSE_RADIUS,
            veg_thresh: crate::spectral::DEFAULT_VEGETATION_THRESHOLD,
        }
    }
}

impl KnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "must be >= 1"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::param("iou_threshold", format!("must be in (0, 1), got {}", self.iou_threshold)));
        }
        if !(self.low_alt_fraction > 0.0 && self.low_alt_fraction < 1.0) {
            return Err(Error::param(
                "low_alt_fraction",
                format!("must be in (0, 1), got {}", self.low_alt_fraction),
            ));
        }
        if self.ring_width == 0 {
            return Err(Error::param("ring_width", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-cell feature vectors, cell-major (`data[i * dims + f]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub georef: Georef,
    pub dims: usize,
    pub data: Vec<f32>,
}

impl FeatureStack {
    #[inline]
    pub fn vector(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dims..(idx + 1) * self.dims]
    }

    /// Stack channels side by side; nodata becomes 0.
    pub fn from_grids(grids: &[&Grid]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Config("feature stack needs at least one channel".into()))?;
        let georef = first.georef;
        for g in grids {
            georef.ensure_aligned(&g.georef, "feature channel")?;
        }
        let dims = grids.len();
        let mut data = vec![0.0f32; georef.len() * dims];
        for (f, g) in grids.iter().enumerate() {
            for i in 0..georef.len() {
                data[i * dims + f] = g.value(i).unwrap_or(0.0);
            }
        }
        Ok(FeatureStack { georef, dims, data })
    }

    /// Load `features_*` rasters from a directory, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("features_") && !n.ends_with(".json"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!("no features_* rasters in {}", dir.display())));
        }
        let grids = paths
            .iter()
            .map(|p| grid::read_grid(p, grid::GridFormat::from_path(p)?))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Grid> = grids.iter().collect();
        Self::from_grids(&refs)
    }
}

/// Source of per-cell features for the KNN classifier.
pub trait FeatureProvider {
    fn features(&self, stack: &MultiBandStack) -> Result<FeatureStack>;
}

/// Built-in provider: each normalized channel plus its local mean and
/// standard deviation over a [`FEATURE_WINDOW`] square.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalStatsFeatures;

impl FeatureProvider for LocalStatsFeatures {
    fn features(&self, stack: &MultiBandStack) -> Result<FeatureStack> {
        let normalized = grid::normalize_stack(stack)?;
        let channels: Vec<&Grid> = normalized.iter().map(|(_, g)| g).collect();
        let stats = crate::par::map_slice(&channels, |g| local_stats(g, FEATURE_WINDOW / 2));
        let mut grids: Vec<&Grid> = Vec::with_capacity(channels.len() * 3);
        for (g, (mean, sd)) in channels.iter().zip(&stats) {
            grids.extend([*g, mean, sd]);
        }
        FeatureStack::from_grids(&grids)
    }
}

/// Pre-computed features loaded from disk.
#[derive(Debug, Clone)]
pub struct FileFeatures(pub FeatureStack);

impl FeatureProvider for FileFeatures {
    fn features(&self, stack: &MultiBandStack) -> Result<FeatureStack> {
        if let Some(g) = stack.georef() {
            g.ensure_aligned(&self.0.georef, "feature rasters")?;
        }
        Ok(self.0.clone())
    }
}

/// Windowed mean and population standard deviation over valid cells.
fn local_stats(g: &Grid, radius: usize) -> (Grid, Grid) {
    let geo = g.georef;
    let mut mean = vec![0.0f32; geo.len()];
    let mut sd = vec![0.0f32; geo.len()];
    let compute = |r: usize, c: usize| -> (f32, f32) {
        let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0u32);
        for rr in r.saturating_sub(radius)..=(r + radius).min(geo.height - 1) {
            for cc in c.saturating_sub(radius)..=(c + radius).min(geo.width - 1) {
                if let Some(v) = g.value(geo.index(rr, cc)) {
                    s += v as f64;
                    s2 += v as f64 * v as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        let m = s / n as f64;
        (m as f32, (s2 / n as f64 - m * m).max(0.0).sqrt() as f32)
    };
    crate::par::for_each_row(&mut mean, geo.width, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = compute(r, c).0;
        }
    });
    crate::par::for_each_row(&mut sd, geo.width, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = compute(r, c).1;
        }
    });
    let wrap = |cells| Grid {
        georef: geo,
        nodata: g.nodata,
        cells,
    };
    (wrap(mean), wrap(sd))
}

/// Brute-force k-nearest-neighbour classifier over binary labels.
#[derive(Debug, Clone, Default)]
pub struct KnnClassifier {
    dims: usize,
    points: Vec<f32>,
    labels: Vec<bool>,
}

impl KnnClassifier {
    pub fn new(dims: usize) -> Self {
        KnnClassifier {
            dims,
            points: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn add(&mut self, point: &[f32], label: bool) {
        debug_assert_eq!(point.len(), self.dims);
        self.points.extend_from_slice(point);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Majority label among the `k` nearest samples (squared Euclidean
    /// distance, equal distances ordered by insertion). A tied vote, only
    /// possible for even `k`, goes to the nearest sample.
    pub fn classify(&self, query: &[f32], k: usize) -> bool {
        let n = self.labels.len();
        assert!(n > 0, "classifier has no samples");
        let k = k.min(n).max(1);
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let p = &self.points[j * self.dims..(j + 1) * self.dims];
                let d = p
                    .iter()
                    .zip(query)
                    .map(|(&a, &b)| {
                        let d = a as f64 - b as f64;
                        d * d
                    })
                    .sum::<f64>();
                (d, j)
            })
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < n {
            dist.select_nth_unstable_by(k - 1, by_key);
        }
        let nearest = &dist[..k];
        let votes = nearest.iter().filter(|(_, j)| self.labels[*j]).count();
        match (2 * votes).cmp(&k) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                let closest = nearest.iter().min_by(|a, b| by_key(a, b)).unwrap();
                self.labels[closest.1]
            }
        }
    }
}

/// One terminus: its box and the two clipped sub-masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminusCase {
    pub glacier_code: u32,
    pub bbox: BBox,
    pub e1: Mask,
    pub e2: Mask,
    pub iou: Option<f64>,
    pub disagreement: bool,
}

impl TerminusCase {
    pub fn clip(glacier_code: u32, bbox: BBox, d1: &Mask, d2: &Mask, iou_threshold: f64) -> Self {
        let crop = |m: &Mask| m.crop(bbox.row0, bbox.col0, bbox.height(), bbox.width());
        let e1 = crop(d1);
        let e2 = crop(d2);
        let iou = sub_iou(&e1, &e2);
        TerminusCase {
            glacier_code,
            bbox,
            disagreement: iou.is_some_and(|v| v < iou_threshold),
            iou,
            e1,
            e2,
        }
    }
}

/// `|e1 ∩ e2| / |e1 ∪ e2|`, `None` for an empty union.
pub fn sub_iou(e1: &Mask, e2: &Mask) -> Option<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in e1.cells.iter().zip(&e2.cells) {
        let (a, b) = (*a == 1, *b == 1);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    (union > 0).then(|| inter as f64 / union as f64)
}

/// True when the sub-masks' IOU is below the threshold. An empty union is
/// vacuous agreement.
pub fn disagreement(e1: &Mask, e2: &Mask, iou_threshold: f64) -> bool {
    sub_iou(e1, e2).is_some_and(|v| v < iou_threshold)
}

/// Box around the lowest-elevation cluster of each 8-connected glacier in
/// `d1`, padded and clipped. Returned as `(glacier_code, box)` in code order.
pub fn detect_terminus_boxes(d1: &Mask, dem: &Grid, params: &KnnParams) -> Result<Vec<(u32, BBox)>> {
    d1.georef.ensure_aligned(&dem.georef, "DEM")?;
    let g = d1.georef;
    let glaciers = morphology::connected_components(d1, Connectivity::Eight);
    let mut out = Vec::new();
    for (k, members) in glaciers.members().into_iter().enumerate() {
        let code = k as u32 + 1;
        let mut cells: Vec<(f32, usize)> = members
            .iter()
            .filter_map(|&i| dem.value(i).map(|z| (z, i)))
            .collect();
        if cells.is_empty() {
            warn!("glacier {code} has no valid elevations; terminus skipped");
            continue;
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let take = ((params.low_alt_fraction * cells.len() as f64).round() as usize).clamp(1, cells.len());
        let mut low = Mask::empty(g);
        for &(_, i) in &cells[..take] {
            low.cells[i] = 1;
        }
        let clusters = morphology::connected_components(&low, Connectivity::Eight);
        let largest = clusters
            .regions
            .iter()
            .max_by(|a, b| a.area.cmp(&b.area).then(b.label.cmp(&a.label)))
            .expect("at least one low cell");
        out.push((code, largest.bbox.padded(params.box_pad, &g)));
    }
    Ok(out)
}

/// Re-decide the contested cells of one terminus.
///
/// Returns a box-sized mask. With no pending cells the result is `e1`; with
/// no positive or no negative samples the case falls back to `e2`.
pub fn knn_refine(case: &TerminusCase, features: &FeatureStack, params: &KnnParams) -> Mask {
    let positives = case.e1.and(&case.e2);
    let union = case.e1.or(&case.e2);
    let pending = case.e1.xor(&case.e2);
    if !pending.any() {
        return case.e1.clone();
    }
    let negatives = morphology::ring(&union, params.ring_width);
    let sub = case.e1.georef;
    let b = case.bbox;
    let to_parent = |i: usize| {
        let (r, c) = sub.row_col(i);
        features.georef.index(b.row0 + r, b.col0 + c)
    };

    let mut knn = KnnClassifier::new(features.dims);
    for i in 0..sub.len() {
        if positives.is_set(i) {
            knn.add(features.vector(to_parent(i)), true);
        } else if negatives.is_set(i) {
            knn.add(features.vector(to_parent(i)), false);
        }
    }
    let pos = knn.positives();
    if pos == 0 || pos == knn.len() {
        warn!(
            "terminus {}: {} positive / {} negative samples, keeping fused mask",
            case.glacier_code,
            pos,
            knn.len() - pos
        );
        return case.e2.clone();
    }

    let pending_idx: Vec<usize> = pending.indices().collect();
    let decisions = crate::par::map_slice(&pending_idx, |&i| knn.classify(features.vector(to_parent(i)), params.k));
    let mut out = positives;
    for (&i, &on) in pending_idx.iter().zip(&decisions) {
        if on {
            out.cells[i] = 1;
        }
    }
    morphology::close(&out, params.close_radius)
}

/// Remove cells with NDVI above `veg_thresh`, then close the result once.
pub fn vegetation_zone_removal(mask: &Mask, ndvi: &Grid, veg_thresh: f32, close_radius: usize) -> Mask {
    let vegetated = crate::spectral::above(ndvi, veg_thresh);
    morphology::close(&mask.and_not(&vegetated), close_radius)
}

/// Size filtering followed by slope-aware hole filling.
pub fn postprocess(mask: &Mask, slope: &Grid, min_area: usize, hole_max_area: usize, hole_max_slope: f32) -> Mask {
    let filtered = morphology::remove_small_regions(mask, min_area);
    morphology::fill_holes(&filtered, slope, hole_max_area, hole_max_slope)
}

/// Both post-processed ablation masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationPair {
    pub d1: Mask,
    pub d2: Mask,
}

impl SegmentationPair {
    pub fn new(d1: Mask, d2: Mask) -> Result<Self> {
        d1.georef.ensure_aligned(&d2.georef, "D-2 mask")?;
        Ok(SegmentationPair { d1, d2 })
    }
}

/// Result of terminus refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedTermini {
    pub mask: Mask,
    pub cases: Vec<TerminusCase>,
}

/// Refine every terminus of `pair.d2`. Outside all terminus boxes the result
/// equals `pair.d2`. Cases are computed independently from the inputs and
/// written back in ascending glacier-code order.
pub fn refine_termini(
    pair: &SegmentationPair,
    dem: &Grid,
    features: &FeatureStack,
    ndvi: &Grid,
    params: &KnnParams,
) -> Result<RefinedTermini> {
    params.validate()?;
    let g = pair.d2.georef;
    g.ensure_aligned(&features.georef, "feature stack")?;
    g.ensure_aligned(&ndvi.georef, "NDVI grid")?;
    let boxes = detect_terminus_boxes(&pair.d1, dem, params)?;
    let cases: Vec<TerminusCase> = boxes
        .into_iter()
        .map(|(code, b)| TerminusCase::clip(code, b, &pair.d1, &pair.d2, params.iou_threshold))
        .collect();
    let patches = crate::par::map_slice(&cases, |case| {
        let refined = if case.disagreement {
            knn_refine(case, features, params)
        } else {
            case.e2.clone()
        };
        let b = case.bbox;
        let ndvi_box = ndvi.crop(b.row0, b.col0, b.height(), b.width());
        vegetation_zone_removal(&refined, &ndvi_box, params.veg_thresh, params.close_radius)
    });
    let mut mask = pair.d2.clone();
    for (case, patch) in cases.iter().zip(&patches) {
        mask.paste(case.bbox.row0, case.bbox.col0, patch);
    }
    Ok(RefinedTermini { mask, cases })
}
