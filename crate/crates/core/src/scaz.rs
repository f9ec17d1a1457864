//! Snow-covered accumulation zone (SCAZ) estimation.
//!
//! Snow regions attached to the ablation zones are merged with them, and
//! drainage basins decide which glacier each part of the snowfield feeds.
//! Three basin rasters drive the decision: G-1 (basins over flow restricted
//! to the merged region), G-3 (basins over unrestricted flow, clipped to the
//! merged region) and G-2 (restricted untargeted segments carrying a G-3
//! code). Snow that reaches an ablation zone only by leaving the merged
//! region is pruned.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{Grid, Labels, Mask, MultiBandStack};
use crate::hydro;
use crate::morphology::{self, Connectivity};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScazParams {
    pub snow_thresh: f32,
    pub close_radius: usize,
    pub min_isolated_area: usize,
}

impl Default for ScazParams {
    fn default() -> Self {
        ScazParams {
            snow_thresh: spectral::DEFAULT_SNOW_THRESHOLD,
            close_radius: morphology::DEFAULT_CLOSE_RADIUS,
            min_isolated_area: morphology::DEFAULT_MIN_AREA,
        }
    }
}

impl ScazParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.snow_thresh > -1.0 && self.snow_thresh < 1.0) {
            return Err(Error::param("snow_thresh", format!("must be in (-1, 1), got {}", self.snow_thresh)));
        }
        Ok(())
    }
}

fn max_elevation(cells: impl Iterator<Item = usize>, dem: &Grid) -> Option<f32> {
    cells.filter_map(|i| dem.value(i)).reduce(f32::max)
}

/// Raise the D-2 snowline to D-1's where D-1 reaches higher.
///
/// Glaciers are 8-connected D-1 regions; their D-2 counterpart is the union
/// of D-2 regions overlapping them. When D-1's highest valid elevation
/// exceeds D-2's, D-1 cells above D-2's maximum are added.
pub fn adjust_snowline(d2: &Mask, d1: &Mask, dem: &Grid) -> Result<Mask> {
    d2.georef.ensure_aligned(&d1.georef, "D-1 mask")?;
    d2.georef.ensure_aligned(&dem.georef, "DEM")?;
    let r1 = morphology::connected_components(d1, Connectivity::Eight);
    let r2 = morphology::connected_components(d2, Connectivity::Eight);
    let members2 = r2.members();
    let mut out = d2.clone();
    for (k, cells) in r1.members().into_iter().enumerate() {
        let partners: BTreeSet<u32> = cells
            .iter()
            .map(|&i| r2.labels.cells[i])
            .filter(|&l| l != 0)
            .collect();
        if partners.is_empty() {
            warn!("D-1 glacier {} has no D-2 counterpart; snowline left as is", k + 1);
            continue;
        }
        let top2 = max_elevation(partners.iter().flat_map(|&l| members2[l as usize - 1].iter().copied()), dem);
        let top1 = max_elevation(cells.iter().copied(), dem);
        if let (Some(top1), Some(top2)) = (top1, top2) {
            if top1 > top2 {
                for &i in &cells {
                    if dem.value(i).is_some_and(|z| z > top2) {
                        out.cells[i] = 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Ablation zones joined with their attached snow, gaps filled.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedRegion {
    pub merged: Mask,
    /// Cells added by gap filling, as 4-connected regions.
    pub gaps: Labels,
    /// Ablation zones as 8-connected regions coded 1..n.
    pub ablation_labels: Labels,
}

/// Snow (`snow_index < snow_thresh`) regions that overlap or are 8-adjacent
/// to the ablation mask, unioned with it, with interior gaps filled.
pub fn build_merged_region(ablation: &Mask, stack: &MultiBandStack, params: &ScazParams) -> Result<MergedRegion> {
    let index = spectral::snow_index(stack)?;
    ablation.georef.ensure_aligned(&index.georef, "snow index")?;
    Ok(merge_with_snow(ablation, &spectral::below(&index, params.snow_thresh)))
}

/// [`build_merged_region`] from a ready snow mask.
pub fn merge_with_snow(ablation: &Mask, snow: &Mask) -> MergedRegion {
    let g = ablation.georef;
    let patches = morphology::connected_components(snow, Connectivity::Eight);
    let attached: Vec<bool> = patches
        .members()
        .iter()
        .map(|cells| cells.iter().any(|&i| morphology::touches(&snow.georef, i, |j| ablation.is_set(j))))
        .collect();
    let mut union = ablation.clone();
    for (i, &l) in patches.labels.cells.iter().enumerate() {
        if l != 0 && attached[l as usize - 1] {
            union.cells[i] = 1;
        }
    }
    let gaps = morphology::holes(&union).labels;
    for (i, &l) in gaps.cells.iter().enumerate() {
        if l != 0 {
            union.cells[i] = 1;
        }
    }
    let ablation_labels = morphology::connected_components(ablation, Connectivity::Eight).labels;
    debug_assert_eq!(gaps.georef, g);
    MergedRegion {
        merged: union,
        gaps,
        ablation_labels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinPartition {
    pub g1: Labels,
    /// Segment ids, 1..n in row-major first-encounter order.
    pub g2: Labels,
    /// G-3 code of each segment, indexed by `id - 1`.
    pub g2_codes: Vec<u32>,
    pub g3: Labels,
    pub merged: Mask,
    pub ablation_codes: Vec<u32>,
}

impl BasinPartition {
    pub fn segment_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.g2_codes.len()];
        for (i, &s) in self.g2.cells.iter().enumerate() {
            if s != 0 {
                out[s as usize - 1].push(i);
            }
        }
        out
    }
}

/// Build G-1, G-2 and G-3. `dem` should already be smoothed; sinks are
/// filled here before routing.
///
/// G-2 segments are restricted-flow untargeted basins split by G-3 code, so
/// each segment carries exactly one code and G-2 covers G-3 exactly.
pub fn basin_partition(merged: &Mask, ablation_labels: &Labels, dem: &Grid) -> Result<BasinPartition> {
    let g = merged.georef;
    g.ensure_aligned(&ablation_labels.georef, "ablation labels")?;
    g.ensure_aligned(&dem.georef, "DEM")?;
    let flow = hydro::flow_direction_d8(&hydro::fill_sinks(dem));
    let restricted = flow.restrict(merged);
    let g1 = hydro::drainage_basins(&restricted, Some(ablation_labels))?;
    let mut g3 = hydro::drainage_basins(&flow, Some(ablation_labels))?;
    for (i, l) in g3.cells.iter_mut().enumerate() {
        if !merged.is_set(i) {
            *l = 0;
        }
    }
    let basins = hydro::drainage_basins(&restricted, None)?;
    let mut ids: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut g2_codes = Vec::new();
    let mut g2 = Labels::empty(g);
    for i in 0..g.len() {
        let code = g3.cells[i];
        if code == 0 {
            continue;
        }
        let id = *ids.entry((basins.cells[i], code)).or_insert_with(|| {
            g2_codes.push(code);
            g2_codes.len() as u32
        });
        g2.cells[i] = id;
    }
    Ok(BasinPartition {
        g1,
        g2,
        g2_codes,
        g3,
        merged: merged.clone(),
        ablation_codes: ablation_labels.codes(),
    })
}

/// G-3 cells that G-1 does not reach.
fn diff_cells(g3: &Labels, g1: &Labels) -> Vec<bool> {
    g3.cells
        .iter()
        .zip(&g1.cells)
        .map(|(&a, &b)| a != 0 && a != b)
        .collect()
}

fn g1_near(p: &BasinPartition, idx: usize, code: u32) -> bool {
    morphology::touches(&p.g1.georef, idx, |j| p.g1.cells[j] == code)
}

/// Steps 9 to 14: remove indirectly draining segments from G-3.
///
/// A segment's diff part is removed when the segment neither overlaps nor
/// neighbours same-code G-1. Of the remainder, a diff part is removed when
/// the mean elevation of its borderline with same-code G-1 is higher than
/// the mean elevation of its whole boundary.
pub fn prune_indirect(p: &BasinPartition, dem: &Grid) -> Result<Labels> {
    let g = p.g3.georef;
    g.ensure_aligned(&dem.georef, "DEM")?;
    let members = p.segment_members();
    let ids: Vec<usize> = (0..members.len()).collect();

    let diff = diff_cells(&p.g3, &p.g1);
    let detached = crate::par::map_slice(&ids, |&s| {
        let code = p.g2_codes[s];
        let cells = &members[s];
        cells.iter().any(|&i| diff[i]) && !cells.iter().any(|&i| g1_near(p, i, code))
    });
    let mut g3 = p.g3.clone();
    for s in ids.iter().filter(|&&s| detached[s]) {
        for &i in &members[*s] {
            if diff[i] {
                g3.cells[i] = 0;
            }
        }
    }

    let diff = diff_cells(&g3, &p.g1);
    let uphill = crate::par::map_slice(&ids, |&s| {
        let code = p.g2_codes[s];
        let part: Vec<usize> = members[s].iter().copied().filter(|&i| diff[i]).collect();
        if part.is_empty() {
            return false;
        }
        let inside: BTreeSet<usize> = part.iter().copied().collect();
        let (mut all, mut line) = ((0.0f64, 0usize), (0.0f64, 0usize));
        for &i in &part {
            let (r, c) = g.row_col(i);
            let on_boundary = Connectivity::Eight
                .offsets()
                .iter()
                .any(|&(dr, dc)| g.offset(r, c, dr, dc).is_none_or(|(nr, nc)| !inside.contains(&g.index(nr, nc))));
            if !on_boundary {
                continue;
            }
            let Some(z) = dem.value(i) else { continue };
            all = (all.0 + z as f64, all.1 + 1);
            if g1_near(p, i, code) {
                line = (line.0 + z as f64, line.1 + 1);
            }
        }
        line.1 > 0 && all.1 > 0 && line.0 / line.1 as f64 > all.0 / all.1 as f64
    });
    for s in ids.iter().filter(|&&s| uphill[s]) {
        for &i in &members[*s] {
            if diff[i] {
                g3.cells[i] = 0;
            }
        }
    }
    Ok(g3)
}

/// Intermediate and final products of [`estimate_scaz`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScazResult {
    pub adjusted: Mask,
    pub merged: MergedRegion,
    pub partition: BasinPartition,
    pub pruned: Labels,
    /// Glacier codes of the final extent.
    pub labels: Labels,
    /// Ablation zone plus SCAZ.
    pub glacier: Mask,
}

/// Full glacier extent from the refined D-2 ablation mask.
///
/// `dem` is the smoothed DEM. `stack` must carry the green and SWIR-1 bands.
pub fn estimate_scaz(
    ablation_d2: &Mask,
    ablation_d1: &Mask,
    dem: &Grid,
    stack: &MultiBandStack,
    params: &ScazParams,
) -> Result<ScazResult> {
    params.validate()?;
    let index = spectral::snow_index(stack)?;
    ablation_d2.georef.ensure_aligned(&index.georef, "snow index")?;
    let snow = spectral::below(&index, params.snow_thresh);
    estimate_scaz_with_snow(ablation_d2, ablation_d1, dem, &snow, params)
}

/// [`estimate_scaz`] from a ready snow mask.
pub fn estimate_scaz_with_snow(
    ablation_d2: &Mask,
    ablation_d1: &Mask,
    dem: &Grid,
    snow: &Mask,
    params: &ScazParams,
) -> Result<ScazResult> {
    let g = ablation_d2.georef;
    let adjusted = adjust_snowline(ablation_d2, ablation_d1, dem)?;
    let merged = merge_with_snow(&adjusted, snow);
    let partition = basin_partition(&merged.merged, &merged.ablation_labels, dem)?;
    let pruned = prune_indirect(&partition, dem)?;

    // Step 15: gaps survive only where closing the gap-free result absorbs them.
    let mut labels = pruned.clone();
    let gap_free = Mask::from_bools(
        g,
        &(0..g.len()).map(|i| pruned.cells[i] != 0 && merged.gaps.cells[i] == 0).collect::<Vec<_>>(),
    );
    let closed = morphology::close(&gap_free, params.close_radius);
    let mut gap_cells: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in merged.gaps.cells.iter().enumerate() {
        if l != 0 {
            gap_cells.entry(l).or_default().push(i);
        }
    }
    for cells in gap_cells.values() {
        if !cells.iter().all(|&i| closed.is_set(i)) {
            for &i in cells {
                labels.cells[i] = 0;
            }
        }
    }

    // Step 16: per code, keep only regions holding that glacier's ablation cells.
    let codes = labels.codes();
    let keep = crate::par::map_slice(&codes, |&code| {
        let own = labels.mask_of(code);
        let set = morphology::connected_components(&own, Connectivity::Eight);
        let mut anchored = vec![false; set.regions.len()];
        for (i, &l) in set.labels.cells.iter().enumerate() {
            if l != 0 && merged.ablation_labels.cells[i] == code {
                anchored[l as usize - 1] = true;
            }
        }
        set.labels
            .cells
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l != 0 && !anchored[l as usize - 1])
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    });
    for i in keep.into_iter().flatten() {
        labels.cells[i] = 0;
    }
    let mut glacier = labels.footprint();
    let leftovers = morphology::connected_components(&glacier, Connectivity::Eight);
    for cells in leftovers.members() {
        if cells.len() < params.min_isolated_area && !cells.iter().any(|&i| adjusted.is_set(i)) {
            for i in cells {
                glacier.cells[i] = 0;
                labels.cells[i] = 0;
            }
        }
    }
    for i in adjusted.indices().collect::<Vec<_>>() {
        glacier.cells[i] = 1;
        if labels.cells[i] == 0 {
            labels.cells[i] = merged.ablation_labels.cells[i];
        }
    }
    Ok(ScazResult {
        adjusted,
        merged,
        partition,
        pruned,
        labels,
        glacier,
    })
}
