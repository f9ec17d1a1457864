//! Binary mask machinery: connected components, size filtering, slope-aware
//! hole filling, closing and surrounding rings.
//!
//! Nodata mask cells are treated as background by every operation.

use std::collections::VecDeque;

use crate::grid::{Georef, Grid, Labels, Mask};

pub const DEFAULT_MIN_AREA: usize = 445;
pub const DEFAULT_HOLE_MAX_AREA: usize = 2000;
pub const DEFAULT_HOLE_MAX_SLOPE: f32 = 24.0;
pub const DEFAULT_CLOSE_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (0, 1),
            (1, 1),
            (1, 0),
            (1, -1),
            (0, -1),
            (-1, -1),
            (-1, 0),
            (-1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = crate::Error;

    fn try_from(v: u8) -> crate::Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(crate::Error::param("connectivity", format!("must be 4 or 8, got {v}"))),
        }
    }
}

/// Row/column bounds, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BBox {
    pub fn point(row: usize, col: usize) -> Self {
        BBox {
            row0: row,
            col0: col,
            row1: row + 1,
            col1: col + 1,
        }
    }

    pub fn include(&mut self, row: usize, col: usize) {
        self.row0 = self.row0.min(row);
        self.col0 = self.col0.min(col);
        self.row1 = self.row1.max(row + 1);
        self.col1 = self.col1.max(col + 1);
    }

    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    /// Grow by `pad` cells on every side, clipped to the grid.
    pub fn padded(&self, pad: usize, georef: &Georef) -> BBox {
        BBox {
            row0: self.row0.saturating_sub(pad),
            col0: self.col0.saturating_sub(pad),
            row1: (self.row1 + pad).min(georef.height),
            col1: (self.col1 + pad).min(georef.width),
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub label: u32,
    pub area: usize,
    pub bbox: BBox,
    /// Linear indices of cells with a 4-neighbour outside the region or off the grid.
    pub border: Vec<usize>,
}

/// Labelled components and their statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub labels: Labels,
    pub regions: Vec<Region>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region(&self, label: u32) -> &Region {
        &self.regions[label as usize - 1]
    }

    /// Cell indices per label (index 0 = label 1), in row-major order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.regions.len()];
        for (i, &l) in self.labels.cells.iter().enumerate() {
            if l != 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }
}

/// Label connected groups of cells for which `member(idx)` holds; labels are
/// 1..=n in row-major first-encounter order.
pub fn label_where(georef: Georef, connectivity: Connectivity, member: impl Fn(usize) -> bool) -> RegionSet {
    let g = georef;
    let mut labels = Labels::empty(g);
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..g.len() {
        if labels.cells[start] != 0 || !member(start) {
            continue;
        }
        let label = regions.len() as u32 + 1;
        let (r0, c0) = g.row_col(start);
        let mut region = Region {
            label,
            area: 0,
            bbox: BBox::point(r0, c0),
            border: Vec::new(),
        };
        labels.cells[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = g.row_col(i);
            region.area += 1;
            region.bbox.include(r, c);
            for &(dr, dc) in connectivity.offsets() {
                if let Some((nr, nc)) = g.offset(r, c, dr, dc) {
                    let j = g.index(nr, nc);
                    if labels.cells[j] == 0 && member(j) {
                        labels.cells[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        regions.push(region);
    }
    for i in 0..g.len() {
        let l = labels.cells[i];
        if l == 0 {
            continue;
        }
        let (r, c) = g.row_col(i);
        let on_border = Connectivity::Four.offsets().iter().any(|&(dr, dc)| {
            g.offset(r, c, dr, dc)
                .is_none_or(|(nr, nc)| labels.cells[g.index(nr, nc)] != l)
        });
        if on_border {
            regions[l as usize - 1].border.push(i);
        }
    }
    RegionSet { labels, regions }
}

/// Maximal connected positive regions.
pub fn connected_components(mask: &Mask, connectivity: Connectivity) -> RegionSet {
    label_where(mask.georef, connectivity, |i| mask.is_set(i))
}

/// Drop 8-connected positive regions with fewer than `min_area` cells.
pub fn remove_small_regions(mask: &Mask, min_area: usize) -> Mask {
    if min_area == 0 {
        return mask.clone();
    }
    let set = connected_components(mask, Connectivity::Eight);
    let mut out = mask.clone();
    for (i, &l) in set.labels.cells.iter().enumerate() {
        if l != 0 && set.region(l).area < min_area {
            out.cells[i] = 0;
        }
    }
    out
}

/// Interior background regions (4-connected zero cells not touching the grid
/// border). Nodata cells are not part of any hole.
pub fn holes(mask: &Mask) -> RegionSet {
    let g = mask.georef;
    let mut set = label_where(g, Connectivity::Four, |i| mask.cells[i] == 0);
    let touches_edge: Vec<bool> = set
        .regions
        .iter()
        .map(|r| r.bbox.row0 == 0 || r.bbox.col0 == 0 || r.bbox.row1 == g.height || r.bbox.col1 == g.width)
        .collect();
    // Renumber the interior ones.
    let mut remap = vec![0u32; set.regions.len() + 1];
    let mut kept = Vec::new();
    for (k, region) in set.regions.drain(..).enumerate() {
        if !touches_edge[k] {
            remap[k + 1] = kept.len() as u32 + 1;
            kept.push(Region {
                label: kept.len() as u32 + 1,
                ..region
            });
        }
    }
    for l in set.labels.cells.iter_mut() {
        *l = remap[*l as usize];
    }
    RegionSet {
        labels: set.labels,
        regions: kept,
    }
}

/// Fill interior holes with area ≤ `max_area` whose mean slope (over valid
/// slope cells) is ≤ `max_slope` degrees.
pub fn fill_holes(mask: &Mask, slope: &Grid, max_area: usize, max_slope: f32) -> Mask {
    let set = holes(mask);
    let mut sums = vec![(0.0f64, 0usize); set.regions.len()];
    for (i, &l) in set.labels.cells.iter().enumerate() {
        if l != 0 {
            if let Some(s) = slope.value(i) {
                let e = &mut sums[l as usize - 1];
                e.0 += s as f64;
                e.1 += 1;
            }
        }
    }
    let fill: Vec<bool> = set
        .regions
        .iter()
        .zip(&sums)
        .map(|(r, &(sum, n))| r.area <= max_area && n > 0 && sum / n as f64 <= max_slope as f64)
        .collect();
    let mut out = mask.clone();
    for (i, &l) in set.labels.cells.iter().enumerate() {
        if l != 0 && fill[l as usize - 1] {
            out.cells[i] = 1;
        }
    }
    out
}

/// Offsets of the discrete disk of the given radius: `dr² + dc² ≤ r² + r`.
/// Radius 1 is the full 3x3 neighbourhood.
pub fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let limit = r * r + r;
    let mut v = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= limit {
                v.push((dr, dc));
            }
        }
    }
    v
}

/// Binary dilation; off-grid cells count as background.
pub fn dilate(mask: &Mask, radius: usize) -> Vec<bool> {
    let g = mask.georef;
    let se = disk(radius);
    let mut out = vec![false; g.len()];
    crate::par::for_each_row(&mut out, g.width, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = se.iter().any(|&(dr, dc)| {
                g.offset(r, c, dr, dc)
                    .is_some_and(|(nr, nc)| mask.is_set(g.index(nr, nc)))
            });
        }
    });
    out
}

/// Binary erosion; off-grid cells are ignored (never erode the edge).
pub fn erode(bits: &[bool], georef: Georef, radius: usize) -> Vec<bool> {
    let g = georef;
    let se = disk(radius);
    let mut out = vec![false; g.len()];
    crate::par::for_each_row(&mut out, g.width, |r, row| {
        for (c, v) in row.iter_mut().enumerate() {
            *v = se.iter().all(|&(dr, dc)| {
                g.offset(r, c, dr, dc).is_none_or(|(nr, nc)| bits[g.index(nr, nc)])
            });
        }
    });
    out
}

/// Morphological closing by a disk. Nodata cells that end up positive become 1,
/// the rest keep their value.
pub fn close(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let closed = erode(&dilate(mask, radius), mask.georef, radius);
    let cells = mask
        .cells
        .iter()
        .zip(&closed)
        .map(|(&v, &on)| if on { 1 } else if v == Mask::NODATA { v } else { 0 })
        .collect();
    Mask {
        georef: mask.georef,
        cells,
    }
}

/// The band of width `width` surrounding the mask: dilation minus the mask.
pub fn ring(mask: &Mask, width: usize) -> Mask {
    let dilated = dilate(mask, width);
    let cells = dilated
        .iter()
        .enumerate()
        .map(|(i, &d)| (d && !mask.is_set(i)) as u8)
        .collect();
    Mask {
        georef: mask.georef,
        cells,
    }
}

/// True if `idx` or one of its 8 neighbours satisfies `other`.
pub fn touches(g: &Georef, idx: usize, other: impl Fn(usize) -> bool) -> bool {
    let (r, c) = g.row_col(idx);
    other(idx)
        || Connectivity::Eight
            .offsets()
            .iter()
            .any(|&(dr, dc)| g.offset(r, c, dr, dc).is_some_and(|(nr, nc)| other(g.index(nr, nc))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let cells = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| (b == b'#') as u8))
            .collect();
        Mask {
            georef: Georef::new(w, h, 15.0),
            cells,
        }
    }

    #[test]
    fn diagonal_connectivity() {
        let m = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
        assert!(connected_components(&mask_from(&["..", ".."]), Connectivity::Eight).is_empty());
    }

    #[test]
    fn labels_in_first_encounter_order() {
        let m = mask_from(&["..#", "#..", "..#"]);
        let set = connected_components(&m, Connectivity::Four);
        assert_eq!(set.labels.cells, vec![0, 0, 1, 2, 0, 0, 0, 0, 3]);
        assert_eq!(set.region(2).bbox, BBox::point(1, 0));
    }

    #[test]
    fn small_region_boundary() {
        let m = mask_from(&["###....", ".......", "#####.."]);
        let out = remove_small_regions(&m, 5);
        assert_eq!(out, mask_from(&[".......", ".......", "#####.."]));
        assert_eq!(remove_small_regions(&m, 0), m);
    }

    #[test]
    fn hole_filling_by_slope() {
        let m = mask_from(&[
            ".......",
            ".#####.",
            ".#...#.",
            ".##.##.",
            ".#####.",
            ".......",
        ]);
        let gentle = Grid::filled(m.georef, -9999.0, 10.0);
        let filled = fill_holes(&m, &gentle, 100, 24.0);
        assert_eq!(filled.count(), m.count() + 4);
        let steep = Grid::filled(m.georef, -9999.0, 40.0);
        assert_eq!(fill_holes(&m, &steep, 100, 24.0), m);
        assert_eq!(fill_holes(&m, &gentle, 3, 24.0), m);
        let solid = mask_from(&["##", "##"]);
        assert_eq!(fill_holes(&solid, &Grid::filled(solid.georef, -1.0, 0.0), 10, 24.0), solid);
    }

    #[test]
    fn closing_bridges_gap() {
        let m = mask_from(&[".....", "##.##", "##.##", "##.##", "....."]);
        let c = close(&m, 1);
        assert!(c.get(2, 2));
        assert!(c.contains(&m));
        assert_eq!(close(&c, 1), c);
        let empty = Mask::empty(Georef::new(5, 5, 1.0));
        assert_eq!(close(&empty, 2), empty);
    }

    #[test]
    fn disk_shapes() {
        assert_eq!(disk(0), vec![(0, 0)]);
        assert_eq!(disk(1).len(), 9);
        assert_eq!(disk(2).len(), 21);
    }

    #[test]
    fn ring_examples() {
        let m = mask_from(&["...", ".#.", "..."]);
        assert_eq!(ring(&m, 1), mask_from(&["###", "#.#", "###"]));
        let full = Mask::full(Georef::new(4, 4, 1.0));
        assert!(!ring(&full, 2).any());
        let empty = Mask::empty(Georef::new(4, 4, 1.0));
        assert!(!ring(&empty, 2).any());
    }
}
