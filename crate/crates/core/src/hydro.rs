//! Sink filling, D8 flow routing, flow accumulation and drainage basins.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::grid::{Georef, Grid, Labels, Mask};

/// D8 neighbour offsets `(drow, dcol)` in tie-break order E, SE, S, SW, W, NW, N, NE.
pub const D8_OFFSETS: [(isize, isize); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];

/// Distance to each neighbour in cell units.
pub const D8_DISTANCE: [f64; 8] = [
    1.0,
    std::f64::consts::SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
    1.0,
    std::f64::consts::SQRT_2,
];

/// Direction code for a cell with no downstream neighbour.
pub const SINK: u8 = 8;
/// Direction code for nodata cells.
pub const NO_FLOW: u8 = u8::MAX;

/// Per-cell downstream assignment: `0..8` index into [`D8_OFFSETS`], [`SINK`]
/// or [`NO_FLOW`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub georef: Georef,
    pub codes: Vec<u8>,
}

impl FlowField {
    pub fn from_codes(georef: Georef, codes: Vec<u8>) -> Result<Self> {
        if codes.len() != georef.len() {
            return Err(Error::Structural(format!(
                "flow field needs {} codes, got {}",
                georef.len(),
                codes.len()
            )));
        }
        Ok(FlowField { georef, codes })
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.codes[idx] != NO_FLOW
    }

    #[inline]
    pub fn is_sink(&self, idx: usize) -> bool {
        self.codes[idx] == SINK
    }

    /// Downstream cell index, `None` for sinks and nodata.
    #[inline]
    pub fn downstream(&self, idx: usize) -> Option<usize> {
        let code = self.codes[idx];
        if code >= 8 {
            return None;
        }
        let (r, c) = self.georef.row_col(idx);
        let (dr, dc) = D8_OFFSETS[code as usize];
        self.georef
            .offset(r, c, dr, dc)
            .map(|(nr, nc)| self.georef.index(nr, nc))
    }

    pub fn valid_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c != NO_FLOW).count()
    }

    /// Cut the field to `region`: outside cells become nodata and links that
    /// leave the region turn their source into a sink.
    pub fn restrict(&self, region: &Mask) -> FlowField {
        let codes = (0..self.codes.len())
            .map(|i| {
                if !region.is_set(i) || !self.is_valid(i) {
                    NO_FLOW
                } else {
                    match self.downstream(i) {
                        Some(d) if region.is_set(d) => self.codes[i],
                        Some(_) => SINK,
                        None => self.codes[i],
                    }
                }
            })
            .collect();
        FlowField {
            georef: self.georef,
            codes,
        }
    }

    /// Valid cells ordered so every cell precedes its downstream neighbour.
    /// Fails if the links contain a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.codes.len();
        let mut indegree = vec![0u8; n];
        for i in 0..n {
            if let Some(d) = self.downstream(i) {
                if !self.is_valid(d) {
                    return Err(Error::Inconsistent(format!(
                        "cell {i} drains into nodata cell {d}"
                    )));
                }
                indegree[d] += 1;
            }
        }
        let mut order: Vec<usize> = (0..n)
            .filter(|&i| self.is_valid(i) && indegree[i] == 0)
            .collect();
        let mut head = 0;
        while head < order.len() {
            let i = order[head];
            head += 1;
            if let Some(d) = self.downstream(i) {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    order.push(d);
                }
            }
        }
        let valid = self.valid_count();
        if order.len() != valid {
            return Err(Error::Inconsistent(format!(
                "flow field contains a cycle ({} of {valid} cells ordered)",
                order.len()
            )));
        }
        Ok(order)
    }
}

struct Key(f32);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Cells on the grid border or next to nodata: water can leave from there.
fn is_edge(dem: &Grid, row: usize, col: usize) -> bool {
    let g = &dem.georef;
    g.is_border(row, col)
        || D8_OFFSETS.iter().any(|&(dr, dc)| {
            g.offset(row, col, dr, dc)
                .is_some_and(|(r, c)| !dem.is_valid(g.index(r, c)))
        })
}

/// Priority-flood depression filling: the minimal raise giving every valid
/// cell a non-ascending path to the border or to nodata.
pub fn fill_sinks(dem: &Grid) -> Grid {
    let g = dem.georef;
    let n = g.len();
    let mut filled = dem.cells.clone();
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for i in 0..n {
        let (r, c) = g.row_col(i);
        if dem.is_valid(i) && is_edge(dem, r, c) {
            done[i] = true;
            heap.push(Reverse((Key(filled[i]), i)));
        }
    }
    while let Some(Reverse((Key(z), i))) = heap.pop() {
        let (r, c) = g.row_col(i);
        for &(dr, dc) in &D8_OFFSETS {
            let Some((nr, nc)) = g.offset(r, c, dr, dc) else {
                continue;
            };
            let j = g.index(nr, nc);
            if done[j] || !dem.is_valid(j) {
                continue;
            }
            done[j] = true;
            if filled[j] < z {
                filled[j] = z;
            }
            heap.push(Reverse((Key(filled[j]), j)));
        }
    }
    Grid {
        georef: g,
        nodata: dem.nodata,
        cells: filled,
    }
}

/// Steepest-descent neighbour (drop / distance), first in D8 order on ties.
fn steepest(dem: &Grid, row: usize, col: usize) -> Option<u8> {
    let g = &dem.georef;
    let z = dem.cells[g.index(row, col)] as f64;
    let mut best = 0.0f64;
    let mut code = None;
    for (k, &(dr, dc)) in D8_OFFSETS.iter().enumerate() {
        let Some((nr, nc)) = g.offset(row, col, dr, dc) else {
            continue;
        };
        let Some(zn) = dem.value(g.index(nr, nc)) else {
            continue;
        };
        let gradient = (z - zn as f64) / D8_DISTANCE[k];
        if gradient > best {
            best = gradient;
            code = Some(k as u8);
        }
    }
    code
}

/// D8 flow directions on a sink-filled DEM.
///
/// Cells without a lower neighbour are sinks when they sit on the border or
/// next to nodata. Interior flat cells drain toward the nearest (in D8 steps
/// across equal elevation) cell that has a lower neighbour or is an edge
/// outlet, choosing the first neighbour in D8 order one step closer.
/// Flat cells with no such route stay sinks.
pub fn flow_direction_d8(dem: &Grid) -> FlowField {
    let g = dem.georef;
    let n = g.len();
    let mut codes = vec![NO_FLOW; n];
    crate::par::for_each_row(&mut codes, g.width, |r, row| {
        for (c, code) in row.iter_mut().enumerate() {
            if dem.is_valid(g.index(r, c)) {
                *code = steepest(dem, r, c).unwrap_or(SINK);
            }
        }
    });

    // Flat resolution: breadth-first distance from drain cells.
    let is_flat = |i: usize, codes: &[u8]| {
        let (r, c) = g.row_col(i);
        codes[i] == SINK && !is_edge(dem, r, c)
    };
    if !(0..n).any(|i| is_flat(i, &codes)) {
        return FlowField { georef: g, codes };
    }
    const UNREACHED: u32 = u32::MAX;
    let mut dist = vec![UNREACHED; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if codes[i] != NO_FLOW && !is_flat(i, &codes) {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = g.row_col(i);
        for &(dr, dc) in &D8_OFFSETS {
            let Some((nr, nc)) = g.offset(r, c, dr, dc) else {
                continue;
            };
            let j = g.index(nr, nc);
            if dist[j] == UNREACHED && is_flat(j, &codes) && dem.cells[j] == dem.cells[i] {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut resolved = codes.clone();
    for i in 0..n {
        if !is_flat(i, &codes) || dist[i] == UNREACHED {
            continue;
        }
        let (r, c) = g.row_col(i);
        for (k, &(dr, dc)) in D8_OFFSETS.iter().enumerate() {
            let Some((nr, nc)) = g.offset(r, c, dr, dc) else {
                continue;
            };
            let j = g.index(nr, nc);
            if dist[j] + 1 == dist[i] && dem.cells[j] == dem.cells[i] {
                resolved[i] = k as u8;
                break;
            }
        }
    }
    FlowField {
        georef: g,
        codes: resolved,
    }
}

/// Number of cells (self included) whose downstream path passes through each cell.
pub fn flow_accumulation(flow: &FlowField) -> Result<Grid> {
    let order = flow.topological_order()?;
    let mut acc = vec![0u32; flow.codes.len()];
    for &i in &order {
        acc[i] += 1;
        if let Some(d) = flow.downstream(i) {
            acc[d] += acc[i];
        }
    }
    let nodata = crate::grid::DEFAULT_NODATA;
    let cells = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| if flow.is_valid(i) { a as f32 } else { nodata })
        .collect();
    Ok(Grid {
        georef: flow.georef,
        nodata,
        cells,
    })
}

/// Drainage basins.
///
/// Without targets every valid cell is labelled `sink index + 1` of the sink
/// its path reaches. With targets a cell takes the code of the first target
/// cell on its path (itself included), or 0 if it reaches a sink first.
pub fn drainage_basins(flow: &FlowField, targets: Option<&Labels>) -> Result<Labels> {
    if let Some(t) = targets {
        flow.georef.ensure_aligned(&t.georef, "target labels")?;
    }
    let order = flow.topological_order()?;
    let mut labels = Labels::empty(flow.georef);
    for &i in order.iter().rev() {
        let own = targets.map_or(0, |t| t.cells[i]);
        labels.cells[i] = if own != 0 {
            own
        } else {
            match flow.downstream(i) {
                Some(d) => labels.cells[d],
                None if targets.is_none() => i as u32 + 1,
                None => 0,
            }
        };
    }
    Ok(labels)
}

/// Follow downstream links from `start` to its sink; `None` on a cycle.
pub fn trace_to_sink(flow: &FlowField, start: usize) -> Option<Vec<usize>> {
    let mut path = vec![start];
    let mut cur = start;
    for _ in 0..flow.codes.len() {
        match flow.downstream(cur) {
            Some(d) => {
                path.push(d);
                cur = d;
            }
            None => return Some(path),
        }
    }
    None
}
