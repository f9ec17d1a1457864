//! Confusion counting inside margin-padded bounding boxes and the six
//! accuracy indices (IOU, recall, precision, specificity, F-measure,
//! accuracy).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Grid, Labels, Mask};
use crate::morphology::{self, BBox, Connectivity};

pub const DEFAULT_MARGIN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub bounds: Option<BBox>,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Sum of counts; the bounds of a sum are not meaningful.
    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            bounds: None,
        }
    }
}

/// Cells above `ceiling` in `dem` are left out of every count.
#[derive(Debug, Clone, Copy)]
pub struct ElevationCeiling<'a> {
    pub dem: &'a Grid,
    pub ceiling: f32,
}

/// Bounding box of `pred ∪ reference` padded by `margin`, then counts over
/// cells valid in both masks (and at or below the ceiling when given).
pub fn confusion(
    pred: &Mask,
    reference: &Mask,
    margin: usize,
    sus: Option<ElevationCeiling<'_>>,
) -> Result<ConfusionCounts> {
    let g = pred.georef;
    g.ensure_aligned(&reference.georef, "reference mask")?;
    if let Some(s) = &sus {
        g.ensure_aligned(&s.dem.georef, "DEM")?;
    }
    let mut bounds: Option<BBox> = None;
    for i in 0..g.len() {
        if pred.is_set(i) || reference.is_set(i) {
            let (r, c) = g.row_col(i);
            match &mut bounds {
                Some(b) => b.include(r, c),
                None => bounds = Some(BBox::point(r, c)),
            }
        }
    }
    let bounds = bounds
        .ok_or_else(|| Error::EmptyEvaluation("prediction and reference are both empty".into()))?
        .padded(margin, &g);
    let mut counts = ConfusionCounts {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        bounds: Some(bounds),
    };
    for r in bounds.row0..bounds.row1 {
        for c in bounds.col0..bounds.col1 {
            let i = g.index(r, c);
            if pred.is_nodata(i) || reference.is_nodata(i) {
                continue;
            }
            if let Some(s) = &sus {
                match s.dem.value(i) {
                    Some(z) if z <= s.ceiling => {}
                    _ => continue,
                }
            }
            match (pred.is_set(i), reference.is_set(i)) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    if counts.total() == 0 {
        return Err(Error::EmptyEvaluation("no valid cells inside the evaluation bounds".into()));
    }
    Ok(counts)
}

/// The six indices; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub iou: Option<f64>,
    pub rc: Option<f64>,
    pub pc: Option<f64>,
    pub sp: Option<f64>,
    pub fm: Option<f64>,
    pub acc: Option<f64>,
}

pub const METRIC_KEYS: [&str; 6] = ["iou", "rc", "pc", "sp", "fm", "acc"];

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.iou, self.rc, self.pc, self.sp, self.fm, self.acc]
    }

    fn from_values(v: [Option<f64>; 6]) -> Self {
        Metrics {
            iou: v[0],
            rc: v[1],
            pc: v[2],
            sp: v[3],
            fm: v[4],
            acc: v[5],
        }
    }
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let rc = ratio(c.tp, c.tp + c.fn_);
    let pc = ratio(c.tp, c.tp + c.fp);
    let fm = match (pc, rc) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        rc,
        pc,
        sp: ratio(c.tn, c.tn + c.fp),
        fm,
        acc: ratio(c.tp + c.tn, c.total()),
    }
}

/// Glacier codes from a reference raster. A raster whose largest value is 1
/// is treated as a binary mask and split into 8-connected glaciers;
/// otherwise positive values are glacier codes.
pub fn reference_labels(grid: &Grid) -> Labels {
    let max = grid.min_max().map_or(0.0, |(_, hi)| hi);
    if max <= 1.0 {
        morphology::connected_components(&Mask::from_grid(grid), Connectivity::Eight).labels
    } else {
        Labels::from_grid(grid)
    }
}

/// Elevation ceiling for one glacier: the lower of the two masks' highest
/// valid elevations, minus `buffer`.
pub fn sus_ceiling(pred: &Mask, reference: &Mask, dem: &Grid, buffer: f32) -> Option<f32> {
    let top = |m: &Mask| m.indices().filter_map(|i| dem.value(i)).reduce(f32::max);
    match (top(pred), top(reference)) {
        (Some(a), Some(b)) => Some(a.min(b) - buffer),
        (a, b) => a.or(b).map(|z| z - buffer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub margin: usize,
    /// Elevation buffer below the snowline; `None` evaluates the whole glacier.
    pub sus_buffer: Option<f32>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            margin: DEFAULT_MARGIN,
            sus_buffer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub glaciers: Vec<(u32, Metrics)>,
    pub aggregate: Metrics,
}

/// Per-glacier evaluation. For each reference glacier the prediction is the
/// set of 8-connected predicted regions touching it. The aggregate sums the
/// per-glacier counts.
pub fn evaluate(pred: &Mask, reference: &Labels, params: &EvalParams, dem: Option<&Grid>) -> Result<MetricsReport> {
    pred.georef.ensure_aligned(&reference.georef, "reference labels")?;
    if params.sus_buffer.is_some() && dem.is_none() {
        return Err(Error::Config("SUS evaluation needs a DEM".into()));
    }
    let regions = morphology::connected_components(pred, Connectivity::Eight);
    let codes = reference.codes();
    if codes.is_empty() {
        return Err(Error::EmptyEvaluation("reference contains no glaciers".into()));
    }
    let per = crate::par::map_slice(&codes, |&code| -> Result<(u32, ConfusionCounts)> {
        let ref_k = reference.mask_of(code);
        let hit: std::collections::BTreeSet<u32> = ref_k
            .indices()
            .map(|i| regions.labels.cells[i])
            .filter(|&l| l != 0)
            .collect();
        let mut pred_k = Mask::empty(pred.georef);
        for i in 0..pred.georef.len() {
            if pred.is_nodata(i) {
                pred_k.cells[i] = Mask::NODATA;
            } else if hit.contains(&regions.labels.cells[i]) {
                pred_k.cells[i] = 1;
            }
        }
        let sus = match (params.sus_buffer, dem) {
            (Some(buffer), Some(dem)) => sus_ceiling(&pred_k, &ref_k, dem, buffer).map(|ceiling| ElevationCeiling { dem, ceiling }),
            _ => None,
        };
        Ok((code, confusion(&pred_k, &ref_k, params.margin, sus)?))
    });
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let total = per
        .iter()
        .fold(ConfusionCounts { tp: 0, tn: 0, fp: 0, fn_: 0, bounds: None }, |a, (_, c)| a.merge(c));
    Ok(MetricsReport {
        glaciers: per.iter().map(|(code, c)| (*code, metrics(c))).collect(),
        aggregate: metrics(&total),
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x}"))
}

impl MetricsReport {
    /// Flat `key = value` text, one line per glacier metric then the aggregate.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, m: &Metrics| {
            for (key, v) in METRIC_KEYS.iter().zip(m.values()) {
                let _ = writeln!(out, "{name}.{key} = {}", fmt_value(v));
            }
        };
        for (code, m) in &self.glaciers {
            section(&format!("glacier_{code}"), m);
        }
        section("aggregate", &self.aggregate);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let parse_err = |line: usize, field: &str, message: String| Error::Parse {
            path: "<metrics>".into(),
            line,
            field: field.to_string(),
            message,
        };
        let mut sections: BTreeMap<String, [Option<Option<f64>>; 6]> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(n + 1, line, "expected `key = value`".into()))?;
            let key = key.trim();
            let (name, metric) = key
                .rsplit_once('.')
                .ok_or_else(|| parse_err(n + 1, key, "expected `<section>.<metric>`".into()))?;
            let slot = METRIC_KEYS
                .iter()
                .position(|k| *k == metric)
                .ok_or_else(|| parse_err(n + 1, key, format!("unknown metric `{metric}`")))?;
            let value = match value.trim() {
                "undefined" => None,
                v => Some(v.parse::<f64>().map_err(|e| parse_err(n + 1, key, e.to_string()))?),
            };
            if !sections.contains_key(name) {
                order.push(name.to_string());
            }
            sections.entry(name.to_string()).or_default()[slot] = Some(value);
        }
        let complete = |name: &str| -> Result<Metrics> {
            let raw = sections
                .get(name)
                .ok_or_else(|| parse_err(0, name, "section missing".into()))?;
            let mut v = [None; 6];
            for (k, slot) in raw.iter().enumerate() {
                v[k] = slot.ok_or_else(|| parse_err(0, name, format!("missing `{}`", METRIC_KEYS[k])))?;
            }
            Ok(Metrics::from_values(v))
        };
        let mut glaciers = Vec::new();
        for name in &order {
            if name == "aggregate" {
                continue;
            }
            let code = name
                .strip_prefix("glacier_")
                .and_then(|c| c.parse::<u32>().ok())
                .ok_or_else(|| parse_err(0, name, "expected `glacier_<code>`".into()))?;
            glaciers.push((code, complete(name)?));
        }
        Ok(MetricsReport {
            glaciers,
            aggregate: complete("aggregate")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Georef;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_, bounds: None }
    }

    #[test]
    fn worked_example() {
        let m = metrics(&counts(3, 1, 1, 5));
        assert_eq!(m.iou, Some(0.6));
        assert_eq!(m.rc, Some(0.75));
        assert_eq!(m.pc, Some(0.75));
        assert_eq!(m.sp, Some(5.0 / 6.0));
        assert_eq!(m.fm, Some(0.75));
        assert_eq!(m.acc, Some(0.8));
    }

    #[test]
    fn undefined_is_not_zero() {
        let m = metrics(&counts(0, 0, 0, 4));
        assert_eq!(m.iou, None);
        assert_eq!(m.rc, None);
        assert_eq!(m.fm, None);
        assert_eq!(m.sp, Some(1.0));
        let disjoint = metrics(&counts(0, 2, 2, 4));
        assert_eq!(disjoint.iou, Some(0.0));
        assert_eq!(disjoint.fm, None);
    }

    #[test]
    fn corner_box_bounds_tn() {
        let geo = Georef::new(100, 100, 15.0);
        let m = Mask::from_fn(geo, |r, c| r < 10 && c < 10);
        let c = confusion(&m, &m, 5, None).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (100, 0, 0));
        assert_eq!(c.tn, 15 * 15 - 100);
    }

    #[test]
    fn empty_union_errors() {
        let geo = Georef::new(4, 4, 15.0);
        assert!(matches!(
            confusion(&Mask::empty(geo), &Mask::empty(geo), 2, None),
            Err(Error::EmptyEvaluation(_))
        ));
    }

    #[test]
    fn ceiling_excludes_everything() {
        let geo = Georef::new(4, 4, 15.0);
        let m = Mask::from_fn(geo, |r, _| r < 2);
        let dem = Grid::filled(geo, -9999.0, 100.0);
        let sus = ElevationCeiling { dem: &dem, ceiling: 50.0 };
        assert!(confusion(&m, &m, 1, Some(sus)).is_err());
    }

    #[test]
    fn binary_reference_splits_components() {
        let geo = Georef::new(5, 1, 15.0);
        let g = Grid::new(geo, -9999.0, vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(reference_labels(&g).cells, vec![1, 0, 2, 2, 0]);
        let coded = Grid::new(geo, -9999.0, vec![3.0, 0.0, 7.0, 7.0, 0.0]).unwrap();
        assert_eq!(reference_labels(&coded).cells, vec![3, 0, 7, 7, 0]);
    }

    #[test]
    fn report_text_roundtrip() {
        let geo = Georef::new(12, 6, 15.0);
        let pred = Mask::from_fn(geo, |r, c| r < 3 && c < 4 || r > 3 && c > 7);
        let reference = reference_labels(&Mask::from_fn(geo, |r, c| r < 3 && c < 3 || r > 2 && c > 8).to_grid(-9999.0));
        let report = evaluate(&pred, &reference, &EvalParams { margin: 1, sus_buffer: None }, None).unwrap();
        assert_eq!(report.glaciers.len(), 2);
        let text = report.to_text();
        assert!(text.contains("glacier_1.iou = 0.75\n"));
        assert_eq!(MetricsReport::from_text(&text).unwrap(), report);
    }
}
