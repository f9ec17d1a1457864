//! Configuration and stage orchestration.
//!
//! Stages run in a fixed order: terrain, hydro, segment, refine-termini,
//! scaz, evaluate. Each stage recomputes what it needs from the inputs in
//! memory; `evaluate` reads the masks written by the earlier stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, EvalParams, MetricsReport};
use crate::grid::{self, Band, Grid, GridFormat, Labels, Mask, MultiBandStack};
use crate::hydro;
use crate::morphology;
use crate::scaz::{self, ScazParams};
use crate::spectral;
use crate::terminus::{self, FeatureProvider, FeatureStack, KnnParams, LocalStatsFeatures, SegmentationPair};
use crate::terrain;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputsConfig {
    pub dem: PathBuf,
    pub d1: Option<PathBuf>,
    pub d2: Option<PathBuf>,
    /// Band role (`B1`..`B11`) to raster path.
    pub bands: BTreeMap<String, PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub ablation_reference: Option<PathBuf>,
    pub glacier_reference: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            window: grid::DEFAULT_WINDOW,
            stride: grid::DEFAULT_STRIDE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    /// Mean-filter radius applied to the DEM before routing and terminus
    /// detection. 0 disables smoothing.
    pub smooth_radius: usize,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig { smooth_radius: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminusConfig {
    #[serde(flatten)]
    pub knn: KnnParams,
    /// Reserved. Water removal is not part of this method.
    pub water_removal: bool,
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessConfig {
    pub min_area: usize,
    pub hole_max_area: usize,
    pub hole_max_slope: f32,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            min_area: morphology::DEFAULT_MIN_AREA,
            hole_max_area: morphology::DEFAULT_HOLE_MAX_AREA,
            hole_max_slope: morphology::DEFAULT_HOLE_MAX_SLOPE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub margin: usize,
    /// Elevation buffer below the snowline for ablation-zone scoring.
    pub sus_buffer: Option<f32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            margin: eval::DEFAULT_MARGIN,
            sus_buffer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Stand in for any missing D-1/D-2 mask with the threshold segmenter.
    pub enabled: bool,
    pub snow_thresh: f32,
    pub slope_max: f32,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            enabled: false,
            snow_thresh: spectral::DEFAULT_SNOW_THRESHOLD,
            slope_max: spectral::DEFAULT_BASELINE_SLOPE_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: GridFormat,
    pub write_normalized_stack: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            format: GridFormat::EsriAscii,
            write_normalized_stack: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub inputs: InputsConfig,
    pub tiling: TilingConfig,
    pub terrain: TerrainConfig,
    pub terminus: TerminusConfig,
    pub postprocess: PostprocessConfig,
    pub scaz: ScazParams,
    pub eval: EvalConfig,
    pub baseline: BaselineConfig,
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse, resolve relative paths against the file's directory and validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let i = &mut self.inputs;
        fix(&mut i.dem);
        for p in [&mut i.d1, &mut i.d2, &mut i.features_dir, &mut i.ablation_reference, &mut i.glacier_reference]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        i.bands.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<()> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} not found: {}", p.display())))
            }
        };
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output_dir is not set".into()));
        }
        let i = &self.inputs;
        if i.dem.as_os_str().is_empty() {
            return Err(Error::Config("inputs.dem is not set".into()));
        }
        exists(&i.dem, "DEM")?;
        for (what, p) in [
            ("D-1 mask", &i.d1),
            ("D-2 mask", &i.d2),
            ("feature directory", &i.features_dir),
            ("ablation reference", &i.ablation_reference),
            ("glacier reference", &i.glacier_reference),
        ] {
            if let Some(p) = p {
                exists(p, what)?;
            }
        }
        for (role, p) in &i.bands {
            let band: Band = role.parse()?;
            if !matches!(band, Band::Landsat(_)) {
                return Err(Error::Config(format!("inputs.bands: {role} is derived, not an input band")));
            }
            exists(p, &format!("band {role}"))?;
        }
        if !self.baseline.enabled && (i.d1.is_none() || i.d2.is_none()) {
            return Err(Error::Config("D-1 and D-2 masks are required unless baseline.enabled = true".into()));
        }
        if self.tiling.window == 0 {
            return Err(Error::param("tiling.window", "must be >= 1"));
        }
        if self.tiling.stride == 0 {
            return Err(Error::param("tiling.stride", "must be >= 1"));
        }
        if self.terminus.water_removal {
            return Err(Error::param("terminus.water_removal", "reserved; must be false"));
        }
        self.terminus.knn.validate()?;
        self.scaz.validate()?;
        let slope_ok = |v: f32| (0.0..=90.0).contains(&v);
        if !slope_ok(self.postprocess.hole_max_slope) {
            return Err(Error::param("postprocess.hole_max_slope", "must be in [0, 90] degrees"));
        }
        if !slope_ok(self.baseline.slope_max) {
            return Err(Error::param("baseline.slope_max", "must be in [0, 90] degrees"));
        }
        if !(self.baseline.snow_thresh > -1.0 && self.baseline.snow_thresh < 1.0) {
            return Err(Error::param("baseline.snow_thresh", "must be in (-1, 1)"));
        }
        if !(-1.0..=1.0).contains(&self.terminus.knn.veg_thresh) {
            return Err(Error::param("terminus.veg_thresh", "must be in [-1, 1]"));
        }
        if self.eval.sus_buffer.is_some_and(|b| b.is_nan() || b < 0.0) {
            return Err(Error::param("eval.sus_buffer", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Terrain,
    Hydro,
    Segment,
    RefineTermini,
    Scaz,
    Evaluate,
    Pipeline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Terrain => "terrain",
            Stage::Hydro => "hydro",
            Stage::Segment => "segment",
            Stage::RefineTermini => "refine-termini",
            Stage::Scaz => "scaz",
            Stage::Evaluate => "evaluate",
            Stage::Pipeline => "pipeline",
        }
    }

    fn writes(self, produced_by: Stage) -> bool {
        self == produced_by || self == Stage::Pipeline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub stage: &'static str,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub stage: &'static str,
    pub config: PipelineConfig,
    pub outputs: Vec<ManifestEntry>,
}

struct Writer<'a> {
    cfg: &'a PipelineConfig,
    run: Stage,
    outputs: Vec<ManifestEntry>,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(format!("{name}.{}", self.cfg.output.format.extension()))
    }

    fn record(&mut self, name: &str, stage: Stage, file: String) {
        info!("wrote {file}");
        self.outputs.push(ManifestEntry {
            name: name.to_string(),
            stage: stage.name(),
            path: PathBuf::from(file),
        });
    }

    fn grid(&mut self, stage: Stage, name: &str, g: &Grid) -> Result<()> {
        if self.run.writes(stage) {
            let path = self.path(name);
            grid::write_grid(g, &path, self.cfg.output.format)?;
            self.record(name, stage, file_name(&path));
        }
        Ok(())
    }

    fn mask(&mut self, stage: Stage, name: &str, m: &Mask) -> Result<()> {
        self.grid(stage, name, &m.to_grid(grid::DEFAULT_NODATA))
    }

    fn text(&mut self, stage: Stage, name: &str, body: &str) -> Result<()> {
        if self.run.writes(stage) {
            let path = self.cfg.output_dir.join(format!("{name}.txt"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            self.record(name, stage, file_name(&path));
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_input(path: &Path) -> Result<Grid> {
    grid::read_grid(path, GridFormat::from_path(path)?)
}

fn load_stack(cfg: &PipelineConfig) -> Result<(Grid, MultiBandStack)> {
    let dem = read_input(&cfg.inputs.dem)?;
    let mut stack = MultiBandStack::new();
    for (role, path) in &cfg.inputs.bands {
        let band: Band = role.parse()?;
        let g = read_input(path)?;
        dem.georef.ensure_aligned(&g.georef, &format!("band {role}"))?;
        stack.push(band, g)?;
    }
    stack.push(Band::Dem, dem.clone())?;
    Ok((dem, stack))
}

fn load_mask(path: &Path, what: &str, like: &Grid) -> Result<Mask> {
    let m = Mask::from_grid(&read_input(path)?);
    like.georef.ensure_aligned(&m.georef, what)?;
    Ok(m)
}

/// Threshold segmenter applied tile by tile and merged by majority vote.
pub fn baseline_tiled(stack: &MultiBandStack, tiling: &TilingConfig, cfg: &BaselineConfig) -> Result<Mask> {
    let g = stack
        .georef()
        .ok_or_else(|| Error::Config("baseline needs a non-empty stack".into()))?;
    let window = tiling.window.min(g.width.min(g.height));
    let green = stack.require(Band::GREEN)?;
    let swir = stack.require(Band::SWIR1)?;
    let slope = stack.require(Band::Slope)?;
    let result = std::sync::Mutex::new(None);
    let merged = grid::tile_and_merge(&g, window, tiling.stride, |tile| {
        let sub = MultiBandStack::new()
            .with(Band::GREEN, tile.crop_grid(green))
            .and_then(|s| s.with(Band::SWIR1, tile.crop_grid(swir)))
            .and_then(|s| s.with(Band::Slope, tile.crop_grid(slope)))
            .and_then(|s| spectral::baseline_segment(&s, cfg.snow_thresh, cfg.slope_max));
        match sub {
            Ok(m) => m,
            Err(e) => {
                result.lock().expect("poisoned").get_or_insert(e);
                Mask::empty(g.sub(0, 0, tile.window, tile.window))
            }
        }
    })?;
    match result.into_inner().expect("poisoned") {
        Some(e) => Err(e),
        None => Ok(merged),
    }
}

/// In-memory products of a run, up to the last stage computed.
#[derive(Debug, Clone, Default)]
pub struct Products {
    pub terrain: Option<terrain::TerrainLayers>,
    pub segmentation: Option<SegmentationPair>,
    pub refined: Option<Mask>,
    pub termini: Vec<terminus::TerminusCase>,
    pub glacier: Option<Mask>,
    pub ablation_metrics: Option<MetricsReport>,
    pub glacier_metrics: Option<MetricsReport>,
    pub manifest: Option<Manifest>,
}

/// Run `stage` (and, in memory, everything it depends on), write its
/// artifacts and a `manifest.json` into the output directory.
pub fn run(cfg: &PipelineConfig, stage: Stage) -> Result<Products> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut w = Writer {
        cfg,
        run: stage,
        outputs: Vec::new(),
    };
    let mut out = Products::default();

    if stage == Stage::Evaluate {
        evaluate_written(cfg, &mut w, &mut out)?;
        return finish(cfg, w, out);
    }

    let (dem, mut stack) = load_stack(cfg)?;
    let smoothed = if cfg.terrain.smooth_radius > 0 {
        terrain::smooth_dem(&dem, cfg.terrain.smooth_radius)
    } else {
        dem.clone()
    };

    info!("terrain: {}x{} cells", dem.width(), dem.height());
    let layers = terrain::terrain_params(&dem);
    for (name, g) in layers.named() {
        w.grid(Stage::Terrain, name, g)?;
    }
    layers.clone().into_stack_channels(&mut stack)?;
    out.terrain = Some(layers);
    if cfg.output.write_normalized_stack && w.run.writes(Stage::Terrain) {
        let normalized = grid::normalize_stack(&stack)?;
        for (band, g) in normalized.iter() {
            w.grid(Stage::Terrain, &format!("normalized_{band}"), g)?;
        }
    }
    if stage == Stage::Terrain {
        return finish(cfg, w, out);
    }

    info!("hydro");
    let filled = hydro::fill_sinks(&smoothed);
    let flow = hydro::flow_direction_d8(&filled);
    if w.run.writes(Stage::Hydro) {
        let accumulation = hydro::flow_accumulation(&flow)?;
        let basins = hydro::drainage_basins(&flow, None)?;
        let codes = Grid::new(
            flow.georef,
            hydro::NO_FLOW as f32,
            flow.codes.iter().map(|&c| c as f32).collect(),
        )?;
        w.grid(Stage::Hydro, "filled_dem", &filled)?;
        w.grid(Stage::Hydro, "flow_direction", &codes)?;
        w.grid(Stage::Hydro, "flow_accumulation", &accumulation)?;
        w.grid(Stage::Hydro, "drainage_basins", &basins.to_grid())?;
    }
    if stage == Stage::Hydro {
        return finish(cfg, w, out);
    }

    info!("segment");
    let baseline = if cfg.baseline.enabled && (cfg.inputs.d1.is_none() || cfg.inputs.d2.is_none()) {
        Some(baseline_tiled(&stack, &cfg.tiling, &cfg.baseline)?)
    } else {
        None
    };
    let pick = |p: &Option<PathBuf>, what: &str| -> Result<Mask> {
        match (p, &baseline) {
            (Some(p), _) => load_mask(p, what, &dem),
            (None, Some(b)) => Ok(b.clone()),
            (None, None) => Err(Error::Config(format!("{what} missing and baseline disabled"))),
        }
    };
    let pp = &cfg.postprocess;
    let slope = stack.require(Band::Slope)?;
    let post = |m: &Mask| terminus::postprocess(m, slope, pp.min_area, pp.hole_max_area, pp.hole_max_slope);
    let pair = SegmentationPair::new(post(&pick(&cfg.inputs.d1, "D-1 mask")?), post(&pick(&cfg.inputs.d2, "D-2 mask")?))?;
    w.mask(Stage::Segment, "d1_postprocessed", &pair.d1)?;
    w.mask(Stage::Segment, "d2_postprocessed", &pair.d2)?;
    if stage == Stage::Segment {
        out.segmentation = Some(pair);
        return finish(cfg, w, out);
    }

    info!("refine-termini");
    let features = match &cfg.inputs.features_dir {
        Some(dir) => terminus::FileFeatures(FeatureStack::from_dir(dir)?).features(&stack)?,
        None => LocalStatsFeatures.features(&stack)?,
    };
    let ndvi = spectral::ndvi(&stack)?;
    let refined = terminus::refine_termini(&pair, &smoothed, &features, &ndvi, &cfg.terminus.knn)?;
    w.mask(Stage::RefineTermini, "refined_ablation", &refined.mask)?;
    out.termini = refined.cases;
    if stage == Stage::RefineTermini {
        out.segmentation = Some(pair);
        out.refined = Some(refined.mask);
        return finish(cfg, w, out);
    }

    info!("scaz");
    let scaz = scaz::estimate_scaz(&refined.mask, &pair.d1, &smoothed, &stack, &cfg.scaz)?;
    w.mask(Stage::Scaz, "glacier_extent", &scaz.glacier)?;
    w.grid(Stage::Scaz, "glacier_codes", &scaz.labels.to_grid())?;
    out.segmentation = Some(pair);
    out.refined = Some(refined.mask);
    out.glacier = Some(scaz.glacier);
    if stage == Stage::Scaz {
        return finish(cfg, w, out);
    }

    score(cfg, &mut w, &mut out, &dem)?;
    finish(cfg, w, out)
}

fn score(cfg: &PipelineConfig, w: &mut Writer<'_>, out: &mut Products, dem: &Grid) -> Result<()> {
    let reference = |p: &Path, like: &Grid| -> Result<Labels> {
        let g = read_input(p)?;
        like.georef.ensure_aligned(&g.georef, "reference mask")?;
        Ok(eval::reference_labels(&g))
    };
    if let (Some(p), Some(pred)) = (&cfg.inputs.ablation_reference, &out.refined) {
        let params = EvalParams {
            margin: cfg.eval.margin,
            sus_buffer: cfg.eval.sus_buffer,
        };
        let report = eval::evaluate(pred, &reference(p, dem)?, &params, Some(dem))?;
        w.text(Stage::Evaluate, "metrics_ablation", &report.to_text())?;
        out.ablation_metrics = Some(report);
    }
    if let (Some(p), Some(pred)) = (&cfg.inputs.glacier_reference, &out.glacier) {
        let params = EvalParams {
            margin: cfg.eval.margin,
            sus_buffer: None,
        };
        let report = eval::evaluate(pred, &reference(p, dem)?, &params, None)?;
        w.text(Stage::Evaluate, "metrics_glacier", &report.to_text())?;
        out.glacier_metrics = Some(report);
    }
    Ok(())
}

fn evaluate_written(cfg: &PipelineConfig, w: &mut Writer<'_>, out: &mut Products) -> Result<()> {
    let dem = read_input(&cfg.inputs.dem)?;
    let read = |name: &str| -> Result<Mask> {
        let path = w.path(name);
        if !path.exists() {
            return Err(Error::Structural(format!(
                "{} not found; run the stage that produces it first",
                path.display()
            )));
        }
        load_mask(&path, name, &dem)
    };
    if cfg.inputs.ablation_reference.is_some() {
        out.refined = Some(read("refined_ablation")?);
    }
    if cfg.inputs.glacier_reference.is_some() {
        out.glacier = Some(read("glacier_extent")?);
    }
    score(cfg, w, out, &dem)
}

fn finish(cfg: &PipelineConfig, w: Writer<'_>, mut out: Products) -> Result<Products> {
    let manifest = Manifest {
        stage: w.run.name(),
        config: cfg.clone(),
        outputs: w.outputs,
    };
    let path = cfg.output_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Inconsistent(e.to_string()))?;
    std::fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))?;
    out.manifest = Some(manifest);
    Ok(out)
}

/// Write a configuration for scene files produced by
/// [`crate::synthetic::write_cone_inputs`].
pub fn scene_config(files: &crate::synthetic::SceneFiles, output_dir: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: output_dir.to_path_buf(),
        inputs: InputsConfig {
            dem: files.dem.clone(),
            d1: Some(files.d1.clone()),
            d2: Some(files.d2.clone()),
            bands: files.bands.iter().map(|(b, p)| (b.to_string(), p.clone())).collect(),
            features_dir: None,
            ablation_reference: Some(files.ablation_reference.clone()),
            glacier_reference: Some(files.glacier_reference.clone()),
        },
        ..PipelineConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let mut cfg = PipelineConfig {
            output_dir: "out".into(),
            ..PipelineConfig::default()
        };
        cfg.inputs.dem = "dem.asc".into();
        cfg.eval.sus_buffer = Some(50.0);
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_carry_method_constants() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg.tiling.window, 512);
        assert_eq!(cfg.tiling.stride, 32);
        assert_eq!(cfg.terminus.knn.iou_threshold, 0.7);
        assert_eq!(cfg.terminus.knn.low_alt_fraction, 0.15);
        assert_eq!(cfg.terminus.knn.k, 5);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = PipelineConfig::from_toml("[terminus]\nkk = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn flattened_knn_keys() {
        let cfg = PipelineConfig::from_toml("[terminus]\nk = 7\nbox_pad = 4\n").unwrap();
        assert_eq!(cfg.terminus.knn.k, 7);
        assert_eq!(cfg.terminus.knn.box_pad, 4);
    }
}
