//! Batch commands behind the `hybridgen` binary.
//!
//! Every command reads a [`PipelineConfig`] (JSON, relative paths resolved
//! against the config file's directory), applies command-line
//! [`Overrides`], and writes its outputs plus a JSON report. Frames are
//! matched across directories by file stem and processed in parallel; each
//! frame draws from its own RNG seeded by [`frame_seed`], so outputs do not
//! depend on scheduling. Reports on disk hold no timing, which keeps reruns
//! byte-identical.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 invariant
//! violation (see [`exit_code`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsm::{
    self, direct_conv2d, dual_sync, focal_loss, global_avg_pool, rasterize_boxes, spatial_sync,
    BevBox, DsmWeights, FeatureMap,
};
use crate::encoding::{encode, pillarize, EncodingSchema, GridConfig, Strategy};
use crate::error::{Error, Result};
use crate::geometry::Calibration;
use crate::masks::{load_masks, BACKGROUND};
use crate::points::{load_hybrid_points, load_raw_points, save_hybrid_points, PointKind};
use crate::rhgm::{frame_seed, generate_hybrid, Frame, GenParams, DEFAULT_SEED};
use crate::synth::{simulate_scene, GroundTruthFile, SceneSpec};

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Invariant(_) => 4,
        _ => 3,
    }
}

fn default_classes() -> Vec<String> {
    ["car", "pedestrian", "cyclist"].map(String::from).to_vec()
}
fn default_features() -> Vec<String> {
    ["rcs", "v_r", "v_abs"].map(String::from).to_vec()
}
fn default_strategy() -> Strategy {
    Strategy::Separate
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Raw point CSVs, one per frame.
    #[serde(default)]
    pub points_dir: Option<PathBuf>,
    /// `<stem>.pgm` rasters and `<stem>.json` class maps.
    #[serde(default)]
    pub masks_dir: Option<PathBuf>,
    /// One calibration file for all frames, or a directory of `<stem>.txt`.
    #[serde(default)]
    pub calib: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/hybrid`.
    #[serde(default)]
    pub hybrid_dir: Option<PathBuf>,
    /// Defaults to `<output_dir>/grids`.
    #[serde(default)]
    pub grid_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            points_dir: None,
            masks_dir: None,
            calib: None,
            output_dir: default_output(),
            hybrid_dir: None,
            grid_dir: None,
        }
    }
}

/// Inputs of `fuse-check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseConfig {
    #[serde(default)]
    pub radar: Option<PathBuf>,
    #[serde(default)]
    pub image: Option<PathBuf>,
    /// `DSMW` file; seeded random weights when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Ground-truth boxes (a JSON list of boxes or a synth `gt` file) for
    /// the focal-loss check.
    #[serde(default)]
    pub boxes: Option<PathBuf>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            radar: None,
            image: None,
            weights: None,
            boxes: None,
            gamma: default_gamma(),
            alpha: default_alpha(),
        }
    }
}

fn default_gamma() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default = "default_features")]
    pub features: Vec<String>,
    /// `generation.seed` is the global seed.
    #[serde(default)]
    pub generation: GenParams,
    #[serde(default = "GridConfig::vod")]
    pub grid: GridConfig,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub drop_unknown_classes: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub fuse: FuseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub strategy: Option<Strategy>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Loads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for opt in [
            &mut p.points_dir,
            &mut p.masks_dir,
            &mut p.calib,
            &mut p.hybrid_dir,
            &mut p.grid_dir,
        ] {
            if let Some(v) = opt.as_mut() {
                resolve(base, v);
            }
        }
        resolve(base, &mut p.output_dir);
        let f = &mut self.fuse;
        for v in [&mut f.radar, &mut f.image, &mut f.weights, &mut f.boxes]
            .into_iter()
            .flatten()
        {
            resolve(base, v);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.generation.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = Some(j);
        }
        if let Some(s) = o.strategy {
            self.strategy = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("class list is empty".into()));
        }
        self.generation.validate()?;
        self.grid.validate()?;
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn hybrid_dir(&self) -> PathBuf {
        self.paths
            .hybrid_dir
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("hybrid"))
    }

    pub fn grid_dir(&self) -> PathBuf {
        self.paths
            .grid_dir
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("grids"))
    }

    pub fn schema(&self) -> EncodingSchema {
        EncodingSchema::new(self.features.len(), self.classes.len(), self.strategy)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            b = b.num_threads(j);
        }
        b.build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    fn calibration_for(&self, stem: &str) -> Result<Calibration> {
        let calib = required(&self.paths.calib, "paths.calib")?;
        if calib.is_dir() {
            Calibration::load(calib.join(format!("{stem}.txt")))
        } else {
            Calibration::load(calib)
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
    let p = p
        .as_ref()
        .ok_or_else(|| Error::Config(format!("`{name}` is not set")))?;
    if !p.exists() {
        return Err(Error::Config(format!(
            "`{name}` ({}) does not exist",
            p.display()
        )));
    }
    Ok(p)
}

/// Stems of `*.<ext>` files in `dir`, sorted.
fn stems(dir: &Path, ext: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_frame(stem: &str, e: Error) -> Error {
    match e {
        Error::SchemaMismatch(m) => Error::SchemaMismatch(format!("frame {stem}: {m}")),
        Error::Parse { context, message } => Error::Parse {
            context: format!("frame {stem}: {context}"),
            message,
        },
        other => other,
    }
}

/// Runs `work` per frame in parallel. On any failure, files produced by the
/// successful frames are removed and the first error in stem order is
/// returned.
fn run_frames<T: Send>(
    pool: &rayon::ThreadPool,
    stems: &[String],
    work: impl Fn(&str) -> Result<(T, PathBuf)> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Result<(T, PathBuf)>> =
        pool.install(|| stems.par_iter().map(|s| work(s)).collect());
    if results.iter().any(|r| r.is_err()) {
        let mut first = None;
        for r in results {
            match r {
                Ok((_, path)) => {
                    let _ = fs::remove_file(path);
                }
                Err(e) if first.is_none() => first = Some(e),
                Err(_) => {}
            }
        }
        return Err(first.expect("at least one error"));
    }
    Ok(results.into_iter().map(|r| r.expect("checked").0).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub frame: String,
    pub raw: usize,
    pub foreground: usize,
    pub gaussian: usize,
    pub uniform: usize,
    pub gaussian_shortfall: usize,
    pub uniform_shortfall: usize,
    pub instances: usize,
    pub skipped_instances: usize,
    pub fallback_instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub seed: u64,
    pub frames: Vec<FrameCounts>,
    pub total_generated: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Generates hybrid point CSVs for every frame in `paths.points_dir`.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateReport> {
    let start = Instant::now();
    cfg.validate()?;
    let points_dir = required(&cfg.paths.points_dir, "paths.points_dir")?;
    let masks_dir = required(&cfg.paths.masks_dir, "paths.masks_dir")?;
    required(&cfg.paths.calib, "paths.calib")?;
    let out_dir = cfg.hybrid_dir();
    create_dir(&out_dir)?;
    let frames = stems(points_dir, "csv")?;
    log::info!(
        "generate: {} frames from {}",
        frames.len(),
        points_dir.display()
    );

    let counts = run_frames(&cfg.pool()?, &frames, |stem| {
        let raw = load_raw_points(points_dir.join(format!("{stem}.csv")), &cfg.features)
            .map_err(|e| with_frame(stem, e))?;
        let masks = load_masks(
            masks_dir.join(format!("{stem}.pgm")),
            masks_dir.join(format!("{stem}.json")),
            &cfg.classes,
            cfg.drop_unknown_classes,
        )
        .map_err(|e| with_frame(stem, e))?;
        let calib = cfg.calibration_for(stem)?;
        let params = GenParams {
            seed: frame_seed(cfg.generation.seed, stem),
            ..cfg.generation.clone()
        };
        let frame = Frame { raw, calib, masks };
        let set = generate_hybrid(&frame, &params).map_err(|e| with_frame(stem, e))?;
        let out = out_dir.join(format!("{stem}.csv"));
        save_hybrid_points(&out, &set.tagged_points(), &cfg.features, &cfg.classes)?;
        let r = &set.report;
        let counts = FrameCounts {
            frame: stem.to_string(),
            raw: set.raw.len(),
            foreground: set.foreground.len(),
            gaussian: r.instances.iter().map(|i| i.gaussian).sum(),
            uniform: r.instances.iter().map(|i| i.uniform).sum(),
            gaussian_shortfall: r.gaussian_shortfall(),
            uniform_shortfall: r.uniform_shortfall(),
            instances: r.instances.len(),
            skipped_instances: r.instances.iter().filter(|i| i.skipped).count(),
            fallback_instances: r.instances.iter().filter(|i| i.fallback).count(),
        };
        if counts.gaussian_shortfall + counts.uniform_shortfall > 0 {
            log::warn!(
                "frame {stem}: rejection shortfall gaussian={} uniform={}",
                counts.gaussian_shortfall,
                counts.uniform_shortfall
            );
        }
        Ok((counts, out))
    })?;

    let report = GenerateReport {
        seed: cfg.generation.seed,
        total_generated: counts.iter().map(|c| c.gaussian + c.uniform).sum(),
        frames: counts,
        elapsed: start.elapsed(),
    };
    write_json(&cfg.paths.output_dir.join("generate_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridCounts {
    pub frame: String,
    pub points: usize,
    pub gridded: usize,
    pub dropped: usize,
    pub occupied_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub strategy: Strategy,
    pub feature_len: usize,
    pub nx: usize,
    pub ny: usize,
    pub frames: Vec<GridCounts>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Encodes and pillarizes every hybrid CSV into a `PGRD` file.
pub fn cmd_encode(cfg: &PipelineConfig) -> Result<EncodeReport> {
    let start = Instant::now();
    cfg.validate()?;
    let in_dir = cfg.hybrid_dir();
    if !in_dir.is_dir() {
        return Err(Error::Config(format!(
            "hybrid directory {} does not exist",
            in_dir.display()
        )));
    }
    let out_dir = cfg.grid_dir();
    create_dir(&out_dir)?;
    let schema = cfg.schema();
    let frames = stems(&in_dir, "csv")?;
    log::info!(
        "encode: {} frames, {} strategy, {}×{} grid, {} features per cell",
        frames.len(),
        schema.strategy,
        cfg.grid.nx(),
        cfg.grid.ny(),
        schema.len()
    );

    let counts = run_frames(&cfg.pool()?, &frames, |stem| {
        let path = in_dir.join(format!("{stem}.csv"));
        let empty = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len() == 0;
        let points = if empty {
            Vec::new()
        } else {
            load_hybrid_points(&path, &cfg.features, &cfg.classes)
                .map_err(|e| with_frame(stem, e))?
        };
        let enc = encode(&points, schema).map_err(|e| with_frame(stem, e))?;
        let grid = pillarize(&enc, &cfg.grid)?;
        let out = out_dir.join(format!("{stem}.pgrd"));
        grid.save(&out)?;
        let counts = GridCounts {
            frame: stem.to_string(),
            points: enc.len(),
            gridded: grid.total_count(),
            dropped: grid.dropped(),
            occupied_cells: grid.counts().iter().filter(|&&c| c > 0).count(),
        };
        Ok((counts, out))
    })?;

    let report = EncodeReport {
        strategy: schema.strategy,
        feature_len: schema.len(),
        nx: cfg.grid.nx(),
        ny: cfg.grid.ny(),
        frames: counts,
        elapsed: start.elapsed(),
    };
    write_json(&cfg.paths.output_dir.join("encode_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub channels: usize,
    pub nx: usize,
    pub ny: usize,
    pub random_weights: bool,
    pub pattern_min: f64,
    pub pattern_max: f64,
    pub pattern_mean: f64,
    pub modality_weights: Vec<f64>,
    /// Per-channel `F / F_concat`, taken at the first nonzero cell.
    pub channel_ratios: Vec<Option<f64>>,
    pub focal_loss: Option<f64>,
    pub invariants: Vec<InvariantResult>,
}

impl FuseReport {
    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }
}

fn read_boxes(path: &Path) -> Result<Vec<BevBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(b) = serde_json::from_str::<Vec<BevBox>>(&text) {
        return Ok(b);
    }
    let gt: GroundTruthFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    Ok(gt.boxes.into_iter().map(|b| b.bev).collect())
}

/// Runs spatial and modality sync on the configured feature maps, checks
/// the block's invariants, and writes `fused.fmap`, `pattern.fmap` and
/// `fuse_report.json` under `<output_dir>/fuse`.
///
/// Fails with [`Error::Invariant`] naming the first violated property (the
/// report is still written).
pub fn cmd_fuse_check(cfg: &PipelineConfig) -> Result<FuseReport> {
    let f = &cfg.fuse;
    let radar = FeatureMap::load(required(&f.radar, "fuse.radar")?)?;
    let image = FeatureMap::load(required(&f.image, "fuse.image")?)?;
    if radar.dims() != image.dims() {
        return Err(Error::DimMismatch(format!(
            "radar map {:?} and image map {:?} differ",
            radar.dims(),
            image.dims()
        )));
    }
    let (c, nx, ny) = radar.dims();
    let (weights, random_weights) = match &f.weights {
        Some(p) => (
            DsmWeights::load(required(&Some(p.clone()), "fuse.weights")?)?,
            false,
        ),
        None => (
            DsmWeights::random(c, &mut ChaCha8Rng::seed_from_u64(cfg.generation.seed)),
            true,
        ),
    };
    let out = dual_sync(&radar, &image, &weights)?;
    let fusion = &out.fusion;
    let mut checks = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        checks.push(InvariantResult {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    let pat = out.pattern.as_map().data();
    check(
        "pattern_in_open_unit_interval",
        pat.iter().all(|&v| v > 0.0 && v < 1.0),
        format!("{} cells", pat.len()),
    );

    let atrous = dsm::conv2d(&radar, &weights.atrous)?;
    let reference = direct_conv2d(&radar, &weights.atrous)?;
    let max_err = atrous
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    check(
        "conv_matches_direct_definition",
        max_err <= 1e-6,
        format!("max |Δ| = {max_err:.3e}"),
    );

    let mut broadcast_ok = true;
    for ci in 0..c {
        for x in 0..nx {
            for y in 0..ny {
                let want = out.pattern.as_map().get(0, x, y) * image.get(ci, x, y);
                broadcast_ok &= out.enhanced_image.get(ci, x, y).to_bits() == want.to_bits();
            }
        }
    }
    check("spatial_sync_broadcast", broadcast_ok, "exact".into());

    let halved = out.pattern.as_map().map(|v| 0.5 * v);
    let lhs = spatial_sync(&halved, &image)?;
    let rhs = out.enhanced_image.map(|v| 0.5 * v);
    check(
        "spatial_sync_homogeneity",
        lhs == rhs,
        "λ = 0.5, exact".into(),
    );

    let v = &fusion.weights.0;
    check(
        "modality_weights_in_open_unit_interval",
        v.iter().all(|&w| w > 0.0 && w < 1.0),
        format!("{} weights", v.len()),
    );

    let mut constancy_ok = true;
    for (ci, w) in v.iter().enumerate() {
        for (fv, cv) in fusion
            .fused
            .channel(ci)
            .iter()
            .zip(fusion.concat.channel(ci))
        {
            constancy_ok &= fv.to_bits() == (w * cv).to_bits();
        }
    }
    check(
        "channel_constancy",
        constancy_ok,
        "F[c] = V[c]·F_concat[c], exact".into(),
    );

    // spatially reversed copy of F_concat must pool to the same V
    let (cc, _, _) = fusion.concat.dims();
    let reversed = FeatureMap::from_fn(cc, nx, ny, |ci, x, y| {
        fusion.concat.get(ci, nx - 1 - x, ny - 1 - y)
    });
    let pooled_a = global_avg_pool(&fusion.concat);
    let pooled_b = global_avg_pool(&reversed);
    let pool_err = pooled_a
        .iter()
        .zip(&pooled_b)
        .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    check(
        "pooling_permutation_invariance",
        pool_err <= 1e-12,
        format!("max relative |Δ| = {pool_err:.3e}"),
    );

    let channel_ratios = (0..2 * c)
        .map(|ci| {
            fusion
                .fused
                .channel(ci)
                .iter()
                .zip(fusion.concat.channel(ci))
                .find(|(_, &cv)| cv != 0.0)
                .map(|(fv, cv)| fv / cv)
        })
        .collect();

    let focal = match &f.boxes {
        Some(p) => {
            let boxes = read_boxes(p)?;
            let gt = rasterize_boxes(&boxes, &cfg.grid)?;
            if gt.dims() != out.pattern.as_map().dims() {
                return Err(Error::DimMismatch(format!(
                    "grid {:?} does not match feature maps {:?}",
                    gt.dims(),
                    out.pattern.as_map().dims()
                )));
            }
            let l = focal_loss(out.pattern.as_map(), &gt, f.gamma, f.alpha)?;
            check(
                "focal_loss_non_negative",
                l >= 0.0 && l.is_finite(),
                format!("{l}"),
            );
            Some(l)
        }
        None => None,
    };

    let n = pat.len() as f64;
    let report = FuseReport {
        channels: c,
        nx,
        ny,
        random_weights,
        pattern_min: pat.iter().copied().fold(f64::INFINITY, f64::min),
        pattern_max: pat.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        pattern_mean: pat.iter().sum::<f64>() / n,
        modality_weights: v.clone(),
        channel_ratios,
        focal_loss: focal,
        invariants: checks,
    };
    let dir = cfg.paths.output_dir.join("fuse");
    create_dir(&dir)?;
    fusion.fused.save(dir.join("fused.fmap"))?;
    out.pattern.as_map().save(dir.join("pattern.fmap"))?;
    write_json(&dir.join("fuse_report.json"), &report)?;
    if let Some(bad) = report.invariants.iter().find(|i| !i.passed) {
        return Err(Error::Invariant(format!("{}: {}", bad.name, bad.detail)));
    }
    Ok(report)
}

/// Scene file for `simulate`: a scene repeated over `frames` seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "one")]
    pub frames: usize,
    pub scene: SceneSpec,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulatedFrame {
    pub frame: String,
    pub seed: u64,
    pub raw_points: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub frames: Vec<SimulatedFrame>,
}

/// Writes a synthetic dataset (`points/`, `masks/`, `calib/`, `gt/`) plus a
/// `config.json` that `generate` can consume directly.
pub fn cmd_simulate(
    spec: &SimulationSpec,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<SimulateReport> {
    let mut scene = spec.scene.clone();
    if let Some(s) = overrides.seed {
        scene.seed = s;
    }
    scene.validate()?;
    create_dir(out_dir)?;
    let stems: Vec<String> = (0..spec.frames).map(|k| format!("{k:06}")).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = overrides.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let frames = run_frames(&pool, &stems, |stem| {
        let frame_spec = SceneSpec {
            seed: frame_seed(scene.seed, stem),
            ..scene.clone()
        };
        let f = simulate_scene(&frame_spec)?;
        f.save(out_dir, stem, &scene.feature_names)?;
        let info = SimulatedFrame {
            frame: stem.to_string(),
            seed: frame_spec.seed,
            raw_points: f.raw.len(),
            instances: f.masks.num_instances(),
        };
        Ok((info, out_dir.join("points").join(format!("{stem}.csv"))))
    })?;
    let cfg = PipelineConfig {
        classes: scene.class_names.clone(),
        features: scene.feature_names.clone(),
        generation: GenParams {
            seed: overrides.seed.unwrap_or(DEFAULT_SEED),
            ..Default::default()
        },
        grid: scene.pcr,
        paths: Paths {
            points_dir: Some("points".into()),
            masks_dir: Some("masks".into()),
            calib: Some("calib".into()),
            output_dir: "out".into(),
            ..Default::default()
        },
        ..Default::default()
    };
    write_json(&out_dir.join("config.json"), &cfg)?;
    let report = SimulateReport { frames };
    write_json(&out_dir.join("simulate_report.json"), &report)?;
    Ok(report)
}

pub const HISTOGRAM_BIN_PX: f64 = 5.0;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskDensity {
    pub frame: String,
    pub instance: u16,
    pub class: String,
    pub area: usize,
    pub generated: usize,
    /// Generated points per 1000 mask pixels.
    pub per_kilopixel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub frames: usize,
    /// `class → kind → count`; raw points count under `"none"`.
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub density: Vec<MaskDensity>,
    /// Pixel distance from each generated point to the nearest foreground
    /// point of its frame, in `HISTOGRAM_BIN_PX` bins; the last bin is
    /// open-ended. Indexed `[gaussian, uniform]`.
    pub distance_histogram: [Vec<usize>; 2],
}

/// Aggregates hybrid CSVs: per-class counts, per-mask densities and
/// generated-to-foreground pixel distance histograms. Mask densities and
/// distances need masks and calibration; without them only counts are
/// produced. Writes `<output_dir>/stats/{counts,density,histogram}.csv` and
/// `stats.json`.
pub fn cmd_stats(cfg: &PipelineConfig) -> Result<StatsReport> {
    cfg.validate()?;
    let in_dir = cfg.hybrid_dir();
    let frames = if in_dir.is_dir() {
        stems(&in_dir, "csv")?
    } else {
        Vec::new()
    };
    let mut report = StatsReport {
        frames: frames.len(),
        distance_histogram: [vec![0; HISTOGRAM_BINS], vec![0; HISTOGRAM_BINS]],
        ..Default::default()
    };
    for stem in &frames {
        let path = in_dir.join(format!("{stem}.csv"));
        let points = load_hybrid_points(&path, &cfg.features, &cfg.classes)
            .map_err(|e| with_frame(stem, e))?;
        for p in &points {
            let class = p
                .sem
                .map_or("none".to_string(), |s| cfg.classes[s.class()].clone());
            *report
                .counts
                .entry(class)
                .or_default()
                .entry(p.kind.to_string())
                .or_default() += 1;
        }
        let masks_dir = cfg.paths.masks_dir.as_ref().filter(|d| d.is_dir());
        let have_calib = cfg.paths.calib.as_ref().is_some_and(|c| c.exists());
        let (Some(masks_dir), true) = (masks_dir, have_calib) else {
            continue;
        };
        let masks = load_masks(
            masks_dir.join(format!("{stem}.pgm")),
            masks_dir.join(format!("{stem}.json")),
            &cfg.classes,
            cfg.drop_unknown_classes,
        )?;
        let calib = cfg.calibration_for(stem)?;
        let fore: Vec<[f64; 2]> = points
            .iter()
            .filter(|p| p.kind == PointKind::Foreground)
            .filter_map(|p| calib.project(p.position).ok())
            .map(|q| [q.u, q.v])
            .collect();
        let mut per_instance: BTreeMap<u16, usize> = BTreeMap::new();
        for p in points.iter().filter(|p| p.kind.is_generated()) {
            let Ok(q) = calib.project(p.position) else {
                continue;
            };
            let id = masks.query(q.u, q.v);
            if id != BACKGROUND {
                *per_instance.entry(id).or_default() += 1;
            }
            let nearest = fore
                .iter()
                .map(|f| ((f[0] - q.u).powi(2) + (f[1] - q.v).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                let bin = ((nearest / HISTOGRAM_BIN_PX) as usize).min(HISTOGRAM_BINS - 1);
                let which = usize::from(p.kind == PointKind::Uniform);
                report.distance_histogram[which][bin] += 1;
            }
        }
        for id in masks.instance_ids() {
            let area = masks.mask_area(id)?;
            let generated = per_instance.get(&id).copied().unwrap_or(0);
            report.density.push(MaskDensity {
                frame: stem.clone(),
                instance: id,
                class: cfg.classes[masks.class_of(id)?].clone(),
                area,
                generated,
                per_kilopixel: if area == 0 {
                    0.0
                } else {
                    1000.0 * generated as f64 / area as f64
                },
            });
        }
    }

    let dir = cfg.paths.output_dir.join("stats");
    create_dir(&dir)?;
    let mut counts = String::from("class,kind,count\n");
    for (class, kinds) in &report.counts {
        for (kind, n) in kinds {
            counts.push_str(&format!("{class},{kind},{n}\n"));
        }
    }
    let mut density = String::from("frame,instance,class,area,generated,per_kilopixel\n");
    for d in &report.density {
        density.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.frame, d.instance, d.class, d.area, d.generated, d.per_kilopixel
        ));
    }
    let mut hist = String::from("bin_lo_px,bin_hi_px,gaussian,uniform\n");
    for b in 0..HISTOGRAM_BINS {
        let lo = b as f64 * HISTOGRAM_BIN_PX;
        let hi = if b + 1 == HISTOGRAM_BINS {
            "inf".to_string()
        } else {
            ((b + 1) as f64 * HISTOGRAM_BIN_PX).to_string()
        };
        hist.push_str(&format!(
            "{lo},{hi},{},{}\n",
            report.distance_histogram[0][b], report.distance_histogram[1][b]
        ));
    }
    for (name, text) in [
        ("counts.csv", counts),
        ("density.csv", density),
        ("histogram.csv", hist),
    ] {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    write_json(&dir.join("stats.json"), &report)?;
    Ok(report)
}
