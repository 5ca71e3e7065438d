//! Hybrid radar point generation guided by image instance masks.
//!
//! Per frame:
//!
//! 1. Raw radar points are projected into the image; those landing on an
//!    instance become foreground points carrying that instance's one-hot
//!    class.
//! 2. Inside each instance mask, pixels closer than `r` to a foreground
//!    point of the same instance form its vicinity. The vicinity is sampled
//!    with an axis-aligned Gaussian around each foreground point, the rest of
//!    the mask (the complement) uniformly.
//! 3. Each generated pixel copies depth, physical features and class from
//!    its nearest foreground point and is back-projected to the radar frame.
//!
//! Sampling uses fixed counts per mask (`n_gauss` and `n_uniform`) rather
//! than one normalized mixture density. Both branches are rejection
//! samplers with a per-sample attempt cap; a short count is reported in
//! [`GenerationReport`] and never fails the frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Calibration, PixelDepth, RadarPoint};
use crate::masks::{InstanceId, InstanceMaskSet, SemanticFeature, BACKGROUND};

pub const DEFAULT_SEED: u64 = 0x5EED_2024;

fn default_radius() -> f64 {
    51.0
}
fn default_n_gauss() -> usize {
    50
}
fn default_n_uniform() -> usize {
    200
}
fn default_max_attempts() -> usize {
    100
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_true() -> bool {
    true
}

/// Generation hyperparameters. Defaults are `r = 51`, 50 Gaussian and 200
/// uniform points per mask, `b1 = b2 = r / 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenParams {
    /// Vicinity radius in pixels.
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Gaussian std along u; `None` means `radius / 3`.
    #[serde(default)]
    pub sigma_u: Option<f64>,
    /// Gaussian std along v; `None` means `radius / 3`.
    #[serde(default)]
    pub sigma_v: Option<f64>,
    #[serde(default = "default_n_gauss")]
    pub n_gauss: usize,
    #[serde(default = "default_n_uniform")]
    pub n_uniform: usize,
    /// Rejection attempts per requested sample.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Reject Gaussian samples that land in the mask but outside the
    /// anchor's vicinity disk.
    #[serde(default = "default_true")]
    pub reject_outside_vicinity: bool,
    /// When set, instances without foreground points still get `n_uniform`
    /// points over the whole mask at this depth, with zeroed features.
    #[serde(default)]
    pub unanchored_depth: Option<f64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            radius: default_radius(),
            sigma_u: None,
            sigma_v: None,
            n_gauss: default_n_gauss(),
            n_uniform: default_n_uniform(),
            max_attempts: default_max_attempts(),
            seed: DEFAULT_SEED,
            reject_outside_vicinity: true,
            unanchored_depth: None,
        }
    }
}

impl GenParams {
    pub fn sigma_u(&self) -> f64 {
        self.sigma_u.unwrap_or(self.radius / 3.0)
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v.unwrap_or(self.radius / 3.0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.radius) {
            return Err(Error::Config(format!(
                "radius must be > 0, got {}",
                self.radius
            )));
        }
        if !positive(self.sigma_u()) || !positive(self.sigma_v()) {
            return Err(Error::Config(format!(
                "gaussian std must be > 0, got ({}, {})",
                self.sigma_u(),
                self.sigma_v()
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        if let Some(d) = self.unanchored_depth {
            if !positive(d) {
                return Err(Error::Config(format!(
                    "unanchored_depth must be > 0, got {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Per-frame seed: FNV-1a of the frame id folded into the global seed and
/// finished with a SplitMix64 round.
pub fn frame_seed(global_seed: u64, frame_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in frame_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = global_seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A raw point whose projection lands on an instance mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundPoint {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub feats: Vec<f64>,
    pub sem: SemanticFeature,
    pub instance: InstanceId,
    /// Position in the radar frame.
    pub position: [f64; 3],
    /// Index into the frame's raw points.
    pub raw_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationKind {
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Sampled pixel, before back-projection.
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub feats: Vec<f64>,
    pub sem: SemanticFeature,
    pub origin: GenerationKind,
    pub instance: InstanceId,
    /// Foreground point the attributes were copied from. `None` only for
    /// unanchored uniform points.
    pub source: Option<usize>,
}

impl GeneratedPoint {
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Requested vs. produced counts for one instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: InstanceId,
    pub foreground: usize,
    pub gaussian: usize,
    pub uniform: usize,
    pub gaussian_shortfall: usize,
    pub uniform_shortfall: usize,
    /// Uniform branch fell back to the whole mask.
    pub fallback: bool,
    /// Skipped for lack of foreground points.
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub instances: Vec<InstanceReport>,
}

impl GenerationReport {
    pub fn gaussian_shortfall(&self) -> usize {
        self.instances.iter().map(|i| i.gaussian_shortfall).sum()
    }

    pub fn uniform_shortfall(&self) -> usize {
        self.instances.iter().map(|i| i.uniform_shortfall).sum()
    }
}

/// Raw, foreground and generated points of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridPointSet {
    pub raw: Vec<RadarPoint>,
    pub foreground: Vec<ForegroundPoint>,
    pub generated: Vec<GeneratedPoint>,
    pub report: GenerationReport,
}

impl HybridPointSet {
    pub fn count(&self, kind: GenerationKind) -> usize {
        self.generated.iter().filter(|g| g.origin == kind).count()
    }
}

/// Everything generation needs for a frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub raw: Vec<RadarPoint>,
    pub calib: Calibration,
    pub masks: InstanceMaskSet,
}

/// Projects every raw point and keeps those in front of the camera that
/// land on a nonzero instance.
pub fn select_foreground(
    raw: &[RadarPoint],
    calib: &Calibration,
    masks: &InstanceMaskSet,
) -> Vec<ForegroundPoint> {
    raw.iter()
        .enumerate()
        .filter_map(|(raw_index, p)| {
            let px = calib.project(p.position()).ok()?;
            let instance = masks.query(px.u, px.v);
            if instance == BACKGROUND {
                return None;
            }
            let sem = masks.semantic(instance).ok()?;
            Some(ForegroundPoint {
                u: px.u,
                v: px.v,
                d: px.d,
                feats: p.feats.clone(),
                sem,
                instance,
                position: p.position(),
                raw_index,
            })
        })
        .collect()
}

#[inline]
fn dist2(u: f64, v: f64, fu: f64, fv: f64) -> f64 {
    (u - fu) * (u - fu) + (v - fv) * (v - fv)
}

/// True iff `(u, v)` is strictly closer than `r` to some foreground point of
/// `instance`.
pub fn in_vicinity(fore: &[ForegroundPoint], instance: InstanceId, u: f64, v: f64, r: f64) -> bool {
    let r2 = r * r;
    fore.iter()
        .any(|f| f.instance == instance && dist2(u, v, f.u, f.v) < r2)
}

/// Result of one rejection-sampling call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Draw {
    pub pixels: Vec<[f64; 2]>,
    pub shortfall: usize,
    pub fallback: bool,
}

/// Draws up to `count` pixels from a Gaussian centered on `anchor`,
/// truncated to the anchor's instance mask and (by default) its vicinity
/// disk.
pub fn sample_gaussian<R: Rng + ?Sized>(
    anchor: &ForegroundPoint,
    count: usize,
    params: &GenParams,
    masks: &InstanceMaskSet,
    rng: &mut R,
) -> Draw {
    let (bu, bv) = (params.sigma_u(), params.sigma_v());
    let r2 = params.radius * params.radius;
    let mut draw = Draw::default();
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..params.max_attempts {
            let du: f64 = StandardNormal.sample(rng);
            let dv: f64 = StandardNormal.sample(rng);
            let (u, v) = (anchor.u + bu * du, anchor.v + bv * dv);
            if masks.query(u, v) != anchor.instance {
                continue;
            }
            if params.reject_outside_vicinity && dist2(u, v, anchor.u, anchor.v) >= r2 {
                continue;
            }
            accepted = Some([u, v]);
            break;
        }
        match accepted {
            Some(px) => draw.pixels.push(px),
            None => draw.shortfall += 1,
        }
    }
    draw
}

/// Whether some pixel center of `instance` lies outside every vicinity.
///
/// This is the test that selects between complement sampling and the
/// whole-mask fallback.
pub fn complement_nonempty(
    instance: InstanceId,
    masks: &InstanceMaskSet,
    fore: &[ForegroundPoint],
    r: f64,
) -> Result<bool> {
    let Some(b) = masks.bounding_box(instance)? else {
        return Ok(false);
    };
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            if masks.query(u, v) == instance && !in_vicinity(fore, instance, u, v, r) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Uniform rejection sampling inside the instance mask, accepting pixels
/// outside every same-instance vicinity. When no such region exists the
/// whole mask is sampled instead and [`Draw::fallback`] is set.
///
/// Proposals are uniform over the mask pixels not wholly contained in a
/// single vicinity disk. The pixels left out lie entirely inside the
/// vicinity, so accepted samples are still uniform over the complement.
pub fn sample_uniform<R: Rng + ?Sized>(
    instance: InstanceId,
    count: usize,
    masks: &InstanceMaskSet,
    fore: &[ForegroundPoint],
    params: &GenParams,
    rng: &mut R,
) -> Result<Draw> {
    let mut draw = Draw::default();
    let Some(b) = masks.bounding_box(instance)? else {
        draw.shortfall = count;
        return Ok(draw);
    };
    let avoid_vicinity = complement_nonempty(instance, masks, fore, params.radius)?;
    draw.fallback = !avoid_vicinity;
    let anchors: Vec<&ForegroundPoint> = fore.iter().filter(|f| f.instance == instance).collect();
    let r2 = params.radius * params.radius;
    let mut cells = Vec::new();
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            if masks.query(x as f64 + 0.5, y as f64 + 0.5) != instance {
                continue;
            }
            let (x0, y0) = (x as f64, y as f64);
            // a square lies inside an open disk iff its farthest corner does
            let covered = avoid_vicinity
                && anchors.iter().any(|f| {
                    let dx = (x0 - f.u).abs().max((x0 + 1.0 - f.u).abs());
                    let dy = (y0 - f.v).abs().max((y0 + 1.0 - f.v).abs());
                    dx * dx + dy * dy < r2
                });
            if !covered {
                cells.push((x0, y0));
            }
        }
    }
    if cells.is_empty() {
        draw.shortfall = count;
        return Ok(draw);
    }
    for _ in 0..count {
        let mut accepted = None;
        for _ in 0..params.max_attempts {
            let (x0, y0) = cells[rng.random_range(0..cells.len())];
            let u = x0 + rng.random::<f64>();
            let v = y0 + rng.random::<f64>();
            if masks.query(u, v) != instance {
                continue;
            }
            if avoid_vicinity && in_vicinity(fore, instance, u, v, params.radius) {
                continue;
            }
            accepted = Some([u, v]);
            break;
        }
        match accepted {
            Some(px) => draw.pixels.push(px),
            None => draw.shortfall += 1,
        }
    }
    Ok(draw)
}

/// Index of the foreground point nearest to `(u, v)`; ties go to the lowest
/// index.
pub fn nearest_foreground(fore: &[ForegroundPoint], u: f64, v: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, f) in fore.iter().enumerate() {
        let d = dist2(u, v, f.u, f.v);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// A generated pixel with attributes copied from a foreground point.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedPixel {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub feats: Vec<f64>,
    pub sem: SemanticFeature,
    /// Index into the foreground slice passed to [`assign_attributes`].
    pub source: usize,
}

/// Copies depth, features and class of the nearest foreground point onto
/// each pixel.
pub fn assign_attributes(
    pixels: &[[f64; 2]],
    fore: &[ForegroundPoint],
) -> Result<Vec<AssignedPixel>> {
    if fore.is_empty() {
        return Err(Error::NoForeground);
    }
    Ok(pixels
        .iter()
        .map(|&[u, v]| {
            let k = nearest_foreground(fore, u, v).expect("foreground is nonempty");
            let f = &fore[k];
            AssignedPixel {
                u,
                v,
                d: f.d,
                feats: f.feats.clone(),
                sem: f.sem,
                source: k,
            }
        })
        .collect())
}

/// Runs the full generation for one frame with the RNG seeded from
/// `params.seed`.
pub fn generate_hybrid(frame: &Frame, params: &GenParams) -> Result<HybridPointSet> {
    generate_hybrid_with_rng(frame, params, &mut params.rng())
}

pub fn generate_hybrid_with_rng<R: Rng + ?Sized>(
    frame: &Frame,
    params: &GenParams,
    rng: &mut R,
) -> Result<HybridPointSet> {
    params.validate()?;
    let feat_len = frame.raw.first().map_or(0, |p| p.feats.len());
    if let Some((k, p)) = frame
        .raw
        .iter()
        .enumerate()
        .find(|(_, p)| p.feats.len() != feat_len)
    {
        return Err(Error::SchemaMismatch(format!(
            "raw point {k} has {} features, expected {feat_len}",
            p.feats.len()
        )));
    }

    let masks = &frame.masks;
    let foreground = select_foreground(&frame.raw, &frame.calib, masks);
    let mut generated = Vec::new();
    let mut report = GenerationReport::default();

    for instance in masks.instance_ids() {
        let members: Vec<usize> = foreground
            .iter()
            .enumerate()
            .filter(|(_, f)| f.instance == instance)
            .map(|(k, _)| k)
            .collect();
        let local: Vec<ForegroundPoint> = members.iter().map(|&k| foreground[k].clone()).collect();
        let mut rep = InstanceReport {
            instance,
            foreground: local.len(),
            ..Default::default()
        };

        if local.is_empty() {
            match params.unanchored_depth {
                None => {
                    rep.skipped = true;
                }
                Some(depth) => {
                    let draw = sample_uniform(instance, params.n_uniform, masks, &[], params, rng)?;
                    let sem = masks.semantic(instance)?;
                    for [u, v] in draw.pixels {
                        let [x, y, z] = frame.calib.unproject(PixelDepth { u, v, d: depth })?;
                        generated.push(GeneratedPoint {
                            x,
                            y,
                            z,
                            u,
                            v,
                            d: depth,
                            feats: vec![0.0; feat_len],
                            sem,
                            origin: GenerationKind::Uniform,
                            instance,
                            source: None,
                        });
                        rep.uniform += 1;
                    }
                    rep.uniform_shortfall = draw.shortfall;
                }
            }
            report.instances.push(rep);
            continue;
        }

        // Gaussian samples are spread round-robin over the anchors.
        let k = local.len();
        let mut gauss_pixels = Vec::with_capacity(params.n_gauss);
        for (j, anchor) in local.iter().enumerate() {
            let quota = params.n_gauss / k + usize::from(j < params.n_gauss % k);
            if quota == 0 {
                continue;
            }
            let draw = sample_gaussian(anchor, quota, params, masks, rng);
            rep.gaussian_shortfall += draw.shortfall;
            gauss_pixels.extend(draw.pixels);
        }
        let uni = sample_uniform(instance, params.n_uniform, masks, &local, params, rng)?;
        rep.uniform_shortfall = uni.shortfall;
        rep.fallback = uni.fallback;

        for (kind, pixels) in [
            (GenerationKind::Gaussian, &gauss_pixels),
            (GenerationKind::Uniform, &uni.pixels),
        ] {
            for a in assign_attributes(pixels, &local)? {
                let [x, y, z] = frame.calib.unproject(PixelDepth {
                    u: a.u,
                    v: a.v,
                    d: a.d,
                })?;
                generated.push(GeneratedPoint {
                    x,
                    y,
                    z,
                    u: a.u,
                    v: a.v,
                    d: a.d,
                    feats: a.feats,
                    sem: a.sem,
                    origin: kind,
                    instance,
                    source: Some(members[a.source]),
                });
            }
        }
        rep.gaussian = gauss_pixels.len();
        rep.uniform = uni.pixels.len();
        if rep.gaussian_shortfall + rep.uniform_shortfall > 0 {
            log::debug!(
                "instance {instance}: rejection shortfall gaussian={} uniform={}",
                rep.gaussian_shortfall,
                rep.uniform_shortfall
            );
        }
        report.instances.push(rep);
    }

    Ok(HybridPointSet {
        raw: frame.raw.clone(),
        foreground,
        generated,
        report,
    })
}
