//! Seeded synthetic scenes: box targets seen by a radar with direction-of-
//! arrival error, plus the instance masks and calibration a camera would
//! give for the same scene.
//!
//! True returns are sampled on the sensor-facing vertical faces of each box.
//! Each return is converted to (range, azimuth, elevation), perturbed with
//! zero-mean Gaussian errors and converted back, which smears points
//! laterally by roughly `range · angle_error_std`. Masks are the image-space
//! bounding rectangles of each box's projected corners, painted far to near
//! so closer targets occlude farther ones.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsm::BevBox;
use crate::encoding::GridConfig;
use crate::error::{Error, Result};
use crate::geometry::{Calibration, Extrinsic, Intrinsic, RadarPoint};
use crate::masks::{InstanceId, InstanceMaskSet};
use crate::points::write_raw_points;

fn default_angle_std() -> f64 {
    0.02
}
fn default_width() -> usize {
    1280
}
fn default_height() -> usize {
    720
}
fn default_classes() -> Vec<String> {
    ["car", "pedestrian", "cyclist"].map(String::from).to_vec()
}
fn default_features() -> Vec<String> {
    ["rcs", "v_r", "v_abs"].map(String::from).to_vec()
}
fn default_pcr() -> GridConfig {
    GridConfig::vod()
}
fn default_points() -> usize {
    20
}

/// One box-shaped target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub class: String,
    #[serde(flatten)]
    pub bev: BevBox,
    #[serde(default)]
    pub z_min: f64,
    pub height: f64,
    /// True surface returns to sample.
    #[serde(default = "default_points")]
    pub points: usize,
}

/// Row-major calibration matrices as they appear in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub intrinsic: [[f64; 4]; 3],
    pub extrinsic: [[f64; 4]; 4],
}

impl CalibrationSpec {
    /// Camera 0.5 m above the radar, looking along radar +x, with
    /// `f = 1000 px` and the principal point at the image center.
    pub fn default_rig(width: usize, height: usize) -> Self {
        Self {
            intrinsic: [
                [1000.0, 0.0, width as f64 / 2.0, 0.0],
                [0.0, 1000.0, height as f64 / 2.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            extrinsic: [
                [0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, 0.5],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn build(&self) -> Result<Calibration> {
        Ok(Calibration::new(
            Intrinsic::from_rows(self.intrinsic)?,
            Extrinsic::from_rows(self.extrinsic)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub targets: Vec<Target>,
    /// Azimuth error std, radians.
    #[serde(default = "default_angle_std")]
    pub angle_error_std: f64,
    /// Range error std, meters.
    #[serde(default)]
    pub range_error_std: f64,
    /// Elevation error std, radians. Off by default.
    #[serde(default)]
    pub elevation_error_std: f64,
    /// Uniform background returns inside the point cloud range.
    #[serde(default)]
    pub clutter_points: usize,
    #[serde(default = "default_width")]
    pub image_width: usize,
    #[serde(default = "default_height")]
    pub image_height: usize,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default = "default_classes")]
    pub class_names: Vec<String>,
    #[serde(default = "default_features")]
    pub feature_names: Vec<String>,
    #[serde(default = "default_pcr")]
    pub pcr: GridConfig,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(targets: Vec<Target>) -> Self {
        Self {
            targets,
            angle_error_std: default_angle_std(),
            range_error_std: 0.0,
            elevation_error_std: 0.0,
            clutter_points: 0,
            image_width: default_width(),
            image_height: default_height(),
            calibration: None,
            class_names: default_classes(),
            feature_names: default_features(),
            pcr: default_pcr(),
            seed: 0,
        }
    }

    pub fn calibration(&self) -> Result<Calibration> {
        self.calibration
            .clone()
            .unwrap_or_else(|| CalibrationSpec::default_rig(self.image_width, self.image_height))
            .build()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("angle_error_std", self.angle_error_std),
            ("range_error_std", self.range_error_std),
            ("elevation_error_std", self.elevation_error_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        self.pcr.validate()?;
        for (k, t) in self.targets.iter().enumerate() {
            if !self.class_names.contains(&t.class) {
                return Err(Error::Config(format!(
                    "target {k}: unknown class `{}`",
                    t.class
                )));
            }
            let b = &t.bev;
            if !(b.length > 0.0 && b.width > 0.0 && t.height > 0.0) {
                return Err(Error::Config(format!(
                    "target {k}: box extents must be > 0"
                )));
            }
            let p = &self.pcr;
            if !(b.x > p.x_min && b.x < p.x_max && b.y > p.y_min && b.y < p.y_max) {
                return Err(Error::Config(format!(
                    "target {k}: center ({}, {}) outside the point cloud range",
                    b.x, b.y
                )));
            }
        }
        if self.targets.len() > InstanceId::MAX as usize {
            return Err(Error::Config(
                "too many targets for 16-bit instance ids".into(),
            ));
        }
        Ok(())
    }
}

/// A ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub class: String,
    pub instance: InstanceId,
    #[serde(flatten)]
    pub bev: BevBox,
    pub z_min: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    /// Perturbed returns (target returns first, then clutter).
    pub raw: Vec<RadarPoint>,
    /// Pre-perturbation positions, parallel to `raw`.
    pub true_points: Vec<[f64; 3]>,
    /// Source target per raw point; `None` for clutter.
    pub sources: Vec<Option<InstanceId>>,
    pub masks: InstanceMaskSet,
    pub calib: Calibration,
    pub boxes: Vec<GroundTruthBox>,
}

impl SyntheticFrame {
    /// Writes `points/<stem>.csv`, `masks/<stem>.pgm`, `masks/<stem>.json`,
    /// `calib/<stem>.txt` and `gt/<stem>.json` under `root`.
    pub fn save(&self, root: &Path, stem: &str, feature_names: &[String]) -> Result<()> {
        for sub in ["points", "masks", "calib", "gt"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let mut buf = Vec::new();
        write_raw_points(&mut buf, &self.raw, feature_names)?;
        let p = root.join("points").join(format!("{stem}.csv"));
        std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
        self.masks.save(
            root.join("masks").join(format!("{stem}.pgm")),
            root.join("masks").join(format!("{stem}.json")),
        )?;
        self.calib
            .save(root.join("calib").join(format!("{stem}.txt")))?;
        let gt = GroundTruthFile {
            boxes: self.boxes.clone(),
            true_points: self.true_points.clone(),
        };
        let p = root.join("gt").join(format!("{stem}.json"));
        let mut text = serde_json::to_string_pretty(&gt).expect("ground truth serializes");
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

/// On-disk ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub boxes: Vec<GroundTruthBox>,
    pub true_points: Vec<[f64; 3]>,
}

/// Sensor-facing vertical faces of a box as `(start, end)` corner pairs.
fn visible_faces(b: &BevBox) -> Vec<([f64; 2], [f64; 2])> {
    let cs = b.corners();
    (0..4)
        .filter_map(|k| {
            let (p, q) = (cs[k], cs[(k + 1) % 4]);
            let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            let normal = [mid[0] - b.x, mid[1] - b.y];
            // sensor at the origin sees faces whose outward normal points back at it
            (normal[0] * mid[0] + normal[1] * mid[1] < 0.0).then_some((p, q))
        })
        .collect()
}

fn sample_surface<R: Rng + ?Sized>(t: &Target, rng: &mut R) -> Vec<[f64; 3]> {
    let mut faces = visible_faces(&t.bev);
    if faces.is_empty() {
        // sensor inside the footprint; fall back to all faces
        let cs = t.bev.corners();
        faces = (0..4).map(|k| (cs[k], cs[(k + 1) % 4])).collect();
    }
    let lens: Vec<f64> = faces
        .iter()
        .map(|(p, q)| ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt())
        .collect();
    let total: f64 = lens.iter().sum();
    (0..t.points)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut k = 0;
            while k + 1 < faces.len() && pick >= lens[k] {
                pick -= lens[k];
                k += 1;
            }
            let (p, q) = faces[k];
            let s = rng.random_range(0.0..1.0);
            let z = t.z_min + rng.random_range(0.0..1.0) * t.height;
            [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1]), z]
        })
        .collect()
}

/// Applies range/azimuth/elevation errors. A zero perturbation returns the
/// input bit-for-bit.
pub fn perturb_polar(p: [f64; 3], d_range: f64, d_azimuth: f64, d_elevation: f64) -> [f64; 3] {
    if d_range == 0.0 && d_azimuth == 0.0 && d_elevation == 0.0 {
        return p;
    }
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r == 0.0 {
        return p;
    }
    let az = p[1].atan2(p[0]) + d_azimuth;
    let el = (p[2] / r).clamp(-1.0, 1.0).asin() + d_elevation;
    let r = r + d_range;
    [
        r * el.cos() * az.cos(),
        r * el.cos() * az.sin(),
        r * el.sin(),
    ]
}

fn box_corners_3d(t: &Target) -> [[f64; 3]; 8] {
    let c = t.bev.corners();
    let mut out = [[0.0; 3]; 8];
    for k in 0..4 {
        out[k] = [c[k][0], c[k][1], t.z_min];
        out[k + 4] = [c[k][0], c[k][1], t.z_min + t.height];
    }
    out
}

/// Simulates one frame. Deterministic in `spec.seed`.
pub fn simulate_scene(spec: &SceneSpec) -> Result<SyntheticFrame> {
    simulate_scene_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

pub fn simulate_scene_with_rng<R: Rng + ?Sized>(
    spec: &SceneSpec,
    rng: &mut R,
) -> Result<SyntheticFrame> {
    spec.validate()?;
    let calib = spec.calibration()?;
    let n_feat = spec.feature_names.len();
    let noise = |std: f64| Normal::new(0.0, std).expect("std validated");
    let (az_n, r_n, el_n) = (
        noise(spec.angle_error_std),
        noise(spec.range_error_std),
        noise(spec.elevation_error_std),
    );
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut raw = Vec::new();
    let mut true_points = Vec::new();
    let mut sources = Vec::new();
    let feats_for = |rng: &mut R| -> Vec<f64> {
        (0..n_feat)
            .map(|k| {
                if k == 0 {
                    rng.random_range(-10.0..20.0)
                } else {
                    0.5 * unit.sample(rng)
                }
            })
            .collect()
    };

    for (k, t) in spec.targets.iter().enumerate() {
        let id = (k + 1) as InstanceId;
        for p in sample_surface(t, rng) {
            let da = az_n.sample(rng);
            let dr = r_n.sample(rng);
            let de = el_n.sample(rng);
            let q = perturb_polar(p, dr, da, de);
            raw.push(RadarPoint::new(q[0], q[1], q[2], feats_for(rng)));
            true_points.push(p);
            sources.push(Some(id));
        }
    }
    let pcr = &spec.pcr;
    for _ in 0..spec.clutter_points {
        let p = [
            rng.random_range(pcr.x_min..pcr.x_max),
            rng.random_range(pcr.y_min..pcr.y_max),
            rng.random_range(-1.0..2.0),
        ];
        raw.push(RadarPoint::new(p[0], p[1], p[2], feats_for(rng)));
        true_points.push(p);
        sources.push(None);
    }

    let (w, h) = (spec.image_width, spec.image_height);
    let mut raster = vec![0 as InstanceId; w * h];
    let mut order: Vec<usize> = (0..spec.targets.len()).collect();
    let dist = |t: &Target| t.bev.x.hypot(t.bev.y);
    order.sort_by(|&a, &b| dist(&spec.targets[b]).total_cmp(&dist(&spec.targets[a])));
    for k in order {
        let t = &spec.targets[k];
        let projected: Option<Vec<_>> = box_corners_3d(t)
            .iter()
            .map(|&c| calib.project(c).ok())
            .collect();
        let Some(projected) = projected else {
            log::debug!("target {k} crosses the image plane; no mask rendered");
            continue;
        };
        let (mut u0, mut v0, mut u1, mut v1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for q in &projected {
            u0 = u0.min(q.u);
            u1 = u1.max(q.u);
            v0 = v0.min(q.v);
            v1 = v1.max(q.v);
        }
        if u1 < 0.0 || v1 < 0.0 || u0 >= w as f64 || v0 >= h as f64 {
            continue;
        }
        let clip = |v: f64, n: usize| v.floor().clamp(0.0, (n - 1) as f64) as usize;
        let id = (k + 1) as InstanceId;
        for y in clip(v0, h)..=clip(v1, h) {
            for x in clip(u0, w)..=clip(u1, w) {
                raster[y * w + x] = id;
            }
        }
    }
    let mut names = std::collections::BTreeMap::new();
    for (k, t) in spec.targets.iter().enumerate() {
        names.insert((k + 1) as InstanceId, t.class.clone());
    }
    let masks =
        InstanceMaskSet::from_named_classes(w, h, raster, &names, &spec.class_names, false)?;
    let boxes = spec
        .targets
        .iter()
        .enumerate()
        .map(|(k, t)| GroundTruthBox {
            class: t.class.clone(),
            instance: (k + 1) as InstanceId,
            bev: t.bev,
            z_min: t.z_min,
            height: t.height,
        })
        .collect();
    Ok(SyntheticFrame {
        raw,
        true_points,
        sources,
        masks,
        calib,
        boxes,
    })
}

/// A two-target street scene used by examples and tests: a car seen
/// obliquely at ~12 m and a pedestrian at ~9 m.
pub fn demo_scene(seed: u64) -> SceneSpec {
    let mut spec = SceneSpec::new(vec![
        Target {
            class: "car".into(),
            bev: BevBox {
                x: 12.0,
                y: 2.5,
                length: 4.2,
                width: 1.8,
                yaw: 0.5,
            },
            z_min: -0.8,
            height: 1.5,
            points: 12,
        },
        Target {
            class: "pedestrian".into(),
            bev: BevBox {
                x: 9.0,
                y: -2.5,
                length: 0.7,
                width: 0.7,
                yaw: 0.0,
            },
            z_min: -0.8,
            height: 1.75,
            points: 4,
        },
    ]);
    spec.clutter_points = 30;
    spec.seed = seed;
    spec
}
