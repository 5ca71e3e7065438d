//! Radar, camera and pixel coordinate transforms.
//!
//! Frames follow the usual automotive/vision split: the radar frame is
//! x-forward, y-left, z-up and the camera frame is z-forward, x-right,
//! y-down. Nothing in here hard-codes that swap; it lives entirely in the
//! extrinsic matrix read from the calibration file.
//!
//! Projection divides `I · (x_C, y_C, z_C, 1)` by the camera depth `z_C`, and
//! back-projection inverts that at a given depth, so
//! `pixel_to_radar(camera_to_pixel(radar_to_camera(p)))` recovers `p`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector4};

use crate::error::{Error, Result};

/// Smallest camera depth accepted by [`camera_to_pixel`], in meters.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Homogeneous rigid transform from the radar frame to the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsic {
    m: Matrix4<f64>,
    inv: Matrix4<f64>,
}

impl Extrinsic {
    /// Builds a transform from a row-major 4×4 matrix.
    ///
    /// The bottom row must be `(0, 0, 0, 1)`. A rotation block that is not
    /// orthonormal is accepted with a warning.
    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        let m = Matrix4::from_fn(|r, c| rows[r][c]);
        if m.row(3)
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| *a != b)
        {
            return Err(Error::InvalidCalibration(format!(
                "extrinsic bottom row must be (0,0,0,1), got {:?}",
                rows[3]
            )));
        }
        let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let gram = rot.transpose() * rot - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL {
            log::warn!(
                "extrinsic rotation block is not orthonormal (max |RᵀR - I| = {:.3e})",
                gram.amax()
            );
        }
        let inv = m.try_inverse().ok_or(Error::SingularExtrinsic)?;
        Ok(Self { m, inv })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix4::identity(),
            inv: Matrix4::identity(),
        }
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[(r, c)];
            }
        }
        out
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.m * Vector4::new(p[0], p[1], p[2], 1.0);
        [h[0], h[1], h[2]]
    }

    pub fn inverse_transform(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.inv * Vector4::new(p[0], p[1], p[2], 1.0);
        [h[0], h[1], h[2]]
    }
}

/// Pinhole projection matrix (3×4, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsic {
    m: [[f64; 4]; 3],
}

impl Intrinsic {
    pub fn from_rows(m: [[f64; 4]; 3]) -> Result<Self> {
        if !(m[0][0] > 0.0 && m[1][1] > 0.0) {
            return Err(Error::InvalidCalibration(format!(
                "intrinsic focal lengths must be positive (fx = {}, fy = {})",
                m[0][0], m[1][1]
            )));
        }
        Ok(Self { m })
    }

    /// Plain pinhole with no skew and no extra column.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::from_rows([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    pub fn rows(&self) -> [[f64; 4]; 3] {
        self.m
    }
}

/// A raw radar return in the radar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub feats: Vec<f64>,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, feats: Vec<f64>) -> Self {
        Self { x, y, z, feats }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Continuous pixel coordinates plus camera depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth `z_C`, meters.
    pub d: f64,
}

/// A radar point projected into the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub d: f64,
    pub feats: Vec<f64>,
}

pub fn radar_to_camera(p: [f64; 3], t: &Extrinsic) -> [f64; 3] {
    t.transform(p)
}

/// Projects a camera-frame point. Fails with [`Error::BehindCamera`] when
/// `z_C <= BEHIND_CAMERA_EPS`.
pub fn camera_to_pixel(p_c: [f64; 3], i: &Intrinsic) -> Result<PixelDepth> {
    let z = p_c[2];
    // `!(z > eps)` so NaN depth is rejected too
    if z.is_nan() || z <= BEHIND_CAMERA_EPS {
        return Err(Error::BehindCamera { z });
    }
    let m = &i.m;
    let row = |r: usize| m[r][0] * p_c[0] + m[r][1] * p_c[1] + m[r][2] * p_c[2] + m[r][3];
    Ok(PixelDepth {
        u: row(0) / z,
        v: row(1) / z,
        d: z,
    })
}

/// Inverts the pinhole model at depth `q.d`, then maps back to the radar
/// frame.
pub fn pixel_to_radar(q: PixelDepth, i: &Intrinsic, t: &Extrinsic) -> Result<[f64; 3]> {
    let m = &i.m;
    let k = Matrix3::from_fn(|r, c| m[r][c]);
    if k.determinant().abs() < f64::EPSILON {
        return Err(Error::SingularIntrinsic);
    }
    // With z_C = d fixed, the first two rows give a 2×2 system in (x_C, y_C):
    //   m00 x + m01 y = d (u - m02) - m03
    //   m10 x + m11 y = d (v - m12) - m13
    let d = q.d;
    let (a, b, c, e) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let det = a * e - b * c;
    if det.abs() < f64::EPSILON {
        return Err(Error::SingularIntrinsic);
    }
    let r0 = d * (q.u - m[0][2]) - m[0][3];
    let r1 = d * (q.v - m[1][2]) - m[1][3];
    let x = (e * r0 - b * r1) / det;
    let y = (a * r1 - c * r0) / det;
    Ok(t.inverse_transform([x, y, d]))
}

/// Intrinsic and extrinsic pair for one radar/camera rig.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub intrinsic: Intrinsic,
    pub extrinsic: Extrinsic,
}

impl Calibration {
    pub fn new(intrinsic: Intrinsic, extrinsic: Extrinsic) -> Self {
        Self {
            intrinsic,
            extrinsic,
        }
    }

    /// Radar frame straight to pixel coordinates and depth.
    pub fn project(&self, p: [f64; 3]) -> Result<PixelDepth> {
        camera_to_pixel(radar_to_camera(p, &self.extrinsic), &self.intrinsic)
    }

    pub fn project_point(&self, p: &RadarPoint) -> Result<ImagePoint> {
        let px = self.project(p.position())?;
        Ok(ImagePoint {
            u: px.u,
            v: px.v,
            d: px.d,
            feats: p.feats.clone(),
        })
    }

    pub fn unproject(&self, q: PixelDepth) -> Result<[f64; 3]> {
        pixel_to_radar(q, &self.intrinsic, &self.extrinsic)
    }

    /// Parses the two-line `intrinsic:` / `extrinsic:` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut intrinsic = None;
        let mut extrinsic = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = || format!("calibration line {}", lineno + 1);
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(ctx(), "expected `key: values`"))?;
            let values = rest
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(ctx(), e))?;
            match key.trim() {
                "intrinsic" => {
                    if values.len() != 12 {
                        return Err(Error::parse(
                            ctx(),
                            format!("intrinsic needs 12 values, got {}", values.len()),
                        ));
                    }
                    let mut m = [[0.0; 4]; 3];
                    for (k, v) in values.into_iter().enumerate() {
                        m[k / 4][k % 4] = v;
                    }
                    intrinsic = Some(Intrinsic::from_rows(m)?);
                }
                "extrinsic" => {
                    if values.len() != 16 {
                        return Err(Error::parse(
                            ctx(),
                            format!("extrinsic needs 16 values, got {}", values.len()),
                        ));
                    }
                    let mut m = [[0.0; 4]; 4];
                    for (k, v) in values.into_iter().enumerate() {
                        m[k / 4][k % 4] = v;
                    }
                    extrinsic = Some(Extrinsic::from_rows(m)?);
                }
                other => {
                    return Err(Error::parse(ctx(), format!("unknown key `{other}`")));
                }
            }
        }
        match (intrinsic, extrinsic) {
            (Some(intrinsic), Some(extrinsic)) => Ok(Self::new(intrinsic, extrinsic)),
            (None, _) => Err(Error::parse("calibration", "missing `intrinsic:` line")),
            (_, None) => Err(Error::parse("calibration", "missing `extrinsic:` line")),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { context, message } => Error::Parse {
                context: format!("{}: {context}", path.display()),
                message,
            },
            other => other,
        })
    }

    /// Serializes with shortest round-trip float formatting, so
    /// `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("intrinsic:");
        for row in self.intrinsic.rows() {
            for v in row {
                let _ = write!(s, " {v:?}");
            }
        }
        s.push_str("\nextrinsic:");
        for row in self.extrinsic.rows() {
            for v in row {
                let _ = write!(s, " {v:?}");
            }
        }
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
