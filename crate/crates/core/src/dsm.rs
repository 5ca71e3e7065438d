//! Forward math of the dual-sync fusion block over dense BEV feature maps.
//!
//! Spatial sync predicts an object-presence pattern from radar features,
//! `S = σ(conv(atrous_conv(F_R)))`, and scales every image channel by it.
//! Modality sync concatenates radar and enhanced image channels, mixes them
//! with a convolution, and gates each channel with a weight predicted from
//! its global average:
//!
//! ```text
//! F_concat = conv(F_R ‖ F'_I)
//! V        = σ(conv1x1(avg_pool(F_concat)))
//! F[c]     = V[c] · F_concat[c]
//! ```
//!
//! Weights are supplied (the `DSMW` file) or drawn from a seeded RNG; there
//! is no training here. Also provides box-rasterized ground truth for the
//! spatial pattern and the focal loss that supervises it.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::GridConfig;
use crate::error::{Error, Result};

/// Dense `C × X × Y` map, y innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    x: usize,
    y: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, x: usize, y: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || x == 0 || y == 0 {
            return Err(Error::DimMismatch(format!(
                "feature map dims must be > 0, got {c}×{x}×{y}"
            )));
        }
        if data.len() != c * x * y {
            return Err(Error::DimMismatch(format!(
                "feature map data has {} values, expected {c}×{x}×{y}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::DimMismatch(format!(
                "feature map holds non-finite value {v}"
            )));
        }
        Ok(Self { c, x, y, data })
    }

    pub fn zeros(c: usize, x: usize, y: usize) -> Self {
        Self {
            c,
            x,
            y,
            data: vec![0.0; c * x * y],
        }
    }

    pub fn from_fn(
        c: usize,
        x: usize,
        y: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(c * x * y);
        for ci in 0..c {
            for xi in 0..x {
                for yi in 0..y {
                    data.push(f(ci, xi, yi));
                }
            }
        }
        Self { c, x, y, data }
    }

    pub fn random<R: Rng + ?Sized>(c: usize, x: usize, y: usize, rng: &mut R) -> Self {
        Self::from_fn(c, x, y, |_, _, _| rng.random_range(-1.0..1.0))
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.x, self.y)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.x + x) * self.y + y]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.x * self.y;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// `FMAP` bytes: magic, u32 LE `C, X, Y`, then f32 LE values.
    pub fn to_fmap(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(b"FMAP");
        for d in [self.c, self.x, self.y] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_fmap(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::parse("fmap", m);
        if bytes.len() < 16 || &bytes[..4] != b"FMAP" {
            return Err(err("missing FMAP header"));
        }
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (c, x, y) = (u(4), u(8), u(12));
        if bytes.len() != 16 + 4 * c * x * y {
            return Err(err("size does not match header dims"));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::new(c, x, y, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_fmap()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_fmap(&bytes).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }
}

/// Convolution weights `out × in × kh × kw` (row-major) plus one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_c: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub dilation: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        dilation: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let k = Self {
            out_c,
            in_c,
            kh,
            kw,
            dilation,
            weights,
            bias,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_c == 0 || self.in_c == 0 {
            return Err(Error::DimMismatch(
                "kernel channel counts must be > 0".into(),
            ));
        }
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(Error::DimMismatch(format!(
                "kernel size must be odd, got {}×{}",
                self.kh, self.kw
            )));
        }
        if self.dilation == 0 {
            return Err(Error::DimMismatch("dilation must be >= 1".into()));
        }
        if self.weights.len() != self.out_c * self.in_c * self.kh * self.kw {
            return Err(Error::DimMismatch(format!(
                "kernel has {} weights, expected {}×{}×{}×{}",
                self.weights.len(),
                self.out_c,
                self.in_c,
                self.kh,
                self.kw
            )));
        }
        if self.bias.len() != self.out_c {
            return Err(Error::DimMismatch(format!(
                "kernel has {} biases, expected {}",
                self.bias.len(),
                self.out_c
            )));
        }
        Ok(())
    }

    pub fn zeros(out_c: usize, in_c: usize, kh: usize, kw: usize, dilation: usize) -> Self {
        Self {
            out_c,
            in_c,
            kh,
            kw,
            dilation,
            weights: vec![0.0; out_c * in_c * kh * kw],
            bias: vec![0.0; out_c],
        }
    }

    /// Channel-preserving kernel whose center tap is 1.
    pub fn identity(channels: usize, kh: usize, kw: usize) -> Self {
        let mut k = Self::zeros(channels, channels, kh, kw, 1);
        for c in 0..channels {
            let idx = k.index(c, c, kh / 2, kw / 2);
            k.weights[idx] = 1.0;
        }
        k
    }

    /// Uniform in `±1/√fan_in`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        out_c: usize,
        in_c: usize,
        kh: usize,
        kw: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_c * kh * kw) as f64).sqrt();
        let mut k = Self::zeros(out_c, in_c, kh, kw, dilation);
        k.weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        k
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, a: usize, b: usize) -> usize {
        ((o * self.in_c + i) * self.kh + a) * self.kw + b
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, a: usize, b: usize) -> f64 {
        self.weights[self.index(o, i, a, b)]
    }
}

/// Same-size cross-correlation with zero padding `⌊k/2⌋·dilation`.
///
/// Each output is `bias + Σ w·x` accumulated in (in-channel, row, column)
/// order; channels run in parallel without changing that order.
pub fn conv2d(fm: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    k.validate()?;
    if k.in_c != fm.c {
        return Err(Error::DimMismatch(format!(
            "kernel expects {} input channels, map has {}",
            k.in_c, fm.c
        )));
    }
    let (nx, ny) = (fm.x, fm.y);
    let (ph, pw) = (
        (k.kh / 2 * k.dilation) as isize,
        (k.kw / 2 * k.dilation) as isize,
    );
    let mut data = vec![0.0; k.out_c * nx * ny];
    data.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.iter_mut().for_each(|v| *v = k.bias[o]);
            for i in 0..k.in_c {
                let src = fm.channel(i);
                for a in 0..k.kh {
                    let dx = a as isize * k.dilation as isize - ph;
                    for b in 0..k.kw {
                        let dy = b as isize * k.dilation as isize - pw;
                        let w = k.weight(o, i, a, b);
                        // output rows/cols whose tap lands inside the input
                        let x_lo = (-dx).max(0) as usize;
                        let x_hi = (nx as isize - dx).clamp(0, nx as isize) as usize;
                        let y_lo = (-dy).max(0) as usize;
                        let y_hi = (ny as isize - dy).clamp(0, ny as isize) as usize;
                        for x in x_lo..x_hi {
                            let sx = (x as isize + dx) as usize;
                            let out_row = &mut plane[x * ny..(x + 1) * ny];
                            let in_row = &src[sx * ny..(sx + 1) * ny];
                            for y in y_lo..y_hi {
                                out_row[y] += w * in_row[(y as isize + dy) as usize];
                            }
                        }
                    }
                }
            }
        });
    Ok(FeatureMap {
        c: k.out_c,
        x: nx,
        y: ny,
        data,
    })
}

/// Textbook four-loop form of [`conv2d`], kept for self-checks.
pub fn direct_conv2d(fm: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    k.validate()?;
    if k.in_c != fm.c {
        return Err(Error::DimMismatch(format!(
            "kernel expects {} input channels, map has {}",
            k.in_c, fm.c
        )));
    }
    let (ph, pw) = (
        (k.kh / 2 * k.dilation) as isize,
        (k.kw / 2 * k.dilation) as isize,
    );
    Ok(FeatureMap::from_fn(k.out_c, fm.x, fm.y, |o, x, y| {
        let mut acc = k.bias[o];
        for i in 0..k.in_c {
            for a in 0..k.kh {
                for b in 0..k.kw {
                    let sx = x as isize + (a * k.dilation) as isize - ph;
                    let sy = y as isize + (b * k.dilation) as isize - pw;
                    if sx >= 0 && sy >= 0 && (sx as usize) < fm.x && (sy as usize) < fm.y {
                        acc += k.weight(o, i, a, b) * fm.get(i, sx as usize, sy as usize);
                    }
                }
            }
        }
        acc
    }))
}

/// Logistic sigmoid clamped into the open interval `(0, 1)`.
pub fn sigmoid(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Single-channel presence map with every entry in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPattern(FeatureMap);

impl SpatialPattern {
    pub fn new(map: FeatureMap) -> Result<Self> {
        if map.c != 1 {
            return Err(Error::DimMismatch(format!(
                "spatial pattern must have 1 channel, got {}",
                map.c
            )));
        }
        if let Some(v) = map.data.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Invariant(format!(
                "spatial pattern entry {v} outside (0, 1)"
            )));
        }
        Ok(Self(map))
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.0
    }

    pub fn into_map(self) -> FeatureMap {
        self.0
    }
}

pub fn spatial_pattern(
    f_r: &FeatureMap,
    k_atrous: &ConvKernel,
    k_proj: &ConvKernel,
) -> Result<SpatialPattern> {
    if k_proj.out_c != 1 {
        return Err(Error::DimMismatch(format!(
            "projection kernel must have 1 output channel, got {}",
            k_proj.out_c
        )));
    }
    let logits = conv2d(&conv2d(f_r, k_atrous)?, k_proj)?;
    SpatialPattern::new(logits.map(sigmoid))
}

/// Scales every channel of `f_i` by the single-channel map `s`.
///
/// `s` is taken as a raw map (not required to lie in `(0, 1)`), which keeps
/// the operation linear in `s`.
pub fn spatial_sync(s: &FeatureMap, f_i: &FeatureMap) -> Result<FeatureMap> {
    if s.c != 1 || s.x != f_i.x || s.y != f_i.y {
        return Err(Error::DimMismatch(format!(
            "pattern {}×{}×{} cannot broadcast over image map {}×{}×{}",
            s.c, s.x, s.y, f_i.c, f_i.x, f_i.y
        )));
    }
    let n = f_i.x * f_i.y;
    let data = f_i
        .data
        .iter()
        .enumerate()
        .map(|(k, &v)| s.data[k % n] * v)
        .collect();
    Ok(FeatureMap { data, ..*f_i })
}

pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.x != b.x || a.y != b.y {
        return Err(Error::DimMismatch(format!(
            "cannot concatenate {}×{} with {}×{} maps",
            a.x, a.y, b.x, b.y
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(FeatureMap {
        c: a.c + b.c,
        x: a.x,
        y: a.y,
        data,
    })
}

/// Per-channel spatial mean.
pub fn global_avg_pool(fm: &FeatureMap) -> Vec<f64> {
    let n = (fm.x * fm.y) as f64;
    (0..fm.c)
        .map(|c| fm.channel(c).iter().sum::<f64>() / n)
        .collect()
}

/// Per-channel gates, each in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityWeights(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFusion {
    pub concat: FeatureMap,
    pub weights: ModalityWeights,
    pub fused: FeatureMap,
}

pub fn modality_fuse(
    f_r: &FeatureMap,
    f_i_enh: &FeatureMap,
    k_fuse: &ConvKernel,
    k_weight: &ConvKernel,
) -> Result<ModalityFusion> {
    let stacked = concat_channels(f_r, f_i_enh)?;
    let two_c = stacked.c;
    if k_fuse.in_c != two_c || k_fuse.out_c != two_c {
        return Err(Error::DimMismatch(format!(
            "fuse kernel must map {two_c}→{two_c} channels, got {}→{}",
            k_fuse.in_c, k_fuse.out_c
        )));
    }
    if k_weight.kh != 1 || k_weight.kw != 1 || k_weight.in_c != two_c || k_weight.out_c != two_c {
        return Err(Error::DimMismatch(format!(
            "weight kernel must be 1×1 {two_c}→{two_c}, got {}×{} {}→{}",
            k_weight.kh, k_weight.kw, k_weight.in_c, k_weight.out_c
        )));
    }
    let concat = conv2d(&stacked, k_fuse)?;
    let pooled = FeatureMap {
        c: two_c,
        x: 1,
        y: 1,
        data: global_avg_pool(&concat),
    };
    let v: Vec<f64> = conv2d(&pooled, k_weight)?
        .data
        .into_iter()
        .map(sigmoid)
        .collect();
    let n = concat.x * concat.y;
    let data = concat
        .data
        .iter()
        .enumerate()
        .map(|(k, &f)| v[k / n] * f)
        .collect();
    let fused = FeatureMap { data, ..concat };
    Ok(ModalityFusion {
        concat,
        weights: ModalityWeights(v),
        fused,
    })
}

/// The four kernels of the block, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmWeights {
    /// `C → C`, 3×3, dilation 2.
    pub atrous: ConvKernel,
    /// `C → 1`, 3×3.
    pub projection: ConvKernel,
    /// `2C → 2C`, 3×3.
    pub fuse: ConvKernel,
    /// `2C → 2C`, 1×1.
    pub weight: ConvKernel,
}

impl DsmWeights {
    pub fn random<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let c = channels;
        Self {
            atrous: ConvKernel::random(c, c, 3, 3, 2, rng),
            projection: ConvKernel::random(1, c, 3, 3, 1, rng),
            fuse: ConvKernel::random(2 * c, 2 * c, 3, 3, 1, rng),
            weight: ConvKernel::random(2 * c, 2 * c, 1, 1, 1, rng),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        let c = channels;
        Self {
            atrous: ConvKernel::zeros(c, c, 3, 3, 2),
            projection: ConvKernel::zeros(1, c, 3, 3, 1),
            fuse: ConvKernel::zeros(2 * c, 2 * c, 3, 3, 1),
            weight: ConvKernel::zeros(2 * c, 2 * c, 1, 1, 1),
        }
    }

    pub fn kernels(&self) -> [&ConvKernel; 4] {
        [&self.atrous, &self.projection, &self.fuse, &self.weight]
    }

    /// `DSMW` bytes: magic, then per kernel (atrous, projection, fuse,
    /// weight) u32 LE `out, in, kh, kw, dilation`, f32 LE weights, f32 LE
    /// biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"DSMW".to_vec();
        for k in self.kernels() {
            for d in [k.out_c, k.in_c, k.kh, k.kw, k.dilation] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &w in k.weights.iter().chain(&k.bias) {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::parse("dsmw", m);
        if bytes.len() < 4 || &bytes[..4] != b"DSMW" {
            return Err(err("missing DSMW header".into()));
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| err("truncated weight file".into()))?;
            pos += n;
            Ok(s)
        };
        let mut kernels = Vec::with_capacity(4);
        for _ in 0..4 {
            let hdr = take(20)?;
            let d: Vec<usize> = hdr
                .chunks_exact(4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .collect();
            let nw = d[0] * d[1] * d[2] * d[3];
            let vals: Vec<f64> = take(4 * (nw + d[0]))?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            kernels.push(ConvKernel::new(
                d[0],
                d[1],
                d[2],
                d[3],
                d[4],
                vals[..nw].to_vec(),
                vals[nw..].to_vec(),
            )?);
        }
        if pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let mut it = kernels.into_iter();
        let mut next = || it.next().expect("four kernels parsed");
        Ok(Self {
            atrous: next(),
            projection: next(),
            fuse: next(),
            weight: next(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSyncOutput {
    pub pattern: SpatialPattern,
    pub enhanced_image: FeatureMap,
    pub fusion: ModalityFusion,
}

/// Spatial sync followed by modality sync.
pub fn dual_sync(f_r: &FeatureMap, f_i: &FeatureMap, w: &DsmWeights) -> Result<DualSyncOutput> {
    if f_r.dims() != f_i.dims() {
        return Err(Error::DimMismatch(format!(
            "radar map {:?} and image map {:?} differ",
            f_r.dims(),
            f_i.dims()
        )));
    }
    let pattern = spatial_pattern(f_r, &w.atrous, &w.projection)?;
    let enhanced_image = spatial_sync(pattern.as_map(), f_i)?;
    let fusion = modality_fuse(f_r, &enhanced_image, &w.fuse, &w.weight)?;
    Ok(DualSyncOutput {
        pattern,
        enhanced_image,
        fusion,
    })
}

/// Rotated BEV rectangle: center, extent along its heading, extent across
/// it, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevBox {
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub yaw: f64,
}

impl BevBox {
    /// Boundary counts as inside.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.length / 2.0 && across.abs() <= self.width / 2.0
    }

    /// Corners counter-clockwise starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(a, b)| [self.x + a * c - b * s, self.y + a * s + b * c])
    }
}

/// Ground truth for the spatial pattern: 1 where a cell center lies inside
/// any box, else 0. Shape `1 × nx × ny`.
pub fn rasterize_boxes(boxes: &[BevBox], grid: &GridConfig) -> Result<FeatureMap> {
    grid.validate()?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut data = vec![0.0; nx * ny];
    for b in boxes {
        // only scan the cells under the box's axis-aligned hull
        let cs = b.corners();
        let (lo_x, hi_x) = cs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[0]), hi.max(p[0]))
            });
        let (lo_y, hi_y) = cs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[1]), hi.max(p[1]))
            });
        let to_idx = |v: f64, min: f64, n: usize| {
            (((v - min) / grid.cell_size).floor()).clamp(0.0, n as f64) as usize
        };
        let (i0, i1) = (
            to_idx(lo_x, grid.x_min, nx).saturating_sub(1),
            (to_idx(hi_x, grid.x_min, nx) + 1).min(nx),
        );
        let (j0, j1) = (
            to_idx(lo_y, grid.y_min, ny).saturating_sub(1),
            (to_idx(hi_y, grid.y_min, ny) + 1).min(ny),
        );
        for i in i0..i1 {
            for j in j0..j1 {
                let (cx, cy) = grid.cell_center(i, j);
                if b.contains(cx, cy) {
                    data[i * ny + j] = 1.0;
                }
            }
        }
    }
    Ok(FeatureMap {
        c: 1,
        x: nx,
        y: ny,
        data,
    })
}

pub const FOCAL_CLAMP: f64 = 1e-6;

/// Focal term for one cell: `-α (1 - p_t)^γ ln p_t` with `p` clamped to
/// `[1e-6, 1 - 1e-6]`.
pub fn focal_term(pred: f64, target: f64, gamma: f64, alpha: f64) -> f64 {
    let p = pred.clamp(FOCAL_CLAMP, 1.0 - FOCAL_CLAMP);
    let pt = if target >= 0.5 { p } else { 1.0 - p };
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Mean focal loss of a predicted pattern against a `{0, 1}` target map.
pub fn focal_loss(pred: &FeatureMap, gt: &FeatureMap, gamma: f64, alpha: f64) -> Result<f64> {
    if pred.dims() != gt.dims() || pred.c != 1 {
        return Err(Error::DimMismatch(format!(
            "prediction {:?} and target {:?} must both be 1×X×Y",
            pred.dims(),
            gt.dims()
        )));
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &t)| focal_term(p, t, gamma, alpha))
        .sum();
    Ok(sum / pred.data.len() as f64)
}
