//! Fixed-length point encodings and BEV pillar averaging.
//!
//! Three layouts, with `f` the physical features, `s` the one-hot class and
//! `c` the one-hot point type (raw, foreground, generated):
//!
//! | strategy       | raw                      | foreground / generated   |
//! |----------------|--------------------------|--------------------------|
//! | concat         | `[xyz, f, 0_s]`          | `[xyz, f, s]`            |
//! | differentiable | `[xyz, f, 0_s, c]`       | `[xyz, f, s, c]`         |
//! | separate       | `[xyz, f, 0_f, 0_s, c]`  | `[xyz, 0_f, f, s, c]`    |
//!
//! Pillars average every row whose `(x, y)` falls in a cell, so under the
//! separate layout the raw and image-guided feature blocks never mix.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{PointKind, TaggedPoint};

/// Number of point types in the `c` block.
pub const NUM_POINT_TYPES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Concat,
    Differentiable,
    Separate,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Concat => "concat",
            Strategy::Differentiable => "differentiable",
            Strategy::Separate => "separate",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Strategy::Concat),
            "differentiable" => Ok(Strategy::Differentiable),
            "separate" => Ok(Strategy::Separate),
            other => Err(Error::Config(format!(
                "unknown encoding strategy `{other}`"
            ))),
        }
    }
}

fn point_type(kind: PointKind) -> usize {
    match kind {
        PointKind::Raw => 0,
        PointKind::Foreground => 1,
        PointKind::Gaussian | PointKind::Uniform => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingSchema {
    pub n_feat: usize,
    pub n_sem: usize,
    pub n_type: usize,
    pub strategy: Strategy,
}

impl EncodingSchema {
    pub fn new(n_feat: usize, n_sem: usize, strategy: Strategy) -> Self {
        Self {
            n_feat,
            n_sem,
            n_type: NUM_POINT_TYPES,
            strategy,
        }
    }

    /// Encoded row length.
    pub fn len(&self) -> usize {
        match self.strategy {
            Strategy::Concat => 3 + self.n_feat + self.n_sem,
            Strategy::Differentiable => 3 + self.n_feat + self.n_sem + self.n_type,
            Strategy::Separate => 3 + 2 * self.n_feat + self.n_sem + self.n_type,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the physical feature block used by raw points.
    pub fn raw_feat_offset(&self) -> usize {
        3
    }

    /// Offset of the physical feature block used by foreground and
    /// generated points.
    pub fn guided_feat_offset(&self) -> usize {
        match self.strategy {
            Strategy::Separate => 3 + self.n_feat,
            _ => 3,
        }
    }

    pub fn sem_offset(&self) -> usize {
        match self.strategy {
            Strategy::Separate => 3 + 2 * self.n_feat,
            _ => 3 + self.n_feat,
        }
    }

    /// Offset of the point-type block, if the layout has one.
    pub fn type_offset(&self) -> Option<usize> {
        match self.strategy {
            Strategy::Concat => None,
            _ => Some(self.sem_offset() + self.n_sem),
        }
    }
}

/// Encoded rows, `N × schema.len()`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPointSet {
    data: Vec<f64>,
    schema: EncodingSchema,
}

impl EncodedPointSet {
    pub fn from_rows(rows: &[Vec<f64>], schema: EncodingSchema) -> Result<Self> {
        let l = schema.len();
        let mut data = Vec::with_capacity(rows.len() * l);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != l {
                return Err(Error::SchemaMismatch(format!(
                    "row {k} has length {}, schema length is {l}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, schema })
    }

    pub fn schema(&self) -> EncodingSchema {
        self.schema
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let l = self.schema.len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.schema.len())
    }
}

fn encode_row(p: &TaggedPoint, schema: &EncodingSchema, out: &mut Vec<f64>) -> Result<()> {
    if p.feats.len() != schema.n_feat {
        return Err(Error::SchemaMismatch(format!(
            "point has {} physical features, schema expects {}",
            p.feats.len(),
            schema.n_feat
        )));
    }
    let start = out.len();
    out.resize(start + schema.len(), 0.0);
    let row = &mut out[start..];
    row[..3].copy_from_slice(&p.position);
    let feat_at = if p.kind == PointKind::Raw {
        schema.raw_feat_offset()
    } else {
        schema.guided_feat_offset()
    };
    row[feat_at..feat_at + schema.n_feat].copy_from_slice(&p.feats);
    match (p.kind, p.sem) {
        // raw rows carry zero semantics regardless of any label
        (PointKind::Raw, _) => {}
        (_, Some(sem)) => {
            if sem.num_classes() != schema.n_sem {
                return Err(Error::SchemaMismatch(format!(
                    "semantic feature has {} classes, schema expects {}",
                    sem.num_classes(),
                    schema.n_sem
                )));
            }
            row[schema.sem_offset() + sem.class()] = 1.0;
        }
        (kind, None) => {
            return Err(Error::SchemaMismatch(format!(
                "{kind} point without a class"
            )));
        }
    }
    if let Some(off) = schema.type_offset() {
        row[off + point_type(p.kind)] = 1.0;
    }
    Ok(())
}

fn encode_with(
    points: &[TaggedPoint],
    schema: EncodingSchema,
    want: Strategy,
) -> Result<EncodedPointSet> {
    if schema.strategy != want {
        return Err(Error::SchemaMismatch(format!(
            "schema strategy is {}, expected {want}",
            schema.strategy
        )));
    }
    encode(points, schema)
}

/// Encodes under whatever strategy the schema names.
pub fn encode(points: &[TaggedPoint], schema: EncodingSchema) -> Result<EncodedPointSet> {
    let mut data = Vec::with_capacity(points.len() * schema.len());
    for p in points {
        encode_row(p, &schema, &mut data)?;
    }
    Ok(EncodedPointSet { data, schema })
}

pub fn encode_concat(points: &[TaggedPoint], schema: EncodingSchema) -> Result<EncodedPointSet> {
    encode_with(points, schema, Strategy::Concat)
}

pub fn encode_differentiable(
    points: &[TaggedPoint],
    schema: EncodingSchema,
) -> Result<EncodedPointSet> {
    encode_with(points, schema, Strategy::Differentiable)
}

pub fn encode_separate(points: &[TaggedPoint], schema: EncodingSchema) -> Result<EncodedPointSet> {
    encode_with(points, schema, Strategy::Separate)
}

/// BEV grid over `[x_min, x_max) × [y_min, y_max)` with square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell_size: f64,
}

impl GridConfig {
    /// View-of-Delft point cloud range with 0.16 m pillars (320 × 320).
    pub fn vod() -> Self {
        Self {
            x_min: 0.0,
            x_max: 51.2,
            y_min: -25.6,
            y_max: 25.6,
            cell_size: 0.16,
        }
    }

    /// TJ4DRadSet point cloud range with 0.32 m pillars (216 × 248).
    pub fn tj4d() -> Self {
        Self {
            x_min: 0.0,
            x_max: 69.12,
            y_min: -39.68,
            y_max: 39.68,
            cell_size: 0.32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::Config(format!(
                "cell size must be > 0, got {}",
                self.cell_size
            )));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::Config("grid range must have positive extent".into()));
        }
        if self.nx() == 0 || self.ny() == 0 {
            return Err(Error::Config("grid range is smaller than one cell".into()));
        }
        Ok(())
    }

    /// Cells along x; extents are rounded to whole cells.
    pub fn nx(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell_size).round() as usize
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell_size).round() as usize
    }

    /// Cell containing `(x, y)`; a point on a boundary belongs to the
    /// higher-index cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.x_min) / self.cell_size).floor();
        let j = ((y - self.y_min) / self.cell_size).floor();
        if i >= 0.0 && j >= 0.0 && i < self.nx() as f64 && j < self.ny() as f64 {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (i as f64 + 0.5) * self.cell_size,
            self.y_min + (j as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Per-cell mean of encoded rows. Cells are stored x-major, y-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarGrid {
    nx: usize,
    ny: usize,
    len: usize,
    means: Vec<f64>,
    counts: Vec<u32>,
    dropped: usize,
}

impl PillarGrid {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Feature length per cell.
    pub fn feature_len(&self) -> usize {
        self.len
    }

    pub fn mean(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.ny + j) * self.len;
        &self.means[k..k + self.len]
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.ny + j]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Points that fell outside the grid.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    /// Serializes to the `PGRD` layout: magic, u32 LE `L, X, Y`, `X·Y·L` f32
    /// LE means (x-major, y-minor, feature innermost), then `X·Y` u32 counts.
    pub fn to_pgrd(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.means.len() * 4 + self.counts.len() * 4);
        out.extend_from_slice(b"PGRD");
        for d in [self.len, self.nx, self.ny] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &m in &self.means {
            out.extend_from_slice(&(m as f32).to_le_bytes());
        }
        for &c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Parses a `PGRD` buffer. Means come back at f32 precision and the
    /// dropped count is not stored, so it reads as zero.
    pub fn from_pgrd(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::parse("pgrd", m);
        if bytes.len() < 16 || &bytes[..4] != b"PGRD" {
            return Err(err("missing PGRD header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let (len, nx, ny) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize);
        let cells = nx * ny;
        if bytes.len() != 16 + 4 * (cells * len + cells) {
            return Err(err("size does not match header dims"));
        }
        let means = (0..cells * len)
            .map(|k| f32::from_le_bytes(bytes[16 + 4 * k..20 + 4 * k].try_into().unwrap()) as f64)
            .collect();
        let base = 16 + 4 * cells * len;
        let counts = (0..cells).map(|k| u32_at(base + 4 * k)).collect();
        Ok(Self {
            nx,
            ny,
            len,
            means,
            counts,
            dropped: 0,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgrd()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_pgrd(&bytes)
    }
}

/// Averages encoded rows into BEV pillars.
///
/// Rows inside one cell are summed in a canonical (lexicographic) order, so
/// the result is bit-identical under any permutation of the input.
pub fn pillarize(enc: &EncodedPointSet, grid: &GridConfig) -> Result<PillarGrid> {
    grid.validate()?;
    let (nx, ny, len) = (grid.nx(), grid.ny(), enc.schema().len());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    let mut dropped = 0;
    for (k, row) in enc.rows().enumerate() {
        match grid.cell_of(row[0], row[1]) {
            Some((i, j)) => members[i * ny + j].push(k),
            None => dropped += 1,
        }
    }
    let mut means = vec![0.0; nx * ny * len];
    let mut counts = vec![0u32; nx * ny];
    for (cell, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.sort_by(|&a, &b| {
            enc.row(a)
                .iter()
                .zip(enc.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let acc = &mut means[cell * len..(cell + 1) * len];
        for &k in idx.iter() {
            for (a, v) in acc.iter_mut().zip(enc.row(k)) {
                *a += v;
            }
        }
        let n = idx.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        counts[cell] = idx.len() as u32;
    }
    Ok(PillarGrid {
        nx,
        ny,
        len,
        means,
        counts,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::SemanticFeature;

    fn pt(kind: PointKind, class: Option<usize>) -> TaggedPoint {
        TaggedPoint {
            position: [1.0, -2.0, 0.5],
            feats: vec![7.0, -0.5],
            sem: class.map(|c| SemanticFeature::new(c, 3).unwrap()),
            kind,
        }
    }

    #[test]
    fn schema_lengths() {
        assert_eq!(EncodingSchema::new(3, 3, Strategy::Concat).len(), 9);
        assert_eq!(
            EncodingSchema::new(3, 3, Strategy::Differentiable).len(),
            12
        );
        assert_eq!(EncodingSchema::new(3, 3, Strategy::Separate).len(), 15);
    }

    #[test]
    fn concat_pads_raw_semantics() {
        let schema = EncodingSchema::new(2, 3, Strategy::Concat);
        let enc = encode_concat(
            &[pt(PointKind::Raw, None), pt(PointKind::Uniform, Some(0))],
            schema,
        )
        .unwrap();
        assert_eq!(enc.row(0), &[1.0, -2.0, 0.5, 7.0, -0.5, 0.0, 0.0, 0.0]);
        assert_eq!(enc.row(1), &[1.0, -2.0, 0.5, 7.0, -0.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn differentiable_type_blocks() {
        let schema = EncodingSchema::new(2, 3, Strategy::Differentiable);
        let enc = encode_differentiable(
            &[
                pt(PointKind::Raw, None),
                pt(PointKind::Foreground, Some(2)),
                pt(PointKind::Gaussian, Some(2)),
            ],
            schema,
        )
        .unwrap();
        assert_eq!(&enc.row(0)[8..], &[1.0, 0.0, 0.0]);
        let diff: Vec<usize> = (0..schema.len())
            .filter(|&k| enc.row(1)[k] != enc.row(2)[k])
            .collect();
        assert_eq!(diff, vec![9, 10]);
    }

    #[test]
    fn separate_blocks() {
        let schema = EncodingSchema::new(2, 3, Strategy::Separate);
        let enc = encode_separate(
            &[pt(PointKind::Raw, None), pt(PointKind::Gaussian, Some(1))],
            schema,
        )
        .unwrap();
        assert_eq!(
            enc.row(0),
            &[1.0, -2.0, 0.5, 7.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(
            enc.row(1),
            &[1.0, -2.0, 0.5, 0.0, 0.0, 7.0, -0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn strategy_and_length_mismatch() {
        let schema = EncodingSchema::new(2, 3, Strategy::Separate);
        assert!(matches!(
            encode_concat(&[pt(PointKind::Raw, None)], schema),
            Err(Error::SchemaMismatch(_))
        ));
        let schema = EncodingSchema::new(3, 3, Strategy::Concat);
        assert!(matches!(
            encode_concat(&[pt(PointKind::Raw, None)], schema),
            Err(Error::SchemaMismatch(_))
        ));
        let schema = EncodingSchema::new(2, 3, Strategy::Concat);
        assert!(encode_concat(&[pt(PointKind::Foreground, None)], schema).is_err());
    }

    #[test]
    fn standard_grid_dims() {
        let vod = GridConfig::vod();
        assert_eq!((vod.nx(), vod.ny()), (320, 320));
        let tj = GridConfig::tj4d();
        assert_eq!((tj.nx(), tj.ny()), (216, 248));
    }

    #[test]
    fn boundary_goes_to_higher_cell() {
        let g = GridConfig {
            x_min: 0.0,
            x_max: 4.0,
            y_min: 0.0,
            y_max: 4.0,
            cell_size: 1.0,
        };
        assert_eq!(g.cell_of(1.0, 2.0), Some((1, 2)));
        assert_eq!(g.cell_of(0.999, 0.0), Some((0, 0)));
        assert_eq!(g.cell_of(4.0, 0.0), None);
        assert_eq!(g.cell_of(-0.001, 0.0), None);
        assert_eq!(g.cell_of(f64::NAN, 0.0), None);
    }

    #[test]
    fn singleton_and_duplicate_pillars() {
        let schema = EncodingSchema::new(2, 3, Strategy::Concat);
        let g = GridConfig {
            x_min: 0.0,
            x_max: 2.0,
            y_min: -3.0,
            y_max: 1.0,
            cell_size: 1.0,
        };
        let enc = encode(&[pt(PointKind::Raw, None)], schema).unwrap();
        let grid = pillarize(&enc, &g).unwrap();
        assert_eq!(grid.count(1, 1), 1);
        assert_eq!(grid.mean(1, 1), enc.row(0));
        assert_eq!(grid.total_count(), 1);
        assert!(grid.mean(0, 0).iter().all(|&v| v == 0.0));

        let enc = encode(
            &[pt(PointKind::Raw, None), pt(PointKind::Raw, None)],
            schema,
        )
        .unwrap();
        let grid = pillarize(&enc, &g).unwrap();
        assert_eq!(grid.count(1, 1), 2);
        assert_eq!(grid.mean(1, 1), enc.row(0));
    }

    #[test]
    fn raw_only_pillar_has_zero_guided_block() {
        let schema = EncodingSchema::new(2, 3, Strategy::Separate);
        let mut a = pt(PointKind::Raw, None);
        a.position = [0.2, 0.2, 0.0];
        let mut b = pt(PointKind::Raw, None);
        b.position = [0.7, 0.9, 1.0];
        b.feats = vec![-3.0, 4.0];
        let g = GridConfig {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            cell_size: 1.0,
        };
        let grid = pillarize(&encode(&[a, b], schema).unwrap(), &g).unwrap();
        let off = schema.guided_feat_offset();
        assert!(grid.mean(0, 0)[off..off + 2].iter().all(|&v| v == 0.0));
        assert_eq!(&grid.mean(0, 0)[3..5], &[2.0, 1.75]);
    }

    #[test]
    fn pgrd_layout() {
        let schema = EncodingSchema::new(0, 1, Strategy::Concat);
        let rows = vec![vec![0.5, 1.5, 2.0, 1.0], vec![1.5, 0.5, 4.0, 0.0]];
        let enc = EncodedPointSet::from_rows(&rows, schema).unwrap();
        let g = GridConfig {
            x_min: 0.0,
            x_max: 2.0,
            y_min: 0.0,
            y_max: 2.0,
            cell_size: 1.0,
        };
        let grid = pillarize(&enc, &g).unwrap();
        let bytes = grid.to_pgrd();
        assert_eq!(&bytes[..4], b"PGRD");
        assert_eq!(&bytes[4..16], &[4, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 4 * 4 * 4 + 4 * 4);
        // cell (0, 1) is the second cell in x-major order
        let f = |k: usize| f32::from_le_bytes(bytes[16 + 4 * k..20 + 4 * k].try_into().unwrap());
        assert_eq!((f(4), f(5), f(6), f(7)), (0.5, 1.5, 2.0, 1.0));
        let counts = &bytes[16 + 64..];
        assert_eq!(counts, &[0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        let back = PillarGrid::from_pgrd(&bytes).unwrap();
        assert_eq!(back.mean(1, 0), grid.mean(1, 0));
        assert!(PillarGrid::from_pgrd(&bytes[..20]).is_err());
    }
}
