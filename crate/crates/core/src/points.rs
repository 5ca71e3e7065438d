//! Point rows as they travel between generation and encoding, plus the CSV
//! formats for raw input points and hybrid output points.
//!
//! Raw input: header `x,y,z,<feature cols>`.
//! Hybrid output: header `x,y,z,<feature cols>,<class cols>,kind` with the
//! class columns one-hot and `kind` one of `raw`, `foreground`, `gaussian`,
//! `uniform`. Floats are written with shortest round-trip formatting.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::RadarPoint;
use crate::masks::SemanticFeature;
use crate::rhgm::{GenerationKind, HybridPointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointKind {
    Raw,
    Foreground,
    Gaussian,
    Uniform,
}

impl PointKind {
    pub const ALL: [PointKind; 4] = [
        PointKind::Raw,
        PointKind::Foreground,
        PointKind::Gaussian,
        PointKind::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Raw => "raw",
            PointKind::Foreground => "foreground",
            PointKind::Gaussian => "gaussian",
            PointKind::Uniform => "uniform",
        }
    }

    pub fn is_generated(self) -> bool {
        matches!(self, PointKind::Gaussian | PointKind::Uniform)
    }
}

impl From<GenerationKind> for PointKind {
    fn from(k: GenerationKind) -> Self {
        match k {
            GenerationKind::Gaussian => PointKind::Gaussian,
            GenerationKind::Uniform => PointKind::Uniform,
        }
    }
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::parse("point kind", format!("unknown kind `{s}`")))
    }
}

/// One row of a hybrid point set: radar-frame position, physical features,
/// optional class and the point's origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPoint {
    pub position: [f64; 3],
    pub feats: Vec<f64>,
    pub sem: Option<SemanticFeature>,
    pub kind: PointKind,
}

impl HybridPointSet {
    /// Flattens to rows: all raw points, then foreground, then generated.
    pub fn tagged_points(&self) -> Vec<TaggedPoint> {
        let raw = self.raw.iter().map(|p| TaggedPoint {
            position: p.position(),
            feats: p.feats.clone(),
            sem: None,
            kind: PointKind::Raw,
        });
        let fore = self.foreground.iter().map(|f| TaggedPoint {
            position: f.position,
            feats: f.feats.clone(),
            sem: Some(f.sem),
            kind: PointKind::Foreground,
        });
        let gen = self.generated.iter().map(|g| TaggedPoint {
            position: g.position(),
            feats: g.feats.clone(),
            sem: Some(g.sem),
            kind: g.origin.into(),
        });
        raw.chain(fore).chain(gen).collect()
    }
}

fn check_header(got: &csv::StringRecord, want: &[String], context: &str) -> Result<()> {
    if got.len() != want.len() || got.iter().zip(want).any(|(a, b)| a.trim() != b) {
        return Err(Error::SchemaMismatch(format!(
            "{context}: header `{}` does not match expected `{}`",
            got.iter().collect::<Vec<_>>().join(","),
            want.join(",")
        )));
    }
    Ok(())
}

fn parse_f64(s: &str, context: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(format!("{context} line {line}"), format!("`{s}`: {e}")))
}

pub fn raw_header(feature_names: &[String]) -> Vec<String> {
    ["x", "y", "z"]
        .into_iter()
        .map(String::from)
        .chain(feature_names.iter().cloned())
        .collect()
}

pub fn hybrid_header(feature_names: &[String], class_names: &[String]) -> Vec<String> {
    let mut h = raw_header(feature_names);
    h.extend(class_names.iter().cloned());
    h.push("kind".into());
    h
}

/// Parses raw radar points from CSV text.
pub fn read_raw_points<R: Read>(
    reader: R,
    feature_names: &[String],
    context: &str,
) -> Result<Vec<RadarPoint>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::parse(context, e))?.clone();
    check_header(&header, &raw_header(feature_names), context)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::parse(context, e))?;
        let vals = rec
            .iter()
            .map(|s| parse_f64(s, context, line))
            .collect::<Result<Vec<_>>>()?;
        out.push(RadarPoint::new(
            vals[0],
            vals[1],
            vals[2],
            vals[3..].to_vec(),
        ));
    }
    Ok(out)
}

pub fn load_raw_points(
    path: impl AsRef<Path>,
    feature_names: &[String],
) -> Result<Vec<RadarPoint>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_raw_points(f, feature_names, &path.display().to_string())
}

pub fn write_raw_points<W: Write>(
    writer: W,
    points: &[RadarPoint],
    feature_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::io("<csv>", e.into());
    w.write_record(raw_header(feature_names)).map_err(io_err)?;
    for p in points {
        if p.feats.len() != feature_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "point has {} features, schema has {}",
                p.feats.len(),
                feature_names.len()
            )));
        }
        let row = p.position().into_iter().chain(p.feats.iter().copied());
        w.write_record(row.map(|v| v.to_string())).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_hybrid_points<W: Write>(
    writer: W,
    points: &[TaggedPoint],
    feature_names: &[String],
    class_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::io("<csv>", e.into());
    w.write_record(hybrid_header(feature_names, class_names))
        .map_err(io_err)?;
    for p in points {
        if p.feats.len() != feature_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "point has {} features, schema has {}",
                p.feats.len(),
                feature_names.len()
            )));
        }
        let mut row: Vec<String> = p
            .position
            .iter()
            .chain(&p.feats)
            .map(|v| v.to_string())
            .collect();
        let mut onehot = vec!["0"; class_names.len()];
        if let Some(sem) = p.sem {
            if sem.num_classes() != class_names.len() {
                return Err(Error::SchemaMismatch(format!(
                    "semantic feature has {} classes, schema has {}",
                    sem.num_classes(),
                    class_names.len()
                )));
            }
            onehot[sem.class()] = "1";
        }
        row.extend(onehot.into_iter().map(String::from));
        row.push(p.kind.to_string());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn save_hybrid_points(
    path: impl AsRef<Path>,
    points: &[TaggedPoint],
    feature_names: &[String],
    class_names: &[String],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_hybrid_points(&mut buf, points, feature_names, class_names)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_hybrid_points<R: Read>(
    reader: R,
    feature_names: &[String],
    class_names: &[String],
    context: &str,
) -> Result<Vec<TaggedPoint>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::parse(context, e))?.clone();
    check_header(&header, &hybrid_header(feature_names, class_names), context)?;
    let nf = feature_names.len();
    let nc = class_names.len();
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::parse(context, e))?;
        let vals = rec
            .iter()
            .take(3 + nf + nc)
            .map(|s| parse_f64(s, context, line))
            .collect::<Result<Vec<_>>>()?;
        let kind: PointKind = rec[3 + nf + nc].trim().parse()?;
        let sem = SemanticFeature::from_one_hot(&vals[3 + nf..])
            .map_err(|e| Error::parse(format!("{context} line {line}"), e))?;
        if kind != PointKind::Raw && sem.is_none() {
            return Err(Error::SchemaMismatch(format!(
                "{context} line {line}: {kind} point without a class"
            )));
        }
        out.push(TaggedPoint {
            position: [vals[0], vals[1], vals[2]],
            feats: vals[3..3 + nf].to_vec(),
            sem,
            kind,
        });
    }
    Ok(out)
}

pub fn load_hybrid_points(
    path: impl AsRef<Path>,
    feature_names: &[String],
    class_names: &[String],
) -> Result<Vec<TaggedPoint>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_hybrid_points(f, feature_names, class_names, &path.display().to_string())
}
