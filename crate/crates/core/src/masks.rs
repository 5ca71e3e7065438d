//! Per-frame instance masks.
//!
//! A mask set is a raster of instance IDs (0 is background) plus a map from
//! instance ID to class index. Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`,
//! so continuous coordinates are looked up by flooring.
//!
//! On disk the raster is a binary PGM (`P5`, 16-bit big-endian samples) and
//! the class map is a JSON object from decimal instance IDs to class names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type InstanceId = u16;

pub const BACKGROUND: InstanceId = 0;

/// One-hot class label, stored as the hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SemanticFeature {
    class: usize,
    num_classes: usize,
}

impl SemanticFeature {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::SchemaMismatch(format!(
                "class index {class} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.class] = 1.0;
        v
    }

    /// Inverse of [`one_hot`](Self::one_hot); `None` for an all-zero block.
    pub fn from_one_hot(block: &[f64]) -> Result<Option<Self>> {
        let mut hot = None;
        for (k, &v) in block.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::SchemaMismatch("more than one hot class".into()));
                }
                hot = Some(k);
            } else if v != 0.0 {
                return Err(Error::SchemaMismatch(format!(
                    "one-hot entry must be 0 or 1, got {v}"
                )));
            }
        }
        Ok(hot.map(|class| Self {
            class,
            num_classes: block.len(),
        }))
    }
}

/// Inclusive pixel bounds of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct InstanceInfo {
    class: usize,
    area: usize,
    bbox: Option<PixelBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMaskSet {
    width: usize,
    height: usize,
    raster: Vec<InstanceId>,
    instances: BTreeMap<InstanceId, InstanceInfo>,
    class_names: Vec<String>,
}

impl InstanceMaskSet {
    /// Validates and indexes a row-major raster.
    pub fn new(
        width: usize,
        height: usize,
        raster: Vec<InstanceId>,
        classes: BTreeMap<InstanceId, usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if raster.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "raster has {} samples, expected {width}×{height}",
                raster.len()
            )));
        }
        let mut instances = BTreeMap::new();
        for (&id, &class) in &classes {
            if id == BACKGROUND {
                return Err(Error::InconsistentClassMap(
                    "instance id 0 is reserved for background".into(),
                ));
            }
            if class >= class_names.len() {
                return Err(Error::InconsistentClassMap(format!(
                    "instance {id} has class index {class} but only {} classes are configured",
                    class_names.len()
                )));
            }
            instances.insert(
                id,
                InstanceInfo {
                    class,
                    area: 0,
                    bbox: None,
                },
            );
        }
        for (idx, &id) in raster.iter().enumerate() {
            if id == BACKGROUND {
                continue;
            }
            let info = instances.get_mut(&id).ok_or_else(|| {
                Error::InconsistentClassMap(format!("raster id {id} missing from class map"))
            })?;
            let (x, y) = (idx % width, idx / width);
            info.area += 1;
            info.bbox = Some(match info.bbox {
                None => PixelBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => PixelBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
        Ok(Self {
            width,
            height,
            raster,
            instances,
            class_names,
        })
    }

    /// Builds a mask set from an instance→class-name map, resolving names
    /// against the ordered class list.
    ///
    /// With `drop_unknown`, instances whose class is not in `class_names` are
    /// erased to background instead of failing.
    pub fn from_named_classes(
        width: usize,
        height: usize,
        mut raster: Vec<InstanceId>,
        names: &BTreeMap<InstanceId, String>,
        class_names: &[String],
        drop_unknown: bool,
    ) -> Result<Self> {
        let mut classes = BTreeMap::new();
        let mut dropped = Vec::new();
        for (&id, name) in names {
            match class_names.iter().position(|c| c == name) {
                Some(idx) => {
                    classes.insert(id, idx);
                }
                None if drop_unknown => dropped.push(id),
                None => {
                    return Err(Error::InconsistentClassMap(format!(
                        "instance {id} has unconfigured class `{name}`"
                    )))
                }
            }
        }
        if !dropped.is_empty() {
            log::debug!("dropping instances {dropped:?} with unconfigured classes");
            for px in raster.iter_mut() {
                if dropped.contains(px) {
                    *px = BACKGROUND;
                }
            }
        }
        Self::new(width, height, raster, classes, class_names.to_vec())
    }

    pub fn empty(width: usize, height: usize, class_names: Vec<String>) -> Self {
        Self {
            width,
            height,
            raster: vec![BACKGROUND; width * height],
            instances: BTreeMap::new(),
            class_names,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raster(&self) -> &[InstanceId] {
        &self.raster
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Known instance IDs in ascending order.
    pub fn instance_ids(&self) -> impl Iterator<Item = InstanceId> + '_ {
        self.instances.keys().copied()
    }

    pub fn num_instances(&self) -> usize {
        self.instances.len()
    }

    pub fn class_of(&self, id: InstanceId) -> Result<usize> {
        self.info(id).map(|i| i.class)
    }

    pub fn semantic(&self, id: InstanceId) -> Result<SemanticFeature> {
        SemanticFeature::new(self.class_of(id)?, self.class_names.len())
    }

    /// Instance at the pixel containing `(u, v)`; background when out of
    /// bounds or non-finite.
    pub fn query(&self, u: f64, v: f64) -> InstanceId {
        let (fu, fv) = (u.floor(), v.floor());
        if !(fu >= 0.0 && fv >= 0.0 && fu < self.width as f64 && fv < self.height as f64) {
            return BACKGROUND;
        }
        self.raster[fv as usize * self.width + fu as usize]
    }

    /// Pixel count of an instance.
    pub fn mask_area(&self, id: InstanceId) -> Result<usize> {
        self.info(id).map(|i| i.area)
    }

    pub fn background_area(&self) -> usize {
        self.raster.iter().filter(|&&id| id == BACKGROUND).count()
    }

    /// Inclusive bounds, `None` for an instance with zero area.
    pub fn bounding_box(&self, id: InstanceId) -> Result<Option<PixelBox>> {
        self.info(id).map(|i| i.bbox)
    }

    fn info(&self, id: InstanceId) -> Result<&InstanceInfo> {
        self.instances
            .get(&id)
            .ok_or(Error::UnknownInstance(id as u32))
    }

    /// Instance → class name map in the on-disk JSON shape.
    pub fn named_classes(&self) -> BTreeMap<InstanceId, String> {
        self.instances
            .iter()
            .map(|(&id, info)| (id, self.class_names[info.class].clone()))
            .collect()
    }

    pub fn save(&self, mask_path: impl AsRef<Path>, classmap_path: impl AsRef<Path>) -> Result<()> {
        let mask_path = mask_path.as_ref();
        let classmap_path = classmap_path.as_ref();
        let pgm = encode_pgm(self.width, self.height, &self.raster);
        fs::write(mask_path, pgm).map_err(|e| Error::io(mask_path, e))?;
        fs::write(classmap_path, encode_class_map(&self.named_classes()))
            .map_err(|e| Error::io(classmap_path, e))
    }
}

/// Reads a raster and class map from disk and validates them together.
pub fn load_masks(
    mask_path: impl AsRef<Path>,
    classmap_path: impl AsRef<Path>,
    class_names: &[String],
    drop_unknown: bool,
) -> Result<InstanceMaskSet> {
    let mask_path = mask_path.as_ref();
    let classmap_path = classmap_path.as_ref();
    let bytes = fs::read(mask_path).map_err(|e| Error::io(mask_path, e))?;
    let (width, height, raster) = decode_pgm(&bytes).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(mask_path.display().to_string(), message),
        other => other,
    })?;
    let text = fs::read_to_string(classmap_path).map_err(|e| Error::io(classmap_path, e))?;
    let names = decode_class_map(&text)
        .map_err(|e| Error::parse(classmap_path.display().to_string(), e))?;
    InstanceMaskSet::from_named_classes(width, height, raster, &names, class_names, drop_unknown)
}

pub fn decode_class_map(text: &str) -> Result<BTreeMap<InstanceId, String>> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(text).map_err(|e| Error::parse("class map", e))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<InstanceId>()
                .map(|id| (id, v))
                .map_err(|e| Error::parse("class map", format!("instance id `{k}`: {e}")))
        })
        .collect()
}

pub fn encode_class_map(names: &BTreeMap<InstanceId, String>) -> String {
    let raw: BTreeMap<String, &String> = names.iter().map(|(k, v)| (k.to_string(), v)).collect();
    // keys sort lexically here; only the mapping matters
    let mut s = serde_json::to_string_pretty(&raw).expect("string map serializes");
    s.push('\n');
    s
}

/// Writes a `P5` PGM with maxval 65535.
pub fn encode_pgm(width: usize, height: usize, raster: &[InstanceId]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(raster.len() * 2);
    for &px in raster {
        out.extend_from_slice(&px.to_be_bytes());
    }
    out
}

/// Parses a binary PGM. 16-bit big-endian samples when maxval > 255,
/// 8-bit samples otherwise.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<InstanceId>)> {
    let err = |m: &str| Error::parse("pgm", m);
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(err("not a binary PGM (expected P5)"));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| err(&format!("bad {what} `{s}`")))
    };
    let width = num(fields[1], "width")?;
    let height = num(fields[2], "height")?;
    let maxval = num(fields[3], "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(err("maxval must be in 1..=65535"));
    }
    // exactly one whitespace byte separates header and samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator after header"));
    }
    pos += 1;
    let n = width * height;
    let data = &bytes[pos..];
    let raster = if maxval > 255 {
        if data.len() < 2 * n {
            return Err(err("truncated sample data"));
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        if data.len() < n {
            return Err(err("truncated sample data"));
        }
        data[..n].iter().map(|&b| b as u16).collect()
    };
    Ok((width, height, raster))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        ["car", "pedestrian", "cyclist"].map(String::from).to_vec()
    }

    fn block_mask() -> InstanceMaskSet {
        let (w, h) = (10, 10);
        let mut raster = vec![0; w * h];
        for y in 2..6 {
            for x in 4..7 {
                raster[y * w + x] = 1;
            }
        }
        raster[2 * w] = 5;
        raster[9 * w + 9] = 3;
        let classes = BTreeMap::from([(1, 0), (3, 2), (5, 1)]);
        InstanceMaskSet::new(w, h, raster, classes, names()).unwrap()
    }

    #[test]
    fn empty_scene_loads() {
        let m = InstanceMaskSet::new(4, 4, vec![0; 16], BTreeMap::new(), names()).unwrap();
        assert_eq!(m.num_instances(), 0);
        assert_eq!(m.background_area(), 16);
    }

    #[test]
    fn raster_id_missing_from_class_map() {
        let mut raster = vec![0; 16];
        raster[5] = 7;
        let err = InstanceMaskSet::new(4, 4, raster, BTreeMap::new(), names()).unwrap_err();
        assert!(matches!(err, Error::InconsistentClassMap(_)));
    }

    #[test]
    fn class_index_out_of_range() {
        let err = InstanceMaskSet::new(2, 2, vec![0, 1, 0, 0], BTreeMap::from([(1, 3)]), names())
            .unwrap_err();
        assert!(matches!(err, Error::InconsistentClassMap(_)));
    }

    #[test]
    fn query_semantics() {
        let m = block_mask();
        assert_eq!(m.query(4.0, 2.0), 1);
        assert_eq!(m.query(6.999, 5.999), 1);
        assert_eq!(m.query(7.0, 5.0), BACKGROUND);
        assert_eq!(m.query(-1.0, 5.0), BACKGROUND);
        assert_eq!(m.query(-0.5, 2.5), BACKGROUND);
        assert_eq!(m.query(0.9, 2.1), 5);
        assert_eq!(m.query(10.0, 0.0), BACKGROUND);
        assert_eq!(m.query(f64::NAN, 0.0), BACKGROUND);
        assert_eq!(m.query(9.5, 9.5), 3);
    }

    #[test]
    fn floor_lookup_at_fractional_pixel() {
        let mut raster = vec![0; 16];
        raster[2] = 5;
        let m = InstanceMaskSet::new(4, 4, raster, BTreeMap::from([(5, 0)]), names()).unwrap();
        assert_eq!(m.query(2.9, 0.1), 5);
    }

    #[test]
    fn areas_and_bounds() {
        let m = block_mask();
        assert_eq!(m.mask_area(1).unwrap(), 12);
        assert_eq!(
            m.bounding_box(1).unwrap(),
            Some(PixelBox {
                x0: 4,
                y0: 2,
                x1: 6,
                y1: 5
            })
        );
        assert!(matches!(m.mask_area(2), Err(Error::UnknownInstance(2))));
        let total: usize = m.instance_ids().map(|id| m.mask_area(id).unwrap()).sum();
        assert_eq!(total + m.background_area(), 100);
    }

    #[test]
    fn drop_unknown_classes() {
        let raster = vec![1, 2, 0, 0];
        let map = BTreeMap::from([(1, "car".to_string()), (2, "bicycle-rack".to_string())]);
        let err = InstanceMaskSet::from_named_classes(2, 2, raster.clone(), &map, &names(), false)
            .unwrap_err();
        assert!(matches!(err, Error::InconsistentClassMap(_)));
        let m = InstanceMaskSet::from_named_classes(2, 2, raster, &map, &names(), true).unwrap();
        assert_eq!(m.num_instances(), 1);
        assert_eq!(m.query(1.5, 0.5), BACKGROUND);
    }

    #[test]
    fn pgm_and_class_map_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = block_mask();
        let (pgm, json) = (dir.path().join("f.pgm"), dir.path().join("f.json"));
        m.save(&pgm, &json).unwrap();
        let back = load_masks(&pgm, &json, &names(), false).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pgm_header_with_comment_and_8bit() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 2, 1]);
        let (w, h, r) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h, r), (3, 1, vec![0, 2, 1]));
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn class_map_rejects_non_numeric_ids() {
        assert!(decode_class_map(r#"{"car": "car"}"#).is_err());
        let m = decode_class_map(r#"{"7": "car", "12": "cyclist"}"#).unwrap();
        assert_eq!(m[&12], "cyclist");
    }

    #[test]
    fn one_hot_round_trip() {
        let s = SemanticFeature::new(1, 3).unwrap();
        assert_eq!(s.one_hot(), vec![0.0, 1.0, 0.0]);
        assert_eq!(
            SemanticFeature::from_one_hot(&s.one_hot()).unwrap(),
            Some(s)
        );
        assert_eq!(SemanticFeature::from_one_hot(&[0.0, 0.0]).unwrap(), None);
        assert!(SemanticFeature::from_one_hot(&[1.0, 1.0]).is_err());
        assert!(SemanticFeature::new(3, 3).is_err());
    }
}
