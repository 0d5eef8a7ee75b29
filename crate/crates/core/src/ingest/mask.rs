use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Classes the pipeline distinguishes. Discriminants are the stored ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum SemanticClass {
    Road = 0,
    Sidewalk = 1,
    Other = 255,
}

impl SemanticClass {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Self::Road),
            1 => Some(Self::Sidewalk),
            255 => Some(Self::Other),
            _ => None,
        }
    }
}

/// Raw raster ids that map to road and sidewalk; anything else is "other".
///
/// Defaults to the Cityscapes train-id convention (road = 0, sidewalk = 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMap {
    pub road: Vec<u8>,
    pub sidewalk: Vec<u8>,
}

impl Default for ClassMap {
    fn default() -> Self {
        Self {
            road: vec![0],
            sidewalk: vec![1],
        }
    }
}

impl ClassMap {
    pub fn classify(&self, raw: u8) -> SemanticClass {
        if self.sidewalk.contains(&raw) {
            SemanticClass::Sidewalk
        } else if self.road.contains(&raw) {
            SemanticClass::Road
        } else {
            SemanticClass::Other
        }
    }

    /// Raw ids claimed by both classes.
    pub fn overlapping(&self) -> Vec<u8> {
        self.road
            .iter()
            .copied()
            .filter(|id| self.sidewalk.contains(id))
            .collect()
    }

    fn lookup_table(&self) -> [SemanticClass; 256] {
        let mut table = [SemanticClass::Other; 256];
        for (raw, slot) in table.iter_mut().enumerate() {
            *slot = self.classify(raw as u8);
        }
        table
    }
}

/// Row-major per-pixel class raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    width: usize,
    height: usize,
    classes: Vec<SemanticClass>,
}

impl SemanticMask {
    pub fn new(width: usize, height: usize, classes: Vec<SemanticClass>) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        assert_eq!(classes.len(), width * height, "mask payload length");
        Self {
            width,
            height,
            classes,
        }
    }

    pub fn filled(width: usize, height: usize, class: SemanticClass) -> Self {
        Self::new(width, height, vec![class; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[SemanticClass] {
        &self.classes
    }

    pub fn get(&self, u: usize, v: usize) -> SemanticClass {
        self.classes[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, class: SemanticClass) {
        self.classes[v * self.width + u] = class;
    }

    /// Classes of column `u`, top row first.
    pub fn column(&self, u: usize) -> Vec<SemanticClass> {
        (0..self.height).map(|v| self.get(u, v)).collect()
    }

    pub fn count(&self, class: SemanticClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }

    pub fn fraction(&self, class: SemanticClass) -> f64 {
        self.count(class) as f64 / self.classes.len() as f64
    }
}

pub fn load_mask(path: &Path, class_map: &ClassMap) -> Result<SemanticMask, IngestError> {
    let raster_err = |reason: String| IngestError::Raster {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = png::Decoder::new(file)
        .read_info()
        .map_err(|e| raster_err(e.to_string()))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if width == 0 || height == 0 {
        return Err(IngestError::EmptyDimension {
            path: path.to_path_buf(),
        });
    }
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(raster_err(format!(
            "expected 8-bit single-channel raster, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| raster_err(e.to_string()))?;
    let table = class_map.lookup_table();
    let classes = (0..height)
        .flat_map(|v| {
            let row = &buf[v * frame.line_size..v * frame.line_size + width];
            row.iter().map(|&raw| table[raw as usize])
        })
        .collect();
    Ok(SemanticMask::new(width, height, classes))
}

/// Writes class ids (0, 1, 255) as an 8-bit grayscale PNG.
pub fn save_mask(path: &Path, mask: &SemanticMask) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raster_err = |e: png::EncodingError| IngestError::Raster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder =
        png::Encoder::new(BufWriter::new(file), mask.width as u32, mask.height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(raster_err)?;
    let bytes: Vec<u8> = mask.classes.iter().map(|c| c.id()).collect();
    writer.write_image_data(&bytes).map_err(raster_err)?;
    writer.finish().map_err(raster_err)
}

/// 4-connected components of pixels equal to `class`.
fn components(mask: &SemanticMask, class: SemanticClass) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || mask.classes[start] != class {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for j in neighbours(i, w, h).into_iter().flatten() {
                if !seen[j] && mask.classes[j] == class {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(members);
    }
    out
}

fn neighbours(i: usize, w: usize, h: usize) -> [Option<usize>; 4] {
    let (u, v) = (i % w, i / w);
    [
        (u > 0).then(|| i - 1),
        (u + 1 < w).then(|| i + 1),
        (v > 0).then(|| i - w),
        (v + 1 < h).then(|| i + w),
    ]
}

/// Removes small road/sidewalk regions and fills small enclosed holes.
///
/// Road and sidewalk components with fewer than `min_region_px` pixels become
/// "other". Afterwards, every "other" component that does not touch the image
/// border, is bordered by a single class, and has fewer than `max_hole_px`
/// pixels takes that class.
pub fn postprocess_mask(
    mask: &SemanticMask,
    min_region_px: usize,
    max_hole_px: usize,
) -> SemanticMask {
    let mut out = mask.clone();
    let (w, h) = (out.width, out.height);

    for class in [SemanticClass::Road, SemanticClass::Sidewalk] {
        for comp in components(&out, class) {
            if comp.len() < min_region_px {
                for i in comp {
                    out.classes[i] = SemanticClass::Other;
                }
            }
        }
    }

    for comp in components(&out, SemanticClass::Other) {
        if comp.len() >= max_hole_px {
            continue;
        }
        let mut border: Option<SemanticClass> = None;
        let mut enclosed = true;
        'scan: for &i in &comp {
            let (u, v) = (i % w, i / w);
            if u == 0 || v == 0 || u + 1 == w || v + 1 == h {
                enclosed = false;
                break;
            }
            for j in neighbours(i, w, h).into_iter().flatten() {
                let c = out.classes[j];
                if c == SemanticClass::Other {
                    continue;
                }
                match border {
                    None => border = Some(c),
                    Some(b) if b != c => {
                        enclosed = false;
                        break 'scan;
                    }
                    Some(_) => {}
                }
            }
        }
        if let (true, Some(fill)) = (enclosed, border) {
            for i in comp {
                out.classes[i] = fill;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRejection {
    InsufficientSidewalk,
    InsufficientRoad,
}

impl fmt::Display for SupportRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InsufficientSidewalk => f.write_str("insufficient sidewalk"),
            Self::InsufficientRoad => f.write_str("insufficient road"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportDecision {
    Accept,
    Reject(SupportRejection),
}

pub fn check_support(
    mask: &SemanticMask,
    min_sidewalk_frac: f64,
    min_road_frac: f64,
) -> SupportDecision {
    if mask.fraction(SemanticClass::Sidewalk) < min_sidewalk_frac {
        SupportDecision::Reject(SupportRejection::InsufficientSidewalk)
    } else if mask.fraction(SemanticClass::Road) < min_road_frac {
        SupportDecision::Reject(SupportRejection::InsufficientRoad)
    } else {
        SupportDecision::Accept
    }
}
