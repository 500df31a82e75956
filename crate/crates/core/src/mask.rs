//! Mask data model: label maps, one-hot semantic masks, class palettes,
//! dataset coverage statistics and the class weights derived from them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-pixel class indices, row-major `height × width`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    class_count: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, class_count: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || class_count == 0 {
            return Err(Error::Shape(format!(
                "label map dimensions must be positive, got {height}x{width} with {class_count} classes"
            )));
        }
        if class_count > 256 {
            return Err(Error::Shape(format!("at most 256 classes supported, got {class_count}")));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} labels for {height}x{width}, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::LabelOutOfRange { label: bad as usize, class_count });
        }
        Ok(Self { height, width, class_count, labels })
    }

    /// Map filled with a single class.
    pub fn filled(height: usize, width: usize, class_count: usize, label: u8) -> Result<Self> {
        Self::new(height, width, class_count, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn pixel_count(&self) -> usize {
        self.labels.len()
    }

    /// Same pixels reinterpreted with a different class count.
    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        Self::new(self.height, self.width, class_count, self.labels)
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.class_count];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// Nearest-neighbour resize; never invents labels.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("resize target must be positive".into()));
        }
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.push(self.labels[sy * self.width + sx]);
            }
        }
        Self::new(height, width, self.class_count, out)
    }
}

/// C-channel binary mask where every pixel is set in exactly one channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMask {
    class_count: usize,
    height: usize,
    width: usize,
    channels: Vec<u8>,
}

impl SemanticMask {
    /// Validates the one-hot partition invariant.
    pub fn new(class_count: usize, height: usize, width: usize, channels: Vec<u8>) -> Result<Self> {
        check_mask_dims(class_count, height, width)?;
        let plane = height * width;
        if channels.len() != class_count * plane {
            return Err(Error::Shape(format!(
                "expected {} channel values, got {}",
                class_count * plane,
                channels.len()
            )));
        }
        if let Some(v) = channels.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMask(format!("non-binary value {v}")));
        }
        for p in 0..plane {
            let on: u32 = (0..class_count).map(|c| channels[c * plane + p] as u32).sum();
            if on != 1 {
                return Err(Error::InvalidMask(format!(
                    "pixel ({}, {}) set in {on} channels",
                    p / width,
                    p % width
                )));
            }
        }
        Ok(Self { class_count, height, width, channels })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> &[u8] {
        &self.channels
    }

    pub fn channel(&self, class: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.channels[class * plane..(class + 1) * plane]
    }

    /// Channels as scalars, `C × H·W` row-major.
    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.channels.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect()
    }

    pub fn to_labels(&self) -> LabelMap {
        let plane = self.height * self.width;
        let mut labels = vec![0u8; plane];
        for c in 0..self.class_count {
            for (p, &v) in self.channel(c).iter().enumerate() {
                if v == 1 {
                    labels[p] = c as u8;
                }
            }
        }
        LabelMap { height: self.height, width: self.width, class_count: self.class_count, labels }
    }
}

fn check_mask_dims(class_count: usize, height: usize, width: usize) -> Result<()> {
    if class_count == 0 || height == 0 || width == 0 {
        return Err(Error::Shape("mask dimensions must be positive".into()));
    }
    if !height.is_multiple_of(16) || !width.is_multiple_of(16) {
        return Err(Error::Shape(format!("mask size {height}x{width} is not a multiple of 16")));
    }
    Ok(())
}

/// Indicator encoding: channel `c` is `labels == c`.
pub fn one_hot_encode(labels: &LabelMap) -> Result<SemanticMask> {
    let (c, h, w) = (labels.class_count, labels.height, labels.width);
    check_mask_dims(c, h, w)?;
    let plane = h * w;
    let mut channels = vec![0u8; c * plane];
    for (p, &l) in labels.labels.iter().enumerate() {
        channels[l as usize * plane + p] = 1;
    }
    Ok(SemanticMask { class_count: c, height: h, width: w, channels })
}

/// Per-pixel argmax over `class_count` channels of a `C × H × W` tensor.
/// Ties resolve to the lowest class index.
pub fn one_hot_decode<T: Scalar>(
    values: &[T],
    class_count: usize,
    height: usize,
    width: usize,
) -> Result<LabelMap> {
    let plane = height * width;
    if class_count == 0 || values.len() != class_count * plane {
        return Err(Error::Shape(format!(
            "expected {class_count}x{height}x{width} values, got {}",
            values.len()
        )));
    }
    let mut labels = vec![0u8; plane];
    let mut best: Vec<T> = values[..plane].to_vec();
    for c in 1..class_count {
        let chan = &values[c * plane..(c + 1) * plane];
        for p in 0..plane {
            if chan[p] > best[p] {
                best[p] = chan[p];
                labels[p] = c as u8;
            }
        }
    }
    LabelMap::new(height, width, class_count, labels)
}

/// RGB color triple.
pub type Rgb = [u8; 3];

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PaletteEntry {
    pub index: usize,
    pub name: String,
    pub color: Rgb,
}

/// Ordered class table. Later indices take precedence where parts overlap.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<PaletteEntry>", into = "Vec<PaletteEntry>"))]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
}

impl TryFrom<Vec<PaletteEntry>> for ClassPalette {
    type Error = Error;

    fn try_from(entries: Vec<PaletteEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<ClassPalette> for Vec<PaletteEntry> {
    fn from(p: ClassPalette) -> Self {
        p.entries
    }
}

/// Class order for CelebAMask-HQ: large regions first, small facial details last.
pub const CELEBAMASK_HQ_CLASSES: [(&str, Rgb); 19] = [
    ("background", [0, 0, 0]),
    ("skin", [204, 0, 0]),
    ("cloth", [0, 204, 204]),
    ("neck", [255, 153, 51]),
    ("neck_l", [0, 51, 0]),
    ("hair", [0, 0, 204]),
    ("hat", [255, 255, 0]),
    ("l_ear", [102, 204, 0]),
    ("r_ear", [0, 255, 255]),
    ("ear_r", [255, 51, 153]),
    ("eye_g", [204, 204, 0]),
    ("l_brow", [255, 204, 204]),
    ("r_brow", [102, 51, 0]),
    ("l_eye", [51, 51, 255]),
    ("r_eye", [204, 0, 204]),
    ("nose", [76, 153, 0]),
    ("mouth", [102, 204, 255]),
    ("u_lip", [255, 255, 102]),
    ("l_lip", [0, 153, 0]),
];

/// Class order of the synthetic face generator; a palette for `C` classes
/// uses the first `C` names.
pub const TOY_CLASSES: [(&str, Rgb); 9] = [
    ("background", [0, 0, 0]),
    ("skin", [204, 0, 0]),
    ("eyes", [51, 51, 255]),
    ("nose", [76, 153, 0]),
    ("mouth", [255, 255, 102]),
    ("hair", [0, 0, 204]),
    ("brows", [255, 204, 204]),
    ("ears", [102, 204, 0]),
    ("neck", [255, 153, 51]),
];

impl ClassPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Palette("palette has no entries".into()));
        }
        if entries.len() > 256 {
            return Err(Error::Palette("palette has more than 256 entries".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.index != i {
                return Err(Error::Palette(format!("expected index {i}, found {}", e.index)));
            }
            if e.name.is_empty() || e.name.chars().any(|c| c.is_whitespace()) {
                return Err(Error::Palette(format!("invalid class name {:?}", e.name)));
            }
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Palette(format!("duplicate class name `{}`", e.name)));
            }
            if entries[..i].iter().any(|o| o.color == e.color) {
                return Err(Error::Palette(format!("duplicate color for `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    fn from_table(table: &[(&str, Rgb)]) -> Self {
        let entries = table
            .iter()
            .enumerate()
            .map(|(index, (name, color))| PaletteEntry { index, name: name.to_string(), color: *color })
            .collect();
        Self::new(entries).expect("built-in palette is valid")
    }

    pub fn celebamask_hq() -> Self {
        Self::from_table(&CELEBAMASK_HQ_CLASSES)
    }

    pub fn toy(class_count: usize) -> Result<Self> {
        if !(4..=TOY_CLASSES.len()).contains(&class_count) {
            return Err(Error::Config(format!(
                "toy masks support 4..={} classes, got {class_count}",
                TOY_CLASSES.len()
            )));
        }
        Ok(Self::from_table(&TOY_CLASSES[..class_count]))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.name.as_str())
    }

    pub fn color(&self, index: usize) -> Option<Rgb> {
        self.entries.get(index).map(|e| e.color)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn index_of_color(&self, color: Rgb) -> Option<usize> {
        self.entries.iter().position(|e| e.color == color)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }
}

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

pub fn render_color(labels: &LabelMap, palette: &ClassPalette) -> Result<RgbImage> {
    if palette.len() < labels.class_count {
        return Err(Error::Palette(format!(
            "palette has {} entries, map uses {} classes",
            palette.len(),
            labels.class_count
        )));
    }
    let mut pixels = Vec::with_capacity(labels.labels.len() * 3);
    for &l in &labels.labels {
        pixels.extend_from_slice(&palette.entries[l as usize].color);
    }
    Ok(RgbImage { height: labels.height, width: labels.width, pixels })
}

/// Inverse of [`render_color`]; rejects colors absent from the palette.
pub fn labels_from_color(image: &RgbImage, palette: &ClassPalette) -> Result<LabelMap> {
    let mut labels = Vec::with_capacity(image.height * image.width);
    for px in image.pixels.chunks_exact(3) {
        let color = [px[0], px[1], px[2]];
        let idx = palette.index_of_color(color).ok_or_else(|| {
            Error::Palette(format!("color #{:02x}{:02x}{:02x} not in palette", color[0], color[1], color[2]))
        })?;
        labels.push(idx as u8);
    }
    LabelMap::new(image.height, image.width, palette.len(), labels)
}

/// Binary occupancy plane for one named part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartPlane {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub occupied: Vec<bool>,
}

/// Merges per-part binary planes into one mask. Overlaps resolve to the
/// highest class index; uncovered pixels are background (class 0).
pub fn ingest_partwise(parts: &[PartPlane], palette: &ClassPalette) -> Result<SemanticMask> {
    let first = parts.first().ok_or_else(|| Error::Empty("no part planes".into()))?;
    let (h, w) = (first.height, first.width);
    let mut labels = vec![0u8; h * w];
    let mut resolved: Vec<(usize, &PartPlane)> = Vec::with_capacity(parts.len());
    for part in parts {
        if part.height != h || part.width != w || part.occupied.len() != h * w {
            return Err(Error::Shape(format!(
                "part `{}` is {}x{}, expected {h}x{w}",
                part.name, part.height, part.width
            )));
        }
        let idx = palette.index_of(&part.name).ok_or_else(|| Error::UnknownClass(part.name.clone()))?;
        resolved.push((idx, part));
    }
    resolved.sort_by_key(|(idx, _)| *idx);
    for (idx, part) in resolved {
        for (dst, &on) in labels.iter_mut().zip(&part.occupied) {
            if on {
                *dst = idx as u8;
            }
        }
    }
    one_hot_encode(&LabelMap::new(h, w, palette.len(), labels)?)
}

/// One plane per non-empty, non-background class, in palette order.
pub fn decompose_partwise(mask: &SemanticMask, palette: &ClassPalette) -> Result<Vec<PartPlane>> {
    if palette.len() != mask.class_count {
        return Err(Error::Palette(format!(
            "palette has {} entries, mask has {} classes",
            palette.len(),
            mask.class_count
        )));
    }
    let mut parts = Vec::new();
    for c in 1..mask.class_count {
        let chan = mask.channel(c);
        if chan.contains(&1) {
            parts.push(PartPlane {
                name: palette.entries[c].name.clone(),
                height: mask.height,
                width: mask.width,
                occupied: chan.iter().map(|&v| v == 1).collect(),
            });
        }
    }
    Ok(parts)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetStats {
    pub sample_count: usize,
    pub per_class_mean_coverage: Vec<f64>,
}

/// Exact per-class pixel counts; merging is a plain sum, so any traversal
/// order or sharding gives the same result.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageAccumulator {
    counts: Vec<u64>,
    pixels: u64,
    samples: usize,
    shape: Option<(usize, usize, usize)>,
}

impl CoverageAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_shape(&mut self, shape: (usize, usize, usize)) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(shape);
                self.counts = vec![0; shape.0];
                Ok(())
            }
            Some(s) if s == shape => Ok(()),
            Some(s) => Err(Error::Shape(format!("sample shape {shape:?} differs from {s:?}"))),
        }
    }

    pub fn add_labels(&mut self, labels: &LabelMap) -> Result<()> {
        self.check_shape((labels.class_count, labels.height, labels.width))?;
        for &l in &labels.labels {
            self.counts[l as usize] += 1;
        }
        self.pixels += labels.labels.len() as u64;
        self.samples += 1;
        Ok(())
    }

    pub fn add_mask(&mut self, mask: &SemanticMask) -> Result<()> {
        self.check_shape((mask.class_count, mask.height, mask.width))?;
        for c in 0..mask.class_count {
            self.counts[c] += mask.channel(c).iter().map(|&v| v as u64).sum::<u64>();
        }
        self.pixels += (mask.height * mask.width) as u64;
        self.samples += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &CoverageAccumulator) -> Result<()> {
        let Some(shape) = other.shape else { return Ok(()) };
        self.check_shape(shape)?;
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
        self.pixels += other.pixels;
        self.samples += other.samples;
        Ok(())
    }

    pub fn finish(&self) -> Result<DatasetStats> {
        if self.samples == 0 {
            return Err(Error::Empty("dataset statistics need at least one sample".into()));
        }
        let total = self.pixels as f64;
        Ok(DatasetStats {
            sample_count: self.samples,
            per_class_mean_coverage: self.counts.iter().map(|&n| n as f64 / total).collect(),
        })
    }
}

/// Mean per-class coverage `(1/NHW) Σ x_{c,i,j,k}` over a set of masks.
pub fn compute_dataset_stats<'a, I>(masks: I) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a SemanticMask>,
{
    let mut acc = CoverageAccumulator::new();
    for m in masks {
        acc.add_mask(m)?;
    }
    acc.finish()
}

/// Same as [`compute_dataset_stats`] over label maps.
pub fn compute_label_stats<'a, I>(labels: I) -> Result<DatasetStats>
where
    I: IntoIterator<Item = &'a LabelMap>,
{
    let mut acc = CoverageAccumulator::new();
    for l in labels {
        acc.add_labels(l)?;
    }
    acc.finish()
}

/// Per-class loss weights: one minus the mean coverage of the class.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(class_count: usize) -> Self {
        Self { w: vec![1.0; class_count] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

pub fn compute_class_weights(stats: &DatasetStats) -> ClassWeights {
    ClassWeights { w: stats.per_class_mean_coverage.iter().map(|c| 1.0 - c).collect() }
}
