//! Raster primitives and geometry shared by every pipeline stage.
//!
//! Coordinates: origin top-left, `x` to the right, `y` downward. Rasters are
//! stored row-major (`index = y * width + x`). Bounding boxes are half-open.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major 2-D grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "raster of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// One intensity channel, values in `[0, 1]`.
pub type Channel = Raster<f32>;

/// Median of all channel values (mean of the two middle values for even counts).
pub fn channel_median(channel: &Channel) -> f32 {
    let mut values = channel.as_slice().to_vec();
    let mid = values.len() / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    let upper = *upper;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        0.5 * (lower + upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Nucleus,
    CellMarker,
    SubcellularMarker,
    Other,
}

/// Which pipeline stages an image must support; drives role validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageRequest {
    pub cells: bool,
    pub subcellular: bool,
}

/// A multi-channel microscopy image with one role per channel.
#[derive(Debug, Clone)]
pub struct MultiChannelImage {
    channels: Vec<Channel>,
    roles: Vec<ChannelRole>,
}

impl MultiChannelImage {
    pub fn new(channels: Vec<Channel>, roles: Vec<ChannelRole>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::InvalidImage("image has no channels".into()));
        };
        let dims = first.dims();
        if let Some(bad) = channels.iter().find(|c| c.dims() != dims) {
            return Err(Error::DimensionMismatch(format!(
                "channel is {:?}, expected {:?}",
                bad.dims(),
                dims
            )));
        }
        if roles.len() != channels.len() {
            return Err(Error::InvalidImage(format!(
                "{} channels but {} roles",
                channels.len(),
                roles.len()
            )));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidImage(format!(
                    "channel {i} has intensities outside [0, 1]"
                )));
            }
        }
        let nuclei = roles.iter().filter(|r| **r == ChannelRole::Nucleus).count();
        if nuclei > 1 {
            return Err(Error::InvalidImage(
                "more than one nucleus channel".into(),
            ));
        }
        if roles
            .iter()
            .filter(|r| **r == ChannelRole::SubcellularMarker)
            .count()
            > 1
        {
            return Err(Error::InvalidImage(
                "more than one subcellular marker channel".into(),
            ));
        }
        Ok(Self { channels, roles })
    }

    /// Checks the role assumptions for the requested stages.
    pub fn validate(&self, stages: StageRequest) -> Result<()> {
        self.nucleus_channel()?;
        if stages.cells && self.cell_marker_channels().is_empty() {
            return Err(Error::NoCellMarkerChannel);
        }
        if stages.subcellular {
            self.subcellular_channel()?;
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn roles(&self) -> &[ChannelRole] {
        &self.roles
    }

    pub fn nucleus_channel(&self) -> Result<&Channel> {
        self.channel_with(ChannelRole::Nucleus)
            .ok_or(Error::NoNucleusChannel)
    }

    pub fn subcellular_channel(&self) -> Result<&Channel> {
        self.channel_with(ChannelRole::SubcellularMarker)
            .ok_or(Error::NoSubcellularChannel)
    }

    pub fn has_subcellular_channel(&self) -> bool {
        self.channel_with(ChannelRole::SubcellularMarker).is_some()
    }

    pub fn cell_marker_channels(&self) -> Vec<&Channel> {
        self.roles
            .iter()
            .zip(&self.channels)
            .filter(|(r, _)| **r == ChannelRole::CellMarker)
            .map(|(_, c)| c)
            .collect()
    }

    fn channel_with(&self, role: ChannelRole) -> Option<&Channel> {
        self.roles
            .iter()
            .position(|r| *r == role)
            .map(|i| &self.channels[i])
    }
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::DegenerateBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x < self.x1 as f64 && y >= self.y0 as f64 && y < self.y1 as f64
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

/// Scales a box about its center by `factor` per side, rounding outward and
/// clipping to `bounds = (width, height)`.
pub fn scale_bbox(b: &BoundingBox, factor: f64, bounds: (usize, usize)) -> Result<BoundingBox> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {factor}"
        )));
    }
    if b.x0 >= b.x1 || b.y0 >= b.y1 {
        return Err(Error::DegenerateBox {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
        });
    }
    let (w, h) = bounds;
    let (cx, cy) = b.center();
    let hw = b.width() as f64 * factor / 2.0;
    let hh = b.height() as f64 * factor / 2.0;
    const EPS: f64 = 1e-9;
    let lo = |v: f64| (v + EPS).floor().max(0.0) as usize;
    let hi = |v: f64, limit: usize| ((v - EPS).ceil().max(0.0) as usize).min(limit);
    let x0 = lo(cx - hw).min(w.saturating_sub(1));
    let y0 = lo(cy - hh).min(h.saturating_sub(1));
    let x1 = hi(cx + hw, w).max(x0 + 1);
    let y1 = hi(cy + hh, h).max(y0 + 1);
    Ok(BoundingBox { x0, y0, x1, y1 })
}

/// A boolean raster with a cached foreground count.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    area: usize,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area)
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            area: 0,
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask of {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        let area = bits.iter().filter(|b| **b).count();
        Ok(Self {
            width,
            height,
            bits,
            area,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }

    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut mask = Self::empty(width, height);
        for (x, y) in pixels {
            mask.set(x, y, true);
        }
        mask
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.area
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        let slot = &mut self.bits[y * self.width + x];
        if *slot != value {
            *slot = value;
            if value {
                self.area += 1;
            } else {
                self.area -= 1;
            }
        }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    /// True pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "masks are {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| f(*a, *b))
            .collect();
        BinaryMask::from_bits(self.width, self.height, bits)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Arithmetic mean of true-pixel coordinates.
    pub fn centroid(&self) -> Result<(f64, f64)> {
        if self.is_empty() {
            return Err(Error::EmptyMask);
        }
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
        }
        let n = self.area as f64;
        Ok((sx / n, sy / n))
    }
}

/// Tightest half-open box containing every true pixel.
pub fn mask_to_bbox(m: &BinaryMask) -> Result<BoundingBox> {
    if m.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (x, y) in m.pixels() {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    Ok(BoundingBox { x0, y0, x1, y1 })
}

/// True iff any foreground pixel lies on the outermost row or column.
pub fn pixels_on_border(m: &BinaryMask) -> bool {
    let (w, h) = m.dims();
    if w == 0 || h == 0 {
        return false;
    }
    (0..w).any(|x| m.get(x, 0) || m.get(x, h - 1)) || (0..h).any(|y| m.get(0, y) || m.get(w - 1, y))
}

/// Monotone map from raw score to foreground probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Scores are logits; probability = 1 / (1 + e^-s).
    #[default]
    Sigmoid,
    /// Scores already are probabilities; clamped to `[0, 1]`.
    Clamp,
}

impl Calibration {
    #[inline]
    pub fn probability(self, score: f32) -> f32 {
        match self {
            Calibration::Sigmoid => 1.0 / (1.0 + (-score).exp()),
            Calibration::Clamp => score.clamp(0.0, 1.0),
        }
    }
}

/// Real-valued grid at a backend's native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    values: Raster<f32>,
    calibration: Calibration,
}

impl ScoreGrid {
    pub fn new(values: Raster<f32>, calibration: Calibration) -> Result<Self> {
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score grid".into()));
        }
        Ok(Self {
            values,
            calibration,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32, calibration: Calibration) -> Self {
        Self {
            values: Raster::filled(width, height, value),
            calibration,
        }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn values(&self) -> &Raster<f32> {
        &self.values
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        *self.values.get(x, y)
    }

    #[inline]
    pub fn probability(&self, x: usize, y: usize) -> f32 {
        self.calibration.probability(self.get(x, y))
    }

    /// Element-wise mean of two equally-sized grids (the recursive mask prior).
    pub fn mean(&self, other: &ScoreGrid) -> Result<ScoreGrid> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "score grids {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(other.values.as_slice())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        Ok(ScoreGrid {
            values: Raster::from_vec(self.width(), self.height(), data)?,
            calibration: self.calibration,
        })
    }

    /// Thresholds the grid (after resampling to `dims` if needed): `score > threshold`.
    pub fn threshold_to_mask(&self, threshold: f32, dims: (usize, usize)) -> Result<BinaryMask> {
        let resampled;
        let grid = if self.dims() == dims {
            self
        } else {
            resampled = resample_score_grid(self, dims)?;
            &resampled
        };
        let bits = grid
            .values
            .as_slice()
            .iter()
            .map(|v| *v > threshold)
            .collect();
        BinaryMask::from_bits(dims.0, dims.1, bits)
    }
}

/// Bilinear resampling with corner-aligned sample positions: target pixel `j`
/// reads source coordinate `j · (src − 1) / (dst − 1)`.
pub fn resample_score_grid(g: &ScoreGrid, target: (usize, usize)) -> Result<ScoreGrid> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::InvalidDimensions {
            width: tw,
            height: th,
        });
    }
    let (sw, sh) = g.dims();
    if (sw, sh) == target {
        return Ok(g.clone());
    }
    let xs = axis_samples(sw, tw);
    let ys = axis_samples(sh, th);
    let src = g.values();
    let values = Raster::from_fn(tw, th, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let top = lerp(*src.get(x0, y0), *src.get(x1, y0), fx);
        let bottom = lerp(*src.get(x0, y1), *src.get(x1, y1), fx);
        lerp(top, bottom, fy)
    });
    Ok(ScoreGrid {
        values,
        calibration: g.calibration(),
    })
}

/// Bilinear resize of an intensity channel, same corner-aligned convention as
/// [`resample_score_grid`].
pub fn resize_channel(c: &Channel, target: (usize, usize)) -> Result<Channel> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::InvalidDimensions {
            width: tw,
            height: th,
        });
    }
    if c.dims() == target {
        return Ok(c.clone());
    }
    let xs = axis_samples(c.width(), tw);
    let ys = axis_samples(c.height(), th);
    Ok(Raster::from_fn(tw, th, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let top = lerp(*c.get(x0, y0), *c.get(x1, y0), fx);
        let bottom = lerp(*c.get(x0, y1), *c.get(x1, y1), fx);
        lerp(top, bottom, fy)
    }))
}

#[inline]
fn lerp(a: f32, b: f32, t: f64) -> f32 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        (a as f64 + (b as f64 - a as f64) * t) as f32
    }
}

fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|j| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            // Exact rational position j * (src-1) / (dst-1).
            let num = j * (src - 1);
            let den = dst - 1;
            let i0 = num / den;
            let rem = num % den;
            if rem == 0 {
                (i0, i0, 0.0)
            } else {
                (i0, (i0 + 1).min(src - 1), rem as f64 / den as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Foreground,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: usize,
    pub y: usize,
    pub polarity: Polarity,
}

impl PointPrompt {
    pub fn foreground(x: usize, y: usize) -> Self {
        Self {
            x,
            y,
            polarity: Polarity::Foreground,
        }
    }

    pub fn background(x: usize, y: usize) -> Self {
        Self {
            x,
            y,
            polarity: Polarity::Background,
        }
    }

    pub fn is_foreground(&self) -> bool {
        self.polarity == Polarity::Foreground
    }
}

/// Global per-pixel instance assignment (0 = background).
///
/// `source_ids[k - 1]` is the id of the seed (nucleus) that produced label `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceLabelMap {
    labels: Raster<u32>,
    source_ids: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            labels: Raster::filled(width, height, 0),
            source_ids: Vec::new(),
        }
    }

    /// Builds a map from raw labels; labels are compacted to `1..=K` in order
    /// of their original value. Source ids default to the original values.
    pub fn from_raw(labels: Raster<u32>) -> Self {
        let mut present: Vec<u32> = labels.as_slice().iter().copied().filter(|l| *l != 0).collect();
        present.sort_unstable();
        present.dedup();
        let labels = labels.map(|l| match present.binary_search(l) {
            Ok(i) => i as u32 + 1,
            Err(_) => 0,
        });
        Self {
            labels,
            source_ids: present,
        }
    }

    /// Labels plus an explicit source id per label (label `k` ↔ `source_ids[k-1]`).
    pub fn with_sources(labels: Raster<u32>, source_ids: Vec<u32>) -> Result<Self> {
        if let Some(max) = labels.as_slice().iter().max() {
            if *max as usize > source_ids.len() {
                return Err(Error::InvalidArgument(format!(
                    "label {max} has no source id ({} given)",
                    source_ids.len()
                )));
            }
        }
        Ok(Self { labels, source_ids }.compacted())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn raster(&self) -> &Raster<u32> {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        *self.labels.get(x, y)
    }

    pub fn num_labels(&self) -> usize {
        self.source_ids.len()
    }

    pub fn source_ids(&self) -> &[u32] {
        &self.source_ids
    }

    pub fn source_of(&self, label: u32) -> Option<u32> {
        (label as usize)
            .checked_sub(1)
            .and_then(|i| self.source_ids.get(i))
            .copied()
    }

    pub fn label_of_source(&self, source: u32) -> Option<u32> {
        self.source_ids
            .iter()
            .position(|s| *s == source)
            .map(|i| i as u32 + 1)
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        let (w, h) = self.dims();
        let bits = self.labels.as_slice().iter().map(|l| *l == label).collect();
        BinaryMask::from_bits(w, h, bits).expect("dims match")
    }

    /// Per-label masks, index `k - 1` for label `k`.
    pub fn masks(&self) -> Vec<BinaryMask> {
        let (w, h) = self.dims();
        let mut masks = vec![BinaryMask::empty(w, h); self.num_labels()];
        for (i, l) in self.labels.as_slice().iter().enumerate() {
            if *l != 0 {
                masks[*l as usize - 1].set(i % w, i / w, true);
            }
        }
        masks
    }

    pub fn foreground(&self) -> BinaryMask {
        let (w, h) = self.dims();
        let bits = self.labels.as_slice().iter().map(|l| *l != 0).collect();
        BinaryMask::from_bits(w, h, bits).expect("dims match")
    }

    /// Drops labels with no pixels and renumbers the rest `1..=K`, keeping order.
    fn compacted(self) -> Self {
        let n = self.source_ids.len();
        let mut used = vec![false; n + 1];
        for l in self.labels.as_slice() {
            used[*l as usize] = true;
        }
        let mut remap = vec![0u32; n + 1];
        let mut sources = Vec::new();
        for k in 1..=n {
            if used[k] {
                sources.push(self.source_ids[k - 1]);
                remap[k] = sources.len() as u32;
            }
        }
        let labels = self.labels.map(|l| remap[*l as usize]);
        Self {
            labels,
            source_ids: sources,
        }
    }

    /// Replaces every listed label with background and compacts.
    pub fn without_labels(&self, drop: &[u32]) -> Self {
        let labels = self.labels.map(|l| if drop.contains(l) { 0 } else { *l });
        Self {
            labels,
            source_ids: self.source_ids.clone(),
        }
        .compacted()
    }
}
