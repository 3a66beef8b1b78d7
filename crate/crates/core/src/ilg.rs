//! Intricate-layout grounding (ILG) augmentation.
//!
//! A grounding sample (screenshot, target point, description) is turned into
//! a cluttered high-resolution composite: an enhanced background canvas, the
//! target screenshot pasted at a random scale and offset, then distractor
//! screenshots pasted around it. The target point is carried through the same
//! affine map. Every random draw is recorded in [`Provenance`] so a composite
//! can be rebuilt exactly from its inputs.
//!
//! Resampling is nearest-neighbour and rotations are quarter turns, so every
//! composite pixel is a copy of some input pixel.

use image::{imageops, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IlgError {
    #[error("target of size {0}x{1} does not fit the canvas after {2} tries")]
    TargetTooLarge(u32, u32, u32),
    #[error("point ({0}, {1}) lies outside the {2}x{3} source image")]
    PointOutOfBounds(u32, u32, u32, u32),
    #[error("image is empty")]
    EmptyImage,
}

/// Sampling ranges for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlgConfig {
    /// Placed images span this fraction of the canvas's shorter side.
    pub scale_range: (f64, f64),
    pub canvas_width: (u32, u32),
    pub canvas_height: (u32, u32),
    pub max_tries: u32,
}

impl Default for IlgConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.2, 0.6),
            canvas_width: (1600, 2560),
            canvas_height: (900, 1600),
            max_tries: 50,
        }
    }
}

/// One grounding sample: screenshot, target point and its description.
#[derive(Debug, Clone)]
pub struct GroundingMeta {
    pub image: RgbImage,
    pub point: (u32, u32),
    pub description: String,
}

impl GroundingMeta {
    pub fn new(image: RgbImage, point: (u32, u32), description: impl Into<String>) -> Result<Self, IlgError> {
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(IlgError::EmptyImage);
        }
        if point.0 >= w || point.1 >= h {
            return Err(IlgError::PointOutOfBounds(point.0, point.1, w, h));
        }
        Ok(Self {
            image,
            point,
            description: description.into(),
        })
    }
}

/// Axis-aligned pixel rectangle, half-open on the far edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn empty() -> Self {
        Self::new(0, 0, 0, 0)
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        if self.is_empty() || other.is_empty() {
            return false;
        }
        let (ax2, ay2) = (
            u64::from(self.x) + u64::from(self.width),
            u64::from(self.y) + u64::from(self.height),
        );
        let (bx2, by2) = (
            u64::from(other.x) + u64::from(other.width),
            u64::from(other.y) + u64::from(other.height),
        );
        u64::from(self.x) < bx2 && u64::from(other.x) < ax2 && u64::from(self.y) < by2 && u64::from(other.y) < ay2
    }

    pub fn contains(&self, (px, py): (u32, u32)) -> bool {
        px >= self.x && py >= self.y && px - self.x < self.width && py - self.y < self.height
    }
}

/// Where and how large a source image was pasted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub offset: (u32, u32),
    pub scale: f64,
    pub source_size: (u32, u32),
    pub placed_size: (u32, u32),
}

impl Placement {
    pub fn new(offset: (u32, u32), scale: f64, source_size: (u32, u32)) -> Self {
        let dim = |n: u32| ((scale * f64::from(n)).round() as u32).max(1);
        Self {
            offset,
            scale,
            source_size,
            placed_size: (dim(source_size.0), dim(source_size.1)),
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.offset.0, self.offset.1, self.placed_size.0, self.placed_size.1)
    }

    /// Source pixel shown at placed-local pixel `(dx, dy)`.
    pub fn source_pixel(&self, dx: u32, dy: u32) -> (u32, u32) {
        let map = |d: u32, src: u32, placed: u32| ((u64::from(d) * u64::from(src)) / u64::from(placed)) as u32;
        (
            map(dx, self.source_size.0, self.placed_size.0),
            map(dy, self.source_size.1, self.placed_size.1),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stitch {
    None,
    /// Two copies side by side.
    Horizontal,
    /// Two copies stacked.
    Vertical,
}

/// Rotation, tiling and final canvas size applied to a background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundTransform {
    pub quarter_turns: u8,
    pub stitch: Stitch,
    pub canvas: (u32, u32),
}

/// Result of trying to insert one distractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DistractorOutcome {
    Placed { index: usize, placement: Placement },
    Skipped { index: usize, tries: u32 },
}

/// Every random choice behind one composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub background: BackgroundTransform,
    pub target: Placement,
    pub distractors: Vec<DistractorOutcome>,
}

#[derive(Debug, Clone)]
pub struct IlgSample {
    pub composite: RgbImage,
    pub point: (u32, u32),
    pub description: String,
    pub provenance: Provenance,
}

/// Nearest-neighbour resize.
pub fn resize_nearest(src: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let mut out = RgbImage::new(width, height);
    let src_raw = src.as_raw();
    let row_len = sw as usize * 3;
    let xs: Vec<usize> = (0..width)
        .map(|x| ((u64::from(x) * u64::from(sw)) / u64::from(width)) as usize * 3)
        .collect();
    for (y, row) in out.chunks_exact_mut(width as usize * 3).enumerate() {
        let sy = ((y as u64 * u64::from(sh)) / u64::from(height)) as usize;
        let src_row = &src_raw[sy * row_len..(sy + 1) * row_len];
        for (px, &sx) in row.chunks_exact_mut(3).zip(&xs) {
            px.copy_from_slice(&src_row[sx..sx + 3]);
        }
    }
    out
}

fn stitch(img: &RgbImage, how: Stitch) -> RgbImage {
    let (w, h) = img.dimensions();
    match how {
        Stitch::None => img.clone(),
        Stitch::Horizontal => {
            let mut out = RgbImage::new(w * 2, h);
            imageops::replace(&mut out, img, 0, 0);
            imageops::replace(&mut out, img, i64::from(w), 0);
            out
        }
        Stitch::Vertical => {
            let mut out = RgbImage::new(w, h * 2);
            imageops::replace(&mut out, img, 0, 0);
            imageops::replace(&mut out, img, 0, i64::from(h));
            out
        }
    }
}

/// Applies a recorded background transform: rotate, stitch, then resize.
pub fn apply_background_transform(back: &RgbImage, t: &BackgroundTransform) -> RgbImage {
    let rotated = match t.quarter_turns % 4 {
        0 => back.clone(),
        1 => imageops::rotate90(back),
        2 => imageops::rotate180(back),
        _ => imageops::rotate270(back),
    };
    let stitched = stitch(&rotated, t.stitch);
    resize_nearest(&stitched, t.canvas.0, t.canvas.1)
}

/// Draws a random background transform and applies it.
pub fn background_enhance<R: Rng>(back: &RgbImage, rng: &mut R, cfg: &IlgConfig) -> (RgbImage, BackgroundTransform) {
    let quarter_turns = rng.gen_range(0..4u8);
    let stitch = match rng.gen_range(0..3u8) {
        0 => Stitch::None,
        1 => Stitch::Horizontal,
        _ => Stitch::Vertical,
    };
    let canvas = (
        rng.gen_range(cfg.canvas_width.0..=cfg.canvas_width.1),
        rng.gen_range(cfg.canvas_height.0..=cfg.canvas_height.1),
    );
    let t = BackgroundTransform {
        quarter_turns,
        stitch,
        canvas,
    };
    (apply_background_transform(back, &t), t)
}

/// Pastes `src` onto `canvas` at `placement` with nearest-neighbour scaling.
pub fn paste_scaled(canvas: &mut RgbImage, src: &RgbImage, placement: &Placement) {
    let (pw, ph) = placement.placed_size;
    let (ox, oy) = placement.offset;
    let (cw, _) = canvas.dimensions();
    let sw = src.width() as usize;
    let xs: Vec<usize> = (0..pw).map(|dx| placement.source_pixel(dx, 0).0 as usize).collect();
    let src_raw = src.as_raw();
    let dst = canvas.as_mut();
    for dy in 0..ph {
        let sy = placement.source_pixel(0, dy).1 as usize;
        let src_row = &src_raw[sy * sw * 3..(sy + 1) * sw * 3];
        let start = ((oy + dy) as usize * cw as usize + ox as usize) * 3;
        let dst_row = &mut dst[start..start + pw as usize * 3];
        for (px, &sx) in dst_row.chunks_exact_mut(3).zip(&xs) {
            px.copy_from_slice(&src_row[sx * 3..sx * 3 + 3]);
        }
    }
}

/// Samples a scale and an in-bounds offset for `source` on `canvas`,
/// rejecting draws that overlap `forbidden`.
fn draw_placement<R: Rng>(
    canvas: (u32, u32),
    source: (u32, u32),
    rng: &mut R,
    forbidden: Option<&Rect>,
    cfg: &IlgConfig,
) -> Option<Placement> {
    let (cw, ch) = canvas;
    let shorter = f64::from(cw.min(ch));
    let longest = f64::from(source.0.max(source.1));
    for _ in 0..cfg.max_tries {
        let frac = rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1);
        let scale = frac * shorter / longest;
        let probe = Placement::new((0, 0), scale, source);
        let (pw, ph) = probe.placed_size;
        if pw > cw || ph > ch {
            continue;
        }
        let offset = (rng.gen_range(0..=cw - pw), rng.gen_range(0..=ch - ph));
        let placement = Placement::new(offset, scale, source);
        if forbidden.is_some_and(|f| f.intersects(&placement.rect())) {
            continue;
        }
        return Some(placement);
    }
    None
}

/// Pastes the target screenshot at a random scale and position.
pub fn place_target<R: Rng>(
    canvas: &mut RgbImage,
    meta: &GroundingMeta,
    rng: &mut R,
    cfg: &IlgConfig,
) -> Result<Placement, IlgError> {
    let source = meta.image.dimensions();
    let placement = draw_placement(canvas.dimensions(), source, rng, None, cfg).ok_or(IlgError::TargetTooLarge(
        source.0,
        source.1,
        cfg.max_tries,
    ))?;
    paste_scaled(canvas, &meta.image, &placement);
    Ok(placement)
}

/// Pastes a distractor anywhere that does not overlap `forbidden`; gives up
/// (leaving the canvas untouched) after `max_tries` rejected draws.
pub fn interference_insert<R: Rng>(
    canvas: &mut RgbImage,
    distractor: &RgbImage,
    rng: &mut R,
    forbidden: &Rect,
    cfg: &IlgConfig,
) -> Option<Placement> {
    let placement = draw_placement(canvas.dimensions(), distractor.dimensions(), rng, Some(forbidden), cfg)?;
    paste_scaled(canvas, distractor, &placement);
    Some(placement)
}

/// Maps a source-image point onto the composite. The result always lies
/// inside the placed rectangle.
pub fn coordinate_scale(point: (u32, u32), placement: &Placement) -> (u32, u32) {
    let map = |p: u32, placed: u32| ((placement.scale * f64::from(p)).round() as u32).min(placed - 1);
    (
        placement.offset.0 + map(point.0, placement.placed_size.0),
        placement.offset.1 + map(point.1, placement.placed_size.1),
    )
}

/// Builds one ILG sample. Deterministic in `(meta, background, distractors, seed)`.
pub fn synthesize(
    meta: &GroundingMeta,
    background: &RgbImage,
    distractors: &[RgbImage],
    seed: u64,
    cfg: &IlgConfig,
) -> Result<IlgSample, IlgError> {
    if background.width() == 0 || background.height() == 0 {
        return Err(IlgError::EmptyImage);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut canvas, transform) = background_enhance(background, &mut rng, cfg);
    let target = place_target(&mut canvas, meta, &mut rng, cfg)?;
    let forbidden = target.rect();
    let outcomes = distractors
        .iter()
        .enumerate()
        .map(
            |(index, d)| match interference_insert(&mut canvas, d, &mut rng, &forbidden, cfg) {
                Some(placement) => DistractorOutcome::Placed { index, placement },
                None => DistractorOutcome::Skipped {
                    index,
                    tries: cfg.max_tries,
                },
            },
        )
        .collect();
    Ok(IlgSample {
        composite: canvas,
        point: coordinate_scale(meta.point, &target),
        description: meta.description.clone(),
        provenance: Provenance {
            seed,
            background: transform,
            target,
            distractors: outcomes,
        },
    })
}

/// Rebuilds a composite from its inputs and recorded provenance.
pub fn reconstruct(
    meta: &GroundingMeta,
    background: &RgbImage,
    distractors: &[RgbImage],
    provenance: &Provenance,
) -> RgbImage {
    let mut canvas = apply_background_transform(background, &provenance.background);
    paste_scaled(&mut canvas, &meta.image, &provenance.target);
    for outcome in &provenance.distractors {
        if let DistractorOutcome::Placed { index, placement } = outcome {
            paste_scaled(&mut canvas, &distractors[*index], placement);
        }
    }
    canvas
}

/// One line of a grounding-metadata JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    /// Image path relative to the metadata directory.
    pub image: String,
    pub point: [u32; 2],
    pub description: String,
}

/// One line of the ILG output JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlgRecord {
    pub image: String,
    pub point: [u32; 2],
    pub description: String,
    pub source_image: String,
    pub background_image: String,
    pub distractor_images: Vec<String>,
    pub provenance: Provenance,
}
