//! Grayscale sketch canvas: image storage, warps, and multi-zoom crop
//! extraction around query points.
//!
//! Images are square with intensities in `[0, 1]`; ink is 0 and background
//! is 1. Coordinates are continuous, measured in pixels, with the origin at
//! the center of the top-left pixel, `x` growing rightward and `y` downward.
//! Samples outside the canvas read as background (1.0).
//!
//! A [`ZoomStack`] is the network input for one query point: co-centered
//! square crops whose source windows cover fixed fractions of the image side,
//! each bilinearly resampled to a common resolution.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default zoom window sides as fractions of the image side.
pub const DEFAULT_ZOOM_FRACTIONS: [f64; 3] = [0.10, 0.20, 0.40];

/// Default network input resolution per crop.
pub const DEFAULT_CROP_SIZE: usize = 224;

/// A continuous image location in pixel units, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn dist(self, other: Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Square grayscale image, row-major, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchImage {
    side: usize,
    data: Vec<f64>,
}

impl SketchImage {
    pub const MIN_SIDE: usize = 32;

    /// Blank (all background) canvas.
    pub fn blank(side: usize) -> Result<Self> {
        check_side(side)?;
        Ok(SketchImage {
            side,
            data: vec![1.0; side * side],
        })
    }

    pub fn from_pixels(side: usize, data: Vec<f64>) -> Result<Self> {
        check_side(side)?;
        if data.len() != side * side {
            return Err(Error::shape(
                format!("{} pixels for side {side}", side * side),
                data.len().to_string(),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("pixel intensity {v} outside [0, 1]")));
        }
        Ok(SketchImage { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.side + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.side + x] = v.clamp(0.0, 1.0);
    }

    /// True when `p` lies inside the sampled region `[0, side-1]^2`.
    pub fn contains(&self, p: Point2D) -> bool {
        let hi = (self.side - 1) as f64;
        p.x >= 0.0 && p.x <= hi && p.y >= 0.0 && p.y <= hi
    }

    /// Bilinear sample; coordinates outside the canvas read as background.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wy * wx * self.at_or_bg(x0 + dx, y0 + dy);
            }
        }
        acc
    }

    fn at_or_bg(&self, x: i64, y: i64) -> f64 {
        let side = self.side as i64;
        if x < 0 || y < 0 || x >= side || y >= side {
            1.0
        } else {
            self.data[(y * side + x) as usize]
        }
    }

    /// Mean absolute intensity difference against an image of the same side.
    pub fn mean_abs_diff(&self, other: &SketchImage) -> f64 {
        assert_eq!(self.side, other.side, "images must share a side");
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        sum / self.data.len() as f64
    }

    /// Loads an 8-bit grayscale PNG, mapping [0, 255] linearly onto [0, 1].
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::shape("square image", format!("{w}x{h}")));
        }
        let data = img.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect();
        SketchImage::from_pixels(w as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let side = self.side as u32;
        image::save_buffer_with_format(
            path,
            &buf,
            side,
            side,
            image::ColorType::L8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn check_side(side: usize) -> Result<()> {
    if side < SketchImage::MIN_SIDE {
        return Err(Error::domain(format!(
            "image side {side} below minimum {}",
            SketchImage::MIN_SIDE
        )));
    }
    Ok(())
}

/// Rotates image content by `degrees` about `center` (bilinear, background
/// fill).
pub fn rotate_about(img: &SketchImage, center: Point2D, degrees: f64) -> SketchImage {
    warp_similarity(img, center, degrees, 1.0).expect("scale 1 is always valid")
}

/// Rotation plus uniform scaling about `center`. `scale` > 1 magnifies
/// content. Inverse-mapped with bilinear sampling; uncovered pixels read as
/// background.
pub fn warp_similarity(
    img: &SketchImage,
    center: Point2D,
    degrees: f64,
    scale: f64,
) -> Result<SketchImage> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::domain(format!("similarity scale {scale} must be positive")));
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let side = img.side();
    let mut out = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            let dx = col as f64 - center.x;
            let dy = row as f64 - center.y;
            // inverse map: un-scale then un-rotate
            let sx = center.x + (dx * cos + dy * sin) / scale;
            let sy = center.y + (-dx * sin + dy * cos) / scale;
            out[row * side + col] = img.sample(sx, sy);
        }
    }
    Ok(SketchImage { side, data: out })
}

/// Bilinear resize to a new side (endpoints aligned).
pub fn resize(img: &SketchImage, new_side: usize) -> Result<SketchImage> {
    check_side(new_side)?;
    let side = img.side();
    let ratio = if new_side > 1 {
        (side - 1) as f64 / (new_side - 1) as f64
    } else {
        0.0
    };
    let mut out = vec![0.0; new_side * new_side];
    for row in 0..new_side {
        for col in 0..new_side {
            out[row * new_side + col] = img.sample(col as f64 * ratio, row as f64 * ratio);
        }
    }
    Ok(SketchImage {
        side: new_side,
        data: out,
    })
}

/// Co-centered multi-zoom crops around a query point.
#[derive(Clone, Debug)]
pub struct ZoomStack {
    crops: Vec<Array2<f64>>,
    center: Point2D,
    zoom_fractions: Vec<f64>,
}

impl ZoomStack {
    /// Assembles a stack from raw parts, enforcing the stack invariants:
    /// equal square crops with intensities in `[0, 1]` and strictly
    /// increasing zoom fractions in `(0, 1]`, one per crop.
    pub fn from_parts(
        crops: Vec<Array2<f64>>,
        center: Point2D,
        zoom_fractions: Vec<f64>,
    ) -> Result<Self> {
        check_fractions(&zoom_fractions)?;
        if crops.len() != zoom_fractions.len() {
            return Err(Error::shape(
                format!("{} crops", zoom_fractions.len()),
                crops.len().to_string(),
            ));
        }
        let size = crops[0].nrows();
        for c in &crops {
            if c.nrows() != size || c.ncols() != size {
                return Err(Error::shape(
                    format!("{size}x{size} crops"),
                    format!("{}x{}", c.nrows(), c.ncols()),
                ));
            }
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::domain("crop intensity outside [0, 1]"));
            }
        }
        Ok(ZoomStack {
            crops,
            center,
            zoom_fractions,
        })
    }

    pub fn crops(&self) -> &[Array2<f64>] {
        &self.crops
    }

    pub fn center(&self) -> Point2D {
        self.center
    }

    pub fn zoom_fractions(&self) -> &[f64] {
        &self.zoom_fractions
    }

    pub fn crop_size(&self) -> usize {
        self.crops[0].nrows()
    }
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::domain("zoom fractions must be non-empty"));
    }
    for pair in fractions.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::domain(format!(
                "zoom fractions must be strictly increasing, got {fractions:?}"
            )));
        }
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::domain(format!(
            "zoom fractions must lie in (0, 1], got {fractions:?}"
        )));
    }
    Ok(())
}

/// Source window side in pixels for one zoom level.
pub fn crop_source_side(image_side: usize, fraction: f64) -> usize {
    (fraction * image_side as f64).floor() as usize
}

/// Extracts the multi-zoom stack around `p`.
///
/// Each zoom level reads a `floor(fraction * side)`-pixel square window
/// centered on `p` and resamples it bilinearly to `crop_size`; parts of the
/// window outside the canvas read as background.
pub fn extract_zoom_stack(
    image: &SketchImage,
    p: Point2D,
    zoom_fractions: &[f64],
    crop_size: usize,
) -> Result<ZoomStack> {
    check_fractions(zoom_fractions)?;
    if crop_size == 0 {
        return Err(Error::domain("crop_size must be positive"));
    }
    if !image.contains(p) {
        return Err(Error::domain(format!(
            "query point ({}, {}) outside image of side {}",
            p.x,
            p.y,
            image.side()
        )));
    }
    let mut crops = Vec::with_capacity(zoom_fractions.len());
    for &f in zoom_fractions {
        let w = crop_source_side(image.side(), f);
        if w == 0 {
            return Err(Error::domain(format!(
                "zoom fraction {f} yields an empty window on side {}",
                image.side()
            )));
        }
        crops.push(sample_crop(image, p, w as f64, crop_size, 0.0));
    }
    Ok(ZoomStack {
        crops,
        center: p,
        zoom_fractions: zoom_fractions.to_vec(),
    })
}

/// Resamples a `source_side`-pixel window centered on `p` into a
/// `crop_size` grid. `rot_deg` rotates the source content about `p` (the
/// result equals rotating the image first, without the second resampling
/// pass).
fn sample_crop(
    img: &SketchImage,
    p: Point2D,
    source_side: f64,
    crop_size: usize,
    rot_deg: f64,
) -> Array2<f64> {
    let (sin, cos) = rot_deg.to_radians().sin_cos();
    let step = source_side / crop_size as f64;
    let half = source_side / 2.0;
    Array2::from_shape_fn((crop_size, crop_size), |(row, col)| {
        let u = (col as f64 + 0.5) * step - half;
        let v = (row as f64 + 0.5) * step - half;
        // content rotated by rot_deg <=> sampling frame rotated by -rot_deg
        let x = p.x + u * cos + v * sin;
        let y = p.y - u * sin + v * cos;
        img.sample(x, y)
    })
}

/// Training-time stack augmentation parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Shared rotation of the source about the query point, degrees,
    /// sampled uniformly from this closed range.
    pub rotation_deg: (f64, f64),
    /// Probability of resampling the source image to a smaller side before
    /// extraction.
    pub downsample_probability: f64,
    /// Candidate side reductions; 0.30 shrinks the side by 30%.
    pub downsample_factors: Vec<f64>,
    /// Per-crop zoom perturbation: window side is scaled by (1 + g) with
    /// g ~ Normal(mean, sigma^2) clamped to g >= -0.9.
    pub zoom_noise_mean: f64,
    pub zoom_noise_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: (0.0, 360.0),
            downsample_probability: 0.2,
            downsample_factors: vec![0.30, 0.60],
            zoom_noise_mean: 0.0,
            zoom_noise_sigma: 0.3,
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves stacks untouched.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: (0.0, 0.0),
            downsample_probability: 0.0,
            downsample_factors: Vec::new(),
            zoom_noise_mean: 0.0,
            zoom_noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rotation_deg;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("bad rotation range ({lo}, {hi})")));
        }
        if !(0.0..=1.0).contains(&self.downsample_probability) {
            return Err(Error::Config(format!(
                "downsample probability {} outside [0, 1]",
                self.downsample_probability
            )));
        }
        if self.downsample_probability > 0.0 && self.downsample_factors.is_empty() {
            return Err(Error::Config(
                "downsampling enabled but no factors given".into(),
            ));
        }
        if self.downsample_factors.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::Config(format!(
                "downsample factors must lie in [0, 1): {:?}",
                self.downsample_factors
            )));
        }
        if self.zoom_noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "zoom noise sigma {} must be non-negative",
                self.zoom_noise_sigma
            )));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation randomness.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub rotation_deg: f64,
    pub downsample_factor: Option<f64>,
    /// One window-scale perturbation per crop.
    pub zoom_noise: Vec<f64>,
}

impl AugmentPlan {
    /// Draws a plan. The draw order (rotation, downsample gate, factor
    /// choice, per-crop noise) is fixed so seeded runs replay exactly.
    pub fn sample(cfg: &AugmentConfig, n_crops: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (lo, hi) = cfg.rotation_deg;
        let rotation_deg = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let gate: f64 = rng.random();
        let downsample_factor = if gate < cfg.downsample_probability {
            let ix = rng.random_range(0..cfg.downsample_factors.len());
            Some(cfg.downsample_factors[ix])
        } else {
            None
        };
        let normal = Normal::new(cfg.zoom_noise_mean, cfg.zoom_noise_sigma)
            .map_err(|e| Error::Config(format!("zoom noise: {e}")))?;
        let zoom_noise = (0..n_crops)
            .map(|_| normal.sample(rng).max(-0.9))
            .collect();
        Ok(AugmentPlan {
            rotation_deg,
            downsample_factor,
            zoom_noise,
        })
    }
}

/// Re-extracts `stack` from its source image under a random augmentation:
/// a shared rotation about the query point, optional source downsampling,
/// and an independent window-scale perturbation per crop.
pub fn augment_stack(
    stack: &ZoomStack,
    image: &SketchImage,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<ZoomStack> {
    let plan = AugmentPlan::sample(cfg, stack.crops().len(), rng)?;
    apply_augment_plan(stack, image, &plan)
}

/// Deterministic part of [`augment_stack`], applying an explicit plan.
pub fn apply_augment_plan(
    stack: &ZoomStack,
    image: &SketchImage,
    plan: &AugmentPlan,
) -> Result<ZoomStack> {
    if plan.zoom_noise.len() != stack.crops().len() {
        return Err(Error::shape(
            format!("{} zoom noise draws", stack.crops().len()),
            plan.zoom_noise.len().to_string(),
        ));
    }
    let mut scaled;
    let (src, p) = match plan.downsample_factor {
        Some(f) => {
            let new_side = ((image.side() as f64) * (1.0 - f)).round() as usize;
            if new_side >= SketchImage::MIN_SIDE {
                let ratio = (new_side - 1) as f64 / (image.side() - 1) as f64;
                scaled = resize(image, new_side)?;
                let p = Point2D::new(stack.center().x * ratio, stack.center().y * ratio);
                (&mut scaled as &SketchImage, p)
            } else {
                // too small to represent; skip the downsampling leg
                (image, stack.center())
            }
        }
        None => (image, stack.center()),
    };
    let crop_size = stack.crop_size();
    let mut crops = Vec::with_capacity(stack.crops().len());
    for (&f, &g) in stack.zoom_fractions().iter().zip(&plan.zoom_noise) {
        let f_eff = (f * (1.0 + g)).min(1.0);
        let w = (crop_source_side(src.side(), f_eff) as f64).max(1.0);
        crops.push(sample_crop(src, p, w, crop_size, plan.rotation_deg));
    }
    Ok(ZoomStack {
        crops,
        center: stack.center(),
        zoom_fractions: stack.zoom_fractions().to_vec(),
    })
}
