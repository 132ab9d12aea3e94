//! Procedural line-drawing corpus with exact ground-truth keypoints.
//!
//! Four parametric templates (mug, lamp, chair, rocket) are drawn as
//! polyline strokes in a canonical unit square. Instances jitter the shape
//! parameters, wobble the strokes, and may drop decorative strokes; views
//! apply fixed projective transforms. Keypoints are arc-length positions on
//! structural strokes, so they exist on every instance of a category and
//! map through the same transforms as the ink, giving exact correspondences
//! between all sketches of a category.

use super::{Corpus, CorrespondenceSet, SketchRecord};
use crate::canvas::{Point2D, SketchImage};
use crate::error::{Error, Result};
use crate::seeding;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

pub const CATEGORY_NAMES: [&str; 4] = ["mug", "lamp", "chair", "rocket"];
pub const VIEW_NAMES: [&str; 3] = ["front", "right", "front_right"];

/// Keypoint candidates per structural stroke (arc-length fractions i/12).
const FRACTIONS_PER_STROKE: usize = 13;
/// Candidates closer than this (canonical units) to an earlier one are
/// dropped, so stroke junctions yield one keypoint, not several.
const DEDUPE_EPS: f64 = 0.008;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_categories: usize,
    pub shapes_per_category: usize,
    pub points_per_shape: usize,
    pub views: Vec<String>,
    pub side: usize,
    /// Scale on shape-parameter jitter; 0 makes all instances congruent.
    pub jitter: f64,
    /// Stroke wobble amplitude in canonical units.
    pub wobble: f64,
    /// Probability that each decorative stroke is omitted.
    pub dropout_probability: f64,
    /// Stroke width as a fraction of the image side.
    pub stroke_width: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_categories: 4,
            shapes_per_category: 10,
            points_per_shape: 70,
            views: VIEW_NAMES.iter().map(|v| v.to_string()).collect(),
            side: 512,
            jitter: 1.0,
            wobble: 0.004,
            dropout_probability: 0.3,
            stroke_width: 0.006,
            seed: 0,
        }
    }
}

/// Per-sketch generation record kept alongside the corpus for tests and
/// ground-truth consumers (part labels, transform replay).
#[derive(Clone, Debug)]
pub struct SketchTrace {
    pub sketch_id: String,
    /// canonical -> pixel homography (row-major 3x3)
    pub transform: [[f64; 3]; 3],
    /// jittered canonical keypoint positions, same order as record points
    pub canonical_points: Vec<(String, Point2D)>,
    /// point_id -> part label of the stroke the keypoint lies on
    pub point_parts: Vec<(String, String)>,
    /// rendered strokes as (part label, pixel polyline)
    pub strokes: Vec<(String, Vec<Point2D>)>,
}

#[derive(Clone, Debug)]
pub struct ToyTrace {
    pub sketches: Vec<SketchTrace>,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub corpus: Corpus,
    pub trace: ToyTrace,
}

struct TemplateStroke {
    part: &'static str,
    decor: bool,
    points: Vec<Point2D>,
}

fn pts(raw: Vec<(f64, f64)>) -> Vec<Point2D> {
    raw.into_iter().map(|(x, y)| Point2D::new(x, y)).collect()
}

fn line(a: (f64, f64), b: (f64, f64)) -> Vec<Point2D> {
    let n = 24;
    pts((0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        })
        .collect())
}

/// Elliptical arc, angles in degrees, y axis pointing down.
fn arc(c: (f64, f64), rx: f64, ry: f64, deg0: f64, deg1: f64) -> Vec<Point2D> {
    let n = 48;
    pts((0..=n)
        .map(|i| {
            let t = deg0 + (deg1 - deg0) * i as f64 / n as f64;
            let a = t.to_radians();
            (c.0 + rx * a.cos(), c.1 + ry * a.sin())
        })
        .collect())
}

fn ellipse(c: (f64, f64), rx: f64, ry: f64) -> Vec<Point2D> {
    arc(c, rx, ry, 0.0, 360.0)
}

/// Quadratic bezier through control point b.
fn curve3(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> Vec<Point2D> {
    let n = 32;
    pts((0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            let u = 1.0 - t;
            (
                u * u * a.0 + 2.0 * u * t * b.0 + t * t * c.0,
                u * u * a.1 + 2.0 * u * t * b.1 + t * t * c.1,
            )
        })
        .collect())
}

fn stroke(part: &'static str, decor: bool, points: Vec<Point2D>) -> TemplateStroke {
    TemplateStroke {
        part,
        decor,
        points,
    }
}

fn mug(p: &[f64; 6]) -> Vec<TemplateStroke> {
    let w = 0.20 * p[0];
    let h = 0.26 * p[1];
    let ry = 0.050 * p[2];
    let hr = 0.115 * p[3];
    let cx = 0.44;
    let top = 0.30;
    let bot = top + h;
    let hc = (cx + w, (top + bot) / 2.0);
    vec![
        stroke("body", false, line((cx - w, top), (cx - w, bot))),
        stroke("body", false, line((cx - w, bot), (cx + w, bot))),
        stroke("body", false, line((cx + w, bot), (cx + w, top))),
        stroke("body", false, ellipse((cx, top), w, ry)),
        stroke("handle", false, arc(hc, hr, hr * 1.15, -75.0, 75.0)),
        stroke("handle", false, arc(hc, hr * 0.55, hr * 0.65, -70.0, 70.0)),
        stroke("body", false, ellipse((cx, top), w * 0.80, ry * 0.75)),
        stroke(
            "decor",
            true,
            curve3((cx - 0.05, top - 0.16), (cx, top - 0.10), (cx - 0.03, top - 0.04)),
        ),
        stroke("decor", true, ellipse((cx, (top + bot) / 2.0), 0.06, 0.06)),
    ]
}

fn lamp(p: &[f64; 6]) -> Vec<TemplateStroke> {
    let bw = 0.17 * p[0];
    let ph = 0.40 * p[1];
    let sw = 0.15 * p[2];
    let sh = 0.20 * p[3];
    let cx = 0.50;
    let ground = 0.86;
    let shade_bot = ground - ph;
    let shade_top = shade_bot - sh;
    let tw = sw * 0.55;
    vec![
        stroke("base", false, ellipse((cx, ground), bw, bw * 0.28)),
        stroke(
            "base",
            false,
            line((cx - bw * 0.40, ground - 0.015), (cx, ground - 0.05)),
        ),
        stroke("pole", false, line((cx, ground - 0.04), (cx, shade_bot))),
        stroke("shade", false, line((cx - sw, shade_bot), (cx - tw, shade_top))),
        stroke("shade", false, line((cx + sw, shade_bot), (cx + tw, shade_top))),
        stroke("shade", false, line((cx - sw, shade_bot), (cx + sw, shade_bot))),
        stroke("shade", false, line((cx - tw, shade_top), (cx + tw, shade_top))),
        stroke("pole", false, line((cx, shade_top), (cx, shade_top - 0.045))),
        stroke(
            "decor",
            true,
            line((cx - sw - 0.07, shade_bot + 0.06), (cx - sw - 0.02, shade_bot + 0.02)),
        ),
        stroke(
            "decor",
            true,
            line((cx + sw + 0.02, shade_bot + 0.02), (cx + sw + 0.07, shade_bot + 0.06)),
        ),
    ]
}

fn chair(p: &[f64; 6]) -> Vec<TemplateStroke> {
    let sw = 0.19 * p[0];
    let bh = 0.34 * p[1];
    let lh = 0.25 * p[2];
    let cx = 0.50;
    let seat_y = 0.55;
    let x0 = cx - sw;
    let x1 = cx + sw;
    let back_top = seat_y - bh;
    let front_y = seat_y + 0.07;
    let mut seat = line((x0, seat_y), (x1, seat_y));
    seat.extend(line((x1, seat_y), (x1 - 0.03, front_y)).into_iter().skip(1));
    seat.extend(line((x1 - 0.03, front_y), (x0 - 0.03, front_y)).into_iter().skip(1));
    seat.extend(line((x0 - 0.03, front_y), (x0, seat_y)).into_iter().skip(1));
    vec![
        stroke("back", false, line((x0, back_top), (x0, seat_y))),
        stroke("back", false, line((x1, back_top), (x1, seat_y))),
        stroke("back", false, line((x0, back_top), (x1, back_top))),
        stroke(
            "back",
            false,
            line((x0, back_top + bh * 0.35), (x1, back_top + bh * 0.35)),
        ),
        stroke("seat", false, seat),
        stroke(
            "legs",
            false,
            line((x0 - 0.03, front_y), (x0 - 0.035, front_y + lh)),
        ),
        stroke(
            "legs",
            false,
            line((x1 - 0.03, front_y), (x1 - 0.035, front_y + lh)),
        ),
        stroke("legs", false, line((x1, seat_y), (x1 + 0.01, seat_y + lh * 0.9))),
        stroke(
            "decor",
            true,
            line((x0 - 0.032, front_y + lh * 0.55), (x1 - 0.032, front_y + lh * 0.55)),
        ),
        stroke("decor", true, line((x0 + 0.02, seat_y + 0.035), (x1 - 0.02, seat_y + 0.035))),
    ]
}

fn rocket(p: &[f64; 6]) -> Vec<TemplateStroke> {
    let bw = 0.085 * p[0];
    let bh = 0.40 * p[1];
    let fw = 0.10 * p[2];
    let nh = 0.16 * p[3];
    let wr = 0.042 * p[4];
    let cx = 0.50;
    let top = 0.30;
    let bot = top + bh;
    let mut fin_l = line((cx - bw, bot - 0.10), (cx - bw - fw, bot + 0.06));
    fin_l.extend(line((cx - bw - fw, bot + 0.06), (cx - bw, bot)).into_iter().skip(1));
    let mut fin_r = line((cx + bw, bot - 0.10), (cx + bw + fw, bot + 0.06));
    fin_r.extend(line((cx + bw + fw, bot + 0.06), (cx + bw, bot)).into_iter().skip(1));
    vec![
        stroke("body", false, line((cx - bw, top), (cx - bw, bot))),
        stroke("body", false, line((cx + bw, top), (cx + bw, bot))),
        stroke("nose", false, curve3((cx - bw, top), (cx, top - nh), (cx + bw, top))),
        stroke("fins", false, fin_l),
        stroke("fins", false, fin_r),
        stroke("body", false, line((cx - bw, bot), (cx + bw, bot))),
        stroke("body", false, ellipse((cx, top + 0.13), wr, wr)),
        stroke("body", false, line((cx - bw, top + 0.24), (cx + bw, top + 0.24))),
        stroke(
            "decor",
            true,
            curve3((cx - 0.03, bot + 0.02), (cx, bot + 0.10), (cx + 0.03, bot + 0.02)),
        ),
        stroke("decor", true, line((cx - bw, top + 0.28), (cx + bw, top + 0.28))),
    ]
}

fn template(category: &str, p: &[f64; 6]) -> Vec<TemplateStroke> {
    match category {
        "mug" => mug(p),
        "lamp" => lamp(p),
        "chair" => chair(p),
        "rocket" => rocket(p),
        other => unreachable!("unknown template {other}"),
    }
}

/// Point at arc-length fraction t of a polyline, t in [0, 1].
fn polyline_point_at(points: &[Point2D], t: f64) -> Point2D {
    let total: f64 = points.windows(2).map(|w| w[0].dist(w[1])).sum();
    if total == 0.0 {
        return points[0];
    }
    let target = t.clamp(0.0, 1.0) * total;
    let mut walked = 0.0;
    for w in points.windows(2) {
        let seg = w[0].dist(w[1]);
        if walked + seg >= target && seg > 0.0 {
            let u = (target - walked) / seg;
            return Point2D::new(w[0].x + (w[1].x - w[0].x) * u, w[0].y + (w[1].y - w[0].y) * u);
        }
        walked += seg;
    }
    *points.last().expect("nonempty polyline")
}

/// Keypoint slots of a category: (structural stroke index, arc fraction),
/// deduplicated on the unjittered base template so ids are stable across
/// instances.
fn survivor_keypoints(category: &str) -> Vec<(usize, f64)> {
    let base = template(category, &[1.0; 6]);
    let mut kept: Vec<(usize, f64)> = Vec::new();
    let mut kept_pos: Vec<Point2D> = Vec::new();
    for (si, s) in base.iter().enumerate() {
        if s.decor {
            continue;
        }
        for i in 0..FRACTIONS_PER_STROKE {
            let t = i as f64 / (FRACTIONS_PER_STROKE - 1) as f64;
            let pos = polyline_point_at(&s.points, t);
            if kept_pos.iter().all(|q| q.dist(pos) >= DEDUPE_EPS) {
                kept.push((si, t));
                kept_pos.push(pos);
            }
        }
    }
    kept
}

fn view_matrix(name: &str) -> Option<[[f64; 3]; 3]> {
    match name {
        "front" => Some([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        "right" => Some([[0.55, 0.0, 0.05], [0.20, 0.96, 0.01], [0.0, 0.0, 1.0]]),
        "front_right" => Some([
            [0.90, 0.16, 0.02],
            [-0.07, 0.94, 0.04],
            [0.20, 0.09, 1.08],
        ]),
        _ => None,
    }
}

pub fn apply_transform(m: &[[f64; 3]; 3], p: Point2D) -> Point2D {
    let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    Point2D::new(
        (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
        (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
    )
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Composes the view homography with a similarity fit that maps the unit
/// square's image into the central 80% of the canvas. The fit depends only
/// on the view, never the instance, which keeps correspondences exact.
fn fit_transform(h: &[[f64; 3]; 3], side: usize) -> [[f64; 3]; 3] {
    let corners = [
        Point2D::new(0.0, 0.0),
        Point2D::new(1.0, 0.0),
        Point2D::new(1.0, 1.0),
        Point2D::new(0.0, 1.0),
    ];
    let mapped: Vec<Point2D> = corners.iter().map(|&c| apply_transform(h, c)).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &mapped {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let span = (side - 1) as f64;
    let s = (0.8 * span / (x1 - x0)).min(0.8 * span / (y1 - y0));
    let tx = span / 2.0 - s * (x0 + x1) / 2.0;
    let ty = span / 2.0 - s * (y0 + y1) / 2.0;
    let a = [[s, 0.0, tx], [0.0, s, ty], [0.0, 0.0, 1.0]];
    mat_mul(&a, h)
}

/// Sinusoidal displacement along the stroke normal, tapered to zero at the
/// endpoints so junctions stay connected.
fn wobble_stroke(points: &[Point2D], amp: f64, freq: f64, phase: f64) -> Vec<Point2D> {
    if amp == 0.0 || points.len() < 3 {
        return points.to_vec();
    }
    let total: f64 = points.windows(2).map(|w| w[0].dist(w[1])).sum();
    if total == 0.0 {
        return points.to_vec();
    }
    let mut out = Vec::with_capacity(points.len());
    let mut walked = 0.0;
    for (i, &p) in points.iter().enumerate() {
        if i > 0 {
            walked += points[i - 1].dist(p);
        }
        let t = walked / total;
        let prev = points[i.saturating_sub(1)];
        let next = points[(i + 1).min(points.len() - 1)];
        let (mut tx, mut ty) = (next.x - prev.x, next.y - prev.y);
        let len = (tx * tx + ty * ty).sqrt();
        if len == 0.0 {
            out.push(p);
            continue;
        }
        tx /= len;
        ty /= len;
        let d = amp * (freq * TAU * t + phase).sin() * (PI * t).sin();
        out.push(Point2D::new(p.x - ty * d, p.y + tx * d));
    }
    out
}

fn dist_point_segment(p: Point2D, a: Point2D, b: Point2D) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.x + abx * t, a.y + aby * t);
    ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()
}

/// Anti-aliased polyline with round joins: coverage falls off linearly
/// over one pixel past half the width.
fn draw_polyline(img: &mut SketchImage, points: &[Point2D], width: f64) {
    let half = width / 2.0;
    let side = img.side();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let x0 = (a.x.min(b.x) - half - 1.0).floor().max(0.0) as usize;
        let y0 = (a.y.min(b.y) - half - 1.0).floor().max(0.0) as usize;
        let x1 = (a.x.max(b.x) + half + 1.0).ceil().min((side - 1) as f64) as usize;
        let y1 = (a.y.max(b.y) + half + 1.0).ceil().min((side - 1) as f64) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = dist_point_segment(Point2D::new(x as f64, y as f64), a, b);
                let alpha = (half + 0.5 - d).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let v = img.get(x, y).min(1.0 - alpha);
                    img.set(x, y, v);
                }
            }
        }
    }
}

fn validate(cfg: &ToyConfig) -> Result<()> {
    if cfg.n_categories == 0 || cfg.n_categories > CATEGORY_NAMES.len() {
        return Err(Error::Config(format!(
            "n_categories must be 1..={}, got {}",
            CATEGORY_NAMES.len(),
            cfg.n_categories
        )));
    }
    if cfg.shapes_per_category == 0 {
        return Err(Error::Config("shapes_per_category must be at least 1".into()));
    }
    if cfg.points_per_shape == 0 {
        return Err(Error::Config("points_per_shape must be at least 1".into()));
    }
    if cfg.views.is_empty() {
        return Err(Error::Config("at least one view required".into()));
    }
    for v in &cfg.views {
        if view_matrix(v).is_none() {
            return Err(Error::Config(format!(
                "unknown view {v:?}; known views: {}",
                VIEW_NAMES.join(", ")
            )));
        }
    }
    let mut sorted = cfg.views.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != cfg.views.len() {
        return Err(Error::Config("views must be distinct".into()));
    }
    if cfg.side < 64 {
        return Err(Error::Config("side must be at least 64".into()));
    }
    if !(0.0..=1.0).contains(&cfg.dropout_probability) {
        return Err(Error::Config("dropout_probability must be in [0, 1]".into()));
    }
    if cfg.jitter < 0.0 || cfg.wobble < 0.0 || cfg.stroke_width <= 0.0 {
        return Err(Error::Config(
            "jitter and wobble must be nonnegative, stroke_width positive".into(),
        ));
    }
    Ok(())
}

pub fn generate_toy_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    validate(cfg)?;
    let width_px = (cfg.stroke_width * cfg.side as f64).max(1.2);
    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut corr_sets = Vec::new();

    for (ci, cat) in CATEGORY_NAMES[..cfg.n_categories].iter().enumerate() {
        let survivors = survivor_keypoints(cat);
        if cfg.points_per_shape > survivors.len() {
            return Err(Error::Config(format!(
                "points_per_shape {} exceeds the {} keypoint slots of {cat}",
                cfg.points_per_shape,
                survivors.len()
            )));
        }
        let mut krng = seeding::stream(cfg.seed, "kp-select", &[ci as u64]);
        let mut chosen: Vec<usize> =
            index::sample(&mut krng, survivors.len(), cfg.points_per_shape).into_vec();
        chosen.sort_unstable();

        let first_of_cat = records.len();
        for si in 0..cfg.shapes_per_category {
            let idx = [ci as u64, si as u64];
            let mut prng = seeding::stream(cfg.seed, "shape-params", &idx);
            let mut params = [1.0f64; 6];
            for slot in &mut params {
                *slot = 1.0 + cfg.jitter * prng.random_range(-0.12..0.12);
            }
            let strokes = template(cat, &params);

            let mut wrng = seeding::stream(cfg.seed, "wobble", &idx);
            let wobbled: Vec<Vec<Point2D>> = strokes
                .iter()
                .map(|s| {
                    let freq = wrng.random_range(2.0..5.0);
                    let phase = wrng.random_range(0.0..TAU);
                    wobble_stroke(&s.points, cfg.wobble, freq, phase)
                })
                .collect();

            let mut drng = seeding::stream(cfg.seed, "stroke-drop", &idx);
            let kept: Vec<bool> = strokes
                .iter()
                .map(|s| !s.decor || drng.random::<f64>() >= cfg.dropout_probability)
                .collect();

            for view in &cfg.views {
                let h = view_matrix(view).expect("validated");
                let t = fit_transform(&h, cfg.side);
                let mut img = SketchImage::blank(cfg.side)?;
                let mut drawn = Vec::new();
                for (k, s) in strokes.iter().enumerate() {
                    if !kept[k] {
                        continue;
                    }
                    let pixel_poly: Vec<Point2D> =
                        wobbled[k].iter().map(|&p| apply_transform(&t, p)).collect();
                    draw_polyline(&mut img, &pixel_poly, width_px);
                    drawn.push((s.part.to_string(), pixel_poly));
                }

                let mut points = Vec::new();
                let mut canonical = Vec::new();
                let mut parts = Vec::new();
                for &kp in &chosen {
                    let (stroke_idx, frac) = survivors[kp];
                    let canon = polyline_point_at(&strokes[stroke_idx].points, frac);
                    let pixel = apply_transform(&t, canon);
                    if !img.contains(pixel) {
                        continue; // off-canvas under this view: absent
                    }
                    let id = format!("kp_{kp:03}");
                    points.push((id.clone(), pixel));
                    canonical.push((id.clone(), canon));
                    parts.push((id, strokes[stroke_idx].part.to_string()));
                }

                let sketch_id = format!("{cat}_{si:02}_{view}");
                records.push(SketchRecord {
                    sketch_id: sketch_id.clone(),
                    category: cat.to_string(),
                    view: view.clone(),
                    image: img,
                    points,
                });
                traces.push(SketchTrace {
                    sketch_id,
                    transform: t,
                    canonical_points: canonical,
                    point_parts: parts,
                    strokes: drawn,
                });
            }
        }

        // star topology: every sketch of the category corresponds to the
        // first one; class closure makes all pairs reachable
        let root = first_of_cat;
        for other in first_of_cat + 1..records.len() {
            let pairs: Vec<(String, String)> = records[root]
                .points
                .iter()
                .filter(|(id, _)| records[other].points.iter().any(|(oid, _)| oid == id))
                .map(|(id, _)| (id.clone(), id.clone()))
                .collect();
            if !pairs.is_empty() {
                corr_sets.push(CorrespondenceSet {
                    sketch_a: records[root].sketch_id.clone(),
                    sketch_b: records[other].sketch_id.clone(),
                    pairs,
                });
            }
        }
    }

    Ok(ToyCorpus {
        corpus: Corpus::from_parts(records, corr_sets)?,
        trace: ToyTrace { sketches: traces },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ToyConfig {
        ToyConfig {
            n_categories: 2,
            shapes_per_category: 2,
            points_per_shape: 10,
            views: vec!["front".into(), "right".into()],
            side: 128,
            seed: 7,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn generates_expected_counts_and_correspondences() {
        let toy = generate_toy_corpus(&small_cfg()).unwrap();
        let corpus = &toy.corpus;
        assert_eq!(corpus.records().len(), 2 * 2 * 2);
        for rec in corpus.records() {
            assert_eq!(rec.points.len(), 10);
        }
        for a in 0..corpus.records().len() as u32 {
            for b in 0..corpus.records().len() as u32 {
                if a == b {
                    continue;
                }
                let shared = corpus.shared_points(a, b);
                if corpus.record(a).category == corpus.record(b).category {
                    assert_eq!(shared.len(), 10, "{a} vs {b}");
                } else {
                    assert!(shared.is_empty());
                }
            }
        }
    }

    #[test]
    fn zero_randomness_makes_instances_identical() {
        let cfg = ToyConfig {
            jitter: 0.0,
            wobble: 0.0,
            dropout_probability: 0.0,
            views: vec!["front".into()],
            n_categories: 1,
            shapes_per_category: 2,
            points_per_shape: 10,
            side: 128,
            ..ToyConfig::default()
        };
        let toy = generate_toy_corpus(&cfg).unwrap();
        let recs = toy.corpus.records();
        assert_eq!(recs[0].image, recs[1].image);
        for (a, b) in recs[0].points.iter().zip(&recs[1].points) {
            assert_eq!(a.0, b.0);
            assert!(a.1.dist(b.1) < 1e-12);
        }
    }

    #[test]
    fn keypoints_replay_through_recorded_transform() {
        let toy = generate_toy_corpus(&small_cfg()).unwrap();
        for (rec, tr) in toy.corpus.records().iter().zip(&toy.trace.sketches) {
            assert_eq!(rec.sketch_id, tr.sketch_id);
            for ((pid, stored), (cid, canon)) in rec.points.iter().zip(&tr.canonical_points) {
                assert_eq!(pid, cid);
                let replay = apply_transform(&tr.transform, *canon);
                assert!(replay.dist(*stored) < 0.5, "{pid}: {replay:?} vs {stored:?}");
            }
        }
    }

    #[test]
    fn keypoints_sit_on_ink() {
        let cfg = ToyConfig {
            wobble: 0.0,
            ..small_cfg()
        };
        let toy = generate_toy_corpus(&cfg).unwrap();
        for rec in toy.corpus.records() {
            for (pid, p) in &rec.points {
                let mut darkest: f64 = 1.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let x = (p.x.round() as isize + dx).clamp(0, rec.image.side() as isize - 1);
                        let y = (p.y.round() as isize + dy).clamp(0, rec.image.side() as isize - 1);
                        darkest = darkest.min(rec.image.get(x as usize, y as usize));
                    }
                }
                assert!(darkest < 0.5, "{} {pid} off ink ({darkest})", rec.sketch_id);
            }
        }
    }

    #[test]
    fn every_template_offers_seventy_slots() {
        for cat in CATEGORY_NAMES {
            let n = survivor_keypoints(cat).len();
            assert!(n >= 70, "{cat} has only {n} keypoint slots");
        }
    }

    #[test]
    fn oversized_point_request_is_a_config_error() {
        let cfg = ToyConfig {
            points_per_shape: 500,
            ..small_cfg()
        };
        let err = generate_toy_corpus(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("keypoint slots"), "{err}");
    }

    #[test]
    fn unknown_view_is_rejected() {
        let cfg = ToyConfig {
            views: vec!["top".into()],
            ..small_cfg()
        };
        assert!(generate_toy_corpus(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_toy_corpus(&small_cfg()).unwrap();
        let b = generate_toy_corpus(&small_cfg()).unwrap();
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn full_dropout_removes_only_decor() {
        let keep = generate_toy_corpus(&ToyConfig {
            dropout_probability: 0.0,
            ..small_cfg()
        })
        .unwrap();
        let drop = generate_toy_corpus(&ToyConfig {
            dropout_probability: 1.0,
            ..small_cfg()
        })
        .unwrap();
        for (k, d) in keep.trace.sketches.iter().zip(&drop.trace.sketches) {
            assert!(k.strokes.iter().any(|(part, _)| part == "decor"));
            assert!(d.strokes.iter().all(|(part, _)| part != "decor"));
            let structural = k.strokes.iter().filter(|(p, _)| p != "decor").count();
            assert_eq!(d.strokes.len(), structural);
        }
        // keypoints never sit on decor, so counts are unaffected
        for (k, d) in keep.corpus.records().iter().zip(drop.corpus.records()) {
            assert_eq!(k.points.len(), d.points.len());
        }
    }
}
