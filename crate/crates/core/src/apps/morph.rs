//! Correspondence-driven image morphing: matched control points span a
//! triangulation, every frame warps both endpoints into an interpolated
//! mesh, and a confidence-scheduled blend composites them.

use crate::canvas::{Point2D, SketchImage};
use crate::dataset::blue_noise_sample;
use crate::embedder::EmbedderModel;
use crate::error::{Error, Result};
use crate::matching::{build_index, match_nn};
use crate::seeding;
use serde::{Deserialize, Serialize};

/// Morph parameters. The blend schedule maps a correspondence confidence
/// in [0, 1] linearly onto a midpoint `delta` and softness `rho`, both in
/// step units as fractions of the step count.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphConfig {
    /// Control correspondences kept after filtering (excluding corners).
    pub k: usize,
    /// Step count; the sequence has steps + 1 frames.
    pub steps: usize,
    /// Candidate points sampled per image before filtering.
    pub candidates: usize,
    /// (low, high) blend midpoints as fractions of the step count.
    pub delta_range: (f64, f64),
    /// (low, high) blend softness as fractions of the step count.
    pub rho_range: (f64, f64),
    pub seed: u64,
}

impl Default for MorphConfig {
    fn default() -> Self {
        MorphConfig {
            k: 10,
            steps: 50,
            candidates: 40,
            delta_range: (0.2, 0.8),
            rho_range: (0.05, 0.25),
            seed: 0,
        }
    }
}

impl MorphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::Config(
                "morphing needs at least 3 control correspondences".into(),
            ));
        }
        if self.steps < 2 {
            return Err(Error::Config("morphing needs at least 2 steps".into()));
        }
        if self.candidates < self.k {
            return Err(Error::Config(format!(
                "{} candidates cannot cover k = {}",
                self.candidates, self.k
            )));
        }
        let (r0, r1) = self.rho_range;
        if !(r0 > 0.0) || !(r1 > 0.0) {
            return Err(Error::Config("blend softness must be positive".into()));
        }
        let (d0, d1) = self.delta_range;
        if !d0.is_finite() || !d1.is_finite() || d0 > d1 || r0 > r1 {
            return Err(Error::Config("blend parameter ranges must be ordered".into()));
        }
        Ok(())
    }
}

/// The tanh blending schedule: 1/2 + 1/2 tanh((s - delta) / rho).
/// Strictly increasing in `s`, bounded in (0, 1).
pub fn alpha_blend_weight(s: f64, delta: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!(
            "blend softness must be positive, got {rho}"
        )));
    }
    Ok(0.5 + 0.5 * ((s - delta) / rho).tanh())
}

/// One control correspondence: a source location, its target location,
/// and a confidence in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: Point2D,
    pub tgt: Point2D,
    pub confidence: f64,
}

/// Matches control points between the two images with the descriptor
/// model, then renders the morph. Candidate points are blue-noise sampled
/// on both images, matched by nearest descriptor, filtered to the
/// best-confidence quartile, and spread by farthest-point selection.
pub fn morph(
    image_a: &SketchImage,
    image_b: &SketchImage,
    model: &EmbedderModel,
    cfg: &MorphConfig,
) -> Result<Vec<SketchImage>> {
    let (frames, _) = morph_traced(image_a, image_b, model, cfg)?;
    Ok(frames)
}

/// As [`morph`], also returning the control correspondences used, for
/// sidecar reports.
pub fn morph_traced(
    image_a: &SketchImage,
    image_b: &SketchImage,
    model: &EmbedderModel,
    cfg: &MorphConfig,
) -> Result<(Vec<SketchImage>, Vec<Correspondence>)> {
    cfg.validate()?;
    let control = select_correspondences(image_a, image_b, model, cfg)?;
    let frames = morph_with_correspondences(image_a, image_b, &control, cfg)?;
    Ok((frames, control))
}

fn select_correspondences(
    image_a: &SketchImage,
    image_b: &SketchImage,
    model: &EmbedderModel,
    cfg: &MorphConfig,
) -> Result<Vec<Correspondence>> {
    let mut rng_a = seeding::stream(cfg.seed, "morph-sample", &[0]);
    let mut rng_b = seeding::stream(cfg.seed, "morph-sample", &[1]);
    let pts_a = blue_noise_sample(image_a, cfg.candidates, &mut rng_a)?;
    let pts_b = blue_noise_sample(image_b, cfg.candidates, &mut rng_b)?;
    if pts_a.len() < cfg.k || pts_b.len() < cfg.k {
        return Err(Error::domain(format!(
            "not enough ink for {} control points ({} / {} sampled)",
            cfg.k,
            pts_a.len(),
            pts_b.len()
        )));
    }
    let named = |pts: &[Point2D]| -> Vec<(String, Point2D)> {
        pts.iter()
            .enumerate()
            .map(|(i, &p)| (format!("m{i:04}"), p))
            .collect()
    };
    let idx_a = build_index(model, "morph-a", image_a, &named(&pts_a))?;
    let idx_b = build_index(model, "morph-b", image_b, &named(&pts_b))?;
    let results = match_nn(&idx_a, &idx_b, false)?;

    let dist_max = results
        .iter()
        .map(|r| r.chosen().1)
        .fold(0.0f64, f64::max);
    let mut matches: Vec<Correspondence> = results
        .iter()
        .map(|r| {
            let confidence = if dist_max > 0.0 {
                1.0 - r.chosen().1 / dist_max
            } else {
                1.0
            };
            Correspondence {
                src: idx_a.position_of(&r.source_point_id).expect("own id"),
                tgt: idx_b.position_of(&r.chosen().0).expect("matched id"),
                confidence,
            }
        })
        .collect();

    // Best-confidence quartile, but never fewer than k.
    matches.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let keep = (matches.len() / 4).max(cfg.k).min(matches.len());
    matches.truncate(keep);

    // Farthest-point spread over the source positions, seeded by the most
    // confident match.
    let mut chosen: Vec<Correspondence> = vec![matches[0]];
    let mut rest: Vec<Correspondence> = matches[1..].to_vec();
    while chosen.len() < cfg.k && !rest.is_empty() {
        let (best_i, _) = rest
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let d = chosen
                    .iter()
                    .map(|s| s.src.dist(c.src))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("rest nonempty");
        chosen.push(rest.remove(best_i));
    }
    if chosen.len() < 3 {
        return Err(Error::domain("fewer than 3 usable correspondences"));
    }
    Ok(chosen)
}

/// Renders the morph for explicit control correspondences. The four image
/// corners are pinned (mapped to themselves, full confidence) so the
/// triangulation covers the frame; a degenerate triangulation is retried
/// once with half-pixel jitter on the interior vertices.
pub fn morph_with_correspondences(
    image_a: &SketchImage,
    image_b: &SketchImage,
    control: &[Correspondence],
    cfg: &MorphConfig,
) -> Result<Vec<SketchImage>> {
    cfg.validate()?;
    if image_a.side() != image_b.side() {
        return Err(Error::shape(
            format!("side {}", image_a.side()),
            format!("side {}", image_b.side()),
        ));
    }
    if control.len() < 3 {
        return Err(Error::domain("fewer than 3 control correspondences"));
    }
    let side = image_a.side();
    let hi = (side - 1) as f64;

    let mut src: Vec<Point2D> = control.iter().map(|c| c.src).collect();
    let mut tgt: Vec<Point2D> = control.iter().map(|c| c.tgt).collect();
    let mut conf: Vec<f64> = control.iter().map(|c| c.confidence.clamp(0.0, 1.0)).collect();
    let interior = src.len();
    for corner in [
        Point2D::new(0.0, 0.0),
        Point2D::new(hi, 0.0),
        Point2D::new(0.0, hi),
        Point2D::new(hi, hi),
    ] {
        src.push(corner);
        tgt.push(corner);
        conf.push(1.0);
    }

    let triangles = match delaunay(&src) {
        Ok(t) => t,
        Err(_) => {
            // Half-pixel jitter on interior vertices, fixed pattern.
            for (i, p) in src.iter_mut().enumerate().take(interior) {
                p.x = (p.x + if i % 2 == 0 { 0.5 } else { -0.5 }).clamp(0.0, hi);
                p.y = (p.y + if (i / 2) % 2 == 0 { 0.5 } else { -0.5 }).clamp(0.0, hi);
            }
            delaunay(&src)?
        }
    };

    let steps = cfg.steps;
    let s_count = steps as f64;
    let (d0, d1) = cfg.delta_range;
    let (r0, r1) = cfg.rho_range;
    let mut frames = Vec::with_capacity(steps + 1);
    for s in 0..=steps {
        let t = s as f64 / s_count;
        let mid: Vec<Point2D> = src
            .iter()
            .zip(&tgt)
            .map(|(a, b)| Point2D::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)))
            .collect();
        let mut frame = SketchImage::blank(side)?;
        for py in 0..side {
            for px in 0..side {
                let p = Point2D::new(px as f64, py as f64);
                let (tri, bary) = locate(&triangles, &mid, p);
                let [i0, i1, i2] = tri;
                let warp = |verts: &[Point2D]| {
                    Point2D::new(
                        bary[0] * verts[i0].x + bary[1] * verts[i1].x + bary[2] * verts[i2].x,
                        bary[0] * verts[i0].y + bary[1] * verts[i1].y + bary[2] * verts[i2].y,
                    )
                };
                let pa = warp(&src);
                let pb = warp(&tgt);
                let va = image_a.sample(pa.x, pa.y);
                let vb = image_b.sample(pb.x, pb.y);
                let c = (conf[i0] + conf[i1] + conf[i2]) / 3.0;
                let delta = (d0 + c * (d1 - d0)) * s_count;
                let rho = (r0 + c * (r1 - r0)) * s_count;
                let alpha = alpha_blend_weight(s as f64, delta, rho)?;
                frame.set(px, py, (1.0 - alpha) * va + alpha * vb);
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Barycentric coordinates of `p` in the triangle, or None when the
/// triangle is degenerate.
fn barycentric(p: Point2D, a: Point2D, b: Point2D, c: Point2D) -> Option<[f64; 3]> {
    let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    if det.abs() < 1e-12 {
        return None;
    }
    let l0 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / det;
    let l1 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / det;
    Some([l0, l1, 1.0 - l0 - l1])
}

/// The triangle containing `p`, or failing that (boundary rounding) the
/// one it violates least.
fn locate(triangles: &[[usize; 3]], verts: &[Point2D], p: Point2D) -> ([usize; 3], [f64; 3]) {
    let mut best: Option<([usize; 3], [f64; 3], f64)> = None;
    for &tri in triangles {
        let Some(bary) = barycentric(p, verts[tri[0]], verts[tri[1]], verts[tri[2]]) else {
            continue;
        };
        let worst = bary[0].min(bary[1]).min(bary[2]);
        if worst >= -1e-9 {
            return (tri, bary);
        }
        if best.map_or(true, |(_, _, w)| worst > w) {
            best = Some((tri, bary, worst));
        }
    }
    let (tri, bary, _) = best.expect("triangulation is nonempty");
    (tri, bary)
}

/// Bowyer-Watson Delaunay triangulation. Errors on fewer than 3 points,
/// (near-)duplicate points, or an all-collinear configuration.
fn delaunay(points: &[Point2D]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::domain("triangulation needs at least 3 points"));
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[i].dist(points[j]) < 1e-9 {
                return Err(Error::domain(format!(
                    "duplicate control points at index {i} and {j}"
                )));
            }
        }
    }

    // Super-triangle comfortably containing every point.
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let mut verts: Vec<Point2D> = points.to_vec();
    let s0 = verts.len();
    verts.push(Point2D::new(cx - 20.0 * span, cy - span));
    verts.push(Point2D::new(cx + 20.0 * span, cy - span));
    verts.push(Point2D::new(cx, cy + 20.0 * span));

    let mut tris: Vec<[usize; 3]> = vec![[s0, s0 + 1, s0 + 2]];
    for pi in 0..points.len() {
        let p = verts[pi];
        let mut bad = Vec::new();
        for (ti, &tri) in tris.iter().enumerate() {
            if in_circumcircle(p, verts[tri[0]], verts[tri[1]], verts[tri[2]]) {
                bad.push(ti);
            }
        }
        // Polygon hole boundary: edges of bad triangles not shared by two
        // bad triangles.
        let mut boundary: Vec<(usize, usize)> = Vec::new();
        for &ti in &bad {
            let t = tris[ti];
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let shared = bad.iter().any(|&tj| {
                    if tj == ti {
                        return false;
                    }
                    let o = tris[tj];
                    let mut count = 0;
                    for v in [o[0], o[1], o[2]] {
                        if v == e.0 || v == e.1 {
                            count += 1;
                        }
                    }
                    count == 2
                });
                if !shared {
                    boundary.push(e);
                }
            }
        }
        for ti in bad.into_iter().rev() {
            tris.swap_remove(ti);
        }
        for (a, b) in boundary {
            tris.push([a, b, pi]);
        }
    }
    tris.retain(|t| t.iter().all(|&v| v < s0));
    if tris.is_empty() {
        return Err(Error::domain(
            "degenerate (collinear) control points cannot be triangulated",
        ));
    }
    Ok(tris)
}

/// Strict in-circumcircle test; a degenerate (collinear) triangle counts
/// as containing everything so it never survives insertion.
fn in_circumcircle(p: Point2D, a: Point2D, b: Point2D, c: Point2D) -> bool {
    let orient = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if orient.abs() < 1e-12 {
        return true;
    }
    // Ensure counter-clockwise orientation for the sign convention.
    let (b, c) = if orient > 0.0 { (b, c) } else { (c, b) };
    let ax = a.x - p.x;
    let ay = a.y - p.y;
    let bx = b.x - p.x;
    let by = b.y - p.y;
    let cx = c.x - p.x;
    let cy = c.y - p.y;
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    det > 0.0
}
