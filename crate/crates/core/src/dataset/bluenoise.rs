//! Poisson-disk sampling restricted to the neighborhood of ink strokes.
//!
//! Dart throwing with a uniform grid for neighbor lookups. The minimum
//! pairwise distance r_min is auto-tuned by bisection: the largest radius
//! (within ~0.03% of the side) at which the requested count is still
//! reachable inside the dart budget.

use crate::canvas::{Point2D, SketchImage};
use crate::error::{Error, Result};
use crate::seeding;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

/// Pixels darker than this are ink.
const INK_THRESHOLD: f64 = 0.5;
/// Sampling is confined to within this fraction of the side around ink.
const INK_RADIUS_FRACTION: f64 = 0.02;
const DARTS_PER_POINT: usize = 30;
const BISECTION_STEPS: u32 = 12;

/// Up to `n` points near ink, pairwise separation at least the tuned
/// r_min. An image with no ink yields an empty list.
pub fn blue_noise_sample(
    image: &SketchImage,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Point2D>> {
    blue_noise_sample_detailed(image, n, rng).map(|(points, _)| points)
}

/// As [`blue_noise_sample`], also returning the tuned r_min.
pub fn blue_noise_sample_detailed(
    image: &SketchImage,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Point2D>, f64)> {
    if n == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let eligible = eligible_pixels(image);
    if eligible.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let side = image.side();

    // independent substream per trial so bisection order cannot leak
    // between radii
    let trial_base = rng.next_u64();
    let throw = |r: f64, trial: u64| -> Vec<Point2D> {
        let mut trial_rng = seeding::stream(trial_base, "darts", &[trial]);
        throw_darts(&eligible, side, r, n, &mut trial_rng)
    };

    let mut lo = 0.75;
    let mut hi = side as f64;
    let first = throw(lo, 0);
    if first.len() < n {
        // image cannot host n separated points; best effort at the
        // smallest radius
        return Ok((first, lo));
    }
    let mut best = (first, lo);
    for trial in 1..=BISECTION_STEPS as u64 {
        let mid = 0.5 * (lo + hi);
        let points = throw(mid, trial);
        if points.len() == n {
            best = (points, mid);
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Centers of pixels within r_ink of any ink pixel, row-major.
fn eligible_pixels(image: &SketchImage) -> Vec<(usize, usize)> {
    let side = image.side();
    let r_ink = (INK_RADIUS_FRACTION * side as f64).max(1.0);
    let reach = r_ink.ceil() as isize;
    let mut mask = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            if image.get(x, y) >= INK_THRESHOLD {
                continue;
            }
            for dy in -reach..=reach {
                let ny = y as isize + dy;
                if ny < 0 || ny >= side as isize {
                    continue;
                }
                for dx in -reach..=reach {
                    let nx = x as isize + dx;
                    if nx < 0 || nx >= side as isize {
                        continue;
                    }
                    if ((dx * dx + dy * dy) as f64) <= r_ink * r_ink {
                        mask[ny as usize * side + nx as usize] = true;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for y in 0..side {
        for x in 0..side {
            if mask[y * side + x] {
                out.push((x, y));
            }
        }
    }
    out
}

fn throw_darts(
    eligible: &[(usize, usize)],
    side: usize,
    r: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Point2D> {
    let cell = (r / std::f64::consts::SQRT_2).max(1e-6);
    let cols = (side as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<i32> = vec![-1; cols * cols];
    let mut points: Vec<Point2D> = Vec::with_capacity(n);
    let max = (side - 1) as f64;
    let r2 = r * r;

    'darts: for _ in 0..DARTS_PER_POINT * n {
        let (px, py) = eligible[rng.random_range(0..eligible.len())];
        let x = (px as f64 + rng.random_range(-0.5..0.5)).clamp(0.0, max);
        let y = (py as f64 + rng.random_range(-0.5..0.5)).clamp(0.0, max);
        let (gx, gy) = ((x / cell) as usize, (y / cell) as usize);
        let x0 = gx.saturating_sub(2);
        let y0 = gy.saturating_sub(2);
        for ny in y0..=(gy + 2).min(cols - 1) {
            for nx in x0..=(gx + 2).min(cols - 1) {
                let slot = grid[ny * cols + nx];
                if slot >= 0 {
                    let q = points[slot as usize];
                    let (dx, dy) = (q.x - x, q.y - y);
                    if dx * dx + dy * dy < r2 {
                        continue 'darts;
                    }
                }
            }
        }
        grid[gy * cols + gx] = points.len() as i32;
        points.push(Point2D::new(x, y));
        if points.len() == n {
            break;
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Box outline plus a diagonal, plenty of ink.
    fn test_sketch(side: usize) -> SketchImage {
        let mut img = SketchImage::blank(side).unwrap();
        let lo = side / 8;
        let hi = side - side / 8;
        for i in lo..hi {
            img.set(i, lo, 0.0);
            img.set(i, hi, 0.0);
            img.set(lo, i, 0.0);
            img.set(hi, i, 0.0);
            img.set(i, i, 0.0);
        }
        img
    }

    #[test]
    fn no_ink_gives_empty_list() {
        let img = SketchImage::blank(64).unwrap();
        let mut rng = seeding::stream(1, "bn", &[]);
        let points = blue_noise_sample(&img, 10, &mut rng).unwrap();
        assert!(points.is_empty());
    }

    #[test]
    fn zero_count_is_rejected() {
        let img = test_sketch(64);
        let mut rng = seeding::stream(2, "bn", &[]);
        assert!(blue_noise_sample(&img, 0, &mut rng).is_err());
    }

    #[test]
    fn single_dart_lands_near_ink() {
        let img = test_sketch(64);
        let mut rng = seeding::stream(3, "bn", &[]);
        let points = blue_noise_sample(&img, 1, &mut rng).unwrap();
        assert_eq!(points.len(), 1);
        let p = points[0];
        let r_ink: f64 = 0.02 * 64.0;
        let mut best = f64::MAX;
        for y in 0..64 {
            for x in 0..64 {
                if img.get(x, y) < 0.5 {
                    let d = p.dist(Point2D::new(x as f64, y as f64));
                    best = best.min(d);
                }
            }
        }
        // eligibility radius plus half-pixel jitter slack
        assert!(best <= r_ink.max(1.0) + 0.8, "nearest ink {best}");
    }

    #[test]
    fn pairwise_distance_respects_tuned_radius() {
        let img = test_sketch(128);
        let mut rng = seeding::stream(4, "bn", &[]);
        let (points, r_min) = blue_noise_sample_detailed(&img, 40, &mut rng).unwrap();
        assert_eq!(points.len(), 40);
        assert!(r_min > 0.75);
        for i in 0..points.len() {
            for j in 0..i {
                let d = points[i].dist(points[j]);
                assert!(d >= r_min, "pair ({i},{j}) at {d} < {r_min}");
            }
        }
    }

    #[test]
    fn impossible_count_returns_best_effort() {
        let mut img = SketchImage::blank(48).unwrap();
        img.set(24, 24, 0.0); // single ink dot
        let mut rng = seeding::stream(5, "bn", &[]);
        let points = blue_noise_sample(&img, 500, &mut rng).unwrap();
        assert!(!points.is_empty());
        assert!(points.len() < 500);
    }

    #[test]
    fn same_stream_replays_exactly() {
        let img = test_sketch(96);
        let mut rng1 = seeding::stream(6, "bn", &[]);
        let mut rng2 = seeding::stream(6, "bn", &[]);
        let a = blue_noise_sample(&img, 25, &mut rng1).unwrap();
        let b = blue_noise_sample(&img, 25, &mut rng2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn points_stay_on_canvas() {
        let img = test_sketch(64);
        let mut rng = seeding::stream(7, "bn", &[]);
        let points = blue_noise_sample(&img, 30, &mut rng).unwrap();
        for p in points {
            assert!(img.contains(p), "{p:?}");
        }
    }
}
