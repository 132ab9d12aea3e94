//! Descriptor indexes, nearest-neighbor correspondence, an optional
//! one-to-one assignment refinement, and the geometric perturbation
//! harness used by the robustness benchmarks.

use crate::canvas::{extract_zoom_stack, warp_similarity, Point2D, SketchImage};
use crate::embedder::{Descriptor, EmbedderModel};
use crate::error::{Error, Result};
use rand::Rng;
use std::collections::BTreeSet;

/// Embedded annotated points of one sketch, ready for matching.
#[derive(Clone, Debug)]
pub struct DescriptorIndex {
    sketch_id: String,
    entries: Vec<(String, Point2D, Descriptor)>,
    dim: usize,
}

impl DescriptorIndex {
    /// Assembles an index from precomputed descriptors, enforcing unique
    /// point ids and a uniform dimension.
    pub fn from_entries(
        sketch_id: &str,
        entries: Vec<(String, Point2D, Descriptor)>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (pid, _, _) in &entries {
            if !seen.insert(pid.clone()) {
                return Err(Error::domain(format!(
                    "duplicate point id {pid:?} in index for {sketch_id:?}"
                )));
            }
        }
        let dim = entries.first().map(|(_, _, d)| d.dim()).unwrap_or(0);
        for (pid, _, d) in &entries {
            if d.dim() != dim {
                return Err(Error::shape(
                    format!("descriptor dim {dim}"),
                    format!("dim {} at point {pid:?}", d.dim()),
                ));
            }
        }
        Ok(DescriptorIndex {
            sketch_id: sketch_id.to_string(),
            entries,
            dim,
        })
    }

    pub fn sketch_id(&self) -> &str {
        &self.sketch_id
    }

    pub fn entries(&self) -> &[(String, Point2D, Descriptor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Descriptor dimension; 0 for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position_of(&self, point_id: &str) -> Option<Point2D> {
        self.entries
            .iter()
            .find(|(pid, _, _)| pid == point_id)
            .map(|&(_, p, _)| p)
    }
}

/// Embeds every annotated point of one image into an index. Points are
/// expected to lie on the canvas; off-canvas points still embed (windows
/// read background outside) but are the caller's responsibility.
pub fn build_index(
    model: &EmbedderModel,
    sketch_id: &str,
    image: &SketchImage,
    points: &[(String, Point2D)],
) -> Result<DescriptorIndex> {
    let stacks = points
        .iter()
        .map(|&(_, p)| extract_zoom_stack(image, p, model.zoom_fractions(), model.crop_size()))
        .collect::<Result<Vec<_>>>()?;
    let descriptors = model.embed_batch(&stacks)?;
    let entries = points
        .iter()
        .zip(descriptors)
        .map(|(&(ref pid, p), d)| (pid.clone(), p, d))
        .collect();
    DescriptorIndex::from_entries(sketch_id, entries)
}

/// Correspondence candidates of one source point, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub source_point_id: String,
    /// (target point id, descriptor distance), sorted by ascending
    /// distance with ties broken by lowest point id. Covers the full
    /// candidate set in ranked mode, only the winner otherwise.
    pub ranked_targets: Vec<(String, f64)>,
}

impl MatchResult {
    /// The winning candidate (first of the ranked list).
    pub fn chosen(&self) -> &(String, f64) {
        &self.ranked_targets[0]
    }
}

/// Exact nearest-neighbor matching of every source point against the full
/// target index. With `ranked` the complete sorted candidate list is kept
/// per source point, as the rank-based metrics require.
pub fn match_nn(
    src: &DescriptorIndex,
    tgt: &DescriptorIndex,
    ranked: bool,
) -> Result<Vec<MatchResult>> {
    if tgt.is_empty() {
        return Err(Error::domain(format!(
            "target index {:?} has no points to match against",
            tgt.sketch_id()
        )));
    }
    if !src.is_empty() && src.dim() != tgt.dim() {
        return Err(Error::shape(
            format!("target descriptor dim {}", tgt.dim()),
            format!("source descriptor dim {}", src.dim()),
        ));
    }
    let mut out = Vec::with_capacity(src.len());
    for (pid, _, desc) in src.entries() {
        let mut candidates: Vec<(String, f64)> = tgt
            .entries()
            .iter()
            .map(|(tpid, _, td)| (tpid.clone(), desc.dist(td)))
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if !ranked {
            candidates.truncate(1);
        }
        out.push(MatchResult {
            source_point_id: pid.clone(),
            ranked_targets: candidates,
        });
    }
    Ok(out)
}

/// An injective source-to-target matching and its total distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// (source point id, target point id), in source index order.
    pub pairs: Vec<(String, String)>,
    pub total_cost: f64,
}

/// Minimum-total-distance one-to-one assignment of sources to targets
/// (unsquared descriptor distances). Requires |src| <= |tgt|.
pub fn match_hungarian(src: &DescriptorIndex, tgt: &DescriptorIndex) -> Result<Assignment> {
    if src.len() > tgt.len() {
        return Err(Error::domain(format!(
            "cannot assign {} sources one-to-one into {} targets",
            src.len(),
            tgt.len()
        )));
    }
    if src.is_empty() {
        return Ok(Assignment {
            pairs: vec![],
            total_cost: 0.0,
        });
    }
    if src.dim() != tgt.dim() {
        return Err(Error::shape(
            format!("target descriptor dim {}", tgt.dim()),
            format!("source descriptor dim {}", src.dim()),
        ));
    }
    let n = src.len();
    let m = tgt.len();
    let cost = |i: usize, j: usize| src.entries()[i].2.dist(&tgt.entries()[j].2);

    // Shortest-augmenting-path assignment with row/column potentials;
    // rows are 1-based, column 0 is the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut by_source: Vec<Option<usize>> = vec![None; n];
    for j in 1..=m {
        if matched_row[j] != 0 {
            by_source[matched_row[j] - 1] = Some(j - 1);
        }
    }
    let mut pairs = Vec::with_capacity(n);
    let mut total_cost = 0.0;
    for (i, slot) in by_source.iter().enumerate() {
        let j = slot.expect("every source row ends up matched");
        total_cost += cost(i, j);
        pairs.push((
            src.entries()[i].0.clone(),
            tgt.entries()[j].0.clone(),
        ));
    }
    Ok(Assignment { pairs, total_cost })
}

/// One sampled similarity transform about the image center, with its exact
/// inverse. Positive rotation turns the +x axis toward +y (screen-down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Perturbation {
    pub rotation_deg: f64,
    pub scale: f64,
    center: Point2D,
}

impl Perturbation {
    fn new(rotation_deg: f64, scale: f64, center: Point2D) -> Self {
        Perturbation {
            rotation_deg,
            scale,
            center,
        }
    }

    /// Maps an original-image point into the perturbed image.
    pub fn apply(&self, p: Point2D) -> Point2D {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        Point2D::new(
            self.center.x + self.scale * (cos * dx - sin * dy),
            self.center.y + self.scale * (sin * dx + cos * dy),
        )
    }

    /// Maps a perturbed-image point back onto the original image; exact
    /// inverse of [`Perturbation::apply`] up to rounding.
    pub fn apply_inverse(&self, p: Point2D) -> Point2D {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let dx = (p.x - self.center.x) / self.scale;
        let dy = (p.y - self.center.y) / self.scale;
        Point2D::new(
            self.center.x + (cos * dx + sin * dy),
            self.center.y + (-sin * dx + cos * dy),
        )
    }
}

/// Applies a random rotation up to `max_rot` degrees and a random rescale
/// up to a `max_zoom` fraction, both about the image center, to the image
/// and its annotated points. Uncovered pixels read as background.
pub fn perturb_image(
    image: &SketchImage,
    points: &[(String, Point2D)],
    max_rot: f64,
    max_zoom: f64,
    rng: &mut impl Rng,
) -> Result<(SketchImage, Vec<(String, Point2D)>, Perturbation)> {
    if !(0.0..1.0).contains(&max_zoom) {
        return Err(Error::domain(format!(
            "max zoom must lie in [0, 1), got {max_zoom}"
        )));
    }
    if !(max_rot >= 0.0) || !max_rot.is_finite() {
        return Err(Error::domain(format!("bad max rotation {max_rot}")));
    }
    let rotation_deg = if max_rot > 0.0 {
        rng.random_range(-max_rot..max_rot)
    } else {
        0.0
    };
    let scale = if max_zoom > 0.0 {
        rng.random_range(1.0 - max_zoom..1.0 + max_zoom)
    } else {
        1.0
    };
    let center_xy = (image.side() - 1) as f64 / 2.0;
    let center = Point2D::new(center_xy, center_xy);
    let perturbation = Perturbation::new(rotation_deg, scale, center);
    let warped = warp_similarity(image, center, rotation_deg, scale)?;
    let moved = points
        .iter()
        .map(|&(ref pid, p)| (pid.clone(), perturbation.apply(p)))
        .collect();
    Ok((warped, moved, perturbation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn desc(values: &[f64]) -> Descriptor {
        Descriptor::new(values.to_vec()).unwrap()
    }

    fn index_1d(sketch_id: &str, values: &[(&str, f64)]) -> DescriptorIndex {
        let entries = values
            .iter()
            .map(|&(pid, v)| (pid.to_string(), Point2D::new(0.0, 0.0), desc(&[v])))
            .collect();
        DescriptorIndex::from_entries(sketch_id, entries).unwrap()
    }

    #[test]
    fn index_rejects_duplicates_and_mixed_dims() {
        let entries = vec![
            ("p0".to_string(), Point2D::new(0.0, 0.0), desc(&[1.0])),
            ("p0".to_string(), Point2D::new(1.0, 1.0), desc(&[2.0])),
        ];
        assert!(DescriptorIndex::from_entries("s", entries).is_err());
        let entries = vec![
            ("p0".to_string(), Point2D::new(0.0, 0.0), desc(&[1.0])),
            ("p1".to_string(), Point2D::new(1.0, 1.0), desc(&[2.0, 3.0])),
        ];
        assert!(matches!(
            DescriptorIndex::from_entries("s", entries),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn identity_match_is_exact_and_free() {
        let idx = index_1d("s", &[("p0", 0.0), ("p1", 5.0), ("p2", -3.0)]);
        let results = match_nn(&idx, &idx, false).unwrap();
        for r in &results {
            assert_eq!(&r.chosen().0, &r.source_point_id);
            assert_eq!(r.chosen().1, 0.0);
        }
    }

    #[test]
    fn equidistant_targets_resolve_to_lowest_point_id() {
        let src = index_1d("a", &[("q", 0.0)]);
        let tgt = index_1d("b", &[("p9", 1.0), ("p2", -1.0)]);
        let results = match_nn(&src, &tgt, true).unwrap();
        assert_eq!(results[0].chosen().0, "p2");
        assert_eq!(results[0].ranked_targets.len(), 2);
    }

    #[test]
    fn ranked_lists_are_complete_and_sorted() {
        let src = index_1d("a", &[("q0", 0.3), ("q1", -2.0)]);
        let tgt = index_1d("b", &[("p0", 1.0), ("p1", 0.0), ("p2", -1.0), ("p3", 4.0)]);
        let results = match_nn(&src, &tgt, true).unwrap();
        for r in &results {
            assert_eq!(r.ranked_targets.len(), tgt.len());
            for w in r.ranked_targets.windows(2) {
                assert!(w[0].1 <= w[1].1);
            }
            let min = r
                .ranked_targets
                .iter()
                .map(|&(_, d)| d)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(r.chosen().1, min);
        }
    }

    #[test]
    fn matching_agrees_with_brute_force_scan() {
        let mut rng = seeding::stream(21, "nn-oracle", &[0]);
        let dim = 4;
        let rand_desc = |rng: &mut rand_chacha::ChaCha8Rng| {
            desc(&(0..dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect::<Vec<_>>())
        };
        let src_entries: Vec<_> = (0..50)
            .map(|i| (format!("s{i:02}"), Point2D::new(0.0, 0.0), rand_desc(&mut rng)))
            .collect();
        let tgt_entries: Vec<_> = (0..50)
            .map(|i| (format!("t{i:02}"), Point2D::new(0.0, 0.0), rand_desc(&mut rng)))
            .collect();
        let src = DescriptorIndex::from_entries("a", src_entries.clone()).unwrap();
        let tgt = DescriptorIndex::from_entries("b", tgt_entries.clone()).unwrap();
        let results = match_nn(&src, &tgt, false).unwrap();
        for (r, (_, _, sd)) in results.iter().zip(&src_entries) {
            let mut best = (f64::INFINITY, String::new());
            for (tpid, _, td) in &tgt_entries {
                let d = sd.dist(td);
                if d < best.0 || (d == best.0 && tpid < &best.1) {
                    best = (d, tpid.clone());
                }
            }
            assert_eq!(r.chosen().0, best.1);
            assert!((r.chosen().1 - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_ignores_target_insertion_order() {
        let src = index_1d("a", &[("q0", 0.25), ("q1", 2.0)]);
        let fwd = index_1d("b", &[("p0", 0.0), ("p1", 1.0), ("p2", 3.0)]);
        let rev = index_1d("b", &[("p2", 3.0), ("p1", 1.0), ("p0", 0.0)]);
        assert_eq!(
            match_nn(&src, &fwd, true).unwrap(),
            match_nn(&src, &rev, true).unwrap()
        );
    }

    #[test]
    fn empty_target_is_a_domain_error_and_empty_source_is_fine() {
        let src = index_1d("a", &[("q0", 0.0)]);
        let empty = DescriptorIndex::from_entries("b", vec![]).unwrap();
        assert!(match_nn(&src, &empty, false).is_err());
        assert!(match_nn(&empty, &src, false).unwrap().is_empty());
    }

    #[test]
    fn mismatched_dimensions_are_shape_errors() {
        let src = index_1d("a", &[("q0", 0.0)]);
        let entries = vec![("p0".to_string(), Point2D::new(0.0, 0.0), desc(&[0.0, 1.0]))];
        let tgt = DescriptorIndex::from_entries("b", entries).unwrap();
        assert!(matches!(match_nn(&src, &tgt, false), Err(Error::Shape { .. })));
        assert!(matches!(match_hungarian(&src, &tgt), Err(Error::Shape { .. })));
    }

    #[test]
    fn assignment_on_identical_sets_is_identity() {
        let idx = index_1d("s", &[("p0", 0.0), ("p1", 2.0), ("p2", 5.0)]);
        let got = match_hungarian(&idx, &idx).unwrap();
        assert_eq!(got.total_cost, 0.0);
        for (a, b) in &got.pairs {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn assignment_matches_hand_checked_two_by_two() {
        // Induced cost matrix [[1, 2], [2, 1]]; diagonal wins with cost 2.
        let src = index_1d("a", &[("s0", 0.0), ("s1", 3.0)]);
        let tgt = index_1d("b", &[("t0", 1.0), ("t1", 2.0)]);
        let got = match_hungarian(&src, &tgt).unwrap();
        assert!((got.total_cost - 2.0).abs() < 1e-12);
        assert_eq!(got.pairs, vec![
            ("s0".to_string(), "t0".to_string()),
            ("s1".to_string(), "t1".to_string()),
        ]);
    }

    #[test]
    fn assignment_cost_equals_exhaustive_minimum() {
        for trial in 0..10u64 {
            let mut rng = seeding::stream(33, "hungarian-oracle", &[trial]);
            let n = 7;
            let entries = |rng: &mut rand_chacha::ChaCha8Rng, tag: char| {
                (0..n)
                    .map(|i| {
                        (
                            format!("{tag}{i}"),
                            Point2D::new(0.0, 0.0),
                            desc(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]),
                        )
                    })
                    .collect::<Vec<_>>()
            };
            let src = DescriptorIndex::from_entries("a", entries(&mut rng, 's')).unwrap();
            let tgt = DescriptorIndex::from_entries("b", entries(&mut rng, 't')).unwrap();
            let got = match_hungarian(&src, &tgt).unwrap();
            let mut cost = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    cost[i][j] = src.entries()[i].2.dist(&tgt.entries()[j].2);
                }
            }
            let best = crate::oracles::min_assignment_cost(&cost);
            assert!(
                (got.total_cost - best).abs() < 1e-9,
                "trial {trial}: solver {} vs exhaustive {best}",
                got.total_cost
            );
        }
    }

    #[test]
    fn rectangular_assignment_is_injective_and_oriented() {
        let src = index_1d("a", &[("s0", 0.0), ("s1", 10.0)]);
        let tgt = index_1d("b", &[("t0", 9.9), ("t1", 0.2), ("t2", 5.0)]);
        let got = match_hungarian(&src, &tgt).unwrap();
        assert_eq!(got.pairs.len(), 2);
        let targets: BTreeSet<_> = got.pairs.iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(targets.len(), 2);
        assert_eq!(got.pairs[0], ("s0".to_string(), "t1".to_string()));
        assert_eq!(got.pairs[1], ("s1".to_string(), "t0".to_string()));
        assert!(match_hungarian(&tgt, &src).is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let mut img = SketchImage::blank(64).unwrap();
        img.set(20, 30, 0.0);
        let points = vec![("p0".to_string(), Point2D::new(20.0, 30.0))];
        let mut rng = seeding::stream(0, "perturb", &[0]);
        let (warped, moved, p) = perturb_image(&img, &points, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(p.rotation_deg, 0.0);
        assert_eq!(p.scale, 1.0);
        assert_eq!(moved, points);
        assert!(warped.mean_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn quarter_turn_sends_right_of_center_to_below_center() {
        let side = 65usize;
        let c = (side - 1) as f64 / 2.0;
        let p = Perturbation::new(90.0, 1.0, Point2D::new(c, c));
        let moved = p.apply(Point2D::new(c + 10.0, c));
        assert!(moved.dist(Point2D::new(c, c + 10.0)) < 0.5);
    }

    #[test]
    fn recorded_inverse_replays_points_exactly() {
        let img = SketchImage::blank(64).unwrap();
        let points: Vec<(String, Point2D)> = (0..10)
            .map(|i| {
                (
                    format!("p{i}"),
                    Point2D::new(5.0 + 5.0 * i as f64 % 50.0, 3.0 + 6.0 * i as f64 % 55.0),
                )
            })
            .collect();
        let mut rng = seeding::stream(4, "perturb", &[1]);
        let (_, moved, p) = perturb_image(&img, &points, 90.0, 0.4, &mut rng).unwrap();
        assert!(p.rotation_deg.abs() <= 90.0);
        assert!((p.scale - 1.0).abs() <= 0.4);
        for ((_, orig), (_, new)) in points.iter().zip(&moved) {
            let back = p.apply_inverse(*new);
            assert!(back.dist(*orig) < 1e-6);
        }
    }

    #[test]
    fn index_embeddings_equal_single_point_embeddings() {
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 2).unwrap();
        let mut img = SketchImage::blank(64).unwrap();
        for i in 10..50 {
            img.set(i, 32, 0.0);
            img.set(32, i, 0.2);
        }
        let points: Vec<(String, Point2D)> = (0..5)
            .map(|i| (format!("p{i}"), Point2D::new(12.0 + 8.0 * i as f64, 30.0)))
            .collect();
        let index = build_index(&model, "s", &img, &points).unwrap();
        assert_eq!(index.len(), points.len());
        for (pid, pos, d) in index.entries() {
            let stack =
                extract_zoom_stack(&img, *pos, model.zoom_fractions(), model.crop_size()).unwrap();
            let single = model.embed_stack(&stack).unwrap();
            let diff: f64 = d
                .values()
                .iter()
                .zip(single.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-5, "{pid}: batch vs single diff {diff}");
        }
        let empty = build_index(&model, "s", &img, &[]).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn duplicate_point_ids_are_rejected_at_build() {
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 2).unwrap();
        let img = SketchImage::blank(64).unwrap();
        let points = vec![
            ("p0".to_string(), Point2D::new(10.0, 10.0)),
            ("p0".to_string(), Point2D::new(20.0, 20.0)),
        ];
        assert!(build_index(&model, "s", &img, &points).is_err());
    }
}
