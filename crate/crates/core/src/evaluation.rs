//! Rank and pixel-accuracy metrics, plus the all-pairs benchmark driver
//! that produces a serializable report.

use crate::canvas::{rotate_about, Point2D};
use crate::dataset::{Corpus, CorrespondenceSet};
use crate::embedder::EmbedderModel;
use crate::error::{Error, Result};
use crate::matching::{build_index, match_nn, DescriptorIndex, MatchResult};
use crate::seeding;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Benchmark knobs. `pre_rotate_deg: Some(d)` rotates every image (and its
/// annotations) by an angle drawn uniformly from [-d, d] before indexing.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub top_k: usize,
    /// CAcc thresholds as fractions of the image side, strictly
    /// increasing; must contain 0.05 for the headline scalar.
    pub thresholds: Vec<f64>,
    pub pre_rotate_deg: Option<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            top_k: 5,
            thresholds: vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.10],
            pre_rotate_deg: Some(90.0),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top-k must be at least 1".into()));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("need at least one CAcc threshold".into()));
        }
        for w in self.thresholds.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config(
                    "CAcc thresholds must be strictly increasing".into(),
                ));
            }
        }
        if !self.thresholds.iter().all(|t| t.is_finite() && *t > 0.0) {
            return Err(Error::Config("CAcc thresholds must be positive".into()));
        }
        if !self.thresholds.iter().any(|t| (t - 0.05).abs() < 1e-12) {
            return Err(Error::Config(
                "CAcc thresholds must include 0.05".into(),
            ));
        }
        if let Some(d) = self.pre_rotate_deg {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Config(format!("bad pre-rotation bound {d}")));
            }
        }
        Ok(())
    }
}

/// CMC curve of one result set plus its exclusion tally.
#[derive(Clone, Debug, PartialEq)]
pub struct CmcOutcome {
    /// Percentage of sources whose true target ranks within the top k,
    /// for k = 1..=top_k.
    pub curve: Vec<f64>,
    pub n_sources: usize,
    pub excluded: usize,
}

/// Cumulative match characteristic over ranked results. `gt` pairs are
/// read as (source point id, target point id). Sources without a usable
/// ground-truth candidate are excluded and tallied.
pub fn cmc(results: &[MatchResult], gt: &CorrespondenceSet, top_k: usize) -> Result<CmcOutcome> {
    if top_k == 0 {
        return Err(Error::domain("CMC needs top_k >= 1"));
    }
    let truth: BTreeMap<&str, &str> = gt
        .pairs
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();
    let mut hits_at = vec![0usize; top_k];
    let mut n_sources = 0usize;
    let mut excluded = 0usize;
    for r in results {
        let Some(&want) = truth.get(r.source_point_id.as_str()) else {
            excluded += 1;
            continue;
        };
        let Some(rank0) = r.ranked_targets.iter().position(|(pid, _)| pid == want) else {
            excluded += 1;
            continue;
        };
        n_sources += 1;
        if rank0 < top_k {
            hits_at[rank0] += 1;
        }
    }
    if n_sources == 0 {
        return Err(Error::domain(
            "no source point has a ground-truth candidate",
        ));
    }
    let mut curve = Vec::with_capacity(top_k);
    let mut cum = 0usize;
    for k in 0..top_k {
        cum += hits_at[k];
        curve.push(100.0 * cum as f64 / n_sources as f64);
    }
    Ok(CmcOutcome {
        curve,
        n_sources,
        excluded,
    })
}

/// CAcc curve of one result set plus its exclusion tally.
#[derive(Clone, Debug, PartialEq)]
pub struct CaccOutcome {
    /// Percentage of chosen matches landing strictly closer than
    /// `threshold * image_side` pixels to the true location, one value
    /// per threshold.
    pub curve: Vec<f64>,
    pub n_sources: usize,
    pub excluded: usize,
}

/// Correspondence accuracy of the chosen matches. `gt_pos` maps a source
/// point id to the true 2-D location on the target image; the chosen
/// match's own location comes from the target index.
pub fn cacc(
    results: &[MatchResult],
    tgt: &DescriptorIndex,
    gt_pos: &BTreeMap<String, Point2D>,
    image_side: usize,
    thresholds: &[f64],
) -> Result<CaccOutcome> {
    if thresholds.is_empty() {
        return Err(Error::domain("CAcc needs at least one threshold"));
    }
    let mut offsets = Vec::new();
    let mut excluded = 0usize;
    for r in results {
        let Some(&want) = gt_pos.get(&r.source_point_id) else {
            excluded += 1;
            continue;
        };
        let (chosen_pid, _) = r.chosen();
        let Some(chosen_pos) = tgt.position_of(chosen_pid) else {
            return Err(Error::domain(format!(
                "chosen match {chosen_pid:?} is not in the target index"
            )));
        };
        offsets.push(chosen_pos.dist(want));
    }
    if offsets.is_empty() {
        return Err(Error::domain(
            "no source point has a ground-truth location",
        ));
    }
    let n_sources = offsets.len();
    let curve = thresholds
        .iter()
        .map(|t| {
            let cutoff = t * image_side as f64;
            let ok = offsets.iter().filter(|&&d| d < cutoff).count();
            100.0 * ok as f64 / n_sources as f64
        })
        .collect();
    Ok(CaccOutcome {
        curve,
        n_sources,
        excluded,
    })
}

/// Metrics of one evaluated ordered pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub category: String,
    pub src: String,
    pub tgt: String,
    pub n_points: usize,
    pub excluded: usize,
    pub cmc_curve: Vec<f64>,
    pub cacc_curve: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub evaluated_pairs: usize,
    pub n_points: usize,
    pub cmc_curve: Vec<f64>,
    pub cacc_curve: Vec<f64>,
}

/// Aggregated benchmark results; all percentages pool the evaluated
/// sources of every pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top_k: usize,
    pub thresholds: Vec<f64>,
    pub cmc_curve: Vec<f64>,
    pub cacc_curve: Vec<f64>,
    pub cmc_at_5: f64,
    pub cacc_at_5pct: f64,
    pub n_points: usize,
    pub excluded_points: usize,
    /// Annotated points dropped because pre-rotation moved them off
    /// canvas.
    pub offcanvas_points: usize,
    pub evaluated_pairs: usize,
    pub skipped_pairs: usize,
    pub per_category: BTreeMap<String, CategoryReport>,
    pub per_pair: Vec<PairReport>,
    pub pre_rotate_deg: Option<f64>,
    /// The rotation actually applied to each sketch, for exact replay.
    pub rotations: BTreeMap<String, f64>,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("eval report", e.to_string()))
    }
}

/// Per-pair tallies that merge associatively into curves.
#[derive(Clone, Debug, Default)]
struct Tally {
    n: usize,
    cmc_hits: Vec<usize>,
    cacc_hits: Vec<usize>,
}

impl Tally {
    fn add(&mut self, n: usize, cmc_curve: &[f64], cacc_curve: &[f64]) {
        if self.cmc_hits.is_empty() {
            self.cmc_hits = vec![0; cmc_curve.len()];
            self.cacc_hits = vec![0; cacc_curve.len()];
        }
        self.n += n;
        // Curves are percentages of n; recover integer hit counts.
        for (slot, pct) in self.cmc_hits.iter_mut().zip(cmc_curve) {
            *slot += (pct / 100.0 * n as f64).round() as usize;
        }
        for (slot, pct) in self.cacc_hits.iter_mut().zip(cacc_curve) {
            *slot += (pct / 100.0 * n as f64).round() as usize;
        }
    }

    fn curves(&self) -> (Vec<f64>, Vec<f64>) {
        let pct = |hits: &[usize]| {
            hits.iter()
                .map(|&h| 100.0 * h as f64 / self.n as f64)
                .collect::<Vec<f64>>()
        };
        (pct(&self.cmc_hits), pct(&self.cacc_hits))
    }
}

/// Evaluates the model on every ordered within-category sketch pair:
/// optional per-image random pre-rotation, index construction (cached per
/// image), ranked nearest-neighbor matching, and metric aggregation.
/// Pairs with no usable ground truth are skipped and tallied.
pub fn run_benchmark(
    corpus: &Corpus,
    model: &EmbedderModel,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut by_category: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for (i, rec) in corpus.records().iter().enumerate() {
        by_category.entry(&rec.category).or_default().push(i as u32);
    }
    if !by_category.values().any(|v| v.len() >= 2) {
        return Err(Error::domain(
            "benchmark needs at least one category with two sketches",
        ));
    }

    // One rotation and one index per sketch, shared by every pair the
    // sketch participates in.
    let mut rotations = BTreeMap::new();
    let mut offcanvas_points = 0usize;
    let mut indexes: BTreeMap<u32, DescriptorIndex> = BTreeMap::new();
    for ids in by_category.values() {
        if ids.len() < 2 {
            continue;
        }
        for &si in ids {
            let rec = corpus.record(si);
            let angle = match cfg.pre_rotate_deg {
                Some(bound) if bound > 0.0 => {
                    let mut rng = seeding::stream(cfg.seed, "pre-rotate", &[si as u64]);
                    rng.random_range(-bound..bound)
                }
                Some(_) => 0.0,
                None => 0.0,
            };
            if cfg.pre_rotate_deg.is_some() {
                rotations.insert(rec.sketch_id.clone(), angle);
            }
            let (image, points) = if angle != 0.0 {
                let c = (rec.image.side() - 1) as f64 / 2.0;
                let center = Point2D::new(c, c);
                let rotated = rotate_about(&rec.image, center, angle);
                let (sin, cos) = angle.to_radians().sin_cos();
                let mut kept = Vec::new();
                for (pid, p) in &rec.points {
                    let dx = p.x - center.x;
                    let dy = p.y - center.y;
                    let moved = Point2D::new(
                        center.x + cos * dx - sin * dy,
                        center.y + sin * dx + cos * dy,
                    );
                    if rotated.contains(moved) {
                        kept.push((pid.clone(), moved));
                    } else {
                        offcanvas_points += 1;
                    }
                }
                (rotated, kept)
            } else {
                (rec.image.clone(), rec.points.clone())
            };
            indexes.insert(si, build_index(model, &rec.sketch_id, &image, &points)?);
        }
    }

    let mut overall = Tally::default();
    let mut per_category: BTreeMap<String, (Tally, usize)> = BTreeMap::new();
    let mut per_pair = Vec::new();
    let mut excluded_points = 0usize;
    let mut skipped_pairs = 0usize;

    for (category, ids) in &by_category {
        if ids.len() < 2 {
            continue;
        }
        for &src in ids {
            for &tgt in ids {
                if src == tgt {
                    continue;
                }
                let src_rec = corpus.record(src);
                let tgt_rec = corpus.record(tgt);
                let src_index = &indexes[&src];
                let tgt_index = &indexes[&tgt];
                // Ground truth restricted to points that survived the
                // rotation on both sides.
                let mut pairs = Vec::new();
                let mut gt_pos = BTreeMap::new();
                for (sp, tp) in corpus.shared_points(src, tgt) {
                    let spid = corpus.point_id(crate::dataset::SampleRef {
                        sketch: src,
                        point: sp,
                    });
                    let tpid = corpus.point_id(crate::dataset::SampleRef {
                        sketch: tgt,
                        point: tp,
                    });
                    if src_index.position_of(spid).is_none() {
                        continue;
                    }
                    let Some(tpos) = tgt_index.position_of(tpid) else {
                        continue;
                    };
                    pairs.push((spid.to_string(), tpid.to_string()));
                    gt_pos.insert(spid.to_string(), tpos);
                }
                if pairs.is_empty() || src_index.is_empty() || tgt_index.is_empty() {
                    skipped_pairs += 1;
                    continue;
                }
                let gt = CorrespondenceSet {
                    sketch_a: src_rec.sketch_id.clone(),
                    sketch_b: tgt_rec.sketch_id.clone(),
                    pairs,
                };
                let results = match_nn(src_index, tgt_index, true)?;
                let cmc_out = match cmc(&results, &gt, cfg.top_k) {
                    Ok(c) => c,
                    Err(Error::Domain(_)) => {
                        skipped_pairs += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let cacc_out = cacc(
                    &results,
                    tgt_index,
                    &gt_pos,
                    tgt_rec.image.side(),
                    &cfg.thresholds,
                )?;
                debug_assert_eq!(cmc_out.n_sources, cacc_out.n_sources);
                excluded_points += cmc_out.excluded;
                overall.add(cmc_out.n_sources, &cmc_out.curve, &cacc_out.curve);
                let slot = per_category.entry(category.to_string()).or_default();
                slot.0.add(cmc_out.n_sources, &cmc_out.curve, &cacc_out.curve);
                slot.1 += 1;
                per_pair.push(PairReport {
                    category: category.to_string(),
                    src: src_rec.sketch_id.clone(),
                    tgt: tgt_rec.sketch_id.clone(),
                    n_points: cmc_out.n_sources,
                    excluded: cmc_out.excluded,
                    cmc_curve: cmc_out.curve,
                    cacc_curve: cacc_out.curve,
                });
            }
        }
    }

    if overall.n == 0 {
        return Err(Error::domain("benchmark produced no evaluable pairs"));
    }
    let (cmc_curve, cacc_curve) = overall.curves();
    let k5 = cfg.top_k.min(5);
    let cmc_at_5 = cmc_curve[k5 - 1];
    let t5 = cfg
        .thresholds
        .iter()
        .position(|t| (t - 0.05).abs() < 1e-12)
        .expect("validated to contain 0.05");
    let cacc_at_5pct = cacc_curve[t5];
    let per_category = per_category
        .into_iter()
        .map(|(cat, (tally, pairs))| {
            let (cmc_curve, cacc_curve) = tally.curves();
            (
                cat,
                CategoryReport {
                    evaluated_pairs: pairs,
                    n_points: tally.n,
                    cmc_curve,
                    cacc_curve,
                },
            )
        })
        .collect();
    Ok(EvalReport {
        top_k: cfg.top_k,
        thresholds: cfg.thresholds.clone(),
        cmc_curve,
        cacc_curve,
        cmc_at_5,
        cacc_at_5pct,
        n_points: overall.n,
        excluded_points,
        offcanvas_points,
        evaluated_pairs: per_pair.len(),
        skipped_pairs,
        per_category,
        per_pair,
        pre_rotate_deg: cfg.pre_rotate_deg,
        rotations,
        seed: cfg.seed,
    })
}

/// CMC@5 of a matcher that ranks uniformly at random, in percent.
pub fn random_cmc_at_5(n_candidates: usize) -> f64 {
    100.0 * 5.0f64.min(n_candidates as f64) / n_candidates as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_toy_corpus, SketchRecord, ToyConfig};
    use crate::embedder::Descriptor;
    use crate::matching::DescriptorIndex;

    fn desc(values: &[f64]) -> Descriptor {
        Descriptor::new(values.to_vec()).unwrap()
    }

    fn ranked(source: &str, targets: &[(&str, f64)]) -> MatchResult {
        let mut list: Vec<(String, f64)> =
            targets.iter().map(|&(p, d)| (p.to_string(), d)).collect();
        list.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        MatchResult {
            source_point_id: source.to_string(),
            ranked_targets: list,
        }
    }

    fn gt(pairs: &[(&str, &str)]) -> CorrespondenceSet {
        CorrespondenceSet {
            sketch_a: "a".into(),
            sketch_b: "b".into(),
            pairs: pairs
                .iter()
                .map(|&(x, y)| (x.to_string(), y.to_string()))
                .collect(),
        }
    }

    #[test]
    fn cmc_counts_ranks_and_exclusions() {
        let results = vec![
            ranked("s0", &[("t0", 0.1), ("t1", 0.5), ("t2", 0.9)]), // gt t0 rank 1
            ranked("s1", &[("t0", 0.2), ("t1", 0.4), ("t2", 0.6)]), // gt t2 rank 3
            ranked("s2", &[("t0", 0.3), ("t1", 0.7), ("t2", 0.8)]), // no gt
        ];
        let truth = gt(&[("s0", "t0"), ("s1", "t2")]);
        let out = cmc(&results, &truth, 3).unwrap();
        assert_eq!(out.n_sources, 2);
        assert_eq!(out.excluded, 1);
        assert_eq!(out.curve, vec![50.0, 50.0, 100.0]);
    }

    #[test]
    fn cmc_is_total_at_full_rank_depth() {
        let results = vec![ranked("s0", &[("t0", 0.4), ("t1", 0.2), ("t2", 0.3)])];
        let truth = gt(&[("s0", "t0")]);
        let out = cmc(&results, &truth, 3).unwrap();
        assert_eq!(*out.curve.last().unwrap(), 100.0);
        for w in out.curve.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn cmc_with_no_usable_sources_is_an_error() {
        let results = vec![ranked("s0", &[("t0", 0.1)])];
        let truth = gt(&[("zzz", "t0")]);
        assert!(cmc(&results, &truth, 1).is_err());
    }

    #[test]
    fn cacc_applies_a_strict_pixel_cutoff() {
        // Side 512, threshold 0.05 -> cutoff 25.6 px. A 30 px miss fails,
        // a 20 px miss passes, an exact hit passes.
        let entries = vec![
            ("t0".to_string(), Point2D::new(100.0, 100.0), desc(&[0.0])),
            ("t1".to_string(), Point2D::new(200.0, 100.0), desc(&[1.0])),
            ("t2".to_string(), Point2D::new(300.0, 100.0), desc(&[2.0])),
        ];
        let tgt = DescriptorIndex::from_entries("b", entries).unwrap();
        let results = vec![
            ranked("s0", &[("t0", 0.0)]),
            ranked("s1", &[("t1", 0.0)]),
            ranked("s2", &[("t2", 0.0)]),
        ];
        let mut gt_pos = BTreeMap::new();
        gt_pos.insert("s0".to_string(), Point2D::new(130.0, 100.0)); // 30 px
        gt_pos.insert("s1".to_string(), Point2D::new(220.0, 100.0)); // 20 px
        gt_pos.insert("s2".to_string(), Point2D::new(300.0, 100.0)); // 0 px
        let out = cacc(&results, &tgt, &gt_pos, 512, &[0.05]).unwrap();
        assert_eq!(out.n_sources, 3);
        let expected = 100.0 * 2.0 / 3.0;
        assert!((out.curve[0] - expected).abs() < 1e-9);
        // Exactly on the cutoff is NOT below it. Probe with binary-exact
        // values: threshold 0.25 at side 512 cuts at 128 px sharp.
        let mut exact = BTreeMap::new();
        exact.insert("s0".to_string(), Point2D::new(100.0 + 128.0, 100.0));
        let out = cacc(&results[..1], &tgt, &exact, 512, &[0.25]).unwrap();
        assert_eq!(out.curve[0], 0.0);
        let mut under = BTreeMap::new();
        under.insert("s0".to_string(), Point2D::new(100.0 + 127.5, 100.0));
        let out = cacc(&results[..1], &tgt, &under, 512, &[0.25]).unwrap();
        assert_eq!(out.curve[0], 100.0);
    }

    #[test]
    fn random_ranking_lands_near_the_uniform_baseline() {
        // One source, 10 candidates, random descriptors: the true target
        // lands in the top 5 about half the time.
        let mut total = 0.0;
        let trials = 1000;
        for trial in 0..trials {
            let mut rng = seeding::stream(100, "cmc-mc", &[trial]);
            let mut draw = || {
                desc(&[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ])
            };
            let src_desc = draw();
            let targets: Vec<(String, f64)> = (0..10)
                .map(|i| {
                    let td = draw();
                    (format!("t{i}"), src_desc.dist(&td))
                })
                .collect();
            let refs: Vec<(&str, f64)> = targets.iter().map(|(p, d)| (p.as_str(), *d)).collect();
            let results = vec![ranked("s0", &refs)];
            let truth = gt(&[("s0", "t0")]);
            let out = cmc(&results, &truth, 5).unwrap();
            total += out.curve[4];
        }
        let mean = total / trials as f64;
        assert!(
            (mean - 50.0).abs() < 3.0,
            "uniform-ranking CMC@5 mean {mean}"
        );
        assert_eq!(random_cmc_at_5(10), 50.0);
    }

    fn duplicate_sketch_corpus() -> Corpus {
        let toy = generate_toy_corpus(&ToyConfig {
            n_categories: 1,
            shapes_per_category: 1,
            points_per_shape: 12,
            views: vec!["front".into()],
            side: 128,
            seed: 3,
            ..ToyConfig::default()
        })
        .unwrap();
        let base = toy.corpus.records()[0].clone();
        let twin = SketchRecord {
            sketch_id: "mug_99_front".into(),
            ..base.clone()
        };
        let pairs = base
            .points
            .iter()
            .map(|(pid, _)| (pid.clone(), pid.clone()))
            .collect();
        let corr = CorrespondenceSet {
            sketch_a: base.sketch_id.clone(),
            sketch_b: twin.sketch_id.clone(),
            pairs,
        };
        Corpus::from_parts(vec![base, twin], vec![corr]).unwrap()
    }

    #[test]
    fn identical_sketches_score_perfectly_without_rotation() {
        let corpus = duplicate_sketch_corpus();
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 1).unwrap();
        let cfg = EvalConfig {
            pre_rotate_deg: None,
            ..EvalConfig::default()
        };
        let report = run_benchmark(&corpus, &model, &cfg).unwrap();
        assert_eq!(report.evaluated_pairs, 2);
        assert_eq!(report.cmc_curve[0], 100.0);
        assert_eq!(report.cmc_at_5, 100.0);
        assert_eq!(report.cacc_at_5pct, 100.0);
        assert!(report.rotations.is_empty());
    }

    fn small_corpus() -> Corpus {
        generate_toy_corpus(&ToyConfig {
            n_categories: 2,
            shapes_per_category: 2,
            points_per_shape: 8,
            views: vec!["front".into()],
            side: 128,
            seed: 5,
            ..ToyConfig::default()
        })
        .unwrap()
        .corpus
    }

    #[test]
    fn benchmark_visits_every_ordered_pair() {
        let corpus = small_corpus();
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 1).unwrap();
        let cfg = EvalConfig {
            pre_rotate_deg: None,
            ..EvalConfig::default()
        };
        let report = run_benchmark(&corpus, &model, &cfg).unwrap();
        // 2 categories x 2 sketches -> 2 ordered pairs each.
        assert_eq!(report.evaluated_pairs + report.skipped_pairs, 4);
        let cat_total: usize = report.per_category.values().map(|c| c.n_points).sum();
        assert_eq!(cat_total, report.n_points);
        let pair_total: usize = report.per_pair.iter().map(|p| p.n_points).sum();
        assert_eq!(pair_total, report.n_points);
        for w in report.cmc_curve.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for w in report.cacc_curve.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn benchmark_matches_brute_force_metrics_per_pair() {
        let corpus = small_corpus();
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 9).unwrap();
        let cfg = EvalConfig {
            pre_rotate_deg: None,
            ..EvalConfig::default()
        };
        let report = run_benchmark(&corpus, &model, &cfg).unwrap();
        let pair = &report.per_pair[0];
        let src_idx = corpus.index_of(&pair.src).unwrap();
        let tgt_idx = corpus.index_of(&pair.tgt).unwrap();
        let src_rec = corpus.record(src_idx);
        let tgt_rec = corpus.record(tgt_idx);
        let src_index =
            build_index(&model, &pair.src, &src_rec.image, &src_rec.points).unwrap();
        let tgt_index =
            build_index(&model, &pair.tgt, &tgt_rec.image, &tgt_rec.points).unwrap();
        let mut truth = BTreeMap::new();
        let mut hits = Vec::new();
        for (sp, tp) in corpus.shared_points(src_idx, tgt_idx) {
            let spid = corpus.point_id(crate::dataset::SampleRef {
                sketch: src_idx,
                point: sp,
            });
            let tpid = corpus.point_id(crate::dataset::SampleRef {
                sketch: tgt_idx,
                point: tp,
            });
            truth.insert(spid.to_string(), tpid.to_string());
        }
        let src_list: Vec<(String, Descriptor)> = src_index
            .entries()
            .iter()
            .map(|(p, _, d)| (p.clone(), d.clone()))
            .collect();
        let tgt_list: Vec<(String, Descriptor)> = tgt_index
            .entries()
            .iter()
            .map(|(p, _, d)| (p.clone(), d.clone()))
            .collect();
        let (brute_curve, _) = crate::oracles::brute_cmc(&src_list, &tgt_list, &truth, cfg.top_k);
        for (a, b) in pair.cmc_curve.iter().zip(&brute_curve) {
            assert!((a - b).abs() < 1e-9, "cmc {a} vs brute {b}");
        }
        // CAcc parity through the independent recount.
        let results = match_nn(&src_index, &tgt_index, true).unwrap();
        for r in &results {
            if let Some(tpid) = truth.get(&r.source_point_id) {
                let chosen_pos = tgt_index.position_of(&r.chosen().0).unwrap();
                let true_pos = tgt_index.position_of(tpid).unwrap();
                hits.push((chosen_pos, true_pos));
            }
        }
        let brute_cacc =
            crate::oracles::brute_cacc(&hits, tgt_rec.image.side(), &cfg.thresholds);
        for (a, b) in pair.cacc_curve.iter().zip(&brute_cacc) {
            assert!((a - b).abs() < 1e-9, "cacc {a} vs brute {b}");
        }
    }

    #[test]
    fn benchmark_replays_byte_identically() {
        let corpus = small_corpus();
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 1).unwrap();
        let cfg = EvalConfig {
            pre_rotate_deg: Some(45.0),
            seed: 17,
            ..EvalConfig::default()
        };
        let a = run_benchmark(&corpus, &model, &cfg).unwrap();
        let b = run_benchmark(&corpus, &model, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(!a.rotations.is_empty());
        for angle in a.rotations.values() {
            assert!(angle.abs() <= 45.0);
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let corpus = small_corpus();
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 1).unwrap();
        for cfg in [
            EvalConfig {
                top_k: 0,
                ..EvalConfig::default()
            },
            EvalConfig {
                thresholds: vec![],
                ..EvalConfig::default()
            },
            EvalConfig {
                thresholds: vec![0.05, 0.05],
                ..EvalConfig::default()
            },
            EvalConfig {
                thresholds: vec![0.01, 0.02],
                ..EvalConfig::default()
            },
            EvalConfig {
                pre_rotate_deg: Some(-3.0),
                ..EvalConfig::default()
            },
        ] {
            assert!(run_benchmark(&corpus, &model, &cfg).is_err());
        }
    }

    #[test]
    fn single_sketch_categories_cannot_be_benchmarked() {
        let toy = generate_toy_corpus(&ToyConfig {
            n_categories: 2,
            shapes_per_category: 1,
            points_per_shape: 6,
            views: vec!["front".into()],
            side: 128,
            seed: 2,
            ..ToyConfig::default()
        })
        .unwrap();
        // Keep a single sketch per category.
        let model = EmbedderModel::new("conv5-micro", 8, 16, &[0.10, 0.20, 0.40], 1).unwrap();
        let one_per_cat = toy.corpus.subset(|r| r.sketch_id.ends_with("00_front")).unwrap();
        let err = run_benchmark(&one_per_cat, &model, &EvalConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }
}
