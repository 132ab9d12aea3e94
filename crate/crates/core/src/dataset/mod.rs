//! Corpus model: annotated sketches, correspondence classes, balanced
//! minibatch scheduling, and the procedural toy generator.
//!
//! A corpus is a set of [`SketchRecord`]s plus pairwise correspondence sets.
//! On construction the pairwise sets are closed into equivalence classes
//! (union-find over (sketch, point) nodes), so "corresponds" is symmetric
//! and transitive no matter how the manifest factored it.

pub mod bluenoise;
pub mod toygen;

pub use bluenoise::{blue_noise_sample, blue_noise_sample_detailed};
pub use toygen::{generate_toy_corpus, ToyConfig, ToyCorpus, ToyTrace};

use crate::canvas::{Point2D, SketchImage};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct SketchRecord {
    pub sketch_id: String,
    pub category: String,
    pub view: String,
    pub image: SketchImage,
    /// (point_id, position), ids unique within the record.
    pub points: Vec<(String, Point2D)>,
}

impl SketchRecord {
    /// Shape identity shared by all views of one instance: the sketch id
    /// with its trailing "_{view}" stripped.
    pub fn model_id(&self) -> &str {
        let suffix = format!("_{}", self.view);
        self.sketch_id
            .strip_suffix(suffix.as_str())
            .unwrap_or(&self.sketch_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub sketch_a: String,
    pub sketch_b: String,
    /// (point_id in a, point_id in b); no id repeats on one side.
    pub pairs: Vec<(String, String)>,
}

/// Index of one annotated point: `sketch` into the corpus record list,
/// `point` into that record's point list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleRef {
    pub sketch: u32,
    pub point: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleGroup {
    pub group_id: u64,
    pub members: Vec<SampleRef>,
}

/// Quota layout of one minibatch of positive pairs. Quotas count anchors:
/// every view contributes `per_view_quota` anchors and every category
/// `per_category_quota`, summing to `batch_size` both ways.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub per_view_quota: usize,
    pub per_category_quota: usize,
}

impl BatchSpec {
    /// Even quotas for a corpus with the given cell grid. Fails unless
    /// `batch_size` splits evenly both ways.
    pub fn uniform(batch_size: usize, n_views: usize, n_categories: usize) -> Result<Self> {
        if n_views == 0 || n_categories == 0 || batch_size == 0 {
            return Err(Error::Config("batch layout needs nonzero sizes".into()));
        }
        if batch_size % n_views != 0 || batch_size % n_categories != 0 {
            return Err(Error::Config(format!(
                "batch size {batch_size} does not split evenly over {n_views} views and {n_categories} categories"
            )));
        }
        Ok(Self {
            batch_size,
            per_view_quota: batch_size / n_views,
            per_category_quota: batch_size / n_categories,
        })
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }
    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps class numbering stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    records: Vec<SketchRecord>,
    corr_sets: Vec<CorrespondenceSet>,
    id_to_idx: BTreeMap<String, u32>,
    /// class id per record per point, parallel to records[i].points
    point_class: Vec<Vec<u32>>,
    /// members per class, each sorted
    class_members: Vec<Vec<SampleRef>>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.corr_sets == other.corr_sets
    }
}

impl Corpus {
    pub fn from_parts(
        records: Vec<SketchRecord>,
        corr_sets: Vec<CorrespondenceSet>,
    ) -> Result<Self> {
        let mut id_to_idx = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if rec.sketch_id.is_empty() || rec.category.is_empty() || rec.view.is_empty() {
                return Err(Error::parse(
                    format!("record {i}"),
                    "sketch_id, category, and view must be nonempty",
                ));
            }
            if id_to_idx.insert(rec.sketch_id.clone(), i as u32).is_some() {
                return Err(Error::parse(
                    rec.sketch_id.clone(),
                    "duplicate sketch_id",
                ));
            }
            let mut seen = BTreeSet::new();
            for (pid, _) in &rec.points {
                if !seen.insert(pid.as_str()) {
                    return Err(Error::parse(
                        rec.sketch_id.clone(),
                        format!("duplicate point_id {pid:?}"),
                    ));
                }
            }
        }

        // flatten (sketch, point) to union-find nodes
        let mut offsets = Vec::with_capacity(records.len());
        let mut total = 0u32;
        for rec in &records {
            offsets.push(total);
            total += rec.points.len() as u32;
        }
        let point_index = |sketch_id: &str, pid: &str| -> Result<(u32, u32)> {
            let &si = id_to_idx.get(sketch_id).ok_or_else(|| {
                Error::parse(
                    "correspondence set",
                    format!("unknown sketch_id {sketch_id:?}"),
                )
            })?;
            let pi = records[si as usize]
                .points
                .iter()
                .position(|(id, _)| id == pid)
                .ok_or_else(|| {
                    Error::parse(
                        sketch_id.to_string(),
                        format!("unknown point_id {pid:?}"),
                    )
                })?;
            Ok((si, pi as u32))
        };

        let mut uf = UnionFind::new(total as usize);
        for set in &corr_sets {
            let mut seen_a = BTreeSet::new();
            let mut seen_b = BTreeSet::new();
            for (pa, pb) in &set.pairs {
                if !seen_a.insert(pa.as_str()) || !seen_b.insert(pb.as_str()) {
                    return Err(Error::parse(
                        format!("correspondences {} / {}", set.sketch_a, set.sketch_b),
                        format!("point repeated on one side of pair ({pa:?}, {pb:?})"),
                    ));
                }
                let (sa, ia) = point_index(&set.sketch_a, pa)?;
                let (sb, ib) = point_index(&set.sketch_b, pb)?;
                uf.union(offsets[sa as usize] + ia, offsets[sb as usize] + ib);
            }
        }

        // dense class ids in order of first appearance (node order)
        let mut class_of_root = BTreeMap::new();
        let mut point_class = Vec::with_capacity(records.len());
        let mut class_members: Vec<Vec<SampleRef>> = Vec::new();
        for (si, rec) in records.iter().enumerate() {
            let mut row = Vec::with_capacity(rec.points.len());
            for pi in 0..rec.points.len() {
                let node = offsets[si] + pi as u32;
                let root = uf.find(node);
                let next_id = class_of_root.len() as u32;
                let class = *class_of_root.entry(root).or_insert(next_id);
                if class as usize == class_members.len() {
                    class_members.push(Vec::new());
                }
                class_members[class as usize].push(SampleRef {
                    sketch: si as u32,
                    point: pi as u32,
                });
                row.push(class);
            }
            point_class.push(row);
        }

        Ok(Self {
            records,
            corr_sets,
            id_to_idx,
            point_class,
            class_members,
        })
    }

    pub fn records(&self) -> &[SketchRecord] {
        &self.records
    }

    pub fn corr_sets(&self) -> &[CorrespondenceSet] {
        &self.corr_sets
    }

    pub fn index_of(&self, sketch_id: &str) -> Option<u32> {
        self.id_to_idx.get(sketch_id).copied()
    }

    pub fn record(&self, sketch: u32) -> &SketchRecord {
        &self.records[sketch as usize]
    }

    pub fn point_id(&self, r: SampleRef) -> &str {
        &self.records[r.sketch as usize].points[r.point as usize].0
    }

    pub fn point_pos(&self, r: SampleRef) -> Point2D {
        self.records[r.sketch as usize].points[r.point as usize].1
    }

    pub fn class_of(&self, r: SampleRef) -> u32 {
        self.point_class[r.sketch as usize][r.point as usize]
    }

    pub fn class_members(&self, class: u32) -> &[SampleRef] {
        &self.class_members[class as usize]
    }

    /// Distinct view labels, sorted.
    pub fn views(&self) -> Vec<String> {
        let set: BTreeSet<_> = self.records.iter().map(|r| r.view.clone()).collect();
        set.into_iter().collect()
    }

    /// Distinct category labels, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<_> = self.records.iter().map(|r| r.category.clone()).collect();
        set.into_iter().collect()
    }

    /// All samples whose correspondence class has at least one other
    /// member, ordered by (sketch, point).
    pub fn trainable_samples(&self) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for (si, row) in self.point_class.iter().enumerate() {
            for (pi, &class) in row.iter().enumerate() {
                if self.class_members[class as usize].len() >= 2 {
                    out.push(SampleRef {
                        sketch: si as u32,
                        point: pi as u32,
                    });
                }
            }
        }
        out
    }

    /// Ground-truth point pairs shared by two sketches: (src point index,
    /// tgt point index), lowest target index per class.
    pub fn shared_points(&self, src: u32, tgt: u32) -> Vec<(u32, u32)> {
        let tgt_classes = &self.point_class[tgt as usize];
        let mut by_class = BTreeMap::new();
        for (pi, &class) in tgt_classes.iter().enumerate() {
            by_class.entry(class).or_insert(pi as u32);
        }
        let mut out = Vec::new();
        for (pi, &class) in self.point_class[src as usize].iter().enumerate() {
            if let Some(&tp) = by_class.get(&class) {
                if src != tgt || pi as u32 != tp {
                    out.push((pi as u32, tp));
                }
            }
        }
        out
    }

    /// New corpus keeping only records selected by `keep`; correspondence
    /// pairs touching dropped sketches are dropped with them.
    pub fn subset(&self, keep: impl Fn(&SketchRecord) -> bool) -> Result<Corpus> {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let ids: BTreeSet<_> = records.iter().map(|r| r.sketch_id.clone()).collect();
        let corr_sets: Vec<_> = self
            .corr_sets
            .iter()
            .filter(|s| ids.contains(&s.sketch_a) && ids.contains(&s.sketch_b))
            .cloned()
            .collect();
        Corpus::from_parts(records, corr_sets)
    }

    /// Loads a manifest.jsonl corpus; image paths are resolved relative to
    /// the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Corpus> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let file = fs::File::open(manifest_path)
            .map_err(Error::io(manifest_path.display().to_string()))?;
        let mut records = Vec::new();
        let mut corr_sets = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(Error::io(manifest_path.display().to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| {
                Error::parse(format!("manifest line {}", lineno + 1), e.to_string())
            })?;
            match parsed {
                ManifestLine::Sketch {
                    sketch_id,
                    category,
                    view,
                    image,
                    points,
                } => {
                    let image = SketchImage::load_png(&base.join(&image))?;
                    records.push(SketchRecord {
                        sketch_id,
                        category,
                        view,
                        image,
                        points: points
                            .into_iter()
                            .map(|(id, x, y)| (id, Point2D::new(x, y)))
                            .collect(),
                    });
                }
                ManifestLine::Corr { a, b, pairs } => corr_sets.push(CorrespondenceSet {
                    sketch_a: a,
                    sketch_b: b,
                    pairs,
                }),
            }
        }
        Corpus::from_parts(records, corr_sets)
    }

    /// Writes manifest.jsonl plus one PNG per sketch under `dir/images/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(Error::io(images.display().to_string()))?;
        let manifest_path = dir.join("manifest.jsonl");
        let mut out = fs::File::create(&manifest_path)
            .map_err(Error::io(manifest_path.display().to_string()))?;
        for rec in &self.records {
            let rel = format!("images/{}.png", rec.sketch_id);
            rec.image.save_png(&dir.join(&rel))?;
            let line = ManifestLine::Sketch {
                sketch_id: rec.sketch_id.clone(),
                category: rec.category.clone(),
                view: rec.view.clone(),
                image: rel,
                points: rec
                    .points
                    .iter()
                    .map(|(id, p)| (id.clone(), p.x, p.y))
                    .collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).expect("plain data"))
                .map_err(Error::io(manifest_path.display().to_string()))?;
        }
        for set in &self.corr_sets {
            let line = ManifestLine::Corr {
                a: set.sketch_a.clone(),
                b: set.sketch_b.clone(),
                pairs: set.pairs.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&line).expect("plain data"))
                .map_err(Error::io(manifest_path.display().to_string()))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ManifestLine {
    #[serde(rename = "sketch")]
    Sketch {
        sketch_id: String,
        category: String,
        view: String,
        image: String,
        points: Vec<(String, f64, f64)>,
    },
    #[serde(rename = "corr")]
    Corr {
        a: String,
        b: String,
        pairs: Vec<(String, String)>,
    },
}

/// Shuffles all trainable samples and chunks them into groups of
/// `group_size` (last group may be smaller).
pub fn partition_groups(
    corpus: &Corpus,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SampleGroup> {
    assert!(group_size > 0, "group size must be positive");
    let mut samples = corpus.trainable_samples();
    samples.shuffle(rng);
    samples
        .chunks(group_size)
        .enumerate()
        .map(|(i, chunk)| SampleGroup {
            group_id: i as u64,
            members: chunk.to_vec(),
        })
        .collect()
}

/// Per-cell anchor counts ([category][view]) realizing the spec's margins.
/// Cells get an even share when the margins allow it; any remainder is
/// assigned greedily in (category, view) order while keeping both margins
/// exact.
fn cell_counts(spec: &BatchSpec, n_views: usize, n_cats: usize) -> Result<Vec<Vec<usize>>> {
    if spec.per_view_quota * n_views != spec.batch_size
        || spec.per_category_quota * n_cats != spec.batch_size
    {
        return Err(Error::Config(format!(
            "quotas ({} per view x {n_views}, {} per category x {n_cats}) do not sum to batch size {}",
            spec.per_view_quota, spec.per_category_quota, spec.batch_size
        )));
    }
    let base = spec.batch_size / (n_views * n_cats);
    let mut cells = vec![vec![base; n_views]; n_cats];
    let mut row_left: Vec<usize> = vec![spec.per_category_quota - base * n_views; n_cats];
    let mut col_left: Vec<usize> = vec![spec.per_view_quota - base * n_cats; n_views];
    for ci in 0..n_cats {
        for vi in 0..n_views {
            let t = row_left[ci].min(col_left[vi]);
            cells[ci][vi] += t;
            row_left[ci] -= t;
            col_left[vi] -= t;
        }
    }
    Ok(cells)
}

/// Draws `spec.batch_size` positive pairs with anchors balanced over every
/// (view, category) cell. Anchors are sampled without replacement; each
/// positive is a uniform other member of the anchor's correspondence class.
pub fn build_balanced_minibatch(
    corpus: &Corpus,
    spec: &BatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(SampleRef, SampleRef)>> {
    let all = corpus.trainable_samples();
    build_balanced_minibatch_scoped(corpus, &all, spec, rng)
}

/// [`build_balanced_minibatch`] restricted to `members`: anchors and
/// positives both come from the member set.
pub fn build_balanced_minibatch_scoped(
    corpus: &Corpus,
    members: &[SampleRef],
    spec: &BatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(SampleRef, SampleRef)>> {
    let views = corpus.views();
    let cats = corpus.categories();
    let cells = cell_counts(spec, views.len(), cats.len())?;

    let member_set: BTreeSet<SampleRef> = members.iter().copied().collect();
    // classmates available inside the member scope, per class
    let mut in_scope_class: BTreeMap<u32, Vec<SampleRef>> = BTreeMap::new();
    for &m in members {
        in_scope_class.entry(corpus.class_of(m)).or_default().push(m);
    }

    let mut eligible: BTreeMap<(usize, usize), Vec<SampleRef>> = BTreeMap::new();
    for &m in &member_set {
        let class = corpus.class_of(m);
        if in_scope_class[&class].len() < 2 {
            continue;
        }
        let rec = corpus.record(m.sketch);
        let ci = cats.iter().position(|c| *c == rec.category).expect("own label");
        let vi = views.iter().position(|v| *v == rec.view).expect("own label");
        eligible.entry((ci, vi)).or_default().push(m);
    }

    let mut deficient = Vec::new();
    for (ci, cat) in cats.iter().enumerate() {
        for (vi, view) in views.iter().enumerate() {
            let need = cells[ci][vi];
            let have = eligible.get(&(ci, vi)).map_or(0, Vec::len);
            if have < need {
                deficient.push(format!("{cat}/{view} ({have} of {need})"));
            }
        }
    }
    if !deficient.is_empty() {
        return Err(Error::Scheduling(format!(
            "deficient cells: {}",
            deficient.join(", ")
        )));
    }

    let mut out = Vec::with_capacity(spec.batch_size);
    for ci in 0..cats.len() {
        for vi in 0..views.len() {
            let need = cells[ci][vi];
            if need == 0 {
                continue;
            }
            let pool = eligible.get_mut(&(ci, vi)).expect("checked above");
            let (chosen, _) = pool.partial_shuffle(rng, need);
            for &anchor in chosen.iter() {
                let mates = &in_scope_class[&corpus.class_of(anchor)];
                let others: Vec<SampleRef> =
                    mates.iter().copied().filter(|&m| m != anchor).collect();
                let positive = others[rng.random_range(0..others.len())];
                out.push((anchor, positive));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    fn blank(side: usize) -> SketchImage {
        SketchImage::blank(side).unwrap()
    }

    fn rec(id: &str, cat: &str, view: &str, pts: &[(&str, f64, f64)]) -> SketchRecord {
        SketchRecord {
            sketch_id: id.into(),
            category: cat.into(),
            view: view.into(),
            image: blank(64),
            points: pts
                .iter()
                .map(|&(p, x, y)| (p.to_string(), Point2D::new(x, y)))
                .collect(),
        }
    }

    fn corr(a: &str, b: &str, pairs: &[(&str, &str)]) -> CorrespondenceSet {
        CorrespondenceSet {
            sketch_a: a.into(),
            sketch_b: b.into(),
            pairs: pairs
                .iter()
                .map(|&(x, y)| (x.to_string(), y.to_string()))
                .collect(),
        }
    }

    #[test]
    fn classes_close_over_pairwise_sets() {
        let corpus = Corpus::from_parts(
            vec![
                rec("a", "mug", "front", &[("p0", 1.0, 1.0), ("p1", 2.0, 2.0)]),
                rec("b", "mug", "right", &[("q0", 1.0, 1.0)]),
                rec("c", "mug", "front_right", &[("r0", 1.0, 1.0)]),
            ],
            vec![corr("a", "b", &[("p0", "q0")]), corr("b", "c", &[("q0", "r0")])],
        )
        .unwrap();
        let a0 = SampleRef { sketch: 0, point: 0 };
        let c0 = SampleRef { sketch: 2, point: 0 };
        assert_eq!(corpus.class_of(a0), corpus.class_of(c0));
        assert_eq!(corpus.class_members(corpus.class_of(a0)).len(), 3);
        // p1 was never mentioned: singleton class
        let a1 = SampleRef { sketch: 0, point: 1 };
        assert_eq!(corpus.class_members(corpus.class_of(a1)).len(), 1);
        assert_eq!(corpus.trainable_samples().len(), 3);
    }

    #[test]
    fn shared_points_follow_classes() {
        let corpus = Corpus::from_parts(
            vec![
                rec("a", "mug", "front", &[("p0", 1.0, 1.0), ("p1", 2.0, 2.0)]),
                rec("b", "mug", "right", &[("q1", 5.0, 5.0), ("q0", 1.0, 1.0)]),
            ],
            vec![corr("a", "b", &[("p0", "q0"), ("p1", "q1")])],
        )
        .unwrap();
        assert_eq!(corpus.shared_points(0, 1), vec![(0, 1), (1, 0)]);
        assert_eq!(corpus.shared_points(1, 0), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn dangling_references_are_rejected() {
        let err = Corpus::from_parts(
            vec![rec("a", "mug", "front", &[("p0", 1.0, 1.0)])],
            vec![corr("a", "ghost", &[("p0", "x")])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");

        let err = Corpus::from_parts(
            vec![
                rec("a", "mug", "front", &[("p0", 1.0, 1.0)]),
                rec("b", "mug", "right", &[("q0", 1.0, 1.0)]),
            ],
            vec![corr("a", "b", &[("nope", "q0")])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn repeated_side_in_one_set_is_rejected() {
        let err = Corpus::from_parts(
            vec![
                rec("a", "mug", "front", &[("p0", 1.0, 1.0)]),
                rec("b", "mug", "right", &[("q0", 1.0, 1.0), ("q1", 2.0, 2.0)]),
            ],
            vec![corr("a", "b", &[("p0", "q0"), ("p0", "q1")])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("repeated"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(Corpus::from_parts(
            vec![
                rec("a", "mug", "front", &[]),
                rec("a", "mug", "right", &[]),
            ],
            vec![],
        )
        .is_err());
        assert!(Corpus::from_parts(
            vec![rec("a", "mug", "front", &[("p", 0.0, 0.0), ("p", 1.0, 1.0)])],
            vec![],
        )
        .is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let mut img = blank(64);
        for i in 10..30 {
            img.set(i, 20, 0.0);
        }
        let mut r0 = rec("m_00_front", "mug", "front", &[("p00", 10.0, 20.0)]);
        r0.image = img;
        let corpus = Corpus::from_parts(
            vec![r0, rec("m_00_right", "mug", "right", &[("p00", 12.5, 20.25)])],
            vec![corr("m_00_front", "m_00_right", &[("p00", "p00")])],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        let again = Corpus::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(corpus, again);
    }

    #[test]
    fn model_id_strips_view_suffix() {
        let r = rec("mug_03_front_right", "mug", "front_right", &[]);
        assert_eq!(r.model_id(), "mug_03");
        let r = rec("oddball", "mug", "front", &[]);
        assert_eq!(r.model_id(), "oddball");
    }

    /// 2 categories x 2 views, every sketch has 6 points corresponding
    /// across the views of its shape.
    fn batch_corpus() -> Corpus {
        let mut records = Vec::new();
        let mut corrs = Vec::new();
        for cat in ["mug", "lamp"] {
            for shape in 0..2 {
                let pts: Vec<(String, Point2D)> = (0..6)
                    .map(|i| (format!("p{i:02}"), Point2D::new(8.0 + i as f64, 8.0)))
                    .collect();
                for view in ["front", "right"] {
                    records.push(SketchRecord {
                        sketch_id: format!("{cat}_{shape}_{view}"),
                        category: cat.into(),
                        view: view.into(),
                        image: blank(64),
                        points: pts.clone(),
                    });
                }
                corrs.push(CorrespondenceSet {
                    sketch_a: format!("{cat}_{shape}_front"),
                    sketch_b: format!("{cat}_{shape}_right"),
                    pairs: (0..6).map(|i| (format!("p{i:02}"), format!("p{i:02}"))).collect(),
                });
            }
        }
        Corpus::from_parts(records, corrs).unwrap()
    }

    #[test]
    fn balanced_batch_fills_every_cell() {
        let corpus = batch_corpus();
        let spec = BatchSpec::uniform(8, 2, 2).unwrap();
        let mut rng = seeding::stream(1, "batch", &[]);
        let batch = build_balanced_minibatch(&corpus, &spec, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        let mut per_view = BTreeMap::new();
        let mut per_cat = BTreeMap::new();
        let mut anchors = BTreeSet::new();
        for &(a, p) in &batch {
            assert!(anchors.insert(a), "anchor reused in one step");
            assert_ne!(a, p);
            assert_eq!(corpus.class_of(a), corpus.class_of(p));
            let rec = corpus.record(a.sketch);
            *per_view.entry(rec.view.clone()).or_insert(0) += 1;
            *per_cat.entry(rec.category.clone()).or_insert(0) += 1;
        }
        assert!(per_view.values().all(|&n| n == 4));
        assert!(per_cat.values().all(|&n| n == 4));
    }

    #[test]
    fn uneven_margins_still_met_exactly() {
        // 2 views x 2 cats, batch 6: cells cannot be even but margins can
        let corpus = batch_corpus();
        let spec = BatchSpec {
            batch_size: 6,
            per_view_quota: 3,
            per_category_quota: 3,
        };
        let mut rng = seeding::stream(2, "batch", &[]);
        let batch = build_balanced_minibatch(&corpus, &spec, &mut rng).unwrap();
        let mut per_view = BTreeMap::new();
        let mut per_cat = BTreeMap::new();
        for &(a, _) in &batch {
            let rec = corpus.record(a.sketch);
            *per_view.entry(rec.view.clone()).or_insert(0) += 1;
            *per_cat.entry(rec.category.clone()).or_insert(0) += 1;
        }
        assert!(per_view.values().all(|&n| n == 3), "{per_view:?}");
        assert!(per_cat.values().all(|&n| n == 3), "{per_cat:?}");
    }

    #[test]
    fn deficient_cell_is_named() {
        let corpus = batch_corpus();
        let spec = BatchSpec::uniform(48, 2, 2).unwrap(); // 12 per cell, only 12 exist
        let mut rng = seeding::stream(3, "batch", &[]);
        assert!(build_balanced_minibatch(&corpus, &spec, &mut rng).is_ok());
        let spec = BatchSpec::uniform(52, 2, 2).unwrap(); // 13 per cell
        let err = build_balanced_minibatch(&corpus, &spec, &mut rng).unwrap_err();
        assert!(err.to_string().contains("mug/front"), "{err}");
    }

    #[test]
    fn scoped_batch_stays_inside_members() {
        let corpus = batch_corpus();
        // restrict to shape 0 only
        let members: Vec<SampleRef> = corpus
            .trainable_samples()
            .into_iter()
            .filter(|r| corpus.record(r.sketch).sketch_id.contains("_0_"))
            .collect();
        let spec = BatchSpec::uniform(4, 2, 2).unwrap();
        let mut rng = seeding::stream(4, "batch", &[]);
        let batch =
            build_balanced_minibatch_scoped(&corpus, &members, &spec, &mut rng).unwrap();
        let allowed: BTreeSet<SampleRef> = members.into_iter().collect();
        for &(a, p) in &batch {
            assert!(allowed.contains(&a) && allowed.contains(&p));
        }
    }

    #[test]
    fn anchor_selection_is_uniform_within_cells() {
        let corpus = batch_corpus();
        // quota 1 per cell; each cell has 12 eligible anchors
        let spec = BatchSpec::uniform(4, 2, 2).unwrap();
        let mut rng = seeding::stream(5, "batch", &[]);
        let mut counts: BTreeMap<SampleRef, u32> = BTreeMap::new();
        let trials = 1000;
        for _ in 0..trials {
            for (a, _) in build_balanced_minibatch(&corpus, &spec, &mut rng).unwrap() {
                *counts.entry(a).or_insert(0) += 1;
            }
        }
        // each anchor: Binomial(trials, 1/12) per its cell
        let p = 1.0 / 12.0;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (_, &n) in &counts {
            assert!(
                (n as f64 - mean).abs() < 3.0 * sigma,
                "count {n} outside 3 sigma of {mean}"
            );
        }
    }

    #[test]
    fn partition_covers_all_samples_once() {
        let corpus = batch_corpus();
        let mut rng = seeding::stream(6, "partition", &[]);
        let groups = partition_groups(&corpus, 10, &mut rng);
        let mut seen = BTreeSet::new();
        for g in &groups {
            for &m in &g.members {
                assert!(seen.insert(m));
            }
        }
        assert_eq!(seen.len(), corpus.trainable_samples().len());
        assert!(groups[..groups.len() - 1].iter().all(|g| g.members.len() == 10));
    }

    #[test]
    fn subset_drops_records_and_their_pairs() {
        let corpus = batch_corpus();
        let sub = corpus.subset(|r| r.category == "mug").unwrap();
        assert_eq!(sub.records().len(), 4);
        assert!(sub.corr_sets().iter().all(|s| s.sketch_a.starts_with("mug")));
    }
}
