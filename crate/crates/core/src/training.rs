//! Metric-learning objectives, online semi-hard mining, and the training
//! loop that ties descriptors, batching, and the optimizer together.

use crate::canvas::{augment_stack, extract_zoom_stack, AugmentConfig, ZoomStack};
use crate::dataset::{
    build_balanced_minibatch_scoped, partition_groups, BatchSpec, Corpus, SampleGroup, SampleRef,
};
use crate::embedder::{aggregate_views_argmax, Descriptor, EmbedderModel, EMBED_CHUNK};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::seeding;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Which objective drives the descriptor space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared-distance triplet hinge with online semi-hard mining.
    Triplet,
    /// Pairwise contrastive baseline without mining.
    Contrastive,
}

/// Everything the training loop needs besides the model and the corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Hinge margin, in squared descriptor distance. Must be positive.
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Positive pairs per minibatch. Must split evenly over the corpus
    /// views and categories.
    pub batch_size: usize,
    /// Negatives probed per positive pair before the pair is dropped.
    pub negatives_per_probe: usize,
    /// Samples per scheduling group; groups are re-partitioned per epoch.
    pub group_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Save the model every this many steps (0 disables periodic saves).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Triplet,
            margin: 1.0,
            lr: 1e-5,
            epochs: 20,
            batch_size: 64,
            negatives_per_probe: 5,
            group_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            augment: AugmentConfig::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!(
                "margin must be positive and finite, got {}",
                self.margin
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.negatives_per_probe == 0 {
            return Err(Error::Config("need at least one negative probe".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config(
                "groups need at least two samples to pair up".into(),
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config(
                "checkpoint cadence set but no checkpoint directory".into(),
            ));
        }
        self.augment.validate()
    }
}

/// One mined training example: sample references plus the descriptors they
/// had (clean, current weights) at mining time.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub anchor: SampleRef,
    pub positive: SampleRef,
    pub negative: SampleRef,
    pub anchor_desc: Descriptor,
    pub positive_desc: Descriptor,
    pub negative_desc: Descriptor,
}

/// Hinge on squared distances: max(D2(a,c) - D2(a,n) + margin, 0).
pub fn triplet_loss(
    anchor: &Descriptor,
    positive: &Descriptor,
    negative: &Descriptor,
    margin: f64,
) -> Result<f64> {
    if anchor.dim() != positive.dim() || anchor.dim() != negative.dim() {
        return Err(Error::shape(
            format!("three descriptors of dim {}", anchor.dim()),
            format!("dims {}/{}/{}", anchor.dim(), positive.dim(), negative.dim()),
        ));
    }
    if !(margin > 0.0) {
        return Err(Error::domain(format!(
            "triplet margin must be positive, got {margin}"
        )));
    }
    Ok((anchor.dist_sq(positive) - anchor.dist_sq(negative) + margin).max(0.0))
}

/// The mining predicate: the negative sits farther than the positive but
/// still inside the margin. Both inequalities are strict, so boundary
/// negatives (exactly as far, or exactly margin beyond) are rejected.
pub fn is_semi_hard(
    anchor: &Descriptor,
    positive: &Descriptor,
    negative: &Descriptor,
    margin: f64,
) -> bool {
    let d_pos = anchor.dist_sq(positive);
    let d_neg = anchor.dist_sq(negative);
    d_pos < d_neg && d_neg < d_pos + margin
}

/// Pairwise baseline: same-class pairs pay D2, different-class pairs pay
/// max(margin - D, 0)^2 on the unsquared distance.
pub fn contrastive_loss(a: &Descriptor, b: &Descriptor, same_class: bool, margin: f64) -> f64 {
    if same_class {
        a.dist_sq(b)
    } else {
        (margin - a.dist(b)).max(0.0).powi(2)
    }
}

/// d(loss)/d(descriptor) for an active triplet, or None when the hinge is
/// off (loss has no slope there, including exactly at the boundary).
fn triplet_grads(
    anchor: &Descriptor,
    positive: &Descriptor,
    negative: &Descriptor,
    margin: f64,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let active = anchor.dist_sq(positive) - anchor.dist_sq(negative) + margin > 0.0;
    if !active {
        return None;
    }
    let d = anchor.dim();
    let mut ga = vec![0.0; d];
    let mut gc = vec![0.0; d];
    let mut gn = vec![0.0; d];
    for j in 0..d {
        let (a, c, n) = (
            anchor.values()[j],
            positive.values()[j],
            negative.values()[j],
        );
        ga[j] = 2.0 * (n - c);
        gc[j] = -2.0 * (a - c);
        gn[j] = 2.0 * (a - n);
    }
    Some((ga, gc, gn))
}

/// d(loss)/d(descriptor) for one contrastive pair. The repulsive branch has
/// a kink at distance zero; the slope there is taken as zero.
fn contrastive_grads(
    a: &Descriptor,
    b: &Descriptor,
    same_class: bool,
    margin: f64,
) -> (Vec<f64>, Vec<f64>) {
    let d = a.dim();
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    if same_class {
        for j in 0..d {
            let diff = a.values()[j] - b.values()[j];
            ga[j] = 2.0 * diff;
            gb[j] = -2.0 * diff;
        }
    } else {
        let dist = a.dist(b);
        if dist < margin && dist > 0.0 {
            let scale = -2.0 * (margin - dist) / dist;
            for j in 0..d {
                let diff = a.values()[j] - b.values()[j];
                ga[j] = scale * diff;
                gb[j] = -scale * diff;
            }
        }
    }
    (ga, gb)
}

/// Mining over a precomputed descriptor pool. `pairs` index into the pool;
/// `classes[i]` is the correspondence class of pool entry `i`. For each
/// pair, up to `probes` negatives are drawn uniformly from the entries in
/// a different class; the first one satisfying the semi-hard predicate is
/// emitted as `(anchor, positive, negative)` indices. Pairs that exhaust
/// their probes are dropped, not retried.
pub fn mine_semi_hard_pool(
    classes: &[u32],
    descriptors: &[Descriptor],
    pairs: &[(usize, usize)],
    probes: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, usize)> {
    assert_eq!(classes.len(), descriptors.len(), "pool tables out of sync");
    let mut out = Vec::new();
    for &(a, c) in pairs {
        let others: Vec<usize> = (0..classes.len())
            .filter(|&i| classes[i] != classes[a])
            .collect();
        if others.is_empty() {
            continue;
        }
        for _ in 0..probes {
            let n = others[rng.random_range(0..others.len())];
            if is_semi_hard(&descriptors[a], &descriptors[c], &descriptors[n], margin) {
                out.push((a, c, n));
                break;
            }
        }
    }
    out
}

/// Embeds the group with the model's current weights (no augmentation),
/// draws a balanced batch of positive pairs inside the group, and probes
/// random in-group negatives for each pair. Emits at most `cfg.batch_size`
/// triplets; pairs with no semi-hard negative among the probes are skipped
/// for this step.
pub fn mine_semi_hard(
    corpus: &Corpus,
    group: &SampleGroup,
    model: &EmbedderModel,
    spec: &BatchSpec,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Triplet>> {
    if group.members.is_empty() {
        return Err(Error::Scheduling(format!(
            "group {} has no members to mine",
            group.group_id
        )));
    }
    let stacks = clean_stacks(corpus, model, &group.members)?;
    let descriptors = model.embed_batch(&stacks)?;
    let classes: Vec<u32> = group.members.iter().map(|&m| corpus.class_of(m)).collect();
    let index: BTreeMap<SampleRef, usize> = group
        .members
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i))
        .collect();
    let pairs = build_balanced_minibatch_scoped(corpus, &group.members, spec, rng)?;
    let pair_idx: Vec<(usize, usize)> = pairs.iter().map(|&(a, c)| (index[&a], index[&c])).collect();
    let triples = mine_semi_hard_pool(
        &classes,
        &descriptors,
        &pair_idx,
        cfg.negatives_per_probe,
        cfg.margin,
        rng,
    );
    Ok(triples
        .into_iter()
        .map(|(a, c, n)| {
            debug_assert!(is_semi_hard(
                &descriptors[a],
                &descriptors[c],
                &descriptors[n],
                cfg.margin
            ));
            Triplet {
                anchor: group.members[a],
                positive: group.members[c],
                negative: group.members[n],
                anchor_desc: descriptors[a].clone(),
                positive_desc: descriptors[c].clone(),
                negative_desc: descriptors[n].clone(),
            }
        })
        .collect())
}

/// One history row per optimizer step, feasible or not.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mined triplets over requested batch size; 1.0 for the contrastive
    /// arm, 0.0 for skipped steps.
    pub yield_fraction: f64,
}

/// Full per-step record of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,mean_loss,yield\n");
        for row in &self.steps {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.epoch, row.mean_loss, row.yield_fraction
            ));
        }
        out
    }

    /// Mean of the per-step mean losses inside one epoch, counting only
    /// steps that actually updated (yield > 0).
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let rows: Vec<&StepStats> = self
            .steps
            .iter()
            .filter(|r| r.epoch == epoch && r.yield_fraction > 0.0)
            .collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|r| r.mean_loss).sum::<f64>() / rows.len() as f64)
    }
}

enum StepOutcome {
    /// Infeasible schedule or zero mined triplets; no update.
    Skip,
    /// Forward pass produced non-finite numbers.
    Diverged,
    Update {
        mean_loss: f64,
        yield_fraction: f64,
        grads: Vec<f64>,
    },
}

/// Runs the full optimization schedule in place. Every step appends one
/// history row even when skipped; on divergence the model is rolled back
/// to the last finite state before the error is returned.
pub fn train(
    model: &mut EmbedderModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let n_views = corpus.views().len();
    let n_cats = corpus.categories().len();
    let spec = BatchSpec::uniform(cfg.batch_size, n_views, n_cats)?;
    let mut opt = Adam::with_moments(cfg.lr, cfg.beta1, cfg.beta2, model.net().n_params());
    let mut history = TrainHistory::default();
    let mut step: u64 = 0;
    let mut last_good: Option<u64> = None;
    let mut good_params = model.net().params().to_vec();

    for epoch in 0..cfg.epochs {
        let mut part_rng = seeding::stream(cfg.seed, "partition", &[epoch as u64]);
        let groups = partition_groups(corpus, cfg.group_size, &mut part_rng);
        for group in &groups {
            step += 1;
            let outcome = run_step(model, corpus, &spec, cfg, epoch, group)?;
            match outcome {
                StepOutcome::Skip => {
                    history.steps.push(StepStats {
                        step,
                        epoch,
                        mean_loss: 0.0,
                        yield_fraction: 0.0,
                    });
                }
                StepOutcome::Diverged => {
                    model.net_mut().params_mut().copy_from_slice(&good_params);
                    return Err(Error::Diverged { step, last_good });
                }
                StepOutcome::Update {
                    mean_loss,
                    yield_fraction,
                    grads,
                } => {
                    opt.step(model.net_mut().params_mut(), &grads);
                    let finite = mean_loss.is_finite()
                        && model.net().params().iter().all(|p| p.is_finite());
                    if !finite {
                        model.net_mut().params_mut().copy_from_slice(&good_params);
                        return Err(Error::Diverged { step, last_good });
                    }
                    good_params.copy_from_slice(model.net().params());
                    last_good = Some(step);
                    history.steps.push(StepStats {
                        step,
                        epoch,
                        mean_loss,
                        yield_fraction,
                    });
                    if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                        let dir = cfg.checkpoint_dir.as_ref().expect("validated above");
                        model.save(&dir.join(format!("step_{step:06}")))?;
                    }
                }
            }
        }
    }
    Ok(history)
}

fn clean_stacks(
    corpus: &Corpus,
    model: &EmbedderModel,
    members: &[SampleRef],
) -> Result<Vec<ZoomStack>> {
    members
        .iter()
        .map(|&m| {
            let rec = corpus.record(m.sketch);
            extract_zoom_stack(
                &rec.image,
                corpus.point_pos(m),
                model.zoom_fractions(),
                model.crop_size(),
            )
        })
        .collect()
}

/// The descriptor-level work orders of one step: which samples to embed
/// and, per loss term, indices into that sample list.
struct StepPlan {
    members: Vec<SampleRef>,
    terms: Vec<LossTerm>,
    yield_fraction: f64,
}

enum LossTerm {
    Triplet { a: usize, c: usize, n: usize },
    Pair { a: usize, b: usize, same: bool },
}

fn plan_step(
    corpus: &Corpus,
    group: &SampleGroup,
    model: &EmbedderModel,
    spec: &BatchSpec,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Option<StepPlan>> {
    let mut mine_rng = seeding::stream(cfg.seed, "mine", &[epoch as u64, group.group_id]);
    match cfg.loss {
        LossKind::Triplet => {
            let triplets = match mine_semi_hard(corpus, group, model, spec, cfg, &mut mine_rng) {
                Ok(t) => t,
                Err(Error::Scheduling(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            if triplets.is_empty() {
                return Ok(None);
            }
            let yield_fraction = triplets.len() as f64 / cfg.batch_size as f64;
            let mut members: Vec<SampleRef> = triplets
                .iter()
                .flat_map(|t| [t.anchor, t.positive, t.negative])
                .collect();
            members.sort();
            members.dedup();
            let index: BTreeMap<SampleRef, usize> =
                members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
            let terms = triplets
                .iter()
                .map(|t| LossTerm::Triplet {
                    a: index[&t.anchor],
                    c: index[&t.positive],
                    n: index[&t.negative],
                })
                .collect();
            Ok(Some(StepPlan {
                members,
                terms,
                yield_fraction,
            }))
        }
        LossKind::Contrastive => {
            let pairs =
                match build_balanced_minibatch_scoped(corpus, &group.members, spec, &mut mine_rng)
                {
                    Ok(p) => p,
                    Err(Error::Scheduling(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
            let mut cneg_rng =
                seeding::stream(cfg.seed, "cneg", &[epoch as u64, group.group_id]);
            let mut edges: Vec<(SampleRef, SampleRef, bool)> = Vec::new();
            for &(a, c) in &pairs {
                edges.push((a, c, true));
                let class_a = corpus.class_of(a);
                let others: Vec<SampleRef> = group
                    .members
                    .iter()
                    .copied()
                    .filter(|&m| corpus.class_of(m) != class_a)
                    .collect();
                if !others.is_empty() {
                    let n = others[cneg_rng.random_range(0..others.len())];
                    edges.push((a, n, false));
                }
            }
            if edges.is_empty() {
                return Ok(None);
            }
            let mut members: Vec<SampleRef> =
                edges.iter().flat_map(|&(a, b, _)| [a, b]).collect();
            members.sort();
            members.dedup();
            let index: BTreeMap<SampleRef, usize> =
                members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
            let terms = edges
                .iter()
                .map(|&(a, b, same)| LossTerm::Pair {
                    a: index[&a],
                    b: index[&b],
                    same,
                })
                .collect();
            Ok(Some(StepPlan {
                members,
                terms,
                yield_fraction: 1.0,
            }))
        }
    }
}

fn run_step(
    model: &EmbedderModel,
    corpus: &Corpus,
    spec: &BatchSpec,
    cfg: &TrainConfig,
    epoch: usize,
    group: &SampleGroup,
) -> Result<StepOutcome> {
    let plan = match plan_step(corpus, group, model, spec, cfg, epoch)? {
        Some(p) => p,
        None => return Ok(StepOutcome::Skip),
    };

    // One augmentation draw per distinct sample this step; the same
    // augmented stack serves every loss term the sample appears in.
    let mut aug_rng = seeding::stream(cfg.seed, "aug", &[epoch as u64, group.group_id]);
    let mut stacks = Vec::with_capacity(plan.members.len());
    for &m in &plan.members {
        let rec = corpus.record(m.sketch);
        let clean = extract_zoom_stack(
            &rec.image,
            corpus.point_pos(m),
            model.zoom_fractions(),
            model.crop_size(),
        )?;
        stacks.push(augment_stack(&clean, &rec.image, &cfg.augment, &mut aug_rng)?);
    }

    let z = model.n_zooms();
    let d = model.d();
    let chunk_len = EMBED_CHUNK.max(1);

    // First pass: descriptors and per-coordinate view winners. Dropout is
    // live and replayed per chunk, so the second pass sees the exact same
    // network. Traces are dropped right away to keep memory flat.
    let mut descriptors: Vec<Descriptor> = Vec::with_capacity(plan.members.len());
    let mut winners: Vec<Vec<usize>> = Vec::with_capacity(plan.members.len());
    for (ci, chunk) in stacks.chunks(chunk_len).enumerate() {
        let refs: Vec<&ZoomStack> = chunk.iter().collect();
        let x = model.stacks_tensor(&refs)?;
        let mut drop_rng =
            seeding::stream(cfg.seed, "drop", &[epoch as u64, group.group_id, ci as u64]);
        let trace = model.net().forward_trace(&x, Some(&mut drop_rng))?;
        let y = trace.output();
        if y.iter().any(|v| !v.is_finite()) {
            return Ok(StepOutcome::Diverged);
        }
        for si in 0..chunk.len() {
            let views: Result<Vec<Descriptor>> = (0..z)
                .map(|vi| Descriptor::new(y.row(si * z + vi).to_vec()))
                .collect();
            let (desc, arg) = aggregate_views_argmax(&views?)?;
            descriptors.push(desc);
            winners.push(arg);
        }
    }

    // Loss and gradients w.r.t. each aggregated descriptor, mean-reduced
    // over the loss terms.
    let mut loss_sum = 0.0;
    let mut dy = vec![vec![0.0; d]; plan.members.len()];
    for term in &plan.terms {
        match *term {
            LossTerm::Triplet { a, c, n } => {
                loss_sum +=
                    triplet_loss(&descriptors[a], &descriptors[c], &descriptors[n], cfg.margin)?;
                if let Some((ga, gc, gn)) =
                    triplet_grads(&descriptors[a], &descriptors[c], &descriptors[n], cfg.margin)
                {
                    for j in 0..d {
                        dy[a][j] += ga[j];
                        dy[c][j] += gc[j];
                        dy[n][j] += gn[j];
                    }
                }
            }
            LossTerm::Pair { a, b, same } => {
                loss_sum += contrastive_loss(&descriptors[a], &descriptors[b], same, cfg.margin);
                let (ga, gb) = contrastive_grads(&descriptors[a], &descriptors[b], same, cfg.margin);
                for j in 0..d {
                    dy[a][j] += ga[j];
                    dy[b][j] += gb[j];
                }
            }
        }
    }
    let scale = 1.0 / plan.terms.len() as f64;
    let mean_loss = loss_sum * scale;
    if !mean_loss.is_finite() {
        return Ok(StepOutcome::Diverged);
    }

    // Second pass: rebuild each chunk's trace (same dropout stream) and
    // push the descriptor gradients through, routing every coordinate to
    // the view that won the max during aggregation.
    let mut grads = vec![0.0; model.net().n_params()];
    for (ci, chunk) in stacks.chunks(chunk_len).enumerate() {
        let refs: Vec<&ZoomStack> = chunk.iter().collect();
        let x = model.stacks_tensor(&refs)?;
        let mut drop_rng =
            seeding::stream(cfg.seed, "drop", &[epoch as u64, group.group_id, ci as u64]);
        let trace = model.net().forward_trace(&x, Some(&mut drop_rng))?;
        let mut dout = Array2::<f64>::zeros((chunk.len() * z, d));
        for si in 0..chunk.len() {
            let mi = ci * chunk_len + si;
            for j in 0..d {
                let g = dy[mi][j] * scale;
                if g != 0.0 {
                    dout[(si * z + winners[mi][j], j)] += g;
                }
            }
        }
        let chunk_grads = model.net().backward(&trace, &dout)?;
        for (acc, g) in grads.iter_mut().zip(chunk_grads) {
            *acc += g;
        }
    }

    Ok(StepOutcome::Update {
        mean_loss,
        yield_fraction: plan.yield_fraction,
        grads,
    })
}
