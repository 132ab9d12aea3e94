//! Sketch-to-model retrieval: every corpus rendering contributes a bank of
//! descriptors at stroke-constrained random samples; a query sketch is
//! scored against each model's pooled banks by mean nearest-descriptor
//! distance, and the best-scoring per-view bank estimates the viewport.

use crate::canvas::{extract_zoom_stack, SketchImage};
use crate::dataset::{blue_noise_sample, Corpus};
use crate::embedder::{Descriptor, EmbedderModel};
use crate::error::{Error, Result};
use crate::seeding;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Query sample budget per sketch.
pub const QUERY_SAMPLES: usize = 1000;

/// Descriptor banks keyed by (model id, view).
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    banks: BTreeMap<(String, String), Vec<Descriptor>>,
    points_per_model: usize,
    dim: usize,
}

impl RetrievalIndex {
    pub fn n_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn n_descriptors(&self) -> usize {
        self.banks.values().map(Vec::len).sum()
    }

    pub fn points_per_model(&self) -> usize {
        self.points_per_model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = self.banks.keys().map(|(m, _)| m.clone()).collect();
        out.dedup();
        out
    }

    pub fn bank(&self, model_id: &str, view: &str) -> Option<&[Descriptor]> {
        self.banks
            .get(&(model_id.to_string(), view.to_string()))
            .map(Vec::as_slice)
    }
}

/// Embeds `points_per_model` stroke-constrained samples for every corpus
/// rendering. Each record's substream is keyed by its sketch id, so the
/// index is independent of record order.
pub fn build_retrieval_index(
    corpus: &Corpus,
    model: &EmbedderModel,
    points_per_model: usize,
    seed: u64,
) -> Result<RetrievalIndex> {
    if corpus.records().is_empty() {
        return Err(Error::domain("cannot index an empty corpus"));
    }
    if points_per_model == 0 {
        return Err(Error::domain("bank size must be at least 1"));
    }
    let mut banks = BTreeMap::new();
    for rec in corpus.records() {
        let mut rng = seeding::stream(seed, "retrieval-bank", &[seeding::tag(&rec.sketch_id)]);
        let points = blue_noise_sample(&rec.image, points_per_model, &mut rng)?;
        if points.is_empty() {
            return Err(Error::domain(format!(
                "sketch {} has no ink to sample",
                rec.sketch_id
            )));
        }
        let stacks = points
            .iter()
            .map(|&p| extract_zoom_stack(&rec.image, p, model.zoom_fractions(), model.crop_size()))
            .collect::<Result<Vec<_>>>()?;
        let descriptors = model.embed_batch(&stacks)?;
        banks.insert((rec.model_id().to_string(), rec.view.clone()), descriptors);
    }
    Ok(RetrievalIndex {
        banks,
        points_per_model,
        dim: model.d(),
    })
}

/// One candidate's retrieval outcome: pooled score, per-view scores, and
/// the view whose bank explains the query best.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model_id: String,
    /// Mean over query descriptors of the distance to the nearest bank
    /// descriptor, pooled over all of the model's views.
    pub score: f64,
    pub per_view: BTreeMap<String, f64>,
    pub best_view: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Ascending by (score, model id), truncated to the requested length.
    pub ranking: Vec<ModelScore>,
    pub n_query_points: usize,
}

fn mean_min_distance(queries: &[Descriptor], bank: &[Descriptor]) -> f64 {
    let total: f64 = queries
        .iter()
        .map(|q| {
            bank.iter()
                .map(|b| q.dist(b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / queries.len() as f64
}

/// Ranks the indexed models against a query sketch.
pub fn retrieve(
    query_image: &SketchImage,
    model: &EmbedderModel,
    index: &RetrievalIndex,
    top_k: usize,
    seed: u64,
) -> Result<RetrievalResult> {
    if index.banks.is_empty() {
        return Err(Error::domain("retrieval index is empty"));
    }
    if model.d() != index.dim {
        return Err(Error::shape(
            format!("descriptor dim {}", index.dim),
            format!("{}", model.d()),
        ));
    }
    let mut rng = seeding::stream(seed, "retrieval-query", &[]);
    let points = blue_noise_sample(query_image, QUERY_SAMPLES, &mut rng)?;
    if points.is_empty() {
        return Err(Error::domain("query sketch has no ink"));
    }
    let stacks = points
        .iter()
        .map(|&p| extract_zoom_stack(query_image, p, model.zoom_fractions(), model.crop_size()))
        .collect::<Result<Vec<_>>>()?;
    let queries = model.embed_batch(&stacks)?;

    let mut ranking = Vec::new();
    let mut by_model: BTreeMap<&str, Vec<(&str, &[Descriptor])>> = BTreeMap::new();
    for ((model_id, view), bank) in &index.banks {
        by_model
            .entry(model_id.as_str())
            .or_default()
            .push((view.as_str(), bank.as_slice()));
    }
    for (model_id, views) in by_model {
        let union: Vec<Descriptor> = views
            .iter()
            .flat_map(|(_, bank)| bank.iter().cloned())
            .collect();
        let score = mean_min_distance(&queries, &union);
        let mut per_view = BTreeMap::new();
        for (view, bank) in &views {
            per_view.insert(view.to_string(), mean_min_distance(&queries, bank));
        }
        // BTreeMap iteration is ordered, so the first minimum is the
        // lexicographically smallest view on ties.
        let best_view = per_view
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(v, _)| v.clone())
            .expect("at least one view per model");
        ranking.push(ModelScore {
            model_id: model_id.to_string(),
            score,
            per_view,
            best_view,
        });
    }
    ranking.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.model_id.cmp(&b.model_id)));
    ranking.truncate(top_k);
    Ok(RetrievalResult {
        ranking,
        n_query_points: queries.len(),
    })
}
