//! Part segmentation: descriptors sampled on a sketch are classified by a
//! small one-vs-rest kernel SVM trained on labeled descriptors.

use crate::canvas::{Point2D, SketchImage};
use crate::dataset::blue_noise_sample;
use crate::embedder::{Descriptor, EmbedderModel};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// SVM kernel. The RBF bandwidth defaults to 1 / (d * pooled variance)
/// when left unset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf { gamma: Option<f64> },
    Linear,
}

/// One binary max-margin classifier in dual form: only the support
/// vectors and their signed weights are kept.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BinaryMachine {
    support: Vec<Vec<f64>>,
    /// alpha_i * y_i per support vector.
    weights: Vec<f64>,
    bias: f64,
}

impl BinaryMachine {
    fn decision(&self, x: &[f64], kernel: KernelKind, gamma: f64) -> f64 {
        let mut acc = self.bias;
        for (sv, w) in self.support.iter().zip(&self.weights) {
            acc += w * kernel_eval(kernel, gamma, sv, x);
        }
        acc
    }
}

fn kernel_eval(kernel: KernelKind, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        KernelKind::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        KernelKind::Rbf { .. } => {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * sq).exp()
        }
    }
}

/// A trained part classifier over descriptors.
///
/// Two labels train a single machine (the lexicographically first label is
/// the positive class); more train one machine per label, scored
/// one-vs-rest with ties going to the lowest label index. A single label
/// yields a constant predictor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmenterModel {
    kernel: KernelKind,
    /// Resolved RBF bandwidth (unused but stored for linear kernels).
    gamma: f64,
    c: f64,
    labels: Vec<String>,
    machines: Vec<BinaryMachine>,
}

impl SegmenterModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Predicts the part label for one descriptor.
    pub fn predict(&self, descriptor: &Descriptor) -> Result<&str> {
        let x = descriptor.values();
        if self.labels.len() == 1 {
            return Ok(&self.labels[0]);
        }
        if let Some(m) = self.machines.first() {
            if !m.support.is_empty() && m.support[0].len() != x.len() {
                return Err(Error::shape(
                    format!("descriptor dim {}", m.support[0].len()),
                    format!("{}", x.len()),
                ));
            }
        }
        if self.labels.len() == 2 {
            let d = self.machines[0].decision(x, self.kernel, self.gamma);
            // The tie at exactly zero goes to the positive class.
            return Ok(if d >= 0.0 { &self.labels[0] } else { &self.labels[1] });
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, m) in self.machines.iter().enumerate() {
            let d = m.decision(x, self.kernel, self.gamma);
            if d > best_score {
                best_score = d;
                best = i;
            }
        }
        Ok(&self.labels[best])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("segmenter serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("segmenter model", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }
}

/// Trains the part classifier on labeled descriptors with a C-SVM
/// (sequential minimal optimization, deterministic pair selection).
pub fn train_segmenter(
    samples: &[(Descriptor, String)],
    c: f64,
    kernel: KernelKind,
) -> Result<SegmenterModel> {
    if samples.is_empty() {
        return Err(Error::domain("cannot train a segmenter on no samples"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Config(format!("penalty must be positive, got {c}")));
    }
    let dim = samples[0].0.dim();
    for (d, _) in samples {
        if d.dim() != dim {
            return Err(Error::shape(format!("dim {dim}"), format!("dim {}", d.dim())));
        }
    }
    let mut labels: Vec<String> = samples.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();

    let xs: Vec<Vec<f64>> = samples.iter().map(|(d, _)| d.values().to_vec()).collect();
    let gamma = resolve_gamma(kernel, &xs);

    if labels.len() == 1 {
        return Ok(SegmenterModel {
            kernel,
            gamma,
            c,
            labels,
            machines: Vec::new(),
        });
    }

    let machine_targets: Vec<Vec<f64>> = if labels.len() == 2 {
        // One machine; the first label is the positive class.
        vec![samples
            .iter()
            .map(|(_, l)| if *l == labels[0] { 1.0 } else { -1.0 })
            .collect()]
    } else {
        labels
            .iter()
            .map(|lab| {
                samples
                    .iter()
                    .map(|(_, l)| if l == lab { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect()
    };

    let machines = machine_targets
        .iter()
        .map(|ys| smo_train(&xs, ys, c, kernel, gamma))
        .collect();

    Ok(SegmenterModel {
        kernel,
        gamma,
        c,
        labels,
        machines,
    })
}

fn resolve_gamma(kernel: KernelKind, xs: &[Vec<f64>]) -> f64 {
    let explicit = match kernel {
        KernelKind::Rbf { gamma } => gamma,
        KernelKind::Linear => None,
    };
    if let Some(g) = explicit {
        return g;
    }
    let n = xs.len() as f64;
    let dim = xs[0].len();
    let mut mean = vec![0.0; dim];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut var = 0.0;
    for x in xs {
        for (m, v) in mean.iter().zip(x) {
            var += (v - m) * (v - m);
        }
    }
    var /= n * dim as f64;
    if var > 0.0 {
        1.0 / (dim as f64 * var)
    } else {
        1.0 / dim as f64
    }
}

/// Simplified SMO over the dual problem. Pair selection is deterministic:
/// sweep i over violators, pick j maximizing |E_i - E_j| (first index on
/// ties), repeat until no alpha moves or the pass cap is hit.
fn smo_train(xs: &[Vec<f64>], ys: &[f64], c: f64, kernel: KernelKind, gamma: f64) -> BinaryMachine {
    let n = xs.len();
    let tol = 1e-6;
    let mut alphas = vec![0.0f64; n];
    let mut bias = 0.0f64;

    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel_eval(kernel, gamma, &xs[i], &xs[j])).collect())
        .collect();

    let decision = |alphas: &[f64], bias: f64, i: usize| -> f64 {
        let mut acc = bias;
        for k in 0..n {
            if alphas[k] != 0.0 {
                acc += alphas[k] * ys[k] * gram[k][i];
            }
        }
        acc
    };

    let max_passes = 200;
    for _ in 0..max_passes {
        let mut changed = 0usize;
        for i in 0..n {
            let e_i = decision(&alphas, bias, i) - ys[i];
            let violates = (ys[i] * e_i < -tol && alphas[i] < c)
                || (ys[i] * e_i > tol && alphas[i] > 0.0);
            if !violates {
                continue;
            }
            // Deterministic second choice: maximize |E_i - E_j|.
            let mut j_best = usize::MAX;
            let mut gap_best = -1.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e_j = decision(&alphas, bias, j) - ys[j];
                let gap = (e_i - e_j).abs();
                if gap > gap_best {
                    gap_best = gap;
                    j_best = j;
                }
            }
            if j_best == usize::MAX {
                continue;
            }
            let j = j_best;
            let e_j = decision(&alphas, bias, j) - ys[j];

            let (alpha_i_old, alpha_j_old) = (alphas[i], alphas[j]);
            let (lo, hi) = if (ys[i] - ys[j]).abs() > f64::EPSILON {
                let d = alpha_j_old - alpha_i_old;
                (d.max(0.0), (c + d).min(c))
            } else {
                let s = alpha_i_old + alpha_j_old;
                ((s - c).max(0.0), s.min(c))
            };
            if (hi - lo).abs() < 1e-12 {
                continue;
            }
            let eta = 2.0 * gram[i][j] - gram[i][i] - gram[j][j];
            if eta >= 0.0 {
                continue;
            }
            let mut alpha_j = alpha_j_old - ys[j] * (e_i - e_j) / eta;
            alpha_j = alpha_j.clamp(lo, hi);
            if (alpha_j - alpha_j_old).abs() < 1e-7 {
                continue;
            }
            let alpha_i = alpha_i_old + ys[i] * ys[j] * (alpha_j_old - alpha_j);
            alphas[i] = alpha_i;
            alphas[j] = alpha_j;

            let b1 = bias
                - e_i
                - ys[i] * (alpha_i - alpha_i_old) * gram[i][i]
                - ys[j] * (alpha_j - alpha_j_old) * gram[i][j];
            let b2 = bias
                - e_j
                - ys[i] * (alpha_i - alpha_i_old) * gram[i][j]
                - ys[j] * (alpha_j - alpha_j_old) * gram[j][j];
            bias = if alpha_i > 0.0 && alpha_i < c {
                b1
            } else if alpha_j > 0.0 && alpha_j < c {
                b2
            } else {
                0.5 * (b1 + b2)
            };
            changed += 1;
        }
        if changed == 0 {
            break;
        }
    }

    let mut support = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        if alphas[i] > 1e-10 {
            support.push(xs[i].clone());
            weights.push(alphas[i] * ys[i]);
        }
    }
    BinaryMachine {
        support,
        weights,
        bias,
    }
}

/// Computes the dual objective of a trained machine against explicit
/// training data; exposed for solver parity checks.
#[cfg(any(test, feature = "test-oracles"))]
pub fn dual_objective(
    xs: &[Vec<f64>],
    ys: &[f64],
    c: f64,
    kernel: KernelKind,
) -> (Vec<f64>, f64) {
    let gamma = resolve_gamma(kernel, xs);
    let m = smo_train(xs, ys, c, kernel, gamma);
    // Recover alphas by re-running the solver state: objective from the
    // support expansion. alpha_i = |w_i| since w_i = alpha_i * y_i.
    let n = xs.len();
    let mut alphas = vec![0.0; n];
    let mut used = vec![false; n];
    for (sv, w) in m.support.iter().zip(&m.weights) {
        for i in 0..n {
            if !used[i] && xs[i] == *sv && (w.signum() == ys[i].signum() || *w == 0.0) {
                alphas[i] = w.abs();
                used[i] = true;
                break;
            }
        }
    }
    let mut obj: f64 = alphas.iter().sum();
    for i in 0..n {
        if alphas[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alphas[j] == 0.0 {
                continue;
            }
            obj -= 0.5
                * alphas[i]
                * alphas[j]
                * ys[i]
                * ys[j]
                * kernel_eval(kernel, gamma, &xs[i], &xs[j]);
        }
    }
    (alphas, obj)
}

/// Samples points on the sketch, embeds them, and labels each one with the
/// segmenter. A blank image yields no points.
pub fn segment(
    image: &SketchImage,
    model: &EmbedderModel,
    segmenter: &SegmenterModel,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Point2D, String)>> {
    let points = blue_noise_sample(image, n_samples, rng)?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(points.len());
    let stacks: Vec<_> = points
        .iter()
        .map(|&p| crate::canvas::extract_zoom_stack(image, p, model.zoom_fractions(), model.crop_size()))
        .collect::<Result<Vec<_>>>()?;
    let descriptors = model.embed_batch(&stacks)?;
    for (p, d) in points.into_iter().zip(&descriptors) {
        out.push((p, segmenter.predict(d)?.to_string()));
    }
    Ok(out)
}
