//! Descriptor extraction: a shared convnet embeds every crop of a zoom
//! stack, and the per-zoom outputs collapse into one descriptor by
//! element-wise maximum.
//!
//! Images store ink as 0 on paper as 1; the network instead consumes
//! inverted intensity (ink mass), so zero padding inside convolutions reads
//! as empty paper. Descriptors are plain Euclidean vectors, deliberately
//! not normalized: the margin of the training loss assumes raw distances.

use crate::canvas::ZoomStack;
use crate::error::{Error, Result};
use crate::nn::{ConvNet, LayerSpec};
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// How many stacks go through the network per forward call when batching.
pub(crate) const EMBED_CHUNK: usize = 8;

const PARAMS_MAGIC: &[u8; 8] = b"ZDESCPRM";
const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("descriptor must be nonempty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("descriptor has non-finite entries"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Euclidean distance; dimensions must already be known equal.
    pub fn dist(&self, other: &Descriptor) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &Descriptor) -> f64 {
        assert_eq!(self.dim(), other.dim(), "descriptor dimension mismatch");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Checked Euclidean distance between descriptors.
pub fn distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim().to_string(), b.dim().to_string()));
    }
    Ok(a.dist(b))
}

/// Element-wise maximum across per-zoom descriptors.
pub fn aggregate_views(views: &[Descriptor]) -> Result<Descriptor> {
    aggregate_views_argmax(views).map(|(d, _)| d)
}

/// As [`aggregate_views`], also reporting which view supplied each output
/// component (first view on ties); training routes gradients with it.
pub fn aggregate_views_argmax(views: &[Descriptor]) -> Result<(Descriptor, Vec<usize>)> {
    let first = views
        .first()
        .ok_or_else(|| Error::domain("aggregation needs at least one view"))?;
    let d = first.dim();
    for v in views {
        if v.dim() != d {
            return Err(Error::shape(d.to_string(), v.dim().to_string()));
        }
    }
    let mut out = first.values.clone();
    let mut arg = vec![0usize; d];
    for (vi, v) in views.iter().enumerate().skip(1) {
        for (j, &val) in v.values.iter().enumerate() {
            if val > out[j] {
                out[j] = val;
                arg[j] = vi;
            }
        }
    }
    Ok((Descriptor { values: out }, arg))
}

fn backbone(backbone_id: &str, d: usize, crop_size: usize) -> Result<(usize, Vec<LayerSpec>)> {
    use LayerSpec as L;
    let conv = |out_channels, kernel, stride, pad| L::Conv {
        out_channels,
        kernel,
        stride,
        pad,
    };
    let pool = |kernel, stride| L::MaxPool { kernel, stride };
    let need = |min: usize| -> Result<()> {
        if crop_size < min {
            Err(Error::Config(format!(
                "backbone {backbone_id} needs crop_size >= {min}, got {crop_size}"
            )))
        } else {
            Ok(())
        }
    };
    match backbone_id {
        // geometry of the classic five-conv reference network
        "conv5-base" => {
            need(67)?;
            Ok((
                3,
                vec![
                    conv(96, 11, 4, 2),
                    L::Relu,
                    pool(3, 2),
                    conv(256, 5, 1, 2),
                    L::Relu,
                    pool(3, 2),
                    conv(384, 3, 1, 1),
                    L::Relu,
                    conv(384, 3, 1, 1),
                    L::Relu,
                    conv(256, 3, 1, 1),
                    L::Relu,
                    pool(3, 2),
                    L::Flatten,
                    L::Linear { outputs: 4096 },
                    L::Relu,
                    L::Dropout { p: 0.5 },
                    L::Linear { outputs: 4096 },
                    L::Relu,
                    L::Linear { outputs: d },
                ],
            ))
        }
        // same depth, desk-scale widths
        "conv5-tiny" => {
            need(24)?;
            Ok((
                1,
                vec![
                    conv(12, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    conv(24, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    conv(32, 3, 1, 1),
                    L::Relu,
                    conv(32, 3, 1, 1),
                    L::Relu,
                    conv(32, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    L::Flatten,
                    L::Linear { outputs: 256 },
                    L::Relu,
                    L::Dropout { p: 0.5 },
                    L::Linear { outputs: 256 },
                    L::Relu,
                    L::Linear { outputs: d },
                ],
            ))
        }
        // smallest member, for fast tests
        "conv5-micro" => {
            need(16)?;
            Ok((
                1,
                vec![
                    conv(4, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    conv(8, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    conv(8, 3, 1, 1),
                    L::Relu,
                    conv(8, 3, 1, 1),
                    L::Relu,
                    conv(8, 3, 1, 1),
                    L::Relu,
                    pool(2, 2),
                    L::Flatten,
                    L::Linear { outputs: 32 },
                    L::Relu,
                    L::Dropout { p: 0.5 },
                    L::Linear { outputs: d },
                ],
            ))
        }
        other => Err(Error::Config(format!(
            "unknown backbone {other:?}; known: conv5-base, conv5-tiny, conv5-micro"
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct EmbedderModel {
    backbone_id: String,
    d: usize,
    crop_size: usize,
    zoom_fractions: Vec<f64>,
    in_channels: usize,
    net: ConvNet,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    backbone_id: String,
    d: usize,
    crop_size: usize,
    zoom_fractions: Vec<f64>,
    ink_convention: String,
    n_params: usize,
}

impl EmbedderModel {
    pub fn new(
        backbone_id: &str,
        d: usize,
        crop_size: usize,
        zoom_fractions: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("descriptor dimension must be positive".into()));
        }
        if zoom_fractions.is_empty() {
            return Err(Error::Config("at least one zoom fraction required".into()));
        }
        let (in_channels, layers) = backbone(backbone_id, d, crop_size)?;
        let mut net = ConvNet::new((in_channels, crop_size, crop_size), &layers, seed)?;
        // damp the head so initial descriptors are compact: squared
        // distances then start well inside the training margin, which keeps
        // early mining yield high
        let head = (0..net.n_layers())
            .rev()
            .find_map(|i| net.layer_param_range(i))
            .expect("backbones end in a linear head");
        for slot in &mut net.params_mut()[head] {
            *slot *= 0.1;
        }
        Ok(Self {
            backbone_id: backbone_id.to_string(),
            d,
            crop_size,
            zoom_fractions: zoom_fractions.to_vec(),
            in_channels,
            net,
        })
    }

    pub fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    pub fn zoom_fractions(&self) -> &[f64] {
        &self.zoom_fractions
    }

    pub fn n_zooms(&self) -> usize {
        self.zoom_fractions.len()
    }

    pub fn net(&self) -> &ConvNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut ConvNet {
        &mut self.net
    }

    fn check_stack(&self, stack: &ZoomStack) -> Result<()> {
        if stack.crops().len() != self.n_zooms() {
            return Err(Error::shape(
                format!("{} crops", self.n_zooms()),
                format!("{} crops", stack.crops().len()),
            ));
        }
        if stack.crop_size() != self.crop_size {
            return Err(Error::shape(
                format!("crop {}", self.crop_size),
                format!("crop {}", stack.crop_size()),
            ));
        }
        Ok(())
    }

    /// Network input for a list of crops: inverted intensity, grayscale
    /// replicated over the backbone's channel count.
    pub fn crops_tensor(&self, crops: &[&Array2<f64>]) -> Array4<f64> {
        let s = self.crop_size;
        let mut x = Array4::zeros((crops.len(), self.in_channels, s, s));
        for (i, crop) in crops.iter().enumerate() {
            for c in 0..self.in_channels {
                for row in 0..s {
                    for col in 0..s {
                        x[(i, c, row, col)] = 1.0 - crop[(row, col)];
                    }
                }
            }
        }
        x
    }

    /// Input tensor for whole stacks, crops flattened in stack order.
    pub fn stacks_tensor(&self, stacks: &[&ZoomStack]) -> Result<Array4<f64>> {
        let mut crops = Vec::with_capacity(stacks.len() * self.n_zooms());
        for stack in stacks {
            self.check_stack(stack)?;
            crops.extend(stack.crops().iter());
        }
        Ok(self.crops_tensor(&crops))
    }

    /// One descriptor per zoom crop, inference mode.
    pub fn embed_views(&self, stack: &ZoomStack) -> Result<Vec<Descriptor>> {
        self.check_stack(stack)?;
        let crops: Vec<&Array2<f64>> = stack.crops().iter().collect();
        let out = self.net.forward(&self.crops_tensor(&crops))?;
        out.rows()
            .into_iter()
            .map(|row| Descriptor::new(row.to_vec()))
            .collect()
    }

    pub fn embed_stack(&self, stack: &ZoomStack) -> Result<Descriptor> {
        let views = self.embed_views(stack)?;
        aggregate_views(&views)
    }

    /// Embeds many stacks with chunked batched forwards; equal to a loop of
    /// [`EmbedderModel::embed_stack`] calls.
    pub fn embed_batch(&self, stacks: &[ZoomStack]) -> Result<Vec<Descriptor>> {
        let z = self.n_zooms();
        let mut out = Vec::with_capacity(stacks.len());
        for chunk in stacks.chunks(EMBED_CHUNK.max(1)) {
            let refs: Vec<&ZoomStack> = chunk.iter().collect();
            let x = self.stacks_tensor(&refs)?;
            let y = self.net.forward(&x)?;
            for si in 0..chunk.len() {
                let views: Vec<Descriptor> = (0..z)
                    .map(|vi| Descriptor::new(y.row(si * z + vi).to_vec()))
                    .collect::<Result<_>>()?;
                out.push(aggregate_views(&views)?);
            }
        }
        Ok(out)
    }

    /// Writes `metadata.json` plus a little-endian `params.bin` blob.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir.display().to_string()))?;
        let meta = Metadata {
            backbone_id: self.backbone_id.clone(),
            d: self.d,
            crop_size: self.crop_size,
            zoom_fractions: self.zoom_fractions.clone(),
            ink_convention: "ink=0 on paper=1; network input is 1 - value".into(),
            n_params: self.net.n_params(),
        };
        let meta_path = dir.join("metadata.json");
        fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).expect("plain data") + "\n",
        )
        .map_err(Error::io(meta_path.display().to_string()))?;

        let mut blob = Vec::with_capacity(16 + self.net.n_params() * 8);
        blob.extend_from_slice(PARAMS_MAGIC);
        blob.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        blob.extend_from_slice(&(self.net.n_params() as u64).to_le_bytes());
        for &p in self.net.params() {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        let params_path = dir.join("params.bin");
        fs::write(&params_path, blob).map_err(Error::io(params_path.display().to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("metadata.json");
        let meta: Metadata = serde_json::from_str(
            &fs::read_to_string(&meta_path).map_err(Error::io(meta_path.display().to_string()))?,
        )
        .map_err(|e| Error::parse(meta_path.display().to_string(), e.to_string()))?;
        let mut model = EmbedderModel::new(
            &meta.backbone_id,
            meta.d,
            meta.crop_size,
            &meta.zoom_fractions,
            0,
        )?;

        let params_path = dir.join("params.bin");
        let blob = fs::read(&params_path).map_err(Error::io(params_path.display().to_string()))?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", params_path.display()));
        if blob.len() < 20 || &blob[..8] != PARAMS_MAGIC {
            return Err(bad("not a parameter blob"));
        }
        let version = u32::from_le_bytes(blob[8..12].try_into().expect("sized"));
        if version != PARAMS_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(blob[12..20].try_into().expect("sized")) as usize;
        if count != model.net.n_params() || count != meta.n_params {
            return Err(bad(&format!(
                "parameter count {count} does not match architecture ({})",
                model.net.n_params()
            )));
        }
        if blob.len() != 20 + count * 8 {
            return Err(bad("truncated parameter blob"));
        }
        for (i, slot) in model.net.params_mut().iter_mut().enumerate() {
            let at = 20 + i * 8;
            *slot = f64::from_le_bytes(blob[at..at + 8].try_into().expect("sized"));
        }
        Ok(model)
    }
}
