//! Image side of the visual-semantic embedding.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::archive;
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, max_pool2, param_name, relu, relu_backward, Conv2d,
    Linear, Module, Param, ParamKind,
};
use crate::tensor::{Batch, Matrix};

/// Which convolutional trunk feeds the image projector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    /// Small 4-block encoder trained jointly with the text side.
    Desk,
    /// First two blocks of a pretrained VGG-16, frozen, read from a parameter
    /// archive with entries `conv1_1.weight`, `conv1_1.bias`, … `conv2_2.bias`.
    Vgg16 {
        weights: PathBuf,
        /// Use the desk encoder when the weights cannot be read.
        #[serde(default)]
        fallback_to_desk: bool,
    },
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::Desk
    }
}

pub const DESK_WIDTHS: [usize; 4] = [16, 32, 64, 128];
const VGG_LAYERS: [(&str, usize, usize); 4] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Desk(Vec<Conv2d<f32>>),
    /// Frozen; parameters are stored as buffers so optimizers skip them.
    Vgg16(Vec<Conv2d<f32>>),
}

impl Backbone {
    pub fn build(config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        match config {
            BackboneConfig::Desk => Ok(Self::desk(rng)),
            BackboneConfig::Vgg16 { weights, fallback_to_desk } => match load_vgg(weights, rng) {
                Ok(b) => Ok(b),
                Err(_) if *fallback_to_desk => Ok(Self::desk(rng)),
                Err(e) => Err(Error::config(format!(
                    "VGG-16 backbone weights unavailable at {} ({e}) and no fallback configured",
                    weights.display()
                ))),
            },
        }
    }

    fn desk(rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut c = 3;
        for &w in &DESK_WIDTHS {
            convs.push(Conv2d::new(c, w, 3, (2, 2), rng));
            c = w;
        }
        Backbone::Desk(convs)
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Backbone::Desk(c) | Backbone::Vgg16(c) => c.last().map_or(0, |l| l.out_c),
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, Backbone::Vgg16(_))
    }
}

fn load_vgg(path: &Path, rng: &mut ChaCha8Rng) -> Result<Backbone> {
    let tensors = archive::read(path)?;
    let mut convs = Vec::new();
    for (name, cin, cout) in VGG_LAYERS {
        let mut conv = Conv2d::<f32>::new(cin, cout, 3, (1, 1), rng);
        for (field, p) in [("weight", &mut conv.weight), ("bias", &mut conv.bias)] {
            let key = format!("{name}.{field}");
            let t = tensors
                .iter()
                .find(|t| t.entry.name == key)
                .ok_or_else(|| Error::format("VGG-16 archive", format!("missing {key}")))?;
            if t.entry.shape != p.shape {
                return Err(Error::format(
                    "VGG-16 archive",
                    format!("{key} has shape {:?}, expected {:?}", t.entry.shape, p.shape),
                ));
            }
            p.value.copy_from_slice(&t.values);
            p.kind = ParamKind::Buffer;
        }
        convs.push(conv);
    }
    Ok(Backbone::Vgg16(convs))
}

/// Trunk, global average pool, linear projection, L2 normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    pub backbone: Backbone,
    pub projector: Linear<f32>,
}

pub struct ImageTrace {
    /// Input of every trunk layer plus the final activation.
    acts: Vec<Batch<f32>>,
    pooled: Matrix<f32>,
    projected: Matrix<f32>,
    norms: Vec<f32>,
}

impl ImageEncoder {
    pub fn new(config: &BackboneConfig, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let backbone = Backbone::build(config, rng)?;
        let projector = Linear::new(backbone.feature_dim(), dim, rng);
        Ok(Self { backbone, projector })
    }

    /// Unit-norm embeddings `[N, dim]` for a `[3, N, H, W]` batch.
    pub fn forward(&self, x: &Batch<f32>) -> Result<(Matrix<f32>, ImageTrace)> {
        let mut acts = vec![];
        let feat = match &self.backbone {
            Backbone::Desk(convs) => {
                acts.push(x.clone());
                for conv in convs {
                    let mut y = conv.forward(acts.last().unwrap())?;
                    relu(&mut y.data);
                    acts.push(y);
                }
                acts.last().unwrap().clone()
            }
            Backbone::Vgg16(convs) => {
                let mut y = x.clone();
                for c in 0..3 {
                    let (m, s) = (IMAGENET_MEAN[c], IMAGENET_STD[c]);
                    let row = y.data[c * x.row()..(c + 1) * x.row()].iter_mut();
                    row.for_each(|v| *v = ((*v + 1.0) * 0.5 - m) / s);
                }
                for (i, conv) in convs.iter().enumerate() {
                    y = conv.forward(&y)?;
                    relu(&mut y.data);
                    if i % 2 == 1 {
                        y = max_pool2(&y).0;
                    }
                }
                y
            }
        };
        let pooled = global_avg_pool(&feat);
        let projected = self.projector.forward(&pooled)?;
        let mut out = projected.clone();
        let mut norms = Vec::with_capacity(out.rows);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((
            out,
            ImageTrace {
                acts,
                pooled,
                projected,
                norms,
            },
        ))
    }

    /// Accumulate gradients from `dy` (gradient w.r.t. the normalized output).
    pub fn backward(&mut self, trace: &ImageTrace, dy: &Matrix<f32>) {
        let dproj = normalize_backward(&trace.projected, &trace.norms, dy);
        let dpooled = self.projector.backward(&trace.pooled, &dproj);
        let Backbone::Desk(convs) = &mut self.backbone else {
            return;
        };
        let last = trace.acts.last().unwrap();
        let mut d = global_avg_pool_backward(&dpooled, last.h, last.w);
        for (i, conv) in convs.iter_mut().enumerate().rev() {
            relu_backward(&trace.acts[i + 1].data, &mut d.data);
            d = conv.backward(&trace.acts[i], &d);
        }
    }
}

/// Gradient of `y = x / ‖x‖` per row.
pub fn normalize_backward(x: &Matrix<f32>, norms: &[f32], dy: &Matrix<f32>) -> Matrix<f32> {
    let mut dx = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let n = norms[r];
        let xr = x.row(r);
        let dyr = dy.row(r);
        let dot: f32 = xr.iter().zip(dyr).map(|(a, b)| a * b).sum::<f32>() / n;
        for ((d, &xv), &g) in dx.row_mut(r).iter_mut().zip(xr).zip(dyr) {
            *d = (g - xv / n * dot) / n;
        }
    }
    dx
}

impl Module<f32> for ImageEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<f32>)) {
        let (Backbone::Desk(convs) | Backbone::Vgg16(convs)) = &self.backbone;
        for (i, c) in convs.iter().enumerate() {
            c.visit(&param_name(prefix, &format!("trunk{i}")), f);
        }
        self.projector.visit(&param_name(prefix, "projector"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<f32>)) {
        let (Backbone::Desk(convs) | Backbone::Vgg16(convs)) = &mut self.backbone;
        for (i, c) in convs.iter_mut().enumerate() {
            c.visit_mut(&param_name(prefix, &format!("trunk{i}")), f);
        }
        self.projector.visit_mut(&param_name(prefix, "projector"), f);
    }
}
