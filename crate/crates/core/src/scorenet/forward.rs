use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{Affine, ModelParams};
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Proposal boxes with one descriptor row per box.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub boxes: Vec<BBox>,
    pub features: Array2<f64>,
}

impl RegionSet {
    pub fn new(boxes: Vec<BBox>, features: Array2<f64>) -> Result<Self> {
        let r = RegionSet { boxes, features };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Dimension("region set is empty".into()));
        }
        if self.features.nrows() != self.boxes.len() {
            return Err(Error::Dimension(format!(
                "{} boxes but {} feature rows",
                self.boxes.len(),
                self.features.nrows()
            )));
        }
        if let Some((i, _)) = self
            .features
            .outer_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite(format!("feature row {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Per-region probabilities of every object and attribute head.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    /// `objects[k]` is `m x (C+1)`; the last column is background.
    pub objects: Vec<Array2<f64>>,
    /// `attributes[k][a]` is `m x |V_a|`.
    pub attributes: Vec<Vec<Array2<f64>>>,
}

/// Two-stream multiple-instance detection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MidScores {
    /// Region-softmax stream (each column sums to one over regions).
    pub det: Array2<f64>,
    /// Sigmoid stream.
    pub cls: Array2<f64>,
    /// `cls * det`, `m x C`.
    pub per_region: Array2<f64>,
    /// `sigmoid(sum_i per_region[i, c])`, in `(0.5, 1)`; exactly 0.5 only
    /// when the sum underflows f64 resolution.
    pub image_level: Array1<f64>,
}

/// Upstream gradient with respect to every forward output.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrad {
    pub objects: Vec<Array2<f64>>,
    pub attributes: Vec<Vec<Array2<f64>>>,
    pub mid_region: Array2<f64>,
    pub mid_image: Array1<f64>,
}

impl ScoreGrad {
    pub fn zeros_like(scores: &ScoreTensor, mid: &MidScores) -> Self {
        ScoreGrad {
            objects: scores
                .objects
                .iter()
                .map(|s| Array2::zeros(s.raw_dim()))
                .collect(),
            attributes: scores
                .attributes
                .iter()
                .map(|h| h.iter().map(|s| Array2::zeros(s.raw_dim())).collect())
                .collect(),
            mid_region: Array2::zeros(mid.per_region.raw_dim()),
            mid_image: Array1::zeros(mid.image_level.raw_dim()),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ScoreGrad, scale: f64) {
        for (a, b) in self.objects.iter_mut().zip(&other.objects) {
            a.scaled_add(scale, b);
        }
        for (ha, hb) in self.attributes.iter_mut().zip(&other.attributes) {
            for (a, b) in ha.iter_mut().zip(hb) {
                a.scaled_add(scale, b);
            }
        }
        self.mid_region.scaled_add(scale, &other.mid_region);
        self.mid_image.scaled_add(scale, &other.mid_image);
    }

    pub fn is_zero(&self) -> bool {
        self.objects.iter().all(|a| a.iter().all(|&v| v == 0.0))
            && self
                .attributes
                .iter()
                .flatten()
                .all(|a| a.iter().all(|&v| v == 0.0))
            && self.mid_region.iter().all(|&v| v == 0.0)
            && self.mid_image.iter().all(|&v| v == 0.0)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax along `axis` with max subtraction.
pub fn softmax(logits: &Array2<f64>, axis: Axis) -> Array2<f64> {
    let mut out = logits.clone();
    for mut lane in out.lanes_mut(axis) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let sum = lane.sum();
        lane.mapv_inplace(|v| v / sum);
    }
    out
}

/// Softmax backward along `axis`: `p * (g - sum(g * p))` per lane.
fn softmax_backward(p: &Array2<f64>, g: &Array2<f64>, axis: Axis) -> Array2<f64> {
    let mut out = Array2::zeros(p.raw_dim());
    Zip::from(out.lanes_mut(axis))
        .and(p.lanes(axis))
        .and(g.lanes(axis))
        .for_each(|mut o, p, g| {
            let dot = p.dot(&g);
            Zip::from(&mut o).and(&p).and(&g).for_each(|o, &p, &g| {
                *o = p * (g - dot);
            });
        });
    out
}

fn affine_forward(map: &Affine, data: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&map.weight(data).t());
    z += &map.bias(data);
    z
}

/// Accumulates `dW += g^T x`, `db += sum_rows g` into `grad`.
fn affine_backward(map: &Affine, grad: &mut [f64], x: &ArrayView2<f64>, g: &Array2<f64>) {
    let (mut w, mut b) = map.split_mut(grad);
    w += &g.t().dot(x);
    b += &g.sum_axis(Axis(0));
}

fn check_regions(params: &ModelParams, regions: &RegionSet) -> Result<()> {
    regions.validate()?;
    if regions.dim() != params.dims().input_dim {
        return Err(Error::Dimension(format!(
            "features have {} columns, model expects {}",
            regions.dim(),
            params.dims().input_dim
        )));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, regions: &RegionSet) -> Result<(ScoreTensor, MidScores)> {
    check_regions(params, regions)?;
    let x = regions.features.view();
    let data = params.as_slice();
    let layout = params.layout();

    let row = Axis(1);
    let objects = layout
        .object_heads
        .iter()
        .map(|h| softmax(&affine_forward(h, data, &x), row))
        .collect();
    let attributes = layout
        .attribute_heads
        .iter()
        .map(|head| {
            head.iter()
                .map(|a| softmax(&affine_forward(a, data, &x), row))
                .collect()
        })
        .collect();

    let det = softmax(&affine_forward(&layout.mid_det, data, &x), Axis(0));
    let cls = affine_forward(&layout.mid_cls, data, &x).mapv(sigmoid);
    let per_region = &cls * &det;
    let image_level = per_region.sum_axis(Axis(0)).mapv(sigmoid);

    Ok((
        ScoreTensor { objects, attributes },
        MidScores {
            det,
            cls,
            per_region,
            image_level,
        },
    ))
}

fn check_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "{what}: gradient shape {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}

/// Backpropagates `grad` from the outputs of [`forward`] (passed back in as
/// `scores`/`mid`) to every parameter.
pub fn backward(
    params: &ModelParams,
    regions: &RegionSet,
    scores: &ScoreTensor,
    mid: &MidScores,
    grad: &ScoreGrad,
) -> Result<ModelParams> {
    check_regions(params, regions)?;
    if grad.objects.len() != scores.objects.len() || grad.attributes.len() != scores.attributes.len() {
        return Err(Error::Dimension("gradient head count mismatch".into()));
    }
    for (g, s) in grad.objects.iter().zip(&scores.objects) {
        check_shape("object head", g.shape(), s.shape())?;
    }
    for (gh, sh) in grad.attributes.iter().zip(&scores.attributes) {
        if gh.len() != sh.len() {
            return Err(Error::Dimension("attribute category count mismatch".into()));
        }
        for (g, s) in gh.iter().zip(sh) {
            check_shape("attribute head", g.shape(), s.shape())?;
        }
    }
    check_shape("mid per-region", grad.mid_region.shape(), mid.per_region.shape())?;
    check_shape("mid image-level", grad.mid_image.shape(), mid.image_level.shape())?;

    let x = regions.features.view();
    let layout = params.layout();
    let mut out = params.zeros_like();
    let buf = out.as_mut_slice();
    let row = Axis(1);

    for ((head, p), g) in layout.object_heads.iter().zip(&scores.objects).zip(&grad.objects) {
        if g.iter().any(|&v| v != 0.0) {
            affine_backward(head, buf, &x, &softmax_backward(p, g, row));
        }
    }
    for ((head, ps), gs) in layout
        .attribute_heads
        .iter()
        .zip(&scores.attributes)
        .zip(&grad.attributes)
    {
        for ((map, p), g) in head.iter().zip(ps).zip(gs) {
            if g.iter().any(|&v| v != 0.0) {
                affine_backward(map, buf, &x, &softmax_backward(p, g, row));
            }
        }
    }

    // d/d per_region through yhat = sigmoid(column sum).
    let mut g_mid = grad.mid_region.clone();
    let dy = &grad.mid_image * &mid.image_level.mapv(|y| y * (1.0 - y));
    g_mid += &dy;
    if g_mid.iter().any(|&v| v != 0.0) {
        let g_det = &g_mid * &mid.cls;
        let g_cls = &g_mid * &mid.det;
        affine_backward(
            &layout.mid_det,
            buf,
            &x,
            &softmax_backward(&mid.det, &g_det, Axis(0)),
        );
        let g_cls_logits = &g_cls * &mid.cls.mapv(|s| s * (1.0 - s));
        affine_backward(&layout.mid_cls, buf, &x, &g_cls_logits);
    }
    Ok(out)
}

/// Recomputes the forward pass and backpropagates `grad`.
pub fn param_gradients(params: &ModelParams, regions: &RegionSet, grad: &ScoreGrad) -> Result<ModelParams> {
    let (scores, mid) = forward(params, regions)?;
    backward(params, regions, &scores, &mid, grad)
}
