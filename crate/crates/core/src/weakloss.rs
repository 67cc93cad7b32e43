//! Multiple-instance losses over per-region scores.
//!
//! * [`object_mil_loss`]: `-(1/|O|) sum_{c in O} max_i log s_{i,c}`
//! * [`entanglement_loss`]: `-(1/|O|) sum_{c in O, (a,v) in A_c} max_i log(s_{i,c} s_{i,a,v})`
//! * [`mid_loss`]: binary cross-entropy between `ŷ_c` and `[c in O]`
//! * [`total_loss`]: `L_mid + λ1 L_obj + λ2 L_entang + sum_k L_oicr^k`
//!
//! Every probability is clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before a
//! log; the clamp has zero derivative outside that range. All maxima break
//! ties toward the lowest region index.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorenet::{MidScores, ScoreGrad, ScoreTensor};
use crate::textgraph::{AttrPair, LabelSet};

pub const PROB_FLOOR: f64 = 1e-12;

pub fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln()
}

/// Derivative of [`clamped_log`].
pub fn clamped_log_grad(p: f64) -> f64 {
    if p > PROB_FLOOR && p < 1.0 - PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

/// Index of the first maximum.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntangleNorm {
    /// Divide by `|O|`, as the loss is usually written.
    #[default]
    Objects,
    /// Divide by the number of `(c, (a, v))` pairs.
    Pairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMilOutput {
    pub value: f64,
    pub grad: Array2<f64>,
    /// `(class, region)` maximizer per class of `O`.
    pub argmax: Vec<(usize, usize)>,
}

pub fn object_mil_loss(scores: ArrayView2<f64>, objects: &BTreeSet<usize>) -> Result<ObjectMilOutput> {
    let (m, cols) = scores.dim();
    let mut grad = Array2::zeros((m, cols));
    let mut out = ObjectMilOutput {
        value: 0.0,
        grad: Array2::zeros((0, 0)),
        argmax: Vec::with_capacity(objects.len()),
    };
    if let Some(&c) = objects.iter().find(|&&c| c + 1 >= cols) {
        return Err(Error::Label(format!(
            "class {c} out of range for {cols} object columns"
        )));
    }
    if objects.is_empty() || m == 0 {
        out.grad = grad;
        return Ok(out);
    }
    let norm = 1.0 / objects.len() as f64;
    for &c in objects {
        let col = scores.column(c);
        let (i, _) = argmax(col.iter().map(|&s| clamped_log(s))).expect("m > 0");
        out.value -= norm * clamped_log(col[i]);
        grad[[i, c]] -= norm * clamped_log_grad(col[i]);
        out.argmax.push((c, i));
    }
    out.grad = grad;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntanglementOutput {
    pub value: f64,
    pub grad_objects: Array2<f64>,
    pub grad_attributes: Vec<Array2<f64>>,
    /// `(class, pair, region)` maximizer of the product per pair.
    pub argmax: Vec<(usize, AttrPair, usize)>,
}

pub fn entanglement_loss(
    objects: ArrayView2<f64>,
    attributes: &[Array2<f64>],
    labels: &LabelSet,
    norm: EntangleNorm,
) -> Result<EntanglementOutput> {
    let (m, cols) = objects.dim();
    let mut out = EntanglementOutput {
        value: 0.0,
        grad_objects: Array2::zeros((m, cols)),
        grad_attributes: attributes.iter().map(|a| Array2::zeros(a.raw_dim())).collect(),
        argmax: Vec::new(),
    };
    for (c, pair) in labels.all_pairs() {
        let valid = c + 1 < cols
            && attributes
                .get(pair.category)
                .is_some_and(|a| pair.value < a.ncols() && a.nrows() == m);
        if !valid {
            return Err(Error::Label(format!(
                "pair (class {c}, category {}, value {}) does not fit the score shapes",
                pair.category, pair.value
            )));
        }
    }
    let n_pairs = labels.num_pairs();
    if n_pairs == 0 || labels.is_empty() || m == 0 {
        return Ok(out);
    }
    let scale = match norm {
        EntangleNorm::Objects => 1.0 / labels.objects().len() as f64,
        EntangleNorm::Pairs => 1.0 / n_pairs as f64,
    };
    for (c, pair) in labels.all_pairs() {
        let attr = attributes[pair.category].column(pair.value);
        let obj = objects.column(c);
        let products = obj.iter().zip(attr.iter()).map(|(&s, &t)| s * t);
        let (i, prod) = argmax(products.map(clamped_log).collect::<Vec<_>>())
            .map(|(i, _)| (i, obj[i] * attr[i]))
            .expect("m > 0");
        out.value -= scale * clamped_log(prod);
        // d log(s t) = ds / s + dt / t, zero when the product is clamped
        if clamped_log_grad(prod) != 0.0 {
            out.grad_objects[[i, c]] -= scale / obj[i];
            out.grad_attributes[pair.category][[i, pair.value]] -= scale / attr[i];
        }
        out.argmax.push((c, pair, i));
    }
    Ok(out)
}

/// The same pairs scored with independent maxima per factor:
/// `-(scale) sum (max_i log s_{i,c} + max_j log s_{j,a,v})`. Always `<=` the
/// entanglement value.
pub fn decoupled_pair_loss(
    objects: ArrayView2<f64>,
    attributes: &[Array2<f64>],
    labels: &LabelSet,
    norm: EntangleNorm,
) -> f64 {
    let n_pairs = labels.num_pairs();
    if n_pairs == 0 {
        return 0.0;
    }
    let scale = match norm {
        EntangleNorm::Objects => 1.0 / labels.objects().len() as f64,
        EntangleNorm::Pairs => 1.0 / n_pairs as f64,
    };
    let max_log = |col: ArrayView1<f64>| {
        col.iter()
            .map(|&s| clamped_log(s))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    labels
        .all_pairs()
        .map(|(c, pair)| {
            -scale * (max_log(objects.column(c)) + max_log(attributes[pair.category].column(pair.value)))
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidLossOutput {
    pub value: f64,
    /// Gradient with respect to the image-level scores `ŷ`.
    pub grad: Array1<f64>,
}

pub fn mid_loss(
    image_level: ArrayView1<f64>,
    objects: &BTreeSet<usize>,
    num_classes: usize,
) -> Result<MidLossOutput> {
    if image_level.len() != num_classes {
        return Err(Error::Dimension(format!(
            "{} image-level scores for {num_classes} classes",
            image_level.len()
        )));
    }
    if let Some(&c) = objects.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Label(format!("class {c} out of range 0..{num_classes}")));
    }
    let mut value = 0.0;
    let mut grad = Array1::zeros(num_classes);
    for (c, &y) in image_level.iter().enumerate() {
        if objects.contains(&c) {
            value -= clamped_log(y);
            grad[c] = -clamped_log_grad(y);
        } else {
            value -= clamped_log(1.0 - y);
            grad[c] = clamped_log_grad(1.0 - y);
        }
    }
    Ok(MidLossOutput { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub entangle_norm: EntangleNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.5,
            lambda2: 1e-2,
            entangle_norm: EntangleNorm::Objects,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One refinement head's contribution: its loss and the gradient it sends
/// to the score tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct OicrTerm {
    pub value: f64,
    pub grad: ScoreGrad,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArgmaxTrace {
    /// `(head, class, region)`
    pub objects: Vec<(usize, usize, usize)>,
    /// `(head, class, category, value, region)`
    pub pairs: Vec<(usize, usize, usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub l_obj: f64,
    pub l_entang: f64,
    pub l_mid: f64,
    pub l_oicr: Vec<f64>,
    pub l_total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(skip)]
    pub grad: ScoreGrad,
    pub argmax_trace: ArgmaxTrace,
}

/// Combines the image-level losses with the refinement terms.
///
/// `L_obj` and `L_entang` are evaluated on every refinement head and averaged
/// over heads. With `lambda2 == 0` the entanglement value is still reported
/// but contributes nothing to `l_total` or `grad`.
pub fn total_loss(
    scores: &ScoreTensor,
    mid: &MidScores,
    labels: &LabelSet,
    config: &LossConfig,
    oicr_terms: &[OicrTerm],
) -> Result<LossReport> {
    config.validate()?;
    let num_classes = mid.image_level.len();
    let heads = scores.objects.len();
    if heads == 0 || scores.attributes.len() != heads {
        return Err(Error::Dimension("score tensor has no heads".into()));
    }
    let mut grad = ScoreGrad::zeros_like(scores, mid);
    let mut trace = ArgmaxTrace::default();

    let mid_out = mid_loss(mid.image_level.view(), labels.objects(), num_classes)?;
    grad.mid_image += &mid_out.grad;

    let head_weight = 1.0 / heads as f64;
    let mut l_obj = 0.0;
    let mut l_entang = 0.0;
    for k in 0..heads {
        let obj = object_mil_loss(scores.objects[k].view(), labels.objects())?;
        l_obj += head_weight * obj.value;
        grad.objects[k].scaled_add(config.lambda1 * head_weight, &obj.grad);
        trace.objects.extend(obj.argmax.iter().map(|&(c, i)| (k, c, i)));

        let ent = entanglement_loss(
            scores.objects[k].view(),
            &scores.attributes[k],
            labels,
            config.entangle_norm,
        )?;
        l_entang += head_weight * ent.value;
        if config.lambda2 > 0.0 {
            let w = config.lambda2 * head_weight;
            grad.objects[k].scaled_add(w, &ent.grad_objects);
            for (g, e) in grad.attributes[k].iter_mut().zip(&ent.grad_attributes) {
                g.scaled_add(w, e);
            }
        }
        trace
            .pairs
            .extend(ent.argmax.iter().map(|&(c, p, i)| (k, c, p.category, p.value, i)));
    }

    let mut l_total = mid_out.value + config.lambda1 * l_obj;
    if config.lambda2 > 0.0 {
        l_total += config.lambda2 * l_entang;
    }
    let mut l_oicr = Vec::with_capacity(oicr_terms.len());
    for term in oicr_terms {
        l_total += term.value;
        grad.add_scaled(&term.grad, 1.0);
        l_oicr.push(term.value);
    }

    Ok(LossReport {
        l_obj,
        l_entang,
        l_mid: mid_out.value,
        l_oicr,
        l_total,
        lambda1: config.lambda1,
        lambda2: config.lambda2,
        grad,
        argmax_trace: trace,
    })
}
