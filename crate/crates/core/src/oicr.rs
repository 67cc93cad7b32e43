//! Online instance classifier refinement over `K` heads, extended with
//! attribute supervision.
//!
//! Head `k` is supervised by pseudo-labels read off head `k-1`; head 1 reads
//! the two-stream detection scores `s^0 = s^mid`. For object labels, the
//! seed of class `c` is the region maximizing the previous scores for `c`,
//! and every region overlapping a seed by at least `tau` inherits its label.
//!
//! Attribute supervision differs by head. Head 1 trains only its attribute
//! classifiers, on the detection seed box of each class. Heads `k >= 2` seed
//! each `(c, (a, v))` pair at the region maximizing `s_{i,c} * s_{i,a,v}` and
//! train both the object and attribute classifiers on the overlapping boxes.
//!
//! Pseudo-labels are constants with respect to the parameters.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scorenet::{forward, MidScores, ModelParams, RegionSet, ScoreGrad, ScoreTensor};
use crate::textgraph::{AttrPair, LabelSet};
use crate::weakloss::{argmax, clamped_log, clamped_log_grad, OicrTerm};

/// Which head's scores pick the attribute seeds at heads `k >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    #[default]
    Previous,
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OicrConfig {
    pub num_heads: usize,
    pub tau: f64,
    /// Weight each pseudo-labelled region by its seed score.
    pub weighted: bool,
    /// Enables attribute refinement (off for the object-only baseline).
    pub attributes: bool,
    pub attribute_seed_source: SeedSource,
}

impl Default for OicrConfig {
    fn default() -> Self {
        OicrConfig {
            num_heads: 3,
            tau: 0.5,
            weighted: true,
            attributes: true,
            attribute_seed_source: SeedSource::Previous,
        }
    }
}

impl OicrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 {
            return Err(Error::Config("at least one refinement head is required".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Object pseudo-labels for one head: a class in `0..=C` per region
/// (`C` is background) with a confidence weight.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLabels {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(class, seed region, seed score)` per class of `O`.
    pub seeds: Vec<(usize, usize, f64)>,
    pub background: usize,
}

impl HeadLabels {
    /// Seed region of `class`, if it was seeded.
    pub fn seed_of(&self, class: usize) -> Option<usize> {
        self.seeds.iter().find(|s| s.0 == class).map(|s| s.1)
    }
}

/// One attribute pseudo-label on one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeTarget {
    pub region: usize,
    pub class: usize,
    pub pair: AttrPair,
    pub seed: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub objects: Vec<HeadLabels>,
    pub attributes: Vec<Vec<AttributeTarget>>,
}

/// Seeds each class of `objects` at the argmax of `prev_scores` (only the
/// first `C` columns are read) and spreads its label to every box with IoU
/// `>= tau`. A region claimed by several seeds takes the class whose seed
/// scored highest. Unclaimed regions are background with weight 1; with an
/// empty `objects` every region is background.
pub fn seed_and_assign(
    prev_scores: ArrayView2<f64>,
    objects: &BTreeSet<usize>,
    boxes: &[BBox],
    tau: f64,
    num_classes: usize,
) -> Result<HeadLabels> {
    let m = boxes.len();
    if m == 0 {
        return Err(Error::Dimension("no regions to label".into()));
    }
    if prev_scores.nrows() != m || prev_scores.ncols() < num_classes {
        return Err(Error::Dimension(format!(
            "previous scores {:?} for {m} regions and {num_classes} classes",
            prev_scores.dim()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if let Some(&c) = objects.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Label(format!("class {c} out of range 0..{num_classes}")));
    }
    let seeds: Vec<(usize, usize, f64)> = objects
        .iter()
        .map(|&c| {
            let (i, s) = argmax(prev_scores.column(c).iter().copied()).expect("m > 0");
            (c, i, s)
        })
        .collect();

    let mut labels = vec![num_classes; m];
    let mut weights = vec![1.0; m];
    for (i, b) in boxes.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &(c, seed, score) in &seeds {
            if iou(b, &boxes[seed]) >= tau && best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        if let Some((c, score)) = best {
            labels[i] = c;
            weights[i] = score.clamp(0.0, 1.0);
        }
    }
    Ok(HeadLabels {
        labels,
        weights,
        seeds,
        background: num_classes,
    })
}

/// Weighted cross-entropy `-(1/m) sum_i w_i log s[i, label_i]`.
pub fn refinement_loss(
    head_scores: ArrayView2<f64>,
    pseudo: &HeadLabels,
    weighted: bool,
) -> Result<(f64, Array2<f64>)> {
    let (m, cols) = head_scores.dim();
    if pseudo.labels.len() != m || pseudo.labels.iter().any(|&l| l >= cols) {
        return Err(Error::Label("pseudo-labels do not fit the head scores".into()));
    }
    let mut grad = Array2::zeros((m, cols));
    let mut value = 0.0;
    let norm = 1.0 / m as f64;
    for (i, (&l, &w)) in pseudo.labels.iter().zip(&pseudo.weights).enumerate() {
        let w = if weighted { w } else { 1.0 };
        if w == 0.0 {
            continue;
        }
        let s = head_scores[[i, l]];
        value -= norm * w * clamped_log(s);
        grad[[i, l]] -= norm * w * clamped_log_grad(s);
    }
    Ok((value, grad))
}

/// Attribute pseudo-labels for head `k` (1-based).
///
/// For `k = 1`, `seed_objects` are the detection scores `s^0` and only the
/// seed box of each class is labelled. For `k >= 2`, `seed_objects` and
/// `seed_attributes` are the scores whose product picks each pair's seed.
pub fn attribute_targets(
    k: usize,
    seed_objects: ArrayView2<f64>,
    seed_attributes: &[Array2<f64>],
    labels: &LabelSet,
    boxes: &[BBox],
    tau: f64,
) -> Result<Vec<AttributeTarget>> {
    if k == 0 {
        return Err(Error::Config("head indices start at 1".into()));
    }
    let m = boxes.len();
    if seed_objects.nrows() != m {
        return Err(Error::Dimension("seed scores do not match the regions".into()));
    }
    let mut targets = Vec::new();
    for (c, pair) in labels.all_pairs() {
        if c >= seed_objects.ncols() {
            return Err(Error::Label(format!("class {c} out of range")));
        }
        let obj = seed_objects.column(c);
        if k == 1 {
            let (seed, score) = argmax(obj.iter().copied()).expect("m > 0");
            targets.push(AttributeTarget {
                region: seed,
                class: c,
                pair,
                seed,
                weight: score.clamp(0.0, 1.0),
            });
            continue;
        }
        let attr = seed_attributes
            .get(pair.category)
            .filter(|a| pair.value < a.ncols() && a.nrows() == m)
            .ok_or_else(|| Error::Label(format!("attribute {pair:?} out of range")))?
            .column(pair.value);
        let (seed, score) = argmax(obj.iter().zip(attr.iter()).map(|(&s, &t)| s * t)).expect("m > 0");
        for (i, b) in boxes.iter().enumerate() {
            if iou(b, &boxes[seed]) >= tau {
                targets.push(AttributeTarget {
                    region: i,
                    class: c,
                    pair,
                    seed,
                    weight: score.clamp(0.0, 1.0),
                });
            }
        }
    }
    Ok(targets)
}

/// Cross-entropy on attribute pseudo-labels, `-(1/m) sum w log(...)`.
/// Head 1 trains only the attribute classifiers; later heads also push the
/// object classifier toward the target class.
pub fn attribute_refinement_loss(
    k: usize,
    head_objects: ArrayView2<f64>,
    head_attributes: &[Array2<f64>],
    targets: &[AttributeTarget],
    weighted: bool,
) -> Result<(f64, Array2<f64>, Vec<Array2<f64>>)> {
    let m = head_objects.nrows();
    let mut g_obj = Array2::zeros(head_objects.raw_dim());
    let mut g_attr: Vec<Array2<f64>> = head_attributes
        .iter()
        .map(|a| Array2::zeros(a.raw_dim()))
        .collect();
    let mut value = 0.0;
    let norm = 1.0 / m as f64;
    for t in targets {
        let w = if weighted { t.weight } else { 1.0 };
        let attr = head_attributes
            .get(t.pair.category)
            .filter(|a| t.pair.value < a.ncols() && t.region < a.nrows())
            .ok_or_else(|| Error::Label(format!("attribute target {t:?} out of range")))?;
        let s = attr[[t.region, t.pair.value]];
        value -= norm * w * clamped_log(s);
        g_attr[t.pair.category][[t.region, t.pair.value]] -= norm * w * clamped_log_grad(s);
        if k >= 2 {
            let s = head_objects[[t.region, t.class]];
            value -= norm * w * clamped_log(s);
            g_obj[[t.region, t.class]] -= norm * w * clamped_log_grad(s);
        }
    }
    Ok((value, g_obj, g_attr))
}

/// Derives all pseudo-labels from one forward pass.
pub fn assign_pseudo_labels(
    scores: &ScoreTensor,
    mid: &MidScores,
    labels: &LabelSet,
    boxes: &[BBox],
    config: &OicrConfig,
) -> Result<PseudoLabels> {
    config.validate()?;
    let heads = scores.objects.len();
    if heads != config.num_heads {
        return Err(Error::Dimension(format!(
            "model has {heads} heads, config asks for {}",
            config.num_heads
        )));
    }
    let num_classes = mid.per_region.ncols();
    let mut objects = Vec::with_capacity(heads);
    let mut attributes = Vec::with_capacity(heads);
    for k in 1..=heads {
        let prev = if k == 1 {
            mid.per_region.view()
        } else {
            scores.objects[k - 2].view()
        };
        objects.push(seed_and_assign(
            prev,
            labels.objects(),
            boxes,
            config.tau,
            num_classes,
        )?);
        if !config.attributes {
            attributes.push(Vec::new());
            continue;
        }
        let targets = if k == 1 {
            attribute_targets(1, mid.per_region.view(), &[], labels, boxes, config.tau)?
        } else {
            let src = match config.attribute_seed_source {
                SeedSource::Previous => k - 2,
                SeedSource::Current => k - 1,
            };
            attribute_targets(
                k,
                scores.objects[src].view(),
                &scores.attributes[src],
                labels,
                boxes,
                config.tau,
            )?
        };
        attributes.push(targets);
    }
    Ok(PseudoLabels { objects, attributes })
}

/// Refinement losses for fixed pseudo-labels; one term per head.
pub fn refinement_terms(
    scores: &ScoreTensor,
    mid: &MidScores,
    pseudo: &PseudoLabels,
    config: &OicrConfig,
) -> Result<Vec<OicrTerm>> {
    let mut terms = Vec::with_capacity(pseudo.objects.len());
    for (k0, head) in pseudo.objects.iter().enumerate() {
        let mut grad = ScoreGrad::zeros_like(scores, mid);
        let (mut value, g) = refinement_loss(scores.objects[k0].view(), head, config.weighted)?;
        grad.objects[k0] += &g;
        let targets = &pseudo.attributes[k0];
        if !targets.is_empty() {
            let (v, g_obj, g_attr) = attribute_refinement_loss(
                k0 + 1,
                scores.objects[k0].view(),
                &scores.attributes[k0],
                targets,
                config.weighted,
            )?;
            value += v;
            grad.objects[k0] += &g_obj;
            for (a, g) in grad.attributes[k0].iter_mut().zip(&g_attr) {
                *a += g;
            }
        }
        terms.push(OicrTerm { value, grad });
    }
    Ok(terms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutput {
    pub scores: ScoreTensor,
    pub mid: MidScores,
    pub pseudo: PseudoLabels,
    pub terms: Vec<OicrTerm>,
}

/// Forward pass, pseudo-labelling and per-head refinement losses.
pub fn run_refinement(
    params: &ModelParams,
    regions: &RegionSet,
    labels: &LabelSet,
    config: &OicrConfig,
) -> Result<RefinementOutput> {
    let (scores, mid) = forward(params, regions)?;
    let pseudo = assign_pseudo_labels(&scores, &mid, labels, &regions.boxes, config)?;
    let terms = refinement_terms(&scores, &mid, &pseudo, config)?;
    Ok(RefinementOutput {
        scores,
        mid,
        pseudo,
        terms,
    })
}

/// Checks that every non-background label overlaps its class seed by `tau`.
pub fn overlap_constraint_holds(head: &HeadLabels, boxes: &[BBox], tau: f64) -> bool {
    head.labels.iter().enumerate().all(|(i, &l)| {
        l == head.background || head.seed_of(l).is_some_and(|s| iou(&boxes[i], &boxes[s]) >= tau)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn identical_boxes_share_the_label() {
        let boxes = [b(0.0, 0.0, 1.0, 1.0), b(0.0, 0.0, 1.0, 1.0)];
        let prev = array![[0.8, 0.1], [0.3, 0.1]];
        let h = seed_and_assign(prev.view(), &set(&[0]), &boxes, 0.5, 2).unwrap();
        assert_eq!(h.labels, vec![0, 0]);
        assert_eq!(h.weights, vec![0.8, 0.8]);
        assert_eq!(h.seeds, vec![(0, 0, 0.8)]);
    }

    #[test]
    fn low_overlap_becomes_background() {
        // unit squares overlapping by width x have IoU x / (2 - x); x = 6/13 gives 0.3
        let seed = b(0.0, 0.0, 1.0, 1.0);
        let other = b(1.0 - 6.0 / 13.0, 0.0, 2.0 - 6.0 / 13.0, 1.0);
        let overlap = iou(&seed, &other);
        assert!((overlap - 0.3).abs() < 1e-9, "{overlap}");
        let prev = array![[0.9], [0.2]];
        let h = seed_and_assign(prev.view(), &set(&[0]), &[seed, other], 0.5, 1).unwrap();
        assert_eq!(h.labels, vec![0, 1]);
        assert_eq!(h.weights, vec![0.9, 1.0]);
    }

    #[test]
    fn higher_seed_score_wins_conflicts() {
        let boxes = [b(0.0, 0.0, 1.0, 1.0), b(2.0, 2.0, 3.0, 3.0)];
        let prev = array![[0.9, 0.4], [0.1, 0.3]];
        let h = seed_and_assign(prev.view(), &set(&[0, 1]), &boxes, 0.5, 2).unwrap();
        assert_eq!(h.seeds, vec![(0, 0, 0.9), (1, 0, 0.4)]);
        assert_eq!(h.labels, vec![0, 2]);
    }

    #[test]
    fn seeds_invariant_under_monotone_transform() {
        let boxes: Vec<BBox> = (0..4).map(|i| b(i as f64, 0.0, i as f64 + 0.8, 1.0)).collect();
        let prev = array![[0.1, 0.5], [0.7, 0.2], [0.3, 0.9], [0.2, 0.1]];
        let warped = prev.mapv(|v: f64| (5.0 * v).exp());
        let a = seed_and_assign(prev.view(), &set(&[0, 1]), &boxes, 0.5, 2).unwrap();
        let c = seed_and_assign(warped.view(), &set(&[0, 1]), &boxes, 0.5, 2).unwrap();
        assert_eq!(a.labels, c.labels);
        let sa: Vec<_> = a.seeds.iter().map(|s| (s.0, s.1)).collect();
        let sc: Vec<_> = c.seeds.iter().map(|s| (s.0, s.1)).collect();
        assert_eq!(sa, sc);
    }

    #[test]
    fn seed_and_assign_errors() {
        let prev = array![[0.5]];
        assert!(seed_and_assign(prev.view(), &set(&[0]), &[], 0.5, 1).is_err());
        let one = [b(0.0, 0.0, 1.0, 1.0)];
        assert!(seed_and_assign(prev.view(), &set(&[0]), &one, 1.0, 1).is_err());
        assert!(seed_and_assign(prev.view(), &set(&[1]), &one, 0.5, 1).is_err());
        let h = seed_and_assign(prev.view(), &set(&[]), &one, 0.5, 1).unwrap();
        assert_eq!(h.labels, vec![1]);
    }

    #[test]
    fn refinement_loss_examples() {
        let head = HeadLabels {
            labels: vec![0, 1],
            weights: vec![1.0, 1.0],
            seeds: vec![(0, 0, 1.0)],
            background: 1,
        };
        let perfect = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(refinement_loss(perfect.view(), &head, true).unwrap().0.abs() < 1e-11);

        let s = array![[0.5, 0.5], [0.75, 0.25]];
        let (v, g) = refinement_loss(s.view(), &head, true).unwrap();
        assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((v - 1.0397).abs() < 1e-4);
        assert!((g[[1, 1]] + 2.0).abs() < 1e-12);

        let zero = HeadLabels {
            weights: vec![0.0, 0.0],
            ..head.clone()
        };
        let (v, g) = refinement_loss(s.view(), &zero, true).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        // weighting off ignores the weights
        assert!(refinement_loss(s.view(), &zero, false).unwrap().0 > 1.0);
    }

    #[test]
    fn first_head_labels_the_detection_seed() {
        let boxes = [
            b(0.0, 0.0, 1.0, 1.0),
            b(2.0, 0.0, 3.0, 1.0),
            b(0.05, 0.0, 1.0, 1.0),
        ];
        let s0 = array![[0.2], [0.6], [0.1]];
        let mut labels = LabelSet::new();
        labels.insert_attribute(0, AttrPair::new(0, 6));
        let t = attribute_targets(1, s0.view(), &[], &labels, &boxes, 0.5).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].region, t[0].pair), (1, AttrPair::new(0, 6)));

        let head_obj = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
        let color = Array2::from_elem((3, 8), 0.125);
        let (v, g_obj, g_attr) = attribute_refinement_loss(1, head_obj.view(), &[color], &t, false).unwrap();
        assert!((v - 8f64.ln() / 3.0).abs() < 1e-12);
        assert!(g_obj.iter().all(|&x| x == 0.0));
        assert!(g_attr[0][[1, 6]] < 0.0);
    }

    #[test]
    fn later_heads_seed_on_products() {
        // products (0.09, 0.40): the high-object-score box 0 is not the seed
        let boxes = [
            b(0.0, 0.0, 1.0, 1.0),
            b(2.0, 0.0, 3.0, 1.0),
            b(2.0, 0.0, 2.9, 1.0),
        ];
        let obj = array![[0.9, 0.1], [0.5, 0.5], [0.1, 0.9]];
        let color = array![[0.1, 0.9], [0.8, 0.2], [0.1, 0.9]];
        let mut labels = LabelSet::new();
        labels.insert_attribute(0, AttrPair::new(0, 0));
        let t = attribute_targets(2, obj.view(), std::slice::from_ref(&color), &labels, &boxes, 0.5).unwrap();
        assert!(t.iter().all(|t| t.seed == 1));
        assert_eq!(t.iter().map(|t| t.region).collect::<Vec<_>>(), vec![1, 2]);
        assert!((t[0].weight - 0.4).abs() < 1e-12);

        let (_, g_obj, g_attr) = attribute_refinement_loss(2, obj.view(), &[color], &t, true).unwrap();
        assert!(g_obj[[1, 0]] < 0.0 && g_obj[[2, 0]] < 0.0 && g_obj[[0, 0]] == 0.0);
        assert!(g_attr[0][[2, 0]] < 0.0);
    }

    #[test]
    fn no_pairs_no_attribute_loss() {
        let boxes = [b(0.0, 0.0, 1.0, 1.0)];
        let s = array![[0.7, 0.3]];
        let labels = LabelSet::from_objects([0]);
        let t = attribute_targets(2, s.view(), &[], &labels, &boxes, 0.5).unwrap();
        assert!(t.is_empty());
        let (v, _, _) = attribute_refinement_loss(2, s.view(), &[], &t, true).unwrap();
        assert_eq!(v, 0.0);
        assert!(attribute_targets(0, s.view(), &[], &labels, &boxes, 0.5).is_err());
    }
}
