use std::collections::BTreeMap;

use serde::Serialize;

use super::config::TrainConfig;
use super::infer::{infer, Detection};
use crate::error::Result;
use crate::geometry::BBox;
use crate::scorenet::ModelParams;
use crate::synthbench::SyntheticScene;

pub const MATCH_IOU: f64 = 0.5;

/// All-point interpolated AP from detections sorted by descending score.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (n, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (n + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Per-class AP and CorLoc over scenes of `(ground truth, detections)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionScores {
    /// `None` for classes without ground truth.
    pub ap: Vec<Option<f64>>,
    pub corloc: Vec<Option<f64>>,
    pub num_gt: Vec<usize>,
}

impl DetectionScores {
    pub fn map(&self) -> f64 {
        mean(self.ap.iter().flatten())
    }

    pub fn mean_corloc(&self) -> f64 {
        mean(self.corloc.iter().flatten())
    }

    pub fn map_over(&self, classes: &[usize]) -> Option<f64> {
        let present: Vec<f64> = classes.iter().filter_map(|&c| self.ap[c]).collect();
        (!present.is_empty()).then(|| mean(present.iter()))
    }
}

fn mean<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn box_key(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

/// Ground truth `(box, class)` of one scene with its detections.
pub type ScoredScene = (Vec<(BBox, usize)>, Vec<Detection>);

pub fn score_detections(scenes: &[ScoredScene], num_classes: usize) -> DetectionScores {
    let mut ap = vec![None; num_classes];
    let mut corloc = vec![None; num_classes];
    let mut num_gt = vec![0; num_classes];
    for c in 0..num_classes {
        let gt: Vec<Vec<BBox>> = scenes
            .iter()
            .map(|(g, _)| g.iter().filter(|(_, k)| *k == c).map(|(b, _)| *b).collect())
            .collect();
        let total: usize = gt.iter().map(Vec::len).sum();
        num_gt[c] = total;
        if total == 0 {
            continue;
        }
        let mut dets: Vec<(usize, &Detection)> = scenes
            .iter()
            .enumerate()
            .flat_map(|(s, (_, d))| d.iter().filter(|d| d.class == c).map(move |d| (s, d)))
            .collect();
        // A total order makes the result independent of input order.
        dets.sort_by(|(sa, a), (sb, b)| {
            b.score.total_cmp(&a.score).then(sa.cmp(sb)).then_with(|| {
                box_key(&a.bbox)
                    .iter()
                    .zip(box_key(&b.bbox))
                    .map(|(x, y)| x.total_cmp(&y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });

        let mut matched: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
        let mut hits = Vec::with_capacity(dets.len());
        let mut top_hit: Vec<Option<bool>> = vec![None; scenes.len()];
        for (s, d) in &dets {
            let best = gt[*s]
                .iter()
                .enumerate()
                .map(|(j, g)| (j, g.iou(&d.bbox)))
                .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
            let close = best.filter(|&(_, o)| o >= MATCH_IOU);
            if top_hit[*s].is_none() {
                top_hit[*s] = Some(close.is_some());
            }
            let hit = match close {
                Some((j, _)) if !matched[*s][j] => {
                    matched[*s][j] = true;
                    true
                }
                _ => false,
            };
            hits.push(hit);
        }
        ap[c] = Some(average_precision(&hits, total));
        let positives: Vec<usize> = (0..scenes.len()).filter(|&s| !gt[s].is_empty()).collect();
        let located = positives.iter().filter(|&&s| top_hit[s] == Some(true)).count();
        corloc[c] = Some(located as f64 / positives.len() as f64);
    }
    DetectionScores { ap, corloc, num_gt }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class_ap: BTreeMap<String, f64>,
    pub per_class_corloc: BTreeMap<String, f64>,
    pub map: f64,
    pub corloc: f64,
    /// Mean AP over confusable classes present in the ground truth.
    pub confusable_map: Option<f64>,
    pub num_scenes: usize,
    pub config_echo: TrainConfig,
    pub seed: u64,
}

pub fn evaluate(
    params: &ModelParams,
    scenes: &[SyntheticScene],
    config: &TrainConfig,
    class_names: &[String],
    confusable: &[usize],
) -> Result<Metrics> {
    let mut pairs = Vec::with_capacity(scenes.len());
    for s in scenes {
        let gt = s.gt.iter().map(|g| (g.bbox, g.class)).collect();
        pairs.push((gt, infer(params, &s.proposals, config)?));
    }
    let scores = score_detections(&pairs, class_names.len());
    let named = |xs: &[Option<f64>]| {
        xs.iter()
            .zip(class_names)
            .filter_map(|(v, n)| v.map(|v| (n.clone(), v)))
            .collect()
    };
    Ok(Metrics {
        per_class_ap: named(&scores.ap),
        per_class_corloc: named(&scores.corloc),
        map: scores.map(),
        corloc: scores.mean_corloc(),
        confusable_map: scores.map_over(confusable),
        num_scenes: scenes.len(),
        config_echo: config.clone(),
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bbox: BBox, class: usize, score: f64) -> Detection {
        Detection { bbox, class, score }
    }

    /// Independent PR-curve oracle: precision at each recall level is the
    /// best precision achieved at that recall or beyond.
    fn oracle_ap(hits: &[bool], num_gt: usize) -> f64 {
        let points: Vec<(f64, f64)> = (1..=hits.len())
            .map(|n| {
                let tp = hits[..n].iter().filter(|&&h| h).count() as f64;
                (tp / num_gt as f64, tp / n as f64)
            })
            .collect();
        let mut ap = 0.0;
        let mut last = 0.0;
        for &(r, _) in &points {
            if r > last {
                let p = points
                    .iter()
                    .filter(|(r2, _)| *r2 >= r)
                    .map(|x| x.1)
                    .fold(0.0, f64::max);
                ap += (r - last) * p;
                last = r;
            }
        }
        ap
    }

    #[test]
    fn hit_miss_hit() {
        let expected = 1.0 * 0.5 + (2.0 / 3.0) * 0.5;
        let ap = average_precision(&[true, false, true], 2);
        assert!((ap - expected).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
        assert_eq!(ap, oracle_ap(&[true, false, true], 2));

        let g1 = b(0.0, 0.0, 0.3, 0.3);
        let g2 = b(0.5, 0.5, 0.9, 0.9);
        let scenes = vec![(
            vec![(g1, 0), (g2, 0)],
            vec![
                det(b(0.4, 0.0, 0.45, 0.1), 0, 0.8),
                det(g2, 0, 0.7),
                det(g1, 0, 0.9),
            ],
        )];
        let s = score_detections(&scenes, 1);
        assert!((s.ap[0].unwrap() - expected).abs() < 1e-12);
        assert_eq!(s.corloc[0], Some(1.0));
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let g: Vec<(BBox, usize)> = vec![(b(0.0, 0.0, 0.4, 0.4), 0), (b(0.5, 0.5, 1.0, 1.0), 2)];
        let perfect: Vec<Detection> = g.iter().map(|&(bb, c)| det(bb, c, 0.9)).collect();
        let s = score_detections(&[(g.clone(), perfect)], 3);
        assert_eq!((s.map(), s.mean_corloc()), (1.0, 1.0));
        assert_eq!(s.ap[1], None);
        let s = score_detections(&[(g, vec![])], 3);
        assert_eq!((s.map(), s.mean_corloc()), (0.0, 0.0));
    }

    #[test]
    fn duplicate_hit_counts_once() {
        let g = b(0.0, 0.0, 0.5, 0.5);
        let s = score_detections(&[(vec![(g, 0)], vec![det(g, 0, 0.9), det(g, 0, 0.8)])], 1);
        assert_eq!(s.ap[0], Some(1.0));
        let hits = [true, false];
        assert_eq!(average_precision(&hits, 1), 1.0);
    }

    proptest! {
        #[test]
        fn ap_matches_oracle(hits in proptest::collection::vec(any::<bool>(), 0..30), extra in 0usize..5) {
            let n = hits.iter().filter(|&&h| h).count() + extra;
            prop_assume!(n > 0);
            let ap = average_precision(&hits, n);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((ap - oracle_ap(&hits, n)).abs() < 1e-12);
        }

        #[test]
        fn order_invariant(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut scenes = Vec::new();
            for _ in 0..3 {
                let gt = vec![(b(0.0, 0.0, 0.4, 0.4), 0), (b(0.5, 0.5, 0.9, 0.9), 1)];
                let mut dets: Vec<Detection> = (0..6)
                    .map(|_| {
                        let x: f64 = rng.random_range(0.0..0.5);
                        let y: f64 = rng.random_range(0.0..0.5);
                        det(b(x, y, x + 0.4, y + 0.4), rng.random_range(0..2), rng.random_range(0.05..1.0))
                    })
                    .collect();
                let before = dets.clone();
                dets.shuffle(&mut rng);
                scenes.push(((gt.clone(), before), (gt, dets)));
            }
            let (a, b2): (Vec<_>, Vec<_>) = scenes.into_iter().unzip();
            prop_assert_eq!(score_detections(&a, 2), score_detections(&b2, 2));
        }
    }
}
