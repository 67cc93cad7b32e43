use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::Result;
use crate::geometry::{nms, BBox};
use crate::scorenet::{forward, ModelParams, RegionSet, ScoreTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

/// Mean over refinement heads of the object columns, background dropped.
pub fn region_class_scores(scores: &ScoreTensor) -> Array2<f64> {
    let heads = &scores.objects;
    let (m, c) = (heads[0].nrows(), heads[0].ncols() - 1);
    let mut out = Array2::zeros((m, c));
    for h in heads {
        out += &h.slice(ndarray::s![.., ..c]);
    }
    out / heads.len() as f64
}

/// Per-class NMS over `scores` (`m x C`), dropping scores below the floor.
pub fn detections_from_scores(
    boxes: &[BBox],
    scores: &Array2<f64>,
    nms_threshold: f64,
    score_floor: f64,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (c, column) in scores.columns().into_iter().enumerate() {
        let keep: Vec<usize> = (0..boxes.len())
            .filter(|&i| column[i] >= score_floor && column[i] > 0.0)
            .collect();
        if keep.is_empty() {
            continue;
        }
        let b: Vec<BBox> = keep.iter().map(|&i| boxes[i]).collect();
        let s: Vec<f64> = keep.iter().map(|&i| column[i]).collect();
        for j in nms(&b, &s, nms_threshold)? {
            out.push(Detection {
                bbox: b[j],
                class: c,
                score: s[j].min(1.0),
            });
        }
    }
    Ok(out)
}

pub fn infer(params: &ModelParams, regions: &RegionSet, config: &TrainConfig) -> Result<Vec<Detection>> {
    let (scores, _) = forward(params, regions)?;
    detections_from_scores(
        &regions.boxes,
        &region_class_scores(&scores),
        config.nms_threshold,
        config.score_floor,
    )
}
