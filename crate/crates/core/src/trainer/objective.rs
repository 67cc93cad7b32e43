use crate::error::Result;
use crate::oicr::{assign_pseudo_labels, refinement_terms, OicrConfig, PseudoLabels};
use crate::scorenet::{backward, forward, MidScores, ModelParams, RegionSet, ScoreTensor};
use crate::textgraph::LabelSet;
use crate::weakloss::{total_loss, LossConfig, LossReport};

/// A scene reduced to what training sees: proposals and caption labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingScene {
    pub image_id: u64,
    pub regions: RegionSet,
    pub labels: LabelSet,
}

#[allow(clippy::too_many_arguments)]
fn compose(
    params: &ModelParams,
    regions: &RegionSet,
    labels: &LabelSet,
    scores: &ScoreTensor,
    mid: &MidScores,
    pseudo: &PseudoLabels,
    loss: &LossConfig,
    oicr: &OicrConfig,
) -> Result<(LossReport, ModelParams)> {
    let terms = refinement_terms(scores, mid, pseudo, oicr)?;
    let report = total_loss(scores, mid, labels, loss, &terms)?;
    let grad = backward(params, regions, scores, mid, &report.grad)?;
    Ok((report, grad))
}

/// Total loss of one scene and its parameter gradient. Pseudo-labels are
/// read off the same forward pass and held constant.
pub fn scene_objective(
    params: &ModelParams,
    regions: &RegionSet,
    labels: &LabelSet,
    loss: &LossConfig,
    oicr: &OicrConfig,
) -> Result<(LossReport, ModelParams, PseudoLabels)> {
    let (scores, mid) = forward(params, regions)?;
    let pseudo = assign_pseudo_labels(&scores, &mid, labels, &regions.boxes, oicr)?;
    let (report, grad) = compose(params, regions, labels, &scores, &mid, &pseudo, loss, oicr)?;
    Ok((report, grad, pseudo))
}

/// The same objective with externally fixed pseudo-labels, a smooth
/// function of the parameters away from argmax ties.
pub fn frozen_objective(
    params: &ModelParams,
    regions: &RegionSet,
    labels: &LabelSet,
    pseudo: &PseudoLabels,
    loss: &LossConfig,
    oicr: &OicrConfig,
) -> Result<(LossReport, ModelParams)> {
    let (scores, mid) = forward(params, regions)?;
    compose(params, regions, labels, &scores, &mid, pseudo, loss, oicr)
}
