use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::objective::{frozen_objective, scene_objective};
use crate::error::Result;
use crate::geometry::BBox;
use crate::oicr::{OicrConfig, SeedSource};
use crate::scorenet::{ModelDims, ModelParams, RegionSet};
use crate::textgraph::{AttrPair, LabelSet};
use crate::weakloss::{EntangleNorm, LossConfig};

/// A random small problem for finite-difference checking.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub params: ModelParams,
    pub regions: RegionSet,
    pub labels: LabelSet,
    pub loss: LossConfig,
    pub oicr: OicrConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub index: usize,
    pub input_dim: usize,
    pub regions: usize,
    pub classes: usize,
    pub heads: usize,
    pub params: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<GradcheckCase>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    let x = rng.random_range(0.0..0.6);
    let y = rng.random_range(0.0..0.6);
    let w = rng.random_range(0.1..0.4);
    let h = rng.random_range(0.1..0.4);
    BBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

/// Draws a problem with `d <= 16`, `m <= 8`, `C <= 4`.
pub fn random_problem(rng: &mut ChaCha8Rng) -> Result<GradProblem> {
    let d = rng.random_range(2..=16);
    let m = rng.random_range(2..=8);
    let c = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..rng.random_range(1..=3))
        .map(|_| rng.random_range(2..=4))
        .collect();
    let dims = ModelDims::new(d, c, sizes.clone(), k)?;
    let mut params = ModelParams::zeros(dims)?;
    for v in params.as_mut_slice() {
        *v = 0.5 * rng.sample::<f64, _>(StandardNormal);
    }
    let boxes: Vec<BBox> = (0..m).map(|_| random_box(rng)).collect();
    let features = Array2::from_shape_fn((m, d), |_| rng.sample(StandardNormal));
    let regions = RegionSet::new(boxes, features)?;

    let mut labels = LabelSet::new();
    for class in 0..c {
        if rng.random_bool(0.6) {
            labels.insert_object(class);
        }
    }
    if labels.is_empty() {
        labels.insert_object(rng.random_range(0..c));
    }
    let objects: Vec<usize> = labels.objects().iter().copied().collect();
    for class in objects {
        for (a, &n) in sizes.iter().enumerate() {
            if rng.random_bool(0.5) {
                labels.insert_attribute(class, AttrPair::new(a, rng.random_range(0..n)));
            }
        }
    }
    let lambda2 = match rng.random_range(0..3) {
        0 => 0.0,
        1 => 1e-2,
        _ => rng.random_range(0.05..1.0),
    };
    Ok(GradProblem {
        params,
        regions,
        labels,
        loss: LossConfig {
            lambda1: rng.random_range(0.1..1.0),
            lambda2,
            entangle_norm: if rng.random_bool(0.5) {
                EntangleNorm::Objects
            } else {
                EntangleNorm::Pairs
            },
        },
        oicr: OicrConfig {
            num_heads: k,
            tau: rng.random_range(0.1..0.7),
            weighted: rng.random_bool(0.7),
            attributes: lambda2 > 0.0,
            attribute_seed_source: if rng.random_bool(0.5) {
                SeedSource::Previous
            } else {
                SeedSource::Current
            },
        },
    })
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let denom = norm(a) + norm(n);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Compares the analytic gradient with central differences, pseudo-labels
/// frozen at the starting point.
pub fn check_problem(p: &GradProblem, step: f64) -> Result<f64> {
    let (_, analytic, pseudo) = scene_objective(&p.params, &p.regions, &p.labels, &p.loss, &p.oicr)?;
    let loss_at = |q: &ModelParams| -> Result<f64> {
        Ok(
            frozen_objective(q, &p.regions, &p.labels, &pseudo, &p.loss, &p.oicr)?
                .0
                .l_total,
        )
    };
    let mut probe = p.params.clone();
    let mut numeric = Vec::with_capacity(probe.len());
    for j in 0..probe.len() {
        let x = probe.as_slice()[j];
        probe.as_mut_slice()[j] = x + step;
        let up = loss_at(&probe)?;
        probe.as_mut_slice()[j] = x - step;
        let down = loss_at(&probe)?;
        probe.as_mut_slice()[j] = x;
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(relative_error(analytic.as_slice(), &numeric))
}

pub fn gradcheck(num_cases: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(num_cases);
    for index in 0..num_cases {
        let p = random_problem(&mut rng)?;
        let dims = p.params.dims();
        cases.push(GradcheckCase {
            index,
            input_dim: dims.input_dim,
            regions: p.regions.len(),
            classes: dims.num_classes,
            heads: dims.num_heads,
            params: p.params.len(),
            rel_error: check_problem(&p, 1e-6)?,
        });
    }
    let max_rel_error = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        cases,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_passes() {
        let report = gradcheck(8, 42, 1e-4).unwrap();
        assert!(report.passed, "{:?}", report.cases);
    }

    #[test]
    fn relative_error_scale() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_error(&[1.0], &[-1.0]), 1.0);
        assert!((relative_error(&[3.0, 0.0], &[0.0, 4.0]) - 5.0 / 7.0).abs() < 1e-15);
    }
}
