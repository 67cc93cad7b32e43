use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adagrad::AdaGrad;
use super::config::TrainConfig;
use super::objective::{scene_objective, TrainingScene};
use crate::error::{Error, Result};
use crate::scorenet::{init_params, ModelDims, ModelParams};
use crate::synthbench::SyntheticScene;
use crate::textgraph::{extract_labels, AttributeRegistry, Vocabulary};

/// Labels every scene from its own captions.
pub fn prepare_scenes(
    scenes: &[SyntheticScene],
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
) -> Vec<TrainingScene> {
    scenes
        .iter()
        .map(|s| TrainingScene {
            image_id: s.image_id,
            regions: s.proposals.clone(),
            labels: extract_labels(&s.captions, vocab, registry),
        })
        .collect()
}

/// Batch-mean losses of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub image_ids: Vec<u64>,
    pub l_total: f64,
    pub l_mid: f64,
    pub l_obj: f64,
    pub l_entang: f64,
    pub l_oicr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<StepLog>,
}

/// Endless epochs of a fixed-seed permutation.
struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        BatchStream {
            rng,
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

pub fn model_dims(
    scenes: &[TrainingScene],
    num_classes: usize,
    attribute_sizes: &[usize],
    config: &TrainConfig,
) -> Result<ModelDims> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    ModelDims::new(
        first.regions.dim(),
        num_classes,
        attribute_sizes.to_vec(),
        config.num_heads,
    )
}

pub fn train(
    scenes: &[TrainingScene],
    num_classes: usize,
    attribute_sizes: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let dims = model_dims(scenes, num_classes, attribute_sizes, config)?;
    for s in scenes {
        s.labels.validate(num_classes, attribute_sizes)?;
    }
    let params = init_params(dims, config.seed)?;
    train_from(params, scenes, config)
}

/// Continues training from `params`.
pub fn train_from(
    mut params: ModelParams,
    scenes: &[TrainingScene],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let loss = config.loss_config();
    let oicr = config.oicr_config();
    let mut opt = AdaGrad::new(config.learning_rate, params.len());
    let mut batches = BatchStream::new(scenes.len(), config.seed);
    let mut log = Vec::with_capacity(config.steps);
    let scale = 1.0 / config.batch_size as f64;

    for step in 0..config.steps {
        let mut grad = params.zeros_like();
        let mut entry = StepLog {
            step,
            image_ids: Vec::with_capacity(config.batch_size),
            l_total: 0.0,
            l_mid: 0.0,
            l_obj: 0.0,
            l_entang: 0.0,
            l_oicr: vec![0.0; config.num_heads],
        };
        for _ in 0..config.batch_size {
            let scene = &scenes[batches.next_index()];
            let (report, g, _) = scene_objective(&params, &scene.regions, &scene.labels, &loss, &oicr)?;
            if !report.l_total.is_finite() || g.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    image_id: scene.image_id,
                });
            }
            grad.add_scaled(&g, scale);
            entry.image_ids.push(scene.image_id);
            entry.l_total += scale * report.l_total;
            entry.l_mid += scale * report.l_mid;
            entry.l_obj += scale * report.l_obj;
            entry.l_entang += scale * report.l_entang;
            for (acc, v) in entry.l_oicr.iter_mut().zip(&report.l_oicr) {
                *acc += scale * v;
            }
        }
        opt.step(&mut params, &grad);
        log.push(entry);
    }
    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::{generate_scenes, make_universe, SceneConfig, UniverseConfig};

    fn toy(n: u64) -> (Vec<TrainingScene>, usize, Vec<usize>) {
        let vocab = Vocabulary::builtin();
        let reg = AttributeRegistry::builtin();
        let u = make_universe(&UniverseConfig::default(), &vocab, &reg, 3).unwrap();
        let scenes = generate_scenes(&u, &SceneConfig::default(), 3, 0..n).unwrap();
        (
            prepare_scenes(&scenes, &vocab, &reg),
            vocab.num_classes(),
            reg.sizes(),
        )
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (scenes, c, sizes) = toy(4);
        let mut cfg = TrainConfig {
            steps: 5,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&scenes, c, &sizes, &cfg).unwrap();
        let dims = model_dims(&scenes, c, &sizes, &cfg).unwrap();
        assert_eq!(out.params, init_params(dims, cfg.seed).unwrap());
        cfg.steps = 0;
        assert!(train(&scenes, c, &sizes, &cfg).unwrap().log.is_empty());
    }

    #[test]
    fn same_seed_same_model() {
        let (scenes, c, sizes) = toy(6);
        let cfg = TrainConfig {
            steps: 20,
            ..TrainConfig::default()
        };
        let a = train(&scenes, c, &sizes, &cfg).unwrap();
        let b = train(&scenes, c, &sizes, &cfg).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 1, ..cfg };
        assert_ne!(a.params, train(&scenes, c, &sizes, &other).unwrap().params);
    }

    #[test]
    fn loss_decreases_on_toy_set() {
        let (scenes, c, sizes) = toy(10);
        let cfg = TrainConfig {
            steps: 200,
            ..TrainConfig::default()
        };
        let log = train(&scenes, c, &sizes, &cfg).unwrap().log;
        let mean = |xs: &[StepLog]| xs.iter().map(|s| s.l_total).sum::<f64>() / xs.len() as f64;
        let (head, tail) = (mean(&log[..10]), mean(&log[190..]));
        assert!(tail < head, "{head} -> {tail}");
    }

    #[test]
    fn epochs_visit_every_scene() {
        let mut s = BatchStream::new(5, 9);
        let mut seen: Vec<usize> = (0..5).map(|_| s.next_index()).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(train(&[], 12, &[8], &TrainConfig::default()).is_err());
    }
}
