use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textgraph::{AttributeRegistry, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseConfig {
    pub input_dim: usize,
    /// Per-dimension standard deviation of feature noise.
    pub sigma: f64,
    /// Distance between the prototypes of a confusable pair.
    pub delta: f64,
    pub prototype_norm: f64,
    pub attribute_norm: f64,
    /// Class-name pairs whose prototypes are placed `delta` apart.
    pub confusable: Vec<[String; 2]>,
    /// Category whose typical values differ within every confusable pair.
    pub distinguishing_category: String,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            input_dim: 64,
            sigma: 0.1,
            delta: 0.05,
            prototype_norm: 1.0,
            attribute_norm: 1.0,
            confusable: vec![
                ["apple".into(), "pear".into()],
                ["car".into(), "bus".into()],
                ["dog".into(), "cat".into()],
            ],
            distinguishing_category: "color".into(),
        }
    }
}

/// Prototype vectors standing in for CNN region descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub class_names: Vec<String>,
    pub category_names: Vec<String>,
    pub value_names: Vec<Vec<String>>,
    /// `C x d`
    pub class_prototypes: Array2<f64>,
    /// Per category, `|V_a| x d`.
    pub attribute_prototypes: Vec<Array2<f64>>,
    pub background: Array1<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub confusable: Vec<(usize, usize)>,
    pub distinguishing_category: usize,
    /// Most frequent value per (class, category).
    pub typical: Vec<Vec<usize>>,
}

impl Universe {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.background.len()
    }

    pub fn attribute_sizes(&self) -> Vec<usize> {
        self.value_names.iter().map(Vec::len).collect()
    }

    pub fn partner(&self, class: usize) -> Option<usize> {
        self.confusable.iter().find_map(|&(a, b)| match class {
            c if c == a => Some(b),
            c if c == b => Some(a),
            _ => None,
        })
    }

    pub fn confusable_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.confusable.iter().flat_map(|&(a, b)| [a, b]).collect();
        v.sort_unstable();
        v
    }
}

/// `count` orthonormal vectors in `R^dim` by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        for u in &basis {
            let proj = v.dot(u);
            v.scaled_add(-proj, u);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis
}

pub fn make_universe(
    config: &UniverseConfig,
    vocab: &Vocabulary,
    registry: &AttributeRegistry,
    seed: u64,
) -> Result<Universe> {
    let c = vocab.num_classes();
    let d = config.input_dim;
    if d < 8 || c < 2 {
        return Err(Error::Config(format!(
            "need input_dim >= 8 and >= 2 classes (got {d}, {c})"
        )));
    }
    for (name, v) in [
        ("sigma", config.sigma),
        ("delta", config.delta),
        ("prototype_norm", config.prototype_norm),
        ("attribute_norm", config.attribute_norm),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("{name} must be finite and >= 0")));
        }
    }
    if config.delta <= 0.0 || config.prototype_norm * std::f64::consts::SQRT_2 < 4.0 * config.delta {
        return Err(Error::Config(
            "prototype_norm is too small to keep non-confusable classes 4 delta apart".into(),
        ));
    }
    let mut confusable = Vec::new();
    for [a, b] in &config.confusable {
        let ia = vocab
            .index_of(a)
            .ok_or_else(|| Error::Config(format!("unknown confusable class \"{a}\"")))?;
        let ib = vocab
            .index_of(b)
            .ok_or_else(|| Error::Config(format!("unknown confusable class \"{b}\"")))?;
        let reused = confusable
            .iter()
            .any(|&(x, y)| [x, y].contains(&ia) || [x, y].contains(&ib));
        if ia == ib || reused {
            return Err(Error::Config(format!(
                "confusable pair ({a}, {b}) repeats a class"
            )));
        }
        confusable.push((ia, ib));
    }
    let distinguishing_category = registry
        .category_index(&config.distinguishing_category)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown distinguishing category \"{}\"",
                config.distinguishing_category
            ))
        })?;
    let sizes = registry.sizes();
    if !confusable.is_empty() && sizes[distinguishing_category] < 2 {
        return Err(Error::Config("distinguishing category needs two values".into()));
    }

    let needed = c + 1 + sizes.iter().sum::<usize>() + confusable.len();
    if needed > d {
        return Err(Error::Config(format!(
            "input_dim {d} cannot hold {needed} orthogonal prototype directions"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = orthonormal(&mut rng, needed, d).into_iter();
    let mut class_prototypes = Array2::zeros((c, d));
    for mut row in class_prototypes.outer_iter_mut() {
        row.assign(&(dirs.next().expect("counted") * config.prototype_norm));
    }
    let background = dirs.next().expect("counted") * config.prototype_norm;
    let attribute_prototypes: Vec<Array2<f64>> = sizes
        .iter()
        .map(|&n| {
            let mut a = Array2::zeros((n, d));
            for mut row in a.outer_iter_mut() {
                row.assign(&(dirs.next().expect("counted") * config.attribute_norm));
            }
            a
        })
        .collect();
    // Second member of each pair: first prototype nudged along a fresh axis.
    for &(a, b) in &confusable {
        let offset = dirs.next().expect("counted") * (0.99 * config.delta);
        let moved = &class_prototypes.row(a) + &offset;
        class_prototypes.row_mut(b).assign(&moved);
    }

    let mut typical: Vec<Vec<usize>> = (0..c)
        .map(|_| sizes.iter().map(|&n| rng.random_range(0..n)).collect())
        .collect();
    for &(a, b) in &confusable {
        let n = sizes[distinguishing_category];
        while typical[b][distinguishing_category] == typical[a][distinguishing_category] {
            typical[b][distinguishing_category] = rng.random_range(0..n);
        }
    }

    Ok(Universe {
        class_names: vocab.class_names().to_vec(),
        category_names: registry.category_names().to_vec(),
        value_names: (0..registry.num_categories())
            .map(|a| registry.values(a).to_vec())
            .collect(),
        class_prototypes,
        attribute_prototypes,
        background,
        sigma: config.sigma,
        delta: config.delta,
        confusable,
        distinguishing_category,
        typical,
    })
}
