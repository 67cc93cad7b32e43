//! Synthetic scenes with prototype region features and templated captions.
//!
//! Each class, attribute value and the background own an orthogonal
//! prototype direction; a proposal's feature is its object's class prototype
//! plus its attribute prototypes plus Gaussian noise. Confusable class pairs
//! sit `delta` apart, so only their attributes tell them apart.
//!
//! Datasets are JSON lines, one scene per line:
//!
//! ```text
//! {"schema_version":1,"image_id":0,
//!  "gt":[{"box":[x0,y0,x1,y1],"class":3,"attrs":[[0,2],[1,0],[2,1],[3,0]]}],
//!  "proposals":{"boxes":[[...]],"features":[[...]]},
//!  "captions":["a blue bus next to a dog"]}
//! ```

mod io;
mod scene;
mod universe;

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use io::{load_dataset, read_scenes, save_dataset, write_scenes, SCHEMA_VERSION};
pub use scene::{
    generate_scene, generate_scenes, scene_rng, CaptionConfig, GeneratedScene, GtObject, Mention,
    SceneConfig, SyntheticScene,
};
pub use universe::{make_universe, Universe, UniverseConfig};

/// Image-id ranges keep the splits' per-scene streams disjoint.
pub fn split_ids(split: usize, sizes: &[usize]) -> Range<u64> {
    let start: usize = sizes[..split].iter().sum();
    start as u64..(start + sizes[split]) as u64
}

pub fn gen_dataset(
    universe: &Universe,
    config: &SceneConfig,
    seed: u64,
    image_ids: Range<u64>,
    path: &Path,
) -> Result<Vec<SyntheticScene>> {
    if image_ids.is_empty() {
        return Err(Error::Config("a dataset needs at least one scene".into()));
    }
    let scenes = generate_scenes(universe, config, seed, image_ids)?;
    save_dataset(path, &scenes)?;
    Ok(scenes)
}

/// Summary written next to generated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub input_dim: usize,
    pub class_names: Vec<String>,
    pub category_names: Vec<String>,
    pub attribute_sizes: Vec<usize>,
    pub confusable: Vec<[usize; 2]>,
    pub splits: Vec<(String, usize)>,
}

impl Manifest {
    pub fn new(universe: &Universe, seed: u64, splits: Vec<(String, usize)>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            seed,
            input_dim: universe.input_dim(),
            class_names: universe.class_names.clone(),
            category_names: universe.category_names.clone(),
            attribute_sizes: universe.attribute_sizes(),
            confusable: universe.confusable.iter().map(|&(a, b)| [a, b]).collect(),
            splits,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }
}
