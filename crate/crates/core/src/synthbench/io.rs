use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::scene::{GtObject, SyntheticScene};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scorenet::RegionSet;
use crate::textgraph::AttrPair;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    #[serde(rename = "box")]
    bbox: BBox,
    class: usize,
    attrs: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalRecord {
    boxes: Vec<BBox>,
    features: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    schema_version: u32,
    image_id: u64,
    gt: Vec<GtRecord>,
    proposals: ProposalRecord,
    captions: Vec<String>,
}

impl From<&SyntheticScene> for SceneRecord {
    fn from(s: &SyntheticScene) -> Self {
        SceneRecord {
            schema_version: SCHEMA_VERSION,
            image_id: s.image_id,
            gt: s
                .gt
                .iter()
                .map(|g| GtRecord {
                    bbox: g.bbox,
                    class: g.class,
                    attrs: g.attrs.iter().map(|p| [p.category, p.value]).collect(),
                })
                .collect(),
            proposals: ProposalRecord {
                boxes: s.proposals.boxes.clone(),
                features: s.proposals.features.outer_iter().map(|r| r.to_vec()).collect(),
            },
            captions: s.captions.clone(),
        }
    }
}

impl SceneRecord {
    fn into_scene(self) -> std::result::Result<SyntheticScene, String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let rows = self.proposals.features.len();
        let d = self.proposals.features.first().map_or(0, Vec::len);
        if self.proposals.features.iter().any(|r| r.len() != d) {
            return Err("ragged feature rows".into());
        }
        let flat: Vec<f64> = self.proposals.features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((rows, d), flat).map_err(|e| e.to_string())?;
        let proposals = RegionSet::new(self.proposals.boxes, features).map_err(|e| e.to_string())?;
        Ok(SyntheticScene {
            image_id: self.image_id,
            gt: self
                .gt
                .into_iter()
                .map(|g| GtObject {
                    bbox: g.bbox,
                    class: g.class,
                    attrs: g.attrs.iter().map(|&[a, v]| AttrPair::new(a, v)).collect(),
                })
                .collect(),
            proposals,
            captions: self.captions,
        })
    }
}

pub fn write_scenes<W: Write>(mut out: W, scenes: &[SyntheticScene]) -> std::io::Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut out, &SceneRecord::from(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_scenes<R: BufRead>(input: R, path: &Path) -> Result<Vec<SyntheticScene>> {
    let mut scenes = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let parsed: SceneRecord = serde_json::from_str(&line).map_err(|e| record(e.to_string()))?;
        scenes.push(parsed.into_scene().map_err(record)?);
    }
    Ok(scenes)
}

pub fn save_dataset(path: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_scenes(BufWriter::new(file), scenes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Vec<SyntheticScene>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_scenes(BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::{generate_scenes, make_universe, SceneConfig, UniverseConfig};
    use crate::textgraph::{AttributeRegistry, Vocabulary};

    fn scenes(n: u64) -> Vec<SyntheticScene> {
        let u = make_universe(
            &UniverseConfig::default(),
            &Vocabulary::builtin(),
            &AttributeRegistry::builtin(),
            0,
        )
        .unwrap();
        generate_scenes(&u, &SceneConfig::default(), 0, 0..n).unwrap()
    }

    fn bytes(s: &[SyntheticScene]) -> Vec<u8> {
        let mut out = Vec::new();
        write_scenes(&mut out, s).unwrap();
        out
    }

    #[test]
    fn round_trip_is_identity() {
        let original = scenes(25);
        let text = bytes(&original);
        let back = read_scenes(text.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, original);
        assert_eq!(bytes(&back), text);
    }

    #[test]
    fn single_scene_bytes_are_stable() {
        assert_eq!(bytes(&scenes(1)), bytes(&scenes(1)));
    }

    #[test]
    fn empty_input_gives_no_scenes() {
        assert!(read_scenes(&b""[..], Path::new("e")).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_names_line() {
        let text = bytes(&scenes(3));
        let cut = &text[..text.len() - 40];
        let err = read_scenes(cut, Path::new("t.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("t.jsonl"));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let text = String::from_utf8(bytes(&scenes(1))).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":2", 1);
        let err = read_scenes(bumped.as_bytes(), Path::new("s")).unwrap_err();
        assert!(err.to_string().contains("schema version"), "{err}");
    }
}
