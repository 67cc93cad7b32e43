use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::universe::Universe;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scorenet::RegionSet;
use crate::textgraph::AttrPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Jittered copies of each ground-truth box.
    pub proposals_per_object: usize,
    pub background_proposals: usize,
    pub min_jitter_iou: f64,
    pub max_jitter_iou: f64,
    /// Chance that each attribute takes its class's typical value.
    pub typical_prob: f64,
    /// Chance that a sampled confusable class brings its partner along.
    pub pair_cooccur_prob: f64,
    /// Scale object features by overlap with the ground-truth box, filling
    /// the remainder with the background prototype.
    pub blend_by_overlap: bool,
    pub captions: CaptionConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            min_objects: 1,
            max_objects: 4,
            proposals_per_object: 6,
            background_proposals: 10,
            min_jitter_iou: 0.3,
            max_jitter_iou: 0.9,
            typical_prob: 0.5,
            pair_cooccur_prob: 1.0,
            blend_by_overlap: false,
            captions: CaptionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptionConfig {
    pub min_captions: usize,
    pub max_captions: usize,
    /// ρ: chance that a caption mentions a given attribute of an object.
    pub attr_mention_prob: f64,
    /// Chance of describing an object with a trailing "the X is ..." clause.
    pub copula_prob: f64,
}

impl Default for CaptionConfig {
    fn default() -> Self {
        CaptionConfig {
            min_captions: 1,
            max_captions: 5,
            attr_mention_prob: 0.7,
            copula_prob: 0.25,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        let c = &self.captions;
        if self.min_objects == 0 || self.min_objects > self.max_objects || self.max_objects > num_classes {
            return Err(Error::Config(format!(
                "objects per scene must satisfy 1 <= min <= max <= {num_classes}"
            )));
        }
        if self.proposals_per_object == 0 {
            return Err(Error::Config("proposals_per_object must be >= 1".into()));
        }
        if !(0.0 < self.min_jitter_iou
            && self.min_jitter_iou < self.max_jitter_iou
            && self.max_jitter_iou < 1.0
            && self.max_jitter_iou >= 0.5)
        {
            return Err(Error::Config(
                "jitter IoU range must lie in (0, 1) and reach 0.5".into(),
            ));
        }
        if c.min_captions == 0 || c.min_captions > c.max_captions {
            return Err(Error::Config(
                "captions per scene must satisfy 1 <= min <= max".into(),
            ));
        }
        for (name, v) in [
            ("typical_prob", self.typical_prob),
            ("pair_cooccur_prob", self.pair_cooccur_prob),
            ("attr_mention_prob", c.attr_mention_prob),
            ("copula_prob", c.copula_prob),
        ] {
            if !prob(v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub bbox: BBox,
    pub class: usize,
    /// One pair per category, in category order.
    pub attrs: Vec<AttrPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image_id: u64,
    pub gt: Vec<GtObject>,
    pub proposals: RegionSet,
    pub captions: Vec<String>,
}

/// What one caption says about one object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub class: usize,
    pub pairs: Vec<AttrPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: SyntheticScene,
    /// Per caption, the objects and attributes it mentions.
    pub mentions: Vec<Vec<Mention>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (master seed, image id).
pub fn scene_rng(seed: u64, image_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(image_id)))
}

/// Rounds to 9 significant digits so values survive a text round trip.
pub(crate) fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round_box(b: BBox) -> BBox {
    BBox {
        x_min: round_sig(b.x_min),
        y_min: round_sig(b.y_min),
        x_max: round_sig(b.x_max),
        y_max: round_sig(b.y_max),
    }
}

fn pick_classes(u: &Universe, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut chosen: Vec<usize> = Vec::with_capacity(cfg.max_objects);
    while chosen.len() < target {
        let free: Vec<usize> = (0..u.num_classes()).filter(|c| !chosen.contains(c)).collect();
        let c = *free.choose(rng).expect("max_objects <= C");
        let partner = u.partner(c).filter(|p| !chosen.contains(p));
        let draw: f64 = rng.random();
        match partner {
            Some(p) if draw < cfg.pair_cooccur_prob => {
                // Pairs enter together or not at all.
                if chosen.len() + 2 <= cfg.max_objects {
                    chosen.extend([c, p]);
                } else if free.iter().any(|&f| u.partner(f).is_none()) {
                    continue;
                } else {
                    chosen.push(c);
                }
            }
            _ => chosen.push(c),
        }
    }
    chosen
}

fn random_box(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> BBox {
    let w = rng.random_range(lo..hi);
    let h = rng.random_range(lo..hi);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

/// Ground-truth boxes, kept nearly disjoint so every proposal has one owner.
fn place_boxes(rng: &mut ChaCha8Rng, n: usize) -> Vec<BBox> {
    let mut boxes: Vec<BBox> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(f64, BBox)> = None;
        for _ in 0..200 {
            let b = round_box(random_box(rng, 0.15, 0.45));
            let overlap = boxes.iter().map(|o| o.iou(&b)).fold(0.0, f64::max);
            if best.as_ref().is_none_or(|(o, _)| overlap < *o) {
                best = Some((overlap, b));
            }
            if overlap == 0.0 {
                break;
            }
        }
        boxes.push(best.expect("at least one draw").1);
    }
    boxes
}

fn jitter(rng: &mut ChaCha8Rng, gt: &BBox, lo: f64, hi: f64) -> BBox {
    let mut fallback = *gt;
    for _ in 0..1000 {
        let s = rng.random_range(0.02..0.45);
        let (w, h) = (gt.width(), gt.height());
        let cx = (gt.x_min + gt.x_max) / 2.0 + rng.random_range(-s..s) * w;
        let cy = (gt.y_min + gt.y_max) / 2.0 + rng.random_range(-s..s) * h;
        let nw = w * rng.random_range(-s..s).exp();
        let nh = h * rng.random_range(-s..s).exp();
        let b = round_box(BBox {
            x_min: (cx - nw / 2.0).max(0.0),
            y_min: (cy - nh / 2.0).max(0.0),
            x_max: (cx + nw / 2.0).min(1.0),
            y_max: (cy + nh / 2.0).min(1.0),
        });
        if !b.is_valid() || b.area() <= 0.0 {
            continue;
        }
        let iou = b.iou(gt);
        if (lo..=hi).contains(&iou) {
            return b;
        }
        fallback = b;
    }
    // Unreachable for sane ranges; keeps generation total.
    fallback
}

fn background_box(rng: &mut ChaCha8Rng, gts: &[BBox]) -> BBox {
    let mut best: Option<(f64, BBox)> = None;
    for _ in 0..1000 {
        let b = round_box(random_box(rng, 0.08, 0.5));
        let overlap = gts.iter().map(|g| g.iou(&b)).fold(0.0, f64::max);
        if overlap < 0.3 {
            return b;
        }
        if best.as_ref().is_none_or(|(o, _)| overlap < *o) {
            best = Some((overlap, b));
        }
    }
    best.expect("at least one draw").1
}

fn sample_attributes(u: &Universe, cfg: &SceneConfig, class: usize, rng: &mut ChaCha8Rng) -> Vec<AttrPair> {
    u.attribute_sizes()
        .iter()
        .enumerate()
        .map(|(a, &n)| {
            let typical: f64 = rng.random();
            let v = if typical < cfg.typical_prob {
                u.typical[class][a]
            } else {
                rng.random_range(0..n)
            };
            AttrPair::new(a, v)
        })
        .collect()
}

fn object_signal(u: &Universe, obj: &GtObject) -> Array1<f64> {
    let mut f = u.class_prototypes.row(obj.class).to_owned();
    for p in &obj.attrs {
        f += &u.attribute_prototypes[p.category].row(p.value);
    }
    f
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

const OPENERS: &[&str] = &["", "", "there is ", "a photo of ", "we can see "];
const CONNECTORS: &[&str] = &[
    " next to ",
    " near ",
    " beside ",
    " and ",
    " with ",
    " behind ",
    " on ",
];

/// Builds one caption and reports what it mentions.
fn compose_caption(
    u: &Universe,
    cfg: &CaptionConfig,
    gt: &[GtObject],
    forced: &[bool],
    rng: &mut ChaCha8Rng,
) -> (String, Vec<Mention>) {
    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.shuffle(rng);
    let mut phrases = Vec::with_capacity(order.len());
    let mut clauses = Vec::new();
    let mut mentions = Vec::with_capacity(order.len());
    for &o in &order {
        let obj = &gt[o];
        let pairs: Vec<AttrPair> = obj
            .attrs
            .iter()
            .filter(|p| {
                let draw: f64 = rng.random();
                draw < cfg.attr_mention_prob || (forced[o] && p.category == u.distinguishing_category)
            })
            .copied()
            .collect();
        let noun = u.class_names[obj.class].as_str();
        // The distinguishing value sits next to the noun: "a small red apple".
        let mut ordered = pairs.clone();
        ordered.sort_by_key(|p| p.category == u.distinguishing_category);
        let words: Vec<&str> = ordered
            .iter()
            .map(|p| u.value_names[p.category][p.value].as_str())
            .collect();
        let copula: f64 = rng.random();
        if !words.is_empty() && copula < cfg.copula_prob {
            phrases.push(format!("{} {noun}", article(noun)));
            clauses.push(format!("the {noun} is {}", words.join(" and ")));
        } else {
            let head = words.first().copied().unwrap_or(noun);
            let mut phrase = String::from(article(head));
            for w in &words {
                phrase.push(' ');
                phrase.push_str(w);
            }
            phrase.push(' ');
            phrase.push_str(noun);
            phrases.push(phrase);
        }
        mentions.push(Mention {
            class: obj.class,
            pairs,
        });
    }
    let mut text = String::from(*OPENERS.choose(rng).expect("nonempty"));
    for (i, p) in phrases.iter().enumerate() {
        if i > 0 {
            text.push_str(CONNECTORS.choose(rng).expect("nonempty"));
        }
        text.push_str(p);
    }
    for c in &clauses {
        text.push_str(". ");
        text.push_str(c);
    }
    (text, mentions)
}

/// One scene as a pure function of `(universe, config, seed, image_id)`.
pub fn generate_scene(u: &Universe, cfg: &SceneConfig, seed: u64, image_id: u64) -> GeneratedScene {
    let mut rng = scene_rng(seed, image_id);
    let classes = pick_classes(u, cfg, &mut rng);
    let boxes = place_boxes(&mut rng, classes.len());
    let mut gt: Vec<GtObject> = classes
        .iter()
        .zip(&boxes)
        .map(|(&class, &bbox)| GtObject {
            bbox,
            class,
            attrs: sample_attributes(u, cfg, class, &mut rng),
        })
        .collect();

    // Co-occurring confusable objects must differ where captions will name them.
    let dc = u.distinguishing_category;
    let n_values = u.value_names[dc].len();
    let mut forced = vec![false; gt.len()];
    for &(a, b) in &u.confusable {
        let ia = gt.iter().position(|g| g.class == a);
        let ib = gt.iter().position(|g| g.class == b);
        if let (Some(ia), Some(ib)) = (ia, ib) {
            while gt[ib].attrs[dc].value == gt[ia].attrs[dc].value {
                gt[ib].attrs[dc].value = rng.random_range(0..n_values);
            }
            forced[ia] = true;
            forced[ib] = true;
        }
    }

    let noise = Normal::new(0.0, u.sigma).expect("sigma validated");
    let d = u.input_dim();
    let mut proposals: Vec<(BBox, Array1<f64>)> = Vec::new();
    for obj in &gt {
        let signal = object_signal(u, obj);
        for j in 0..cfg.proposals_per_object {
            let lo = if j == 0 {
                cfg.min_jitter_iou.max(0.7).min(cfg.max_jitter_iou)
            } else {
                cfg.min_jitter_iou
            };
            let b = jitter(&mut rng, &obj.bbox, lo, cfg.max_jitter_iou);
            let f = if cfg.blend_by_overlap {
                let w = b.iou(&obj.bbox);
                &signal * w + &u.background * (1.0 - w)
            } else {
                signal.clone()
            };
            proposals.push((b, f));
        }
    }
    for _ in 0..cfg.background_proposals {
        proposals.push((background_box(&mut rng, &boxes), u.background.clone()));
    }
    proposals.shuffle(&mut rng);
    let mut features = Array2::zeros((proposals.len(), d));
    for (mut row, (_, f)) in features.outer_iter_mut().zip(&proposals) {
        for (x, &s) in row.iter_mut().zip(f) {
            *x = round_sig(
                s + if u.sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                },
            );
        }
    }
    let region_boxes = proposals.iter().map(|(b, _)| *b).collect();

    let cc = &cfg.captions;
    let n_captions = rng.random_range(cc.min_captions..=cc.max_captions);
    let (captions, mentions) = (0..n_captions)
        .map(|_| compose_caption(u, cc, &gt, &forced, &mut rng))
        .unzip();

    GeneratedScene {
        scene: SyntheticScene {
            image_id,
            gt,
            proposals: RegionSet {
                boxes: region_boxes,
                features,
            },
            captions,
        },
        mentions,
    }
}

pub fn generate_scenes(
    u: &Universe,
    cfg: &SceneConfig,
    seed: u64,
    image_ids: std::ops::Range<u64>,
) -> Result<Vec<SyntheticScene>> {
    cfg.validate(u.num_classes())?;
    Ok(image_ids
        .map(|id| generate_scene(u, cfg, seed, id).scene)
        .collect())
}
