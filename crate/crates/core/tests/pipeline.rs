use caption_wsod::scorenet::{ModelDims, ModelParams};
use caption_wsod::synthbench::{generate_scenes, make_universe, SceneConfig, UniverseConfig};
use caption_wsod::textgraph::{AttributeRegistry, Vocabulary};
use caption_wsod::trainer::{evaluate, infer, TrainConfig};

/// Object heads whose rows are the class prototypes (background last) score
/// each proposal by its overlap with the ground truth it came from.
#[test]
fn prototype_weights_recover_ground_truth() {
    let vocab = Vocabulary::builtin();
    let registry = AttributeRegistry::builtin();
    let ucfg = UniverseConfig {
        sigma: 0.0,
        confusable: vec![],
        ..UniverseConfig::default()
    };
    let u = make_universe(&ucfg, &vocab, &registry, 12).unwrap();
    let scfg = SceneConfig {
        blend_by_overlap: true,
        ..SceneConfig::default()
    };
    let scenes = generate_scenes(&u, &scfg, 12, 0..150).unwrap();

    let c = u.num_classes();
    let dims = ModelDims::new(u.input_dim(), c, u.attribute_sizes(), 3).unwrap();
    let mut params = ModelParams::zeros(dims).unwrap();
    let heads = params.layout().object_heads.clone();
    for head in heads {
        let (mut w, _) = head.split_mut(params.as_mut_slice());
        for k in 0..c {
            w.row_mut(k).assign(&(&u.class_prototypes.row(k) * 20.0));
        }
        w.row_mut(c).assign(&(&u.background * 20.0));
    }

    let cfg = TrainConfig::default();
    for s in &scenes[..20] {
        let dets = infer(&params, &s.proposals, &cfg).unwrap();
        for g in &s.gt {
            let best = dets
                .iter()
                .filter(|d| d.class == g.class)
                .max_by(|a, b| a.score.total_cmp(&b.score))
                .expect("every object is detected");
            assert!(best.bbox.iou(&g.bbox) >= 0.7, "scene {}", s.image_id);
        }
    }
    let metrics = evaluate(&params, &scenes, &cfg, &u.class_names, &[]).unwrap();
    assert!(metrics.map >= 0.9, "mAP {}", metrics.map);
    assert_eq!(metrics.corloc, 1.0);
    assert_eq!(metrics.confusable_map, None);
}
