//! Affine score heads over region descriptors.
//!
//! Each refinement head `k` has a `(C+1)`-way object softmax and one softmax
//! per attribute category. The two-stream detection head multiplies a
//! sigmoid stream by a softmax taken over regions. Gradients are analytic;
//! see `tests/gradcheck.rs` for the finite-difference verification.

pub mod checkpoint;
mod forward;
mod params;

pub use forward::{
    backward, forward, param_gradients, sigmoid, softmax, MidScores, RegionSet, ScoreGrad, ScoreTensor,
};
pub use params::{init_params, Affine, Layout, ModelDims, ModelParams};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use ndarray::{Array1, Array2, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_regions(rng: &mut ChaCha8Rng, m: usize, d: usize) -> RegionSet {
        let boxes = (0..m)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..0.5);
                let y: f64 = rng.random_range(0.0..0.5);
                BBox::new(x, y, x + 0.3, y + 0.4).unwrap()
            })
            .collect();
        let features = Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0));
        RegionSet::new(boxes, features).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, dims: ModelDims) -> ModelParams {
        let mut p = ModelParams::zeros(dims).unwrap();
        for v in p.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn single_region_mid_is_sigmoid_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dims = ModelDims::new(5, 3, vec![2], 1).unwrap();
        let p = random_params(&mut rng, dims);
        let r = random_regions(&mut rng, 1, 5);
        let (_, mid) = forward(&p, &r).unwrap();
        assert!(mid.det.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(mid.per_region, mid.cls);
    }

    #[test]
    fn zero_maps_two_regions() {
        let dims = ModelDims::new(4, 1, vec![], 1).unwrap();
        let p = ModelParams::zeros(dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_regions(&mut rng, 2, 4);
        let (scores, mid) = forward(&p, &r).unwrap();
        for v in mid.per_region.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        // sigma(0.5)
        assert!((mid.image_level[0] - 0.622_459_331_201_854_6).abs() < 1e-12);
        assert!(scores.objects[0].iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn rows_are_stochastic_and_image_scores_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = rng.random_range(1..10);
            let dims = ModelDims::new(6, 4, vec![3, 2, 5], 2).unwrap();
            let mut p = random_params(&mut rng, dims);
            p.scale(rng.random_range(0.1..20.0));
            let r = random_regions(&mut rng, m, 6);
            let (scores, mid) = forward(&p, &r).unwrap();
            for s in scores.objects.iter().chain(scores.attributes.iter().flatten()) {
                for row in s.outer_iter() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
            for col in mid.det.lanes(Axis(0)) {
                assert!((col.sum() - 1.0).abs() < 1e-6);
            }
            assert!(mid.image_level.iter().all(|&y| y > 0.5 && y < 1.0));
        }
    }

    #[test]
    fn dimension_and_finiteness_errors() {
        let dims = ModelDims::new(4, 2, vec![2], 1).unwrap();
        let p = ModelParams::zeros(dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_regions(&mut rng, 3, 5);
        assert!(matches!(forward(&p, &r), Err(crate::Error::Dimension(_))));
        let mut r = random_regions(&mut rng, 3, 4);
        r.features[[1, 2]] = f64::NAN;
        assert!(matches!(forward(&p, &r), Err(crate::Error::NonFinite(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dims = ModelDims::new(6, 3, vec![2, 3], 2).unwrap();
        let p = random_params(&mut rng, dims);
        let r = random_regions(&mut rng, 4, 6);
        let (scores, mid) = forward(&p, &r).unwrap();
        let g = ScoreGrad::zeros_like(&scores, &mid);
        let pg = param_gradients(&p, &r, &g).unwrap();
        assert!(pg.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_score_gradient_reaches_both_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dims = ModelDims::new(6, 3, vec![2], 1).unwrap();
        let p = random_params(&mut rng, dims);
        let r = random_regions(&mut rng, 4, 6);
        let (scores, mid) = forward(&p, &r).unwrap();
        let mut g = ScoreGrad::zeros_like(&scores, &mid);
        g.mid_image[1] = 1.0;
        let pg = param_gradients(&p, &r, &g).unwrap();
        let l = p.layout();
        assert!(l.mid_det.weight(pg.as_slice()).iter().any(|&v| v != 0.0));
        assert!(l.mid_cls.weight(pg.as_slice()).iter().any(|&v| v != 0.0));
        // untouched heads stay exactly zero
        assert!(l.object_heads[0].weight(pg.as_slice()).iter().all(|&v| v == 0.0));
        assert!(pg.as_slice()[l.attribute_heads[0][0].bias_range()]
            .iter()
            .all(|&v| v == 0.0));
    }

    /// `<G, outputs>` for a fixed random upstream `G`.
    fn probe(p: &ModelParams, r: &RegionSet, g: &ScoreGrad) -> f64 {
        let (s, mid) = forward(p, r).unwrap();
        let mut total = 0.0;
        for (a, b) in s.objects.iter().zip(&g.objects) {
            total += (a * b).sum();
        }
        for (ha, hb) in s.attributes.iter().zip(&g.attributes) {
            for (a, b) in ha.iter().zip(hb) {
                total += (a * b).sum();
            }
        }
        total + (&mid.per_region * &g.mid_region).sum() + mid.image_level.dot(&g.mid_image)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let d = rng.random_range(2..9);
            let m = rng.random_range(1..6);
            let c = rng.random_range(1..4);
            let dims = ModelDims::new(d, c, vec![2, 3], 2).unwrap();
            let p = random_params(&mut rng, dims);
            let r = random_regions(&mut rng, m, d);
            let (scores, mid) = forward(&p, &r).unwrap();
            let mut g = ScoreGrad::zeros_like(&scores, &mid);
            for a in g.objects.iter_mut().chain(g.attributes.iter_mut().flatten()) {
                a.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            }
            g.mid_region.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            g.mid_image = Array1::from_shape_fn(c, |_| rng.random_range(-1.0..1.0));

            let analytic = backward(&p, &r, &scores, &mid, &g).unwrap();
            let h = 1e-5;
            let mut num = Vec::with_capacity(p.len());
            for j in 0..p.len() {
                let mut plus = p.clone();
                plus.as_mut_slice()[j] += h;
                let mut minus = p.clone();
                minus.as_mut_slice()[j] -= h;
                num.push((probe(&plus, &r, &g) - probe(&minus, &r, &g)) / (2.0 * h));
            }
            let diff: f64 = analytic
                .as_slice()
                .iter()
                .zip(&num)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale: f64 = analytic.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt()
                + num.iter().map(|n| n * n).sum::<f64>().sqrt();
            assert!(diff / scale < 1e-6, "relative error {}", diff / scale);
        }
    }

    #[test]
    fn region_permutation_permutes_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = ModelDims::new(5, 3, vec![4], 2).unwrap();
        let p = random_params(&mut rng, dims);
        let r = random_regions(&mut rng, 6, 5);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = RegionSet::new(
            perm.iter().map(|&i| r.boxes[i]).collect(),
            r.features.select(Axis(0), &perm),
        )
        .unwrap();
        let (s1, m1) = forward(&p, &r).unwrap();
        let (s2, m2) = forward(&p, &permuted).unwrap();
        for (a, b) in s1.objects.iter().zip(&s2.objects) {
            let a = a.select(Axis(0), &perm);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
        let a = m1.per_region.select(Axis(0), &perm);
        assert!(a
            .iter()
            .zip(m2.per_region.iter())
            .all(|(x, y)| (x - y).abs() < 1e-12));
        for (x, y) in m1.image_level.iter().zip(m2.image_level.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
