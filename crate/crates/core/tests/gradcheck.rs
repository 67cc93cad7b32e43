use std::time::{Duration, Instant};

use caption_wsod::trainer::{frozen_objective, random_problem, scene_objective, GradProblem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Central differences of the loss with pseudo-labels frozen at `p.params`,
/// compared coordinate-wise against the analytic gradient.
fn max_relative_error(p: &GradProblem, h: f64) -> f64 {
    let (_, analytic, pseudo) = scene_objective(&p.params, &p.regions, &p.labels, &p.loss, &p.oicr).unwrap();
    let eval = |q: &caption_wsod::scorenet::ModelParams| {
        frozen_objective(q, &p.regions, &p.labels, &pseudo, &p.loss, &p.oicr)
            .unwrap()
            .0
            .l_total
    };
    let mut probe = p.params.clone();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for j in 0..probe.len() {
        let x = probe.as_slice()[j];
        probe.as_mut_slice()[j] = x + h;
        let up = eval(&probe);
        probe.as_mut_slice()[j] = x - h;
        let down = eval(&probe);
        probe.as_mut_slice()[j] = x;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.as_slice()[j];
        diff2 += (a - numeric).powi(2);
        a2 += a * a;
        n2 += numeric * numeric;
    }
    let denom = a2.sqrt() + n2.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff2.sqrt() / denom
    }
}

#[test]
fn composed_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut nonzero = 0;
    for case in 0..120 {
        let p = random_problem(&mut rng).unwrap();
        let dims = p.params.dims();
        assert!(dims.input_dim <= 16 && p.regions.len() <= 8 && dims.num_classes <= 4);
        let err = max_relative_error(&p, 1e-5);
        assert!(err < 1e-4, "case {case}: relative error {err:e}");
        worst = worst.max(err);
        let (_, g, _) = scene_objective(&p.params, &p.regions, &p.labels, &p.loss, &p.oicr).unwrap();
        nonzero += usize::from(g.as_slice().iter().any(|&v| v != 0.0));
    }
    assert!(nonzero >= 115, "only {nonzero} cases had a nonzero gradient");
    assert!(
        start.elapsed() < Duration::from_secs(120),
        "{:?}",
        start.elapsed()
    );
    println!("worst relative error over 120 cases: {worst:e}");
}
