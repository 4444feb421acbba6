//! Randomized invariants over small networks.

use gradguess::guess::GuessSet;
use gradguess::rng::UniformRange;
use gradguess::metrics::{cosine_similarity, effective_rank, CosineScope};
use gradguess::network::{assemble_weight_update, backprop, forward, jvp_preact_traced, jvp_weight};
use gradguess::{
    estimate_gradient, init_params, GuessContext, GuessMethod, GuessOptions, Matrix, MlpConfig, MlpParams, RngStream,
    WeightSpace,
};
use proptest::prelude::*;

fn setup(seed: u64, batch: usize) -> (MlpParams<f64>, Matrix<f64>, Vec<usize>) {
    let cfg = MlpConfig::new(5, 7, 3, 4).with_bias(seed % 2 == 0);
    let mut rng = RngStream::new(seed, 1);
    let params = init_params::<f64>(&cfg, &mut rng).unwrap();
    let x = Matrix::from_vec(batch, 5, rng.randn::<f64>(batch * 5).0).unwrap();
    let y = (0..batch).map(|_| rng.below(4)).collect();
    (params, x, y)
}

fn random_direction(params: &MlpParams<f64>, rng: &mut RngStream) -> WeightSpace<f64> {
    let flat = rng.randn::<f64>(params.param_count()).0;
    WeightSpace::from_flat(params, &flat).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jvp_weight_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (p, x, y) = setup(seed, 4);
        let mut rng = RngStream::new(seed, 2);
        let d1 = random_direction(&p, &mut rng);
        let d2 = random_direction(&p, &mut rng);
        let mut mix = d1.scaled(a);
        mix.axpy(b, &d2).unwrap();
        let lhs = jvp_weight(&p, &x, &y, &mix).unwrap();
        let rhs = a * jvp_weight(&p, &x, &y, &d1).unwrap() + b * jvp_weight(&p, &x, &y, &d2).unwrap();
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn jvp_weight_is_dual_to_backprop(seed in 0u64..1000, batch in 1usize..6) {
        let (p, x, y) = setup(seed, batch);
        let d = random_direction(&p, &mut RngStream::new(seed, 3));
        let g = backprop(&p, &forward(&p, &x, &y).unwrap()).unwrap();
        let jvp = jvp_weight(&p, &x, &y, &d).unwrap();
        prop_assert!(close(jvp, g.weights.dot(&d).unwrap(), 1e-10));
    }

    #[test]
    fn jvp_preact_is_dual_to_preact_gradients(seed in 0u64..1000, batch in 1usize..6) {
        let (p, x, y) = setup(seed, batch);
        let trace = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &trace).unwrap();
        let mut rng = RngStream::new(seed, 4);
        let tangents: Vec<Matrix<f64>> = trace
            .pre
            .iter()
            .map(|s| Matrix::from_vec(s.rows(), s.cols(), rng.randn::<f64>(s.len()).0).unwrap())
            .collect();
        let v = jvp_preact_traced(&p, &trace, &tangents).unwrap();
        for b in 0..batch {
            let expect: f64 = (0..p.depth())
                .map(|i| gradguess::tensor::dot(g.preact[i].row(b), tangents[i].row(b)))
                .sum();
            prop_assert!(close(v.0[b], expect, 1e-10));
        }
    }

    #[test]
    fn assembling_per_example_gradients_gives_backprop(seed in 0u64..1000, batch in 1usize..6) {
        let (p, x, y) = setup(seed, batch);
        let trace = forward(&p, &x, &y).unwrap();
        let g = backprop(&p, &trace).unwrap();
        let assembled = assemble_weight_update(&trace, &g.preact).unwrap();
        let mut diff = assembled.clone();
        diff.axpy(-1.0, &g.weights).unwrap();
        prop_assert!(diff.norm() <= 1e-12 * (1.0 + g.weights.norm()));
    }

    #[test]
    fn cosine_is_scale_invariant(seed in 0u64..1000, c in 0.001f64..1000.0) {
        let (p, _, _) = setup(seed, 1);
        let mut rng = RngStream::new(seed, 5);
        let a = random_direction(&p, &mut rng);
        let b = random_direction(&p, &mut rng);
        let c0 = cosine_similarity(&a, &b, CosineScope::Global).unwrap();
        let c1 = cosine_similarity(&a.scaled(c), &b, CosineScope::Global).unwrap();
        let cn = cosine_similarity(&a.scaled(-c), &b, CosineScope::Global).unwrap();
        prop_assert!(close(c0, c1, 1e-12));
        prop_assert!(close(c0, -cn, 1e-12));
        prop_assert!(c0.abs() <= 1.0);
        for i in 0..p.depth() {
            let l = cosine_similarity(&a, &b, CosineScope::Layer(i)).unwrap();
            prop_assert!(l.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn effective_rank_bounds_and_invariances(seed in 0u64..1000, rows in 1usize..8, cols in 1usize..8, c in 0.01f64..100.0) {
        let mut rng = RngStream::new(seed, 6);
        let a = Matrix::from_vec(rows, cols, rng.randn::<f64>(rows * cols).0).unwrap();
        let r = effective_rank(&a).unwrap();
        prop_assert!(r >= 1.0 - 1e-9 && r <= rows.min(cols) as f64 + 1e-9);
        prop_assert!(close(r, effective_rank(&a.scale(c)).unwrap(), 1e-9));
        prop_assert!(close(r, effective_rank(&a.transpose()).unwrap(), 1e-9));
    }

    #[test]
    fn structured_guesses_are_masked_and_unit_norm(seed in 0u64..500, which in 0usize..4) {
        let (p, x, y) = setup(seed, 3);
        let trace = forward(&p, &x, &y).unwrap();
        let method = [
            GuessMethod::WTranspose,
            GuessMethod::LDownstream(1),
            GuessMethod::LDownstream(2),
            GuessMethod::ActivationMixing,
        ][which];
        let ctx = GuessContext { params: &p, trace: &trace, oracle: None };
        let opts = GuessOptions::default();
        let set = gradguess::guess::draw_guess(&method, &ctx, &mut RngStream::new(seed, 7), &opts).unwrap();
        let GuessSet::Preact(g) = set else { panic!("expected pre-activation guesses") };
        for b in 0..3 {
            let mut sq = 0.0;
            for (i, gi) in g.iter().enumerate() {
                let row = gi.row(b);
                sq += row.iter().map(|v| v * v).sum::<f64>();
                if i + 1 < g.len() {
                    for (v, m) in row.iter().zip(trace.masks[i].row(b)) {
                        prop_assert!(*m != 0.0 || *v == 0.0);
                    }
                }
            }
            prop_assert!((sq.sqrt() - 1.0).abs() < 1e-9 || sq == 0.0);
        }
    }

    #[test]
    fn estimates_are_reproducible_and_thread_independent(seed in 0u64..200, reps in 1usize..40) {
        let (p, x, y) = setup(seed, 3);
        let trace = forward(&p, &x, &y).unwrap();
        let ctx = GuessContext { params: &p, trace: &trace, oracle: None };
        let rng = RngStream::new(seed, 8);
        let opts = GuessOptions::default();
        let a = estimate_gradient(&GuessMethod::WTranspose, &ctx, &rng, reps, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_gradient(&GuessMethod::WTranspose, &ctx, &rng, reps, &opts).unwrap());
        prop_assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn uniform_noise_stays_in_range(seed in 0u64..1000, n in 1usize..200) {
        let mut rng = RngStream::new(seed, 9);
        prop_assert!(rng.randu_in::<f64>(n, UniformRange::Centered).0.iter().all(|v| (-1.0..1.0).contains(v)));
        prop_assert!(rng.randu_in::<f64>(n, UniformRange::Unit).0.iter().all(|v| (0.0..1.0).contains(v)));
    }
}
