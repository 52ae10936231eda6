use proptest::prelude::*;
use weightprov::matching::solve_lap;
use weightprov::model::random_token_batch;
use weightprov::rng;
use weightprov::stats::{fisher_aggregate, spearman_pvalue};
use weightprov::tensor_store::{decode_container, encode_container};
use weightprov::trainer::init_model;
use weightprov::transforms::{max_output_diff, TransformKind, TransformSpec};
use weightprov::{ArchManifest, Family, LogPValue, Matrix64, Permutation, Tensor, TensorMap};

fn permutation(n: usize, seed: u64) -> Permutation {
    Permutation::random(n, &mut rng::stream(seed, "prop", 0))
}

proptest! {
    #[test]
    fn permutation_inverse_composes_to_identity(n in 1usize..40, seed: u64) {
        let p = permutation(n, seed);
        prop_assert_eq!(p.compose(&p.inverse()), Permutation::identity(n));
        prop_assert_eq!(p.inverse().compose(&p), Permutation::identity(n));
    }

    #[test]
    fn lap_beats_every_sampled_assignment(
        n in 1usize..8,
        values in prop::collection::vec(-1.0f64..1.0, 64),
        seed: u64,
    ) {
        let scores = Matrix64::from_fn(n, n, |i, j| values[i * 8 + j]);
        let best: f64 = solve_lap(&scores).unwrap().pairs().iter().map(|&(i, j)| scores[(i, j)]).sum();
        for k in 0..20 {
            let p = permutation(n, seed.wrapping_add(k));
            let total: f64 = (0..n).map(|i| scores[(i, p.as_slice()[i])]).sum();
            prop_assert!(best >= total - 1e-12);
        }
    }

    #[test]
    fn spearman_p_lies_in_unit_interval(n in 3usize..60, s1: u64, s2: u64) {
        let a = permutation(n, s1);
        let b = permutation(n, s2);
        let p = spearman_pvalue(a.as_slice(), b.as_slice()).unwrap().p();
        prop_assert!(p > 0.0 && p <= 1.0, "p = {}", p);
    }

    #[test]
    fn fisher_is_monotone_in_each_input(
        ps in prop::collection::vec(1e-12f64..1.0, 1..10),
        k in 0usize..10,
        shrink in 0.01f64..1.0,
    ) {
        let k = k % ps.len();
        let base: Vec<LogPValue> = ps.iter().map(|&p| LogPValue::from_p(p)).collect();
        let mut smaller = base.clone();
        smaller[k] = LogPValue::from_p(ps[k] * shrink);
        let (a, b) = (fisher_aggregate(&base).unwrap(), fisher_aggregate(&smaller).unwrap());
        prop_assert!(b.ln_p() <= a.ln_p() + 1e-12);
    }

    #[test]
    fn container_round_trips(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..4), 1..5),
        wide: bool,
    ) {
        let mut tensors = TensorMap::new();
        for (k, shape) in shapes.into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let t = if wide {
                Tensor::f64(shape, (0..n).map(|i| i as f64 * 0.25 - 1.0).collect())
            } else {
                Tensor::f32(shape, (0..n).map(|i| i as f32 * -0.5).collect())
            };
            tensors.insert(format!("t{k}"), t.unwrap());
        }
        let bytes = encode_container(&tensors).unwrap();
        prop_assert_eq!(decode_container(&bytes).unwrap(), tensors);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn camouflage_preserves_outputs(seed in 0u64..1000, kind in 0usize..3) {
        let arch = ArchManifest::with_default_roles(Family::GluTransformer, 2, 8, 16, 32, 2);
        let model = init_model(&arch, seed).unwrap();
        let kind = [TransformKind::Permute, TransformKind::Rotate, TransformKind::Both][kind];
        let moved = TransformSpec::for_model(&model, kind, seed ^ 0x55).apply(&model).unwrap();
        let batch = random_token_batch(32, 2, 6, seed);
        prop_assert!(max_output_diff(&model, &moved, &batch, seed).unwrap() < 1e-4);
    }
}
