use proptest::prelude::*;
use rand::SeedableRng;
use spmarl::context::{ContextSpec, ContextVector, GaussianContextDistribution, SimRng};
use spmarl::curriculum::{update_distribution, CurriculumConfig, CurriculumState, Stage, ValueSample};
use spmarl::harness::{parse_records, write_records, IterationRecord, StageLabel};
use spmarl::nn::{load_checkpoint, save_checkpoint, ForwardCache, Mlp};

fn gaussian(dim: usize) -> impl Strategy<Value = GaussianContextDistribution> {
    (
        prop::collection::vec(-20.0..20.0f64, dim),
        prop::collection::vec((0.05f64).ln()..(30.0f64).ln(), dim),
    )
        .prop_map(|(m, l)| GaussianContextDistribution::new(m, l).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kl_is_non_negative_and_zero_on_self(p in gaussian(3), q in gaussian(3)) {
        prop_assert!(p.kl_divergence(&q).unwrap() >= 0.0);
        prop_assert_eq!(p.kl_divergence(&p).unwrap(), 0.0);
    }

    #[test]
    fn realize_stays_in_bounds_and_rounds(x in -100.0..100.0f64, y in -100.0..100.0f64) {
        let spec = ContextSpec {
            lower_bounds: vec![20.0, 3.0],
            upper_bounds: vec![40.0, 20.0],
            integer_dims: vec![0, 1],
            initial: GaussianContextDistribution::from_std(vec![20.0, 5.0], vec![20.0, 15.0]).unwrap(),
            target: GaussianContextDistribution::from_std(vec![30.0, 10.0], vec![0.1, 0.1]).unwrap(),
        };
        let r = spec.realize(&ContextVector::new(vec![x, y]));
        for (i, v) in r.values().iter().enumerate() {
            prop_assert!(*v >= spec.lower_bounds[i] && *v <= spec.upper_bounds[i]);
            prop_assert_eq!(v.fract(), 0.0);
        }
        prop_assert_eq!(spec.realize(&r), r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    /// Any curriculum update, whichever stage it takes, stays in the trust
    /// region and the context bounds.
    #[test]
    fn updates_respect_trust_region(
        current in gaussian(2),
        values in prop::collection::vec(-5.0..5.0f64, 40),
        perf_lb in -3.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let spec = ContextSpec {
            lower_bounds: vec![-25.0, -25.0],
            upper_bounds: vec![25.0, 25.0],
            integer_dims: vec![],
            initial: current.clone(),
            target: GaussianContextDistribution::from_std(vec![3.0, -2.0], vec![0.5, 0.5]).unwrap(),
        };
        let config = CurriculumConfig::new(perf_lb, vec![0.05, 0.05]);
        let mut rng = SimRng::seed_from_u64(seed);
        let samples: Vec<ValueSample> = values
            .iter()
            .map(|&v| ValueSample { context: current.sample(&mut rng), value: v })
            .collect();
        let state = CurriculumState::new(current.clone());
        let next = update_distribution(&state, &samples, &config, &spec).unwrap();
        prop_assert!(next.current.kl_divergence(&current).unwrap() <= config.max_kl * 1.01);
        prop_assert!(next.current.mean.iter().all(|m| (-25.0..=25.0).contains(m)));
        prop_assert_eq!(next.iteration, 1);
    }
}

fn network() -> impl Strategy<Value = (Mlp, Vec<f64>, Vec<f64>)> {
    (1usize..6, 2usize..8, 1usize..4, any::<u64>()).prop_flat_map(|(i, h, o, seed)| {
        (
            Just(Mlp::new(i, h, o, 1.0, &mut SimRng::seed_from_u64(seed))),
            prop::collection::vec(-2.0..2.0f64, i),
            prop::collection::vec(-1.0..1.0f64, o),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn backprop_matches_finite_differences((net, x, g) in network()) {
        let loss = |n: &Mlp| -> f64 { n.forward(&x).unwrap().iter().zip(&g).map(|(y, g)| y * g).sum() };
        let mut cache = ForwardCache::default();
        net.forward_cached(&x, &mut cache).unwrap();
        let mut grads = net.zeros_like();
        net.backward(&cache, &g, &mut grads);
        for (k, a) in grads.params().copied().enumerate() {
            let h = 1e-6;
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            prop_assert!((a - numeric).abs() / scale <= 1e-3, "param {k}: {a} vs {numeric}");
        }
    }

    #[test]
    fn checkpoints_round_trip((net, _x, _g) in network()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&path, &[("net", &net)]).unwrap();
        let back = load_checkpoint(&path).unwrap();
        prop_assert_eq!(&back[0].1, &net);
    }
}

fn record(dim: usize) -> impl Strategy<Value = IterationRecord> {
    (
        1usize..10_000,
        0u64..10_000_000,
        -1e6..1e6f64,
        prop::option::of(-1e6..1e6f64),
        prop::collection::vec(-50.0..50.0f64, dim),
        prop::collection::vec(1e-4..30.0f64, dim),
        prop::option::of(0.0..1e5f64),
        0usize..4,
    )
        .prop_map(|(iteration, env_steps, train, eval, mean, std, kl, stage)| IterationRecord {
            iteration,
            env_steps,
            train_return: train,
            eval_return: eval,
            ctx_mean: mean,
            ctx_std: std,
            kl_to_target: kl,
            stage: [
                StageLabel::Curriculum(Stage::PerformanceMax),
                StageLabel::Curriculum(Stage::KLMin),
                StageLabel::Curriculum(Stage::Hold),
                StageLabel::Baseline,
            ][stage],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn records_round_trip(records in prop::collection::vec(record(2), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records(&path, &records, 2).unwrap();
        let back = parse_records(&std::fs::read_to_string(&path).unwrap()).unwrap();
        prop_assert_eq!(back, records);
    }
}
