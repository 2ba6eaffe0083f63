//! Optimization invariants of the reward and policy trainers.

use prefview_core::env::ViewpointEnv;
use prefview_core::nn::OptimizerKind;
use prefview_core::ppo::{collect_rollout, ppo_update, PlantedReward, PolicyModel, PpoConfig, RolloutBuffer, RolloutCollector};
use prefview_core::pref::{
    train_reward_model, Labeler, Mu, PreferenceDataset, PreferenceRecord, RewardTrainConfig, Step, TrajectorySegment,
};
use prefview_core::sim::{FeatureShape, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn segment(id: &str, shape: FeatureShape, rng: &mut ChaCha8Rng) -> TrajectorySegment {
    TrajectorySegment {
        id: id.into(),
        recon_id: id.into(),
        steps: (0..3)
            .map(|_| Step {
                observation: Observation {
                    shape,
                    features: (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    action: None,
                },
                action: rng.gen_range(1..=4),
            })
            .collect(),
    }
}

#[test]
fn full_batch_loss_never_increases_at_small_step() {
    let shape = FeatureShape { d1: 2, d2: 2, d3: 3 };
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = PreferenceDataset::new();
        data.insert_segment(segment("a", shape, &mut rng));
        data.insert_segment(segment("b", shape, &mut rng));
        data.push(PreferenceRecord {
            pair_id: "p".into(),
            left: "a".into(),
            right: "b".into(),
            mu: Mu::Left,
            labeler: Labeler::Oracle,
            ts: 0,
        })
        .unwrap();
        let cfg = RewardTrainConfig {
            learning_rate: 1e-4,
            batch_size: 1,
            epochs: 50,
            optimizer: OptimizerKind::Sgd,
            ..RewardTrainConfig::default()
        };
        let curve = train_reward_model(&data, &cfg, shape, 4, seed, None).unwrap().loss_curve;
        assert_eq!(curve.len(), 50);
        for w in curve.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: loss rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn on_policy_ratio_starts_at_one_and_clip_fraction_is_a_fraction() {
    let shape = FeatureShape { d1: 1, d2: 1, d3: 3 };
    let env = ViewpointEnv::bandit(6, shape);
    let cfg = PpoConfig {
        episode_len: 1,
        allow_repeats: true,
        learning_rate: 1e-2,
        ..PpoConfig::default()
    };
    let reward = PlantedReward(vec![0.0, 1.0, 0.2, 0.4, 0.9, 0.1]);
    let mut model = PolicyModel::new(shape.len(), 6, &cfg, 3);
    let mut buffer = RolloutBuffer::new(cfg.n_steps);
    let mut collector = RolloutCollector::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        collect_rollout(&env, &model, &mut buffer, &reward, &cfg, &mut collector, &mut rng);
        let stats = ppo_update(&mut model, &mut buffer, &cfg, &mut rng).unwrap();
        assert!((stats.initial_ratio_mean - 1.0).abs() <= 1e-9, "{stats:?}");
        assert!((0.0..=1.0).contains(&stats.clip_fraction));
        assert!(stats.entropy > 0.0 && stats.entropy <= (6f64).ln() + 1e-12);
    }
}
