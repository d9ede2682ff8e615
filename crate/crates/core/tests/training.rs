use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavfuse::data_model::pad_points;
use uavfuse::model::ModelConfig;
use uavfuse::training::{train, TrainConfig};
use uavfuse::{AlignedSample, Point3};

fn samples(n_traj: u32, per: usize, seed: u64) -> Vec<AlignedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for tr in 0..n_traj {
        for k in 0..per {
            let truth = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(1.0..6.0));
            let mut cloud = |n: usize, s: f64| -> Vec<Point3> {
                (0..n)
                    .map(|_| truth + Point3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)))
                    .collect()
            };
            let lidar = cloud(30, 0.1);
            let radar = cloud(8, 0.3);
            out.push(AlignedSample {
                t_ns: k as i64,
                trajectory: tr,
                lidar_t_ns: k as i64,
                radar_t_ns: k as i64,
                lidar: pad_points(&lidar, 128),
                radar: pad_points(&radar, 64),
                truth,
            });
        }
    }
    out
}

#[test]
fn overfits_a_small_dataset() {
    let data = samples(1, 32, 4);
    let cfg = TrainConfig {
        epochs: 500,
        val_fraction: 0.0,
        model: ModelConfig { dropout: 0.0, ..ModelConfig::default() },
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let losses = out.report.train_losses();
    assert!(losses[499] < 1e-3, "final train loss {}", losses[499]);
}
