use std::collections::HashMap;

use uavfuse::pipeline::{fit_classifier, prepare_session};
use uavfuse::preprocess::{process_lidar360, ClassifierConfig, PreprocessConfig};
use uavfuse::synth::{generate, SceneConfig, LABEL_DRONE};
use uavfuse::SensorKind;

fn key(p: &uavfuse::Point3) -> [u64; 3] {
    [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
}

#[test]
fn clustering_and_classifier_recover_the_drone() {
    let cfg = SceneConfig {
        flights: 4,
        seed: 11,
        ..SceneConfig::default()
    };
    let scenes = generate(&cfg).unwrap();
    let pcfg = PreprocessConfig::default();
    let train: Vec<_> = scenes[..2].iter().map(|s| s.streams.clone()).collect();
    let classifier = fit_classifier(&train, &pcfg, &ClassifierConfig::default());

    let mut frames = 0;
    let mut recovered = 0;
    for scene in &scenes[2..] {
        let out = process_lidar360(&scene.streams.lidar_360, &classifier, &pcfg);
        for (raw, sel) in scene.streams.lidar_360.iter().zip(&out.frames) {
            let labels = scene.frame_labels(SensorKind::Lidar360, raw.t_ns);
            let by_point: HashMap<[u64; 3], i32> = raw.points.iter().map(key).zip(labels.iter().copied()).collect();
            let drone_total = labels.iter().filter(|&&l| l == LABEL_DRONE).count();
            let drone_hit = sel.points.iter().filter(|p| by_point[&key(p)] == LABEL_DRONE).count();
            frames += 1;
            if !sel.points.is_empty() && drone_hit == sel.points.len() && 2 * drone_hit >= drone_total {
                recovered += 1;
            }
        }
        let prepared = prepare_session(&scene.streams, &classifier, &pcfg);
        assert!(prepared.records.iter().any(|r| r.selected));
    }
    let rate = recovered as f64 / frames as f64;
    assert!(rate >= 0.99, "recovered {recovered}/{frames}");
}
