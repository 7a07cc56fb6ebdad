use meshformer::datagen::{generate_dataset, FamilyKind, GenConfig};
use meshformer::eval::{evaluate_model, evaluate_persistence, frame_clusters};
use meshformer::io::{load_split, SplitName};
use meshformer::mesh::{compute_norm_stats, Trajectory};
use meshformer::model::ModelConfig;
use meshformer::training::{Precision, TrainConfig, TrainData, Trainer};

fn split(root: &std::path::Path, name: SplitName) -> Vec<Trajectory> {
    load_split(root, name).unwrap().into_iter().map(|(_, t)| t).collect()
}

#[test]
fn generate_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenConfig {
        family: FamilyKind::Mixed,
        n_traj: 10,
        steps: 8,
        nodes: 60,
        ..GenConfig::default()
    };
    let manifest = generate_dataset(&config, dir.path()).unwrap();
    assert_eq!(manifest.split.train.len(), 8);

    let train = split(dir.path(), SplitName::Train);
    let test = split(dir.path(), SplitName::Test);
    assert_eq!((train.len(), test.len()), (8, 1));

    let stats = compute_norm_stats(&train, 1e-8).unwrap().0;
    let model_config = ModelConfig::tiny();
    let clusters: Vec<_> = train.iter().map(|t| frame_clusters(t, model_config.cluster_size, 0).unwrap()).collect();
    let data = TrainData {
        trajectories: &train,
        clusters: &clusters,
    };
    let train_config = TrainConfig {
        steps: 20,
        horizon: 2,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&model_config, &train_config, stats.clone()).unwrap();
    let mut losses = Vec::new();
    trainer
        .run(&data, |log, _| {
            losses.push(log.loss);
            Ok(())
        })
        .unwrap();
    assert_eq!(losses.len(), 20);
    assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));

    let test_clusters: Vec<_> = test.iter().map(|t| frame_clusters(t, model_config.cluster_size, 0).unwrap()).collect();
    let horizons = [1, 3, 7];
    let report = evaluate_model(&trainer.model, Precision::F32, &test, &test_clusters, &stats, &horizons, 0).unwrap();
    let base = evaluate_persistence(&test, &stats, &horizons).unwrap();
    assert_eq!(report.horizons, horizons);
    assert!(report.n_rmse.iter().all(|v| v.is_finite()));
    assert!(base.n_rmse.windows(2).all(|w| w[0] <= w[1]));
}
